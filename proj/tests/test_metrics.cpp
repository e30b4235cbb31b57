#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "doctest.h"
#include "hgn/metrics.hpp"

using namespace hgn;

namespace {

Tensor random_pose(std::mt19937_64& rng, std::size_t n = 17, double scale = 500.0) {
    std::normal_distribution<double> g(0.0, scale);
    Tensor t({n, 3});
    for (auto& v : t.span()) v = g(rng);
    return t;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
    return q.normalized().toRotationMatrix();
}

Tensor transform(const Tensor& x, const Eigen::Matrix3d& r, double s, const Eigen::Vector3d& t) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        Eigen::Vector3d p(x.at(i, 0), x.at(i, 1), x.at(i, 2));
        Eigen::Vector3d q = s * r * p + t;
        for (int k = 0; k < 3; ++k) out.at(i, k) = q[k];
    }
    return out;
}

Tensor stack(const std::vector<Tensor>& poses) {
    const std::size_t n = poses.front().dim(0);
    Tensor out({poses.size(), n, 3});
    for (std::size_t k = 0; k < poses.size(); ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < 3; ++c) out.at(k, i, c) = poses[k].at(i, c);
        }
    }
    return out;
}

// Residual of the best similarity fit, computed with Eigen's SVD.
double eigen_procrustes_residual(const Tensor& pred, const Tensor& gt) {
    const std::size_t n = pred.dim(0);
    Eigen::MatrixXd x(n, 3), y(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) {
            x(i, k) = pred.at(i, k);
            y(i, k) = gt.at(i, k);
        }
    }
    const Eigen::RowVector3d mx = x.colwise().mean(), my = y.colwise().mean();
    x.rowwise() -= mx;
    y.rowwise() -= my;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(x.transpose() * y, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
    const Eigen::Matrix3d r = svd.matrixV() * d * svd.matrixU().transpose();
    const double s = (svd.singularValues().asDiagonal() * d).trace() / x.squaredNorm();
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) err += (s * r * x.row(i).transpose() - y.row(i).transpose()).norm();
    return err / static_cast<double>(n);
}

}  // namespace

TEST_CASE("jacobi_svd3 reconstructs and orders singular values") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::Matrix3d a;
        for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = g(rng);
        if (trial % 10 == 0) a.col(2) = a.col(0) + a.col(1);  // rank 2
        const Svd3 s = jacobi_svd3(a);
        CHECK((s.u * s.s.asDiagonal() * s.v.transpose() - a).norm() < 1e-10);
        CHECK((s.u.transpose() * s.u - Eigen::Matrix3d::Identity()).norm() < 1e-10);
        CHECK((s.v.transpose() * s.v - Eigen::Matrix3d::Identity()).norm() < 1e-10);
        CHECK(s.s[0] >= s.s[1]);
        CHECK(s.s[1] >= s.s[2]);
        CHECK(s.s[2] >= 0.0);
        Eigen::JacobiSVD<Eigen::Matrix3d> ref(a);
        CHECK((s.s - ref.singularValues()).norm() < 1e-10);
    }
}

TEST_CASE("mpjpe examples") {
    std::mt19937_64 rng(1);
    Tensor gt = stack({random_pose(rng)});
    CHECK(mpjpe(gt, gt) == 0.0);
    Tensor pred = gt;
    pred.at(0, 5, 1) += 17.0;
    CHECK(mpjpe(pred, gt) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(mpjpe(Tensor({1, 17, 3}), Tensor({1, 16, 3})), std::invalid_argument);
}

TEST_CASE("mpjpe is invariant under a common rotation") {
    std::mt19937_64 rng(2);
    const Tensor a = random_pose(rng), b = random_pose(rng);
    const Eigen::Matrix3d r = random_rotation(rng);
    const Eigen::Vector3d zero = Eigen::Vector3d::Zero();
    CHECK(mpjpe(transform(a, r, 1.0, zero), transform(b, r, 1.0, zero)) ==
          doctest::Approx(mpjpe(a, b)).epsilon(1e-12));
}

TEST_CASE("procrustes recovers similarity transforms exactly") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor gt = random_pose(rng);
        const Eigen::Matrix3d r = random_rotation(rng);
        const double s = 0.3 + 2.0 * std::uniform_real_distribution<double>(0, 1)(rng);
        const Eigen::Vector3d t(100.0 * trial, -40.0, 7.0);
        const Tensor pred = transform(gt, r, s, t);
        CHECK(mpjpe(procrustes_align(pred, gt), gt) < 1e-9);
    }
    std::mt19937_64 rng2(5);
    const Tensor gt = random_pose(rng2);
    const Similarity id = procrustes_fit(gt, gt);
    CHECK((id.r - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK(id.s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(id.t.norm() < 1e-9);
}

TEST_CASE("procrustes refuses reflections") {
    // Asymmetric hand-built pose; its mirror image cannot be rotated back.
    Tensor gt({5, 3}, {0, 0, 0, 100, 0, 0, 0, 200, 0, 0, 0, 300, 50, 60, 70});
    Tensor mirrored = gt;
    for (std::size_t i = 0; i < 5; ++i) mirrored.at(i, 0) = -mirrored.at(i, 0);
    const Similarity f = procrustes_fit(mirrored, gt);
    CHECK(f.r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    const double residual = mpjpe(procrustes_align(mirrored, gt), gt);
    CHECK(residual > 1.0);
    CHECK(residual == doctest::Approx(eigen_procrustes_residual(mirrored, gt)).epsilon(1e-9));
}

TEST_CASE("procrustes matches an independent SVD solution") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 30; ++trial) {
        const Tensor a = random_pose(rng), b = random_pose(rng);
        CHECK(mpjpe(procrustes_align(a, b), b) == doctest::Approx(eigen_procrustes_residual(a, b)).epsilon(1e-9));
    }
}

TEST_CASE("procrustes is idempotent and rejects degenerate targets") {
    std::mt19937_64 rng(7);
    const Tensor a = random_pose(rng), b = random_pose(rng);
    const Tensor once = procrustes_align(a, b);
    const Tensor twice = procrustes_align(once, b);
    double diff = 0.0;
    for (std::size_t i = 0; i < once.size(); ++i) diff = std::max(diff, std::abs(twice[i] - once[i]));
    CHECK(diff < 1e-9);
    Tensor point({17, 3});
    for (std::size_t i = 0; i < 17; ++i) point.at(i, 0) = 5.0;
    CHECK_THROWS_AS(procrustes_fit(a, point), MetricError);
}

TEST_CASE("rigid-only alignment leaves scale error") {
    std::mt19937_64 rng(8);
    const Tensor gt = random_pose(rng);
    const Tensor doubled = transform(gt, Eigen::Matrix3d::Identity(), 2.0, Eigen::Vector3d::Zero());
    const Tensor k_gt = stack({gt}), k_doubled = stack({doubled});
    CHECK(pa_mpjpe(k_doubled, k_gt) < 1e-9);
    CHECK(pa_mpjpe(k_doubled, k_gt, false) > 1.0);
}

TEST_CASE("alignment never increases the squared error") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> noise(0.0, 30.0);
    for (int k = 0; k < 200; ++k) {
        const Tensor g = random_pose(rng);
        Tensor p = g;
        for (auto& v : p.span()) v += noise(rng);
        const Tensor a = procrustes_align(p, g);
        double before = 0.0, after = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            before += (p[i] - g[i]) * (p[i] - g[i]);
            after += (a[i] - g[i]) * (a[i] - g[i]);
        }
        CHECK(after <= before + 1e-9);
    }
}

TEST_CASE("pa_mpjpe is below mpjpe on independent random pairs") {
    std::mt19937_64 rng(13);
    std::vector<Tensor> ps, gs;
    for (int k = 0; k < 1000; ++k) {
        Tensor g = random_pose(rng), p = random_pose(rng);
        for (Tensor* t : {&g, &p}) {
            for (std::size_t i = 1; i < 17; ++i) {
                for (std::size_t c = 0; c < 3; ++c) t->at(i, c) -= t->at(0, c);
            }
            for (std::size_t c = 0; c < 3; ++c) t->at(0, c) = 0.0;
        }
        CHECK(pa_mpjpe(stack({p}), stack({g})) <= mpjpe(stack({p}), stack({g})) + 1e-9);
        ps.push_back(p);
        gs.push_back(g);
    }
    CHECK(pa_mpjpe(stack(ps), stack(gs)) <= mpjpe(stack(ps), stack(gs)) + 1e-9);
}

TEST_CASE("least-squares alignment can raise the mean joint error") {
    // The fit minimizes squared distances, not their mean norm, so a nearly
    // aligned noisy prediction may score slightly worse after alignment.
    std::mt19937_64 rng(9);
    std::normal_distribution<double> noise(0.0, 30.0);
    bool found = false;
    for (int k = 0; k < 200 && !found; ++k) {
        const Tensor g = random_pose(rng);
        Tensor p = g;
        for (auto& v : p.span()) v += noise(rng);
        found = pa_mpjpe(stack({p}), stack({g})) > mpjpe(stack({p}), stack({g}));
    }
    CHECK(found);
}

TEST_CASE("mpvpe examples") {
    std::mt19937_64 rng(10);
    const std::size_t n = 96;
    Tensor gt = stack({random_pose(rng, n)});
    CHECK(mpvpe(gt, gt) == 0.0);
    Tensor pred = gt;
    pred.at(0, 40, 2) -= static_cast<double>(n);
    CHECK(mpvpe(pred, gt) == doctest::Approx(1.0).epsilon(1e-12));

    Tensor other = stack({random_pose(rng, n)});
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = (i * 37) % n;
    Tensor pg = gt, po = other;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            pg.at(0, i, c) = gt.at(0, perm[i], c);
            po.at(0, i, c) = other.at(0, perm[i], c);
        }
    }
    CHECK(mpvpe(po, pg) == doctest::Approx(mpvpe(other, gt)).epsilon(1e-12));
}

TEST_CASE("pck and auc examples") {
    const std::vector<double> zeros(34, 0.0), far(34, 200.0), mid(34, 75.0);
    PckAuc r = pck_auc_from_errors(zeros);
    CHECK(r.pck == 100.0);
    CHECK(r.auc == 100.0);
    r = pck_auc_from_errors(far);
    CHECK(r.pck == 0.0);
    CHECK(r.auc == 0.0);
    r = pck_auc_from_errors(mid);
    CHECK(r.pck == 100.0);
    // thresholds 0, 5, ..., 150; those strictly above 75 are 80..150
    int above = 0;
    for (int k = 0; k < 31; ++k) above += (5.0 * k > 75.0) ? 1 : 0;
    CHECK(above == 15);
    CHECK(r.auc == doctest::Approx(100.0 * above / 31.0).epsilon(1e-12));
    CHECK(r.auc == doctest::Approx(48.387).epsilon(1e-4));
}

TEST_CASE("pck is monotone in the threshold") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 300.0);
    std::vector<double> errs(500);
    for (auto& e : errs) e = u(rng);
    double prev = 101.0;
    for (double t = 300.0; t >= 0.0; t -= 10.0) {
        PckOptions o;
        o.threshold_mm = t;
        const double p = pck_auc_from_errors(errs, o).pck;
        CHECK(p <= prev);
        prev = p;
    }
}

TEST_CASE("breakdown examples") {
    Tensor errs({4, 17});
    for (std::size_t j = 0; j < 17; ++j) {
        errs.at(0, j) = 10.0;
        errs.at(1, j) = 10.0;
        errs.at(2, j) = 20.0;
        errs.at(3, j) = 20.0;
    }
    const Breakdown b = breakdown(errs, {"walking", "walking", "sitting", "sitting"});
    CHECK(b.per_joint.size() == 17);
    CHECK(b.overall == doctest::Approx(15.0));
    REQUIRE(b.per_action.size() == 2);
    CHECK(b.per_action[0].first == "sitting");
    CHECK(b.per_action[0].second == doctest::Approx(20.0));
    CHECK(b.per_action[1].second == doctest::Approx(10.0));

    const Breakdown one = breakdown(errs, {"a", "a", "a", "a"});
    CHECK(one.per_action.size() == 1);
    CHECK(one.per_action[0].second == doctest::Approx(one.overall));
    CHECK_THROWS_AS(breakdown(errs, {"a"}), MetricError);
}

TEST_CASE("eval report tables") {
    std::mt19937_64 rng(12);
    std::vector<Tensor> ps, gs;
    for (int k = 0; k < 6; ++k) {
        gs.push_back(random_pose(rng));
        ps.push_back(random_pose(rng, 17, 50.0));
    }
    const EvalReport r = make_eval_report(stack(ps), stack(gs), {"a", "b", "a", "b", "c", "c"});
    double mean = 0.0;
    for (double v : r.per_joint_mm) mean += v;
    CHECK(mean / 17.0 == doctest::Approx(r.mpjpe_mm).epsilon(1e-9));
    const std::string csv = per_joint_csv(r);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 18);
    CHECK(csv.rfind("joint,name,mpjpe_mm\n", 0) == 0);
    const std::string actions = per_action_csv(r);
    CHECK(std::count(actions.begin(), actions.end(), '\n') == 4);
    const std::string svg = breakdown_svg(r, "t");
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("</svg>") != std::string::npos);
    const auto j = r.to_json();
    CHECK(j.at("per_joint_mm").size() == 17);
}
