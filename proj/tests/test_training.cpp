#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "hgn/body_mesh.hpp"
#include "hgn/skeleton.hpp"
#include "hgn/training.hpp"

using namespace hgn;

namespace {

const CoarseningHierarchy& hierarchy() {
    static const CoarseningHierarchy h = [] {
        auto mesh = build_synthetic_body_mesh(6890, 0);
        return build_hierarchy(mesh.graph, {96, 48}, 0);
    }();
    return h;
}

const Dataset& dataset64() {
    static const Dataset ds = [] {
        SyntheticGenConfig g;
        g.n_samples = 64;
        g.seed = 1;
        return generate_synthetic(g, &hierarchy());
    }();
    return ds;
}

Tensor filled(Shape s, double v) { return Tensor(std::move(s), v); }

ParamRef weight_ref(const std::string& name, Tensor& t) { return {name, &t, ParamRole::weight, t.size()}; }

double row_norm(const Tensor& w, std::size_t i) {
    double s = 0.0;
    for (std::size_t j = 0; j < w.dim(1); ++j) s += w.at(i, j) * w.at(i, j);
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("compute_loss examples") {
    ad::Tape tape;
    const Tensor target = filled({1, 17, 3}, 0.25);
    Batch b;
    b.x2d = Tensor({1, 17, 2});
    b.pose = target;
    b.mesh_mask = {0.0};

    ModelOutputs perfect{tape.constant(target), std::nullopt, std::nullopt};
    CHECK(compute_loss(perfect, b, {}).value()[0] == 0.0);

    Tensor off = target;
    off.at(0, 4, 0) += 1.0;
    ModelOutputs one{tape.constant(off), std::nullopt, std::nullopt};
    CHECK(compute_loss(one, b, {1.0, 0.0}).value()[0] == doctest::Approx(1.0).epsilon(1e-15));

    // mesh terms: weight lambda_m, absent when lambda_m = 0
    b.mesh_mid = filled({1, 5, 3}, 0.0);
    b.mesh_top = filled({1, 7, 3}, 0.0);
    b.mesh_mask = {1.0};
    Tensor mid = filled({1, 5, 3}, 0.0), top = filled({1, 7, 3}, 0.0);
    mid.at(0, 2, 1) = 2.0;  // squared error 4
    top.at(0, 6, 2) = 3.0;  // squared error 9
    ModelOutputs with_mesh{tape.constant(off), tape.constant(mid), tape.constant(top)};
    CHECK(compute_loss(with_mesh, b, {1.0, 0.01}).value()[0] == doctest::Approx(1.0 + 0.01 * 13.0));
    CHECK(compute_loss(with_mesh, b, {1.0, 0.0}).value()[0] == doctest::Approx(compute_loss(one, b, {1.0, 0.0}).value()[0]));

    // samples without mesh targets only contribute the pose term
    b.mesh_mask = {0.0};
    CHECK(compute_loss(with_mesh, b, {1.0, 0.01}).value()[0] == doctest::Approx(1.0));
}

TEST_CASE("compute_loss averages over the batch and rejects shape mismatches") {
    ad::Tape tape;
    Batch b;
    b.x2d = Tensor({2, 17, 2});
    b.pose = Tensor({2, 17, 3});
    b.mesh_mask = {0.0, 0.0};
    Tensor pred({2, 17, 3});
    pred.at(0, 0, 0) = 1.0;
    pred.at(1, 3, 1) = 1.0;
    pred.at(1, 5, 2) = 1.0;
    ModelOutputs out{tape.constant(pred), std::nullopt, std::nullopt};
    CHECK(compute_loss(out, b, {}).value()[0] == doctest::Approx(1.5));
    ModelOutputs bad{tape.constant(Tensor({2, 16, 3})), std::nullopt, std::nullopt};
    CHECK_THROWS_AS(compute_loss(bad, b, {}), ShapeError);
    CHECK_THROWS(LossWeights{-1.0, 0.0}.validate());
}

TEST_CASE("compute_loss is non-negative and zero only at the target") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        ad::Tape tape;
        Batch b;
        b.x2d = Tensor({3, 17, 2});
        b.pose = Tensor({3, 17, 3});
        b.mesh_mask = {0.0, 0.0, 0.0};
        for (auto& v : b.pose.span()) v = g(rng);
        Tensor pred = b.pose;
        pred[static_cast<std::size_t>(trial) % pred.size()] += 1e-3;
        CHECK(compute_loss({tape.constant(pred), std::nullopt, std::nullopt}, b, {}).value()[0] > 0.0);
        CHECK(compute_loss({tape.constant(b.pose), std::nullopt, std::nullopt}, b, {}).value()[0] == 0.0);
    }
}

TEST_CASE("lr_at examples") {
    TrainConfig c;
    CHECK(lr_at(0, c) == 0.001);
    CHECK(lr_at(19, c) == 0.001);
    CHECK(lr_at(20, c) == doctest::Approx(0.0009).epsilon(1e-15));
    CHECK(lr_at(99, c) == doctest::Approx(0.0006561).epsilon(1e-15));
    double prev = 1.0;
    for (std::size_t e = 0; e < 300; ++e) {
        CHECK(lr_at(e, c) <= prev);
        prev = lr_at(e, c);
    }
    c.decay_kind = LrDecay::exponential;
    CHECK(lr_at(10, c) == doctest::Approx(0.001 * std::pow(0.9, 0.5)).epsilon(1e-15));
    prev = 1.0;
    for (std::size_t e = 0; e < 300; ++e) {
        CHECK(lr_at(e, c) <= prev);
        prev = lr_at(e, c);
    }
}

TEST_CASE("train config validation") {
    TrainConfig c;
    c.batch_size = 0;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.lr_decay = 0.0;
    CHECK_THROWS(c.validate());
    c.lr_decay = 1.5;
    CHECK_THROWS(c.validate());
    c.lr_decay = 1.0;
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("adam with zero gradients leaves parameters and decays moments") {
    Tensor w({2, 2}, {1, 2, 3, 4});
    std::vector<ParamRef> params{weight_ref("w", w)};
    AdamState s;
    adam_step(s, params, {Tensor({2, 2}, {1, 1, 1, 1})}, 0.01);
    const Tensor before = w;
    const Tensor m = s.moments.at("w").m, v = s.moments.at("w").v;
    adam_step(s, params, {Tensor({2, 2})}, 0.01);
    // m/sqrt(v) keeps pushing, but the moments decay geometrically
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(s.moments.at("w").m[i] == doctest::Approx(0.9 * m[i]));
        CHECK(s.moments.at("w").v[i] == doctest::Approx(0.999 * v[i]));
    }
    Tensor z({2, 2}, {1, 2, 3, 4});
    std::vector<ParamRef> fresh{weight_ref("z", z)};
    AdamState s2;
    adam_step(s2, fresh, {Tensor({2, 2})}, 0.01);
    CHECK(z == Tensor({2, 2}, {1, 2, 3, 4}));
    CHECK(before.size() == 4);
}

TEST_CASE("adam first step moves by lr") {
    Tensor x({1}, {0.5});
    std::vector<ParamRef> params{{"x", &x, ParamRole::bias, 1}};
    AdamState s;
    adam_step(s, params, {Tensor({1}, {1.0})}, 0.001);
    // m_hat = 1, v_hat = 1, update = lr / (1 + eps)
    CHECK(x[0] == doctest::Approx(0.5 - 0.001 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(s.step == 1);
}

TEST_CASE("adam is deterministic and descends a convex quadratic") {
    auto run = [] {
        Tensor x({3}, {1.0, -2.0, 0.5});
        std::vector<ParamRef> params{{"x", &x, ParamRole::bias, 3}};
        AdamState s;
        std::vector<double> f;
        for (int k = 0; k < 50; ++k) {
            // f = 0.5 * sum a_i x_i^2, curvature up to 4
            const double a[3] = {1.0, 4.0, 0.25};
            Tensor g({3});
            double val = 0.0;
            for (int i = 0; i < 3; ++i) {
                g[i] = a[i] * x[i];
                val += 0.5 * a[i] * x[i] * x[i];
            }
            f.push_back(val);
            adam_step(s, params, {g}, 0.01);
        }
        return std::make_pair(x, f);
    };
    const auto [x1, f1] = run();
    const auto [x2, f2] = run();
    CHECK(x1 == x2);
    for (std::size_t k = 1; k < f1.size(); ++k) CHECK(f1[k] < f1[k - 1]);
}

TEST_CASE("adam rejects non-finite gradients without touching anything") {
    Tensor a({2}, {1.0, 2.0}), b({2}, {3.0, 4.0});
    std::vector<ParamRef> params{{"first", &a, ParamRole::bias, 2}, {"second", &b, ParamRole::bias, 2}};
    AdamState s;
    try {
        adam_step(s, params, {Tensor({2}, {1.0, 1.0}), Tensor({2}, {NAN, 0.0})}, 0.1);
        FAIL("accepted a NaN gradient");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("second") != std::string::npos);
    }
    CHECK(a == Tensor({2}, {1.0, 2.0}));
    CHECK(s.step == 0);
    CHECK(s.moments.empty());
}

TEST_CASE("max_norm_clip examples") {
    Tensor w({3, 2}, {0.3, 0.4, 3.0, 4.0, 0.0, 0.0});
    Tensor bias({2}, {30.0, 40.0});
    std::vector<ParamRef> params{weight_ref("w", w), {"b", &bias, ParamRole::bias, 2}};
    max_norm_clip(params, 1.0);
    CHECK(w.at(0, 0) == 0.3);
    CHECK(w.at(0, 1) == 0.4);
    CHECK(w.at(1, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(w.at(1, 1) == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(bias == Tensor({2}, {30.0, 40.0}));
    const Tensor once = w;
    max_norm_clip(params, 1.0);
    CHECK(w == once);
    CHECK_THROWS(max_norm_clip(params, 0.0));
}

TEST_CASE("max_norm_clip never grows a row and keeps its direction") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 2.0);
    Tensor w({20, 7});
    for (auto& v : w.span()) v = g(rng);
    const Tensor before = w;
    std::vector<ParamRef> params{weight_ref("w", w)};
    max_norm_clip(params, 1.5);
    for (std::size_t i = 0; i < 20; ++i) {
        const double nb = row_norm(before, i), na = row_norm(w, i);
        CHECK(na <= nb + 1e-15);
        CHECK(na <= 1.5 + 1e-12);
        double dot = 0.0;
        for (std::size_t j = 0; j < 7; ++j) dot += before.at(i, j) * w.at(i, j);
        CHECK(dot / (na * nb) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("flip_augment examples") {
    const PoseSample& s = dataset64().samples[3];
    const PoseSample twice = flip_augment(flip_augment(s));
    CHECK(twice.joints2d == s.joints2d);
    CHECK(twice.joints3d == s.joints3d);
    CHECK_FALSE(flip_augment(s).mesh_mid.has_value());

    PoseSample p;
    p.joints2d = Tensor({17, 2});
    p.joints3d = Tensor({17, 3});
    p.joints3d.at(13, 0) = 0.3;  // left wrist
    const PoseSample f = flip_augment(p);
    CHECK(f.joints3d.at(16, 0) == -0.3);  // right wrist slot
    CHECK(f.joints3d.at(13, 0) == 0.0);

    // a centred pose symmetric about x = 0 maps onto itself
    PoseSample t;
    t.joints2d = Tensor({17, 2});
    t.joints3d = Tensor({17, 3});
    for (std::size_t j = 0; j < 17; ++j) t.joints3d.at(j, 1) = 10.0 * j;
    for (const auto& [l, r] : skeleton::kLeftRightPairs) {
        t.joints3d.at(l, 0) = 100.0 + l;
        t.joints3d.at(r, 0) = -(100.0 + l);
        t.joints3d.at(l, 1) = t.joints3d.at(r, 1) = 5.0 * l;
    }
    CHECK(flip_augment(t).joints3d == t.joints3d);

    const std::pair<std::size_t, std::size_t> bad[] = {{13, 40}};
    CHECK_THROWS_AS(flip_augment(s, bad), std::invalid_argument);
}

TEST_CASE("flipping prediction and target preserves their error") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 300.0);
    Tensor pred({4, 17, 3}), gt({4, 17, 3});
    for (auto& v : pred.span()) v = g(rng);
    for (auto& v : gt.span()) v = g(rng);
    const auto pairs = std::span(skeleton::kLeftRightPairs);
    CHECK(mpjpe(flip_joints(pred, pairs), flip_joints(gt, pairs)) == doctest::Approx(mpjpe(pred, gt)).epsilon(1e-12));
}

TEST_CASE("one epoch over 64 samples at batch 64 is one step") {
    HGNConfig mc;
    mc.channels = 8;
    HGNParams m = build(mc, hierarchy());
    TrainConfig tc;
    tc.epochs = 1;
    tc.val_fraction = 0.0;
    std::ostringstream report;
    const TrainReport r = train(m, dataset64(), tc, &report, {{"run", "x"}});
    REQUIRE(r.epochs.size() == 1);
    CHECK(r.epochs[0].steps == 1);
    CHECK(r.optimizer.step == 1);
    std::istringstream lines(report.str());
    std::string first, second, third;
    std::getline(lines, first);
    std::getline(lines, second);
    CHECK(first == R"({"run":"x"})");
    CHECK(nlohmann::json::parse(second).at("epoch") == 1);
    CHECK_FALSE(std::getline(lines, third));
}

TEST_CASE("training descends on the overfit task") {
    HGNConfig mc;
    mc.channels = 64;
    HGNParams m = build(mc, hierarchy());
    TrainConfig tc;
    tc.epochs = 6;
    tc.val_fraction = 0.0;
    tc.flip_augment = false;
    const TrainReport r = train(m, dataset64(), tc);
    CHECK(r.epochs[5].train_loss < r.epochs[0].train_loss);
}

TEST_CASE("identical runs give identical models and reports") {
    auto run = [] {
        HGNConfig mc;
        mc.channels = 8;
        HGNParams m = build(mc, hierarchy());
        TrainConfig tc;
        tc.epochs = 2;
        tc.batch_size = 16;
        std::ostringstream report;
        train(m, dataset64(), tc, &report);
        std::vector<Tensor> values;
        for (const auto& r : m.parameters()) values.push_back(*r.value);
        return std::make_pair(values, report.str());
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.second == b.second);
    REQUIRE(a.first.size() == b.first.size());
    for (std::size_t i = 0; i < a.first.size(); ++i) CHECK(a.first[i] == b.first[i]);
}

TEST_CASE("non-finite loss aborts with context") {
    Dataset broken = dataset64();
    broken.samples[0].joints2d.at(2, 0) = NAN;
    HGNConfig mc;
    mc.channels = 8;
    HGNParams m = build(mc, hierarchy());
    TrainConfig tc;
    tc.epochs = 1;
    tc.val_fraction = 0.0;
    try {
        train(m, broken, tc);
        FAIL("trained through a NaN");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("epoch 1") != std::string::npos);
        CHECK(msg.find("batch 1") != std::string::npos);
    }
}

TEST_CASE("mesh-head probe trains only the mesh heads") {
    HGNConfig mc;
    mc.channels = 8;
    HGNParams m = build(mc, hierarchy());
    const HGNParams before = m;
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 32;
    tc.val_fraction = 0.0;
    probe_mesh_heads(m, dataset64(), tc);
    auto now = m.parameters();
    auto old = const_cast<HGNParams&>(before).parameters();
    bool head_moved = false;
    for (std::size_t i = 0; i < now.size(); ++i) {
        const bool is_head = now[i].name.rfind("head.mesh", 0) == 0;
        if (is_head) {
            head_moved = head_moved || !(*now[i].value == *old[i].value);
        } else {
            CHECK(*now[i].value == *old[i].value);
        }
    }
    CHECK(head_moved);
    auto bn_now = m.batch_norms();
    auto bn_old = const_cast<HGNParams&>(before).batch_norms();
    for (std::size_t i = 0; i < bn_now.size(); ++i) CHECK(bn_now[i]->running_mean == bn_old[i]->running_mean);
}

TEST_CASE("end-to-end gradient check at 8 channels, batch 2") {
    HGNConfig mc;
    mc.channels = 8;
    mc.seed = 3;
    HGNParams m = build(mc, hierarchy());
    std::vector<std::size_t> idx{0, 1};
    const Batch b = make_batch(dataset64().samples, idx);
    const ModelGradCheck g = model_gradient_check(m, b, {}, 1e-5, 4, 0);
    INFO("worst ", g.worst_param, " analytic ", g.result.analytic, " numeric ", g.result.numeric);
    INFO("zero-gradient coordinates ", g.result.zero_coordinates, " of ", g.result.coordinates_checked);
    CHECK(g.result.max_rel_error < 1e-3);
    CHECK(g.tensors_checked > 100);
    // the zero-gradient bucket is the exception, not the rule
    CHECK(g.result.zero_coordinates * 4 < g.result.coordinates_checked);
}

TEST_CASE("evaluation and flip averaging") {
    HGNConfig mc;
    mc.channels = 8;
    HGNParams m = build(mc, hierarchy());
    const EvalReport r = evaluate(m, dataset64());
    CHECK(r.samples == 64);
    CHECK(r.per_joint_mm.size() == 17);
    CHECK(r.mpvpe_mid_mm.has_value());
    CHECK(r.pa_mpjpe_mm <= r.mpjpe_mm);
    EvalOptions o;
    o.flip_eval = true;
    const EvalReport f = evaluate(m, dataset64(), o);
    CHECK(std::isfinite(f.mpjpe_mm));
    const Tensor p = predict_poses_mm(m, dataset64().samples);
    for (std::size_t k = 0; k < 64; ++k) {
        for (std::size_t c = 0; c < 3; ++c) CHECK(p.at(k, 0, c) == 0.0);
    }
}
