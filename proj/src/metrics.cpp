#include "hgn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Geometry>

#include "hgn/skeleton.hpp"

namespace hgn {

namespace {

void check_points(const char* op, const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) throw ShapeError(op, pred.shape(), gt.shape());
    if ((pred.rank() != 2 && pred.rank() != 3) || pred.shape().back() != 3) {
        throw ShapeError(std::string(op) + ": expected (K, J, 3) or (J, 3), got " +
                         shape_str(pred.shape()));
    }
}

std::pair<std::size_t, std::size_t> samples_and_points(const Tensor& t) {
    if (t.rank() == 2) return {1, t.dim(0)};
    return {t.dim(0), t.dim(1)};
}

Eigen::MatrixX3d as_points(const double* p, std::size_t n) {
    Eigen::MatrixX3d m(static_cast<Eigen::Index>(n), 3);
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) m(static_cast<Eigen::Index>(i), k) = p[i * 3 + k];
    }
    return m;
}

Similarity fit_points(const Eigen::MatrixX3d& x, const Eigen::MatrixX3d& y, bool with_scale) {
    const Eigen::RowVector3d mx = x.colwise().mean(), my = y.colwise().mean();
    const Eigen::MatrixX3d x0 = x.rowwise() - mx, y0 = y.rowwise() - my;
    const double var_y = y0.squaredNorm();
    const double scale_ref = std::max(1.0, y.cwiseAbs().maxCoeff());
    if (var_y <= 1e-24 * scale_ref * scale_ref) {
        throw MetricError("procrustes: ground truth points all coincide");
    }
    const double var_x = x0.squaredNorm();
    Similarity out;
    if (var_x == 0.0) {
        // Every predicted point is the same; only the translation matters.
        out.s = with_scale ? 0.0 : 1.0;
        out.t = my.transpose() - out.s * mx.transpose();
        return out;
    }
    const Eigen::Matrix3d h = x0.transpose() * y0;
    const Svd3 svd = jacobi_svd3(h);
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    if ((svd.v * svd.u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
    out.r = svd.v * d * svd.u.transpose();
    out.s = with_scale ? (svd.s.asDiagonal() * d).trace() / var_x : 1.0;
    out.t = my.transpose() - out.s * out.r * mx.transpose();
    return out;
}

void apply(const Similarity& tf, const double* in, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d p(in[i * 3], in[i * 3 + 1], in[i * 3 + 2]);
        const Eigen::Vector3d q = tf.s * (tf.r * p) + tf.t;
        for (int k = 0; k < 3; ++k) out[i * 3 + k] = q[k];
    }
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << v;
    return os.str();
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

Svd3 jacobi_svd3(const Eigen::Matrix3d& a, double tol, int max_sweeps) {
    Eigen::Matrix3d w = a;
    Eigen::Matrix3d v = Eigen::Matrix3d::Identity();
    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                const double alpha = w.col(p).squaredNorm();
                const double beta = w.col(q).squaredNorm();
                const double gamma = w.col(p).dot(w.col(q));
                if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                const Eigen::Vector3d wp = w.col(p), wq = w.col(q);
                w.col(p) = c * wp - s * wq;
                w.col(q) = s * wp + c * wq;
                const Eigen::Vector3d vp = v.col(p), vq = v.col(q);
                v.col(p) = c * vp - s * vq;
                v.col(q) = s * vp + c * vq;
            }
        }
        if (!rotated) break;
    }

    // Singular values are the column norms; order them descending.
    std::array<int, 3> order{0, 1, 2};
    Eigen::Vector3d norms(w.col(0).norm(), w.col(1).norm(), w.col(2).norm());
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return norms[i] > norms[j]; });
    Svd3 out;
    out.sweeps = sweep;
    for (int k = 0; k < 3; ++k) {
        out.s[k] = norms[order[k]];
        out.v.col(k) = v.col(order[k]);
        out.u.col(k) = w.col(order[k]);
    }
    // Left vectors: normalise, completing the basis where a column vanished.
    const double floor = std::max(out.s[0], 1.0) * 1e-14;
    for (int k = 0; k < 3; ++k) {
        if (out.s[k] > floor) {
            out.u.col(k) /= out.s[k];
            continue;
        }
        out.s[k] = std::max(out.s[k], 0.0);
        if (k == 2) {
            out.u.col(2) = out.u.col(0).cross(out.u.col(1));
        } else if (k == 1) {
            Eigen::Vector3d e = Eigen::Vector3d::Unit(0);
            if (std::abs(out.u.col(0).dot(e)) > 0.9) e = Eigen::Vector3d::Unit(1);
            out.u.col(1) = (e - out.u.col(0).dot(e) * out.u.col(0)).normalized();
        } else {
            out.u = Eigen::Matrix3d::Identity();
            break;
        }
    }
    return out;
}

Similarity procrustes_fit(const Tensor& pred, const Tensor& gt, bool with_scale) {
    check_points("procrustes_align", pred, gt);
    if (pred.rank() != 2) throw ShapeError("procrustes_align expects (J, 3) inputs, got " + shape_str(pred.shape()));
    return fit_points(as_points(pred.data(), pred.dim(0)), as_points(gt.data(), gt.dim(0)), with_scale);
}

Tensor procrustes_align(const Tensor& pred, const Tensor& gt, bool with_scale) {
    const Similarity tf = procrustes_fit(pred, gt, with_scale);
    Tensor out(pred.shape());
    apply(tf, pred.data(), out.data(), pred.dim(0));
    return out;
}

Tensor point_errors(const Tensor& pred, const Tensor& gt) {
    check_points("point_errors", pred, gt);
    const auto [k, n] = samples_and_points(pred);
    Tensor out({k, n});
    for (std::size_t i = 0; i < k * n; ++i) {
        const double dx = pred[i * 3] - gt[i * 3], dy = pred[i * 3 + 1] - gt[i * 3 + 1],
                     dz = pred[i * 3 + 2] - gt[i * 3 + 2];
        out[i] = std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    return out;
}

double mpjpe(const Tensor& pred, const Tensor& gt) {
    const Tensor e = point_errors(pred, gt);
    if (e.empty()) return 0.0;
    return std::accumulate(e.values().begin(), e.values().end(), 0.0) / static_cast<double>(e.size());
}

double mpvpe(const Tensor& pred, const Tensor& gt) { return mpjpe(pred, gt); }

Tensor pa_point_errors(const Tensor& pred, const Tensor& gt, bool with_scale) {
    check_points("pa_mpjpe", pred, gt);
    const auto [k, n] = samples_and_points(pred);
    Tensor aligned(pred.shape());
    for (std::size_t s = 0; s < k; ++s) {
        const double* p = pred.data() + s * n * 3;
        const double* g = gt.data() + s * n * 3;
        const Similarity tf = fit_points(as_points(p, n), as_points(g, n), with_scale);
        apply(tf, p, aligned.data() + s * n * 3, n);
    }
    return point_errors(aligned, gt);
}

double pa_mpjpe(const Tensor& pred, const Tensor& gt, bool with_scale) {
    const Tensor e = pa_point_errors(pred, gt, with_scale);
    if (e.empty()) return 0.0;
    return std::accumulate(e.values().begin(), e.values().end(), 0.0) / static_cast<double>(e.size());
}

bool within_threshold(double err, double t) { return t == 0.0 ? err <= 0.0 : err < t; }

PckAuc pck_auc_from_errors(std::span<const double> errors, const PckOptions& opts) {
    if (opts.auc_steps < 2 || !(opts.auc_hi_mm > opts.auc_lo_mm)) {
        throw MetricError("AUC grid needs at least 2 steps over a non-empty range");
    }
    PckAuc out;
    if (errors.empty()) return out;
    auto pct = [&](double t) {
        std::size_t hit = 0;
        for (double e : errors) hit += within_threshold(e, t);
        return 100.0 * static_cast<double>(hit) / static_cast<double>(errors.size());
    };
    out.pck = pct(opts.threshold_mm);
    double acc = 0.0;
    for (std::size_t i = 0; i < opts.auc_steps; ++i) {
        const double t = opts.auc_lo_mm + (opts.auc_hi_mm - opts.auc_lo_mm) * static_cast<double>(i) /
                                              static_cast<double>(opts.auc_steps - 1);
        acc += pct(t);
    }
    out.auc = acc / static_cast<double>(opts.auc_steps);
    return out;
}

PckAuc pck_auc(const Tensor& pred, const Tensor& gt, const PckOptions& opts) {
    const Tensor e = point_errors(pred, gt);
    return pck_auc_from_errors(e.span(), opts);
}

Breakdown breakdown(const Tensor& errors, const std::vector<std::string>& tags) {
    if (errors.rank() != 2) throw ShapeError("breakdown expects a (K, J) error table, got " + shape_str(errors.shape()));
    const std::size_t k = errors.dim(0), j = errors.dim(1);
    if (tags.size() != k) {
        throw MetricError("breakdown: " + std::to_string(tags.size()) + " tags for " +
                          std::to_string(k) + " samples");
    }
    Breakdown b;
    b.per_joint.assign(j, 0.0);
    std::map<std::string, double> sums;
    double total = 0.0;
    for (std::size_t s = 0; s < k; ++s) {
        double row = 0.0;
        for (std::size_t q = 0; q < j; ++q) {
            b.per_joint[q] += errors.at(s, q);
            row += errors.at(s, q);
        }
        sums[tags[s]] += row / static_cast<double>(j);
        b.action_count[tags[s]]++;
        total += row;
    }
    if (k > 0) {
        for (double& v : b.per_joint) v /= static_cast<double>(k);
        b.overall = total / static_cast<double>(k * j);
    }
    for (const auto& [tag, sum] : sums) {
        b.per_action.emplace_back(tag, sum / static_cast<double>(b.action_count[tag]));
    }
    return b;
}

double EvalReport::median_sample_mm() const {
    if (per_sample_mm.empty()) return 0.0;
    std::vector<double> v = per_sample_mm;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    if (v.size() % 2 == 1) return v[mid];
    const double hi = v[mid];
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j{{"samples", samples},
                     {"mpjpe_mm", mpjpe_mm},
                     {"pa_mpjpe_mm", pa_mpjpe_mm},
                     {"median_sample_mpjpe_mm", median_sample_mm()}};
    j["mpvpe_mid_mm"] = mpvpe_mid_mm ? nlohmann::json(*mpvpe_mid_mm) : nlohmann::json(nullptr);
    j["mpvpe_top_mm"] = mpvpe_top_mm ? nlohmann::json(*mpvpe_top_mm) : nlohmann::json(nullptr);
    nlohmann::json joints = nlohmann::json::object();
    for (std::size_t q = 0; q < per_joint_mm.size(); ++q) {
        const std::string name = q < skeleton::kJoints ? std::string(skeleton::kJointNames[q]) : std::to_string(q);
        joints[name] = per_joint_mm[q];
    }
    j["per_joint_mm"] = joints;
    nlohmann::json actions = nlohmann::json::object();
    for (const auto& [a, v] : per_action_mm) actions[a] = v;
    j["per_action_mm"] = actions;
    j["pck_pct"] = pck_pct ? nlohmann::json(*pck_pct) : nlohmann::json(nullptr);
    j["auc_pct"] = auc_pct ? nlohmann::json(*auc_pct) : nlohmann::json(nullptr);
    return j;
}

EvalReport make_eval_report(const Tensor& pred, const Tensor& gt, const std::vector<std::string>& actions,
                            bool pa_with_scale, const PckOptions& pck) {
    check_points("evaluate", pred, gt);
    if (pred.rank() != 3) throw ShapeError("evaluate expects (K, J, 3), got " + shape_str(pred.shape()));
    EvalReport r;
    r.samples = pred.dim(0);
    const Tensor e = point_errors(pred, gt);
    const Breakdown b = breakdown(e, actions);
    r.mpjpe_mm = b.overall;
    r.per_joint_mm = b.per_joint;
    r.per_action_mm = b.per_action;
    r.pa_mpjpe_mm = pa_mpjpe(pred, gt, pa_with_scale);
    const PckAuc pa = pck_auc_from_errors(e.span(), pck);
    r.pck_pct = pa.pck;
    r.auc_pct = pa.auc;
    const std::size_t j = pred.dim(1);
    for (std::size_t s = 0; s < r.samples; ++s) {
        double row = 0.0;
        for (std::size_t q = 0; q < j; ++q) row += e.at(s, q);
        r.per_sample_mm.push_back(row / static_cast<double>(j));
    }
    return r;
}

std::string per_joint_csv(const EvalReport& r) {
    std::string out = "joint,name,mpjpe_mm\n";
    for (std::size_t q = 0; q < r.per_joint_mm.size(); ++q) {
        const std::string name = q < skeleton::kJoints ? std::string(skeleton::kJointNames[q]) : "";
        out += std::to_string(q) + "," + name + "," + fmt(r.per_joint_mm[q]) + "\n";
    }
    return out;
}

std::string per_action_csv(const EvalReport& r) {
    std::string out = "action,mpjpe_mm\n";
    for (const auto& [a, v] : r.per_action_mm) out += a + "," + fmt(v) + "\n";
    return out;
}

std::string breakdown_svg(const EvalReport& r, const std::string& title) {
    const double panel_w = 420, panel_h = 260, margin = 50, gap = 40;
    const double width = 2 * panel_w + gap + 2 * margin, height = panel_h + 2 * margin + 60;
    double vmax = 1e-9;
    for (double v : r.per_joint_mm) vmax = std::max(vmax, v);
    for (const auto& [_, v] : r.per_action_mm) vmax = std::max(vmax, v);

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
       << xml_escape(title) << "</text>\n";

    auto panel = [&](double x0, const std::string& heading,
                     const std::vector<std::pair<std::string, double>>& bars, const char* colour) {
        const double y0 = margin;
        os << "<text x=\"" << x0 + panel_w / 2 << "\" y=\"" << y0 - 8
           << "\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(heading) << "</text>\n";
        os << "<line x1=\"" << x0 << "\" y1=\"" << y0 + panel_h << "\" x2=\"" << x0 + panel_w
           << "\" y2=\"" << y0 + panel_h << "\" stroke=\"black\"/>\n";
        os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y0 + panel_h
           << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << x0 - 4 << "\" y=\"" << y0 + 4 << "\" text-anchor=\"end\">" << fmt(vmax).substr(0, 6)
           << "</text>\n";
        if (bars.empty()) return;
        const double slot = panel_w / static_cast<double>(bars.size());
        for (std::size_t i = 0; i < bars.size(); ++i) {
            const double h = panel_h * bars[i].second / vmax;
            const double x = x0 + slot * static_cast<double>(i) + slot * 0.15;
            os << "<rect x=\"" << x << "\" y=\"" << y0 + panel_h - h << "\" width=\"" << slot * 0.7
               << "\" height=\"" << h << "\" fill=\"" << colour << "\"><title>" << xml_escape(bars[i].first)
               << ": " << fmt(bars[i].second) << " mm</title></rect>\n";
            const double lx = x + slot * 0.35, ly = y0 + panel_h + 8;
            os << "<text x=\"" << lx << "\" y=\"" << ly << "\" transform=\"rotate(45 " << lx << " " << ly
               << ")\">" << xml_escape(bars[i].first) << "</text>\n";
        }
    };
    std::vector<std::pair<std::string, double>> joints;
    for (std::size_t q = 0; q < r.per_joint_mm.size(); ++q) {
        joints.emplace_back(q < skeleton::kJoints ? std::string(skeleton::kJointNames[q]) : std::to_string(q),
                            r.per_joint_mm[q]);
    }
    panel(margin, "per joint (mm)", joints, "#4c72b0");
    panel(margin + panel_w + gap, "per action (mm)", r.per_action_mm, "#dd8452");
    os << "</svg>\n";
    return os.str();
}

}  // namespace hgn
