#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "hgn/tensor.hpp"

namespace hgn {

class MetricError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// a = u * diag(s) * v^T with s descending, u and v orthogonal.
struct Svd3 {
    Eigen::Matrix3d u;
    Eigen::Vector3d s;
    Eigen::Matrix3d v;
    int sweeps = 0;
};

/// One-sided (Hestenes) Jacobi SVD: rotates column pairs of a * v until every
/// pair is orthogonal to within tol relative to the column norms.
Svd3 jacobi_svd3(const Eigen::Matrix3d& a, double tol = 1e-12, int max_sweeps = 100);

/// x -> s * r * x + t
struct Similarity {
    Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
    double s = 1.0;
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
};

/// Least-squares similarity (or rigid, without scale) taking pred (N, 3)
/// onto gt (N, 3). Proper rotations only. Throws MetricError when gt is a
/// single repeated point.
Similarity procrustes_fit(const Tensor& pred, const Tensor& gt, bool with_scale = true);
Tensor procrustes_align(const Tensor& pred, const Tensor& gt, bool with_scale = true);

/// Euclidean error of every point, (K, J) for (K, J, 3) inputs.
Tensor point_errors(const Tensor& pred, const Tensor& gt);

/// Mean point distance; inputs (K, J, 3) or (J, 3), already root-centred.
double mpjpe(const Tensor& pred, const Tensor& gt);
double mpvpe(const Tensor& pred, const Tensor& gt);
/// Per-sample Procrustes, then mpjpe.
double pa_mpjpe(const Tensor& pred, const Tensor& gt, bool with_scale = true);
/// (K, J) point errors after per-sample alignment.
Tensor pa_point_errors(const Tensor& pred, const Tensor& gt, bool with_scale = true);

struct PckOptions {
    double threshold_mm = 150.0;
    double auc_lo_mm = 0.0;
    double auc_hi_mm = 150.0;
    std::size_t auc_steps = 31;
};

struct PckAuc {
    double pck = 0.0;  // percent
    double auc = 0.0;  // percent
};

/// A joint counts as correct at threshold t when its error is below t; at
/// t = 0 only exact hits count.
bool within_threshold(double err, double t);
PckAuc pck_auc(const Tensor& pred, const Tensor& gt, const PckOptions& opts = {});
PckAuc pck_auc_from_errors(std::span<const double> errors, const PckOptions& opts = {});

struct Breakdown {
    std::vector<double> per_joint;  // mean over samples, joint order
    std::vector<std::pair<std::string, double>> per_action;  // sorted by name
    std::map<std::string, std::size_t> action_count;
    double overall = 0.0;
};

/// Grouped means of a (K, J) error table; tags[k] labels sample k.
Breakdown breakdown(const Tensor& point_errors, const std::vector<std::string>& tags);

struct EvalReport {
    std::size_t samples = 0;
    double mpjpe_mm = 0.0;
    double pa_mpjpe_mm = 0.0;
    std::optional<double> mpvpe_mid_mm;
    std::optional<double> mpvpe_top_mm;
    std::vector<double> per_joint_mm;
    std::vector<std::pair<std::string, double>> per_action_mm;
    std::optional<double> pck_pct;
    std::optional<double> auc_pct;
    /// per-sample mean joint error, file order
    std::vector<double> per_sample_mm;

    double median_sample_mm() const;
    nlohmann::json to_json() const;
};

/// Metrics for root-centred (K, 17, 3) predictions and targets in mm.
EvalReport make_eval_report(const Tensor& pred, const Tensor& gt, const std::vector<std::string>& actions,
                            bool pa_with_scale = true, const PckOptions& pck = {});

/// CSV tables with a header row.
std::string per_joint_csv(const EvalReport& r);
std::string per_action_csv(const EvalReport& r);

/// Two bar panels, body parts on the left and actions on the right.
std::string breakdown_svg(const EvalReport& r, const std::string& title);

}  // namespace hgn
