#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hgn/data.hpp"
#include "hgn/metrics.hpp"
#include "hgn/model.hpp"

namespace hgn {

/// Non-finite loss or gradient.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LossWeights {
    double lambda_p = 1.0;
    double lambda_m = 0.01;
    void validate() const;
};

/// Model-unit (metre) targets for one batch.
struct Batch {
    Tensor x2d;   // (B, 17, 2)
    Tensor pose;  // (B, 17, 3)
    std::optional<Tensor> mesh_mid;  // (B, n_mid, 3)
    std::optional<Tensor> mesh_top;  // (B, n_top, 3)
    /// 1 for samples that carry mesh targets, 0 otherwise
    std::vector<double> mesh_mask;
    std::size_t size() const { return x2d.empty() ? 0 : x2d.dim(0); }
};

inline constexpr double kMetresPerMm = 1e-3;

/// Stacks samples[indices] into model units.
Batch make_batch(const std::vector<PoseSample>& samples, std::span<const std::size_t> indices);

/// lambda_p * sum ||pose error||^2 + lambda_m * (mid + top mesh terms), summed
/// over points and averaged over the batch. Mesh terms are skipped when the
/// model has no such head or the batch no such target; masked-out samples
/// contribute only the pose term.
ad::Variable compute_loss(const ModelOutputs& out, const Batch& batch, const LossWeights& w);

enum class LrDecay { step, exponential };

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double base_lr = 1e-3;
    double lr_decay = 0.9;
    std::size_t lr_decay_every = 20;
    LrDecay decay_kind = LrDecay::step;
    /// 0 disables max-norm
    double max_norm = 1.0;
    bool flip_augment = true;
    double flip_probability = 0.5;
    LossWeights loss;
    /// held-out share of the dataset for per-epoch validation
    double val_fraction = 0.1;
    /// also report train-set MPJPE each epoch
    bool track_train_mpjpe = false;
    /// wall-clock time per epoch in the report (makes reports non-reproducible)
    bool report_wall_time = false;
    /// When nonempty, only parameters whose name starts with one of these
    /// prefixes are trained and batch norm runs on its running statistics.
    std::vector<std::string> trainable_prefixes;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
};

/// base_lr * decay^floor(epoch / every), or decay^(epoch / every) for the
/// exponential schedule. Epochs count from 0.
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct AdamState {
    struct Moments {
        Tensor m;
        Tensor v;
    };
    std::map<std::string, Moments> moments;  // keyed by parameter name
    std::size_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update of params[i] by grads[i]. Checks every
/// gradient first; a non-finite entry throws NumericError naming the
/// parameter and leaves everything unchanged.
void adam_step(AdamState& state, std::vector<ParamRef>& params, const std::vector<Tensor>& grads,
               double lr);

/// Rescales weight-matrix rows whose L2 norm exceeds threshold.
void max_norm_clip(std::vector<ParamRef>& params, double threshold);

/// Mirror across the sagittal plane: negate x in 2D and 3D, swap left/right
/// joints. Mesh targets have no vertex pairing and are dropped.
PoseSample flip_augment(const PoseSample& s,
                        std::span<const std::pair<std::size_t, std::size_t>> pairs);
PoseSample flip_augment(const PoseSample& s);

/// Mirror of a (B, 17, 3) or (B, 17, 2) joint tensor.
Tensor flip_joints(const Tensor& joints, std::span<const std::pair<std::size_t, std::size_t>> pairs);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double lr = 0.0;
    double train_loss = 0.0;
    std::size_t steps = 0;
    std::optional<double> val_mpjpe_mm;
    std::optional<double> train_mpjpe_mm;
    std::optional<double> wall_ms;

    nlohmann::json to_json() const;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t param_count = 0;
    std::size_t train_samples = 0;
    std::size_t val_samples = 0;
    AdamState optimizer;  // state after the last step
};

/// Trains in place. When `report` is given, writes `config_echo` as the first
/// JSON line and then one line per epoch.
TrainReport train(HGNParams& model, const Dataset& dataset, const TrainConfig& cfg,
                  std::ostream* report = nullptr,
                  const nlohmann::json& config_echo = nlohmann::json::object());

struct EvalOptions {
    bool flip_eval = false;
    bool pa_with_scale = true;
    std::size_t batch_size = 256;
    PckOptions pck;
};

/// Root-centred pose predictions in mm, (K, 17, 3). With flip_eval the
/// prediction for the mirrored input is mirrored back and averaged in.
Tensor predict_poses_mm(const HGNParams& model, const std::vector<PoseSample>& samples,
                        bool flip_eval = false, std::size_t batch_size = 256);

EvalReport evaluate(const HGNParams& model, const Dataset& dataset, const EvalOptions& opts = {});

struct ModelGradCheck {
    ad::GradCheckResult result;
    std::string worst_param;
    std::size_t tensors_checked = 0;
};

/// Central differences of compute_loss through the whole model in train mode,
/// at up to coords_per_tensor seeded coordinates of every learnable tensor.
/// Coordinates whose gradient is zero to within the rounding resolution of
/// the loss (about 1e4 ulp of |loss| / step) are counted, not ratioed.
ModelGradCheck model_gradient_check(const HGNParams& model, const Batch& batch, const LossWeights& w,
                                    double step, std::size_t coords_per_tensor, std::uint64_t seed);

/// Fits only the mesh heads of `model` (trunk frozen, batch norm on running
/// statistics) with the mesh loss, for a model trained without it.
TrainReport probe_mesh_heads(HGNParams& model, const Dataset& dataset, TrainConfig cfg);

}  // namespace hgn
