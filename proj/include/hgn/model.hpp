#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hgn/graph.hpp"
#include "hgn/layers.hpp"

namespace hgn {

enum class Variant { full, no_top, no_mid_coarsest, baseline };

const char* to_string(Variant v);
/// Accepts full, no_top, no_mid_coarsest, baseline (or baseline_single_scale).
Variant parse_variant(std::string_view s);

/// What a scale's output head predicts.
enum class HeadKind { pose, mesh_mid, mesh_top };
const char* to_string(HeadKind h);

struct HGNConfig {
    std::size_t channels = 128;
    GConvKind gconv = GConvKind::semantic;
    /// Blocks per subnetwork, skeleton first. Trimmed to the variant's scales.
    std::vector<std::size_t> blocks_per_scale{4, 4, 2};
    /// Expected node counts {17, n_mid, n_top}; empty means take them from
    /// the hierarchy. A mismatch with the hierarchy is an error.
    std::vector<std::size_t> scale_node_counts;
    /// Stage at which the last (finest mesh) subnetwork joins, 1-based.
    std::size_t top_scale_join_stage = 3;
    /// Add a learned D x D channel map to every cross-scale transfer.
    bool transfer_channel_map = false;
    /// Batch-normalize every transferred feature map before it is summed.
    bool transfer_batch_norm = true;
    Variant variant = Variant::full;
    std::uint64_t seed = 0;

    void validate() const;
};

/// One subnetwork: its graph, its head and its place in the schedule.
struct ScaleSpec {
    GraphContext graph;
    HeadKind head = HeadKind::pose;
    std::size_t blocks = 0;
    std::size_t join_stage = 1;  // 1-based
};

struct HGNParams {
    HGNConfig config;
    std::vector<ScaleSpec> scales;  // scale 0 is the skeleton
    std::size_t n_stages = 0;

    GConvParams pre;
    BatchNormState pre_bn;
    std::vector<std::vector<ResidualBlockParams>> blocks;  // [scale][block]
    /// seed[s]: transfers that create scale s's initial features, keyed by
    /// (source, s). Empty for scale 0.
    TransferGrid seed;
    /// fusion[stage - 1]: transfers among scales active at that stage.
    std::vector<TransferGrid> fusion;
    std::vector<GConvParams> heads;  // one per scale

    /// Named learnable tensors in a fixed order.
    std::vector<ParamRef> parameters();
    std::vector<BatchNormState*> batch_norms();
    std::vector<std::string> batch_norm_names() const;

    std::size_t scale_of(HeadKind h) const;  // throws if the head is absent
    bool has_head(HeadKind h) const;
};

/// Builds a model whose mesh scales come from the selected levels of
/// `hierarchy` (level 0 ~ 96 nodes, level 1 ~ 48 nodes).
HGNParams build(const HGNConfig& config, const CoarseningHierarchy& hierarchy);
HGNParams build_ablation(HGNConfig config, Variant variant, const CoarseningHierarchy& hierarchy);

/// Learnable scalar count (weights, biases, supported T entries, gamma, beta).
std::size_t param_count(HGNParams& params);
std::size_t param_count(const HGNParams& params);

struct ModelOutputs {
    ad::Variable pose;                     // (batch, 17, 3)
    std::optional<ad::Variable> mesh_mid;  // (batch, n_mid, 3)
    std::optional<ad::Variable> mesh_top;  // (batch, n_top, 3)
};

/// Differentiable forward pass on a tape. In train mode batch statistics are
/// used and appended to ctx.updates when it is set.
ModelOutputs forward(ForwardContext& ctx, const HGNParams& params, const ad::Variable& x2d);

struct Prediction {
    Tensor pose;
    std::optional<Tensor> mesh_mid, mesh_top;
};

/// Eval-mode forward without gradient tracking. Pure.
Prediction predict(const HGNParams& params, const Tensor& x2d);

}  // namespace hgn
