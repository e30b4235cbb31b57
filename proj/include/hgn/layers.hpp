#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hgn/autodiff.hpp"
#include "hgn/graph.hpp"
#include "hgn/tensor.hpp"

namespace hgn {

enum class GConvKind { vanilla, semantic };
enum class Mode { train, eval };

const char* to_string(GConvKind k);
GConvKind parse_gconv_kind(std::string_view s);

/// Constant per-graph tensors shared by every layer on that graph.
struct GraphContext {
    Graph graph;
    NormalizedAdjacency adjacency;
    Tensor support;   // 0/1 support of A + I
    Tensor diagonal;  // identity
    Tensor off_diagonal;
    std::size_t learnable_logits = 0;  // support entries, i.e. learnable T entries

    explicit GraphContext(Graph g);
    GraphContext() = default;
    std::size_t n_nodes() const { return graph.n_nodes(); }
};

/// Graph convolution weights. Semantic layers use separate self/neighbour
/// transforms and aggregate with softmax(T) over the graph support. Vanilla
/// layers aggregate with the normalized adjacency and carry one transform
/// (`w_neigh` and `t` are empty).
struct GConvParams {
    GConvKind kind = GConvKind::semantic;
    Tensor w_self;   // (out, in)
    Tensor w_neigh;  // (out, in), semantic only
    Tensor t;        // (N, N), semantic only
    Tensor bias;     // (out)

    std::size_t in_channels() const { return w_self.dim(1); }
    std::size_t out_channels() const { return w_self.dim(0); }
};

struct NonLocalParams {
    Tensor theta, phi, g;  // (D/2, D)
    Tensor w_z;            // (D, D/2)
};

struct BatchNormState {
    Tensor gamma, beta;
    std::vector<double> running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    explicit BatchNormState(std::size_t channels = 0);
};

struct ScaleTransferParams {
    Tensor node_map;     // (N_target, N_source)
    Tensor channel_map;  // (D, D) or empty when transfers are node-only
    /// Batch norm on the transferred features inside fuse, when set.
    std::optional<BatchNormState> bn;
};

struct ResidualBlockParams {
    GConvParams conv1, conv2;
    BatchNormState bn1, bn2;
    NonLocalParams nonlocal;
};

/// Role of a learnable tensor; decides max-norm eligibility and counting.
enum class ParamRole { weight, bias, logits, gamma, beta };

struct ParamRef {
    std::string name;
    Tensor* value = nullptr;
    ParamRole role = ParamRole::weight;
    /// Scalars that can actually move. T logits off the graph support never
    /// influence the softmax and are not counted.
    std::size_t learnable = 0;
};

// ------------------------------------------------------------ construction

/// Glorot-uniform bound sqrt(6 / (fan_in + fan_out)).
double glorot_bound(std::size_t fan_in, std::size_t fan_out);
Tensor glorot_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

GConvParams make_gconv(GConvKind kind, std::size_t in, std::size_t out, std::size_t n_nodes,
                       std::mt19937_64& rng);
/// w_z is Glorot-uniform times this factor; theta, phi and g are plain Glorot.
inline constexpr double kNonLocalOutputScale = 0.1;
NonLocalParams make_nonlocal(std::size_t channels, std::mt19937_64& rng);
ResidualBlockParams make_residual_block(GConvKind kind, std::size_t channels, std::size_t n_nodes,
                                        std::mt19937_64& rng);
ScaleTransferParams make_transfer(std::size_t n_source, std::size_t n_target, std::size_t channels,
                                  bool channel_map, std::mt19937_64& rng, bool batch_norm = false);

void collect_params(const std::string& prefix, GConvParams& p, const GraphContext& g,
                    std::vector<ParamRef>& out);
void collect_params(const std::string& prefix, NonLocalParams& p, std::vector<ParamRef>& out);
void collect_params(const std::string& prefix, BatchNormState& p, std::vector<ParamRef>& out);
void collect_params(const std::string& prefix, ResidualBlockParams& p, const GraphContext& g,
                    std::vector<ParamRef>& out);
void collect_params(const std::string& prefix, ScaleTransferParams& p, std::vector<ParamRef>& out);

// ----------------------------------------------------------------- binding

/// Puts parameter tensors on a tape as leaves (once each) and reads their
/// gradients back after backward. Tensors rejected by the trainable filter
/// become constants.
class ParamBinder {
public:
    explicit ParamBinder(ad::Tape& tape, bool requires_grad = true,
                         std::function<bool(const Tensor*)> trainable = {})
        : tape_(tape), requires_grad_(requires_grad), trainable_(std::move(trainable)) {}

    ad::Variable operator()(const Tensor& t);
    ad::Variable constant(const Tensor& t);
    /// Use an existing tape variable for `t` (e.g. a gradient-check input).
    void bind(const Tensor& t, const ad::Variable& v) { bound_[&t] = v; }
    ad::Tape& tape() { return tape_; }
    /// Gradient of a bound tensor, zeros if unbound or frozen.
    Tensor grad(const Tensor& t) const;

private:
    ad::Tape& tape_;
    bool requires_grad_;
    std::function<bool(const Tensor*)> trainable_;
    std::unordered_map<const Tensor*, ad::Variable> bound_;
    std::unordered_map<const Tensor*, ad::Variable> constants_;
};

/// Batch statistics observed by a training-mode forward, to be folded into
/// the running averages afterwards.
struct BatchNormUpdate {
    const BatchNormState* target = nullptr;
    ad::BatchNormStats stats;
};

struct ForwardContext {
    ParamBinder& bind;
    Mode mode = Mode::train;
    std::vector<BatchNormUpdate>* updates = nullptr;
};

void apply_running_update(BatchNormState& state, const ad::BatchNormStats& stats);

// ------------------------------------------------------------------ layers

/// Softmax of `logits` over each row's support (mask != 0); zero elsewhere.
ad::Variable masked_softmax(const ad::Variable& logits, const Tensor& mask);

/// Ã X W^T + b, X (batch, N, D).
ad::Variable vanilla_gconv(ForwardContext& ctx, const GConvParams& p, const ad::Variable& x,
                           const GraphContext& g);
/// diag(S) X W_self^T + offdiag(S) X W_neigh^T + b with S = masked_softmax(T).
ad::Variable sem_gconv(ForwardContext& ctx, const GConvParams& p, const ad::Variable& x,
                       const GraphContext& g);
ad::Variable gconv(ForwardContext& ctx, const GConvParams& p, const ad::Variable& x,
                   const GraphContext& g);

/// Embedded-Gaussian self-attention over nodes with a residual connection.
ad::Variable non_local(ForwardContext& ctx, const NonLocalParams& p, const ad::Variable& x);

ad::Variable batch_norm(ForwardContext& ctx, const BatchNormState& s, const ad::Variable& x);

/// ReLU(bn2(conv2(ReLU(bn1(conv1 x))))) added to x, then the non-local layer.
ad::Variable residual_block(ForwardContext& ctx, const ResidualBlockParams& p,
                            const ad::Variable& x, const GraphContext& g);

/// node_map . X (. channel_map^T): (batch, N_i, D) -> (batch, N_k, D).
ad::Variable scale_transfer(ForwardContext& ctx, const ScaleTransferParams& p,
                            const ad::Variable& x);

/// One fusion term: scale_transfer followed by the transfer's batch norm
/// when it has one.
ad::Variable transfer_term(ForwardContext& ctx, const ScaleTransferParams& p, const ad::Variable& x);

/// Learned transfers keyed by (source scale, target scale).
using TransferGrid = std::map<std::pair<std::size_t, std::size_t>, ScaleTransferParams>;

/// Y_k = X_k + sum_{i != k} transfer_term_{i->k}(X_i) over the listed scales.
/// `scales[j]` names the scale id of xs[j].
std::vector<ad::Variable> fuse(ForwardContext& ctx, const TransferGrid& transfers,
                               const std::vector<std::size_t>& scales,
                               const std::vector<ad::Variable>& xs);

}  // namespace hgn
