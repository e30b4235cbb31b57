#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hgn/tensor.hpp"

// Tape-based reverse-mode differentiation over dense tensors.
//
// Broadcasting: a rank-2 operand broadcasts over the leading batch dimension
// of a rank-3 operand (add, sub, hadamard, matmul). A rank-1 bias broadcasts
// over all leading dimensions through `add_bias` only. Nothing else
// broadcasts implicitly.

namespace hgn::ad {

class AutodiffError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class OpKind {
    leaf,
    matmul,
    add,
    sub,
    hadamard,
    relu,
    scale,
    sum,
    mean,
    transpose,
    concat_channels,
    square,
    add_bias,
    masked_softmax,
    batch_norm,
};

std::string_view kind_name(OpKind k);
/// Throws AutodiffError("unknown operation kind ...") for names not in the enum.
OpKind parse_kind(std::string_view name);

class Tape;

/// Handle to one node of a Tape. Cheap to copy; only valid while its tape lives.
class Variable {
public:
    Variable() = default;

    const Tensor& value() const;
    /// Accumulated gradient; a zero tensor of the value's shape if nothing
    /// has flowed here yet.
    Tensor grad() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Variable(Tape* t, std::size_t id) : tape_(t), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

using GradientMap = std::map<std::size_t, Tensor>;

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    struct Record {
        OpKind kind;
        std::vector<std::size_t> inputs;
        std::size_t output;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Variable leaf(Tensor value, bool requires_grad = true);
    Variable constant(Tensor value) { return leaf(std::move(value), false); }

    /// Appends a node. A record (and the backward closure) is kept only when
    /// some input requires grad.
    Variable push(OpKind kind, Tensor value, const std::vector<Variable>& inputs, BackwardFn fn);

    /// Reverse sweep from a scalar output. Intermediate gradients are reset on
    /// every call; leaf gradients accumulate across calls until zero_grad().
    GradientMap backward(const Variable& output);
    void zero_grad();

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    bool is_leaf(std::size_t id) const { return nodes_.at(id).kind == OpKind::leaf; }
    /// Gradient buffer of node `id` (allocated as zeros on first use), or
    /// nullptr when that node does not require grad.
    Tensor* grad_buffer(std::size_t id);
    const Tensor* grad_if_any(std::size_t id) const;

    std::size_t node_count() const noexcept { return nodes_.size(); }
    std::vector<Record> records() const;

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        OpKind kind = OpKind::leaf;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
    };
    std::deque<Node> nodes_;  // stable addresses: value() references survive push
};

// Primitives. All throw ShapeError (naming the op and shapes) on mismatch.

/// a . b, or a . b^T when transpose_b. Ranks (2,2), (3,2) shared right
/// operand, (2,3) shared left operand, (3,3) batched.
Variable matmul(const Variable& a, const Variable& b, bool transpose_b = false);
Variable add(const Variable& a, const Variable& b);
Variable sub(const Variable& a, const Variable& b);
Variable hadamard(const Variable& a, const Variable& b);
Variable relu(const Variable& x);
Variable scale(const Variable& x, double s);
Variable sum(const Variable& x);
Variable mean(const Variable& x);
/// Swaps the last two axes (rank 2 or 3).
Variable transpose(const Variable& x);
Variable concat_channels(const std::vector<Variable>& xs);
Variable square(const Variable& x);
/// x (..., D) + bias (D)
Variable add_bias(const Variable& x, const Variable& bias);
/// Softmax over the last axis restricted to mask != 0. `mask` is (R, C) and
/// row r of x (flattened leading dims) uses mask row r % R. Pass an empty
/// tensor for an unrestricted softmax. Throws if a mask row is empty.
Variable masked_softmax(const Variable& x, const Tensor& mask);

struct BatchNormStats {
    std::vector<double> mean;
    std::vector<double> var;  // biased (population) variance over the pooled rows
    std::size_t count = 0;
};

/// Per-channel normalization pooled over every leading dimension.
/// Training form uses the statistics of x itself (written to `stats` if
/// non-null); requires at least 2 pooled rows.
Variable batch_norm_train(const Variable& x, const Variable& gamma, const Variable& beta,
                          double eps, BatchNormStats* stats = nullptr);
/// Inference form with fixed running statistics.
Variable batch_norm_eval(const Variable& x, const Variable& gamma, const Variable& beta,
                         std::span<const double> running_mean,
                         std::span<const double> running_var, double eps);

struct PrimitiveArgs {
    double factor = 1.0;  // scale
};

/// Dispatch by name over the generic primitive set:
/// matmul, add, sub, hadamard, relu, scale, sum, mean, transpose,
/// concat_channels, square.
Variable forward_primitive(std::string_view kind, const std::vector<Variable>& inputs,
                           PrimitiveArgs args = {});

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coordinates_checked = 0;
    /// Coordinates where both gradients were within zero_tol of zero, and
    /// the largest |analytic - numeric| among them.
    std::size_t zero_coordinates = 0;
    double max_zero_abs_error = 0.0;
};

using ScalarFn = std::function<Variable(Tape&, const std::vector<Variable>&)>;

struct GradCheckOptions {
    /// Check at most this many coordinates per input (0 = all), chosen by a
    /// seeded shuffle. Large models are sampled; small ones are exhaustive.
    std::size_t max_coords_per_input = 0;
    std::uint64_t seed = 0;
    /// Coordinates with |analytic| and |numeric| both <= zero_tol are
    /// reported separately instead of as a relative error (0 = off).
    double zero_tol = 0.0;
};

/// Max over checked coordinates of |analytic - numeric| /
/// max(|analytic|, |numeric|, 1e-8), numeric by central differences.
GradCheckResult gradient_check(const ScalarFn& f, const std::vector<Tensor>& point, double step,
                               GradCheckOptions opts = {});

}  // namespace hgn::ad
