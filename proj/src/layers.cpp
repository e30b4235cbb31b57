#include "hgn/layers.hpp"

#include <algorithm>
#include <cmath>

namespace hgn {

const char* to_string(GConvKind k) { return k == GConvKind::vanilla ? "vanilla" : "semantic"; }

GConvKind parse_gconv_kind(std::string_view s) {
    if (s == "vanilla") return GConvKind::vanilla;
    if (s == "semantic") return GConvKind::semantic;
    throw std::invalid_argument("unknown gconv kind '" + std::string(s) +
                                "' (expected semantic or vanilla)");
}

GraphContext::GraphContext(Graph g)
    : graph(std::move(g)), adjacency(normalize_adjacency(graph)), support(support_mask(graph)) {
    const std::size_t n = graph.n_nodes();
    diagonal = Tensor::identity(n);
    off_diagonal = support;
    for (std::size_t i = 0; i < n; ++i) off_diagonal.at(i, i) = 0.0;
    for (double v : support.values()) learnable_logits += v != 0.0 ? 1 : 0;
}

BatchNormState::BatchNormState(std::size_t channels)
    : gamma(Shape{channels}, 1.0),
      beta(Shape{channels}, 0.0),
      running_mean(channels, 0.0),
      running_var(channels, 1.0) {}

// ------------------------------------------------------------ construction

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor glorot_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    const double b = glorot_bound(cols, rows);
    std::uniform_real_distribution<double> u(-b, b);
    Tensor t({rows, cols});
    for (auto& v : t.span()) v = u(rng);
    return t;
}

GConvParams make_gconv(GConvKind kind, std::size_t in, std::size_t out, std::size_t n_nodes,
                       std::mt19937_64& rng) {
    GConvParams p;
    p.kind = kind;
    p.w_self = glorot_uniform(out, in, rng);
    if (kind == GConvKind::semantic) {
        p.w_neigh = glorot_uniform(out, in, rng);
        p.t = Tensor({n_nodes, n_nodes});
    }
    p.bias = Tensor({out});
    return p;
}

NonLocalParams make_nonlocal(std::size_t channels, std::mt19937_64& rng) {
    const std::size_t de = std::max<std::size_t>(1, channels / 2);
    NonLocalParams p;
    p.theta = glorot_uniform(de, channels, rng);
    p.phi = glorot_uniform(de, channels, rng);
    p.g = glorot_uniform(de, channels, rng);
    // Output projection starts small so each block begins close to identity.
    p.w_z = glorot_uniform(channels, de, rng);
    for (double& v : p.w_z.span()) v *= kNonLocalOutputScale;
    return p;
}

ResidualBlockParams make_residual_block(GConvKind kind, std::size_t channels, std::size_t n_nodes,
                                        std::mt19937_64& rng) {
    ResidualBlockParams p;
    p.conv1 = make_gconv(kind, channels, channels, n_nodes, rng);
    p.conv2 = make_gconv(kind, channels, channels, n_nodes, rng);
    p.bn1 = BatchNormState(channels);
    p.bn2 = BatchNormState(channels);
    p.nonlocal = make_nonlocal(channels, rng);
    return p;
}

ScaleTransferParams make_transfer(std::size_t n_source, std::size_t n_target, std::size_t channels,
                                  bool channel_map, std::mt19937_64& rng, bool batch_norm) {
    ScaleTransferParams p;
    p.node_map = glorot_uniform(n_target, n_source, rng);
    if (channel_map) p.channel_map = glorot_uniform(channels, channels, rng);
    if (batch_norm) p.bn = BatchNormState(channels);
    return p;
}

void collect_params(const std::string& prefix, GConvParams& p, const GraphContext& g,
                    std::vector<ParamRef>& out) {
    if (p.kind == GConvKind::semantic) {
        out.push_back({prefix + ".w_self", &p.w_self, ParamRole::weight, p.w_self.size()});
        out.push_back({prefix + ".w_neigh", &p.w_neigh, ParamRole::weight, p.w_neigh.size()});
        out.push_back({prefix + ".t", &p.t, ParamRole::logits, g.learnable_logits});
    } else {
        out.push_back({prefix + ".w", &p.w_self, ParamRole::weight, p.w_self.size()});
    }
    out.push_back({prefix + ".bias", &p.bias, ParamRole::bias, p.bias.size()});
}

void collect_params(const std::string& prefix, NonLocalParams& p, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".theta", &p.theta, ParamRole::weight, p.theta.size()});
    out.push_back({prefix + ".phi", &p.phi, ParamRole::weight, p.phi.size()});
    out.push_back({prefix + ".g", &p.g, ParamRole::weight, p.g.size()});
    out.push_back({prefix + ".w_z", &p.w_z, ParamRole::weight, p.w_z.size()});
}

void collect_params(const std::string& prefix, BatchNormState& p, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".gamma", &p.gamma, ParamRole::gamma, p.gamma.size()});
    out.push_back({prefix + ".beta", &p.beta, ParamRole::beta, p.beta.size()});
}

void collect_params(const std::string& prefix, ResidualBlockParams& p, const GraphContext& g,
                    std::vector<ParamRef>& out) {
    collect_params(prefix + ".conv1", p.conv1, g, out);
    collect_params(prefix + ".bn1", p.bn1, out);
    collect_params(prefix + ".conv2", p.conv2, g, out);
    collect_params(prefix + ".bn2", p.bn2, out);
    collect_params(prefix + ".nonlocal", p.nonlocal, out);
}

void collect_params(const std::string& prefix, ScaleTransferParams& p, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".node_map", &p.node_map, ParamRole::weight, p.node_map.size()});
    if (!p.channel_map.empty()) {
        out.push_back(
            {prefix + ".channel_map", &p.channel_map, ParamRole::weight, p.channel_map.size()});
    }
    if (p.bn) collect_params(prefix + ".bn", *p.bn, out);
}

// ----------------------------------------------------------------- binding

ad::Variable ParamBinder::operator()(const Tensor& t) {
    if (trainable_ && !trainable_(&t)) return constant(t);
    auto it = bound_.find(&t);
    if (it != bound_.end()) return it->second;
    ad::Variable v = tape_.leaf(t, requires_grad_);
    bound_.emplace(&t, v);
    return v;
}

ad::Variable ParamBinder::constant(const Tensor& t) {
    auto it = constants_.find(&t);
    if (it != constants_.end()) return it->second;
    ad::Variable v = tape_.constant(t);
    constants_.emplace(&t, v);
    return v;
}

Tensor ParamBinder::grad(const Tensor& t) const {
    auto it = bound_.find(&t);
    if (it == bound_.end()) return Tensor(t.shape());
    return it->second.grad();
}

void apply_running_update(BatchNormState& state, const ad::BatchNormStats& stats) {
    const std::size_t c = state.running_mean.size();
    if (stats.mean.size() != c || stats.var.size() != c) {
        throw ShapeError("batch_norm running update", Shape{c}, Shape{stats.mean.size()});
    }
    // Running variance tracks the unbiased estimate.
    const double n = static_cast<double>(stats.count);
    const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
    const double m = state.momentum;
    for (std::size_t k = 0; k < c; ++k) {
        state.running_mean[k] = (1.0 - m) * state.running_mean[k] + m * stats.mean[k];
        state.running_var[k] = (1.0 - m) * state.running_var[k] + m * stats.var[k] * unbias;
    }
}

// ------------------------------------------------------------------ layers

namespace {

void require_rank3(const char* op, const ad::Variable& x, std::size_t nodes, std::size_t channels) {
    const Shape& s = x.shape();
    if (s.size() != 3 || s[1] != nodes || s[2] != channels) {
        throw ShapeError(op, s, Shape{s.empty() ? 0 : s[0], nodes, channels});
    }
}

}  // namespace

ad::Variable masked_softmax(const ad::Variable& logits, const Tensor& mask) {
    if (logits.shape().size() != 2 || mask.shape() != logits.shape()) {
        throw ShapeError("masked_softmax", logits.shape(), mask.shape());
    }
    return ad::masked_softmax(logits, mask);
}

ad::Variable vanilla_gconv(ForwardContext& ctx, const GConvParams& p, const ad::Variable& x,
                           const GraphContext& g) {
    if (p.kind != GConvKind::vanilla) {
        throw std::invalid_argument("vanilla_gconv: parameters are of kind semantic");
    }
    require_rank3("vanilla_gconv", x, g.n_nodes(), p.in_channels());
    auto& b = ctx.bind;
    ad::Variable h = ad::matmul(x, b(p.w_self), true);
    ad::Variable agg = ad::matmul(b.constant(g.adjacency.matrix), h);
    return ad::add_bias(agg, b(p.bias));
}

ad::Variable sem_gconv(ForwardContext& ctx, const GConvParams& p, const ad::Variable& x,
                       const GraphContext& g) {
    if (p.kind != GConvKind::semantic) {
        throw std::invalid_argument("sem_gconv: parameters are of kind vanilla");
    }
    require_rank3("sem_gconv", x, g.n_nodes(), p.in_channels());
    if (p.t.shape() != Shape{g.n_nodes(), g.n_nodes()}) {
        throw ShapeError("sem_gconv (T)", p.t.shape(), Shape{g.n_nodes(), g.n_nodes()});
    }
    auto& b = ctx.bind;
    ad::Variable s = hgn::masked_softmax(b(p.t), g.support);
    ad::Variable s_self = ad::hadamard(s, b.constant(g.diagonal));
    ad::Variable s_neigh = ad::hadamard(s, b.constant(g.off_diagonal));
    ad::Variable hs = ad::matmul(x, b(p.w_self), true);
    ad::Variable hn = ad::matmul(x, b(p.w_neigh), true);
    ad::Variable out = ad::add(ad::matmul(s_self, hs), ad::matmul(s_neigh, hn));
    return ad::add_bias(out, b(p.bias));
}

ad::Variable gconv(ForwardContext& ctx, const GConvParams& p, const ad::Variable& x,
                   const GraphContext& g) {
    return p.kind == GConvKind::semantic ? sem_gconv(ctx, p, x, g) : vanilla_gconv(ctx, p, x, g);
}

ad::Variable non_local(ForwardContext& ctx, const NonLocalParams& p, const ad::Variable& x) {
    const std::size_t d = p.theta.dim(1);
    const std::size_t de = p.theta.dim(0);
    if (x.shape().size() != 3 || x.shape()[2] != d) {
        throw ShapeError("non_local", x.shape(), Shape{0, 0, d});
    }
    auto& b = ctx.bind;
    ad::Variable th = ad::matmul(x, b(p.theta), true);
    ad::Variable ph = ad::matmul(x, b(p.phi), true);
    ad::Variable gx = ad::matmul(x, b(p.g), true);
    ad::Variable scores = ad::scale(ad::matmul(th, ph, true), 1.0 / std::sqrt(static_cast<double>(de)));
    ad::Variable attn = ad::masked_softmax(scores, Tensor{});
    ad::Variable y = ad::matmul(attn, gx);
    return ad::add(x, ad::matmul(y, b(p.w_z), true));
}

ad::Variable batch_norm(ForwardContext& ctx, const BatchNormState& s, const ad::Variable& x) {
    auto& b = ctx.bind;
    if (ctx.mode == Mode::eval) {
        return ad::batch_norm_eval(x, b(s.gamma), b(s.beta), s.running_mean, s.running_var, s.eps);
    }
    if (ctx.updates == nullptr) return ad::batch_norm_train(x, b(s.gamma), b(s.beta), s.eps);
    BatchNormUpdate u;
    u.target = &s;
    ad::Variable out = ad::batch_norm_train(x, b(s.gamma), b(s.beta), s.eps, &u.stats);
    ctx.updates->push_back(std::move(u));
    return out;
}

ad::Variable residual_block(ForwardContext& ctx, const ResidualBlockParams& p,
                            const ad::Variable& x, const GraphContext& g) {
    if (p.conv1.out_channels() != p.conv2.in_channels()) {
        throw ShapeError("residual_block", p.conv1.w_self.shape(), p.conv2.w_self.shape());
    }
    ad::Variable h = ad::relu(batch_norm(ctx, p.bn1, gconv(ctx, p.conv1, x, g)));
    h = ad::relu(batch_norm(ctx, p.bn2, gconv(ctx, p.conv2, h, g)));
    return non_local(ctx, p.nonlocal, ad::add(x, h));
}

ad::Variable scale_transfer(ForwardContext& ctx, const ScaleTransferParams& p,
                            const ad::Variable& x) {
    const Shape& s = x.shape();
    if (s.size() != 3 || s[1] != p.node_map.dim(1)) {
        throw ShapeError("scale_transfer", s, p.node_map.shape());
    }
    ad::Variable out = ad::matmul(ctx.bind(p.node_map), x);
    if (!p.channel_map.empty()) out = ad::matmul(out, ctx.bind(p.channel_map), true);
    return out;
}

ad::Variable transfer_term(ForwardContext& ctx, const ScaleTransferParams& p, const ad::Variable& x) {
    ad::Variable y = scale_transfer(ctx, p, x);
    return p.bn ? batch_norm(ctx, *p.bn, y) : y;
}

std::vector<ad::Variable> fuse(ForwardContext& ctx, const TransferGrid& transfers,
                               const std::vector<std::size_t>& scales,
                               const std::vector<ad::Variable>& xs) {
    if (scales.size() != xs.size()) {
        throw std::invalid_argument("fuse: " + std::to_string(xs.size()) + " inputs but " +
                                    std::to_string(scales.size()) + " scale ids");
    }
    std::vector<ad::Variable> out;
    out.reserve(xs.size());
    for (std::size_t k = 0; k < xs.size(); ++k) {
        ad::Variable y = xs[k];
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (i == k) continue;
            auto it = transfers.find({scales[i], scales[k]});
            if (it == transfers.end()) {
                throw std::invalid_argument("fuse: missing transfer " + std::to_string(scales[i]) +
                                            "->" + std::to_string(scales[k]));
            }
            y = ad::add(y, transfer_term(ctx, it->second, xs[i]));
        }
        out.push_back(y);
    }
    return out;
}

}  // namespace hgn
