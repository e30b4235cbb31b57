#include "hgn/model.hpp"

#include <stdexcept>

#include "hgn/skeleton.hpp"

namespace hgn {

const char* to_string(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_top: return "no_top";
        case Variant::no_mid_coarsest: return "no_mid_coarsest";
        case Variant::baseline: return "baseline";
    }
    return "?";
}

Variant parse_variant(std::string_view s) {
    if (s == "full") return Variant::full;
    if (s == "no_top") return Variant::no_top;
    if (s == "no_mid_coarsest") return Variant::no_mid_coarsest;
    if (s == "baseline" || s == "baseline_single_scale") return Variant::baseline;
    throw std::invalid_argument("unknown variant '" + std::string(s) +
                                "' (expected full, no_top, no_mid_coarsest or baseline)");
}

const char* to_string(HeadKind h) {
    switch (h) {
        case HeadKind::pose: return "pose";
        case HeadKind::mesh_mid: return "mesh_mid";
        case HeadKind::mesh_top: return "mesh_top";
    }
    return "?";
}

void HGNConfig::validate() const {
    if (channels < 8) {
        throw std::invalid_argument("channels must be >= 8, got " + std::to_string(channels));
    }
    if (blocks_per_scale.size() != 3) {
        throw std::invalid_argument("blocks_per_scale needs 3 entries");
    }
    const std::size_t stages = blocks_per_scale[0];
    if (stages == 0 || blocks_per_scale[1] != stages) {
        throw std::invalid_argument("skeleton and mid subnetworks must have the same, nonzero block count");
    }
    if (top_scale_join_stage < 1 || top_scale_join_stage > stages ||
        blocks_per_scale[2] != stages - top_scale_join_stage + 1) {
        throw std::invalid_argument("top subnetwork with " + std::to_string(blocks_per_scale[2]) +
                                    " blocks cannot join at stage " +
                                    std::to_string(top_scale_join_stage) + " of " +
                                    std::to_string(stages));
    }
}

namespace {

// Scales (skeleton first) and their schedule for a variant.
std::vector<ScaleSpec> scale_specs(const HGNConfig& c, const CoarseningHierarchy& h) {
    if (h.selected.size() != 2) {
        throw std::invalid_argument("model needs a hierarchy with 2 selected mesh levels, got " +
                                    std::to_string(h.selected.size()));
    }
    if (!c.scale_node_counts.empty()) {
        const std::vector<std::size_t> have{skeleton::kJoints, h.selected_size(1), h.selected_size(0)};
        if (c.scale_node_counts != have) {
            throw std::invalid_argument("scale_node_counts do not match the hierarchy (have 17, " +
                                        std::to_string(have[1]) + ", " + std::to_string(have[2]) +
                                        ")");
        }
    }
    const std::size_t stages = c.blocks_per_scale[0];
    std::vector<ScaleSpec> out;
    out.push_back({GraphContext(build_skeleton_graph()), HeadKind::pose, stages, 1});
    switch (c.variant) {
        case Variant::full:
            out.push_back({GraphContext(h.selected_graph(1)), HeadKind::mesh_mid, stages, 1});
            out.push_back({GraphContext(h.selected_graph(0)), HeadKind::mesh_top,
                           c.blocks_per_scale[2], c.top_scale_join_stage});
            break;
        case Variant::no_top:
            out.push_back({GraphContext(h.selected_graph(0)), HeadKind::mesh_top, stages, 1});
            break;
        case Variant::no_mid_coarsest:
            out.push_back({GraphContext(h.selected_graph(1)), HeadKind::mesh_mid, stages, 1});
            break;
        case Variant::baseline:
            break;
    }
    return out;
}

std::vector<std::size_t> active_at(const std::vector<ScaleSpec>& scales, std::size_t stage) {
    std::vector<std::size_t> a;
    for (std::size_t s = 0; s < scales.size(); ++s) {
        if (scales[s].join_stage <= stage) a.push_back(s);
    }
    return a;
}

// Scales feeding the initial features of scale s.
std::vector<std::size_t> seed_sources(const std::vector<ScaleSpec>& scales, std::size_t s) {
    std::vector<std::size_t> src;
    for (std::size_t i = 0; i < s; ++i) {
        if (scales[i].join_stage <= scales[s].join_stage) src.push_back(i);
    }
    return src;
}

std::string pair_name(std::size_t i, std::size_t k) {
    return std::to_string(i) + "to" + std::to_string(k);
}

}  // namespace

HGNParams build(const HGNConfig& config, const CoarseningHierarchy& hierarchy) {
    config.validate();
    HGNParams p;
    p.config = config;
    p.scales = scale_specs(config, hierarchy);
    p.n_stages = config.blocks_per_scale[0];
    const std::size_t d = config.channels;
    const GConvKind kind = config.gconv;
    std::mt19937_64 rng(config.seed);

    p.pre = make_gconv(kind, 2, d, skeleton::kJoints, rng);
    p.pre_bn = BatchNormState(d);
    p.blocks.resize(p.scales.size());
    for (std::size_t s = 0; s < p.scales.size(); ++s) {
        for (std::size_t b = 0; b < p.scales[s].blocks; ++b) {
            p.blocks[s].push_back(make_residual_block(kind, d, p.scales[s].graph.n_nodes(), rng));
        }
    }
    for (std::size_t s = 1; s < p.scales.size(); ++s) {
        for (std::size_t i : seed_sources(p.scales, s)) {
            p.seed[{i, s}] = make_transfer(p.scales[i].graph.n_nodes(), p.scales[s].graph.n_nodes(),
                                           d, config.transfer_channel_map, rng,
                                           config.transfer_batch_norm);
        }
    }
    p.fusion.resize(p.n_stages);
    for (std::size_t stage = 1; stage <= p.n_stages; ++stage) {
        const auto active = active_at(p.scales, stage);
        for (std::size_t k : active) {
            for (std::size_t i : active) {
                if (i == k) continue;
                p.fusion[stage - 1][{i, k}] =
                    make_transfer(p.scales[i].graph.n_nodes(), p.scales[k].graph.n_nodes(), d,
                                  config.transfer_channel_map, rng, config.transfer_batch_norm);
            }
        }
    }
    for (const auto& sc : p.scales) p.heads.push_back(make_gconv(kind, d, 3, sc.graph.n_nodes(), rng));
    return p;
}

HGNParams build_ablation(HGNConfig config, Variant variant, const CoarseningHierarchy& hierarchy) {
    config.variant = variant;
    return build(config, hierarchy);
}

std::vector<ParamRef> HGNParams::parameters() {
    std::vector<ParamRef> out;
    collect_params("pre", pre, scales.at(0).graph, out);
    collect_params("pre_bn", pre_bn, out);
    for (std::size_t s = 0; s < blocks.size(); ++s) {
        for (std::size_t b = 0; b < blocks[s].size(); ++b) {
            collect_params("s" + std::to_string(s) + ".block" + std::to_string(b), blocks[s][b],
                           scales[s].graph, out);
        }
    }
    for (auto& [key, t] : seed) collect_params("seed." + pair_name(key.first, key.second), t, out);
    for (std::size_t st = 0; st < fusion.size(); ++st) {
        for (auto& [key, t] : fusion[st]) {
            collect_params("fuse" + std::to_string(st + 1) + "." + pair_name(key.first, key.second),
                           t, out);
        }
    }
    for (std::size_t s = 0; s < heads.size(); ++s) {
        collect_params(std::string("head.") + to_string(scales[s].head), heads[s], scales[s].graph,
                       out);
    }
    return out;
}

std::vector<BatchNormState*> HGNParams::batch_norms() {
    std::vector<BatchNormState*> out{&pre_bn};
    for (auto& per_scale : blocks) {
        for (auto& b : per_scale) {
            out.push_back(&b.bn1);
            out.push_back(&b.bn2);
        }
    }
    for (auto& [_, t] : seed) {
        if (t.bn) out.push_back(&*t.bn);
    }
    for (auto& grid : fusion) {
        for (auto& [_, t] : grid) {
            if (t.bn) out.push_back(&*t.bn);
        }
    }
    return out;
}

std::vector<std::string> HGNParams::batch_norm_names() const {
    std::vector<std::string> out{"pre_bn"};
    for (std::size_t s = 0; s < blocks.size(); ++s) {
        for (std::size_t b = 0; b < blocks[s].size(); ++b) {
            const std::string base = "s" + std::to_string(s) + ".block" + std::to_string(b);
            out.push_back(base + ".bn1");
            out.push_back(base + ".bn2");
        }
    }
    for (const auto& [key, t] : seed) {
        if (t.bn) out.push_back("seed." + pair_name(key.first, key.second) + ".bn");
    }
    for (std::size_t st = 0; st < fusion.size(); ++st) {
        for (const auto& [key, t] : fusion[st]) {
            if (t.bn) {
                out.push_back("fuse" + std::to_string(st + 1) + "." + pair_name(key.first, key.second) +
                              ".bn");
            }
        }
    }
    return out;
}

bool HGNParams::has_head(HeadKind h) const {
    for (const auto& s : scales) {
        if (s.head == h) return true;
    }
    return false;
}

std::size_t HGNParams::scale_of(HeadKind h) const {
    for (std::size_t s = 0; s < scales.size(); ++s) {
        if (scales[s].head == h) return s;
    }
    throw std::invalid_argument(std::string("model has no ") + to_string(h) + " head");
}

std::size_t param_count(HGNParams& params) {
    std::size_t n = 0;
    for (const auto& r : params.parameters()) n += r.learnable;
    return n;
}

std::size_t param_count(const HGNParams& params) {
    return param_count(const_cast<HGNParams&>(params));
}

ModelOutputs forward(ForwardContext& ctx, const HGNParams& p, const ad::Variable& x2d) {
    const Shape& s = x2d.shape();
    if (s.size() != 3 || s[1] != skeleton::kJoints || s[2] != 2) {
        throw ShapeError("forward (x2d)", s, Shape{s.empty() ? 0 : s[0], skeleton::kJoints, 2});
    }
    const std::size_t n_scales = p.scales.size();
    std::vector<ad::Variable> feats(n_scales);
    feats[0] = ad::relu(batch_norm(ctx, p.pre_bn, gconv(ctx, p.pre, x2d, p.scales[0].graph)));

    for (std::size_t stage = 1; stage <= p.n_stages; ++stage) {
        for (std::size_t k = 1; k < n_scales; ++k) {
            if (p.scales[k].join_stage != stage) continue;
            ad::Variable init;
            for (std::size_t i : seed_sources(p.scales, k)) {
                ad::Variable t = transfer_term(ctx, p.seed.at({i, k}), feats[i]);
                init = init.valid() ? ad::add(init, t) : t;
            }
            feats[k] = init;
        }
        const auto active = active_at(p.scales, stage);
        for (std::size_t k : active) {
            const std::size_t b = stage - p.scales[k].join_stage;
            feats[k] = residual_block(ctx, p.blocks[k].at(b), feats[k], p.scales[k].graph);
        }
        if (active.size() > 1) {
            std::vector<ad::Variable> xs;
            for (std::size_t k : active) xs.push_back(feats[k]);
            auto ys = fuse(ctx, p.fusion[stage - 1], active, xs);
            for (std::size_t j = 0; j < active.size(); ++j) feats[active[j]] = ys[j];
        }
    }

    ModelOutputs out;
    for (std::size_t k = 0; k < n_scales; ++k) {
        ad::Variable y = gconv(ctx, p.heads[k], feats[k], p.scales[k].graph);
        switch (p.scales[k].head) {
            case HeadKind::pose: out.pose = y; break;
            case HeadKind::mesh_mid: out.mesh_mid = y; break;
            case HeadKind::mesh_top: out.mesh_top = y; break;
        }
    }
    return out;
}

Prediction predict(const HGNParams& params, const Tensor& x2d) {
    ad::Tape tape;
    ParamBinder bind(tape, false);
    ForwardContext ctx{bind, Mode::eval, nullptr};
    ModelOutputs o = forward(ctx, params, tape.constant(x2d));
    Prediction pr;
    pr.pose = o.pose.value();
    if (o.mesh_mid) pr.mesh_mid = o.mesh_mid->value();
    if (o.mesh_top) pr.mesh_top = o.mesh_top->value();
    return pr;
}

}  // namespace hgn
