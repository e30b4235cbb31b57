#include "hgn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace hgn {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'H', 'G', 'N', 'C', 'K', 'P', 'T', '1'};
constexpr int kVersion = 1;
constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(std::uint64_t h, std::string_view bytes) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xffU));
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + k])) << (8 * k);
    return v;
}

json shape_json(const Tensor& t) { return json(t.shape()); }

struct NamedTensor {
    std::string name;
    const Tensor* tensor = nullptr;
    Tensor owned;  // for running statistics stored as vectors
};

std::vector<NamedTensor> model_tensors(const HGNParams& model) {
    std::vector<NamedTensor> out;
    for (const auto& r : const_cast<HGNParams&>(model).parameters()) out.push_back({r.name, r.value, {}});
    const auto names = model.batch_norm_names();
    const auto bns = const_cast<HGNParams&>(model).batch_norms();
    for (std::size_t k = 0; k < bns.size(); ++k) {
        const auto& bn = *bns[k];
        NamedTensor m{names[k] + ".running_mean", nullptr, Tensor({bn.running_mean.size()}, bn.running_mean)};
        NamedTensor v{names[k] + ".running_var", nullptr, Tensor({bn.running_var.size()}, bn.running_var)};
        out.push_back(std::move(m));
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace

// ------------------------------------------------------------------ json

json to_json(const HGNConfig& c) {
    return json{{"channels", c.channels},
                {"gconv", to_string(c.gconv)},
                {"blocks_per_scale", c.blocks_per_scale},
                {"scale_node_counts", c.scale_node_counts},
                {"top_scale_join_stage", c.top_scale_join_stage},
                {"transfer_channel_map", c.transfer_channel_map},
                {"transfer_batch_norm", c.transfer_batch_norm},
                {"variant", to_string(c.variant)},
                {"seed", c.seed}};
}

HGNConfig hgn_config_from_json(const json& j) {
    HGNConfig c;
    c.channels = j.at("channels").get<std::size_t>();
    c.gconv = parse_gconv_kind(j.at("gconv").get<std::string>());
    c.blocks_per_scale = j.at("blocks_per_scale").get<std::vector<std::size_t>>();
    c.scale_node_counts = j.at("scale_node_counts").get<std::vector<std::size_t>>();
    c.top_scale_join_stage = j.at("top_scale_join_stage").get<std::size_t>();
    c.transfer_channel_map = j.at("transfer_channel_map").get<bool>();
    c.transfer_batch_norm = j.at("transfer_batch_norm").get<bool>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

json to_json(const Graph& g) {
    json edges = json::array();
    for (const auto& e : g.edges()) edges.push_back(json::array({e.i, e.j, e.w}));
    json j{{"nodes", g.n_nodes()}, {"edges", std::move(edges)}};
    if (!g.node_names().empty()) j["names"] = g.node_names();
    return j;
}

Graph graph_from_json(const json& j) {
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
        edges.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(), e.at(2).get<double>()});
    }
    std::vector<std::string> names;
    if (j.contains("names")) names = j["names"].get<std::vector<std::string>>();
    return Graph(j.at("nodes").get<std::size_t>(), std::move(edges), std::move(names));
}

json to_json(const CoarseningHierarchy& h) {
    json levels = json::array();
    for (const auto& l : h.levels) levels.push_back({{"graph", to_json(l.graph)}, {"cluster_map", l.cluster_map}});
    return json{{"source", to_json(h.source)},
                {"levels", std::move(levels)},
                {"targets", h.targets},
                {"selected", h.selected},
                {"checksum", hex64(hierarchy_checksum(h))}};
}

CoarseningHierarchy hierarchy_from_json(const json& j) {
    CoarseningHierarchy h;
    h.source = graph_from_json(j.at("source"));
    for (const auto& l : j.at("levels")) {
        h.levels.push_back({graph_from_json(l.at("graph")), l.at("cluster_map").get<std::vector<std::size_t>>()});
    }
    h.targets = j.at("targets").get<std::vector<std::size_t>>();
    h.selected = j.at("selected").get<std::vector<std::size_t>>();
    for (auto s : h.selected) {
        if (s >= h.levels.size()) throw CheckpointFormatError("hierarchy: selected level out of range");
        h.composed.push_back(h.composed_map(s));
    }
    const std::string want = j.at("checksum").get<std::string>();
    const std::string got = hex64(hierarchy_checksum(h));
    if (want != got) {
        throw CheckpointFormatError("hierarchy checksum " + got + " does not match recorded " + want);
    }
    return h;
}

// ------------------------------------------------------------------ save

void save_checkpoint(std::ostream& os, const HGNParams& model, const CoarseningHierarchy& hierarchy,
                     const AdamState* optimizer, const json& run_config) {
    std::vector<NamedTensor> tensors = model_tensors(model);
    if (optimizer != nullptr) {
        for (const auto& [name, mom] : optimizer->moments) {
            tensors.push_back({"adam.m." + name, &mom.m, {}});
            tensors.push_back({"adam.v." + name, &mom.v, {}});
        }
    }
    json listing = json::array();
    for (const auto& t : tensors) {
        const Tensor& v = t.tensor != nullptr ? *t.tensor : t.owned;
        listing.push_back({{"name", t.name}, {"shape", shape_json(v)}});
    }
    json header{{"format", "hgn-checkpoint"},
                {"version", kVersion},
                {"model", to_json(model.config)},
                {"hierarchy", to_json(hierarchy)},
                {"run", run_config},
                {"tensors", std::move(listing)}};
    if (optimizer != nullptr) {
        header["optimizer"] = {{"kind", "adam"},
                               {"step", optimizer->step},
                               {"beta1", optimizer->beta1},
                               {"beta2", optimizer->beta2},
                               {"eps", optimizer->eps}};
    }
    const auto bn_names = model.batch_norm_names();
    const auto bns = const_cast<HGNParams&>(model).batch_norms();
    for (std::size_t k = 0; k < bns.size(); ++k) {
        header["batch_norm"][bn_names[k]] = {{"momentum", bns[k]->momentum}, {"eps", bns[k]->eps}};
    }

    std::string bytes(kMagic, sizeof kMagic);
    const std::string head = header.dump();
    put_u64(bytes, head.size());
    bytes += head;
    for (const auto& t : tensors) {
        const Tensor& v = t.tensor != nullptr ? *t.tensor : t.owned;
        for (double x : v.span()) put_u64(bytes, std::bit_cast<std::uint64_t>(x));
    }
    put_u64(bytes, fnv1a(kFnvOffset, bytes));
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("save_checkpoint: write failed");
}

void save_checkpoint(const std::string& path, const HGNParams& model, const CoarseningHierarchy& hierarchy,
                     const AdamState* optimizer, const json& run_config) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    save_checkpoint(f, model, hierarchy, optimizer, run_config);
}

// ------------------------------------------------------------------ load

Checkpoint load_checkpoint(std::istream& is) {
    const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof kMagic + 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw CheckpointFormatError("not a checkpoint (bad magic or too short)");
    }
    const std::size_t body = bytes.size() - 8;
    if (fnv1a(kFnvOffset, std::string_view(bytes).substr(0, body)) != get_u64(bytes, body)) {
        throw CheckpointFormatError("checkpoint digest mismatch (truncated or corrupt)");
    }
    const std::uint64_t head_len = get_u64(bytes, sizeof kMagic);
    std::size_t at = sizeof kMagic + 8;
    if (head_len > body - at) throw CheckpointFormatError("checkpoint header runs past the end");
    json header;
    try {
        header = json::parse(bytes.substr(at, head_len));
    } catch (const json::exception& e) {
        throw CheckpointFormatError(std::string("checkpoint header: ") + e.what());
    }
    at += head_len;
    if (header.value("format", "") != "hgn-checkpoint") throw CheckpointFormatError("not an hgn checkpoint");
    const int version = header.at("version").get<int>();
    if (version != kVersion) {
        throw CompatibilityError("checkpoint version " + std::to_string(version) + ", this build reads " +
                                 std::to_string(kVersion));
    }

    Checkpoint ck;
    try {
        ck.hierarchy = hierarchy_from_json(header.at("hierarchy"));
        ck.model = build(hgn_config_from_json(header.at("model")), ck.hierarchy);
        ck.run_config = header.at("run");

        std::map<std::string, Tensor> stored;
        for (const auto& t : header.at("tensors")) {
            Tensor v(t.at("shape").get<Shape>());
            if (v.size() > (body - at) / 8) throw CheckpointFormatError("tensor payload runs past the end");
            for (double& x : v.span()) {
                x = std::bit_cast<double>(get_u64(bytes, at));
                at += 8;
            }
            stored.emplace(t.at("name").get<std::string>(), std::move(v));
        }
        if (at != body) throw CheckpointFormatError("trailing bytes after tensor payload");

        auto take = [&](const std::string& name, const Shape& shape) -> Tensor {
            auto it = stored.find(name);
            if (it == stored.end()) throw CheckpointFormatError("checkpoint lacks tensor " + name);
            if (it->second.shape() != shape) throw CheckpointFormatError("tensor " + name + " has the wrong shape");
            Tensor t = std::move(it->second);
            stored.erase(it);
            return t;
        };
        for (auto& r : ck.model.parameters()) *r.value = take(r.name, r.value->shape());
        const auto names = ck.model.batch_norm_names();
        const auto bns = ck.model.batch_norms();
        for (std::size_t k = 0; k < bns.size(); ++k) {
            const Shape s{bns[k]->running_mean.size()};
            const Tensor m = take(names[k] + ".running_mean", s);
            const Tensor v = take(names[k] + ".running_var", s);
            bns[k]->running_mean.assign(m.span().begin(), m.span().end());
            bns[k]->running_var.assign(v.span().begin(), v.span().end());
            if (header.contains("batch_norm") && header["batch_norm"].contains(names[k])) {
                bns[k]->momentum = header["batch_norm"][names[k]].at("momentum").get<double>();
                bns[k]->eps = header["batch_norm"][names[k]].at("eps").get<double>();
            }
        }
        if (header.contains("optimizer")) {
            const json& o = header["optimizer"];
            AdamState a;
            a.step = o.at("step").get<std::size_t>();
            a.beta1 = o.at("beta1").get<double>();
            a.beta2 = o.at("beta2").get<double>();
            a.eps = o.at("eps").get<double>();
            for (auto& r : ck.model.parameters()) {
                if (!stored.contains("adam.m." + r.name)) continue;
                AdamState::Moments mom;
                mom.m = take("adam.m." + r.name, r.value->shape());
                mom.v = take("adam.v." + r.name, r.value->shape());
                a.moments.emplace(r.name, std::move(mom));
            }
            ck.optimizer = std::move(a);
        }
        if (!stored.empty()) throw CheckpointFormatError("unexpected tensor " + stored.begin()->first);
    } catch (const json::exception& e) {
        throw CheckpointFormatError(std::string("checkpoint header: ") + e.what());
    } catch (const GraphError& e) {
        throw CheckpointFormatError(std::string("checkpoint hierarchy: ") + e.what());
    }
    return ck;
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    return load_checkpoint(f);
}

void require_compatible(const Checkpoint& ckpt, const Dataset& ds) {
    const auto want = ds.hierarchy_checksum();
    if (!want) return;
    const std::uint64_t have = hierarchy_checksum(ckpt.hierarchy);
    if (*want != have) {
        throw CompatibilityError("dataset was generated on hierarchy " + hex64(*want) +
                                 " but the checkpoint was trained on " + hex64(have));
    }
}

}  // namespace hgn
