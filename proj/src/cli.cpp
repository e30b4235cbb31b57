#include "hgn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "hgn/body_mesh.hpp"
#include "hgn/checkpoint.hpp"
#include "hgn/graph.hpp"
#include "hgn/metrics.hpp"
#include "hgn/skeleton.hpp"

namespace hgn::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

std::string fmt(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class T>
std::string join(const T& xs) {
    std::string out;
    for (const auto& x : xs) {
        if (!out.empty()) out += ',';
        if constexpr (std::is_floating_point_v<std::decay_t<decltype(x)>>) {
            out += fmt(x);
        } else if constexpr (std::is_arithmetic_v<std::decay_t<decltype(x)>>) {
            out += std::to_string(x);
        } else {
            out += x;
        }
    }
    return out;
}

std::string angle_key(std::size_t bone) {
    return "angle_range." + std::string(skeleton::kJointNames[skeleton::bone_parent(bone)]) + "-" +
           std::string(skeleton::kJointNames[skeleton::bone_child(bone)]);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const char* b = text.data();
    const char* e = b + text.size();
    const auto r = std::from_chars(b, e, v);
    if (text.empty() || r.ec != std::errc() || r.ptr != e) {
        throw ConfigError(key + ": expected a number, got '" + text + "'");
    }
    return v;
}

void write_text(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << content;
    if (!f) throw std::runtime_error("write to " + path.string() + " failed");
}

std::string echo_comment(const RunConfig& cfg) { return "# config " + cfg.echo().dump() + "\n"; }

CoarseningHierarchy load_hierarchy(const RunConfig& cfg) {
    const fs::path path = fs::path(cfg.str("hierarchy")) / "hierarchy.json";
    std::ifstream f(path);
    if (!f) throw ConfigError("no hierarchy at " + path.string() + " (run coarsen first)");
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    try {
        return hierarchy_from_json(j.at("hierarchy"));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const CheckpointFormatError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

// Reference sizes quoted next to the counts.
std::string reference_count(Variant v, std::size_t channels, GConvKind kind) {
    if (v == Variant::full && channels == 128 && kind == GConvKind::semantic) return "1.04M";
    if (v == Variant::full && channels == 64 && kind == GConvKind::semantic) return "0.29M";
    if (v == Variant::full && channels == 128 && kind == GConvKind::vanilla) return "0.71M";
    if (v == Variant::baseline && channels == 128 && kind == GConvKind::semantic) return "0.43M";
    return "-";
}

}  // namespace

// ------------------------------------------------------------------ RunConfig

RunConfig::RunConfig() {
    const SyntheticGenConfig g;
    const HGNConfig m;
    const TrainConfig t;
    const EvalOptions e;
    values_ = {
        {"seed", "0"},
        // paths
        {"graph", ""},
        {"hierarchy", "hierarchy"},
        {"dataset", "dataset.jsonl"},
        {"checkpoint", "model.ckpt"},
        {"report", "train_report.jsonl"},
        {"eval_dir", "eval"},
        // coarsening
        {"targets", "96,48"},
        {"match_score", "normalized_cut"},
        // data
        {"n_samples", std::to_string(g.n_samples)},
        {"bone_length_mm", join(g.bone_length_mm)},
        {"yaw_lo", fmt(g.yaw_lo)},
        {"yaw_hi", fmt(g.yaw_hi)},
        {"focal_length", fmt(g.focal_length)},
        {"distance_lo_mm", fmt(g.distance_lo_mm)},
        {"distance_hi_mm", fmt(g.distance_hi_mm)},
        {"noise_std_2d", fmt(g.noise_std_2d)},
        {"n_mesh_vertices", std::to_string(g.n_mesh_vertices)},
        {"mesh_seed", std::to_string(g.mesh_seed)},
        {"actions", join(g.actions)},
        {"subject_scale", join(g.subject_scale)},
        // model
        {"variant", to_string(m.variant)},
        {"gconv", to_string(m.gconv)},
        {"channels", std::to_string(m.channels)},
        {"blocks_per_scale", join(m.blocks_per_scale)},
        {"top_scale_join_stage", std::to_string(m.top_scale_join_stage)},
        {"transfer_channel_map", m.transfer_channel_map ? "true" : "false"},
        {"transfer_batch_norm", m.transfer_batch_norm ? "true" : "false"},
        // training
        {"epochs", std::to_string(t.epochs)},
        {"batch_size", std::to_string(t.batch_size)},
        {"lr", fmt(t.base_lr)},
        {"lr_decay", fmt(t.lr_decay)},
        {"lr_decay_every", std::to_string(t.lr_decay_every)},
        {"lr_schedule", "step"},
        {"max_norm", fmt(t.max_norm)},
        {"flip_augment", t.flip_augment ? "true" : "false"},
        {"flip_probability", fmt(t.flip_probability)},
        {"lambda_p", fmt(t.loss.lambda_p)},
        {"lambda_m", fmt(t.loss.lambda_m)},
        {"val_fraction", fmt(t.val_fraction)},
        {"track_train_mpjpe", t.track_train_mpjpe ? "true" : "false"},
        {"report_wall_time", t.report_wall_time ? "true" : "false"},
        {"trainable_prefixes", ""},
        // evaluation
        {"flip_eval", e.flip_eval ? "true" : "false"},
        {"pa_with_scale", e.pa_with_scale ? "true" : "false"},
        {"eval_batch_size", std::to_string(e.batch_size)},
        {"pck_threshold_mm", fmt(e.pck.threshold_mm)},
        {"auc_lo_mm", fmt(e.pck.auc_lo_mm)},
        {"auc_hi_mm", fmt(e.pck.auc_hi_mm)},
        {"auc_steps", std::to_string(e.pck.auc_steps)},
        // param-count
        {"variants", "full,no_top,no_mid_coarsest,baseline"},
    };
    for (std::size_t b = 0; b < skeleton::kBones; ++b) {
        const AngleRange& r = g.angle_range[b];
        values_[angle_key(b)] = join(std::vector<double>{r.lo[0], r.lo[1], r.lo[2], r.hi[0], r.hi[1], r.hi[2]});
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
    it->second = trim(value);
}

void RunConfig::merge(std::istream& is) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string body = trim(line.substr(0, line.find('#')));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ParseError(lineno, "expected 'key = value', got '" + body + "'");
        const std::string key = trim(body.substr(0, eq));
        if (key.empty()) throw ParseError(lineno, "empty key");
        if (!values_.contains(key)) {
            throw ConfigError("line " + std::to_string(lineno) + ": unknown config key '" + key + "'");
        }
        values_[key] = trim(body.substr(eq + 1));
    }
}

void RunConfig::merge_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    try {
        merge(f);
    } catch (const ParseError& e) {
        throw ConfigError(path + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

const std::string& RunConfig::str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::logic_error("RunConfig: no key " + key);
    return it->second;
}

std::size_t RunConfig::size(const std::string& key) const { return parse_number<std::size_t>(key, str(key)); }
std::uint64_t RunConfig::u64(const std::string& key) const { return parse_number<std::uint64_t>(key, str(key)); }
double RunConfig::real(const std::string& key) const { return parse_number<double>(key, str(key)); }

bool RunConfig::flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> RunConfig::sizes(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& w : split_list(str(key))) out.push_back(parse_number<std::size_t>(key, w));
    return out;
}

std::vector<double> RunConfig::reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& w : split_list(str(key))) out.push_back(parse_number<double>(key, w));
    return out;
}

std::vector<std::string> RunConfig::words(const std::string& key) const { return split_list(str(key)); }

json RunConfig::echo() const { return json(values_); }

std::string RunConfig::text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

HGNConfig RunConfig::model_config() const {
    HGNConfig m;
    try {
        m.variant = parse_variant(str("variant"));
        m.gconv = parse_gconv_kind(str("gconv"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    m.channels = size("channels");
    m.blocks_per_scale = sizes("blocks_per_scale");
    m.top_scale_join_stage = size("top_scale_join_stage");
    m.transfer_channel_map = flag("transfer_channel_map");
    m.transfer_batch_norm = flag("transfer_batch_norm");
    m.seed = u64("seed");
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return m;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.epochs = size("epochs");
    t.batch_size = size("batch_size");
    t.base_lr = real("lr");
    t.lr_decay = real("lr_decay");
    t.lr_decay_every = size("lr_decay_every");
    const std::string& sched = str("lr_schedule");
    if (sched == "step") {
        t.decay_kind = LrDecay::step;
    } else if (sched == "exponential") {
        t.decay_kind = LrDecay::exponential;
    } else {
        throw ConfigError("lr_schedule: expected step or exponential, got '" + sched + "'");
    }
    t.max_norm = real("max_norm");
    t.flip_augment = flag("flip_augment");
    t.flip_probability = real("flip_probability");
    t.loss.lambda_p = real("lambda_p");
    t.loss.lambda_m = real("lambda_m");
    t.val_fraction = real("val_fraction");
    t.track_train_mpjpe = flag("track_train_mpjpe");
    t.report_wall_time = flag("report_wall_time");
    t.trainable_prefixes = words("trainable_prefixes");
    t.seed = u64("seed");
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return t;
}

SyntheticGenConfig RunConfig::gen_config() const {
    SyntheticGenConfig g;
    g.n_samples = size("n_samples");
    g.seed = u64("seed");
    const auto bones = reals("bone_length_mm");
    if (bones.size() != skeleton::kBones) {
        throw ConfigError("bone_length_mm: expected " + std::to_string(skeleton::kBones) + " values, got " +
                          std::to_string(bones.size()));
    }
    std::copy(bones.begin(), bones.end(), g.bone_length_mm.begin());
    for (std::size_t b = 0; b < skeleton::kBones; ++b) {
        const auto r = reals(angle_key(b));
        if (r.size() != 6) throw ConfigError(angle_key(b) + ": expected lo_x,lo_y,lo_z,hi_x,hi_y,hi_z");
        g.angle_range[b].lo = {r[0], r[1], r[2]};
        g.angle_range[b].hi = {r[3], r[4], r[5]};
    }
    g.yaw_lo = real("yaw_lo");
    g.yaw_hi = real("yaw_hi");
    g.focal_length = real("focal_length");
    g.distance_lo_mm = real("distance_lo_mm");
    g.distance_hi_mm = real("distance_hi_mm");
    g.noise_std_2d = real("noise_std_2d");
    g.n_mesh_vertices = size("n_mesh_vertices");
    g.mesh_seed = u64("mesh_seed");
    g.actions = words("actions");
    g.subject_scale = reals("subject_scale");
    try {
        g.validate();
    } catch (const DatasetError& e) {
        throw ConfigError(e.what());
    }
    return g;
}

EvalOptions RunConfig::eval_options() const {
    EvalOptions e;
    e.flip_eval = flag("flip_eval");
    e.pa_with_scale = flag("pa_with_scale");
    e.batch_size = size("eval_batch_size");
    e.pck.threshold_mm = real("pck_threshold_mm");
    e.pck.auc_lo_mm = real("auc_lo_mm");
    e.pck.auc_hi_mm = real("auc_hi_mm");
    e.pck.auc_steps = size("auc_steps");
    if (e.batch_size == 0) throw ConfigError("eval_batch_size must be >= 1");
    if (e.pck.auc_steps < 2 || !(e.pck.auc_hi_mm > e.pck.auc_lo_mm)) {
        throw ConfigError("AUC grid needs auc_steps >= 2 and auc_hi_mm > auc_lo_mm");
    }
    return e;
}

// ------------------------------------------------------------------ commands

int cmd_coarsen(const RunConfig& cfg, std::ostream& out) {
    const auto targets = cfg.sizes("targets");
    if (targets.empty()) throw UsageError("targets: at least one target size is required");
    for (std::size_t k = 1; k < targets.size(); ++k) {
        if (targets[k] >= targets[k - 1]) throw UsageError("targets must be strictly decreasing (finest first)");
    }
    MatchScore score;
    if (cfg.str("match_score") == "normalized_cut") {
        score = MatchScore::normalized_cut;
    } else if (cfg.str("match_score") == "weight") {
        score = MatchScore::weight;
    } else {
        throw ConfigError("match_score: expected normalized_cut or weight");
    }

    Graph source;
    if (cfg.str("graph").empty()) {
        source = build_synthetic_body_mesh(cfg.size("n_mesh_vertices"), cfg.u64("mesh_seed")).graph;
    } else {
        std::ifstream f(cfg.str("graph"));
        if (!f) throw ConfigError("cannot read graph " + cfg.str("graph"));
        source = read_edge_list(f);
    }
    const CoarseningHierarchy h = build_hierarchy(source, targets, cfg.u64("seed"), score);

    const fs::path dir = cfg.str("hierarchy");
    fs::create_directories(dir);
    const std::string note = echo_comment(cfg);
    json levels = json::array();
    std::size_t prev = source.n_nodes();
    for (std::size_t l = 0; l < h.levels.size(); ++l) {
        const Graph& g = h.levels[l].graph;
        std::ostringstream edges, map;
        edges << note;
        write_edge_list(edges, g);
        map << note;
        write_cluster_map(map, h.levels[l].cluster_map);
        write_text(dir / ("level_" + std::to_string(l + 1) + ".edges"), edges.str());
        write_text(dir / ("level_" + std::to_string(l + 1) + ".map"), map.str());
        levels.push_back({{"level", l + 1},
                          {"nodes", g.n_nodes()},
                          {"edges", g.edges().size()},
                          {"ratio", static_cast<double>(g.n_nodes()) / static_cast<double>(prev)},
                          {"connected", g.connected()}});
        prev = g.n_nodes();
    }
    json selected = json::array();
    for (std::size_t k = 0; k < h.selected.size(); ++k) {
        selected.push_back({{"target", h.targets[k]}, {"level", h.selected[k] + 1}, {"nodes", h.selected_size(k)}});
    }
    const std::string checksum = hex64(hierarchy_checksum(h));
    json summary{{"config", cfg.echo()},
                 {"source_nodes", source.n_nodes()},
                 {"source_edges", source.edges().size()},
                 {"levels", levels},
                 {"selected", selected},
                 {"checksum", checksum}};
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    write_text(dir / "hierarchy.json", json{{"config", cfg.echo()}, {"hierarchy", to_json(h)}}.dump() + "\n");

    out << "source " << source.n_nodes() << " nodes, " << source.edges().size() << " edges\n";
    for (const auto& l : levels) {
        out << "level " << l["level"] << ": " << l["nodes"] << " nodes (ratio " << std::fixed << std::setprecision(3)
            << l["ratio"].get<double>() << std::defaultfloat << ")\n";
    }
    for (const auto& s : selected) {
        out << "target " << s["target"] << " -> level " << s["level"] << " with " << s["nodes"] << " nodes\n";
    }
    out << "checksum " << checksum << "\n";
    return kOk;
}

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
    const SyntheticGenConfig g = cfg.gen_config();
    std::optional<CoarseningHierarchy> h;
    if (g.n_mesh_vertices > 0) h = load_hierarchy(cfg);
    Dataset ds;
    try {
        ds = generate_synthetic(g, h ? &*h : nullptr);
    } catch (const DatasetError& e) {
        throw ConfigError(e.what());
    }
    ds.meta["config"] = cfg.echo();
    const fs::path path = cfg.str("dataset");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    save_dataset(ds, path.string());
    out << "samples " << ds.size() << "\n";
    out << "checksum " << hex64(dataset_checksum(ds)) << "\n";
    return kOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
    const HGNConfig mc = cfg.model_config();
    const TrainConfig tc = cfg.train_config();
    const CoarseningHierarchy h = load_hierarchy(cfg);
    const Dataset ds = load_dataset(cfg.str("dataset"));
    if (const auto want = ds.hierarchy_checksum(); want && *want != hierarchy_checksum(h)) {
        throw CompatibilityError("dataset " + cfg.str("dataset") + " was generated on hierarchy " + hex64(*want) +
                                 ", not on " + hex64(hierarchy_checksum(h)));
    }
    HGNParams model = build(mc, h);

    const fs::path report_path = cfg.str("report");
    if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
    std::ofstream report(report_path, std::ios::binary);
    if (!report) throw std::runtime_error("cannot open " + report_path.string() + " for writing");
    json head{{"config", cfg.echo()}, {"param_count", param_count(model)}};
    const TrainReport r = train(model, ds, tc, &report, head);
    report.close();

    const fs::path ckpt = cfg.str("checkpoint");
    if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
    save_checkpoint(ckpt.string(), model, h, &r.optimizer, cfg.echo());

    out << "params " << r.param_count << "\n";
    out << "train samples " << r.train_samples << ", validation samples " << r.val_samples << "\n";
    if (!r.epochs.empty()) {
        const EpochRecord& last = r.epochs.back();
        out << "epoch " << last.epoch << " loss " << last.train_loss;
        if (last.val_mpjpe_mm) out << " val_mpjpe_mm " << *last.val_mpjpe_mm;
        out << "\n";
    }
    out << "checkpoint " << ckpt.string() << "\nreport " << report_path.string() << "\n";
    return kOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
    const EvalOptions opts = cfg.eval_options();
    const Checkpoint ck = load_checkpoint(cfg.str("checkpoint"));
    const Dataset ds = load_dataset(cfg.str("dataset"));
    require_compatible(ck, ds);
    const EvalReport r = evaluate(ck.model, ds, opts);

    const fs::path dir = cfg.str("eval_dir");
    fs::create_directories(dir);
    json j = r.to_json();
    j["config"] = cfg.echo();
    j["checkpoint_config"] = ck.run_config;
    write_text(dir / "eval.json", j.dump(2) + "\n");
    const std::string note = echo_comment(cfg);
    write_text(dir / "per_joint.csv", note + per_joint_csv(r));
    write_text(dir / "per_action.csv", note + per_action_csv(r));
    std::string svg = breakdown_svg(r, "MPJPE by joint and action (mm)");
    const auto close = svg.find('>', svg.find("<svg"));
    std::string cfg_dump = cfg.echo().dump();
    for (std::size_t p = cfg_dump.find("--"); p != std::string::npos; p = cfg_dump.find("--", p)) cfg_dump.replace(p, 2, "- -");
    svg.insert(close + 1, "\n<!-- config " + cfg_dump + " -->");
    write_text(dir / "breakdown.svg", svg);

    out << std::fixed << std::setprecision(2);
    out << "samples " << r.samples << "\n";
    out << "mpjpe_mm " << r.mpjpe_mm << "\n";
    out << "pa_mpjpe_mm " << r.pa_mpjpe_mm << "\n";
    if (r.mpvpe_mid_mm) out << "mpvpe_mid_mm " << *r.mpvpe_mid_mm << "\n";
    if (r.mpvpe_top_mm) out << "mpvpe_top_mm " << *r.mpvpe_top_mm << "\n";
    if (r.pck_pct) out << "pck_pct " << *r.pck_pct << "\n";
    if (r.auc_pct) out << "auc_pct " << *r.auc_pct << "\n";
    out << std::defaultfloat << "written to " << dir.string() << "\n";
    return kOk;
}

int cmd_param_count(const RunConfig& cfg, std::ostream& out) {
    HGNConfig base = cfg.model_config();
    CoarseningHierarchy h;
    if (fs::exists(fs::path(cfg.str("hierarchy")) / "hierarchy.json")) {
        h = load_hierarchy(cfg);
    } else {
        const Graph mesh = build_synthetic_body_mesh(cfg.size("n_mesh_vertices"), cfg.u64("mesh_seed")).graph;
        h = build_hierarchy(mesh, cfg.sizes("targets"), cfg.u64("seed"));
    }
    out << echo_comment(cfg);
    out << std::left << std::setw(18) << "variant" << std::setw(10) << "channels" << std::setw(10) << "gconv"
        << std::setw(12) << "params" << "reference\n";
    for (const auto& name : cfg.words("variants")) {
        Variant v;
        try {
            v = parse_variant(name);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        const HGNParams p = build_ablation(base, v, h);
        out << std::setw(18) << to_string(v) << std::setw(10) << base.channels << std::setw(10)
            << to_string(base.gconv) << std::setw(12) << param_count(p)
            << reference_count(v, base.channels, base.gconv) << "\n";
    }
    return kOk;
}

// ------------------------------------------------------------------ driver

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hierarchical graph networks for 3D pose lifting"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    struct Flags {
        std::string config;
        std::vector<std::pair<std::string, std::string>> overrides;
    } flags;

    auto common = [&](CLI::App* sub, const std::string& out_key) {
        sub->add_option("--config", flags.config, "key = value configuration file");
        auto keyed = [&, sub](const std::string& flag, const std::string& key, const std::string& help) {
            sub->add_option_function<std::string>(
                flag, [&flags, key](const std::string& v) { flags.overrides.emplace_back(key, v); }, help);
        };
        keyed("--seed", "seed", "Random seed");
        keyed("--variant", "variant", "full, no_top, no_mid_coarsest or baseline");
        keyed("--gconv", "gconv", "semantic or vanilla");
        keyed("--channels", "channels", "Latent channels");
        keyed("--lambda-m", "lambda_m", "Mesh loss weight");
        keyed("--hierarchy", "hierarchy", "Hierarchy directory");
        keyed("--dataset", "dataset", "Dataset file");
        keyed("--checkpoint", "checkpoint", "Checkpoint file");
        keyed("--graph", "graph", "Input edge list (coarsen)");
        keyed("--targets", "targets", "Target level sizes, finest first (coarsen)");
        keyed("--out", out_key, "Output path");
        sub->add_flag_function(
            "--flip-eval", [&flags](std::int64_t) { flags.overrides.emplace_back("flip_eval", "true"); },
            "Average predictions with the mirrored input");
        sub->add_option_function<std::vector<std::string>>(
            "--set",
            [&flags](const std::vector<std::string>& kvs) {
                for (const auto& kv : kvs) {
                    const auto eq = kv.find('=');
                    if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got " + kv);
                    flags.overrides.emplace_back(trim(kv.substr(0, eq)), kv.substr(eq + 1));
                }
            },
            "Any config key, as key=value (repeatable)");
    };

    CLI::App* coarsen = app.add_subcommand("coarsen", "Coarsen a mesh graph into a hierarchy");
    CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    CLI::App* tr = app.add_subcommand("train", "Train a model");
    CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    CLI::App* pc = app.add_subcommand("param-count", "Parameter counts per variant");
    common(coarsen, "hierarchy");
    common(gen, "dataset");
    common(tr, "checkpoint");
    common(ev, "eval_dir");
    common(pc, "hierarchy");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kUsage;
    }

    try {
        RunConfig cfg;
        if (!flags.config.empty()) cfg.merge_file(flags.config);
        for (const auto& [k, v] : flags.overrides) cfg.set(k, v);

        if (coarsen->parsed()) return cmd_coarsen(cfg, out);
        if (gen->parsed()) return cmd_gen_data(cfg, out);
        if (tr->parsed()) return cmd_train(cfg, out);
        if (ev->parsed()) return cmd_eval(cfg, out);
        return cmd_param_count(cfg, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kParse;
    } catch (const ParseError& e) {
        err << "parse error: " << e.what() << "\n";
        return kParse;
    } catch (const DatasetError& e) {
        err << "dataset error: " << e.what() << "\n";
        return kParse;
    } catch (const CheckpointFormatError& e) {
        err << "checkpoint error: " << e.what() << "\n";
        return kParse;
    } catch (const CoarseningError& e) {
        err << "coarsening error: " << e.what() << "\n";
        return kCoarsening;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const CompatibilityError& e) {
        err << "incompatible inputs: " << e.what() << "\n";
        return kCompatibility;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace hgn::cli
