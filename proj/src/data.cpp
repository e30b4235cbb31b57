#include "hgn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "hgn/body_mesh.hpp"

namespace hgn {

using nlohmann::json;

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

Eigen::Matrix3d rot_x(double a) {
    return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()).toRotationMatrix();
}
Eigen::Matrix3d rot_y(double a) {
    return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitY()).toRotationMatrix();
}
Eigen::Matrix3d rot_z(double a) {
    return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

void set_range(std::array<AngleRange, skeleton::kBones>& r, std::size_t bone, int axis, double lo,
               double hi) {
    r[bone].lo[axis] = lo;
    r[bone].hi[axis] = hi;
}

json tensor_json(const Tensor& t) {
    json rows = json::array();
    const std::size_t n = t.dim(0), c = t.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < c; ++j) row.push_back(t.at(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Tensor tensor_from_json(const json& j, std::size_t cols, const char* field) {
    if (!j.is_array()) throw std::invalid_argument(std::string(field) + " is not an array");
    Tensor t({j.size(), cols});
    for (std::size_t i = 0; i < j.size(); ++i) {
        const json& row = j[i];
        if (!row.is_array() || row.size() != cols) {
            throw std::invalid_argument(std::string(field) + " row " + std::to_string(i) +
                                        " must have " + std::to_string(cols) + " numbers");
        }
        for (std::size_t k = 0; k < cols; ++k) {
            if (!row[k].is_number()) {
                throw std::invalid_argument(std::string(field) + " has a non-numeric entry");
            }
            t.at(i, k) = row[k].get<double>();
        }
    }
    if (!t.all_finite()) throw std::invalid_argument(std::string(field) + " is not finite");
    return t;
}

std::string sample_line(const PoseSample& s) {
    json j;
    j["joints2d"] = tensor_json(s.joints2d);
    j["joints3d"] = tensor_json(s.joints3d);
    if (s.mesh_mid) j["mesh_mid"] = tensor_json(*s.mesh_mid);
    if (s.mesh_top) j["mesh_top"] = tensor_json(*s.mesh_top);
    j["action"] = s.action;
    j["subject"] = s.subject;
    if (s.camera_distance_mm) j["camera_distance_mm"] = *s.camera_distance_mm;
    return j.dump();
}

PoseSample sample_from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("record is not a JSON object");
    for (const char* key : {"joints2d", "joints3d", "action", "subject"}) {
        if (!j.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
    }
    for (const auto& [key, _] : j.items()) {
        if (key != "joints2d" && key != "joints3d" && key != "mesh_mid" && key != "mesh_top" &&
            key != "action" && key != "subject" && key != "camera_distance_mm") {
            throw std::invalid_argument("unknown field '" + key + "'");
        }
    }
    PoseSample s;
    s.joints2d = tensor_from_json(j["joints2d"], 2, "joints2d");
    s.joints3d = tensor_from_json(j["joints3d"], 3, "joints3d");
    if (s.joints2d.dim(0) != skeleton::kJoints || s.joints3d.dim(0) != skeleton::kJoints) {
        throw std::invalid_argument("joints2d/joints3d need 17 rows");
    }
    if (j.contains("mesh_mid")) s.mesh_mid = tensor_from_json(j["mesh_mid"], 3, "mesh_mid");
    if (j.contains("mesh_top")) s.mesh_top = tensor_from_json(j["mesh_top"], 3, "mesh_top");
    s.action = j["action"].get<std::string>();
    s.subject = j["subject"].get<std::string>();
    if (j.contains("camera_distance_mm")) s.camera_distance_mm = j["camera_distance_mm"].get<double>();
    return s;
}

json range_json(const AngleRange& r) { return json{{"lo", r.lo}, {"hi", r.hi}}; }

}  // namespace

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

std::optional<std::uint64_t> Dataset::hierarchy_checksum() const {
    if (!meta.contains("hierarchy_checksum")) return std::nullopt;
    return std::stoull(meta["hierarchy_checksum"].get<std::string>(), nullptr, 16);
}

// ---------------------------------------------------------------- config

std::array<AngleRange, skeleton::kBones> default_angle_ranges() {
    std::array<AngleRange, skeleton::kBones> r{};
    // Legs: hip flexion is negative x (knee forward), knee flexion positive x.
    set_range(r, 1, 0, -1.4, 0.4);
    set_range(r, 1, 1, -0.3, 0.3);
    set_range(r, 1, 2, -0.5, 0.1);
    set_range(r, 2, 0, 0.0, 1.8);
    set_range(r, 4, 0, -1.4, 0.4);
    set_range(r, 4, 1, -0.3, 0.3);
    set_range(r, 4, 2, -0.1, 0.5);
    set_range(r, 5, 0, 0.0, 1.8);
    // Spine, thorax, neck, head.
    set_range(r, 6, 0, -0.2, 0.8);
    set_range(r, 6, 1, -0.4, 0.4);
    set_range(r, 6, 2, -0.3, 0.3);
    set_range(r, 7, 0, -0.2, 0.4);
    set_range(r, 7, 1, -0.3, 0.3);
    set_range(r, 7, 2, -0.2, 0.2);
    for (std::size_t b : {8, 9}) {
        set_range(r, b, 0, -0.3, 0.35);
        set_range(r, b, 1, -0.5, 0.5);
        set_range(r, b, 2, -0.2, 0.2);
    }
    // Arms: clavicles barely move; upper arm raise is negative x, abduction
    // is +z on the left and -z on the right; elbows flex with negative x.
    for (std::size_t b : {10, 13}) {
        set_range(r, b, 1, -0.2, 0.2);
        set_range(r, b, 2, -0.15, 0.15);
    }
    set_range(r, 11, 0, -2.5, 0.6);
    set_range(r, 11, 1, -0.5, 0.5);
    set_range(r, 11, 2, 0.0, 1.6);
    set_range(r, 14, 0, -2.5, 0.6);
    set_range(r, 14, 1, -0.5, 0.5);
    set_range(r, 14, 2, -1.6, 0.0);
    set_range(r, 12, 0, -2.2, 0.0);
    set_range(r, 15, 0, -2.2, 0.0);
    return r;
}

std::array<AngleRange, skeleton::kBones> action_angle_ranges(
    const std::array<AngleRange, skeleton::kBones>& base, const std::string& action) {
    auto r = base;
    auto legs = [&](double hip_lo, double hip_hi, double knee_lo, double knee_hi) {
        for (std::size_t b : {1, 4}) set_range(r, b, 0, hip_lo, hip_hi);
        for (std::size_t b : {2, 5}) set_range(r, b, 0, knee_lo, knee_hi);
    };
    auto arms = [&](double raise_lo, double raise_hi, double abduct, double elbow) {
        for (std::size_t b : {11, 14}) set_range(r, b, 0, raise_lo, raise_hi);
        set_range(r, 11, 2, 0.0, abduct);
        set_range(r, 14, 2, -abduct, 0.0);
        for (std::size_t b : {12, 15}) set_range(r, b, 0, -elbow, 0.0);
    };
    if (action == "standing") {
        legs(-0.2, 0.2, 0.0, 0.3);
        arms(-0.4, 0.3, 0.4, 0.8);
        set_range(r, 6, 0, -0.1, 0.2);
    } else if (action == "walking") {
        legs(-0.7, 0.4, 0.0, 1.0);
        arms(-0.6, 0.6, 0.3, 1.0);
        set_range(r, 6, 0, -0.1, 0.3);
    } else if (action == "reaching") {
        arms(-2.5, -0.8, 1.2, 1.0);
        set_range(r, 6, 0, 0.0, 0.6);
    } else if (action == "sitting") {
        legs(-1.8, -1.2, 1.2, 1.9);
        set_range(r, 6, 0, -0.1, 0.4);
    } else if (action == "bending") {
        legs(-0.3, 0.3, 0.0, 0.6);
        arms(-1.5, 0.2, 0.8, 1.2);
        set_range(r, 6, 0, 0.5, 1.1);
        set_range(r, 7, 0, 0.1, 0.5);
    } else {
        throw DatasetError("unknown action '" + action +
                           "' (known: standing, walking, reaching, sitting, bending)");
    }
    return r;
}

void SyntheticGenConfig::validate() const {
    if (n_samples == 0) throw DatasetError("n_samples must be positive");
    for (std::size_t b = 0; b < skeleton::kBones; ++b) {
        if (!(bone_length_mm[b] > 0.0)) {
            throw DatasetError("bone length " + std::to_string(b) + " must be positive");
        }
        for (int a = 0; a < 3; ++a) {
            if (!(angle_range[b].lo[a] <= angle_range[b].hi[a])) {
                throw DatasetError("angle range of bone " + std::to_string(b) + " is inverted");
            }
        }
    }
    if (!(yaw_lo <= yaw_hi)) throw DatasetError("yaw range is inverted");
    if (!(focal_length > 0.0)) throw DatasetError("focal_length must be positive");
    if (!(distance_lo_mm <= distance_hi_mm)) throw DatasetError("distance range is inverted");
    if (!(noise_std_2d >= 0.0)) throw DatasetError("noise_std_2d must be >= 0");
    if (actions.empty()) throw DatasetError("actions must not be empty");
    for (const auto& a : actions) action_angle_ranges(angle_range, a);
    if (subject_scale.empty()) throw DatasetError("subject_scale must not be empty");
    double max_scale = 0.0;
    for (double s : subject_scale) {
        if (!(s > 0.0)) throw DatasetError("subject scales must be positive");
        max_scale = std::max(max_scale, s);
    }
    // Longest pelvis-to-joint chain bounds how far any joint can get from
    // the pelvis; the whole body must stay in front of the camera.
    double reach = 0.0;
    for (std::size_t j = 1; j < skeleton::kJoints; ++j) {
        double len = 0.0;
        for (std::size_t k = j; k != skeleton::kPelvis; k = static_cast<std::size_t>(skeleton::kParent[k])) {
            len += bone_length_mm[k - 1];
        }
        reach = std::max(reach, len);
    }
    if (!(distance_lo_mm > reach * max_scale)) {
        throw DatasetError("distance_lo_mm " + std::to_string(distance_lo_mm) +
                           " does not keep the subject in front of the camera (reach " +
                           std::to_string(reach * max_scale) + " mm)");
    }
    if (n_mesh_vertices > 0 && n_mesh_vertices < 200) {
        throw DatasetError("n_mesh_vertices must be 0 or at least 200");
    }
}

json SyntheticGenConfig::to_json() const {
    json ranges = json::array();
    for (const auto& r : angle_range) ranges.push_back(range_json(r));
    return json{{"n_samples", n_samples},
                {"seed", seed},
                {"bone_length_mm", bone_length_mm},
                {"angle_range", ranges},
                {"yaw_lo", yaw_lo},
                {"yaw_hi", yaw_hi},
                {"focal_length", focal_length},
                {"distance_lo_mm", distance_lo_mm},
                {"distance_hi_mm", distance_hi_mm},
                {"noise_std_2d", noise_std_2d},
                {"n_mesh_vertices", n_mesh_vertices},
                {"mesh_seed", mesh_seed},
                {"actions", actions},
                {"subject_scale", subject_scale}};
}

SyntheticGenConfig SyntheticGenConfig::from_json(const json& j) {
    SyntheticGenConfig c;
    c.n_samples = j.at("n_samples").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.bone_length_mm = j.at("bone_length_mm").get<std::array<double, skeleton::kBones>>();
    const json& ranges = j.at("angle_range");
    if (ranges.size() != skeleton::kBones) throw DatasetError("angle_range needs 16 entries");
    for (std::size_t b = 0; b < skeleton::kBones; ++b) {
        c.angle_range[b].lo = ranges[b].at("lo").get<std::array<double, 3>>();
        c.angle_range[b].hi = ranges[b].at("hi").get<std::array<double, 3>>();
    }
    c.yaw_lo = j.at("yaw_lo").get<double>();
    c.yaw_hi = j.at("yaw_hi").get<double>();
    c.focal_length = j.at("focal_length").get<double>();
    c.distance_lo_mm = j.at("distance_lo_mm").get<double>();
    c.distance_hi_mm = j.at("distance_hi_mm").get<double>();
    c.noise_std_2d = j.at("noise_std_2d").get<double>();
    c.n_mesh_vertices = j.at("n_mesh_vertices").get<std::size_t>();
    c.mesh_seed = j.at("mesh_seed").get<std::uint64_t>();
    c.actions = j.at("actions").get<std::vector<std::string>>();
    c.subject_scale = j.at("subject_scale").get<std::vector<double>>();
    return c;
}

// ------------------------------------------------------------- geometry

Tensor forward_kinematics(const std::array<double, skeleton::kBones>& bone_length_mm,
                          const std::array<std::array<double, 3>, skeleton::kBones>& angles,
                          double yaw) {
    std::array<Eigen::Matrix3d, skeleton::kJoints> frame;
    std::array<Eigen::Vector3d, skeleton::kJoints> pos;
    frame[skeleton::kPelvis] = rot_y(yaw);
    pos[skeleton::kPelvis].setZero();
    // Parents precede children in the joint order.
    for (std::size_t b = 0; b < skeleton::kBones; ++b) {
        const std::size_t p = skeleton::bone_parent(b), c = skeleton::bone_child(b);
        frame[c] = frame[p] * rot_x(angles[b][0]) * rot_y(angles[b][1]) * rot_z(angles[b][2]);
        const auto& d = skeleton::kRestDirection[b];
        Eigen::Vector3d rest(d[0], d[1], d[2]);
        pos[c] = pos[p] + frame[c] * rest.normalized() * bone_length_mm[b];
    }
    Tensor out({skeleton::kJoints, 3});
    for (std::size_t j = 0; j < skeleton::kJoints; ++j) {
        for (int k = 0; k < 3; ++k) out.at(j, k) = pos[j][k];
    }
    return out;
}

Tensor project_joints(const Tensor& joints3d, double distance_mm) {
    if (joints3d.rank() != 2 || joints3d.dim(1) != 3) {
        throw ShapeError("project_joints", joints3d.shape(), Shape{joints3d.dim(0), 3});
    }
    Tensor out({joints3d.dim(0), 2});
    for (std::size_t j = 0; j < joints3d.dim(0); ++j) {
        const double depth = distance_mm + joints3d.at(j, 2);
        if (!(depth > 0.0)) throw DatasetError("joint behind the camera");
        const double s = distance_mm / depth / 1000.0;
        out.at(j, 0) = joints3d.at(j, 0) * s;
        out.at(j, 1) = joints3d.at(j, 1) * s;
    }
    return out;
}

Tensor root_center(const Tensor& joints3d) {
    Tensor out = joints3d;
    const std::size_t c = joints3d.dim(1);
    for (std::size_t j = 0; j < joints3d.dim(0); ++j) {
        for (std::size_t k = 0; k < c; ++k) {
            out.at(j, k) = joints3d.at(j, k) - joints3d.at(skeleton::kPelvis, k);
        }
    }
    return out;
}

std::pair<Tensor, Tensor> make_pseudo_gt(const Tensor& mesh_vertices, const CoarseningHierarchy& h) {
    if (mesh_vertices.rank() != 2 || mesh_vertices.dim(0) != h.source.n_nodes()) {
        throw ShapeError("make_pseudo_gt", mesh_vertices.shape(), Shape{h.source.n_nodes(), 3});
    }
    if (h.composed.size() != 2) throw std::invalid_argument("hierarchy needs 2 selected levels");
    return {pool_positions(h.composed[0], mesh_vertices), pool_positions(h.composed[1], mesh_vertices)};
}

// ------------------------------------------------------------ generator

Dataset generate_synthetic(const SyntheticGenConfig& cfg, const CoarseningHierarchy* hierarchy) {
    cfg.validate();
    std::optional<SyntheticBodyMesh> mesh;
    if (cfg.n_mesh_vertices > 0) {
        if (hierarchy == nullptr) throw DatasetError("mesh targets need a coarsening hierarchy");
        if (hierarchy->source.n_nodes() != cfg.n_mesh_vertices) {
            throw DatasetError("hierarchy has " + std::to_string(hierarchy->source.n_nodes()) +
                               " source vertices, generator config wants " +
                               std::to_string(cfg.n_mesh_vertices));
        }
        mesh = build_synthetic_body_mesh(cfg.n_mesh_vertices, cfg.mesh_seed);
        if (!(mesh->graph == hierarchy->source)) {
            throw DatasetError("hierarchy was not built from the synthetic mesh with mesh_seed " +
                               std::to_string(cfg.mesh_seed));
        }
    }

    std::vector<std::array<AngleRange, skeleton::kBones>> per_action;
    for (const auto& a : cfg.actions) per_action.push_back(action_angle_ranges(cfg.angle_range, a));

    std::mt19937_64 rng(cfg.seed);
    // separate stream, so the noise level never changes the poses
    std::seed_seq noise_seed{cfg.seed, std::uint64_t{1}};
    std::mt19937_64 noise_rng(noise_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    Dataset ds;
    ds.samples.reserve(cfg.n_samples);
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        const std::size_t a = static_cast<std::size_t>(unit(rng) * cfg.actions.size()) % cfg.actions.size();
        const std::size_t s =
            static_cast<std::size_t>(unit(rng) * cfg.subject_scale.size()) % cfg.subject_scale.size();
        std::array<std::array<double, 3>, skeleton::kBones> angles{};
        for (std::size_t b = 0; b < skeleton::kBones; ++b) {
            for (int k = 0; k < 3; ++k) angles[b][k] = uniform(per_action[a][b].lo[k], per_action[a][b].hi[k]);
        }
        const double yaw = uniform(cfg.yaw_lo, cfg.yaw_hi);
        const double dist = uniform(cfg.distance_lo_mm, cfg.distance_hi_mm);
        std::array<double, skeleton::kBones> lengths = cfg.bone_length_mm;
        for (double& l : lengths) l *= cfg.subject_scale[s];

        PoseSample p;
        p.joints3d = root_center(forward_kinematics(lengths, angles, yaw));
        p.joints2d = project_joints(p.joints3d, dist);
        if (cfg.noise_std_2d > 0.0) {
            for (auto& v : p.joints2d.span()) v += cfg.noise_std_2d * gauss(noise_rng);
        }
        p.action = cfg.actions[a];
        p.subject = "S" + std::to_string(s + 1);
        p.camera_distance_mm = dist;
        if (mesh) {
            auto [top, mid] = make_pseudo_gt(pose_mesh(*mesh, p.joints3d), *hierarchy);
            p.mesh_top = std::move(top);
            p.mesh_mid = std::move(mid);
        }
        ds.samples.push_back(std::move(p));
    }

    ds.meta["generator"] = cfg.to_json();
    std::vector<std::string> names(skeleton::kJointNames.begin(), skeleton::kJointNames.end());
    ds.meta["joint_names"] = names;
    json pairs = json::array();
    for (const auto& [l, r] : skeleton::kLeftRightPairs) pairs.push_back({l, r});
    ds.meta["left_right_pairs"] = pairs;
    if (mesh) {
        ds.meta["hierarchy_checksum"] = hex64(hierarchy_checksum(*hierarchy));
        ds.meta["mesh_sizes"] = {{"mid", hierarchy->selected_size(1)}, {"top", hierarchy->selected_size(0)}};
    }
    return ds;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double test_fraction,
                                          std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) {
        throw std::invalid_argument("test_fraction must lie in [0, 1]");
    }
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ds.size())));
    std::vector<char> is_test(ds.size(), 0);
    for (std::size_t i = 0; i < n_test; ++i) is_test[idx[i]] = 1;
    Dataset train, test;
    train.meta = test.meta = ds.meta;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        (is_test[i] ? test : train).samples.push_back(ds.samples[i]);
    }
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------- files

std::uint64_t dataset_checksum(const Dataset& ds) {
    std::uint64_t h = kFnvOffset;
    for (const auto& s : ds.samples) {
        h = fnv1a(h, sample_line(s));
        h = fnv1a(h, "\n");
    }
    return h;
}

void save_dataset(const Dataset& ds, std::ostream& os) {
    std::vector<std::string> lines;
    lines.reserve(ds.size());
    std::uint64_t h = kFnvOffset;
    for (const auto& s : ds.samples) {
        lines.push_back(sample_line(s));
        h = fnv1a(fnv1a(h, lines.back()), "\n");
    }
    json header{{"format", "hgn-dataset"},
                {"version", kDatasetVersion},
                {"samples", ds.size()},
                {"checksum", hex64(h)},
                {"meta", ds.meta}};
    os << header.dump() << '\n';
    for (const auto& l : lines) os << l << '\n';
    if (!os) throw DatasetError("failed writing dataset");
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DatasetError("cannot open '" + path + "' for writing");
    save_dataset(ds, f);
}

Dataset load_dataset(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ParseError(1, "empty dataset file");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError(1, std::string("malformed header: ") + e.what());
    }
    if (!header.is_object() || header.value("format", "") != "hgn-dataset") {
        throw ParseError(1, "not an hgn-dataset header");
    }
    if (!header.contains("version") || !header["version"].is_number_integer()) {
        throw ParseError(1, "header has no integer version");
    }
    const int version = header["version"].get<int>();
    if (version != kDatasetVersion) {
        throw DatasetError("unsupported dataset version " + std::to_string(version) +
                           " (this build reads version " + std::to_string(kDatasetVersion) + ")");
    }
    std::size_t expected = 0;
    std::string checksum;
    try {
        expected = header.at("samples").get<std::size_t>();
        checksum = header.at("checksum").get<std::string>();
    } catch (const json::exception& e) {
        throw ParseError(1, std::string("bad header: ") + e.what());
    }

    Dataset ds;
    ds.meta = header.value("meta", json::object());
    std::uint64_t h = kFnvOffset;
    std::size_t lineno = 1, last_good_line = 1;
    auto context = [&] {
        if (ds.samples.empty()) return std::string("no good records");
        return "last good record #" + std::to_string(ds.samples.size()) + " at line " +
               std::to_string(last_good_line);
    };
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) {
            if (is.peek() == std::char_traits<char>::eof()) break;
            throw ParseError(lineno, "empty record (" + context() + ")");
        }
        if (ds.samples.size() == expected) {
            throw ParseError(lineno, "more records than the header's " + std::to_string(expected));
        }
        try {
            ds.samples.push_back(sample_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw ParseError(lineno, std::string("malformed record (") + context() + "): " + e.what());
        }
        const PoseSample& s = ds.samples.back();
        const PoseSample& first = ds.samples.front();
        const bool same_mesh = s.mesh_mid.has_value() == first.mesh_mid.has_value() &&
                               s.mesh_top.has_value() == first.mesh_top.has_value() &&
                               (!s.mesh_mid || s.mesh_mid->shape() == first.mesh_mid->shape()) &&
                               (!s.mesh_top || s.mesh_top->shape() == first.mesh_top->shape());
        if (!same_mesh) {
            ds.samples.pop_back();
            throw ParseError(lineno, "mesh targets differ from the first record (" + context() + ")");
        }
        h = fnv1a(fnv1a(h, line), "\n");
        last_good_line = lineno;
    }
    if (ds.samples.size() != expected) {
        throw ParseError(lineno + 1, "truncated file: header promises " + std::to_string(expected) +
                                         " records, found " + std::to_string(ds.samples.size()) +
                                         " (" + context() + ")");
    }
    if (hex64(h) != checksum) {
        throw DatasetError("dataset checksum mismatch: header " + checksum + ", records " + hex64(h));
    }
    return ds;
}

Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DatasetError("cannot open dataset '" + path + "'");
    return load_dataset(f);
}

}  // namespace hgn
