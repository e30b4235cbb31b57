#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "hgn/body_mesh.hpp"
#include "hgn/data.hpp"
#include "hgn/metrics.hpp"
#include "hgn/skeleton.hpp"

using namespace hgn;

namespace {

const CoarseningHierarchy& hierarchy() {
    static const CoarseningHierarchy h = [] {
        auto mesh = build_synthetic_body_mesh(6890, 0);
        return build_hierarchy(mesh.graph, {96, 48}, 0);
    }();
    return h;
}

SyntheticGenConfig small_gen(std::size_t n = 24, std::uint64_t seed = 5) {
    SyntheticGenConfig g;
    g.n_samples = n;
    g.seed = seed;
    return g;
}

const Dataset& small_dataset() {
    static const Dataset ds = generate_synthetic(small_gen(), &hierarchy());
    return ds;
}

double subject_scale(const SyntheticGenConfig& g, const std::string& subject) {
    const std::size_t i = static_cast<std::size_t>(std::stoi(subject.substr(1))) - 1;
    return g.subject_scale.at(i);
}

double dist(const Tensor& t, std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += (t.at(a, c) - t.at(b, c)) * (t.at(a, c) - t.at(b, c));
    return std::sqrt(s);
}

std::string saved(const Dataset& ds) {
    std::ostringstream os;
    save_dataset(ds, os);
    return os.str();
}

}  // namespace

TEST_CASE("noise-free generation is bit-reproducible") {
    const Dataset a = generate_synthetic(small_gen(), &hierarchy());
    const Dataset b = generate_synthetic(small_gen(), &hierarchy());
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a.samples[k] == b.samples[k]);
    CHECK(saved(a) == saved(b));
    const Dataset c = generate_synthetic(small_gen(24, 6), &hierarchy());
    CHECK(dataset_checksum(a) != dataset_checksum(c));
}

TEST_CASE("generated poses keep configured bone lengths") {
    const SyntheticGenConfig g = small_gen();
    for (const auto& s : small_dataset().samples) {
        const double scale = subject_scale(g, s.subject);
        for (std::size_t b = 0; b < skeleton::kBones; ++b) {
            const double len = dist(s.joints3d, skeleton::bone_parent(b), skeleton::bone_child(b));
            CHECK(std::abs(len - g.bone_length_mm[b] * scale) < 1e-9);
        }
    }
}

TEST_CASE("re-projecting joints3d reproduces joints2d") {
    for (const auto& s : small_dataset().samples) {
        REQUIRE(s.camera_distance_mm.has_value());
        const double d = *s.camera_distance_mm;
        for (std::size_t j = 0; j < skeleton::kJoints; ++j) {
            const double z = s.joints3d.at(j, 2);
            const double u = s.joints3d.at(j, 0) * d / (d + z) / 1000.0;
            const double v = s.joints3d.at(j, 1) * d / (d + z) / 1000.0;
            CHECK(s.joints2d.at(j, 0) == doctest::Approx(u).epsilon(1e-12));
            CHECK(s.joints2d.at(j, 1) == doctest::Approx(v).epsilon(1e-12));
        }
    }
}

TEST_CASE("samples are root-centred, finite and share shapes") {
    const Dataset& ds = small_dataset();
    const std::size_t n_mid = ds.samples[0].mesh_mid->dim(0), n_top = ds.samples[0].mesh_top->dim(0);
    CHECK(n_top == hierarchy().selected_size(0));
    CHECK(n_mid == hierarchy().selected_size(1));
    for (const auto& s : ds.samples) {
        for (std::size_t c = 0; c < 3; ++c) CHECK(s.joints3d.at(0, c) == 0.0);
        for (double v : s.joints3d.span()) CHECK(std::isfinite(v));
        CHECK(s.mesh_mid->dim(0) == n_mid);
        CHECK(s.mesh_top->dim(0) == n_top);
    }
}

TEST_CASE("the generator's own targets score zero") {
    const Dataset& ds = small_dataset();
    Tensor all({ds.size(), skeleton::kJoints, 3});
    for (std::size_t k = 0; k < ds.size(); ++k) {
        for (std::size_t j = 0; j < skeleton::kJoints; ++j) {
            for (std::size_t c = 0; c < 3; ++c) all.at(k, j, c) = ds.samples[k].joints3d.at(j, c);
        }
    }
    CHECK(mpjpe(all, all) == 0.0);
}

TEST_CASE("mesh targets are a deterministic function of the pose") {
    auto mesh = build_synthetic_body_mesh(6890, 0);
    for (const auto& s : small_dataset().samples) {
        const auto [top, mid] = make_pseudo_gt(pose_mesh(mesh, s.joints3d), hierarchy());
        CHECK(top == *s.mesh_top);
        CHECK(mid == *s.mesh_mid);
    }
}

TEST_CASE("noise perturbs only the 2D input") {
    SyntheticGenConfig g = small_gen(8);
    const Dataset clean = generate_synthetic(g, &hierarchy());
    g.noise_std_2d = 0.01;
    const Dataset noisy = generate_synthetic(g, &hierarchy());
    double diff = 0.0;
    for (std::size_t k = 0; k < clean.size(); ++k) {
        CHECK(clean.samples[k].joints3d == noisy.samples[k].joints3d);
        for (std::size_t i = 0; i < clean.samples[k].joints2d.size(); ++i) {
            diff += std::abs(clean.samples[k].joints2d[i] - noisy.samples[k].joints2d[i]);
        }
    }
    CHECK(diff > 0.0);
}

TEST_CASE("root_center examples") {
    Tensor p({17, 3});
    for (std::size_t j = 0; j < 17; ++j) {
        for (std::size_t c = 0; c < 3; ++c) p.at(j, c) = 10.0 * j + c;
    }
    const Tensor centred = root_center(p);
    for (std::size_t c = 0; c < 3; ++c) CHECK(centred.at(0, c) == 0.0);
    CHECK(root_center(centred) == centred);
    Tensor shifted = p;
    for (std::size_t j = 0; j < 17; ++j) {
        shifted.at(j, 0) += 123.0;
        shifted.at(j, 2) -= 7.5;
    }
    CHECK(root_center(shifted) == centred);
}

TEST_CASE("make_pseudo_gt examples") {
    const std::size_t n = hierarchy().source.n_nodes();
    const auto [top0, mid0] = make_pseudo_gt(Tensor({n, 3}), hierarchy());
    CHECK(top0.max_abs() == 0.0);
    CHECK(mid0.max_abs() == 0.0);

    // rotation about z by 90 degrees commutes with centroid pooling
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-500.0, 500.0);
    Tensor v({n, 3}), rv({n, 3});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 3; ++c) v.at(i, c) = u(rng);
        rv.at(i, 0) = -v.at(i, 1);
        rv.at(i, 1) = v.at(i, 0);
        rv.at(i, 2) = v.at(i, 2);
    }
    const auto [top, mid] = make_pseudo_gt(v, hierarchy());
    const auto [rtop, rmid] = make_pseudo_gt(rv, hierarchy());
    for (std::size_t i = 0; i < top.dim(0); ++i) {
        CHECK(rtop.at(i, 0) == doctest::Approx(-top.at(i, 1)).epsilon(1e-12));
        CHECK(rtop.at(i, 1) == doctest::Approx(top.at(i, 0)).epsilon(1e-12));
    }
    CHECK_THROWS(make_pseudo_gt(Tensor({n - 1, 3}), hierarchy()));
}

TEST_CASE("a cluster straddling two joints pools to their midpoint") {
    // path 0-1-2-3; level 1 merges {0,1} and {2,3}; level 2 merges everything
    CoarseningHierarchy h;
    h.source = Graph(4, {{0, 1, 1.0}, {1, 2, 1.0}, {2, 3, 1.0}});
    h.levels.push_back({Graph(2, {{0, 1, 1.0}}), {0, 0, 1, 1}});
    h.levels.push_back({Graph(1, {}), {0, 0}});
    h.targets = {2, 1};
    h.selected = {0, 1};
    h.composed = {h.composed_map(0), h.composed_map(1)};
    // vertices 0 and 1 sit on a hip (0,0,0) and a knee (0,-400,0)
    Tensor v({4, 3}, {0, 0, 0, 0, -400, 0, 100, 0, 0, 100, 0, 50});
    const auto [top, mid] = make_pseudo_gt(v, h);
    CHECK(top.at(0, 0) == 0.0);
    CHECK(top.at(0, 1) == -200.0);
    CHECK(top.at(1, 2) == 25.0);
    CHECK(mid.at(0, 0) == 50.0);
    CHECK(mid.at(0, 1) == -100.0);
    CHECK(mid.at(0, 2) == 12.5);
}

TEST_CASE("generation checks its hierarchy") {
    SyntheticGenConfig g = small_gen(2);
    CHECK_THROWS_AS(generate_synthetic(g, nullptr), DatasetError);
    g.n_mesh_vertices = 5000;
    CHECK_THROWS_AS(generate_synthetic(g, &hierarchy()), DatasetError);
    g.n_mesh_vertices = 0;
    const Dataset pose_only = generate_synthetic(g, nullptr);
    CHECK_FALSE(pose_only.has_mesh());
    SyntheticGenConfig bad = small_gen(2);
    bad.bone_length_mm[3] = 0.0;
    CHECK_THROWS_AS(bad.validate(), DatasetError);
    bad = small_gen(2);
    bad.distance_lo_mm = 500.0;
    CHECK_THROWS_AS(bad.validate(), DatasetError);
}

TEST_CASE("config round-trips through json") {
    SyntheticGenConfig g = small_gen(3, 9);
    g.noise_std_2d = 0.002;
    g.actions = {"walking"};
    const SyntheticGenConfig back = SyntheticGenConfig::from_json(g.to_json());
    CHECK(back.to_json() == g.to_json());
}

TEST_CASE("save and load round-trip") {
    const Dataset& ds = small_dataset();
    std::istringstream is(saved(ds));
    const Dataset back = load_dataset(is);
    REQUIRE(back.size() == ds.size());
    for (std::size_t k = 0; k < ds.size(); ++k) CHECK(back.samples[k] == ds.samples[k]);
    CHECK(back.meta == ds.meta);
    CHECK(back.hierarchy_checksum() == hierarchy_checksum(hierarchy()));
}

TEST_CASE("truncated files name the last good record") {
    const std::string text = saved(small_dataset());
    // keep the header and three full records, then half of the fourth
    std::size_t pos = 0;
    for (int line = 0; line < 4; ++line) pos = text.find('\n', pos) + 1;
    const std::size_t next = text.find('\n', pos);
    const std::string cut = text.substr(0, pos + (next - pos) / 2);
    std::istringstream is(cut);
    try {
        (void)load_dataset(is);
        FAIL("truncated file loaded");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("last good record #3") != std::string::npos);
        CHECK(e.line() == 5);
    }

    std::istringstream missing(text.substr(0, pos));
    CHECK_THROWS_AS(load_dataset(missing), ParseError);
}

TEST_CASE("unknown versions and bad checksums are rejected") {
    std::string text = saved(small_dataset());
    std::string v2 = text;
    v2.replace(v2.find("\"version\":1"), 11, "\"version\":7");
    std::istringstream a(v2);
    try {
        (void)load_dataset(a);
        FAIL("unknown version loaded");
    } catch (const DatasetError& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }

    std::string tampered = text;
    const std::size_t first = tampered.find('\n') + 1;
    const std::size_t digit = tampered.find_first_of("123456789", tampered.find("joints3d", first) + 12);
    tampered[digit] = tampered[digit] == '9' ? '8' : static_cast<char>(tampered[digit] + 1);
    std::istringstream b(tampered);
    CHECK_THROWS_AS(load_dataset(b), DatasetError);
}

TEST_CASE("split is deterministic and disjoint") {
    const Dataset& ds = small_dataset();
    const auto [train, test] = split_dataset(ds, 0.25, 3);
    CHECK(test.size() == 6);
    CHECK(train.size() == 18);
    const auto [train2, test2] = split_dataset(ds, 0.25, 3);
    for (std::size_t k = 0; k < test.size(); ++k) CHECK(test.samples[k] == test2.samples[k]);
    for (const auto& t : test.samples) {
        for (const auto& s : train.samples) CHECK_FALSE(t == s);
    }
}
