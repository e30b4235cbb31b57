#include <sstream>

#include "doctest.h"
#include "hgn/body_mesh.hpp"
#include "hgn/checkpoint.hpp"

using namespace hgn;

namespace {

const CoarseningHierarchy& hierarchy() {
    static const CoarseningHierarchy h = [] {
        auto mesh = build_synthetic_body_mesh(6890, 0);
        return build_hierarchy(mesh.graph, {96, 48}, 0);
    }();
    return h;
}

const Dataset& dataset() {
    static const Dataset ds = [] {
        SyntheticGenConfig g;
        g.n_samples = 32;
        g.seed = 2;
        return generate_synthetic(g, &hierarchy());
    }();
    return ds;
}

struct Trained {
    HGNParams model;
    AdamState adam;
    std::string bytes;
    std::string report;
};

Trained train_small(std::uint64_t seed = 0) {
    HGNConfig mc;
    mc.channels = 8;
    mc.seed = seed;
    Trained t{build(mc, hierarchy()), {}, {}, {}};
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.seed = seed;
    std::ostringstream rep;
    t.adam = train(t.model, dataset(), tc, &rep).optimizer;
    t.report = rep.str();
    std::ostringstream os;
    save_checkpoint(os, t.model, hierarchy(), &t.adam, {{"seed", seed}});
    t.bytes = os.str();
    return t;
}

}  // namespace

TEST_CASE("checkpoint round trip restores parameters, statistics and optimizer") {
    const Trained t = train_small();
    std::istringstream is(t.bytes);
    const Checkpoint c = load_checkpoint(is);

    auto a = const_cast<HGNParams&>(t.model).parameters();
    auto b = const_cast<HGNParams&>(c.model).parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(*a[i].value == *b[i].value);
    }
    auto bn_a = const_cast<HGNParams&>(t.model).batch_norms();
    auto bn_b = const_cast<HGNParams&>(c.model).batch_norms();
    REQUIRE(bn_a.size() == bn_b.size());
    for (std::size_t i = 0; i < bn_a.size(); ++i) {
        CHECK(bn_a[i]->running_mean == bn_b[i]->running_mean);
        CHECK(bn_a[i]->running_var == bn_b[i]->running_var);
    }
    REQUIRE(c.optimizer.has_value());
    CHECK(c.optimizer->step == t.adam.step);
    CHECK(c.optimizer->moments.size() == t.adam.moments.size());
    for (const auto& [name, mom] : t.adam.moments) {
        CHECK(c.optimizer->moments.at(name).m == mom.m);
        CHECK(c.optimizer->moments.at(name).v == mom.v);
    }
    CHECK(hierarchy_checksum(c.hierarchy) == hierarchy_checksum(hierarchy()));
    CHECK(c.run_config == nlohmann::json{{"seed", 0}});

    // the restored model predicts exactly what the original did
    CHECK(predict_poses_mm(c.model, dataset().samples) == predict_poses_mm(t.model, dataset().samples));

    // and re-saving reproduces the same bytes
    std::ostringstream again;
    save_checkpoint(again, c.model, c.hierarchy, &*c.optimizer, c.run_config);
    CHECK(again.str() == t.bytes);
}

TEST_CASE("identical training produces byte-identical checkpoints") {
    const Trained a = train_small(5);
    const Trained b = train_small(5);
    CHECK(a.bytes == b.bytes);
    CHECK(a.report == b.report);
    const Trained c = train_small(6);
    CHECK(a.bytes != c.bytes);
}

TEST_CASE("checkpoint without optimizer state") {
    HGNConfig mc;
    mc.channels = 8;
    const HGNParams m = build(mc, hierarchy());
    std::ostringstream os;
    save_checkpoint(os, m, hierarchy());
    std::istringstream is(os.str());
    CHECK_FALSE(load_checkpoint(is).optimizer.has_value());
}

TEST_CASE("corrupt and truncated checkpoints are rejected") {
    const Trained t = train_small();

    SUBCASE("truncated") {
        for (std::size_t keep : {std::size_t{0}, std::size_t{5}, std::size_t{12}, t.bytes.size() / 2,
                                 t.bytes.size() - 1}) {
            std::istringstream is(t.bytes.substr(0, keep));
            CHECK_THROWS_AS(load_checkpoint(is), CheckpointFormatError);
        }
    }
    SUBCASE("flipped payload byte") {
        std::string bad = t.bytes;
        bad[bad.size() - 100] ^= 0x01;
        std::istringstream is(bad);
        CHECK_THROWS_AS(load_checkpoint(is), CheckpointFormatError);
    }
    SUBCASE("wrong magic") {
        std::string bad = t.bytes;
        bad[0] = 'X';
        std::istringstream is(bad);
        CHECK_THROWS_AS(load_checkpoint(is), CheckpointFormatError);
    }
    SUBCASE("trailing garbage") {
        std::istringstream is(t.bytes + "zz");
        CHECK_THROWS_AS(load_checkpoint(is), CheckpointFormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS(load_checkpoint(std::string("/nonexistent/dir/x.ckpt")));
    }
}

TEST_CASE("dataset from another hierarchy is incompatible") {
    const Trained t = train_small();
    std::istringstream is(t.bytes);
    const Checkpoint c = load_checkpoint(is);
    CHECK_NOTHROW(require_compatible(c, dataset()));

    auto mesh = build_synthetic_body_mesh(6890, 0);
    const CoarseningHierarchy other = build_hierarchy(mesh.graph, {96, 48}, 1);
    REQUIRE(hierarchy_checksum(other) != hierarchy_checksum(hierarchy()));
    SyntheticGenConfig g;
    g.n_samples = 4;
    const Dataset foreign = generate_synthetic(g, &other);
    CHECK_THROWS_AS(require_compatible(c, foreign), CompatibilityError);
}

TEST_CASE("hierarchy json round trip and tamper detection") {
    const nlohmann::json j = to_json(hierarchy());
    const CoarseningHierarchy back = hierarchy_from_json(j);
    CHECK(hierarchy_checksum(back) == hierarchy_checksum(hierarchy()));
    CHECK(back.levels.size() == hierarchy().levels.size());
    nlohmann::json bad = j;
    auto& map = bad["levels"][1]["cluster_map"];
    map[0] = map[0].get<std::size_t>() == 0 ? 1 : 0;
    CHECK_THROWS(hierarchy_from_json(bad));
}

TEST_CASE("model config json round trip") {
    HGNConfig c;
    c.channels = 32;
    c.variant = Variant::no_top;
    c.gconv = GConvKind::vanilla;
    c.seed = 9;
    const HGNConfig back = hgn_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
}
