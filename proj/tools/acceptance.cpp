// Runs the eight acceptance criteria and prints one PASS/FAIL line each.
// Exit status is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Geometry>

#include "hgn/body_mesh.hpp"
#include "hgn/cli.hpp"
#include "hgn/training.hpp"

using namespace hgn;
using ad::Tape;
using ad::Variable;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Options {
    std::size_t ablation_seeds = 5;
    std::size_t ablation_samples = 2048;
    std::size_t ablation_channels = 16;
    std::size_t ablation_epochs = 30;
    std::size_t ablation_batch = 16;
    std::size_t overfit_epochs = 200;
    std::string workdir = (fs::temp_directory_path() / "hgn_acceptance").string();
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixed(double v, int digits = 2) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

const CoarseningHierarchy& default_hierarchy() {
    static const CoarseningHierarchy h = [] {
        const auto mesh = build_synthetic_body_mesh(6890, 0);
        return build_hierarchy(mesh.graph, {96, 48}, 0);
    }();
    return h;
}

Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(s));
    for (auto& v : t.span()) v = u(rng);
    return t;
}

// Keeps relu inputs off the kink, where central differences are meaningless.
Tensor away_from_zero(Shape s, std::mt19937_64& rng) {
    Tensor t = random_tensor(std::move(s), rng, 0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : t.span()) v = sign(rng) ? v : -v;
    return t;
}

Variable weigh(const Variable& y, std::uint64_t seed = 7) {
    std::mt19937_64 w(seed);
    return ad::sum(ad::hadamard(y, y.tape()->constant(random_tensor(y.shape(), w))));
}

// ------------------------------------------------------------------ 1

Outcome gradient_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst_primitive = 0.0, worst_layer = 0.0;
    std::string worst_primitive_name, worst_layer_name;

    std::mt19937_64 rng(2024);
    auto prim = [&](const std::string& name, const ad::ScalarFn& f, const std::vector<Shape>& shapes,
                    bool avoid_zero = false) {
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<Tensor> pt;
            for (const auto& s : shapes) pt.push_back(avoid_zero ? away_from_zero(s, rng) : random_tensor(s, rng));
            const double e = ad::gradient_check(f, pt, 1e-5).max_rel_error;
            if (e >= worst_primitive) {
                worst_primitive = e;
                worst_primitive_name = name;
            }
        }
    };
    using V = const std::vector<Variable>&;
    prim("matmul", [](Tape&, V v) { return weigh(ad::matmul(v[0], v[1])); }, {{3, 4}, {4, 2}});
    prim("matmul batched", [](Tape&, V v) { return weigh(ad::matmul(v[0], v[1], true)); }, {{2, 3, 4}, {2, 5, 4}});
    prim("add", [](Tape&, V v) { return weigh(ad::add(v[0], v[1])); }, {{2, 3, 4}, {3, 4}});
    prim("sub", [](Tape&, V v) { return weigh(ad::sub(v[0], v[1])); }, {{3, 4}, {3, 4}});
    prim("hadamard", [](Tape&, V v) { return weigh(ad::hadamard(v[0], v[1])); }, {{2, 3, 4}, {3, 4}});
    prim("relu", [](Tape&, V v) { return weigh(ad::relu(v[0])); }, {{3, 5}}, true);
    prim("scale", [](Tape&, V v) { return weigh(ad::scale(v[0], -1.7)); }, {{4}});
    prim("sum", [](Tape&, V v) { return ad::sum(ad::square(v[0])); }, {{2, 3}});
    prim("mean", [](Tape&, V v) { return ad::mean(ad::square(v[0])); }, {{2, 3, 2}});
    prim("transpose", [](Tape&, V v) { return weigh(ad::transpose(v[0])); }, {{2, 3, 4}});
    prim("concat_channels", [](Tape&, V v) { return weigh(ad::concat_channels({v[0], v[1]})); },
         {{2, 3, 2}, {2, 3, 4}});
    prim("square", [](Tape&, V v) { return weigh(ad::square(v[0])); }, {{6}});
    prim("add_bias", [](Tape&, V v) { return weigh(ad::add_bias(v[0], v[1])); }, {{2, 3, 4}, {4}});
    const Tensor mask = Tensor::from_rows({{1, 1, 0}, {1, 1, 1}, {0, 1, 1}});
    prim("masked_softmax", [&](Tape&, V v) { return weigh(ad::masked_softmax(v[0], mask)); }, {{3, 3}});
    prim("batch_norm_train", [](Tape&, V v) { return weigh(ad::batch_norm_train(v[0], v[1], v[2], 1e-5)); },
         {{2, 3, 4}, {4}, {4}});
    const std::vector<double> rm{0.1, -0.2, 0.3, 0.0}, rv{1.5, 0.7, 2.0, 1.0};
    prim("batch_norm_eval",
         [&](Tape&, V v) { return weigh(ad::batch_norm_eval(v[0], v[1], v[2], rm, rv, 1e-5)); },
         {{2, 3, 4}, {4}, {4}});

    auto layer = [&](const std::string& name, const ad::ScalarFn& f, const std::vector<Tensor>& pt) {
        const double e = ad::gradient_check(f, pt, 1e-5).max_rel_error;
        if (e >= worst_layer) {
            worst_layer = e;
            worst_layer_name = name;
        }
    };
    const GraphContext g(Graph(5, {{0, 1, 1}, {1, 2, 1}, {2, 3, 1}, {1, 4, 1}}));
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 r(100 + seed);
        const Tensor x = random_tensor({2, 5, 4}, r);
        for (auto kind : {GConvKind::semantic, GConvKind::vanilla}) {
            const GConvParams base = make_gconv(kind, 4, 3, 5, r);
            std::vector<Tensor> pt{x, base.w_self, random_tensor({3}, r)};
            if (kind == GConvKind::semantic) {
                pt.push_back(base.w_neigh);
                pt.push_back(random_tensor({5, 5}, r));
            }
            layer(std::string("gconv ") + to_string(kind),
                  [&](Tape& tape, V v) {
                      ParamBinder b(tape);
                      GConvParams p = base;
                      b.bind(p.w_self, v[1]);
                      b.bind(p.bias, v[2]);
                      if (kind == GConvKind::semantic) {
                          b.bind(p.w_neigh, v[3]);
                          b.bind(p.t, v[4]);
                      }
                      ForwardContext ctx{b};
                      return weigh(gconv(ctx, p, v[0], g));
                  },
                  pt);
        }
        const NonLocalParams nl = make_nonlocal(4, r);
        layer("non_local",
              [&](Tape& tape, V v) {
                  ParamBinder b(tape);
                  NonLocalParams p = nl;
                  b.bind(p.theta, v[1]);
                  b.bind(p.phi, v[2]);
                  b.bind(p.g, v[3]);
                  b.bind(p.w_z, v[4]);
                  ForwardContext ctx{b};
                  return weigh(non_local(ctx, p, v[0]));
              },
              {x, nl.theta, nl.phi, nl.g, nl.w_z});
        const BatchNormState bn(4);
        layer("batch_norm",
              [&](Tape& tape, V v) {
                  ParamBinder b(tape);
                  BatchNormState p = bn;
                  b.bind(p.gamma, v[1]);
                  b.bind(p.beta, v[2]);
                  ForwardContext ctx{b, Mode::train, nullptr};
                  return weigh(batch_norm(ctx, p, v[0]));
              },
              {x, random_tensor({4}, r, 0.5, 1.5), random_tensor({4}, r)});
        const ScaleTransferParams st = make_transfer(5, 3, 4, true, r);
        layer("scale_transfer",
              [&](Tape& tape, V v) {
                  ParamBinder b(tape);
                  ScaleTransferParams p = st;
                  b.bind(p.node_map, v[1]);
                  b.bind(p.channel_map, v[2]);
                  ForwardContext ctx{b};
                  return weigh(scale_transfer(ctx, p, v[0]));
              },
              {x, st.node_map, st.channel_map});
        TransferGrid grid;
        grid[{0, 1}] = make_transfer(5, 3, 4, false, r, true);
        grid[{1, 0}] = make_transfer(3, 5, 4, false, r, true);
        const Tensor x1 = random_tensor({2, 3, 4}, r);
        layer("fuse",
              [&](Tape& tape, V v) {
                  ParamBinder b(tape);
                  TransferGrid gr = grid;
                  b.bind(gr[{0, 1}].node_map, v[2]);
                  b.bind(gr[{1, 0}].node_map, v[3]);
                  ForwardContext ctx{b};
                  auto ys = fuse(ctx, gr, {0, 1}, {v[0], v[1]});
                  return ad::add(weigh(ys[0], 1), weigh(ys[1], 2));
              },
              {x, x1, grid[{0, 1}].node_map, grid[{1, 0}].node_map});
        const ResidualBlockParams rb = make_residual_block(GConvKind::semantic, 4, 5, r);
        layer("residual_block",
              [&](Tape& tape, V v) {
                  ParamBinder b(tape);
                  ResidualBlockParams p = rb;
                  b.bind(p.conv1.w_self, v[1]);
                  b.bind(p.conv1.w_neigh, v[2]);
                  b.bind(p.conv1.t, v[3]);
                  b.bind(p.conv2.w_self, v[4]);
                  b.bind(p.nonlocal.w_z, v[5]);
                  b.bind(p.bn1.gamma, v[6]);
                  ForwardContext ctx{b};
                  return weigh(residual_block(ctx, p, v[0], g));
              },
              {x, rb.conv1.w_self, rb.conv1.w_neigh, random_tensor({5, 5}, r), rb.conv2.w_self, rb.nonlocal.w_z,
               random_tensor({4}, r, 0.5, 1.5)});
    }

    HGNConfig mc;
    mc.channels = 8;
    mc.seed = 3;
    const HGNParams model = build(mc, default_hierarchy());
    SyntheticGenConfig gc;
    gc.n_samples = 2;
    gc.seed = 1;
    const Dataset ds = generate_synthetic(gc, &default_hierarchy());
    const std::vector<std::size_t> idx{0, 1};
    const ModelGradCheck e2e = model_gradient_check(model, make_batch(ds.samples, idx), {}, 1e-5, 4, 0);

    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = worst_primitive < 1e-4 && worst_layer < 1e-4 && e2e.result.max_rel_error < 1e-3 && secs < 60.0;
    std::ostringstream d;
    d << "primitives max rel " << std::scientific << std::setprecision(2) << worst_primitive << " ("
      << worst_primitive_name << "), layers " << worst_layer << " (" << worst_layer_name << "), end-to-end "
      << e2e.result.max_rel_error << " over " << e2e.result.coordinates_checked << " coords in "
      << e2e.tensors_checked << " tensors (" << e2e.result.zero_coordinates
      << " at zero gradient, max abs diff " << e2e.result.max_zero_abs_error << "), " << std::fixed
      << std::setprecision(1) << secs << " s";
    o.detail = d.str();
    return o;
}

// ------------------------------------------------------------------ 2

Outcome parameter_counts() {
    auto count = [](Variant v, std::size_t ch, GConvKind kind) {
        HGNConfig c;
        c.channels = ch;
        c.gconv = kind;
        c.variant = v;
        return param_count(build(c, default_hierarchy()));
    };
    const std::size_t full128 = count(Variant::full, 128, GConvKind::semantic);
    const std::size_t full64 = count(Variant::full, 64, GConvKind::semantic);
    const std::size_t base128 = count(Variant::baseline, 128, GConvKind::semantic);
    const std::size_t van128 = count(Variant::full, 128, GConvKind::vanilla);
    auto within = [](std::size_t n, double ref) { return std::abs(static_cast<double>(n) - ref) <= 0.15 * ref; };
    const bool counts = within(full128, 1.04e6) && within(full64, 0.29e6) && within(base128, 0.43e6) &&
                        within(van128, 0.71e6);
    const bool order = !(base128 < full64) && base128 < full128;
    std::ostringstream d;
    d << "full/128 " << full128 << " (ref 1.04M), full/64 " << full64 << " (ref 0.29M), baseline/128 " << base128
      << " (ref 0.43M), vanilla/128 " << van128 << " (ref 0.71M); baseline<full64 "
      << (base128 < full64 ? "true" : "false") << ", baseline<full128 " << (base128 < full128 ? "true" : "false");
    return {counts && order, d.str()};
}

// ------------------------------------------------------------------ 3

Outcome coarsening() {
    const auto mesh = build_synthetic_body_mesh(6890, 0);
    double lo = 1.0, hi = 0.0;
    std::size_t min_mid = SIZE_MAX, max_mid = 0, min_top = SIZE_MAX, max_top = 0;
    bool connected = true, conserved = true, near = true;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const CoarseningHierarchy h = build_hierarchy(mesh.graph, {96, 48}, seed);
        const Graph* fine = &h.source;
        for (const auto& level : h.levels) {
            const double ratio = static_cast<double>(level.graph.n_nodes()) / static_cast<double>(fine->n_nodes());
            lo = std::min(lo, ratio);
            hi = std::max(hi, ratio);
            connected = connected && level.graph.connected();
            // coarse edge weight = fine weight between clusters, cluster sizes add up
            double cut = 0.0;
            for (const auto& e : fine->edges()) {
                if (level.cluster_map[e.i] != level.cluster_map[e.j]) cut += e.w;
            }
            conserved = conserved && cut == level.graph.total_weight();
            std::vector<std::size_t> size(level.graph.n_nodes(), 0);
            for (std::size_t c : level.cluster_map) ++size.at(c);
            conserved = conserved && std::none_of(size.begin(), size.end(), [](std::size_t s) { return s == 0; });
            fine = &level.graph;
        }
        for (std::size_t k = 0; k < 2; ++k) {
            std::vector<std::size_t> members(h.selected_size(k), 0);
            for (std::size_t c : h.composed[k]) ++members.at(c);
            std::size_t total = 0;
            for (std::size_t m : members) total += m;
            conserved = conserved && total == mesh.graph.n_nodes();
        }
        const std::size_t mid = h.selected_size(0), top = h.selected_size(1);
        min_mid = std::min(min_mid, mid);
        max_mid = std::max(max_mid, mid);
        min_top = std::min(min_top, top);
        max_top = std::max(max_top, top);
        near = near && std::abs(static_cast<double>(mid) - 96.0) <= 0.2 * 96.0 &&
               std::abs(static_cast<double>(top) - 48.0) <= 0.2 * 48.0;
    }
    const bool ratios = lo >= 0.5 && hi <= 0.6;
    std::ostringstream d;
    d << "20 seeds: ratios [" << fixed(lo, 3) << ", " << fixed(hi, 3) << "], selected " << min_mid << "-" << max_mid
      << " (target 96) and " << min_top << "-" << max_top << " (target 48), all connected "
      << (connected ? "yes" : "no") << ", weight conservation " << (conserved ? "exact" : "broken");
    return {ratios && connected && conserved && near, d.str()};
}

// ------------------------------------------------------------------ 4

Outcome overfit(const Options& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    SyntheticGenConfig gc;
    gc.n_samples = 64;
    gc.seed = 1;
    gc.noise_std_2d = 0.0;
    const Dataset ds = generate_synthetic(gc, &default_hierarchy());
    HGNConfig mc;
    mc.channels = 64;
    HGNParams model = build(mc, default_hierarchy());
    const double start = evaluate(model, ds).mpjpe_mm;
    TrainConfig tc;
    tc.epochs = opt.overfit_epochs;
    tc.batch_size = 8;
    tc.base_lr = 3e-3;
    tc.lr_decay = 0.8;
    tc.lr_decay_every = 20;
    tc.flip_augment = false;
    tc.val_fraction = 0.0;
    train(model, ds, tc);
    const double end = evaluate(model, ds).mpjpe_mm;
    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << "train MPJPE " << fixed(start) << " -> " << fixed(end) << " mm after " << tc.epochs << " epochs ("
      << fixed(100.0 * end / start, 1) << "% of epoch 0, need < 10%), " << fixed(secs, 0) << " s";
    return {end < 0.1 * start && tc.epochs <= 200 && secs < 600.0, d.str()};
}

// ------------------------------------------------------------------ 5, 6

struct AblationData {
    Dataset train, test;
};

const AblationData& ablation_data(const Options& opt) {
    static const AblationData d = [&] {
        SyntheticGenConfig gc;
        gc.n_samples = opt.ablation_samples;
        gc.seed = 7;
        const Dataset all = generate_synthetic(gc, &default_hierarchy());
        auto [tr, te] = split_dataset(all, 0.2, 0);
        return AblationData{std::move(tr), std::move(te)};
    }();
    return d;
}

TrainConfig ablation_train_config(const Options& opt, std::uint64_t seed) {
    TrainConfig tc;
    tc.epochs = opt.ablation_epochs;
    tc.batch_size = opt.ablation_batch;
    tc.val_fraction = 0.0;
    tc.seed = seed;
    return tc;
}

// Full model, default loss weights: shared by the ablation and mesh criteria.
const EvalReport& full_model_report(const Options& opt, std::uint64_t seed) {
    static std::map<std::uint64_t, EvalReport> cache;
    auto it = cache.find(seed);
    if (it == cache.end()) {
        HGNConfig mc;
        mc.channels = opt.ablation_channels;
        mc.seed = seed;
        HGNParams m = build(mc, default_hierarchy());
        const AblationData& data = ablation_data(opt);
        train(m, data.train, ablation_train_config(opt, seed));
        it = cache.emplace(seed, evaluate(m, data.test)).first;
    }
    return it->second;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome ablation_ordering(const Options& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    const AblationData& data = ablation_data(opt);
    std::vector<double> full, no_top, base;
    std::size_t ok = 0;
    for (std::uint64_t seed = 0; seed < opt.ablation_seeds; ++seed) {
        auto run = [&](Variant v) {
            HGNConfig mc;
            mc.channels = opt.ablation_channels;
            mc.variant = v;
            mc.seed = seed;
            HGNParams m = build(mc, default_hierarchy());
            train(m, data.train, ablation_train_config(opt, seed));
            return evaluate(m, data.test).mpjpe_mm;
        };
        full.push_back(full_model_report(opt, seed).mpjpe_mm);
        no_top.push_back(run(Variant::no_top));
        base.push_back(run(Variant::baseline));
        const bool holds = full.back() <= no_top.back() && no_top.back() <= base.back();
        ok += holds;
        std::cerr << "  ablation seed " << seed << ": full " << fixed(full.back()) << ", no_top " << fixed(no_top.back())
                  << ", baseline " << fixed(base.back()) << (holds ? "" : " (order violated)") << '\n';
    }
    const std::size_t need = opt.ablation_seeds - opt.ablation_seeds / 5;
    std::ostringstream d;
    d << "test MPJPE medians full " << fixed(median(full)) << ", no_top " << fixed(median(no_top)) << ", baseline "
      << fixed(median(base)) << " mm; ordering held in " << ok << "/" << opt.ablation_seeds << " seeds (need "
      << need << "), " << fixed(seconds_since(t0), 0) << " s";
    return {ok >= need, d.str()};
}

double mean_mpvpe(const EvalReport& r) { return 0.5 * (r.mpvpe_mid_mm.value() + r.mpvpe_top_mm.value()); }

Outcome mesh_constraint(const Options& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    const AblationData& data = ablation_data(opt);
    std::size_t ok = 0, mpjpe_better = 0;
    std::vector<double> with, without;
    for (std::uint64_t seed = 0; seed < opt.ablation_seeds; ++seed) {
        HGNConfig mc;
        mc.channels = opt.ablation_channels;
        mc.seed = seed;
        TrainConfig tc = ablation_train_config(opt, seed);

        const EvalReport& ra = full_model_report(opt, seed);  // lambda_m = 0.01

        HGNParams b = build(mc, default_hierarchy());
        tc.loss.lambda_m = 0.0;
        train(b, data.train, tc);
        const double pose_b = evaluate(b, data.test).mpjpe_mm;
        probe_mesh_heads(b, data.train, ablation_train_config(opt, seed));
        const EvalReport rb = evaluate(b, data.test);

        with.push_back(mean_mpvpe(ra));
        without.push_back(mean_mpvpe(rb));
        ok += with.back() < without.back();
        mpjpe_better += ra.mpjpe_mm < pose_b;
        std::cerr << "  mesh seed " << seed << ": MPVPE lambda_m=0.01 " << fixed(with.back()) << ", lambda_m=0 + probe "
                  << fixed(without.back()) << "; MPJPE " << fixed(ra.mpjpe_mm) << " vs " << fixed(pose_b) << '\n';
    }
    const std::size_t need = opt.ablation_seeds - opt.ablation_seeds / 5;
    std::ostringstream d;
    d << "mean test MPVPE (mid/top avg) median " << fixed(median(with)) << " vs " << fixed(median(without))
      << " mm; lower in " << ok << "/" << opt.ablation_seeds << " seeds (need " << need << "); MPJPE improved in "
      << mpjpe_better << "/" << opt.ablation_seeds << " (not gated), " << fixed(seconds_since(t0), 0) << " s";
    return {ok >= need, d.str()};
}

// ------------------------------------------------------------------ 7

Outcome metric_oracles() {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> s(0.5, 2.0);
    double worst_pa = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        Tensor gt({17, 3});
        for (auto& v : gt.span()) v = 300.0 * g(rng);
        const Eigen::Quaterniond q = Eigen::Quaterniond(g(rng), g(rng), g(rng), g(rng)).normalized();
        const Eigen::Matrix3d R = q.toRotationMatrix();
        const Eigen::Vector3d t(500.0 * g(rng), 500.0 * g(rng), 500.0 * g(rng));
        const double c = s(rng);
        Tensor pred({17, 3});
        for (std::size_t j = 0; j < 17; ++j) {
            const Eigen::Vector3d p(gt.at(j, 0), gt.at(j, 1), gt.at(j, 2));
            const Eigen::Vector3d y = c * R * p + t;
            for (int k = 0; k < 3; ++k) pred.at(j, k) = y[k];
        }
        worst_pa = std::max(worst_pa, pa_mpjpe(pred, gt));
    }

    std::size_t violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor a({17, 3}), b({17, 3});
        for (auto& v : a.span()) v = 200.0 * g(rng);
        for (auto& v : b.span()) v = 200.0 * g(rng);
        a = root_center(a);
        b = root_center(b);
        violations += pa_mpjpe(a, b) > mpjpe(a, b);
    }

    auto pck_of = [](double err) {
        const std::vector<double> e(17, err);
        return pck_auc_from_errors(e);
    };
    const PckAuc p0 = pck_of(0.0), p200 = pck_of(200.0), p75 = pck_of(75.0);
    const bool pck = p0.pck == 100.0 && p0.auc == 100.0 && p200.pck == 0.0 && p200.auc == 0.0 && p75.pck == 100.0 &&
                     std::abs(p75.auc - 100.0 * 15.0 / 31.0) < 1e-9;

    std::ostringstream d;
    d << "PA-MPJPE of similarity-transformed GT max " << std::scientific << std::setprecision(2) << worst_pa
      << " mm; pa > mpjpe in " << violations << "/1000 pairs; PCK/AUC examples "
      << (pck ? "exact" : "wrong") << " (75 mm: AUC " << std::fixed << std::setprecision(3) << p75.auc << ")";
    return {worst_pa < 1e-6 && violations == 0 && pck, d.str()};
}

// ------------------------------------------------------------------ 8

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "hgn");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    if (code != 0) std::cerr << err.str();
    return code;
}

Outcome determinism(const Options& opt) {
    const fs::path dir = fs::path(opt.workdir) / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string hier = (dir / "hier").string(), data = (dir / "data.jsonl").string();
    const std::string ckpt = (dir / "model.ckpt").string(), report = (dir / "report.jsonl").string();
    if (run_cli({"coarsen", "--out", hier}) != 0 ||
        run_cli({"gen-data", "--hierarchy", hier, "--out", data, "--set", "n_samples=128"}) != 0) {
        return {false, "setup failed"};
    }
    const std::vector<std::string> train{"train", "--hierarchy", hier, "--dataset", data, "--checkpoint", ckpt,
                                         "--channels", "16", "--seed", "3", "--set", "epochs=3", "--set",
                                         "batch_size=32", "--set", "report=" + report};
    if (run_cli(train) != 0) return {false, "first train run failed"};
    const std::string c1 = slurp(ckpt), r1 = slurp(report);
    if (run_cli(train) != 0) return {false, "second train run failed"};
    const std::string c2 = slurp(ckpt), r2 = slurp(report);
    std::ostringstream d;
    d << "checkpoint " << c1.size() << " bytes " << (c1 == c2 ? "identical" : "DIFFERENT") << ", report "
      << r1.size() << " bytes " << (r1 == r2 ? "identical" : "DIFFERENT");
    return {!c1.empty() && c1 == c2 && !r1.empty() && r1 == r2, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    Options opt;
    std::vector<int> only;
    CLI::App app{"HGN acceptance suite"};
    app.add_option("--only", only, "Run only these criteria (1-8)")->check(CLI::Range(1, 8));
    app.add_option("--ablation-seeds", opt.ablation_seeds);
    app.add_option("--ablation-samples", opt.ablation_samples);
    app.add_option("--ablation-channels", opt.ablation_channels);
    app.add_option("--ablation-epochs", opt.ablation_epochs);
    app.add_option("--ablation-batch", opt.ablation_batch);
    app.add_option("--overfit-epochs", opt.overfit_epochs);
    app.add_option("--workdir", opt.workdir);
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient suite", gradient_suite},
        {"parameter counts", parameter_counts},
        {"coarsening", coarsening},
        {"overfit", [&] { return overfit(opt); }},
        {"ablation ordering", [&] { return ablation_ordering(opt); }},
        {"mesh constraint", [&] { return mesh_constraint(opt); }},
        {"metric oracles", metric_oracles},
        {"determinism", [&] { return determinism(opt); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << "criterion " << n << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
                  << o.detail << std::endl;
    }
    return failed;
}
