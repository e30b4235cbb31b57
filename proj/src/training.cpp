#include "hgn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <unordered_map>

#include "hgn/skeleton.hpp"

namespace hgn {

namespace {

std::span<const std::pair<std::size_t, std::size_t>> default_pairs() {
    return {skeleton::kLeftRightPairs.data(), skeleton::kLeftRightPairs.size()};
}

std::vector<std::size_t> mirror_permutation(std::span<const std::pair<std::size_t, std::size_t>> pairs) {
    std::vector<std::size_t> perm(skeleton::kJoints);
    std::iota(perm.begin(), perm.end(), 0);
    std::set<std::size_t> seen;
    for (const auto& [l, r] : pairs) {
        if (l >= skeleton::kJoints || r >= skeleton::kJoints || l == r || !seen.insert(l).second ||
            !seen.insert(r).second) {
            throw std::invalid_argument("invalid left/right pair (" + std::to_string(l) + ", " +
                                        std::to_string(r) + ")");
        }
        perm[l] = r;
        perm[r] = l;
    }
    return perm;
}

// (n, c) joint table mirrored: row j of the result is row perm[j] with x negated.
Tensor mirror_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
    Tensor out(t.shape());
    const std::size_t c = t.dim(1);
    for (std::size_t j = 0; j < t.dim(0); ++j) {
        for (std::size_t k = 0; k < c; ++k) out.at(j, k) = t.at(perm[j], k);
        out.at(j, 0) = -out.at(j, 0);
    }
    return out;
}

ad::Variable squared_error(const ad::Variable& pred, const Tensor& target, const Tensor* mask) {
    if (pred.shape() != target.shape()) throw ShapeError("compute_loss", pred.shape(), target.shape());
    ad::Tape& tape = *pred.tape();
    ad::Variable d = ad::sub(pred, tape.constant(target));
    if (mask != nullptr) d = ad::hadamard(d, tape.constant(*mask));
    return ad::sum(ad::square(d));
}

// Broadcast a per-sample 0/1 mask over (B, n, 3).
Tensor expand_mask(const std::vector<double>& mask, const Shape& shape) {
    Tensor m(shape);
    const std::size_t per = shape[1] * shape[2];
    for (std::size_t b = 0; b < shape[0]; ++b) {
        std::fill(m.data() + b * per, m.data() + (b + 1) * per, mask[b]);
    }
    return m;
}

bool starts_with_any(const std::string& name, const std::vector<std::string>& prefixes) {
    for (const auto& p : prefixes) {
        if (name.rfind(p, 0) == 0) return true;
    }
    return false;
}

struct Predictions {
    Tensor pose_mm;
    std::optional<Tensor> mid_mm;
    std::optional<Tensor> top_mm;
};

void copy_rows(const Tensor& src, std::size_t src_item, Tensor& dst, std::size_t dst_item, double scale) {
    const std::size_t per = src.dim(1) * src.dim(2);
    for (std::size_t i = 0; i < per; ++i) dst[dst_item * per + i] = src[src_item * per + i] * scale;
}

Predictions predict_all(const HGNParams& model, const std::vector<PoseSample>& samples, bool flip_eval,
                        std::size_t batch_size) {
    const std::size_t k = samples.size();
    Predictions out;
    out.pose_mm = Tensor({k, skeleton::kJoints, 3});
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < k; start += batch_size) {
        const std::size_t end = std::min(k, start + batch_size);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Batch b = make_batch(samples, idx);
        Prediction p = predict(model, b.x2d);
        if (flip_eval) {
            Prediction q = predict(model, flip_joints(b.x2d, default_pairs()));
            Tensor back = flip_joints(q.pose, default_pairs());
            for (std::size_t i = 0; i < p.pose.size(); ++i) p.pose[i] = 0.5 * (p.pose[i] + back[i]);
        }
        for (std::size_t i = 0; i < idx.size(); ++i) {
            copy_rows(p.pose, i, out.pose_mm, start + i, 1.0 / kMetresPerMm);
            if (p.mesh_mid) {
                if (!out.mid_mm) out.mid_mm = Tensor({k, p.mesh_mid->dim(1), 3});
                copy_rows(*p.mesh_mid, i, *out.mid_mm, start + i, 1.0 / kMetresPerMm);
            }
            if (p.mesh_top) {
                if (!out.top_mm) out.top_mm = Tensor({k, p.mesh_top->dim(1), 3});
                copy_rows(*p.mesh_top, i, *out.top_mm, start + i, 1.0 / kMetresPerMm);
            }
        }
    }
    // Root-centre the poses; mesh predictions already live in the pelvis frame.
    for (std::size_t s = 0; s < k; ++s) {
        double root[3];
        for (int c = 0; c < 3; ++c) root[c] = out.pose_mm.at(s, skeleton::kPelvis, c);
        for (std::size_t j = 0; j < skeleton::kJoints; ++j) {
            for (int c = 0; c < 3; ++c) out.pose_mm.at(s, j, c) -= root[c];
        }
    }
    return out;
}

Tensor stack_mm(const std::vector<PoseSample>& samples, const std::optional<Tensor> PoseSample::*field) {
    const Tensor& first = *(samples.front().*field);
    Tensor out({samples.size(), first.dim(0), 3});
    const std::size_t per = first.size();
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const Tensor& t = *(samples[s].*field);
        if (t.shape() != first.shape()) throw ShapeError("evaluate (mesh targets)", t.shape(), first.shape());
        std::copy(t.values().begin(), t.values().end(), out.data() + s * per);
    }
    return out;
}

}  // namespace

void LossWeights::validate() const {
    if (!(lambda_p >= 0.0) || !(lambda_m >= 0.0)) {
        throw std::invalid_argument("loss weights must be >= 0");
    }
}

Batch make_batch(const std::vector<PoseSample>& samples, std::span<const std::size_t> indices) {
    const std::size_t bsz = indices.size();
    if (bsz == 0) throw std::invalid_argument("make_batch: empty batch");
    Batch b;
    b.x2d = Tensor({bsz, skeleton::kJoints, 2});
    b.pose = Tensor({bsz, skeleton::kJoints, 3});
    b.mesh_mask.assign(bsz, 0.0);
    std::size_t n_mid = 0, n_top = 0;
    for (std::size_t i : indices) {
        const PoseSample& s = samples.at(i);
        if (s.mesh_mid) n_mid = s.mesh_mid->dim(0);
        if (s.mesh_top) n_top = s.mesh_top->dim(0);
    }
    if (n_mid > 0) b.mesh_mid = Tensor({bsz, n_mid, 3});
    if (n_top > 0) b.mesh_top = Tensor({bsz, n_top, 3});
    for (std::size_t r = 0; r < bsz; ++r) {
        const PoseSample& s = samples[indices[r]];
        if (s.joints2d.shape() != Shape{skeleton::kJoints, 2} || s.joints3d.shape() != Shape{skeleton::kJoints, 3}) {
            throw ShapeError("make_batch: sample joints must be (17, 2) and (17, 3)");
        }
        std::copy(s.joints2d.values().begin(), s.joints2d.values().end(), b.x2d.data() + r * 34);
        for (std::size_t i = 0; i < 51; ++i) b.pose[r * 51 + i] = s.joints3d[i] * kMetresPerMm;
        const bool has = (n_mid == 0 || s.mesh_mid) && (n_top == 0 || s.mesh_top) && (s.mesh_mid || s.mesh_top);
        if (!has) continue;
        b.mesh_mask[r] = 1.0;
        auto put = [&](const std::optional<Tensor>& src, std::optional<Tensor>& dst) {
            if (!dst) return;
            if (src->dim(0) != dst->dim(1)) {
                throw ShapeError("make_batch (mesh targets)", src->shape(), Shape{dst->dim(1), 3});
            }
            const std::size_t per = src->size();
            for (std::size_t i = 0; i < per; ++i) (*dst)[r * per + i] = (*src)[i] * kMetresPerMm;
        };
        put(s.mesh_mid, b.mesh_mid);
        put(s.mesh_top, b.mesh_top);
    }
    return b;
}

ad::Variable compute_loss(const ModelOutputs& out, const Batch& batch, const LossWeights& w) {
    w.validate();
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    ad::Variable loss = ad::scale(squared_error(out.pose, batch.pose, nullptr), w.lambda_p * inv_b);
    const bool all_mesh = std::all_of(batch.mesh_mask.begin(), batch.mesh_mask.end(),
                                      [](double m) { return m == 1.0; });
    auto mesh_term = [&](const std::optional<ad::Variable>& pred, const std::optional<Tensor>& target) {
        if (!pred || !target) return;
        if (pred->shape() != target->shape()) throw ShapeError("compute_loss", pred->shape(), target->shape());
        Tensor mask;
        if (!all_mesh) mask = expand_mask(batch.mesh_mask, target->shape());
        ad::Variable t = squared_error(*pred, *target, all_mesh ? nullptr : &mask);
        loss = ad::add(loss, ad::scale(t, w.lambda_m * inv_b));
    };
    mesh_term(out.mesh_mid, batch.mesh_mid);
    mesh_term(out.mesh_top, batch.mesh_top);
    return loss;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("lr_decay must lie in (0, 1]");
    if (lr_decay_every < 1) throw std::invalid_argument("lr_decay_every must be >= 1");
    if (!(base_lr > 0.0)) throw std::invalid_argument("base_lr must be positive");
    if (!(max_norm >= 0.0)) throw std::invalid_argument("max_norm must be >= 0 (0 disables it)");
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
        throw std::invalid_argument("flip_probability must lie in [0, 1]");
    }
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
        throw std::invalid_argument("val_fraction must lie in [0, 1)");
    }
    loss.validate();
}

nlohmann::json TrainConfig::to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"base_lr", base_lr},
            {"lr_decay", lr_decay},
            {"lr_decay_every", lr_decay_every},
            {"lr_schedule", decay_kind == LrDecay::step ? "step" : "exponential"},
            {"max_norm", max_norm},
            {"flip_augment", flip_augment},
            {"flip_probability", flip_probability},
            {"lambda_p", loss.lambda_p},
            {"lambda_m", loss.lambda_m},
            {"val_fraction", val_fraction},
            {"trainable_prefixes", trainable_prefixes},
            {"seed", seed}};
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    const double e = static_cast<double>(epoch), every = static_cast<double>(cfg.lr_decay_every);
    const double power = cfg.decay_kind == LrDecay::step ? std::floor(e / every) : e / every;
    return cfg.base_lr * std::pow(cfg.lr_decay, power);
}

void adam_step(AdamState& state, std::vector<ParamRef>& params, const std::vector<Tensor>& grads,
               double lr) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " parameters, " +
                                    std::to_string(grads.size()) + " gradients");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i].value->shape()) {
            throw ShapeError("adam_step (" + params[i].name + ")", grads[i].shape(), params[i].value->shape());
        }
        if (!grads[i].all_finite()) {
            throw NumericError("non-finite gradient in parameter '" + params[i].name + "'");
        }
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t), c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].value;
        auto [it, fresh] = state.moments.try_emplace(params[i].name);
        if (fresh) {
            it->second.m = Tensor(p.shape());
            it->second.v = Tensor(p.shape());
        }
        Tensor& m = it->second.m;
        Tensor& v = it->second.v;
        const Tensor& g = grads[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            const double mhat = m[k] / c1, vhat = v[k] / c2;
            p[k] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

void max_norm_clip(std::vector<ParamRef>& params, double threshold) {
    if (!(threshold > 0.0)) throw std::invalid_argument("max_norm threshold must be positive");
    for (auto& r : params) {
        if (r.role != ParamRole::weight || r.value->rank() != 2) continue;
        Tensor& w = *r.value;
        const std::size_t rows = w.dim(0), cols = w.dim(1);
        for (std::size_t i = 0; i < rows; ++i) {
            double sq = 0.0;
            for (std::size_t j = 0; j < cols; ++j) sq += w.at(i, j) * w.at(i, j);
            const double norm = std::sqrt(sq);
            if (norm <= threshold) continue;
            const double f = threshold / norm;
            for (std::size_t j = 0; j < cols; ++j) w.at(i, j) *= f;
        }
    }
}

Tensor flip_joints(const Tensor& joints, std::span<const std::pair<std::size_t, std::size_t>> pairs) {
    const auto perm = mirror_permutation(pairs);
    if (joints.rank() == 2) return mirror_rows(joints, perm);
    if (joints.rank() != 3 || joints.dim(1) != skeleton::kJoints) {
        throw ShapeError("flip_joints expects (B, 17, C), got " + shape_str(joints.shape()));
    }
    Tensor out(joints.shape());
    const std::size_t c = joints.dim(2);
    for (std::size_t b = 0; b < joints.dim(0); ++b) {
        for (std::size_t j = 0; j < skeleton::kJoints; ++j) {
            for (std::size_t k = 0; k < c; ++k) out.at(b, j, k) = joints.at(b, perm[j], k);
            out.at(b, j, 0) = -out.at(b, j, 0);
        }
    }
    return out;
}

PoseSample flip_augment(const PoseSample& s, std::span<const std::pair<std::size_t, std::size_t>> pairs) {
    const auto perm = mirror_permutation(pairs);
    PoseSample out = s;
    out.joints2d = mirror_rows(s.joints2d, perm);
    out.joints3d = mirror_rows(s.joints3d, perm);
    out.mesh_mid.reset();
    out.mesh_top.reset();
    return out;
}

PoseSample flip_augment(const PoseSample& s) { return flip_augment(s, default_pairs()); }

nlohmann::json EpochRecord::to_json() const {
    nlohmann::json j{{"epoch", epoch}, {"lr", lr}, {"train_loss", train_loss}, {"steps", steps}};
    j["val_mpjpe_mm"] = val_mpjpe_mm ? nlohmann::json(*val_mpjpe_mm) : nlohmann::json(nullptr);
    if (train_mpjpe_mm) j["train_mpjpe_mm"] = *train_mpjpe_mm;
    if (wall_ms) j["wall_ms"] = *wall_ms;
    return j;
}

TrainReport train(HGNParams& model, const Dataset& dataset, const TrainConfig& cfg, std::ostream* report,
                  const nlohmann::json& config_echo) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    Dataset train_set, val_set;
    if (cfg.val_fraction > 0.0) {
        std::tie(train_set, val_set) = split_dataset(dataset, cfg.val_fraction, cfg.seed);
    } else {
        train_set = dataset;
    }
    if (train_set.empty()) throw std::invalid_argument("train: the split left no training samples");

    std::vector<ParamRef> all = model.parameters();
    std::vector<ParamRef> trainable;
    std::unordered_map<const Tensor*, bool> is_trainable;
    for (const auto& r : all) {
        const bool on = cfg.trainable_prefixes.empty() || starts_with_any(r.name, cfg.trainable_prefixes);
        is_trainable[r.value] = on;
        if (on) trainable.push_back(r);
    }
    if (trainable.empty()) throw std::invalid_argument("train: no parameter matches trainable_prefixes");
    const bool frozen_trunk = !cfg.trainable_prefixes.empty();
    std::unordered_map<const BatchNormState*, BatchNormState*> bn_lookup;
    for (BatchNormState* bn : model.batch_norms()) bn_lookup[bn] = bn;

    TrainReport out;
    out.param_count = param_count(model);
    out.train_samples = train_set.size();
    out.val_samples = val_set.size();
    if (report != nullptr) *report << config_echo.dump() << '\n';

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    AdamState adam;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<PoseSample> batch_samples;
    std::vector<std::size_t> batch_idx;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at(epoch, cfg);
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            batch_samples.clear();
            for (std::size_t i = start; i < end; ++i) {
                const PoseSample& s = train_set.samples[order[i]];
                const bool flip = cfg.flip_augment && unit(rng) < cfg.flip_probability;
                batch_samples.push_back(flip ? flip_augment(s) : s);
            }
            batch_idx.resize(batch_samples.size());
            std::iota(batch_idx.begin(), batch_idx.end(), 0);
            const Batch batch = make_batch(batch_samples, batch_idx);

            ad::Tape tape;
            ParamBinder bind(tape, true, [&](const Tensor* t) {
                auto it = is_trainable.find(t);
                return it != is_trainable.end() && it->second;
            });
            std::vector<BatchNormUpdate> updates;
            ForwardContext ctx{bind, frozen_trunk ? Mode::eval : Mode::train,
                               frozen_trunk ? nullptr : &updates};
            const ModelOutputs outputs = forward(ctx, model, tape.constant(batch.x2d));
            const ad::Variable loss = compute_loss(outputs, batch, cfg.loss);
            const double lv = loss.value()[0];
            if (!std::isfinite(lv)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                   std::to_string(steps + 1));
            }
            tape.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(trainable.size());
            for (const auto& r : trainable) grads.push_back(bind.grad(*r.value));
            try {
                adam_step(adam, trainable, grads, lr);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) +
                                   ", batch " + std::to_string(steps + 1));
            }
            for (const auto& u : updates) apply_running_update(*bn_lookup.at(u.target), u.stats);
            if (cfg.max_norm > 0.0) max_norm_clip(trainable, cfg.max_norm);
            loss_sum += lv;
            ++steps;
        }

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.lr = lr;
        rec.steps = steps;
        rec.train_loss = loss_sum / static_cast<double>(steps);
        if (!val_set.empty()) rec.val_mpjpe_mm = evaluate(model, val_set).mpjpe_mm;
        if (cfg.track_train_mpjpe) rec.train_mpjpe_mm = evaluate(model, train_set).mpjpe_mm;
        if (cfg.report_wall_time) {
            rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        }
        if (report != nullptr) *report << rec.to_json().dump() << '\n';
        out.epochs.push_back(rec);
    }
    out.optimizer = std::move(adam);
    return out;
}

Tensor predict_poses_mm(const HGNParams& model, const std::vector<PoseSample>& samples, bool flip_eval,
                        std::size_t batch_size) {
    if (samples.empty()) return Tensor({0, skeleton::kJoints, 3});
    return predict_all(model, samples, flip_eval, std::max<std::size_t>(1, batch_size)).pose_mm;
}

EvalReport evaluate(const HGNParams& model, const Dataset& dataset, const EvalOptions& opts) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    const Predictions p = predict_all(model, dataset.samples, opts.flip_eval, std::max<std::size_t>(1, opts.batch_size));
    Tensor gt({dataset.size(), skeleton::kJoints, 3});
    std::vector<std::string> actions;
    for (std::size_t s = 0; s < dataset.size(); ++s) {
        const Tensor centred = root_center(dataset.samples[s].joints3d);
        std::copy(centred.values().begin(), centred.values().end(), gt.data() + s * 51);
        actions.push_back(dataset.samples[s].action);
    }
    EvalReport r = make_eval_report(p.pose_mm, gt, actions, opts.pa_with_scale, opts.pck);
    const bool meshes = std::all_of(dataset.samples.begin(), dataset.samples.end(),
                                    [](const PoseSample& s) { return s.mesh_mid && s.mesh_top; });
    if (meshes) {
        if (p.mid_mm) r.mpvpe_mid_mm = mpvpe(*p.mid_mm, stack_mm(dataset.samples, &PoseSample::mesh_mid));
        if (p.top_mm) r.mpvpe_top_mm = mpvpe(*p.top_mm, stack_mm(dataset.samples, &PoseSample::mesh_top));
    }
    return r;
}

ModelGradCheck model_gradient_check(const HGNParams& model, const Batch& batch, const LossWeights& w,
                                    double step, std::size_t coords_per_tensor, std::uint64_t seed) {
    HGNParams copy = model;
    std::vector<ParamRef> params;
    for (const auto& r : copy.parameters()) {
        if (r.learnable > 0) params.push_back(r);
    }
    std::vector<Tensor> point;
    for (const auto& r : params) point.push_back(*r.value);
    auto f = [&](ad::Tape& tape, const std::vector<ad::Variable>& vars) {
        ParamBinder bind(tape);
        for (std::size_t i = 0; i < params.size(); ++i) bind.bind(*params[i].value, vars[i]);
        ForwardContext ctx{bind, Mode::train, nullptr};
        return compute_loss(forward(ctx, copy, tape.constant(batch.x2d)), batch, w);
    };
    ad::GradCheckOptions opts;
    opts.max_coords_per_input = coords_per_tensor;
    opts.seed = seed;
    {
        // Rounding in the loss limits what central differences can resolve.
        // Biases feeding train-mode batch norm have exactly zero gradient and
        // land here instead of producing a meaningless relative error.
        ad::Tape tape;
        std::vector<ad::Variable> vars;
        for (const auto& p : point) vars.push_back(tape.constant(p));
        const double f0 = f(tape, vars).value()[0];
        opts.zero_tol = 1e4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f0)) / step;
    }
    ModelGradCheck out;
    out.result = ad::gradient_check(f, point, step, opts);
    out.worst_param = params.at(out.result.worst_input).name;
    out.tensors_checked = params.size();
    return out;
}

TrainReport probe_mesh_heads(HGNParams& model, const Dataset& dataset, TrainConfig cfg) {
    cfg.trainable_prefixes = {"head.mesh_mid", "head.mesh_top"};
    cfg.loss.lambda_p = 0.0;
    cfg.loss.lambda_m = 1.0;
    cfg.flip_augment = false;
    return train(model, dataset, cfg);
}

}  // namespace hgn
