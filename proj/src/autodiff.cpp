#include "hgn/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

#include "hgn/kernels.hpp"

namespace hgn::ad {

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 15> kKindNames{{
    {OpKind::leaf, "leaf"},
    {OpKind::matmul, "matmul"},
    {OpKind::add, "add"},
    {OpKind::sub, "sub"},
    {OpKind::hadamard, "hadamard"},
    {OpKind::relu, "relu"},
    {OpKind::scale, "scale"},
    {OpKind::sum, "sum"},
    {OpKind::mean, "mean"},
    {OpKind::transpose, "transpose"},
    {OpKind::concat_channels, "concat_channels"},
    {OpKind::square, "square"},
    {OpKind::add_bias, "add_bias"},
    {OpKind::masked_softmax, "masked_softmax"},
    {OpKind::batch_norm, "batch_norm"},
}};

Tape& tape_of(const Variable& a) {
    if (!a.valid()) throw AutodiffError("operation on an unbound Variable");
    return *a.tape();
}

Tape& same_tape(const Variable& a, const Variable& b) {
    Tape& t = tape_of(a);
    if (&tape_of(b) != &t) throw AutodiffError("operands belong to different tapes");
    return t;
}

// Elementwise binary layout: equal shapes, or a rank-2 operand broadcast
// over the batch axis of a rank-3 operand.
struct Broadcast {
    Shape out;
    std::size_t batch = 1;  // repetitions of the small operand
    bool a_small = false;
    bool b_small = false;
};

Broadcast broadcast_layout(std::string_view op, const Shape& a, const Shape& b) {
    if (a == b) return {a, 1, false, false};
    if (a.size() == 3 && b.size() == 2 && a[1] == b[0] && a[2] == b[1]) {
        return {a, a[0], false, true};
    }
    if (a.size() == 2 && b.size() == 3 && b[1] == a[0] && b[2] == a[1]) {
        return {b, b[0], true, false};
    }
    throw ShapeError(op, a, b);
}

// g (out-shaped) reduced into the gradient of a possibly broadcast operand.
void accumulate_broadcast(Tensor* dst, const Tensor& g, bool small, std::size_t batch,
                          double sign = 1.0) {
    if (!dst) return;
    if (!small) {
        for (std::size_t i = 0; i < g.size(); ++i) (*dst)[i] += sign * g[i];
        return;
    }
    const std::size_t inner = dst->size();
    for (std::size_t b = 0; b < batch; ++b) {
        const double* src = g.data() + b * inner;
        for (std::size_t i = 0; i < inner; ++i) (*dst)[i] += sign * src[i];
    }
}

std::size_t leading_rows(const Shape& s) {
    std::size_t r = 1;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
    return r;
}

}  // namespace

std::string_view kind_name(OpKind k) {
    for (const auto& [kind, name] : kKindNames) {
        if (kind == k) return name;
    }
    return "?";
}

OpKind parse_kind(std::string_view name) {
    for (const auto& [kind, n] : kKindNames) {
        if (n == name) return kind;
    }
    throw AutodiffError("unknown operation kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- Variable

const Tensor& Variable::value() const { return tape_of(*this).value(id_); }

Tensor Variable::grad() const {
    const Tensor* g = tape_of(*this).grad_if_any(id_);
    return g ? *g : Tensor(value().shape());
}

bool Variable::requires_grad() const { return tape_of(*this).requires_grad(id_); }

// -------------------------------------------------------------------- Tape

Variable Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.kind = OpKind::leaf;
    nodes_.push_back(std::move(n));
    return Variable(this, nodes_.size() - 1);
}

Variable Tape::push(OpKind kind, Tensor value, const std::vector<Variable>& inputs,
                    BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.kind = kind;
    for (const auto& v : inputs) {
        if (v.tape() != this) throw AutodiffError("input belongs to a different tape");
        n.inputs.push_back(v.id());
        n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Variable(this, nodes_.size() - 1);
}

Tensor* Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return nullptr;
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
    return &n.grad;
}

const Tensor* Tape::grad_if_any(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (!n.requires_grad || n.grad.shape() != n.value.shape()) return nullptr;
    return &n.grad;
}

GradientMap Tape::backward(const Variable& output) {
    if (output.tape() != this) throw AutodiffError("backward: output belongs to a different tape");
    const std::size_t out = output.id();
    if (nodes_[out].value.size() != 1) {
        throw AutodiffError("backward: output must be scalar, got shape " +
                            shape_str(nodes_[out].value.shape()));
    }
    for (auto& n : nodes_) {
        if (n.kind != OpKind::leaf && n.grad.size()) n.grad.fill(0.0);
    }
    GradientMap result;
    if (!nodes_[out].requires_grad) return result;
    (*grad_buffer(out))[0] += 1.0;
    for (std::size_t i = out + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.kind == OpKind::leaf || !n.backward || n.grad.size() == 0) continue;
        n.backward(*this, i);
    }
    for (std::size_t i = 0; i <= out; ++i) {
        const Node& n = nodes_[i];
        if (n.kind == OpKind::leaf && n.requires_grad) {
            result.emplace(i, n.grad.size() ? n.grad : Tensor(n.value.shape()));
        }
    }
    return result;
}

void Tape::zero_grad() {
    for (auto& n : nodes_) {
        if (n.grad.size()) n.grad.fill(0.0);
    }
}

std::vector<Tape::Record> Tape::records() const {
    std::vector<Record> r;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].kind != OpKind::leaf && nodes_[i].backward) {
            r.push_back({nodes_[i].kind, nodes_[i].inputs, i});
        }
    }
    return r;
}

// -------------------------------------------------------------- primitives

Variable matmul(const Variable& a, const Variable& b, bool transpose_b) {
    Tape& t = same_tape(a, b);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const bool ok_ranks = (sa.size() == 2 || sa.size() == 3) && (sb.size() == 2 || sb.size() == 3);
    if (!ok_ranks) throw ShapeError("matmul", sa, sb);

    const std::size_t ia = a.id(), ib = b.id();

    if (sb.size() == 2) {
        // (m, k) or (batch, rows, k) against a shared (k, n) / (n, k) matrix.
        const std::size_t k = sa.back();
        const std::size_t m = leading_rows(sa);
        const std::size_t kb = transpose_b ? sb[1] : sb[0];
        const std::size_t n = transpose_b ? sb[0] : sb[1];
        if (kb != k) throw ShapeError("matmul", sa, sb);
        Shape so = sa;
        so.back() = n;
        Tensor out(so);
        // One GEMM per batch item, so every item sees the same arithmetic
        // regardless of its position in the batch.
        const std::size_t items = sa.size() == 3 ? sa[0] : 1;
        const std::size_t rows = m / items;
        kernels::gemm_batched(items, false, transpose_b, rows, n, k, a.value().data(), rows * k,
                              b.value().data(), 0, out.data(), rows * n, false);
        return t.push(OpKind::matmul, std::move(out), {a, b},
                      [ia, ib, m, n, k, items, rows, transpose_b](Tape& tp, std::size_t self) {
                          const Tensor& g = *tp.grad_if_any(self);
                          if (Tensor* ga = tp.grad_buffer(ia)) {
                              kernels::gemm_batched(items, false, !transpose_b, rows, k, n,
                                                    g.data(), rows * n, tp.value(ib).data(), 0,
                                                    ga->data(), rows * k, true);
                          }
                          if (Tensor* gb = tp.grad_buffer(ib)) {
                              if (!transpose_b) {
                                  kernels::gemm(true, false, k, n, m, tp.value(ia).data(),
                                                g.data(), gb->data(), true);
                              } else {
                                  kernels::gemm(true, false, n, k, m, g.data(),
                                                tp.value(ia).data(), gb->data(), true);
                              }
                          }
                      });
    }

    if (sa.size() == 2) {
        // Shared left operand (m, r) against a batch of (r, d).
        if (transpose_b || sb[1] != sa[1]) throw ShapeError("matmul", sa, sb);
        const std::size_t batch = sb[0], m = sa[0], r = sa[1], d = sb[2];
        Tensor out({batch, m, d});
        kernels::gemm_batched(batch, false, false, m, d, r, a.value().data(), 0, b.value().data(),
                              r * d, out.data(), m * d, false);
        return t.push(OpKind::matmul, std::move(out), {a, b},
                      [ia, ib, batch, m, r, d](Tape& tp, std::size_t self) {
                          const Tensor& g = *tp.grad_if_any(self);
                          if (Tensor* gb = tp.grad_buffer(ib)) {
                              kernels::gemm_batched(batch, true, false, r, d, m,
                                                    tp.value(ia).data(), 0, g.data(), m * d,
                                                    gb->data(), r * d, true);
                          }
                          if (Tensor* ga = tp.grad_buffer(ia)) {
                              const double* x = tp.value(ib).data();
                              for (std::size_t i = 0; i < batch; ++i) {
                                  kernels::gemm(false, true, m, r, d, g.data() + i * m * d,
                                                x + i * r * d, ga->data(), true);
                              }
                          }
                      });
    }

    // Batched (batch, m, k) x (batch, k, n) or (batch, n, k)^T.
    if (sa[0] != sb[0]) throw ShapeError("matmul", sa, sb);
    const std::size_t batch = sa[0], m = sa[1], k = sa[2];
    const std::size_t kb = transpose_b ? sb[2] : sb[1];
    const std::size_t n = transpose_b ? sb[1] : sb[2];
    if (kb != k) throw ShapeError("matmul", sa, sb);
    Tensor out({batch, m, n});
    kernels::gemm_batched(batch, false, transpose_b, m, n, k, a.value().data(), m * k,
                          b.value().data(), k * n, out.data(), m * n, false);
    return t.push(OpKind::matmul, std::move(out), {a, b},
                  [ia, ib, batch, m, n, k, transpose_b](Tape& tp, std::size_t self) {
                      const Tensor& g = *tp.grad_if_any(self);
                      if (Tensor* ga = tp.grad_buffer(ia)) {
                          kernels::gemm_batched(batch, false, !transpose_b, m, k, n, g.data(),
                                                m * n, tp.value(ib).data(), k * n, ga->data(),
                                                m * k, true);
                      }
                      if (Tensor* gb = tp.grad_buffer(ib)) {
                          if (!transpose_b) {
                              kernels::gemm_batched(batch, true, false, k, n, m,
                                                    tp.value(ia).data(), m * k, g.data(), m * n,
                                                    gb->data(), k * n, true);
                          } else {
                              kernels::gemm_batched(batch, true, false, n, k, m, g.data(), m * n,
                                                    tp.value(ia).data(), m * k, gb->data(),
                                                    k * n, true);
                          }
                      }
                  });
}

namespace {

Variable add_or_sub(const Variable& a, const Variable& b, double sign, OpKind kind) {
    Tape& t = same_tape(a, b);
    const auto layout = broadcast_layout(kind_name(kind), a.shape(), b.shape());
    Tensor out(layout.out);
    const Tensor& va = a.value();
    const Tensor& vb = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = layout.a_small ? va[i % va.size()] : va[i];
        const double y = layout.b_small ? vb[i % vb.size()] : vb[i];
        out[i] = x + sign * y;
    }
    const std::size_t ia = a.id(), ib = b.id();
    return t.push(kind, std::move(out), {a, b}, [ia, ib, layout, sign](Tape& tp, std::size_t self) {
        const Tensor& g = *tp.grad_if_any(self);
        accumulate_broadcast(tp.grad_buffer(ia), g, layout.a_small, layout.batch);
        accumulate_broadcast(tp.grad_buffer(ib), g, layout.b_small, layout.batch, sign);
    });
}

}  // namespace

Variable add(const Variable& a, const Variable& b) { return add_or_sub(a, b, 1.0, OpKind::add); }
Variable sub(const Variable& a, const Variable& b) { return add_or_sub(a, b, -1.0, OpKind::sub); }

Variable hadamard(const Variable& a, const Variable& b) {
    Tape& t = same_tape(a, b);
    const auto layout = broadcast_layout("hadamard", a.shape(), b.shape());
    Tensor out(layout.out);
    const Tensor& va = a.value();
    const Tensor& vb = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (layout.a_small ? va[i % va.size()] : va[i]) *
                 (layout.b_small ? vb[i % vb.size()] : vb[i]);
    }
    const std::size_t ia = a.id(), ib = b.id();
    return t.push(OpKind::hadamard, std::move(out), {a, b},
                  [ia, ib, layout](Tape& tp, std::size_t self) {
                      const Tensor& g = *tp.grad_if_any(self);
                      const Tensor& va = tp.value(ia);
                      const Tensor& vb = tp.value(ib);
                      if (Tensor* ga = tp.grad_buffer(ia)) {
                          for (std::size_t i = 0; i < g.size(); ++i) {
                              const double y = layout.b_small ? vb[i % vb.size()] : vb[i];
                              (*ga)[layout.a_small ? i % va.size() : i] += g[i] * y;
                          }
                      }
                      if (Tensor* gb = tp.grad_buffer(ib)) {
                          for (std::size_t i = 0; i < g.size(); ++i) {
                              const double x = layout.a_small ? va[i % va.size()] : va[i];
                              (*gb)[layout.b_small ? i % vb.size() : i] += g[i] * x;
                          }
                      }
                  });
}

Variable relu(const Variable& x) {
    Tape& t = tape_of(x);
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    const std::size_t ix = x.id();
    return t.push(OpKind::relu, std::move(out), {x}, [ix](Tape& tp, std::size_t self) {
        const Tensor& g = *tp.grad_if_any(self);
        const Tensor& v = tp.value(ix);
        Tensor* gx = tp.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (v[i] > 0.0) (*gx)[i] += g[i];
        }
    });
}

Variable scale(const Variable& x, double s) {
    Tape& t = tape_of(x);
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    const std::size_t ix = x.id();
    return t.push(OpKind::scale, std::move(out), {x}, [ix, s](Tape& tp, std::size_t self) {
        const Tensor& g = *tp.grad_if_any(self);
        Tensor* gx = tp.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += s * g[i];
    });
}

Variable sum(const Variable& x) {
    Tape& t = tape_of(x);
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    const std::size_t ix = x.id();
    return t.push(OpKind::sum, Tensor::scalar(s), {x}, [ix](Tape& tp, std::size_t self) {
        const double g = (*tp.grad_if_any(self))[0];
        Tensor* gx = tp.grad_buffer(ix);
        for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += g;
    });
}

Variable mean(const Variable& x) {
    Tape& t = tape_of(x);
    const std::size_t n = x.value().size();
    if (n == 0) throw ShapeError("mean", x.shape(), Shape{});
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    const std::size_t ix = x.id();
    return t.push(OpKind::mean, Tensor::scalar(s / static_cast<double>(n)), {x},
                  [ix, n](Tape& tp, std::size_t self) {
                      const double g = (*tp.grad_if_any(self))[0] / static_cast<double>(n);
                      Tensor* gx = tp.grad_buffer(ix);
                      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += g;
                  });
}

namespace {

void transpose_into(const Tensor& in, Tensor& out, bool accumulate) {
    const Shape& s = in.shape();
    const std::size_t batch = s.size() == 3 ? s[0] : 1;
    const std::size_t r = s[s.size() - 2], c = s.back();
    for (std::size_t b = 0; b < batch; ++b) {
        const double* src = in.data() + b * r * c;
        double* dst = out.data() + b * r * c;
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                if (accumulate) {
                    dst[j * r + i] += src[i * c + j];
                } else {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
    }
}

}  // namespace

Variable transpose(const Variable& x) {
    Tape& t = tape_of(x);
    const Shape& s = x.shape();
    if (s.size() != 2 && s.size() != 3) throw ShapeError("transpose", s, Shape{});
    Shape so = s;
    std::swap(so[so.size() - 1], so[so.size() - 2]);
    Tensor out(so);
    transpose_into(x.value(), out, false);
    const std::size_t ix = x.id();
    return t.push(OpKind::transpose, std::move(out), {x}, [ix](Tape& tp, std::size_t self) {
        transpose_into(*tp.grad_if_any(self), *tp.grad_buffer(ix), true);
    });
}

Variable concat_channels(const std::vector<Variable>& xs) {
    if (xs.empty()) throw AutodiffError("concat_channels: no inputs");
    Tape& t = tape_of(xs.front());
    const Shape& s0 = xs.front().shape();
    const std::size_t rows = leading_rows(s0);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& x : xs) {
        if (&tape_of(x) != &t) throw AutodiffError("concat_channels: mixed tapes");
        const Shape& s = x.shape();
        if (s.size() != s0.size() || !std::equal(s.begin(), s.end() - 1, s0.begin())) {
            throw ShapeError("concat_channels", s0, s);
        }
        widths.push_back(s.back());
        total += s.back();
    }
    Shape so = s0;
    so.back() = total;
    Tensor out(so);
    std::size_t off = 0;
    std::vector<std::size_t> ids;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const Tensor& v = xs[k].value();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + off);
        }
        off += widths[k];
        ids.push_back(xs[k].id());
    }
    return t.push(OpKind::concat_channels, std::move(out), xs,
                  [ids, widths, rows, total](Tape& tp, std::size_t self) {
                      const Tensor& g = *tp.grad_if_any(self);
                      std::size_t off = 0;
                      for (std::size_t k = 0; k < ids.size(); ++k) {
                          if (Tensor* gx = tp.grad_buffer(ids[k])) {
                              for (std::size_t r = 0; r < rows; ++r) {
                                  for (std::size_t j = 0; j < widths[k]; ++j) {
                                      (*gx)[r * widths[k] + j] += g[r * total + off + j];
                                  }
                              }
                          }
                          off += widths[k];
                      }
                  });
}

Variable square(const Variable& x) {
    Tape& t = tape_of(x);
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
    const std::size_t ix = x.id();
    return t.push(OpKind::square, std::move(out), {x}, [ix](Tape& tp, std::size_t self) {
        const Tensor& g = *tp.grad_if_any(self);
        const Tensor& v = tp.value(ix);
        Tensor* gx = tp.grad_buffer(ix);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += 2.0 * v[i] * g[i];
    });
}

Variable add_bias(const Variable& x, const Variable& bias) {
    Tape& t = same_tape(x, bias);
    const Shape& s = x.shape();
    if (bias.shape().size() != 1 || s.empty() || bias.shape()[0] != s.back()) {
        throw ShapeError("add_bias", s, bias.shape());
    }
    const std::size_t d = s.back();
    Tensor out = x.value();
    const Tensor& bv = bias.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % d];
    const std::size_t ix = x.id(), ib = bias.id();
    return t.push(OpKind::add_bias, std::move(out), {x, bias},
                  [ix, ib, d](Tape& tp, std::size_t self) {
                      const Tensor& g = *tp.grad_if_any(self);
                      if (Tensor* gx = tp.grad_buffer(ix)) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                      }
                      if (Tensor* gb = tp.grad_buffer(ib)) {
                          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % d] += g[i];
                      }
                  });
}

Variable masked_softmax(const Variable& x, const Tensor& mask) {
    Tape& t = tape_of(x);
    const Shape& s = x.shape();
    if (s.empty()) throw ShapeError("masked_softmax", s, mask.shape());
    const std::size_t cols = s.back();
    const std::size_t rows = leading_rows(s);
    const bool masked = !mask.empty();
    std::size_t mask_rows = 0;
    if (masked) {
        if (mask.rank() != 2 || mask.dim(1) != cols || rows % mask.dim(0) != 0) {
            throw ShapeError("masked_softmax", s, mask.shape());
        }
        mask_rows = mask.dim(0);
        for (std::size_t r = 0; r < mask_rows; ++r) {
            bool any = false;
            for (std::size_t j = 0; j < cols; ++j) any = any || mask.at(r, j) != 0.0;
            if (!any) {
                throw AutodiffError("masked_softmax: mask row " + std::to_string(r) +
                                    " has empty support");
            }
        }
    }
    Tensor out(s);
    kernels::softmax_rows(rows, cols, x.value().data(), masked ? mask.data() : nullptr, mask_rows,
                          out.data());
    const std::size_t ix = x.id();
    return t.push(OpKind::masked_softmax, std::move(out), {x},
                  [ix, rows, cols](Tape& tp, std::size_t self) {
                      const Tensor& g = *tp.grad_if_any(self);
                      const Tensor& y = tp.value(self);
                      Tensor* gx = tp.grad_buffer(ix);
                      for (std::size_t r = 0; r < rows; ++r) {
                          const double* yr = y.data() + r * cols;
                          const double* gr = g.data() + r * cols;
                          double dot = 0.0;
                          for (std::size_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
                          double* out = gx->data() + r * cols;
                          for (std::size_t j = 0; j < cols; ++j) out[j] += yr[j] * (gr[j] - dot);
                      }
                  });
}

Variable batch_norm_train(const Variable& x, const Variable& gamma, const Variable& beta,
                          double eps, BatchNormStats* stats) {
    Tape& t = same_tape(x, gamma);
    same_tape(x, beta);
    const Shape& s = x.shape();
    const std::size_t d = s.back();
    const std::size_t rows = leading_rows(s);
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw ShapeError("batch_norm", s, gamma.shape());
    }
    if (rows < 2) {
        throw AutodiffError("batch_norm: training mode needs at least 2 samples per channel, got " +
                            std::to_string(rows));
    }
    const Tensor& xv = x.value();
    std::vector<double> mu(d, 0.0), var(d, 0.0), inv_std(d);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) mu[c] += xv[r * d + c];
    }
    for (auto& m : mu) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            const double e = xv[r * d + c] - mu[c];
            var[c] += e * e;
        }
    }
    for (std::size_t c = 0; c < d; ++c) {
        var[c] /= static_cast<double>(rows);
        inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    }
    Tensor xhat(s), out(s);
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            const std::size_t i = r * d + c;
            xhat[i] = (xv[i] - mu[c]) * inv_std[c];
            out[i] = gv[c] * xhat[i] + bv[c];
        }
    }
    if (stats) *stats = {mu, var, rows};
    const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
    return t.push(OpKind::batch_norm, std::move(out), {x, gamma, beta},
                  [ix, ig, ib, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Tape& tp, std::size_t self) {
                      const Tensor& g = *tp.grad_if_any(self);
                      std::vector<double> sum_g(d, 0.0), sum_gx(d, 0.0);
                      for (std::size_t r = 0; r < rows; ++r) {
                          for (std::size_t c = 0; c < d; ++c) {
                              sum_g[c] += g[r * d + c];
                              sum_gx[c] += g[r * d + c] * xhat[r * d + c];
                          }
                      }
                      if (Tensor* gb = tp.grad_buffer(ib)) {
                          for (std::size_t c = 0; c < d; ++c) (*gb)[c] += sum_g[c];
                      }
                      if (Tensor* gg = tp.grad_buffer(ig)) {
                          for (std::size_t c = 0; c < d; ++c) (*gg)[c] += sum_gx[c];
                      }
                      if (Tensor* gx = tp.grad_buffer(ix)) {
                          const Tensor& gam = tp.value(ig);
                          const double inv_n = 1.0 / static_cast<double>(rows);
                          for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < d; ++c) {
                                  const std::size_t i = r * d + c;
                                  (*gx)[i] += gam[c] * inv_std[c] *
                                              (g[i] - sum_g[c] * inv_n -
                                               xhat[i] * sum_gx[c] * inv_n);
                              }
                          }
                      }
                  });
}

Variable batch_norm_eval(const Variable& x, const Variable& gamma, const Variable& beta,
                         std::span<const double> running_mean, std::span<const double> running_var,
                         double eps) {
    Tape& t = same_tape(x, gamma);
    same_tape(x, beta);
    const Shape& s = x.shape();
    const std::size_t d = s.back();
    const std::size_t rows = leading_rows(s);
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d} || running_mean.size() != d ||
        running_var.size() != d) {
        throw ShapeError("batch_norm", s, gamma.shape());
    }
    std::vector<double> inv_std(d), mu(running_mean.begin(), running_mean.end());
    for (std::size_t c = 0; c < d; ++c) inv_std[c] = 1.0 / std::sqrt(running_var[c] + eps);
    const Tensor& xv = x.value();
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    Tensor out(s);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            const std::size_t i = r * d + c;
            out[i] = gv[c] * (xv[i] - mu[c]) * inv_std[c] + bv[c];
        }
    }
    const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
    return t.push(OpKind::batch_norm, std::move(out), {x, gamma, beta},
                  [ix, ig, ib, rows, d, mu = std::move(mu), inv_std = std::move(inv_std)](
                      Tape& tp, std::size_t self) {
                      const Tensor& g = *tp.grad_if_any(self);
                      const Tensor& xv = tp.value(ix);
                      const Tensor& gam = tp.value(ig);
                      Tensor* gx = tp.grad_buffer(ix);
                      Tensor* gg = tp.grad_buffer(ig);
                      Tensor* gb = tp.grad_buffer(ib);
                      for (std::size_t r = 0; r < rows; ++r) {
                          for (std::size_t c = 0; c < d; ++c) {
                              const std::size_t i = r * d + c;
                              const double xh = (xv[i] - mu[c]) * inv_std[c];
                              if (gx) (*gx)[i] += g[i] * gam[c] * inv_std[c];
                              if (gg) (*gg)[c] += g[i] * xh;
                              if (gb) (*gb)[c] += g[i];
                          }
                      }
                  });
}

Variable forward_primitive(std::string_view kind, const std::vector<Variable>& inputs,
                           PrimitiveArgs args) {
    const OpKind k = parse_kind(kind);
    auto need = [&](std::size_t n) {
        if (inputs.size() != n) {
            throw AutodiffError(std::string(kind) + ": expected " + std::to_string(n) +
                                " inputs, got " + std::to_string(inputs.size()));
        }
    };
    switch (k) {
        case OpKind::matmul: need(2); return matmul(inputs[0], inputs[1]);
        case OpKind::add: need(2); return add(inputs[0], inputs[1]);
        case OpKind::sub: need(2); return sub(inputs[0], inputs[1]);
        case OpKind::hadamard: need(2); return hadamard(inputs[0], inputs[1]);
        case OpKind::relu: need(1); return relu(inputs[0]);
        case OpKind::scale: need(1); return scale(inputs[0], args.factor);
        case OpKind::sum: need(1); return sum(inputs[0]);
        case OpKind::mean: need(1); return mean(inputs[0]);
        case OpKind::transpose: need(1); return transpose(inputs[0]);
        case OpKind::concat_channels: return concat_channels(inputs);
        case OpKind::square: need(1); return square(inputs[0]);
        default:
            throw AutodiffError("unknown operation kind '" + std::string(kind) +
                                "' for forward_primitive");
    }
}

// ---------------------------------------------------------- gradient check

GradCheckResult gradient_check(const ScalarFn& f, const std::vector<Tensor>& point, double step,
                               GradCheckOptions opts) {
    if (!(step > 0.0)) throw AutodiffError("gradient_check: step must be positive");

    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Variable> leaves;
        for (const auto& p : point) leaves.push_back(tape.leaf(p, true));
        Variable out = f(tape, leaves);
        tape.backward(out);
        for (const auto& l : leaves) analytic.push_back(l.grad());
    }

    auto eval = [&](const std::vector<Tensor>& pt) {
        Tape tape;
        std::vector<Variable> leaves;
        for (const auto& p : pt) leaves.push_back(tape.leaf(p, false));
        return f(tape, leaves).value()[0];
    };

    std::mt19937_64 rng(opts.seed);
    GradCheckResult res;
    std::vector<Tensor> pt = point;
    for (std::size_t i = 0; i < pt.size(); ++i) {
        std::vector<std::size_t> coords(pt[i].size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (opts.max_coords_per_input && coords.size() > opts.max_coords_per_input) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opts.max_coords_per_input);
            std::sort(coords.begin(), coords.end());
        }
        for (std::size_t j : coords) {
            const double orig = pt[i][j];
            pt[i][j] = orig + step;
            const double fp = eval(pt);
            pt[i][j] = orig - step;
            const double fm = eval(pt);
            pt[i][j] = orig;
            const double num = (fp - fm) / (2.0 * step);
            const double ana = analytic[i][j];
            ++res.coordinates_checked;
            if (std::max(std::abs(ana), std::abs(num)) <= opts.zero_tol) {
                ++res.zero_coordinates;
                res.max_zero_abs_error = std::max(res.max_zero_abs_error, std::abs(ana - num));
                continue;
            }
            const double denom = std::max({std::abs(ana), std::abs(num), 1e-8});
            const double err = std::abs(ana - num) / denom;
            if (err >= res.max_rel_error) {
                res.max_rel_error = err;
                res.worst_input = i;
                res.worst_index = j;
                res.analytic = ana;
                res.numeric = num;
            }
        }
    }
    return res;
}

}  // namespace hgn::ad
