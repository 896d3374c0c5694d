#pragma once

// Reverse-mode differentiation over a tape of flat real vectors. Complex data rides along as
// interleaved scalars, so every rule below is the real-linear adjoint.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "linops.hpp"
#include "prox.hpp"
#include "solvers.hpp"

namespace tvmap::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    std::vector<double> value;
    std::vector<double> grad;
    bool needs_grad = false;
    Backward back;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(std::vector<double> v, bool requires_grad = false) {
    nodes_.push_back({std::move(v), {}, requires_grad, {}});
    return {this, nodes_.size() - 1};
  }

  Var record(std::vector<double> v, std::span<const Var> inputs, Backward back) {
    bool needs = false;
    for (const Var& in : inputs) {
      own(in);
      needs |= nodes_[in.id].needs_grad;
    }
    nodes_.push_back({std::move(v), {}, needs, needs ? std::move(back) : Backward{}});
    return {this, nodes_.size() - 1};
  }

  Var record(std::vector<double> v, std::initializer_list<Var> inputs, Backward back) {
    return record(std::move(v), std::span<const Var>(inputs.begin(), inputs.size()), std::move(back));
  }

  std::span<const double> value(Var v) const {
    own(v);
    return nodes_[v.id].value;
  }
  std::size_t size(Var v) const { return value(v).size(); }
  bool needs_grad(Var v) const {
    own(v);
    return nodes_[v.id].needs_grad;
  }

  /// Accumulator of node `id`, zero-initialized on first use.
  std::vector<double>& grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  /// Gradient reaching `v` after backward(); zeros if nothing flowed there.
  std::vector<double> grad(Var v) const {
    own(v);
    const auto& n = nodes_[v.id];
    return n.grad.empty() ? std::vector<double>(n.value.size(), 0.0) : n.grad;
  }

  void backward(Var loss) {
    own(loss);
    if (nodes_[loss.id].value.size() != 1) throw ShapeError("backward: loss must be a scalar");
    for (auto& n : nodes_) n.grad.clear();
    grad_buffer(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.back || n.grad.empty()) continue;
      n.back(*this, i);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

  /// Doubles held in values and gradients.
  std::size_t footprint() const {
    std::size_t s = 0;
    for (const auto& n : nodes_) s += n.value.size() + n.grad.size();
    return s;
  }

  const std::vector<double>& grad_of(std::size_t id) const { return nodes_[id].grad; }

  // Piecewise primitives fold their active branches into this hash when tracking is on, so a
  // finite-difference probe can tell that its perturbation crossed a kink.
  bool track_branches = false;
  std::uint64_t branch_hash = 1469598103934665603ull;
  void mix_branch(std::uint64_t code) {
    branch_hash ^= code + 0x9e3779b97f4a7c15ull + (branch_hash << 6) + (branch_hash >> 2);
  }

  // entries clamped by exp primitives during the forward pass
  std::size_t exp_clamped = 0;

 private:
  void own(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw std::invalid_argument("variable is not on this tape");
  }

  std::vector<Node> nodes_;
};

namespace detail {

inline void same_size(const Tape& t, Var a, Var b, const char* op) {
  if (t.size(a) != t.size(b)) throw ShapeError(std::string(op) + ": operand sizes differ");
}

inline void accumulate(Tape& t, Var dst, std::span<const double> g, double scale = 1.0) {
  if (!t.needs_grad(dst)) return;
  auto& buf = t.grad_buffer(dst.id);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += scale * g[i];
}

// Packs up to 64 branch flags at a time into the tape hash.
class BranchMixer {
 public:
  explicit BranchMixer(Tape& t) : t_(t), on_(t.track_branches) {}
  ~BranchMixer() {
    if (on_ && n_) t_.mix_branch(word_ ^ (static_cast<std::uint64_t>(n_) << 58));
  }
  void push(unsigned code) {  // code in 0..3
    if (!on_) return;
    word_ = (word_ << 2) | code;
    if (++n_ == 29) {
      t_.mix_branch(word_);
      word_ = 0;
      n_ = 0;
    }
  }

 private:
  Tape& t_;
  bool on_;
  std::uint64_t word_ = 0;
  unsigned n_ = 0;
};

}  // namespace detail

inline Var constant(Tape& t, std::vector<double> v) { return t.leaf(std::move(v), false); }
inline Var parameter(Tape& t, std::vector<double> v) { return t.leaf(std::move(v), true); }

// ---------------------------------------------------------------------------
// Elementwise arithmetic

/// a*u + b*v, evaluated exactly as the solvers do.
inline Var lincomb(double a, Var u, double b, Var v) {
  Tape& t = *u.tape;
  detail::same_size(t, u, v, "lincomb");
  std::vector<double> out(t.size(u));
  tvmap::lincomb(a, t.value(u), b, t.value(v), out);
  return t.record(std::move(out), {u, v}, [u, v, a, b](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    detail::accumulate(tp, u, g, a);
    detail::accumulate(tp, v, g, b);
  });
}

inline Var add(Var u, Var v) {
  Tape& t = *u.tape;
  detail::same_size(t, u, v, "add");
  std::vector<double> out(t.size(u));
  const auto a = t.value(u), b = t.value(v);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return t.record(std::move(out), {u, v}, [u, v](Tape& tp, std::size_t self) {
    detail::accumulate(tp, u, tp.grad_of(self));
    detail::accumulate(tp, v, tp.grad_of(self));
  });
}

inline Var sub(Var u, Var v) {
  Tape& t = *u.tape;
  detail::same_size(t, u, v, "sub");
  std::vector<double> out(t.size(u));
  const auto a = t.value(u), b = t.value(v);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return t.record(std::move(out), {u, v}, [u, v](Tape& tp, std::size_t self) {
    detail::accumulate(tp, u, tp.grad_of(self));
    detail::accumulate(tp, v, tp.grad_of(self), -1.0);
  });
}

inline Var scale(Var u, double s) {
  Tape& t = *u.tape;
  std::vector<double> out(t.value(u).begin(), t.value(u).end());
  for (auto& e : out) e *= s;
  return t.record(std::move(out), {u},
                  [u, s](Tape& tp, std::size_t self) { detail::accumulate(tp, u, tp.grad_of(self), s); });
}

inline Var mul(Var u, Var v) {
  Tape& t = *u.tape;
  detail::same_size(t, u, v, "mul");
  std::vector<double> out(t.size(u));
  const auto a = t.value(u), b = t.value(v);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return t.record(std::move(out), {u, v}, [u, v](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    const auto a = tp.value(u), b = tp.value(v);
    if (tp.needs_grad(u)) {
      auto& gu = tp.grad_buffer(u.id);
      for (std::size_t i = 0; i < g.size(); ++i) gu[i] += g[i] * b[i];
    }
    if (tp.needs_grad(v)) {
      auto& gv = tp.grad_buffer(v.id);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i] * a[i];
    }
  });
}

/// Σ_k c_k v_k accumulated left to right.
inline Var linear_sum(const std::vector<double>& coeffs, const std::vector<Var>& vars) {
  if (vars.empty() || coeffs.size() != vars.size()) throw ShapeError("linear_sum: coefficient count mismatch");
  Tape& t = *vars[0].tape;
  for (const Var& v : vars) detail::same_size(t, vars[0], v, "linear_sum");
  std::vector<double> out(t.size(vars[0]));
  const auto first = t.value(vars[0]);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = coeffs[0] * first[i];
  for (std::size_t k = 1; k < vars.size(); ++k) {
    const auto vk = t.value(vars[k]);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += coeffs[k] * vk[i];
  }
  return t.record(std::move(out), vars, [vars, coeffs](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    for (std::size_t k = 0; k < vars.size(); ++k) detail::accumulate(tp, vars[k], g, coeffs[k]);
  });
}

// ---------------------------------------------------------------------------
// Layout primitives

/// out[i] = x[idx[i]]; the backward rule scatters.
inline Var gather(Var x, std::shared_ptr<const std::vector<std::size_t>> idx) {
  Tape& t = *x.tape;
  const auto xv = t.value(x);
  std::vector<double> out(idx->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if ((*idx)[i] >= xv.size()) throw ShapeError("gather: index out of range");
    out[i] = xv[(*idx)[i]];
  }
  return t.record(std::move(out), {x}, [x, idx](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& gx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*idx)[i]] += g[i];
  });
}

inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: nothing to join");
  Tape& t = *parts[0].tape;
  std::vector<double> out;
  for (const Var& p : parts) out.insert(out.end(), t.value(p).begin(), t.value(p).end());
  return t.record(std::move(out), parts, [parts](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t n = tp.size(p);
      detail::accumulate(tp, p, std::span<const double>(g).subspan(off, n));
      off += n;
    }
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities

inline Var leaky_relu(Var x, double alpha) {
  Tape& t = *x.tape;
  const auto xv = t.value(x);
  std::vector<double> out(xv.size());
  detail::BranchMixer bm(t);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] > 0.0 ? xv[i] : alpha * xv[i];
    bm.push(xv[i] > 0.0);
  }
  return t.record(std::move(out), {x}, [x, alpha](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    const auto xv = tp.value(x);
    auto& gx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] > 0.0 ? g[i] : alpha * g[i];
  });
}

inline double softplus(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

inline double logistic(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Var softplus(Var x) {
  Tape& t = *x.tape;
  const auto xv = t.value(x);
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus(xv[i]);
  return t.record(std::move(out), {x}, [x](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    const auto xv = tp.value(x);
    auto& gx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * logistic(xv[i]);
  });
}

/// max(x, 0): the nonnegativity prox.
inline Var relu(Var x) {
  Tape& t = *x.tape;
  const auto xv = t.value(x);
  std::vector<double> out(xv.size());
  detail::BranchMixer bm(t);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::max(xv[i], 0.0);
    bm.push(xv[i] > 0.0);
  }
  return t.record(std::move(out), {x}, [x](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    const auto xv = tp.value(x);
    auto& gx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

/// e^x with arguments clamped to ±700; clamped entries pass no gradient.
inline Var exp_clamped(Var x) {
  Tape& t = *x.tape;
  const auto xv = t.value(x);
  std::vector<double> out(xv.size());
  ExpGuard guard;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = clamped_exp(xv[i], &guard);
  t.exp_clamped += guard.clamped;
  return t.record(std::move(out), {x}, [x](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    const auto xv = tp.value(x);
    auto& gx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (std::abs(xv[i]) <= kExpClamp) gx[i] += g[i] * std::exp(xv[i]);
  });
}

// ---------------------------------------------------------------------------
// Solver building blocks

/// Entrywise projection of q onto [−Λ, Λ]; `stride` scalars of q share one Λ entry.
/// At |q| = Λ the entry counts as interior: gradient passes to q, none to Λ.
inline Var clip(Var q, Var lambda, std::size_t stride) {
  Tape& t = *q.tape;
  const auto qv = t.value(q), lv = t.value(lambda);
  std::vector<double> out(qv.size());
  clip_flat(qv, lv, stride, out);
  if (t.track_branches) {
    detail::BranchMixer bm(t);
    for (std::size_t i = 0; i < qv.size(); ++i) {
      const double l = lv[i / stride];
      bm.push(qv[i] > l ? 1u : (qv[i] < -l ? 2u : 0u));
    }
  }
  return t.record(std::move(out), {q, lambda}, [q, lambda, stride](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    const auto qv = tp.value(q), lv = tp.value(lambda);
    const bool wq = tp.needs_grad(q), wl = tp.needs_grad(lambda);
    std::vector<double>* gq = wq ? &tp.grad_buffer(q.id) : nullptr;
    std::vector<double>* gl = wl ? &tp.grad_buffer(lambda.id) : nullptr;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double l = lv[i / stride];
      if (qv[i] > l) {
        if (gl) (*gl)[i / stride] += g[i];
      } else if (qv[i] < -l) {
        if (gl) (*gl)[i / stride] -= g[i];
      } else if (gq) {
        (*gq)[i] += g[i];
      }
    }
  });
}

/// (p + σ(ax − z)) / (1 + σ) with z data (no gradient).
inline Var prox_l2_conj_step(Var p, Var ax, std::shared_ptr<const std::vector<double>> z, double sigma) {
  Tape& t = *p.tape;
  detail::same_size(t, p, ax, "prox_l2_conj_step");
  std::vector<double> out(t.size(p));
  prox_l2_conj_step_flat(t.value(p), t.value(ax), *z, sigma, out);
  const double inv = 1.0 / (1.0 + sigma);
  return t.record(std::move(out), {p, ax}, [p, ax, sigma, inv](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    detail::accumulate(tp, p, g, inv);
    detail::accumulate(tp, ax, g, sigma * inv);
  });
}

/// μN₀(e^{−zμ} − e^{−(ax)μ}), the data-space factor of ∇h for the KL fidelity.
inline Var kl_residual(Var ax, std::shared_ptr<const std::vector<double>> z, KlParams kl) {
  Tape& t = *ax.tape;
  std::vector<double> out(t.size(ax));
  ExpGuard guard;
  tvmap::kl_residual(t.value(ax), *z, kl, out, &guard);
  t.exp_clamped += guard.clamped;
  return t.record(std::move(out), {ax}, [ax, kl](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    const auto av = tp.value(ax);
    auto& ga = tp.grad_buffer(ax.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double arg = -av[i] * kl.mu;
      if (std::abs(arg) <= kExpClamp) ga[i] += g[i] * kl.mu * kl.mu * kl.n0 * std::exp(arg);
    }
  });
}

/// A x (or Aᴴ x); the backward rule applies the other half of the registered pair.
inline Var apply(std::shared_ptr<const LinearOperator> A, Var x, bool adjoint = false) {
  Tape& t = *x.tape;
  std::vector<double> out(adjoint ? A->domain().scalars() : A->codomain().scalars());
  if (adjoint) A->apply_adjoint(t.value(x), out);
  else A->apply(t.value(x), out);
  return t.record(std::move(out), {x}, [A, x, adjoint](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    std::vector<double> back(tp.size(x));
    if (adjoint) A->apply(g, back);
    else A->apply_adjoint(g, back);
    detail::accumulate(tp, x, back);
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var x) {
  Tape& t = *x.tape;
  double s = 0.0;
  for (double v : t.value(x)) s += v;
  return t.record({s}, {x}, [x](Tape& tp, std::size_t self) {
    const double g = tp.grad_of(self)[0];
    auto& gx = tp.grad_buffer(x.id);
    for (auto& e : gx) e += g;
  });
}

inline Var sumsq(Var x) {
  Tape& t = *x.tape;
  double s = 0.0;
  for (double v : t.value(x)) s += v * v;
  return t.record({s}, {x}, [x](Tape& tp, std::size_t self) {
    const double g = tp.grad_of(self)[0];
    const auto xv = tp.value(x);
    auto& gx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += 2.0 * g * xv[i];
  });
}

/// Σ(a − b)² / n_elements. With complex data stored interleaved this is the mean squared modulus
/// when n_elements counts complex entries.
inline Var mse(Var a, Var b, std::size_t n_elements) {
  Tape& t = *a.tape;
  detail::same_size(t, a, b, "mse");
  if (n_elements == 0) throw ShapeError("mse: empty input");
  const auto av = t.value(a), bv = t.value(b);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const double inv = 1.0 / static_cast<double>(n_elements);
  return t.record({s * inv}, {a, b}, [a, b, inv](Tape& tp, std::size_t self) {
    const double g = tp.grad_of(self)[0];
    const auto av = tp.value(a), bv = tp.value(b);
    std::vector<double> d(av.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = 2.0 * inv * g * (av[i] - bv[i]);
    detail::accumulate(tp, a, d);
    detail::accumulate(tp, b, d, -1.0);
  });
}

// ---------------------------------------------------------------------------
// Convolutional layers on channel-major volumes (C, D, H, W), x fastest.

struct Volume {
  std::size_t c = 1, d = 1, h = 1, w = 1;
  std::size_t voxels() const { return d * h * w; }
  std::size_t size() const { return c * voxels(); }
};

struct ConvShape {
  std::size_t cout = 1, cin = 1, kd = 1, kh = 1, kw = 1;
  std::size_t weights() const { return cout * cin * kd * kh * kw; }
};

namespace detail {

// Visits every (input row, output row, x-range) overlap of a zero-padded stride-1 convolution.
template <class F>
void conv_rows(const Volume& in, const ConvShape& k, F&& f) {
  const long pd = static_cast<long>(k.kd / 2), ph = static_cast<long>(k.kh / 2), pw = static_cast<long>(k.kw / 2);
  const long D = static_cast<long>(in.d), H = static_cast<long>(in.h), W = static_cast<long>(in.w);
  for (std::size_t co = 0; co < k.cout; ++co)
    for (std::size_t ci = 0; ci < k.cin; ++ci)
      for (long a = 0; a < static_cast<long>(k.kd); ++a)
        for (long b = 0; b < static_cast<long>(k.kh); ++b)
          for (long c = 0; c < static_cast<long>(k.kw); ++c) {
            const std::size_t widx = (((co * k.cin + ci) * k.kd + a) * k.kh + b) * k.kw + c;
            const long dz = a - pd, dy = b - ph, dx = c - pw;
            const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
            if (x1 <= x0) continue;
            for (long z = std::max(0L, -dz); z < std::min(D, D - dz); ++z)
              for (long y = std::max(0L, -dy); y < std::min(H, H - dy); ++y) {
                const std::size_t src = ((ci * in.d + static_cast<std::size_t>(z + dz)) * in.h + static_cast<std::size_t>(y + dy)) * in.w +
                                        static_cast<std::size_t>(x0 + dx);
                const std::size_t dst = ((co * in.d + static_cast<std::size_t>(z)) * in.h + static_cast<std::size_t>(y)) * in.w +
                                        static_cast<std::size_t>(x0);
                f(widx, src, dst, static_cast<std::size_t>(x1 - x0));
              }
          }
}

}  // namespace detail

/// Stride-1 convolution (cross-correlation) with zero padding k/2 and per-channel bias.
inline Var conv3d(Var x, Var weight, Var bias, const Volume& in, const ConvShape& k) {
  Tape& t = *x.tape;
  if (t.size(x) != in.size() || k.cin != in.c) throw ShapeError("conv3d: input volume mismatch");
  if (t.size(weight) != k.weights() || t.size(bias) != k.cout) throw ShapeError("conv3d: parameter shape mismatch");
  if (k.kd % 2 == 0 || k.kh % 2 == 0 || k.kw % 2 == 0) throw ShapeError("conv3d: kernel extents must be odd");
  const auto xv = t.value(x), wv = t.value(weight), bv = t.value(bias);
  const std::size_t vox = in.voxels();
  std::vector<double> out(k.cout * vox);
  for (std::size_t co = 0; co < k.cout; ++co) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(co * vox), vox, bv[co]);
  detail::conv_rows(in, k, [&](std::size_t widx, std::size_t src, std::size_t dst, std::size_t n) {
    const double w = wv[widx];
    const double* s = xv.data() + src;
    double* o = out.data() + dst;
    for (std::size_t i = 0; i < n; ++i) o[i] += w * s[i];
  });
  return t.record(std::move(out), {x, weight, bias}, [x, weight, bias, in, k](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    const auto xv = tp.value(x), wv = tp.value(weight);
    const std::size_t vox = in.voxels();
    if (tp.needs_grad(bias)) {
      auto& gb = tp.grad_buffer(bias.id);
      for (std::size_t co = 0; co < k.cout; ++co)
        for (std::size_t i = 0; i < vox; ++i) gb[co] += g[co * vox + i];
    }
    std::vector<double>* gw = tp.needs_grad(weight) ? &tp.grad_buffer(weight.id) : nullptr;
    std::vector<double>* gx = tp.needs_grad(x) ? &tp.grad_buffer(x.id) : nullptr;
    detail::conv_rows(in, k, [&](std::size_t widx, std::size_t src, std::size_t dst, std::size_t n) {
      const double* go = g.data() + dst;
      if (gw) {
        const double* s = xv.data() + src;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += go[i] * s[i];
        (*gw)[widx] += acc;
      }
      if (gx) {
        const double w = wv[widx];
        double* d = gx->data() + src;
        for (std::size_t i = 0; i < n; ++i) d[i] += w * go[i];
      }
    });
  });
}

/// Mean over non-overlapping (fd, fh, fw) blocks.
inline Var avg_pool(Var x, const Volume& in, std::size_t fd, std::size_t fh, std::size_t fw) {
  Tape& t = *x.tape;
  if (t.size(x) != in.size()) throw ShapeError("avg_pool: input volume mismatch");
  if (in.d % fd || in.h % fh || in.w % fw) throw ShapeError("avg_pool: extent not divisible by the pooling factor");
  const Volume o{in.c, in.d / fd, in.h / fh, in.w / fw};
  const double inv = 1.0 / static_cast<double>(fd * fh * fw);
  const auto xv = t.value(x);
  std::vector<double> out(o.size(), 0.0);
  for (std::size_t c = 0; c < in.c; ++c)
    for (std::size_t z = 0; z < in.d; ++z)
      for (std::size_t y = 0; y < in.h; ++y)
        for (std::size_t xx = 0; xx < in.w; ++xx)
          out[((c * o.d + z / fd) * o.h + y / fh) * o.w + xx / fw] += xv[((c * in.d + z) * in.h + y) * in.w + xx];
  for (auto& v : out) v *= inv;
  return t.record(std::move(out), {x}, [x, in, o, fd, fh, fw, inv](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& gx = tp.grad_buffer(x.id);
    for (std::size_t c = 0; c < in.c; ++c)
      for (std::size_t z = 0; z < in.d; ++z)
        for (std::size_t y = 0; y < in.h; ++y)
          for (std::size_t xx = 0; xx < in.w; ++xx)
            gx[((c * in.d + z) * in.h + y) * in.w + xx] += inv * g[((c * o.d + z / fd) * o.h + y / fh) * o.w + xx / fw];
  });
}

/// Nearest-neighbour upsampling by (fd, fh, fw).
inline Var upsample(Var x, const Volume& in, std::size_t fd, std::size_t fh, std::size_t fw) {
  Tape& t = *x.tape;
  if (t.size(x) != in.size()) throw ShapeError("upsample: input volume mismatch");
  const Volume o{in.c, in.d * fd, in.h * fh, in.w * fw};
  const auto xv = t.value(x);
  std::vector<double> out(o.size());
  for (std::size_t c = 0; c < o.c; ++c)
    for (std::size_t z = 0; z < o.d; ++z)
      for (std::size_t y = 0; y < o.h; ++y)
        for (std::size_t xx = 0; xx < o.w; ++xx)
          out[((c * o.d + z) * o.h + y) * o.w + xx] = xv[((c * in.d + z / fd) * in.h + y / fh) * in.w + xx / fw];
  return t.record(std::move(out), {x}, [x, in, o, fd, fh, fw](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_of(self);
    auto& gx = tp.grad_buffer(x.id);
    for (std::size_t c = 0; c < o.c; ++c)
      for (std::size_t z = 0; z < o.d; ++z)
        for (std::size_t y = 0; y < o.h; ++y)
          for (std::size_t xx = 0; xx < o.w; ++xx)
            gx[((c * in.d + z / fd) * in.h + y / fh) * in.w + xx / fw] += g[((c * o.d + z) * o.h + y) * o.w + xx];
  });
}

// ---------------------------------------------------------------------------
// Finite-difference checking

struct FdCoordinate {
  std::size_t index = 0;
  double g_ad = 0.0;
  double g_fd = 0.0;
  double rel_err = 0.0;
};

struct FdReport {
  double max_rel_err = 0.0;
  std::size_t resampled = 0;  // probes discarded because they straddled a kink
  std::vector<FdCoordinate> coords;
};

/// f(θ, hash) evaluates the recorded scalar function at θ and reports the branch hash of its tape.
using RecordedFunction = std::function<double(std::span<const double>, std::uint64_t*)>;

/// Central differences on `trials` random coordinates against the reverse-mode gradient g_ad.
/// Relative error per coordinate: |g_ad − g_fd| / max(|g_ad|, |g_fd|, 1e−8).
inline FdReport finite_diff_check(const RecordedFunction& f, std::span<const double> theta, std::span<const double> g_ad,
                                  std::size_t trials, std::uint64_t seed, double eps = 1e-6) {
  if (theta.size() != g_ad.size() || theta.empty()) throw ShapeError("finite_diff_check: size mismatch");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, theta.size() - 1);
  std::vector<double> th(theta.begin(), theta.end());
  std::uint64_t h0 = 0;
  f(th, &h0);
  FdReport rep;
  const std::size_t max_resample = 20 * trials;
  while (rep.coords.size() < trials) {
    const std::size_t i = pick(rng);
    const double keep = th[i];
    std::uint64_t hp = 0, hm = 0;
    th[i] = keep + eps;
    const double fp = f(th, &hp);
    th[i] = keep - eps;
    const double fm = f(th, &hm);
    th[i] = keep;
    if ((hp != h0 || hm != h0) && rep.resampled < max_resample) {
      ++rep.resampled;
      continue;
    }
    const double fd = (fp - fm) / (2.0 * eps);
    const double err = std::abs(g_ad[i] - fd) / std::max({std::abs(g_ad[i]), std::abs(fd), 1e-8});
    rep.coords.push_back({i, g_ad[i], fd, err});
    rep.max_rel_err = std::max(rep.max_rel_err, err);
  }
  return rep;
}

}  // namespace tvmap::ad
