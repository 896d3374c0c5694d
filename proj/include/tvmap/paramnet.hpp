#pragma once

// NET_Θ: a small encoder/decoder CNN u_Θ followed by t·softplus, and the losses that train it
// through unrolled PDHG or PD3O.

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "metrics.hpp"
#include "solvers.hpp"
#include "unrolled.hpp"

namespace tvmap {

struct UNetConfig {
  std::size_t rank = 3;  // 2: single frame, 3: dynamic
  std::size_t stages = 2;
  std::size_t convs = 2;
  std::size_t filters = 8;
  std::size_t kernel = 3;
  std::size_t out_channels = 2;
  double alpha = 0.01;
  double t = 0.1;

  void validate() const {
    if (rank != 2 && rank != 3) throw std::invalid_argument("net rank must be 2 or 3");
    if (stages < 1 || convs < 1 || filters < 1) throw std::invalid_argument("net needs at least one stage, conv and filter");
    if (kernel % 2 == 0) throw std::invalid_argument("kernel extent must be odd");
    if (out_channels < 1 || out_channels > 3) throw std::invalid_argument("output channels must be 1, 2 or 3");
    if (!(t > 0.0)) throw std::invalid_argument("scale t must be positive");
  }
};

struct ConvLayer {
  ad::ConvShape shape;
  std::vector<double> w;
  std::vector<double> b;
};

struct NetWeights {
  std::vector<ConvLayer> layers;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.size() + l.b.size();
    return n;
  }

  /// Θ as one vector: per layer, kernel then bias.
  std::vector<double> flat() const {
    std::vector<double> out;
    out.reserve(size());
    for (const auto& l : layers) {
      out.insert(out.end(), l.w.begin(), l.w.end());
      out.insert(out.end(), l.b.begin(), l.b.end());
    }
    return out;
  }

  void set_flat(std::span<const double> theta) {
    if (theta.size() != size()) throw ShapeError("weight vector has wrong length");
    std::size_t off = 0;
    for (auto& l : layers) {
      std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(off), l.w.size(), l.w.begin());
      off += l.w.size();
      std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(off), l.b.size(), l.b.begin());
      off += l.b.size();
    }
  }

  bool finite() const {
    for (double v : flat())
      if (!std::isfinite(v)) return false;
    return true;
  }
};

namespace detail {

inline ad::ConvShape conv_shape(const UNetConfig& c, std::size_t cin, std::size_t cout, std::size_t k) {
  return {cout, cin, c.rank == 3 ? k : 1, k, k};
}

// Layer order: encoder stage s convs, then decoder stages from deepest to shallowest, then the 1×1 head.
inline std::vector<ad::ConvShape> layer_shapes(const UNetConfig& c, std::size_t in_channels) {
  std::vector<ad::ConvShape> out;
  std::size_t ch = in_channels;
  for (std::size_t s = 0; s < c.stages; ++s) {
    const std::size_t f = c.filters << s;
    for (std::size_t k = 0; k < c.convs; ++k) {
      out.push_back(conv_shape(c, ch, f, c.kernel));
      ch = f;
    }
  }
  for (std::size_t s = c.stages - 1; s-- > 0;) {
    const std::size_t f = c.filters << s;
    ch += f;  // skip connection
    for (std::size_t k = 0; k < c.convs; ++k) {
      out.push_back(conv_shape(c, ch, f, c.kernel));
      ch = f;
    }
  }
  out.push_back(conv_shape(c, ch, c.out_channels, 1));
  return out;
}

}  // namespace detail

inline std::size_t input_channels(DType dtype) { return dtype == DType::Complex128 ? 2 : 1; }

/// Kernels uniform in ±sqrt(1/fan_in), biases 0, head bias −1.
inline NetWeights init_weights(const UNetConfig& cfg, DType input, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  NetWeights W;
  for (const auto& s : detail::layer_shapes(cfg, input_channels(input))) {
    const double bound = std::sqrt(1.0 / static_cast<double>(s.cin * s.kd * s.kh * s.kw));
    std::uniform_real_distribution<double> u(-bound, bound);
    ConvLayer l{s, std::vector<double>(s.weights()), std::vector<double>(s.cout, 0.0)};
    for (auto& v : l.w) v = u(rng);
    W.layers.push_back(std::move(l));
  }
  for (auto& v : W.layers.back().b) v = -1.0;
  return W;
}

inline NetWeights zero_weights(const UNetConfig& cfg, DType input) {
  cfg.validate();
  NetWeights W;
  for (const auto& s : detail::layer_shapes(cfg, input_channels(input)))
    W.layers.push_back({s, std::vector<double>(s.weights(), 0.0), std::vector<double>(s.cout, 0.0)});
  return W;
}

/// Weight leaves of one tape, in layer order.
struct NetVars {
  std::vector<ad::Var> w, b;
};

inline NetVars bind_weights(ad::Tape& t, const NetWeights& W, bool trainable) {
  NetVars v;
  for (const auto& l : W.layers) {
    v.w.push_back(t.leaf(l.w, trainable));
    v.b.push_back(t.leaf(l.b, trainable));
  }
  return v;
}

/// Gradient of the tape's loss w.r.t. Θ, flattened like NetWeights::flat.
inline std::vector<double> collect_grad(const ad::Tape& t, const NetVars& v) {
  std::vector<double> g;
  for (std::size_t i = 0; i < v.w.size(); ++i) {
    const auto gw = t.grad(v.w[i]), gb = t.grad(v.b[i]);
    g.insert(g.end(), gw.begin(), gw.end());
    g.insert(g.end(), gb.begin(), gb.end());
  }
  return g;
}

/// Channel-major map channels (out_channels × voxels) for the image x0 (flat Tensor layout).
inline ad::Var net_forward(ad::Tape& t, const UNetConfig& cfg, const NetVars& W, ad::Var x0, const Shape& shape, DType dtype) {
  cfg.validate();
  if ((cfg.rank == 2) != (shape.nt == 1)) throw ShapeError("net rank does not match the image");
  const std::size_t n = shape.size();
  const std::size_t div = std::size_t{1} << (cfg.stages - 1);
  if (shape.nx % div || shape.ny % div || (cfg.rank == 3 && shape.nt % div))
    throw ShapeError("image extent not divisible by 2^(stages-1)");
  if (W.w.size() != detail::layer_shapes(cfg, input_channels(dtype)).size()) throw ShapeError("weights do not match the net");

  const std::size_t pd = cfg.rank == 3 ? 2 : 1;
  ad::Var h = x0;
  if (dtype == DType::Complex128) {
    auto idx = std::make_shared<std::vector<std::size_t>>(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      (*idx)[i] = 2 * i;
      (*idx)[n + i] = 2 * i + 1;
    }
    h = ad::gather(x0, idx);
  }
  ad::Volume vol{input_channels(dtype), shape.nt, shape.ny, shape.nx};
  std::size_t li = 0;
  auto conv = [&](ad::Var in, ad::Volume& v, bool act) {
    const ad::ConvShape s = detail::conv_shape(cfg, v.c, t.size(W.b[li]), cfg.kernel);
    ad::Var o = ad::conv3d(in, W.w[li], W.b[li], v, s);
    ++li;
    v.c = s.cout;
    return act ? ad::leaky_relu(o, cfg.alpha) : o;
  };

  std::vector<std::pair<ad::Var, ad::Volume>> skips;
  for (std::size_t s = 0; s < cfg.stages; ++s) {
    if (s > 0) {
      h = ad::avg_pool(h, vol, pd, 2, 2);
      vol = {vol.c, vol.d / pd, vol.h / 2, vol.w / 2};
    }
    for (std::size_t k = 0; k < cfg.convs; ++k) h = conv(h, vol, true);
    skips.push_back({h, vol});
  }
  for (std::size_t s = cfg.stages - 1; s-- > 0;) {
    h = ad::upsample(h, vol, pd, 2, 2);
    const auto& [skip, sv] = skips[s];
    vol = {vol.c + sv.c, sv.d, sv.h, sv.w};
    h = ad::concat({skip, h});
    for (std::size_t k = 0; k < cfg.convs; ++k) h = conv(h, vol, true);
  }
  const ad::ConvShape head{cfg.out_channels, vol.c, 1, 1, 1};
  h = ad::conv3d(h, W.w[li], W.b[li], vol, head);
  return ad::scale(ad::softplus(h), cfg.t);
}

/// Flat direction-major parameter-map (ndirs × voxels) from the map channels.
inline ad::Var expand_channels(ad::Var maps, SharingMode mode, const Shape& shape) {
  const std::size_t n = shape.size(), q = shape.ndirs();
  const auto ch = channel_expansion(mode, maps.tape->size(maps) / n, q);
  auto idx = std::make_shared<std::vector<std::size_t>>(q * n);
  for (std::size_t d = 0; d < q; ++d)
    for (std::size_t i = 0; i < n; ++i) (*idx)[d * n + i] = ch[d] * n + i;
  return ad::gather(maps, idx);
}

/// Λ_Θ(x₀) as a GradField with one component per gradient direction.
inline GradField parameter_map(const Tensor& x0, const NetWeights& W, const UNetConfig& cfg, SharingMode mode) {
  ad::Tape t;
  const NetVars v = bind_weights(t, W, false);
  const ad::Var x = ad::constant(t, x0.storage());
  const ad::Var lam = expand_channels(net_forward(t, cfg, v, x, x0.shape(), x0.dtype()), mode, x0.shape());
  return GradField::unflatten(t.value(lam), x0.shape(), x0.shape().ndirs(), DType::Real64);
}

// ---------------------------------------------------------------------------
// Training samples and losses

/// One training/evaluation item: operator, data, initial image and target.
struct Sample {
  LinearOperator A;
  Tensor z;
  Tensor x0;
  Tensor x_true;
  std::optional<KlParams> kl;  // set: KL fidelity solved by PD3O
  StepParams pdhg{};
  Pd3oSteps pd3o{};

  TvProblem tv_problem(const GradField& lambda) const { return {A, z, lambda}; }
  CtProblem ct_problem(const GradField& lambda) const { return {A, z, lambda, *kl}; }
};

inline Sample make_l2_sample(LinearOperator A, Tensor z, Tensor x0, Tensor x_true, std::optional<StepParams> steps = {}) {
  Sample s{std::move(A), std::move(z), std::move(x0), std::move(x_true), std::nullopt};
  s.pdhg = steps ? *steps : pdhg_steps(s.A);
  return s;
}

inline Sample make_kl_sample(LinearOperator A, Tensor z, Tensor x0, Tensor x_true, KlParams kl,
                             std::optional<Pd3oSteps> steps = {}) {
  Sample s{std::move(A), std::move(z), std::move(x0), std::move(x_true), kl};
  s.pd3o = steps ? *steps : s.ct_problem(GradField::constant(s.x0.shape(), s.x0.shape().ndirs(), 1.0)).steps();
  return s;
}

/// S^T(x₀, z, Λ, A) with the map held fixed.
inline Tensor solve_with_map(const Sample& s, const GradField& lambda, std::size_t T) {
  if (s.kl) return pd3o_solve_ct(s.ct_problem(lambda), s.x0, T, s.pd3o).x;
  return pdhg_solve(s.tv_problem(lambda), s.x0, T, s.pdhg).x;
}

/// N_Θ^T(x₀) = S^T(x₀, z, NET_Θ(x₀), A).
inline Tensor reconstruct(const Sample& s, const NetWeights& W, const UNetConfig& cfg, SharingMode mode, std::size_t T) {
  return solve_with_map(s, parameter_map(s.x0, W, cfg, mode), T);
}

struct LossGrad {
  double loss = 0.0;  // includes the decay term
  double data = 0.0;  // mean reconstruction MSE alone
  std::vector<double> grad;       // of `loss`
  std::vector<double> data_grad;  // of `data`
  std::size_t exp_clamped = 0;
};

/// Records MSE(N_Θ^T(x₀), x_true) on `t` with the weights bound as `v`.
inline ad::Var taped_sample_loss(ad::Tape& t, const Sample& s, const NetVars& v, const UNetConfig& cfg, SharingMode mode,
                                 std::size_t T) {
  const Shape& shape = s.x0.shape();
  const ad::Var x0 = ad::constant(t, s.x0.storage());
  const ad::Var lam = expand_channels(net_forward(t, cfg, v, x0, shape, s.x0.dtype()), mode, shape);
  const GradField unit = GradField::constant(shape, shape.ndirs(), 1.0);
  const ad::Var x = s.kl ? ad::unrolled_pd3o(ad::TapedCt(s.ct_problem(unit), s.pd3o), lam, x0, T)
                         : ad::unrolled_pdhg(ad::TapedTv(s.tv_problem(unit), s.pdhg), lam, x0, T);
  return ad::mse(x, ad::constant(t, s.x_true.storage()), s.x_true.size());
}

/// MSE of one unrolled reconstruction and its gradient w.r.t. Θ.
inline LossGrad sample_loss_grad(const Sample& s, const NetWeights& W, const UNetConfig& cfg, SharingMode mode, std::size_t T) {
  ad::Tape t;
  const NetVars v = bind_weights(t, W, true);
  const ad::Var l = taped_sample_loss(t, s, v, cfg, mode, T);
  t.backward(l);
  LossGrad r;
  r.data = r.loss = t.value(l)[0];
  r.data_grad = r.grad = collect_grad(t, v);
  r.exp_clamped = t.exp_clamped;
  return r;
}

/// Central-difference check of ∂MSE/∂Θ for one sample on `trials` random weight coordinates.
inline ad::FdReport gradient_check(const Sample& s, const NetWeights& W, const UNetConfig& cfg, SharingMode mode, std::size_t T,
                                   std::size_t trials, std::uint64_t seed, double eps = 1e-6) {
  const LossGrad lg = sample_loss_grad(s, W, cfg, mode, T);
  NetWeights probe = W;
  ad::RecordedFunction f = [&](std::span<const double> theta, std::uint64_t* hash) {
    probe.set_flat(theta);
    ad::Tape t;
    t.track_branches = true;
    const double v = t.value(taped_sample_loss(t, s, bind_weights(t, probe, false), cfg, mode, T))[0];
    *hash = t.branch_hash;
    return v;
  };
  return ad::finite_diff_check(f, W.flat(), lg.grad, trials, seed, eps);
}

/// Mean MSE over the batch plus wd·‖Θ‖², with gradient.
inline LossGrad loss_grad(const std::vector<const Sample*>& batch, const NetWeights& W, const UNetConfig& cfg, SharingMode mode,
                          std::size_t T, double weight_decay) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  LossGrad r;
  r.data_grad.assign(W.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const Sample* s : batch) {
    const LossGrad one = sample_loss_grad(*s, W, cfg, mode, T);
    r.data += inv * one.data;
    for (std::size_t i = 0; i < r.data_grad.size(); ++i) r.data_grad[i] += inv * one.data_grad[i];
    r.exp_clamped += one.exp_clamped;
  }
  const auto theta = W.flat();
  double sq = 0.0;
  for (double v : theta) sq += v * v;
  r.loss = r.data + weight_decay * sq;
  r.grad = r.data_grad;
  for (std::size_t i = 0; i < theta.size(); ++i) r.grad[i] += 2.0 * weight_decay * theta[i];
  return r;
}

/// Loss value without taping: mean MSE of reconstruct() plus the decay term.
inline double loss_value(const std::vector<const Sample*>& batch, const NetWeights& W, const UNetConfig& cfg, SharingMode mode,
                         std::size_t T, double weight_decay) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double data = 0.0;
  for (const Sample* s : batch) data += mse(reconstruct(*s, W, cfg, mode, T), s->x_true);
  double sq = 0.0;
  for (double v : W.flat()) sq += v * v;
  return data / static_cast<double>(batch.size()) + weight_decay * sq;
}

}  // namespace tvmap
