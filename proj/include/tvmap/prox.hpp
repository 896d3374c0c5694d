#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "linops.hpp"
#include "tensor.hpp"

namespace tvmap {

// ---------------------------------------------------------------------------
// Dual prox of the weighted ℓ1 term: entrywise projection onto [-Λ, Λ].

/// `stride` consecutive q scalars share one Λ entry (2 for interleaved complex q).
inline void clip_flat(std::span<const double> q, std::span<const double> lambda, std::size_t stride,
                      std::span<double> out) {
  if (q.size() != lambda.size() * stride || out.size() != q.size()) throw ShapeError("clip: shape mismatch");
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double l = lambda[i / stride];
    out[i] = std::min(std::max(q[i], -l), l);
  }
}

inline GradField clip(const GradField& q, const GradField& lambda) {
  q.check_consistent();
  lambda.check_consistent();
  if (q.ndirs() != lambda.ndirs() || q.shape() != lambda.shape() || lambda.dtype() != DType::Real64)
    throw ShapeError("clip: parameter-map does not match the dual variable");
  GradField out = q;
  for (std::size_t d = 0; d < q.ndirs(); ++d)
    clip_flat(q.comps[d].raw(), lambda.comps[d].raw(), q.comps[d].ncomp(), out.comps[d].raw());
  return out;
}

// ---------------------------------------------------------------------------
// Conjugate prox of ½‖· − z‖²: p⁺ = (p + σ(Ax̄ − z)) / (1 + σ).

inline void prox_l2_conj_step_flat(std::span<const double> p, std::span<const double> ax, std::span<const double> z,
                                   double sigma, std::span<double> out) {
  if (p.size() != ax.size() || p.size() != z.size() || out.size() != p.size())
    throw ShapeError("prox_l2_conj_step: shape mismatch");
  if (!(sigma > 0.0)) throw std::invalid_argument("prox_l2_conj_step: sigma must be positive");
  const double inv = 1.0 / (1.0 + sigma);
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = (p[i] + sigma * (ax[i] - z[i])) * inv;
}

inline Tensor prox_l2_conj_step(const Tensor& p, const Tensor& ax, const Tensor& z, double sigma) {
  Tensor out = p;
  prox_l2_conj_step_flat(p.raw(), ax.raw(), z.raw(), sigma, out.raw());
  return out;
}

/// Projection onto the nonnegative orthant.
inline Tensor prox_nonneg(const Tensor& p) {
  Tensor out = p;
  for (auto& v : out.raw()) v = std::max(v, 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Kullback-Leibler fidelity for log-transformed photon counts.

struct KlParams {
  double mu = 81.35858;
  double n0 = 4096.0;

  void validate() const {
    if (!(mu > 0.0) || !(n0 > 0.0)) throw std::invalid_argument("KL parameters must be positive");
  }
};

inline constexpr double kExpClamp = 700.0;

/// Counts exponent arguments that had to be clamped to ±700.
struct ExpGuard {
  std::size_t clamped = 0;
};

inline double clamped_exp(double a, ExpGuard* guard = nullptr) {
  if (a > kExpClamp || a < -kExpClamp) {
    if (guard) ++guard->clamped;
    a = std::clamp(a, -kExpClamp, kExpClamp);
  }
  return std::exp(a);
}

/// Σ e^{−(Ax)_i μ} N₀ − e^{−z_i μ} N₀ (−(Ax)_i μ + log N₀)
inline double kl_value(std::span<const double> ax, std::span<const double> z, const KlParams& kl,
                       ExpGuard* guard = nullptr) {
  kl.validate();
  if (ax.size() != z.size()) throw ShapeError("kl_value: shape mismatch");
  const double logn0 = std::log(kl.n0);
  double acc = 0.0;
  for (std::size_t i = 0; i < ax.size(); ++i)
    acc += clamped_exp(-ax[i] * kl.mu, guard) * kl.n0 -
           clamped_exp(-z[i] * kl.mu, guard) * kl.n0 * (-ax[i] * kl.mu + logn0);
  return acc;
}

inline double kl_value(const Tensor& ax, const Tensor& z, const KlParams& kl, ExpGuard* guard = nullptr) {
  return kl_value(ax.raw(), z.raw(), kl, guard);
}

/// Residual in data space whose backprojection is ∇h: μN₀(e^{−zμ} − e^{−Axμ}).
inline void kl_residual(std::span<const double> ax, std::span<const double> z, const KlParams& kl,
                        std::span<double> out, ExpGuard* guard = nullptr) {
  for (std::size_t i = 0; i < ax.size(); ++i)
    out[i] = kl.mu * kl.n0 * (clamped_exp(-z[i] * kl.mu, guard) - clamped_exp(-ax[i] * kl.mu, guard));
}

/// ∇h(x) = μN₀ Aᵀ(e^{−zμ} − e^{−Axμ}).
inline Tensor kl_grad_image(const Tensor& x, const LinearOperator& A, const Tensor& z, const KlParams& kl,
                            ExpGuard* guard = nullptr) {
  kl.validate();
  const auto ax = A.apply(x.raw());
  std::vector<double> r(ax.size());
  kl_residual(ax, z.raw(), kl, r, guard);
  return Tensor::from_raw(A.domain().shape, A.domain().dtype, A.apply_adjoint(r));
}

/// Upper bound ‖A‖²μ²N₀ on Lip(∇h) over the nonnegative orthant.
inline double kl_lipschitz(double a_norm, const KlParams& kl) {
  kl.validate();
  return a_norm * a_norm * kl.mu * kl.mu * kl.n0;
}

inline double kl_lipschitz(const LinearOperator& A, const KlParams& kl) { return kl_lipschitz(A.norm(), kl); }

}  // namespace tvmap
