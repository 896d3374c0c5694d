#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "linops.hpp"
#include "metrics.hpp"
#include "prox.hpp"
#include "tensor.hpp"

namespace tvmap {

class StepSizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::size_t iteration)
      : std::runtime_error(what + " (iteration " + std::to_string(iteration) + ")"), iteration(iteration) {}
  std::size_t iteration;
};

/// out = a*u + b*v, elementwise. Shared by the solvers and the taped iterations so both
/// produce identical floating-point results.
inline void lincomb(double a, std::span<const double> u, double b, std::span<const double> v, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * u[i] + b * v[i];
}

struct StepParams {
  double sigma = 0.0;
  double tau = 0.0;
  double theta = 1.0;
  double k_norm = 0.0;  // ‖K‖ the step sizes were derived from

  void validate_pdhg() const {
    if (!(sigma > 0.0) || !(tau > 0.0)) throw StepSizeError("step sizes must be positive");
    if (!(theta > 0.0) || theta > 1.0) throw StepSizeError("theta must lie in (0, 1]");
    if (!(k_norm > 0.0)) throw StepSizeError("step parameters carry no operator norm");
    if (tau * sigma * k_norm * k_norm > 1.0 + 1e-12) throw StepSizeError("tau * sigma * L^2 exceeds 1");
  }
};

/// σ = τ = safety / ‖[A; ∇]‖ and θ = 1.
inline StepParams pdhg_steps(const LinearOperator& A, double safety = 1.0) {
  const LinearOperator G = gradient_op(A.domain().shape, A.domain().dtype);
  const double L = stacked_norm(A, G, {1e-9, 400, 0x5eed});
  return {safety / L, safety / L, 1.0, L};
}

/// ½‖Ax − z‖² + ‖Λ∇x‖₁ with a fixed parameter-map.
struct TvProblem {
  LinearOperator A;
  Tensor z;
  GradField lambda;

  void validate(const Tensor& x0) const {
    lambda.check_consistent();
    const Shape& s = A.domain().shape;
    if (x0.shape() != s || x0.dtype() != A.domain().dtype) throw ShapeError("initial image does not match operator domain");
    if (z.raw().size() != A.codomain().scalars()) throw ShapeError("data does not match operator codomain");
    if (lambda.shape() != s || lambda.ndirs() != s.ndirs()) throw ShapeError("parameter-map shape mismatch");
    if (!lambda.strictly_positive()) throw std::invalid_argument("parameter-map must be strictly positive");
  }
};

inline double primal_objective(const TvProblem& pb, const Tensor& x) {
  const auto ax = pb.A.apply(x.raw());
  return 0.5 * std::pow(distance(ax, pb.z.raw()), 2) + tv_weighted(x, pb.lambda);
}

struct IterDiag {
  std::size_t iter = 0;
  double objective = 0.0;
  double step_norm = 0.0;
  double data_residual = 0.0;
};

struct SolveReport {
  Tensor x;
  std::vector<IterDiag> diagnostics;
  std::size_t iterations = 0;
  double wall_seconds = 0.0;
};

/// Primal x, extrapolation x̄, data-space dual p and gradient-space dual q (flat, direction-major).
struct PdhgState {
  Tensor x;
  Tensor xbar;
  std::vector<double> p;
  std::vector<double> q;
  std::size_t k = 0;

  static PdhgState start(const TvProblem& pb, const Tensor& x0) {
    return {x0, x0, std::vector<double>(pb.A.codomain().scalars(), 0.0),
            std::vector<double>(x0.raw().size() * x0.shape().ndirs(), 0.0), 0};
  }
};

/// Scratch buffers reused across iterations.
struct PdhgWork {
  explicit PdhgWork(const TvProblem& pb)
      : G(gradient_op(pb.A.domain().shape, pb.A.domain().dtype)),
        lambda(pb.lambda.flatten()),
        ax(pb.A.codomain().scalars()),
        g(G.codomain().scalars()),
        ahp(pb.A.domain().scalars()),
        dq(pb.A.domain().scalars()),
        xn(pb.A.domain().scalars()) {}
  LinearOperator G;
  std::vector<double> lambda, ax, g, ahp, dq, xn;
};

/// One PDHG iteration for ½‖Ax − z‖² + ‖Λ∇x‖₁; returns ‖x_{k+1} − x_k‖.
inline double pdhg_step(PdhgState& st, const TvProblem& pb, const StepParams& sp, PdhgWork& w) {
  const std::size_t stride = st.x.ncomp();
  pb.A.apply(st.xbar.raw(), w.ax);
  prox_l2_conj_step_flat(st.p, w.ax, pb.z.raw(), sp.sigma, st.p);
  w.G.apply(st.xbar.raw(), w.g);
  lincomb(1.0, st.q, sp.sigma, w.g, w.g);
  clip_flat(w.g, w.lambda, stride, st.q);
  pb.A.apply_adjoint(st.p, w.ahp);
  w.G.apply_adjoint(st.q, w.dq);
  lincomb(1.0, st.x.raw(), -sp.tau, w.ahp, w.xn);
  lincomb(1.0, w.xn, -sp.tau, w.dq, w.xn);
  lincomb(1.0 + sp.theta, w.xn, -sp.theta, st.x.raw(), st.xbar.raw());
  const double step = distance(w.xn, st.x.raw());
  std::copy(w.xn.begin(), w.xn.end(), st.x.raw().begin());
  ++st.k;
  return step;
}

inline IterDiag pdhg_diag(const PdhgState& st, const TvProblem& pb, double step) {
  const auto ax = pb.A.apply(st.x.raw());
  const double res = distance(ax, pb.z.raw());
  return {st.k, 0.5 * res * res + tv_weighted(st.x, pb.lambda), step, res};
}

/// Exactly T iterations of PDHG from x₀ with p₀ = 0, q₀ = 0, x̄₀ = x₀.
inline SolveReport pdhg_solve(const TvProblem& pb, const Tensor& x0, std::size_t T, const StepParams& sp,
                              bool record = false) {
  sp.validate_pdhg();
  pb.validate(x0);
  const auto t0 = std::chrono::steady_clock::now();
  PdhgState st = PdhgState::start(pb, x0);
  PdhgWork w(pb);
  SolveReport rep;
  for (std::size_t k = 0; k < T; ++k) {
    const double step = pdhg_step(st, pb, sp, w);
    if (record) rep.diagnostics.push_back(pdhg_diag(st, pb, step));
  }
  for (double v : st.x.raw())
    if (!std::isfinite(v)) throw NumericalError("pdhg: non-finite iterate", st.k);
  rep.x = st.x;
  rep.iterations = T;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

struct ReferenceResult {
  Tensor x;
  PdhgState state;  // final PDHG state; empty for PD3O references
  std::size_t iterations = 0;
  double rel_step = 0.0;
  bool reached = false;
};

/// Runs PDHG until ‖x_k − x_{k−1}‖ / max(‖x_k‖, ε) ≤ tol or T_max iterations.
inline ReferenceResult reference_solve(const TvProblem& pb, const Tensor& x0, const StepParams& sp,
                                       double tol = 1e-10, std::size_t T_max = 20000) {
  sp.validate_pdhg();
  pb.validate(x0);
  ReferenceResult r;
  r.state = PdhgState::start(pb, x0);
  PdhgWork w(pb);
  for (std::size_t k = 0; k < T_max; ++k) {
    const double step = pdhg_step(r.state, pb, sp, w);
    r.rel_step = step / std::max(norm2(r.state.x), 1e-300);
    r.iterations = k + 1;
    if (r.rel_step <= tol) {
      r.reached = true;
      break;
    }
  }
  r.x = r.state.x;
  return r;
}

// ---------------------------------------------------------------------------
// PD3O for h(x) + ‖Λ∇x‖₁ + ι_{x ≥ 0}.

using SmoothGradient = std::function<void(std::span<const double>, std::span<double>)>;

struct Pd3oState {
  std::vector<double> p;     // primal iterate (nonnegative)
  std::vector<double> xbar;  // extrapolated point fed to the dual step
  std::vector<double> q;     // dual of the TV term
  std::vector<double> gh;    // ∇h(p)
  std::size_t k = 0;
};

struct Pd3oSteps {
  double sigma = 0.0;
  double tau = 0.0;
};

/// τ = safety·2/Lip(∇h), σ = 1/(τ‖∇‖²).
inline Pd3oSteps pd3o_steps(double lip_h, double grad_norm, double safety = 0.9) {
  if (!(lip_h > 0.0) || !(grad_norm > 0.0)) throw StepSizeError("pd3o: Lipschitz constant and ‖∇‖ must be positive");
  const double tau = safety * 2.0 / lip_h;
  return {1.0 / (tau * grad_norm * grad_norm), tau};
}

inline Pd3oState pd3o_start(const Tensor& x0, const SmoothGradient& grad_h) {
  Pd3oState st;
  st.p = x0.storage();
  st.xbar = x0.storage();
  st.q.assign(x0.raw().size() * x0.shape().ndirs(), 0.0);
  st.gh.assign(st.p.size(), 0.0);
  grad_h(st.p, st.gh);
  return st;
}

/// One PD3O iteration; returns ‖p_{k+1} − p_k‖.
inline double pd3o_step(Pd3oState& st, const Shape& shape, std::span<const double> lambda, const SmoothGradient& grad_h,
                        const Pd3oSteps& sp) {
  const std::size_t n = st.p.size();
  std::vector<double> g(n * shape.ndirs()), dq(n), pn(n), ghn(n);
  grad_flat(st.xbar, shape, 1, g);
  lincomb(1.0, st.q, sp.sigma, g, g);
  clip_flat(g, lambda, 1, st.q);
  grad_adjoint_flat(st.q, shape, 1, dq);
  lincomb(1.0, st.p, -sp.tau, st.gh, pn);
  lincomb(1.0, pn, -sp.tau, dq, pn);
  for (auto& v : pn) v = std::max(v, 0.0);
  grad_h(pn, ghn);
  double step = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    st.xbar[i] = 2.0 * pn[i] - st.p[i] + sp.tau * st.gh[i] - sp.tau * ghn[i];
    step += (pn[i] - st.p[i]) * (pn[i] - st.p[i]);
  }
  st.p.swap(pn);
  st.gh.swap(ghn);
  ++st.k;
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(st.p[i]) || !std::isfinite(st.xbar[i])) throw NumericalError("pd3o: non-finite iterate", st.k);
  return std::sqrt(step);
}

/// h(x) = KL(Ax, z) with CT data.
struct CtProblem {
  LinearOperator A;
  Tensor z;
  GradField lambda;
  KlParams kl;

  SmoothGradient smooth_gradient(ExpGuard* guard = nullptr) const {
    auto ax = std::make_shared<std::vector<double>>(A.codomain().scalars());
    return [this, ax, guard](std::span<const double> x, std::span<double> out) {
      A.apply(x, *ax);
      kl_residual(*ax, z.raw(), kl, *ax, guard);
      A.apply_adjoint(*ax, out);
    };
  }

  double objective(const Tensor& x) const {
    const auto ax = A.apply(x.raw());
    return kl_value(ax, z.raw(), kl) + tv_weighted(x, lambda);
  }

  Pd3oSteps steps(double safety = 0.9) const {
    const double gnorm = gradient_op(A.domain().shape).norm();
    return pd3o_steps(kl_lipschitz(A, kl), gnorm, safety);
  }
};

/// Exactly T iterations of PD3O (p₀ = x̄₀, q₀ = 0); returns the nonnegative primal iterate p_T.
inline SolveReport pd3o_solve_ct(const CtProblem& pb, const Tensor& xbar0, std::size_t T, std::optional<Pd3oSteps> steps = {},
                                 bool record = false) {
  pb.kl.validate();
  if (xbar0.shape() != pb.A.domain().shape || xbar0.is_complex()) throw ShapeError("pd3o: initial image mismatch");
  if (!pb.lambda.strictly_positive()) throw std::invalid_argument("parameter-map must be strictly positive");
  const Pd3oSteps sp = steps ? *steps : pb.steps();
  const auto t0 = std::chrono::steady_clock::now();
  const auto gh = pb.smooth_gradient();
  Pd3oState st = pd3o_start(xbar0, gh);
  const auto lambda = pb.lambda.flatten();
  SolveReport rep;
  for (std::size_t k = 0; k < T; ++k) {
    const double step = pd3o_step(st, xbar0.shape(), lambda, gh, sp);
    if (record) {
      const Tensor p = Tensor::from_real(xbar0.shape(), st.p);
      const auto ax = pb.A.apply(st.p);
      rep.diagnostics.push_back({st.k, pb.objective(p), step, distance(ax, pb.z.raw())});
    }
  }
  rep.x = Tensor::from_real(xbar0.shape(), st.p);
  rep.iterations = T;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

inline ReferenceResult reference_solve_ct(const CtProblem& pb, const Tensor& xbar0, double tol = 1e-10,
                                          std::size_t T_max = 20000, std::optional<Pd3oSteps> steps = {}) {
  const Pd3oSteps sp = steps ? *steps : pb.steps();
  const auto gh = pb.smooth_gradient();
  Pd3oState st = pd3o_start(xbar0, gh);
  const auto lambda = pb.lambda.flatten();
  ReferenceResult r;
  for (std::size_t k = 0; k < T_max; ++k) {
    const double step = pd3o_step(st, xbar0.shape(), lambda, gh, sp);
    r.rel_step = step / std::max(norm2(st.p), 1e-300);
    r.iterations = k + 1;
    if (r.rel_step <= tol) {
      r.reached = true;
      break;
    }
  }
  r.x = Tensor::from_real(xbar0.shape(), st.p);
  return r;
}

// ---------------------------------------------------------------------------
// Scalar parameter grid search.

/// Λ = (λ_xy, λ_xy[, λ_t]) constant over the grid.
inline GradField scalar_map(const Shape& s, double lambda_xy, double lambda_t) {
  GradField g = GradField::constant(s, s.ndirs(), lambda_xy);
  if (s.ndirs() == 3) g.comps[2] = Tensor::constant(s, lambda_t);
  return g;
}

struct GridProblem {
  std::function<Tensor(const GradField&)> solve;
  Tensor x_true;
};

struct GridPoint {
  double lambda_xy = 0.0;
  double lambda_t = 0.0;
  double mean_psnr = 0.0;
};

struct GridResult {
  GridPoint best;
  std::vector<GridPoint> table;
};

/// Index of the maximal score; earlier entries win ties.
inline std::size_t argmax_first(const std::vector<double>& scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

/// Mean-PSNR grid search over λ^{xyt} (one list) or λ^{xy,t} (Cartesian product of two lists).
/// Candidates are visited in ascending order so ties resolve toward less smoothing.
inline GridResult grid_search_scalar(const std::vector<GridProblem>& problems, SharingMode mode,
                                     std::vector<double> grid_xy, std::vector<double> grid_t = {}) {
  if (problems.empty()) throw std::invalid_argument("grid search needs at least one problem");
  if (grid_xy.empty()) throw std::invalid_argument("grid search needs a nonempty grid");
  if (mode == SharingMode::X_Y_T) throw std::invalid_argument("grid search supports xyt and xy_t only");
  if (mode == SharingMode::XY_T && grid_t.empty()) grid_t = grid_xy;
  for (double v : grid_xy)
    if (!(v > 0.0)) throw std::invalid_argument("grid values must be positive");
  for (double v : grid_t)
    if (!(v > 0.0)) throw std::invalid_argument("grid values must be positive");
  std::sort(grid_xy.begin(), grid_xy.end());
  std::sort(grid_t.begin(), grid_t.end());

  GridResult res;
  auto eval = [&](double lxy, double lt) {
    double acc = 0.0;
    for (const auto& pb : problems) {
      const Tensor x = pb.solve(scalar_map(pb.x_true.shape(), lxy, lt));
      acc += psnr(x, pb.x_true);
    }
    res.table.push_back({lxy, lt, acc / static_cast<double>(problems.size())});
  };
  for (double lxy : grid_xy) {
    if (mode == SharingMode::XYT) {
      eval(lxy, lxy);
    } else {
      for (double lt : grid_t) eval(lxy, lt);
    }
  }
  std::vector<double> scores;
  for (const auto& p : res.table) scores.push_back(p.mean_psnr);
  res.best = res.table[argmax_first(scores)];
  return res;
}

}  // namespace tvmap
