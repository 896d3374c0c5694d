#pragma once

// PDHG and PD3O iterations recorded on a tape. Each step calls the same flat kernels in the same
// order as pdhg_step / pd3o_step, so taped and plain runs agree bit-for-bit.

#include <memory>
#include <vector>

#include "autodiff.hpp"
#include "solvers.hpp"

namespace tvmap::ad {

/// A x, skipping the node entirely when A is the identity.
inline Var forward_op(const std::shared_ptr<const LinearOperator>& A, Var x) {
  return A->name() == "identity" ? x : apply(A, x, false);
}

inline Var adjoint_op(const std::shared_ptr<const LinearOperator>& A, Var x) {
  return A->name() == "identity" ? x : apply(A, x, true);
}

struct TapedTv {
  std::shared_ptr<const LinearOperator> A;
  std::shared_ptr<const LinearOperator> G;
  std::shared_ptr<const std::vector<double>> z;
  std::size_t stride = 1;  // scalars per element
  StepParams sp;

  TapedTv(const TvProblem& pb, const StepParams& steps)
      : A(std::make_shared<LinearOperator>(pb.A)),
        G(std::make_shared<LinearOperator>(gradient_op(pb.A.domain().shape, pb.A.domain().dtype))),
        z(std::make_shared<std::vector<double>>(pb.z.raw().begin(), pb.z.raw().end())),
        stride(scalars_per_element(pb.A.domain().dtype)),
        sp(steps) {
    sp.validate_pdhg();
  }
};

/// T PDHG iterations from x₀ with p₀ = 0, q₀ = 0; `lambda` is the flat direction-major map.
inline Var unrolled_pdhg(const TapedTv& pb, Var lambda, Var x0, std::size_t T) {
  Tape& t = *lambda.tape;
  if (t.size(x0) != pb.A->domain().scalars()) throw ShapeError("unrolled_pdhg: initial image mismatch");
  if (t.size(lambda) * pb.stride != pb.G->codomain().scalars()) throw ShapeError("unrolled_pdhg: parameter-map mismatch");
  Var x = x0, xbar = x0;
  Var p = constant(t, std::vector<double>(pb.A->codomain().scalars(), 0.0));
  Var q = constant(t, std::vector<double>(pb.G->codomain().scalars(), 0.0));
  const StepParams& s = pb.sp;
  for (std::size_t k = 0; k < T; ++k) {
    p = prox_l2_conj_step(p, forward_op(pb.A, xbar), pb.z, s.sigma);
    q = clip(lincomb(1.0, q, s.sigma, apply(pb.G, xbar)), lambda, pb.stride);
    Var xn = lincomb(1.0, x, -s.tau, adjoint_op(pb.A, p));
    xn = lincomb(1.0, xn, -s.tau, apply(pb.G, q, true));
    xbar = lincomb(1.0 + s.theta, xn, -s.theta, x);
    x = xn;
  }
  return x;
}

struct TapedCt {
  std::shared_ptr<const LinearOperator> A;
  std::shared_ptr<const LinearOperator> G;
  std::shared_ptr<const std::vector<double>> z;
  KlParams kl;
  Pd3oSteps sp;

  TapedCt(const CtProblem& pb, const Pd3oSteps& steps)
      : A(std::make_shared<LinearOperator>(pb.A)),
        G(std::make_shared<LinearOperator>(gradient_op(pb.A.domain().shape))),
        z(std::make_shared<std::vector<double>>(pb.z.raw().begin(), pb.z.raw().end())),
        kl(pb.kl),
        sp(steps) {
    kl.validate();
  }

  Var grad_h(Var x) const { return apply(A, kl_residual(apply(A, x), z, kl), true); }
};

/// T PD3O iterations with p₀ = x̄₀, q₀ = 0; returns p_T.
inline Var unrolled_pd3o(const TapedCt& pb, Var lambda, Var xbar0, std::size_t T) {
  Tape& t = *lambda.tape;
  if (t.size(xbar0) != pb.A->domain().scalars()) throw ShapeError("unrolled_pd3o: initial image mismatch");
  if (t.size(lambda) != pb.G->codomain().scalars()) throw ShapeError("unrolled_pd3o: parameter-map mismatch");
  const double tau = pb.sp.tau, sigma = pb.sp.sigma;
  Var p = xbar0, xbar = xbar0;
  Var q = constant(t, std::vector<double>(pb.G->codomain().scalars(), 0.0));
  Var gh = pb.grad_h(p);
  for (std::size_t k = 0; k < T; ++k) {
    q = clip(lincomb(1.0, q, sigma, apply(pb.G, xbar)), lambda, 1);
    Var pn = lincomb(1.0, p, -tau, gh);
    pn = relu(lincomb(1.0, pn, -tau, apply(pb.G, q, true)));
    Var ghn = pb.grad_h(pn);
    xbar = linear_sum({2.0, -1.0, tau, -tau}, {pn, p, gh, ghn});
    p = pn;
    gh = ghn;
  }
  return p;
}

}  // namespace tvmap::ad
