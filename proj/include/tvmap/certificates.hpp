#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "linops.hpp"
#include "solvers.hpp"

namespace tvmap {

struct RateRow {
  std::size_t T = 0;
  double measured = 0.0;
  double bound = 0.0;
  bool holds() const { return measured <= bound; }
};

struct RateCertificate {
  double c = 0.0, C = 0.0;
  double mu_z = 1.0, L_z = 1.0;
  double lambda_min_ata = 0.0;
  double a_norm = 0.0;
  double lambda_bar = 0.0;
  double C_zA = 0.0;
  double v0_dist_M = 0.0;  // ‖v₀ − v*‖_M
  StepParams steps;
  std::vector<RateRow> rows;

  bool all_hold() const {
    for (const auto& r : rows)
      if (!r.holds()) return false;
    return !rows.empty();
  }
};

inline double min_eigenvalue_ata(const Eigen::MatrixXd& A) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A.transpose() * A, Eigen::EigenvaluesOnly);
  return es.eigenvalues()[0];
}

/// max(C L_z ‖A‖, 4CΛ̄, 2, λ_min μ_z) / (λ_min μ_z)
inline double rate_constant(double C, double L_z, double a_norm, double lambda_bar, double lambda_min, double mu_z) {
  const double num = std::max({C * L_z * a_norm, 4.0 * C * lambda_bar, 2.0, lambda_min * mu_z});
  return num / (lambda_min * mu_z);
}

/// Checks ‖x_T − x*‖ ≤ 3C_{z,A}/T^{1/4}·(1 + ‖v₀ − v*‖_M) for a small real L2 problem.
/// Steps default to 0.99/L so that M is positive definite.
inline RateCertificate rate_certificate(const TvProblem& pb, const Tensor& x0, const std::vector<std::size_t>& T_list,
                                        std::optional<StepParams> steps = {}, double ref_tol = 1e-13,
                                        std::size_t ref_max = 200000) {
  if (pb.A.domain().dtype != DType::Real64) throw std::invalid_argument("rate certificate: real problems only");
  const std::size_t n = pb.A.domain().scalars();
  if (n > 64) throw std::invalid_argument("rate certificate: image too large for a dense M");
  RateCertificate rc;
  rc.steps = steps ? *steps : pdhg_steps(pb.A, 0.99);
  rc.steps.validate_pdhg();

  const LinearOperator G = gradient_op(pb.A.domain().shape);
  const Eigen::MatrixXd Ad = dense_matrix(pb.A);
  const Eigen::MatrixXd Gd = dense_matrix(G);
  const Eigen::Index m = Ad.rows() + Gd.rows();
  const auto nn = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd K(m, nn);
  K << Ad, Gd;
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(nn + m, nn + m);
  M.topLeftCorner(nn, nn) = Eigen::MatrixXd::Identity(nn, nn) / rc.steps.tau;
  M.bottomRightCorner(m, m) = Eigen::MatrixXd::Identity(m, m) / rc.steps.sigma;
  M.topRightCorner(nn, m) = -K.transpose();
  M.bottomLeftCorner(m, nn) = -K;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
  const double emin = es.eigenvalues()[0];
  const double emax = es.eigenvalues()[nn + m - 1];
  if (!(emin > 0.0)) throw StepSizeError("rate certificate: M is not positive definite");
  rc.c = std::sqrt(emin);
  rc.C = std::sqrt(emax);
  rc.lambda_min_ata = min_eigenvalue_ata(Ad);
  if (!(rc.lambda_min_ata > 0.0)) throw std::invalid_argument("rate certificate: A is not injective");
  rc.a_norm = Eigen::JacobiSVD<Eigen::MatrixXd>(Ad).singularValues()[0];
  rc.lambda_bar = norm2(pb.lambda.flatten());
  rc.C_zA = rate_constant(rc.C, rc.L_z, rc.a_norm, rc.lambda_bar, rc.lambda_min_ata, rc.mu_z);

  const ReferenceResult ref = reference_solve(pb, x0, rc.steps, ref_tol, ref_max);
  // v* = (x*, p*, q*) with p* = Ax* − z and q* the final dual iterate
  Eigen::VectorXd d(nn + m);
  const auto ax = pb.A.apply(ref.x.raw());
  for (Eigen::Index i = 0; i < nn; ++i) d[i] = x0.raw()[static_cast<std::size_t>(i)] - ref.x.raw()[static_cast<std::size_t>(i)];
  for (Eigen::Index i = 0; i < Ad.rows(); ++i) d[nn + i] = -(ax[static_cast<std::size_t>(i)] - pb.z.raw()[static_cast<std::size_t>(i)]);
  for (Eigen::Index i = 0; i < Gd.rows(); ++i) d[nn + Ad.rows() + i] = -ref.state.q[static_cast<std::size_t>(i)];
  rc.v0_dist_M = std::sqrt(d.dot(M * d));

  for (std::size_t T : T_list) {
    if (T == 0) throw std::invalid_argument("rate certificate: T must be positive");
    const SolveReport r = pdhg_solve(pb, x0, T, rc.steps);
    const double bound = 3.0 * rc.C_zA / std::pow(static_cast<double>(T), 0.25) * (1.0 + rc.v0_dist_M);
    rc.rows.push_back({T, distance(r.x, ref.x), bound});
  }
  return rc;
}

struct LipschitzProbe {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds() const { return lhs <= rhs; }
};

/// ‖S*(Λ₁) − S*(Λ₂)‖ against 2‖∇‖/(λ_min(AᵀA) μ_z)·‖Λ₁ − Λ₂‖ for an L2 fidelity (μ_z = 1).
inline LipschitzProbe lipschitz_probe(const LinearOperator& A, const Tensor& z, const GradField& l1, const GradField& l2,
                                      double ref_tol = 1e-12, std::size_t ref_max = 200000) {
  const Tensor x0 = Tensor::from_raw(A.domain().shape, A.domain().dtype, A.apply_adjoint(z.raw()));
  const StepParams sp = pdhg_steps(A);
  const ReferenceResult r1 = reference_solve({A, z, l1}, x0, sp, ref_tol, ref_max);
  const ReferenceResult r2 = reference_solve({A, z, l2}, x0, sp, ref_tol, ref_max);
  const double gnorm = op_norm(gradient_op(A.domain().shape, A.domain().dtype), 1e-10);
  const double lmin = min_eigenvalue_ata(dense_matrix(A));
  if (!(lmin > 0.0)) throw std::invalid_argument("lipschitz probe: A is not injective");
  const auto f1 = l1.flatten(), f2 = l2.flatten();
  return {distance(r1.x, r2.x), 2.0 * gnorm / lmin * distance(f1, f2)};
}

}  // namespace tvmap
