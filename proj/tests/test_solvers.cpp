#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tvmap/radon.hpp"
#include "tvmap/solvers.hpp"

using namespace tvmap;

namespace {

TvProblem rof(const Tensor& z, double lambda) {
  return {identity_op(z.shape()), z, GradField::constant(z.shape(), z.shape().ndirs(), lambda)};
}

// Minimizes the dual ½‖z − ∇ᵀq‖² over the box |q| ≤ Λ by exact coordinate steps; x = z − ∇ᵀq.
std::vector<double> rof_by_dual_coordinates(const Tensor& z, const GradField& lambda) {
  const Eigen::MatrixXd D = dense_matrix(gradient_op(z.shape()));
  const auto lam = lambda.flatten();
  Eigen::VectorXd q = Eigen::VectorXd::Zero(D.rows());
  const Eigen::VectorXd zv = Eigen::Map<const Eigen::VectorXd>(z.raw().data(), D.cols());
  Eigen::VectorXd x = zv;
  for (int sweep = 0; sweep < 200000; ++sweep) {
    double change = 0.0;
    for (Eigen::Index j = 0; j < D.rows(); ++j) {
      const double nn = D.row(j).squaredNorm();
      if (nn == 0.0) continue;
      const double target = q[j] + D.row(j).dot(x) / nn;
      const double qn = std::clamp(target, -lam[static_cast<std::size_t>(j)], lam[static_cast<std::size_t>(j)]);
      const double dq = qn - q[j];
      if (dq != 0.0) {
        x -= dq * D.row(j).transpose();
        q[j] = qn;
        change = std::max(change, std::abs(dq));
      }
    }
    if (change < 1e-15) break;
  }
  return {x.data(), x.data() + x.size()};
}

}  // namespace

TEST(Pdhg, SinglePixelReturnsData) {
  const Tensor z = Tensor::from_real({1, 1, 1}, {0.7});
  const TvProblem pb = rof(z, 3.0);
  const SolveReport r = pdhg_solve(pb, z, 200, pdhg_steps(pb.A));
  EXPECT_NEAR(r.x.raw()[0], 0.7, 1e-8);
}

TEST(Pdhg, TwoPixelRof) {
  const Tensor z = Tensor::from_real({2, 1, 1}, {0.0, 2.0});
  const TvProblem pb = rof(z, 0.5);
  const SolveReport r = pdhg_solve(pb, z, 5000, pdhg_steps(pb.A));
  EXPECT_NEAR(r.x.raw()[0], 0.5, 1e-6);
  EXPECT_NEAR(r.x.raw()[1], 1.5, 1e-6);
}

TEST(Pdhg, HugeLambdaGivesMean) {
  const Tensor z = Tensor::from_real({2, 1, 1}, {0.0, 2.0});
  const TvProblem pb = rof(z, 1e6);
  const SolveReport r = pdhg_solve(pb, z, 5000, pdhg_steps(pb.A));
  EXPECT_NEAR(r.x.raw()[0], 1.0, 1e-6);
  EXPECT_NEAR(r.x.raw()[1], 1.0, 1e-6);
}

TEST(Pdhg, MatchesDualCoordinateOracle) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (Shape s : {Shape{8, 1, 1}, Shape{4, 2, 1}, Shape{2, 2, 2}}) {
    for (int k = 0; k < 5; ++k) {
      std::vector<double> zv(8);
      for (auto& v : zv) v = u(rng);
      const Tensor z = Tensor::from_real(s, zv);
      GradField lam = GradField::zeros(s, s.ndirs());
      for (auto& c : lam.comps)
        for (auto& v : c.raw()) v = 0.05 + 0.3 * u(rng);
      const TvProblem pb{identity_op(s), z, lam};
      const SolveReport r = pdhg_solve(pb, z, 20000, pdhg_steps(pb.A));
      const auto oracle = rof_by_dual_coordinates(z, lam);
      EXPECT_LE(distance(r.x.raw(), oracle), 1e-5);
    }
  }
}

TEST(Pdhg, ZeroIterationsReturnsStart) {
  const Tensor z = Tensor::from_real({2, 2, 1}, {1, 2, 3, 4});
  const TvProblem pb = rof(z, 0.1);
  EXPECT_EQ(pdhg_solve(pb, z, 0, pdhg_steps(pb.A)).x, z);
}

TEST(Pdhg, RejectsBadSteps) {
  const Tensor z = Tensor::from_real({2, 2, 1}, {1, 2, 3, 4});
  const TvProblem pb = rof(z, 0.1);
  StepParams sp = pdhg_steps(pb.A);
  sp.tau *= 1.5;
  EXPECT_THROW(pdhg_solve(pb, z, 5, sp), StepSizeError);
  sp = pdhg_steps(pb.A);
  sp.theta = 1.2;
  EXPECT_THROW(pdhg_solve(pb, z, 5, sp), StepSizeError);
  EXPECT_THROW(pdhg_solve(rof(z, 0.0), z, 5, pdhg_steps(pb.A)), std::invalid_argument);
  EXPECT_THROW(pdhg_solve(pb, Tensor::zeros({3, 1, 1}), 5, pdhg_steps(pb.A)), ShapeError);
}

TEST(Pdhg, ExtrapolationInvariant) {
  const Tensor z = Tensor::from_real({3, 2, 1}, {1, 0, 3, 2, 0.5, 4});
  const TvProblem pb = rof(z, 0.3);
  const StepParams sp = pdhg_steps(pb.A);
  PdhgState st = PdhgState::start(pb, z);
  PdhgWork w(pb);
  for (int k = 0; k < 10; ++k) {
    const Tensor prev = st.x;
    pdhg_step(st, pb, sp, w);
    for (std::size_t i = 0; i < 6; ++i)
      EXPECT_NEAR(st.xbar.raw()[i], st.x.raw()[i] + (st.x.raw()[i] - prev.raw()[i]), 1e-14);
  }
}

TEST(Pdhg, FixedPoint) {
  const Tensor z = Tensor::from_real({2, 1, 1}, {0.0, 2.0});
  const TvProblem pb = rof(z, 0.5);
  const Tensor xs = Tensor::from_real({2, 1, 1}, {0.5, 1.5});
  PdhgState st{xs, xs, {0.5, -0.5}, {0.5, 0.0, 0.0, 0.0}, 0};
  PdhgWork w(pb);
  pdhg_step(st, pb, pdhg_steps(pb.A), w);
  EXPECT_LE(distance(st.x, xs), 1e-10);
}

TEST(Pdhg, DeterministicAndDiagnostics) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  std::vector<double> zv(4 * 4 * 3);
  for (auto& v : zv) v = nd(rng);
  const Tensor z = Tensor::from_real({4, 4, 3}, zv);
  const TvProblem pb = rof(z, 0.2);
  const StepParams sp = pdhg_steps(pb.A);
  const SolveReport a = pdhg_solve(pb, z, 50, sp, true);
  const SolveReport b = pdhg_solve(pb, z, 50, sp, true);
  EXPECT_EQ(a.x, b.x);
  ASSERT_EQ(a.diagnostics.size(), 50u);
  EXPECT_EQ(a.diagnostics.back().iter, 50u);
  EXPECT_NEAR(a.diagnostics.back().objective, primal_objective(pb, a.x), 1e-12);
}

TEST(Pdhg, ComplexDenoisingAgreesWithStackedReal) {
  // real and imaginary parts decouple for A = I and the anisotropic TV
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  const Shape s{4, 3, 2};
  std::vector<std::complex<double>> zc(s.size());
  std::vector<double> re(s.size()), im(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    zc[i] = {nd(rng), nd(rng)};
    re[i] = zc[i].real();
    im[i] = zc[i].imag();
  }
  const Tensor z = Tensor::from_complex(s, zc);
  const TvProblem pb{identity_op(s, DType::Complex128), z, GradField::constant(s, 3, 0.4)};
  const ReferenceResult rc = reference_solve(pb, z, pdhg_steps(pb.A), 1e-12);
  const ReferenceResult rr = reference_solve(rof(Tensor::from_real(s, re), 0.4), Tensor::from_real(s, re),
                                             pdhg_steps(identity_op(s)), 1e-12);
  const ReferenceResult ri = reference_solve(rof(Tensor::from_real(s, im), 0.4), Tensor::from_real(s, im),
                                             pdhg_steps(identity_op(s)), 1e-12);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_NEAR(rc.x.real(i), rr.x.raw()[i], 1e-8);
    EXPECT_NEAR(rc.x.imag(i), ri.x.raw()[i], 1e-8);
  }
}

TEST(Pdhg, PracticalObjectiveDecrease) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  std::vector<double> zv(8 * 8 * 4);
  for (std::size_t i = 0; i < zv.size(); ++i) zv[i] = (i % 8 < 4 ? 1.0 : 0.0) + 0.2 * nd(rng);
  const Tensor z = Tensor::from_real({8, 8, 4}, zv);
  const TvProblem pb = rof(z, 0.15);
  const StepParams sp = pdhg_steps(pb.A);
  for (std::size_t k = 16; k <= 256; k *= 2) {
    const double fk = primal_objective(pb, pdhg_solve(pb, z, k, sp).x);
    const double f2k = primal_objective(pb, pdhg_solve(pb, z, 2 * k, sp).x);
    EXPECT_LE(f2k, fk + 1e-9) << "k = " << k;
  }
}

TEST(Reference, TwoPixelAndIdempotence) {
  const Tensor z = Tensor::from_real({2, 1, 1}, {0.0, 2.0});
  const TvProblem pb = rof(z, 0.5);
  const StepParams sp = pdhg_steps(pb.A);
  const ReferenceResult r = reference_solve(pb, z, sp);
  EXPECT_TRUE(r.reached);
  EXPECT_NEAR(r.x.raw()[0], 0.5, 1e-9);
  EXPECT_NEAR(r.x.raw()[1], 1.5, 1e-9);
  const ReferenceResult again = reference_solve(pb, r.x, sp);
  EXPECT_LE(distance(again.x, r.x) / norm2(r.x), 1e-9);
}

TEST(Pd3o, ZeroSmoothTermIsProjectedPdhg) {
  const Shape s{2, 2, 1};
  const Tensor x0 = Tensor::from_real(s, {0.3, -0.2, 1.1, 0.6});
  const std::vector<double> lam(8, 0.25);
  const SmoothGradient zero = [](std::span<const double>, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
  const Pd3oSteps sp{0.4, 0.6};
  Pd3oState st = pd3o_start(x0, zero);

  std::vector<double> x = x0.storage(), xbar = x, y(8, 0.0), g(8), dy(4);
  for (int k = 0; k < 25; ++k) {
    pd3o_step(st, s, lam, zero, sp);
    grad_flat(xbar, s, 1, g);
    for (std::size_t i = 0; i < 8; ++i) y[i] = std::clamp(y[i] + sp.sigma * g[i], -lam[i], lam[i]);
    grad_adjoint_flat(y, s, 1, dy);
    for (std::size_t i = 0; i < 4; ++i) {
      const double xn = std::max(x[i] - sp.tau * dy[i], 0.0);
      xbar[i] = 2.0 * xn - x[i];
      x[i] = xn;
    }
    for (std::size_t i = 0; i < 4; ++i) {
      ASSERT_DOUBLE_EQ(st.p[i], x[i]);
      ASSERT_DOUBLE_EQ(st.xbar[i], xbar[i]);
    }
    for (std::size_t i = 0; i < 8; ++i) ASSERT_DOUBLE_EQ(st.q[i], y[i]);
  }
}

TEST(Pd3o, CtNonnegativeAndObjectiveSettles) {
  const std::size_t n = 8;
  const RadonOp R({n, 0.02, 12, 13, 0.0});
  const LinearOperator A = R.op();
  std::vector<double> xt(n * n);
  for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = (i / n > 2 && i / n < 6 && i % n > 1 && i % n < 6) ? 1.0 : 0.2;
  const Tensor x_true = Tensor::from_real({n, n, 1}, xt);
  const CtProblem pb{A, A.forward(x_true), GradField::constant({n, n, 1}, 2, 1e-9), {}};
  const Tensor x0 = Tensor::zeros({n, n, 1});
  for (std::size_t T : {1u, 7u, 50u}) {
    const SolveReport r = pd3o_solve_ct(pb, x0, T);
    for (double v : r.x.raw()) EXPECT_GE(v, 0.0);
  }
  const SolveReport r = pd3o_solve_ct(pb, x0, 3000, {}, true);
  double best = r.diagnostics.front().objective;
  for (const auto& d : r.diagnostics) best = std::min(best, d.objective);
  EXPECT_LE(r.diagnostics.back().objective - best, 1e-6 * std::abs(best));
}

TEST(Pd3o, StepRules) {
  const Pd3oSteps sp = pd3o_steps(100.0, 2.0);
  EXPECT_NEAR(sp.tau, 0.018, 1e-15);
  EXPECT_NEAR(sp.sigma * sp.tau * 4.0, 1.0, 1e-12);
  EXPECT_THROW(pd3o_steps(0.0, 2.0), StepSizeError);
}

TEST(GridSearch, TwoPixelPicksHalf) {
  const Tensor z = Tensor::from_real({2, 1, 1}, {0.0, 2.0});
  const Tensor xt = Tensor::from_real({2, 1, 1}, {0.5, 1.5});
  const StepParams sp = pdhg_steps(identity_op(z.shape()));
  GridProblem gp{[&](const GradField& l) { return pdhg_solve({identity_op(z.shape()), z, l}, z, 5000, sp).x; }, xt};
  const GridResult r = grid_search_scalar({gp}, SharingMode::XYT, {1.0, 0.25, 0.5});
  EXPECT_EQ(r.best.lambda_xy, 0.5);
  EXPECT_EQ(r.table.size(), 3u);
  EXPECT_EQ(grid_search_scalar({gp}, SharingMode::XYT, {0.8}).best.lambda_xy, 0.8);
}

TEST(GridSearch, Errors) {
  EXPECT_THROW(grid_search_scalar({}, SharingMode::XYT, {1.0}), std::invalid_argument);
  GridProblem gp{[](const GradField&) { return Tensor::zeros({1, 1, 1}); }, Tensor::constant({1, 1, 1}, 1.0)};
  EXPECT_THROW(grid_search_scalar({gp}, SharingMode::XYT, {}), std::invalid_argument);
  EXPECT_THROW(grid_search_scalar({gp}, SharingMode::XYT, {-1.0}), std::invalid_argument);
}

TEST(GridSearch, TiesGoToSmallerLambda) {
  GridProblem gp{[](const GradField&) { return Tensor::constant({2, 1, 1}, 0.5); }, Tensor::constant({2, 1, 1}, 1.0)};
  EXPECT_EQ(grid_search_scalar({gp}, SharingMode::XYT, {3.0, 1.0, 2.0}).best.lambda_xy, 1.0);
  const GridResult r = grid_search_scalar({gp}, SharingMode::XY_T, {3.0, 1.0}, {0.5, 0.2});
  EXPECT_EQ(r.best.lambda_xy, 1.0);
  EXPECT_EQ(r.best.lambda_t, 0.2);
  EXPECT_EQ(r.table.size(), 4u);
}

TEST(GridSearch, ArgmaxInvariantUnderOffset) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int k = 0; k < 50; ++k) {
    std::vector<double> s(9);
    for (auto& v : s) v = std::round(4 * nd(rng)) / 4;  // produce ties
    auto shifted = s;
    for (auto& v : shifted) v += 12.25;
    EXPECT_EQ(argmax_first(s), argmax_first(shifted));
  }
}

TEST(GridSearch, XyTOnSymmetricPhantom) {
  // x and t axes are interchangeable, so the spatio-temporal table is symmetric
  const Shape s{6, 1, 6};
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  std::vector<double> xt(36), zv(36);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t x = 0; x <= t; ++x) {
      const double v = (x < 3 && t < 3) ? 1.0 : 0.0;
      const double e = 0.3 * nd(rng);
      xt[t * 6 + x] = xt[x * 6 + t] = v;
      zv[t * 6 + x] = zv[x * 6 + t] = v + e;
    }
  const Tensor z = Tensor::from_real(s, zv);
  const StepParams sp = pdhg_steps(identity_op(s));
  GridProblem gp{[&](const GradField& l) { return reference_solve({identity_op(s), z, l}, z, sp, 1e-12).x; },
                 Tensor::from_real(s, xt)};
  const std::vector<double> grid{0.05, 0.1, 0.2, 0.4};
  const GridResult sep = grid_search_scalar({gp}, SharingMode::XY_T, grid);
  const GridResult joint = grid_search_scalar({gp}, SharingMode::XYT, grid);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(sep.table[i * 4 + j].mean_psnr, sep.table[j * 4 + i].mean_psnr, 1e-6);
  EXPECT_GE(sep.best.mean_psnr, joint.best.mean_psnr - 1e-9);
  if (sep.best.lambda_xy == sep.best.lambda_t) {
    EXPECT_EQ(joint.best.lambda_xy, sep.best.lambda_xy);
  }
}
