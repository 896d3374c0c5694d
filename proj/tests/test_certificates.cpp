#include <gtest/gtest.h>

#include <random>

#include "tvmap/certificates.hpp"

using namespace tvmap;

namespace {

Tensor noisy_square(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(s.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = ((i % s.nx) < s.nx / 2 ? 1.0 : 0.0) + 0.2 * nd(rng);
  return Tensor::from_real(s, v);
}

}  // namespace

TEST(RateConstant, IdentityRegime) {
  // A = I: λ_min = ‖A‖ = 1, μ_z = L_z = 1 and 4CΛ̄ ≤ C gives max(C, 2)
  EXPECT_EQ(rate_constant(3.0, 1.0, 1.0, 0.2, 1.0, 1.0), 3.0);
  EXPECT_EQ(rate_constant(1.5, 1.0, 1.0, 0.2, 1.0, 1.0), 2.0);
}

TEST(RateCertificate, FourByFourDenoising) {
  const Shape s{4, 4, 1};
  const Tensor z = noisy_square(s, 1);
  const TvProblem pb{identity_op(s), z, GradField::constant(s, 2, 0.3)};
  std::vector<std::size_t> Ts;
  for (std::size_t T = 1; T <= 1024; T *= 2) Ts.push_back(T);
  const RateCertificate rc = rate_certificate(pb, z, Ts);
  EXPECT_GT(rc.c, 0.0);
  EXPECT_GT(rc.C, rc.c);
  EXPECT_NEAR(rc.lambda_min_ata, 1.0, 1e-12);
  EXPECT_NEAR(rc.lambda_bar, 0.3 * std::sqrt(32.0), 1e-12);
  EXPECT_TRUE(std::isfinite(rc.C_zA));
  for (const auto& row : rc.rows) EXPECT_TRUE(row.holds()) << "T = " << row.T;
  EXPECT_LE(rc.rows.back().measured, rc.rows.front().measured + 1e-12);
}

TEST(RateCertificate, RejectsSingularM) {
  const Shape s{2, 2, 1};
  const Tensor z = noisy_square(s, 2);
  const TvProblem pb{identity_op(s), z, GradField::constant(s, 2, 0.3)};
  const StepParams full = pdhg_steps(pb.A, 1.0);
  StepParams wide = full;
  wide.k_norm = full.k_norm / 1.2;  // claims a smaller norm than the true one
  wide.sigma = wide.tau = 1.0 / wide.k_norm;
  EXPECT_THROW(rate_certificate(pb, z, {1}, wide), StepSizeError);
}

TEST(Lipschitz, EqualMapsGiveZero) {
  const Shape s{4, 2, 1};
  const Tensor z = noisy_square(s, 3);
  const GradField l = GradField::constant(s, 2, 0.2);
  const LipschitzProbe p = lipschitz_probe(identity_op(s), z, l, l);
  EXPECT_EQ(p.lhs, 0.0);
  EXPECT_GT(p.rhs, 0.0 - 1e-300);
}

TEST(Lipschitz, ScaledAndRandomPairs) {
  const Shape s{4, 2, 1};
  const Tensor z = noisy_square(s, 4);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  auto random_map = [&] {
    GradField g = GradField::zeros(s, 2);
    for (auto& c : g.comps)
      for (auto& v : c.raw()) v = u(rng);
    return g;
  };
  const GradField l1 = random_map();
  GradField l2 = l1;
  for (auto& c : l2.comps)
    for (auto& v : c.raw()) v *= 2.0;
  EXPECT_TRUE(lipschitz_probe(identity_op(s), z, l1, l2).holds());
  for (int k = 0; k < 20; ++k) EXPECT_TRUE(lipschitz_probe(identity_op(s), z, random_map(), random_map()).holds());
}
