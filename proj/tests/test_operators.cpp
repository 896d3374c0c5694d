#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "tvmap/metrics.hpp"
#include "tvmap/mri.hpp"
#include "tvmap/radon.hpp"

using namespace tvmap;

namespace {

Tensor random_complex(Shape s, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<double> v(2 * s.size());
  for (auto& e : v) e = nd(rng);
  return Tensor::from_raw(s, DType::Complex128, v);
}

Tensor disk(std::size_t n, double radius_frac) {
  Tensor x = Tensor::zeros({n, n, 1});
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t xx = 0; xx < n; ++xx) {
      const double r = std::hypot(static_cast<double>(xx) - c, static_cast<double>(y) - c);
      if (r <= radius_frac * static_cast<double>(n)) x.raw()[y * n + xx] = 1.0;
    }
  return x;
}

}  // namespace

TEST(Mask, FullSamplingAndRowCount) {
  const Tensor full = make_cartesian_mask(16, 16, 3, 1.0, 0.08, 1);
  for (double v : full.raw()) EXPECT_EQ(v, 1.0);
  const Tensor m = make_cartesian_mask(32, 32, 8, 4.0, 0.08, 7);
  for (std::size_t t = 0; t < 8; ++t) {
    std::size_t rows = 0;
    for (std::size_t y = 0; y < 32; ++y) {
      const double v = m.raw()[m.shape().index(0, y, t)];
      for (std::size_t x = 1; x < 32; ++x) ASSERT_EQ(m.raw()[m.shape().index(x, y, t)], v);
      rows += v != 0.0;
    }
    EXPECT_GE(rows, 7u);
    EXPECT_LE(rows, 9u);
    EXPECT_EQ(m.raw()[m.shape().index(0, 0, t)], 1.0);  // DC row always kept
  }
}

TEST(Mask, SeededAndFrameIndependent) {
  const Tensor a = make_cartesian_mask(32, 32, 8, 4.0, 0.08, 3);
  const Tensor b = make_cartesian_mask(32, 32, 8, 4.0, 0.08, 3);
  EXPECT_EQ(a, b);
  bool differ = false;
  for (std::size_t y = 0; y < 32; ++y)
    differ |= a.raw()[a.shape().index(0, y, 0)] != a.raw()[a.shape().index(0, y, 1)];
  EXPECT_TRUE(differ);
}

TEST(Coils, NormalizedSensitivities) {
  const Tensor c = synth_coil_maps(20, 16, 4);
  for (std::size_t i = 0; i < 20 * 16; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += std::norm(c.value(k * 320 + i));
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Mri, FullySampledSingleCoilIsUnitary) {
  std::mt19937_64 rng(4);
  const Shape s{8, 6, 3};
  const Tensor coils = Tensor::from_complex({8, 6, 1}, std::vector<std::complex<double>>(48, {1.0, 0.0}));
  const MriEncoder enc(coils, make_cartesian_mask(8, 6, 3, 1.0, 0.08, 0));
  const LinearOperator A = enc.op();
  const Tensor x = random_complex(s, rng);
  const auto back = A.apply_adjoint(A.apply(x.raw()));
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_NEAR(back[i], x.raw()[i], 1e-12);
}

TEST(Mri, ImpulseGivesFlatModulus) {
  const Tensor coils = Tensor::from_complex({8, 8, 1}, std::vector<std::complex<double>>(64, {1.0, 0.0}));
  const MriEncoder enc(coils, make_cartesian_mask(8, 8, 1, 1.0, 0.08, 0));
  Tensor x = Tensor::zeros({8, 8, 1}, DType::Complex128);
  x.set(x.shape().index(4, 4), {1.0, 0.0});
  const auto y = enc.op().apply(x.raw());
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(std::hypot(y[2 * i], y[2 * i + 1]), 1.0 / 8.0, 1e-14);
}

TEST(Mri, AdjointProbes) {
  std::mt19937_64 rng(8);
  const MriEncoder enc(synth_coil_maps(16, 16, 4), make_cartesian_mask(16, 16, 4, 4.0, 0.08, 2));
  const LinearOperator A = enc.op();
  for (int k = 0; k < 100; ++k) EXPECT_LE(adjoint_defect(A, rng), 1e-10);
  EXPECT_LE(A.norm(), 1.0 + 1e-6);
}

TEST(Mri, RejectsMismatchedShapes) {
  EXPECT_THROW(MriEncoder(synth_coil_maps(8, 8, 2), make_cartesian_mask(8, 6, 2, 2.0, 0.1, 0)), ShapeError);
}

TEST(Mri, CgRecoversFullySampledData) {
  std::mt19937_64 rng(12);
  const Tensor coils = Tensor::from_complex({8, 8, 1}, std::vector<std::complex<double>>(64, {1.0, 0.0}));
  const LinearOperator A = MriEncoder(coils, make_cartesian_mask(8, 8, 2, 1.0, 0.08, 0)).op();
  const Tensor x = random_complex({8, 8, 2}, rng);
  const Tensor z = A.forward(x);
  const Tensor rec = cg_normal_init(A, z, 2);
  EXPECT_LE(distance(rec, x), 1e-8);
}

TEST(Radon, AdjointProbes) {
  std::mt19937_64 rng(6);
  const RadonOp R({32, 1.0, 45, 47, 0.0});
  const LinearOperator A = R.op();
  for (int k = 0; k < 100; ++k) EXPECT_LE(adjoint_defect(A, rng), 1e-10);
}

TEST(Radon, ZeroImage) {
  const RadonOp R({16, 1.0, 10, 24, 0.0});
  const auto s = R.op().apply(std::vector<double>(256, 0.0));
  for (double v : s) EXPECT_EQ(v, 0.0);
}

// Grid-aligned directions see the sampled disk along identical ray families.
TEST(Radon, DiskProfilesAxisAligned) {
  const std::size_t n = 64;
  const RadonOp R({n, 1.0, 2, 95, 0.0});
  const auto s = R.op().apply(disk(n, 0.3).raw());
  double peak = 0.0, dev = 0.0;
  for (std::size_t b = 0; b < 95; ++b) {
    peak = std::max(peak, s[b]);
    dev = std::max(dev, std::abs(s[b] - s[95 + b]));
  }
  EXPECT_LE(dev, 1e-6 * peak);
}

// Off-axis angles differ by the pixelisation of the disk boundary only.
TEST(Radon, DiskProfilesAllAngles) {
  const std::size_t n = 64;
  const RadonOp R({n, 1.0, 180, 95, 0.0});
  const auto s = R.op().apply(disk(n, 0.3).raw());
  double peak = 0.0;
  for (double v : s) peak = std::max(peak, v);
  double dev = 0.0;
  for (std::size_t a = 1; a < 180; ++a)
    for (std::size_t b = 0; b < 95; ++b) dev = std::max(dev, std::abs(s[a * 95 + b] - s[b]));
  EXPECT_LE(dev, 0.1 * peak);
  // the total mass seen by every projection equals the image integral
  const double mass = [&] {
    double m = 0.0;
    for (double v : disk(n, 0.3).raw()) m += v;
    return m / (n * n);
  }();
  for (std::size_t a = 0; a < 180; ++a) {
    double acc = 0.0;
    for (std::size_t b = 0; b < 95; ++b) acc += s[a * 95 + b] * R.geometry().spacing();
    EXPECT_NEAR(acc, mass, 0.02 * mass);
  }
}

TEST(Fbp, ZeroSinogram) {
  const RadonOp R({16, 1.0, 20, 24, 0.0});
  const Tensor img = fbp(R, Tensor::zeros({24, 20, 1}));
  for (double v : img.raw()) EXPECT_EQ(v, 0.0);
}

TEST(Fbp, BlobPeak) {
  const std::size_t n = 64;
  const RadonOp R({n, 1.0, 180, 95, 0.0});
  Tensor blob = Tensor::zeros({n, n, 1});
  const double cx = 40.0, cy = 25.0, w = 4.0;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      blob.raw()[y * n + x] = std::exp(-(std::pow(x - cx, 2) + std::pow(y - cy, 2)) / (2 * w * w));
  const Tensor rec = fbp(R, R.op().forward(blob));
  std::size_t arg = 0;
  for (std::size_t i = 0; i < rec.size(); ++i)
    if (rec.raw()[i] > rec.raw()[arg]) arg = i;
  EXPECT_EQ(arg % n, 40u);
  EXPECT_EQ(arg / n, 25u);
  EXPECT_NEAR(rec.raw()[arg], 1.0, 0.1);
}

TEST(Fbp, DiskNrmse) {
  const std::size_t n = 64;
  const RadonOp R({n, 1.0, 180, 95, 0.0});
  const Tensor d = disk(n, 0.3);
  const Tensor rec = fbp(R, R.op().forward(d));
  EXPECT_LE(nrmse(rec, d), 0.15);
}
