#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "tvmap/qmri.hpp"

using namespace tvmap;

namespace {

InversionSeries single_pixel(std::complex<double> m0, double t1) {
  const auto& times = default_inversion_times();
  std::vector<std::complex<double>> v;
  for (double t : times) v.push_back(signal_model(m0, t1, t));
  return {times, Tensor::from_complex({1, 1, times.size()}, v)};
}

}  // namespace

TEST(SignalModel, Examples) {
  const std::complex<double> m0{0.7, -0.3};
  EXPECT_NEAR(std::abs(signal_model(m0, 1.3, 1.3 * std::log(2.0))), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(signal_model(m0, 0.9, 50 * 0.9) - m0), 0.0, 1e-12);
  EXPECT_EQ(signal_model(m0, 2.0, 0.0), -m0);
  EXPECT_THROW(signal_model(m0, 0.0, 1.0), std::invalid_argument);
}

TEST(Synth, NoiselessFollowsCurveAndSeededNoise) {
  const Tensor lab = Tensor::constant({4, 4, 1}, 0.0);
  const std::vector<QmriRegion> regs{{{1.0, 0.0}, 1.0}};
  const auto ph = synth_qmri_series(lab, regs, default_inversion_times(), 0.0, 1, false);
  for (std::size_t k = 0; k < 10; ++k)
    for (std::size_t i = 0; i < 16; ++i)
      EXPECT_EQ(ph.series.images.value(k * 16 + i), signal_model({1.0, 0.0}, 1.0, default_inversion_times()[k]));
  // zero crossing at t = ln 2 for T1 = 1 s
  EXPECT_NEAR(std::abs(signal_model({1.0, 0.0}, 1.0, std::log(2.0))), 0.0, 1e-15);
  const auto a = synth_qmri_series(lab, regs, default_inversion_times(), 0.05, 7);
  const auto b = synth_qmri_series(lab, regs, default_inversion_times(), 0.05, 7);
  EXPECT_EQ(a.series.images, b.series.images);
}

TEST(Fit, NoiselessPixel) {
  const T1Map m = fit_t1(single_pixel({1.0, 0.0}, 0.8));
  EXPECT_NEAR(m.t1.raw()[0], 0.8, 0.8e-3);
  EXPECT_NEAR(std::abs(m.m0.value(0) - std::complex<double>(1.0, 0.0)), 0.0, 1e-3);
}

TEST(Fit, PhaseRecovered) {
  const auto m0 = std::polar(1.2, std::numbers::pi / 3);
  const T1Map m = fit_t1(single_pixel(m0, 1.7));
  EXPECT_LT(std::abs(std::arg(m.m0.value(0)) - std::numbers::pi / 3), 1e-3);
  EXPECT_NEAR(m.t1.raw()[0], 1.7, 1.7e-3);
}

TEST(Fit, ZeroPixelFlagged) {
  const T1Map m = fit_t1(single_pixel({0.0, 0.0}, 1.0));
  EXPECT_TRUE(m.degenerate[0]);
  EXPECT_EQ(m.t1.raw()[0], 0.05);
  EXPECT_EQ(m.m0.value(0), std::complex<double>(0.0, 0.0));
}

TEST(Fit, IdentityOverT1Range) {
  for (double t1 = 0.1; t1 <= 3.0; t1 *= 1.13) {
    const T1Map m = fit_t1(single_pixel({0.9, 0.2}, t1));
    EXPECT_NEAR(m.t1.raw()[0], t1, 5e-3 * t1) << t1;
    EXPECT_NEAR(std::abs(m.m0.value(0) - std::complex<double>(0.9, 0.2)), 0.0, 5e-3);
  }
}

TEST(Fit, NoWorseThanAnyGridCandidate) {
  InversionSeries s = single_pixel({1.0, 0.5}, 1.1);
  s.images = add_gaussian(s.images, 0.1, 3, true);
  const T1Map m = fit_t1(s);
  auto residual = [&](double t1) {
    std::complex<double> xb = 0;
    double bb = 0, xx = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      const double b = 1 - 2 * std::exp(-s.times[i] / t1);
      xb += s.images.value(i) * b;
      bb += b * b;
      xx += std::norm(s.images.value(i));
    }
    return xx - std::norm(xb) / bb;
  };
  const double r = residual(m.t1.raw()[0]);
  for (std::size_t g = 0; g < 64; ++g) {
    const double t1 = std::exp(std::log(0.05) + (std::log(6.0) - std::log(0.05)) * g / 63.0);
    EXPECT_LE(r, residual(t1) + 1e-12);
  }
}

TEST(Fit, ScalingEquivariance) {
  InversionSeries s = single_pixel({0.8, -0.1}, 0.6);
  s.images = add_gaussian(s.images, 0.05, 4, true);
  const T1Map a = fit_t1(s);
  const std::complex<double> alpha{-1.5, 2.0};
  InversionSeries t = s;
  for (std::size_t i = 0; i < 10; ++i) t.images.set(i, alpha * s.images.value(i));
  const T1Map b = fit_t1(t);
  EXPECT_NEAR(b.t1.raw()[0], a.t1.raw()[0], 1e-4 * a.t1.raw()[0]);
  EXPECT_NEAR(std::abs(b.m0.value(0) - alpha * a.m0.value(0)), 0.0, 1e-3 * std::abs(alpha * a.m0.value(0)));
}

TEST(Fit, PhantomRoundTrip) {
  const auto ph = synth_qmri_series(qmri_regions(24), default_qmri_regions(), default_inversion_times(), 0.0, 1);
  EXPECT_LE(t1_relative_rmse(fit_t1(ph.series), ph.truth), 5e-3);
  const auto noisy = synth_qmri_series(qmri_regions(24), default_qmri_regions(), default_inversion_times(), 0.02, 2);
  EXPECT_LE(t1_relative_rmse(fit_t1(noisy.series), noisy.truth), 0.05);
}

TEST(Fit, Validation) {
  InversionSeries s = single_pixel({1.0, 0.0}, 1.0);
  s.times[3] = s.times[2];
  EXPECT_THROW(fit_t1(s), std::invalid_argument);
  InversionSeries two{{0.1, 0.2}, Tensor::zeros({1, 1, 2}, DType::Complex128)};
  EXPECT_THROW(fit_t1(two), std::invalid_argument);
}
