#pragma once

// Inversion-recovery T1 mapping: q_t = M₀(1 − 2e^{−t/T₁}).

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "phantoms.hpp"
#include "tensor.hpp"

namespace tvmap {

inline std::complex<double> signal_model(std::complex<double> m0, double t1, double t) {
  if (!(t1 > 0.0) || !(t >= 0.0)) throw std::invalid_argument("signal model needs T1 > 0 and t >= 0");
  return m0 * (1.0 - 2.0 * std::exp(-t / t1));
}

inline const std::vector<double>& default_inversion_times() {
  static const std::vector<double> t{0.05, 0.1, 0.2, 0.35, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0};
  return t;
}

struct InversionSeries {
  std::vector<double> times;
  Tensor images;  // complex, nt = times.size()

  void validate() const {
    if (images.shape().nt != times.size()) throw ShapeError("series length differs from the number of inversion times");
    for (std::size_t i = 0; i < times.size(); ++i)
      if (!(times[i] > 0.0) || (i > 0 && !(times[i] > times[i - 1])))
        throw std::invalid_argument("inversion times must be positive and strictly increasing");
  }
};

struct T1Map {
  Tensor t1;  // real, one frame
  Tensor m0;  // complex, one frame
  std::vector<bool> degenerate;
};

struct QmriRegion {
  std::complex<double> m0;
  double t1;
};

/// Residual phase φ(u, v) = 0.3u² − 0.2v² + 0.15uv on the unit square, applied to M₀.
inline double residual_phase(std::size_t x, std::size_t y, std::size_t nx, std::size_t ny) {
  const double u = nx > 1 ? 2.0 * static_cast<double>(x) / static_cast<double>(nx - 1) - 1.0 : 0.0;
  const double v = ny > 1 ? 2.0 * static_cast<double>(y) / static_cast<double>(ny - 1) - 1.0 : 0.0;
  return 0.3 * u * u - 0.2 * v * v + 0.15 * u * v;
}

struct QmriPhantom {
  InversionSeries series;
  T1Map truth;
};

/// Piecewise-constant (M₀, T₁) from integer labels (label k uses regions[k]), the signal model per
/// pixel and time, optional complex noise. Pixels with M₀ = 0 are marked degenerate in the truth.
inline QmriPhantom synth_qmri_series(const Tensor& labels, const std::vector<QmriRegion>& regions, const std::vector<double>& times,
                                     double sigma, std::uint64_t seed, bool phase = true) {
  const std::size_t nx = labels.shape().nx, ny = labels.shape().ny, n = nx * ny;
  QmriPhantom ph;
  ph.series.times = times;
  ph.truth.t1 = Tensor::zeros({nx, ny, 1});
  ph.truth.m0 = Tensor::zeros({nx, ny, 1}, DType::Complex128);
  ph.truth.degenerate.assign(n, false);
  Tensor clean = Tensor::zeros({nx, ny, times.size()}, DType::Complex128);
  for (std::size_t y = 0; y < ny; ++y)
    for (std::size_t x = 0; x < nx; ++x) {
      const std::size_t i = y * nx + x;
      const auto lab = static_cast<std::size_t>(labels.raw()[i]);
      if (lab >= regions.size()) throw std::invalid_argument("label without region parameters");
      const QmriRegion& r = regions[lab];
      const std::complex<double> m0 = phase ? r.m0 * std::polar(1.0, residual_phase(x, y, nx, ny)) : r.m0;
      ph.truth.t1.raw()[i] = r.t1;
      ph.truth.m0.set(i, m0);
      ph.truth.degenerate[i] = m0 == 0.0;
      for (std::size_t k = 0; k < times.size(); ++k) clean.set(k * n + i, signal_model(m0, r.t1, times[k]));
    }
  ph.series.images = sigma > 0.0 ? add_gaussian(clean, sigma, seed, true) : clean;
  ph.series.validate();
  return ph;
}

/// Default desk phantom: a short-T₁ surround plus three rings with brain-like (M₀, T₁).
inline std::vector<QmriRegion> default_qmri_regions() {
  return {{{0.4, 0.0}, 0.3}, {{0.8, 0.1}, 0.8}, {{1.0, -0.2}, 1.4}, {{0.6, 0.3}, 2.5}};
}

struct FitOptions {
  double t1_lo = 0.05;
  double t1_hi = 6.0;
  std::size_t grid = 64;
  std::size_t golden_iters = 20;
};

namespace detail {

struct T1Fit {
  double t1;
  std::complex<double> m0;
  double residual;
};

// Closed-form M₀ = Σ x_i b_i / Σ b_i² for real b, and the resulting residual.
inline T1Fit fit_at(const std::vector<std::complex<double>>& x, const std::vector<double>& times, double t1, double xx) {
  std::complex<double> xb = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double b = 1.0 - 2.0 * std::exp(-times[i] / t1);
    xb += x[i] * b;
    bb += b * b;
  }
  if (bb == 0.0) return {t1, 0.0, xx};
  return {t1, xb / bb, std::max(0.0, xx - std::norm(xb) / bb)};
}

}  // namespace detail

/// Per-pixel complex least squares over a log-spaced T₁ grid, then golden-section refinement in log T₁
/// around the best cell. All-zero pixels return (lower bound, 0) and are flagged.
inline T1Map fit_t1(const InversionSeries& series, const FitOptions& opt = {}) {
  series.validate();
  if (series.times.size() < 3) throw std::invalid_argument("T1 fitting needs at least 3 inversion times");
  if (!(opt.t1_lo > 0.0) || !(opt.t1_hi > opt.t1_lo) || opt.grid < 2) throw std::invalid_argument("bad T1 fit bounds or grid");
  const Shape& s = series.images.shape();
  const std::size_t n = s.nx * s.ny, nt = s.nt;
  const Tensor img = series.images.is_complex() ? series.images : Tensor::from_raw(s, DType::Complex128, [&] {
    std::vector<double> v(2 * series.images.size(), 0.0);
    for (std::size_t i = 0; i < series.images.size(); ++i) v[2 * i] = series.images.raw()[i];
    return v;
  }());
  std::vector<double> logs(opt.grid);
  const double l0 = std::log(opt.t1_lo), l1 = std::log(opt.t1_hi);
  for (std::size_t g = 0; g < opt.grid; ++g) logs[g] = l0 + (l1 - l0) * static_cast<double>(g) / static_cast<double>(opt.grid - 1);

  T1Map out{Tensor::zeros({s.nx, s.ny, 1}), Tensor::zeros({s.nx, s.ny, 1}, DType::Complex128), std::vector<bool>(n, false)};
  std::vector<std::complex<double>> x(nt);
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    double xx = 0.0;
    for (std::size_t k = 0; k < nt; ++k) {
      x[k] = img.value(k * n + i);
      xx += std::norm(x[k]);
    }
    if (xx == 0.0) {
      out.t1.raw()[i] = opt.t1_lo;
      out.degenerate[i] = true;
      continue;
    }
    std::size_t best = 0;
    detail::T1Fit fbest = detail::fit_at(x, series.times, std::exp(logs[0]), xx);
    for (std::size_t g = 1; g < opt.grid; ++g) {
      const auto f = detail::fit_at(x, series.times, std::exp(logs[g]), xx);
      if (f.residual < fbest.residual) {
        fbest = f;
        best = g;
      }
    }
    double a = logs[best == 0 ? 0 : best - 1], b = logs[std::min(best + 1, opt.grid - 1)];
    double c = b - gr * (b - a), d = a + gr * (b - a);
    auto fc = detail::fit_at(x, series.times, std::exp(c), xx), fd = detail::fit_at(x, series.times, std::exp(d), xx);
    for (std::size_t it = 0; it < opt.golden_iters; ++it) {
      if (fc.residual < fd.residual) {
        b = d;
        d = c;
        fd = fc;
        c = b - gr * (b - a);
        fc = detail::fit_at(x, series.times, std::exp(c), xx);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + gr * (b - a);
        fd = detail::fit_at(x, series.times, std::exp(d), xx);
      }
    }
    for (const auto& f : {fc, fd})
      if (f.residual < fbest.residual) fbest = f;
    out.t1.raw()[i] = fbest.t1;
    out.m0.set(i, fbest.m0);
  }
  return out;
}

/// sqrt(mean((T̂₁ − T₁)²)) / sqrt(mean(T₁²)) over non-degenerate truth pixels.
inline double t1_relative_rmse(const T1Map& fit, const T1Map& truth) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < truth.t1.size(); ++i) {
    if (truth.degenerate[i]) continue;
    const double d = fit.t1.raw()[i] - truth.t1.raw()[i];
    num += d * d;
    den += truth.t1.raw()[i] * truth.t1.raw()[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

}  // namespace tvmap
