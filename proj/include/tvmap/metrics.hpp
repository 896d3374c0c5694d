#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tensor.hpp"

namespace tvmap {

/// Returned by psnr() when the two images agree exactly.
inline constexpr double kPsnrCap = 999.0;

namespace detail {

inline void require_same(const Tensor& x, const Tensor& ref) {
  if (x.shape() != ref.shape()) throw ShapeError("metric: shape mismatch " + x.shape().str() + " vs " + ref.shape().str());
}

inline double sq_err(const Tensor& x, const Tensor& ref) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::norm(x.value(i) - ref.value(i));
  return s;
}

}  // namespace detail

inline double mse(const Tensor& x, const Tensor& ref) {
  detail::require_same(x, ref);
  return detail::sq_err(x, ref) / static_cast<double>(x.size());
}

/// 20 log10(max|ref| / rmse). Peak is taken from the reference so any intensity scale compares fairly.
inline double psnr(const Tensor& x, const Tensor& ref) {
  detail::require_same(x, ref);
  double peak = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) peak = std::max(peak, ref.abs(i));
  const double rmse = std::sqrt(mse(x, ref));
  if (rmse == 0.0) return kPsnrCap;
  if (peak == 0.0) throw std::domain_error("psnr: reference is identically zero");
  return std::min(kPsnrCap, 20.0 * std::log10(peak / rmse));
}

inline double nrmse(const Tensor& x, const Tensor& ref) {
  detail::require_same(x, ref);
  double r = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) r += std::norm(ref.value(i));
  if (r == 0.0) throw std::domain_error("nrmse: reference is identically zero");
  return std::sqrt(detail::sq_err(x, ref) / r);
}

/// Mean SSIM over all 7x7 windows (uniform weights) of every frame, computed on magnitudes.
/// Dynamic range is max|ref|; K1 = 0.01, K2 = 0.03.
inline double ssim(const Tensor& x, const Tensor& ref, std::size_t window = 7) {
  detail::require_same(x, ref);
  const Shape& s = ref.shape();
  const Tensor a = x.magnitude();
  const Tensor b = ref.magnitude();
  double range = 0.0;
  for (double v : b.raw()) range = std::max(range, v);
  if (range == 0.0) range = 1.0;
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  const std::size_t wx = std::min(window, s.nx);
  const std::size_t wy = std::min(window, s.ny);
  const double npix = static_cast<double>(wx * wy);

  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < s.nt; ++t) {
    for (std::size_t y0 = 0; y0 + wy <= s.ny; ++y0) {
      for (std::size_t x0 = 0; x0 + wx <= s.nx; ++x0) {
        double ma = 0, mb = 0;
        for (std::size_t y = y0; y < y0 + wy; ++y)
          for (std::size_t xx = x0; xx < x0 + wx; ++xx) {
            ma += a.raw()[s.index(xx, y, t)];
            mb += b.raw()[s.index(xx, y, t)];
          }
        ma /= npix;
        mb /= npix;
        double va = 0, vb = 0, cab = 0;
        for (std::size_t y = y0; y < y0 + wy; ++y)
          for (std::size_t xx = x0; xx < x0 + wx; ++xx) {
            const double da = a.raw()[s.index(xx, y, t)] - ma;
            const double db = b.raw()[s.index(xx, y, t)] - mb;
            va += da * da;
            vb += db * db;
            cab += da * db;
          }
        va /= npix;
        vb /= npix;
        cab /= npix;
        total += ((2 * ma * mb + c1) * (2 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace tvmap
