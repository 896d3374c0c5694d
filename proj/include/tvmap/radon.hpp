#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <sstream>
#include <vector>

#include "fft.hpp"
#include "linops.hpp"

namespace tvmap {

/// Parallel-beam geometry over an n x n image of physical side length `side`.
struct RadonGeometry {
  std::size_t n = 64;
  double side = 1.0;
  std::size_t n_angles = 180;
  std::size_t n_bins = 95;
  double bin_spacing = 0.0;  // 0 selects side * sqrt(2) / n_bins (bins cover the diagonal)

  double pixel() const { return side / static_cast<double>(n); }
  double spacing() const { return bin_spacing > 0.0 ? bin_spacing : side * std::numbers::sqrt2 / static_cast<double>(n_bins); }
  double angle(std::size_t j) const { return std::numbers::pi * static_cast<double>(j) / static_cast<double>(n_angles); }

  void validate() const {
    if (n == 0 || n_angles == 0 || n_bins == 0 || !(side > 0.0)) throw std::invalid_argument("radon: empty geometry");
    if (spacing() * static_cast<double>(n_bins) < side * std::numbers::sqrt2 * (1.0 - 1e-12))
      throw std::invalid_argument("radon: detector bins do not cover the image diagonal");
  }

  std::string to_keyvalue() const {
    std::ostringstream os;
    os.precision(17);
    os << "n=" << n << "\nside=" << side << "\nangles=" << n_angles << "\nbins=" << n_bins
       << "\nbin_spacing=" << spacing() << "\n";
    return os.str();
  }
};

/// Ray-driven discretisation: every (angle, bin) line integral samples the image every half pixel
/// with bilinear interpolation, weighted by the step length. The adjoint is the exact transpose
/// (the same sparse matrix applied transposed).
class RadonOp {
 public:
  explicit RadonOp(RadonGeometry g) : geom_(g) {
    geom_.validate();
    build();
  }

  const RadonGeometry& geometry() const { return geom_; }
  std::size_t rows() const { return geom_.n_angles * geom_.n_bins; }
  std::size_t cols() const { return geom_.n * geom_.n; }

  /// sinogram layout: bins fastest, angles outer, i.e. a (n_bins, n_angles) tensor
  void forward(std::span<const double> x, std::span<double> s) const {
    for (std::size_t r = 0; r < rows(); ++r) {
      double acc = 0.0;
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) acc += val_[k] * x[col_[k]];
      s[r] = acc;
    }
  }

  void adjoint(std::span<const double> s, std::span<double> x) const {
    std::fill(x.begin(), x.end(), 0.0);
    for (std::size_t r = 0; r < rows(); ++r) {
      const double v = s[r];
      if (v == 0.0) continue;
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) x[col_[k]] += val_[k] * v;
    }
  }

  LinearOperator op() const {
    const Space dom{{geom_.n, geom_.n, 1}, DType::Real64, 1};
    const Space cod{{geom_.n_bins, geom_.n_angles, 1}, DType::Real64, 1};
    auto self = std::make_shared<RadonOp>(*this);
    return {"radon", dom, cod, [self](std::span<const double> in, std::span<double> out) { self->forward(in, out); },
            [self](std::span<const double> in, std::span<double> out) { self->adjoint(in, out); }};
  }

 private:
  void build() {
    const std::size_t n = geom_.n;
    const double h = geom_.pixel();
    const double half = geom_.side / 2.0;
    const double reach = half * std::numbers::sqrt2;
    const double step = h / 2.0;
    const auto nsteps = static_cast<std::size_t>(std::ceil(2.0 * reach / step));
    const double ds = geom_.spacing();

    row_ptr_.assign(1, 0);
    std::vector<double> acc(n * n, 0.0);
    std::vector<std::size_t> touched;
    for (std::size_t a = 0; a < geom_.n_angles; ++a) {
      const double th = geom_.angle(a);
      const double c = std::cos(th), s = std::sin(th);
      for (std::size_t b = 0; b < geom_.n_bins; ++b) {
        touched.clear();
        const double off = (static_cast<double>(b) - (static_cast<double>(geom_.n_bins) - 1.0) / 2.0) * ds;
        for (std::size_t k = 0; k < nsteps; ++k) {
          const double t = -reach + (static_cast<double>(k) + 0.5) * step;
          const double px = off * c - t * s;
          const double py = off * s + t * c;
          // continuous pixel coordinates, pixel centres at integers
          const double fx = (px + half) / h - 0.5;
          const double fy = (py + half) / h - 0.5;
          const double x0 = std::floor(fx), y0 = std::floor(fy);
          const double wx = fx - x0, wy = fy - y0;
          const long ix = static_cast<long>(x0), iy = static_cast<long>(y0);
          const long nn = static_cast<long>(n);
          const double w[4] = {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy};
          const long xs[4] = {ix, ix + 1, ix, ix + 1};
          const long ys[4] = {iy, iy, iy + 1, iy + 1};
          for (int q = 0; q < 4; ++q) {
            if (xs[q] < 0 || ys[q] < 0 || xs[q] >= nn || ys[q] >= nn || w[q] == 0.0) continue;
            const std::size_t idx = static_cast<std::size_t>(ys[q]) * n + static_cast<std::size_t>(xs[q]);
            if (acc[idx] == 0.0) touched.push_back(idx);
            acc[idx] += w[q] * step;
          }
        }
        std::sort(touched.begin(), touched.end());
        for (std::size_t idx : touched) {
          col_.push_back(idx);
          val_.push_back(acc[idx]);
          acc[idx] = 0.0;
        }
        row_ptr_.push_back(col_.size());
      }
    }
  }

  RadonGeometry geom_;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::size_t> col_;
  std::vector<double> val_;
};

/// Filtered backprojection: ramp filter with Hann apodisation per projection, backprojection by the
/// transpose, and the quadrature weights π/#angles · Δs/h².
inline Tensor fbp(const RadonOp& op, const Tensor& sino) {
  const auto& g = op.geometry();
  if (sino.shape() != Shape{g.n_bins, g.n_angles, 1}) throw ShapeError("fbp: sinogram shape mismatch");
  std::size_t npad = 1;
  while (npad < 2 * g.n_bins) npad <<= 1;
  const double ds = g.spacing();
  std::vector<double> filt(npad);
  for (std::size_t k = 0; k < npad; ++k) {
    const double kk = static_cast<double>(k <= npad / 2 ? k : npad - k);
    const double f = kk / (static_cast<double>(npad) * ds);  // cycles per unit length
    const double fmax = 0.5 / ds;
    filt[k] = f * 0.5 * (1.0 + std::cos(std::numbers::pi * f / fmax));
  }
  std::vector<double> filtered(sino.raw().size());
  std::vector<std::complex<double>> buf(npad), spec(npad);
  for (std::size_t a = 0; a < g.n_angles; ++a) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    for (std::size_t b = 0; b < g.n_bins; ++b) buf[b] = sino.raw()[a * g.n_bins + b];
    fft::forward1d(buf, spec);
    for (std::size_t k = 0; k < npad; ++k) spec[k] *= filt[k];
    fft::inverse1d(spec, buf);
    for (std::size_t b = 0; b < g.n_bins; ++b) filtered[a * g.n_bins + b] = buf[b].real();
  }
  std::vector<double> img(op.cols());
  op.adjoint(filtered, img);
  const double h = g.pixel();
  const double scale = std::numbers::pi / static_cast<double>(g.n_angles) * ds / (h * h);
  for (auto& v : img) v *= scale;
  return Tensor::from_real({g.n, g.n, 1}, std::move(img));
}

}  // namespace tvmap
