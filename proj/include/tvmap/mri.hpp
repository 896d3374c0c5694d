#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include "fft.hpp"
#include "linops.hpp"

namespace tvmap {

/// Multi-coil Cartesian encoder A = (I_nc ⊗ E) C with per-frame sampling masks.
///
/// Masks are stored in FFT-native order (DC at index 0) as a real (nx, ny, nt) tensor of 0/1.
/// Coil maps are a complex (nx, ny, nc) tensor, shared across frames. The codomain is the flat
/// list of sampled k-space values ordered by coil, then frame, then row-major k-space index.
class MriEncoder {
 public:
  MriEncoder(Tensor coils, Tensor masks) : coils_(std::move(coils)), masks_(std::move(masks)) {
    if (!coils_.is_complex()) coils_ = coils_.as_complex();
    const Shape& cs = coils_.shape();
    const Shape& ms = masks_.shape();
    if (cs.nx != ms.nx || cs.ny != ms.ny) throw ShapeError("mri: coil maps and masks disagree on the image grid");
    grid_ = {ms.nx, ms.ny, ms.nt};
    ncoils_ = cs.nt;
    const std::size_t nxy = ms.nx * ms.ny;
    samples_.resize(ms.nt);
    for (std::size_t t = 0; t < ms.nt; ++t) {
      for (std::size_t i = 0; i < nxy; ++i)
        if (masks_.raw()[t * nxy + i] != 0.0) samples_[t].push_back(i);
      if (samples_[t].empty()) throw ShapeError("mri: frame " + std::to_string(t) + " has an empty sampling set");
    }
    for (const auto& s : samples_) per_coil_ += s.size();
  }

  const Shape& grid() const { return grid_; }
  std::size_t ncoils() const { return ncoils_; }
  std::size_t nsamples() const { return per_coil_ * ncoils_; }
  const Tensor& coils() const { return coils_; }
  const Tensor& masks() const { return masks_; }

  /// x: interleaved complex image series; out: interleaved complex samples.
  void forward(std::span<const double> x, std::span<double> out) const {
    const std::size_t nxy = grid_.nx * grid_.ny;
    std::vector<std::complex<double>> buf(nxy), kspace(nxy);
    const auto* xc = reinterpret_cast<const std::complex<double>*>(x.data());
    const auto* cc = reinterpret_cast<const std::complex<double>*>(coils_.raw().data());
    auto* oc = reinterpret_cast<std::complex<double>*>(out.data());
    std::size_t o = 0;
    for (std::size_t k = 0; k < ncoils_; ++k) {
      for (std::size_t t = 0; t < grid_.nt; ++t) {
        for (std::size_t i = 0; i < nxy; ++i) buf[i] = cc[k * nxy + i] * xc[t * nxy + i];
        fft::forward2d(grid_.ny, grid_.nx, buf, kspace);
        for (std::size_t idx : samples_[t]) oc[o++] = kspace[idx];
      }
    }
  }

  void adjoint(std::span<const double> y, std::span<double> out) const {
    const std::size_t nxy = grid_.nx * grid_.ny;
    std::vector<std::complex<double>> kspace(nxy), img(nxy);
    const auto* yc = reinterpret_cast<const std::complex<double>*>(y.data());
    const auto* cc = reinterpret_cast<const std::complex<double>*>(coils_.raw().data());
    auto* oc = reinterpret_cast<std::complex<double>*>(out.data());
    std::fill(out.begin(), out.end(), 0.0);
    std::size_t o = 0;
    for (std::size_t k = 0; k < ncoils_; ++k) {
      for (std::size_t t = 0; t < grid_.nt; ++t) {
        std::fill(kspace.begin(), kspace.end(), std::complex<double>{});
        for (std::size_t idx : samples_[t]) kspace[idx] = yc[o++];
        fft::inverse2d(grid_.ny, grid_.nx, kspace, img);
        for (std::size_t i = 0; i < nxy; ++i) oc[t * nxy + i] += std::conj(cc[k * nxy + i]) * img[i];
      }
    }
  }

  LinearOperator op() const {
    const Space dom{grid_, DType::Complex128, 1};
    const Space cod{{nsamples(), 1, 1}, DType::Complex128, 1};
    auto self = std::make_shared<MriEncoder>(*this);
    return {"mri", dom, cod,
            [self](std::span<const double> in, std::span<double> out) { self->forward(in, out); },
            [self](std::span<const double> in, std::span<double> out) { self->adjoint(in, out); }};
  }

 private:
  Tensor coils_;
  Tensor masks_;
  Shape grid_;
  std::size_t ncoils_ = 0;
  std::size_t per_coil_ = 0;
  std::vector<std::vector<std::size_t>> samples_;
};

/// Row-wise (phase-encode) Cartesian masks. Each frame keeps the central `center_fraction` of
/// ky rows and draws the remaining rows uniformly so that round(ny / R) rows are sampled.
inline Tensor make_cartesian_mask(std::size_t nx, std::size_t ny, std::size_t nt, double R,
                                  double center_fraction, std::uint64_t seed) {
  if (R < 1.0) throw std::invalid_argument("acceleration factor must be >= 1");
  Tensor mask = Tensor::zeros({nx, ny, nt});
  const std::size_t total = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(ny / R)), 1, ny);
  const std::size_t center = std::min(total, std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(center_fraction * ny))));
  // rows sorted by distance of their frequency from DC
  std::vector<std::size_t> by_freq(ny);
  for (std::size_t i = 0; i < ny; ++i) by_freq[i] = i;
  auto freq = [ny](std::size_t r) {
    const auto k = static_cast<long>(r);
    return std::labs(k < static_cast<long>((ny + 1) / 2) ? k : k - static_cast<long>(ny));
  };
  std::stable_sort(by_freq.begin(), by_freq.end(), [&](std::size_t a, std::size_t b) { return freq(a) < freq(b); });

  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < nt; ++t) {
    std::vector<std::size_t> rows(by_freq.begin(), by_freq.begin() + static_cast<std::ptrdiff_t>(center));
    std::vector<std::size_t> rest(by_freq.begin() + static_cast<std::ptrdiff_t>(center), by_freq.end());
    std::shuffle(rest.begin(), rest.end(), rng);
    rows.insert(rows.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(total - center));
    for (std::size_t r : rows)
      for (std::size_t x = 0; x < nx; ++x) mask.raw()[mask.shape().index(x, r, t)] = 1.0;
  }
  return mask;
}

/// Gaussian-bump coil profiles centred at `nc` points on the image border, with linear phase,
/// normalised so that Σ_k |C_k|² = 1 at every pixel.
inline Tensor synth_coil_maps(std::size_t nx, std::size_t ny, std::size_t nc) {
  if (nc == 0) throw std::invalid_argument("need at least one coil");
  Tensor coils = Tensor::zeros({nx, ny, nc}, DType::Complex128);
  const double cx = (static_cast<double>(nx) - 1.0) / 2.0;
  const double cy = (static_cast<double>(ny) - 1.0) / 2.0;
  const double width = 0.6 * static_cast<double>(std::max(nx, ny));
  for (std::size_t k = 0; k < nc; ++k) {
    const double ang = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(nc);
    // point on the bounding rectangle along direction ang
    const double dx = std::cos(ang), dy = std::sin(ang);
    const double s = std::min(std::abs(dx) > 1e-12 ? (cx + 0.5) / std::abs(dx) : 1e300,
                              std::abs(dy) > 1e-12 ? (cy + 0.5) / std::abs(dy) : 1e300);
    const double px = cx + s * dx, py = cy + s * dy;
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) {
        const double rx = static_cast<double>(x) - px, ry = static_cast<double>(y) - py;
        const double mag = std::exp(-(rx * rx + ry * ry) / (2.0 * width * width));
        const double phase = std::numbers::pi * (dx * static_cast<double>(x) / nx + dy * static_cast<double>(y) / ny) +
                             0.5 * static_cast<double>(k);
        coils.set(coils.shape().index(x, y, k), std::polar(mag, phase));
      }
  }
  const std::size_t nxy = nx * ny;
  for (std::size_t i = 0; i < nxy; ++i) {
    double ss = 0.0;
    for (std::size_t k = 0; k < nc; ++k) ss += std::norm(coils.value(k * nxy + i));
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t k = 0; k < nc; ++k) coils.set(k * nxy + i, coils.value(k * nxy + i) * inv);
  }
  return coils;
}

}  // namespace tvmap
