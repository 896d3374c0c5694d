#pragma once

// Synthetic ground truths and corruption models standing in for real datasets.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "linops.hpp"
#include "prox.hpp"
#include "tensor.hpp"

namespace tvmap {

struct Disk {
  double x0, y0, x1, y1;  // centre at the first and last frame
  double radius;
  double intensity;
};

struct DiskPhantom {
  Tensor image;
  std::vector<Disk> disks;
};

/// k disks on linear trajectories over a faint static background. Both end-point centres keep the
/// disk inside the frame, so every intermediate position does too.
inline DiskPhantom moving_disks(std::size_t nx, std::size_t ny, std::size_t nt, std::size_t k, std::uint64_t seed) {
  if (nx < 8 || ny < 8 || nt < 1) throw std::invalid_argument("moving-disks needs at least 8x8 pixels and one frame");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double side = static_cast<double>(std::min(nx, ny));
  DiskPhantom ph{Tensor::zeros({nx, ny, nt}), {}};
  for (std::size_t d = 0; d < k; ++d) {
    Disk disk{};
    disk.radius = side * (0.08 + 0.12 * u(rng));
    disk.intensity = 0.3 + 0.7 * u(rng);
    auto coord = [&](std::size_t n) { return disk.radius + u(rng) * (static_cast<double>(n) - 1.0 - 2.0 * disk.radius); };
    disk.x0 = coord(nx);
    disk.y0 = coord(ny);
    disk.x1 = coord(nx);
    disk.y1 = coord(ny);
    ph.disks.push_back(disk);
  }
  // static background rectangle so the scene mixes moving and stationary structure
  const std::size_t bx = nx / 8 + static_cast<std::size_t>(u(rng) * static_cast<double>(nx / 4));
  const std::size_t by = ny / 8 + static_cast<std::size_t>(u(rng) * static_cast<double>(ny / 4));
  const double bg = 0.1 + 0.15 * u(rng);
  auto raw = ph.image.raw();
  for (std::size_t t = 0; t < nt; ++t) {
    const double a = nt > 1 ? static_cast<double>(t) / static_cast<double>(nt - 1) : 0.0;
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) {
        double v = (x >= bx && x < nx - bx && y >= by && y < ny - by) ? bg : 0.0;
        for (const auto& disk : ph.disks) {
          const double cx = disk.x0 + a * (disk.x1 - disk.x0), cy = disk.y0 + a * (disk.y1 - disk.y0);
          if (std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy) <= disk.radius) v = disk.intensity;
        }
        raw[ph.image.shape().index(x, y, t)] = v;
      }
  }
  return ph;
}

/// Nested constant ellipses inside a body ellipse, values clamped to [0, 1].
inline Tensor ellipse_ct(std::size_t n, std::uint64_t seed, std::size_t inner = 6) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  struct E {
    double cx, cy, a, b, phi, v;
  };
  std::vector<E> es;
  es.push_back({0.0, 0.0, 0.85, 0.7, 0.0, 0.35 + 0.15 * u(rng)});
  for (std::size_t k = 0; k < inner; ++k) {
    const double a = 0.08 + 0.25 * u(rng), b = 0.08 + 0.25 * u(rng);
    const double r = 0.45 * u(rng), ang = 2.0 * std::numbers::pi * u(rng);
    es.push_back({r * std::cos(ang), 0.8 * r * std::sin(ang), a, b, std::numbers::pi * u(rng), -0.2 + 0.6 * u(rng)});
  }
  Tensor img = Tensor::zeros({n, n, 1});
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double px = 2.0 * (static_cast<double>(x) + 0.5) / static_cast<double>(n) - 1.0;
      const double py = 2.0 * (static_cast<double>(y) + 0.5) / static_cast<double>(n) - 1.0;
      double v = 0.0;
      for (std::size_t k = 0; k < es.size(); ++k) {
        const E& e = es[k];
        const double dx = px - e.cx, dy = py - e.cy;
        const double rx = std::cos(e.phi) * dx + std::sin(e.phi) * dy, ry = -std::sin(e.phi) * dx + std::cos(e.phi) * dy;
        const bool in_body = k == 0 || v > 0.0;
        if (in_body && (rx * rx) / (e.a * e.a) + (ry * ry) / (e.b * e.b) <= 1.0) v += e.v;
      }
      img.raw()[y * n + x] = std::clamp(v, 0.0, 1.0);
    }
  return img;
}

/// Concentric ring labels 0 (outside) .. regions around the image centre.
inline Tensor qmri_regions(std::size_t n, std::size_t regions = 3) {
  Tensor lab = Tensor::zeros({n, n, 1});
  const double c = (static_cast<double>(n) - 1.0) / 2.0, rmax = 0.45 * static_cast<double>(n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double r = std::hypot(static_cast<double>(x) - c, static_cast<double>(y) - c);
      if (r > rmax) continue;
      const auto ring = static_cast<std::size_t>(std::floor((1.0 - r / rmax) * static_cast<double>(regions)));
      lab.raw()[y * n + x] = static_cast<double>(std::min(ring, regions - 1) + 1);
    }
  return lab;
}

/// Real: x + σg. Complex: x + σ(g₁ + i g₂)/√2, so each sample has total variance σ².
inline Tensor add_gaussian(const Tensor& x, double sigma, std::uint64_t seed, bool complex_noise) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("noise level must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  if (!complex_noise) {
    if (x.is_complex()) throw std::invalid_argument("real noise requested for complex data");
    std::vector<double> v = x.storage();
    for (auto& e : v) e += sigma * nd(rng);
    return Tensor::from_raw(x.shape(), DType::Real64, std::move(v));
  }
  std::vector<double> v(2 * x.size());
  const double s = sigma / std::sqrt(2.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto c = x.value(i);
    v[2 * i] = c.real() + s * nd(rng);
    v[2 * i + 1] = c.imag() + s * nd(rng);
  }
  return Tensor::from_raw(x.shape(), DType::Complex128, std::move(v));
}

inline constexpr double kZeroCountClamp = 0.1;

/// Log-transformed low-dose data: Ñ ~ Pois(N₀ e^{−(Ax)μ}), zero counts set to 0.1, z = −log(Ñ/N₀)/μ.
inline Tensor ct_poisson_log(const LinearOperator& A, const Tensor& x_true, const KlParams& kl, std::uint64_t seed,
                             std::size_t* zero_counts = nullptr) {
  kl.validate();
  const auto ax = A.apply(x_true.raw());
  std::mt19937_64 rng(seed);
  std::vector<double> z(ax.size());
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < ax.size(); ++i) {
    const double mean = kl.n0 * std::exp(-ax[i] * kl.mu);
    double cnt = mean > 0.0 ? static_cast<double>(std::poisson_distribution<long long>(mean)(rng)) : 0.0;
    if (cnt == 0.0) {
      cnt = kZeroCountClamp;
      ++zeros;
    }
    z[i] = -std::log(cnt / kl.n0) / kl.mu;
  }
  if (zero_counts) *zero_counts = zeros;
  return Tensor::from_raw(A.codomain().shape, DType::Real64, std::move(z));
}

}  // namespace tvmap
