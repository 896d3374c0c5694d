#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <span>
#include <stdexcept>
#include <tuple>

namespace tvmap::fft {

namespace detail {

// FFTW planning is not thread-safe; execution of an existing plan on new arrays is.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(int n0, int n1, int sign) {
    std::lock_guard lock(mu_);
    const auto key = std::make_tuple(n0, n1, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    const std::size_t n = static_cast<std::size_t>(n0) * static_cast<std::size_t>(n1);
    auto* in = fftw_alloc_complex(n);
    auto* out = fftw_alloc_complex(n);
    fftw_plan p = (n0 == 1) ? fftw_plan_dft_1d(n1, in, out, sign, FFTW_ESTIMATE | FFTW_UNALIGNED)
                            : fftw_plan_dft_2d(n0, n1, in, out, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(in);
    fftw_free(out);
    if (p == nullptr) throw std::runtime_error("fftw planning failed");
    plans_.emplace(key, p);
    return p;
  }

  PlanCache(const PlanCache&) = delete;
  PlanCache& operator=(const PlanCache&) = delete;

 private:
  PlanCache() = default;
  ~PlanCache() {
    for (auto& [k, p] : plans_) fftw_destroy_plan(p);
  }

  std::mutex mu_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
};

inline void run(int n0, int n1, int sign, std::span<const std::complex<double>> in, std::span<std::complex<double>> out) {
  const std::size_t n = static_cast<std::size_t>(n0) * static_cast<std::size_t>(n1);
  if (in.size() != n || out.size() != n) throw std::invalid_argument("fft: buffer size mismatch");
  fftw_plan p = PlanCache::instance().get(n0, n1, sign);
  // FFTW's new-array execute takes a non-const input pointer but does not modify it out of place.
  fftw_execute_dft(p, reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in.data())),
                   reinterpret_cast<fftw_complex*>(out.data()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (auto& v : out) v *= scale;
}

}  // namespace detail

/// Unitary 2-D DFT of a row-major (ny rows, nx columns) array.
inline void forward2d(std::size_t ny, std::size_t nx, std::span<const std::complex<double>> in,
                      std::span<std::complex<double>> out) {
  detail::run(static_cast<int>(ny), static_cast<int>(nx), FFTW_FORWARD, in, out);
}

inline void inverse2d(std::size_t ny, std::size_t nx, std::span<const std::complex<double>> in,
                      std::span<std::complex<double>> out) {
  detail::run(static_cast<int>(ny), static_cast<int>(nx), FFTW_BACKWARD, in, out);
}

/// Unitary 1-D DFT.
inline void forward1d(std::span<const std::complex<double>> in, std::span<std::complex<double>> out) {
  detail::run(1, static_cast<int>(in.size()), FFTW_FORWARD, in, out);
}

inline void inverse1d(std::span<const std::complex<double>> in, std::span<std::complex<double>> out) {
  detail::run(1, static_cast<int>(in.size()), FFTW_BACKWARD, in, out);
}

}  // namespace tvmap::fft
