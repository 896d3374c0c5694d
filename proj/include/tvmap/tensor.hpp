#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tvmap {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class DType : std::uint8_t { Real64 = 0, Complex128 = 1 };

inline std::size_t scalars_per_element(DType d) { return d == DType::Complex128 ? 2 : 1; }

/// Spatio-temporal grid. Storage is row-major with x fastest and t outermost.
struct Shape {
  std::size_t nx = 1;
  std::size_t ny = 1;
  std::size_t nt = 1;

  std::size_t size() const { return nx * ny * nt; }
  bool dynamic() const { return nt > 1; }
  /// number of gradient directions: 2 for static images, 3 for image series
  std::size_t ndirs() const { return dynamic() ? 3 : 2; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t t = 0) const { return (t * ny + y) * nx + x; }
  friend bool operator==(const Shape&, const Shape&) = default;
  std::string str() const {
    return "(" + std::to_string(nx) + "," + std::to_string(ny) + "," + std::to_string(nt) + ")";
  }
};

/// Dense real or complex array over a Shape. Complex values are interleaved (re, im).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::Real64) {
    Tensor t;
    t.shape_ = shape;
    t.dtype_ = dtype;
    t.data_.assign(shape.size() * scalars_per_element(dtype), 0.0);
    return t;
  }

  static Tensor constant(Shape shape, double value) {
    Tensor t = zeros(shape);
    std::fill(t.data_.begin(), t.data_.end(), value);
    check_finite(t.data_);
    return t;
  }

  /// Takes ownership of raw scalars (interleaved for complex); rejects wrong length and non-finite values.
  static Tensor from_raw(Shape shape, DType dtype, std::vector<double> data) {
    if (data.size() != shape.size() * scalars_per_element(dtype))
      throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                       shape.str());
    check_finite(data);
    Tensor t;
    t.shape_ = shape;
    t.dtype_ = dtype;
    t.data_ = std::move(data);
    return t;
  }

  static Tensor from_real(Shape shape, std::vector<double> data) {
    return from_raw(shape, DType::Real64, std::move(data));
  }

  static Tensor from_complex(Shape shape, const std::vector<std::complex<double>>& values) {
    std::vector<double> raw(values.size() * 2);
    for (std::size_t i = 0; i < values.size(); ++i) {
      raw[2 * i] = values[i].real();
      raw[2 * i + 1] = values[i].imag();
    }
    return from_raw(shape, DType::Complex128, std::move(raw));
  }

  const Shape& shape() const { return shape_; }
  DType dtype() const { return dtype_; }
  bool is_complex() const { return dtype_ == DType::Complex128; }
  std::size_t size() const { return shape_.size(); }
  std::size_t ncomp() const { return scalars_per_element(dtype_); }

  std::span<double> raw() { return data_; }
  std::span<const double> raw() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double real(std::size_t i) const { return data_[i * ncomp()]; }
  double imag(std::size_t i) const { return is_complex() ? data_[2 * i + 1] : 0.0; }
  std::complex<double> value(std::size_t i) const { return {real(i), imag(i)}; }
  double abs(std::size_t i) const { return std::abs(value(i)); }

  void set(std::size_t i, std::complex<double> v) {
    data_[i * ncomp()] = v.real();
    if (is_complex()) data_[2 * i + 1] = v.imag();
  }

  Tensor as_complex() const {
    if (is_complex()) return *this;
    Tensor out = zeros(shape_, DType::Complex128);
    for (std::size_t i = 0; i < size(); ++i) out.data_[2 * i] = data_[i];
    return out;
  }

  Tensor real_part() const {
    if (!is_complex()) return *this;
    Tensor out = zeros(shape_);
    for (std::size_t i = 0; i < size(); ++i) out.data_[i] = data_[2 * i];
    return out;
  }

  Tensor magnitude() const {
    Tensor out = zeros(shape_);
    for (std::size_t i = 0; i < size(); ++i) out.data_[i] = abs(i);
    return out;
  }

  /// Extract frame t as a static tensor.
  Tensor frame(std::size_t t) const {
    Tensor out = zeros({shape_.nx, shape_.ny, 1}, dtype_);
    const std::size_t n = shape_.nx * shape_.ny * ncomp();
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(t * n), n, out.data_.begin());
    return out;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static void check_finite(const std::vector<double>& d) {
    for (double v : d)
      if (!std::isfinite(v)) throw std::domain_error("tensor values must be finite");
  }

  Shape shape_{};
  DType dtype_ = DType::Real64;
  std::vector<double> data_;
};

/// Stack of per-direction tensors: gradients, dual variables, parameter-maps.
struct GradField {
  std::vector<Tensor> comps;

  static GradField zeros(Shape shape, std::size_t ndirs, DType dtype = DType::Real64) {
    GradField g;
    g.comps.assign(ndirs, Tensor::zeros(shape, dtype));
    return g;
  }

  static GradField constant(Shape shape, std::size_t ndirs, double value) {
    GradField g;
    g.comps.assign(ndirs, Tensor::constant(shape, value));
    return g;
  }

  std::size_t ndirs() const { return comps.size(); }
  const Shape& shape() const { return comps.at(0).shape(); }
  DType dtype() const { return comps.at(0).dtype(); }

  void check_consistent() const {
    if (comps.empty()) throw ShapeError("grad field has no components");
    for (const auto& c : comps)
      if (c.shape() != comps[0].shape() || c.dtype() != comps[0].dtype())
        throw ShapeError("grad field components disagree in shape or dtype");
  }

  bool strictly_positive() const {
    for (const auto& c : comps) {
      if (c.is_complex()) return false;
      for (double v : c.raw())
        if (!(v > 0.0)) return false;
    }
    return true;
  }

  /// Components concatenated direction-major.
  std::vector<double> flatten() const {
    std::vector<double> out;
    for (const auto& c : comps) out.insert(out.end(), c.raw().begin(), c.raw().end());
    return out;
  }

  static GradField unflatten(std::span<const double> flat, Shape shape, std::size_t ndirs, DType dtype) {
    const std::size_t per = shape.size() * scalars_per_element(dtype);
    if (flat.size() != per * ndirs) throw ShapeError("flat grad field has wrong length");
    GradField g;
    for (std::size_t d = 0; d < ndirs; ++d)
      g.comps.push_back(Tensor::from_raw(shape, dtype, {flat.begin() + d * per, flat.begin() + (d + 1) * per}));
    return g;
  }

  friend bool operator==(const GradField&, const GradField&) = default;
};

/// How net output channels are shared across gradient directions.
enum class SharingMode { XYT, XY_T, X_Y_T };

inline std::size_t channels_for(SharingMode mode, std::size_t ndirs) {
  switch (mode) {
    case SharingMode::XYT: return 1;
    case SharingMode::XY_T: return 2;
    case SharingMode::X_Y_T: return ndirs;
  }
  return 1;
}

inline SharingMode parse_sharing_mode(const std::string& s) {
  if (s == "xyt" || s == "XYT") return SharingMode::XYT;
  if (s == "xy_t" || s == "XY_T" || s == "xy,t") return SharingMode::XY_T;
  if (s == "x_y_t" || s == "X_Y_T" || s == "x,y,t") return SharingMode::X_Y_T;
  throw std::invalid_argument("unknown sharing mode '" + s + "'");
}

inline std::string to_string(SharingMode m) {
  switch (m) {
    case SharingMode::XYT: return "xyt";
    case SharingMode::XY_T: return "xy_t";
    case SharingMode::X_Y_T: return "x_y_t";
  }
  return "?";
}

/// Channel index feeding each gradient direction.
inline std::vector<std::size_t> channel_expansion(SharingMode mode, std::size_t nchannels, std::size_t ndirs) {
  switch (mode) {
    case SharingMode::XYT:
      if (nchannels != 1) throw ShapeError("mode xyt expects 1 channel");
      return std::vector<std::size_t>(ndirs, 0);
    case SharingMode::XY_T:
      if (nchannels != 2) throw ShapeError("mode xy_t expects 2 channels");
      if (ndirs != 3) throw ShapeError("mode xy_t needs a temporal direction");
      return {0, 0, 1};
    case SharingMode::X_Y_T: {
      if (nchannels != ndirs) throw ShapeError("mode x_y_t expects one channel per direction");
      std::vector<std::size_t> idx(ndirs);
      for (std::size_t d = 0; d < ndirs; ++d) idx[d] = d;
      return idx;
    }
  }
  throw ShapeError("bad sharing mode");
}

/// Expand 1, 2 or 3 map channels to a full parameter-map with `ndirs` components.
inline GradField expand_map(const GradField& channels, SharingMode mode, std::size_t ndirs = 3) {
  channels.check_consistent();
  const auto idx = channel_expansion(mode, channels.ndirs(), ndirs);
  GradField out;
  for (std::size_t k : idx) out.comps.push_back(channels.comps[k]);
  return out;
}

// ---------------------------------------------------------------------------
// Finite differences. Flat kernels act on `ncomp` interleaved scalars per
// element so complex inputs difference real and imaginary parts separately.

namespace detail {

struct AxisWalk {
  std::size_t stride;  // in elements
  std::size_t extent;
};

inline AxisWalk axis(const Shape& s, std::size_t dir) {
  switch (dir) {
    case 0: return {1, s.nx};
    case 1: return {s.nx, s.ny};
    default: return {s.nx * s.ny, s.nt};
  }
}

}  // namespace detail

/// Forward differences, zero at the trailing boundary. `out` holds ndirs blocks of size n*ncomp.
inline void grad_flat(std::span<const double> x, const Shape& s, std::size_t ncomp, std::span<double> out) {
  const std::size_t n = s.size();
  const std::size_t block = n * ncomp;
  const std::size_t q = s.ndirs();
  for (std::size_t d = 0; d < q; ++d) {
    const auto [stride, extent] = detail::axis(s, d);
    double* g = out.data() + d * block;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t pos = (i / stride) % extent;
      if (pos + 1 < extent) {
        for (std::size_t c = 0; c < ncomp; ++c) g[i * ncomp + c] = x[(i + stride) * ncomp + c] - x[i * ncomp + c];
      } else {
        for (std::size_t c = 0; c < ncomp; ++c) g[i * ncomp + c] = 0.0;
      }
    }
  }
}

/// Exact adjoint of grad_flat.
inline void grad_adjoint_flat(std::span<const double> g, const Shape& s, std::size_t ncomp, std::span<double> out) {
  const std::size_t n = s.size();
  const std::size_t block = n * ncomp;
  const std::size_t q = s.ndirs();
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t d = 0; d < q; ++d) {
    const auto [stride, extent] = detail::axis(s, d);
    const double* gd = g.data() + d * block;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t pos = (i / stride) % extent;
      for (std::size_t c = 0; c < ncomp; ++c) {
        double v = 0.0;
        if (pos + 1 < extent) v -= gd[i * ncomp + c];
        if (pos > 0) v += gd[(i - stride) * ncomp + c];
        out[i * ncomp + c] += v;
      }
    }
  }
}

inline GradField grad(const Tensor& x) {
  const Shape& s = x.shape();
  std::vector<double> flat(s.ndirs() * x.raw().size());
  grad_flat(x.raw(), s, x.ncomp(), flat);
  return GradField::unflatten(flat, s, s.ndirs(), x.dtype());
}

/// The adjoint ∇ᵀ (negative divergence).
inline Tensor div(const GradField& g) {
  g.check_consistent();
  const Shape& s = g.shape();
  if (g.ndirs() != s.ndirs()) throw ShapeError("grad field direction count does not match its shape");
  const auto flat = g.flatten();
  Tensor out = Tensor::zeros(s, g.dtype());
  grad_adjoint_flat(flat, s, out.ncomp(), out.raw());
  return out;
}

/// Anisotropic weighted TV: Σ_z Σ_d Λ_d(z)(|∇_d Re x(z)| + |∇_d Im x(z)|).
inline double tv_weighted(const Tensor& x, const GradField& lambda) {
  lambda.check_consistent();
  if (lambda.shape() != x.shape() || lambda.ndirs() != x.shape().ndirs())
    throw ShapeError("parameter-map shape " + lambda.shape().str() + " does not match image " + x.shape().str());
  const GradField g = grad(x);
  const std::size_t nc = x.ncomp();
  double acc = 0.0;
  for (std::size_t d = 0; d < g.ndirs(); ++d) {
    const auto gd = g.comps[d].raw();
    const auto ld = lambda.comps[d].raw();
    for (std::size_t i = 0; i < x.size(); ++i) {
      double a = 0.0;
      for (std::size_t c = 0; c < nc; ++c) a += std::abs(gd[i * nc + c]);
      acc += ld[i] * a;
    }
  }
  return acc;
}

inline double tv(const Tensor& x) {
  return tv_weighted(x, GradField::constant(x.shape(), x.shape().ndirs(), 1.0));
}

// ---------------------------------------------------------------------------
// Small vector helpers over raw scalars (real inner product, i.e. Re⟨·,·⟩ for complex).

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double dot(const Tensor& a, const Tensor& b) { return dot(a.raw(), b.raw()); }
inline double norm2(const Tensor& a) { return norm2(a.raw()); }

inline double dot(const GradField& a, const GradField& b) {
  if (a.ndirs() != b.ndirs()) throw ShapeError("dot: direction count mismatch");
  double s = 0.0;
  for (std::size_t d = 0; d < a.ndirs(); ++d) s += dot(a.comps[d], b.comps[d]);
  return s;
}

inline double norm2(const GradField& a) { return std::sqrt(dot(a, a)); }

inline double distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline double distance(const Tensor& a, const Tensor& b) { return distance(a.raw(), b.raw()); }

}  // namespace tvmap
