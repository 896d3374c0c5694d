#pragma once

// TNSR1 binary tensor files:
//   "TNSR" | version u8 = 1 | dtype u8 (0 real64, 1 complex128) | ndim u8 |
//   ndim x u32 LE dims (outermost first) | float64 LE payload (complex as re,im).
// Tensors are written with dims (nt, ny, nx).

#include <algorithm>
#include <array>
#include <cmath>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace tvmap {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An n-dimensional array as stored on disk; dims are outermost first.
struct RawArray {
  DType dtype = DType::Real64;
  std::vector<std::uint32_t> dims;
  std::vector<double> data;

  std::size_t elements() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline void put_u32(std::vector<char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_f64(std::vector<char>& buf, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

inline std::uint64_t get_le(const unsigned char* p, int nbytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < nbytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::vector<char> encode_tnsr(const RawArray& a) {
  if (a.dims.size() > 255) throw FormatError("too many dims");
  if (a.data.size() != a.elements() * scalars_per_element(a.dtype)) throw FormatError("payload length mismatch");
  std::vector<char> buf{'T', 'N', 'S', 'R'};
  buf.push_back(1);
  buf.push_back(static_cast<char>(a.dtype));
  buf.push_back(static_cast<char>(a.dims.size()));
  for (auto d : a.dims) detail::put_u32(buf, d);
  buf.reserve(buf.size() + 8 * a.data.size());
  for (double v : a.data) detail::put_f64(buf, v);
  return buf;
}

inline RawArray decode_tnsr(const std::vector<char>& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 7 || std::memcmp(p, "TNSR", 4) != 0) throw FormatError("not a TNSR file");
  if (p[4] != 1) throw FormatError("unsupported TNSR version " + std::to_string(p[4]));
  if (p[5] > 1) throw FormatError("unknown TNSR dtype " + std::to_string(p[5]));
  RawArray a;
  a.dtype = static_cast<DType>(p[5]);
  const std::size_t ndim = p[6];
  std::size_t off = 7;
  if (bytes.size() < off + 4 * ndim) throw FormatError("truncated TNSR header");
  for (std::size_t i = 0; i < ndim; ++i, off += 4) a.dims.push_back(static_cast<std::uint32_t>(detail::get_le(p + off, 4)));
  const std::size_t n = a.elements() * scalars_per_element(a.dtype);
  if (bytes.size() != off + 8 * n) throw FormatError("TNSR payload size mismatch");
  a.data.resize(n);
  for (std::size_t i = 0; i < n; ++i, off += 8) a.data[i] = std::bit_cast<double>(detail::get_le(p + off, 8));
  return a;
}

inline void write_raw(const std::filesystem::path& path, const RawArray& a) {
  const auto buf = encode_tnsr(a);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

inline RawArray read_raw(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tnsr(buf);
}

inline RawArray to_raw(const Tensor& t) {
  const Shape& s = t.shape();
  return {t.dtype(),
          {static_cast<std::uint32_t>(s.nt), static_cast<std::uint32_t>(s.ny), static_cast<std::uint32_t>(s.nx)},
          t.storage()};
}

inline Tensor from_raw_array(const RawArray& a) {
  Shape s;
  switch (a.dims.size()) {
    case 1: s = {a.dims[0], 1, 1}; break;
    case 2: s = {a.dims[1], a.dims[0], 1}; break;
    case 3: s = {a.dims[2], a.dims[1], a.dims[0]}; break;
    default: throw FormatError("TNSR array with " + std::to_string(a.dims.size()) + " dims is not an image tensor");
  }
  return Tensor::from_raw(s, a.dtype, a.data);
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_raw(path, to_raw(t)); }
inline Tensor read_tensor(const std::filesystem::path& path) { return from_raw_array(read_raw(path)); }

/// Binary 8-bit PGM of |x| for frame t, min-max normalised over that frame (constant frames map to 0).
inline std::vector<char> encode_pgm(const Tensor& x, std::size_t t) {
  const Shape& s = x.shape();
  if (t >= s.nt) throw ShapeError("pgm: frame index out of range");
  const std::size_t n = s.nx * s.ny;
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < n; ++i) {
    lo = std::min(lo, x.abs(t * n + i));
    hi = std::max(hi, x.abs(t * n + i));
  }
  const std::string head = "P5\n" + std::to_string(s.nx) + " " + std::to_string(s.ny) + "\n255\n";
  std::vector<char> out(head.begin(), head.end());
  for (std::size_t i = 0; i < n; ++i) {
    const double v = hi > lo ? (x.abs(t * n + i) - lo) / (hi - lo) : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
  }
  return out;
}

inline void write_pgm(const std::filesystem::path& path, const Tensor& x, std::size_t t) {
  const auto bytes = encode_pgm(x, t);
  std::ofstream f(path, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace tvmap
