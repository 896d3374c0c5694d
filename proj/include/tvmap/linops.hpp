#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace tvmap {

/// Domain or codomain description: `ncomp` stacked blocks of a Shape-sized tensor.
struct Space {
  Shape shape;
  DType dtype = DType::Real64;
  std::size_t blocks = 1;

  std::size_t scalars() const { return shape.size() * scalars_per_element(dtype) * blocks; }
  friend bool operator==(const Space&, const Space&) = default;
};

class OpNormError : public std::runtime_error {
 public:
  OpNormError(const std::string& what, double last_estimate)
      : std::runtime_error(what), last_estimate(last_estimate) {}
  double last_estimate;
};

struct OpNormOptions {
  double tol = 1e-6;
  std::size_t max_iter = 400;
  std::uint64_t seed = 0x5eed;
};

/// Largest eigenvalue of a symmetric positive semidefinite map on R^dim, by Lanczos with full
/// reorthogonalization. Stops when the Ritz residual bound falls below tol * estimate.
inline double largest_eigenvalue(const std::function<void(std::span<const double>, std::span<double>)>& apply,
                                 std::size_t dim, const OpNormOptions& opt = {}) {
  if (dim == 0) throw std::invalid_argument("largest_eigenvalue: empty space");
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> basis;
  std::vector<double> v(dim);
  for (auto& e : v) e = nd(rng);
  double nv = norm2(v);
  for (auto& e : v) e /= nv;

  std::vector<double> alpha, beta;
  std::vector<double> w(dim);
  double estimate = 0.0;
  const std::size_t limit = std::min(opt.max_iter, dim);
  for (std::size_t j = 0; j < limit; ++j) {
    basis.push_back(v);
    apply(basis.back(), w);
    const double a = dot(w, basis.back());
    alpha.push_back(a);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) {
        const double c = dot(w, b);
        for (std::size_t i = 0; i < dim; ++i) w[i] -= c * b[i];
      }
    const double bnext = norm2(w);

    const auto k = static_cast<Eigen::Index>(alpha.size());
    Eigen::VectorXd diag = Eigen::Map<Eigen::VectorXd>(alpha.data(), k);
    Eigen::VectorXd sub(std::max<Eigen::Index>(k - 1, 0));
    for (Eigen::Index i = 0; i + 1 < k; ++i) sub[i] = beta[static_cast<std::size_t>(i)];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    const double theta = es.eigenvalues()[k - 1];
    const double resid = bnext * std::abs(es.eigenvectors()(k - 1, k - 1));
    estimate = theta;
    const double scale = std::max(std::abs(theta), 1e-300);
    if (resid <= opt.tol * scale || bnext <= 1e-14 * scale || j + 1 == dim) return std::max(theta, 0.0);
    beta.push_back(bnext);
    for (std::size_t i = 0; i < dim; ++i) v[i] = w[i] / bnext;
  }
  throw OpNormError("operator norm estimate did not converge", std::sqrt(std::max(estimate, 0.0)));
}

/// A linear map with its adjoint (with respect to the real inner product, i.e. the Hermitian adjoint
/// for complex spaces stored as interleaved scalars).
class LinearOperator {
 public:
  using Map = std::function<void(std::span<const double>, std::span<double>)>;

  LinearOperator(std::string name, Space domain, Space codomain, Map forward, Map adjoint)
      : name_(std::move(name)),
        domain_(domain),
        codomain_(codomain),
        forward_(std::move(forward)),
        adjoint_(std::move(adjoint)),
        norm_cache_(std::make_shared<NormCache>()) {}

  const std::string& name() const { return name_; }
  const Space& domain() const { return domain_; }
  const Space& codomain() const { return codomain_; }

  void apply(std::span<const double> in, std::span<double> out) const {
    check(in.size(), domain_, out.size(), codomain_);
    forward_(in, out);
  }

  void apply_adjoint(std::span<const double> in, std::span<double> out) const {
    check(in.size(), codomain_, out.size(), domain_);
    adjoint_(in, out);
  }

  std::vector<double> apply(std::span<const double> in) const {
    std::vector<double> out(codomain_.scalars());
    apply(in, out);
    return out;
  }

  std::vector<double> apply_adjoint(std::span<const double> in) const {
    std::vector<double> out(domain_.scalars());
    apply_adjoint(in, out);
    return out;
  }

  Tensor forward(const Tensor& x) const {
    return Tensor::from_raw(codomain_.shape, codomain_.dtype, apply(x.raw()));
  }

  Tensor adjoint(const Tensor& y) const {
    return Tensor::from_raw(domain_.shape, domain_.dtype, apply_adjoint(y.raw()));
  }

  /// ‖A‖ estimated once (default tolerance) and cached.
  double norm() const {
    std::call_once(norm_cache_->once, [&] { norm_cache_->value = compute_norm({}); });
    return norm_cache_->value;
  }

  double compute_norm(const OpNormOptions& opt) const {
    std::vector<double> tmp(codomain_.scalars());
    auto normal = [&](std::span<const double> in, std::span<double> out) {
      forward_(in, tmp);
      adjoint_(tmp, out);
    };
    return std::sqrt(largest_eigenvalue(normal, domain_.scalars(), opt));
  }

 private:
  static void check(std::size_t nin, const Space& sin, std::size_t nout, const Space& sout) {
    if (nin != sin.scalars() || nout != sout.scalars())
      throw ShapeError("linear operator: buffer sizes do not match declared spaces");
  }

  struct NormCache {
    std::once_flag once;
    double value = 0.0;
  };

  std::string name_;
  Space domain_;
  Space codomain_;
  Map forward_;
  Map adjoint_;
  std::shared_ptr<NormCache> norm_cache_;
};

inline double op_norm(const LinearOperator& K, double tol = 1e-6, std::size_t max_iter = 400) {
  return K.compute_norm({tol, max_iter, 0x5eed});
}

inline LinearOperator identity_op(Shape shape, DType dtype = DType::Real64) {
  const Space s{shape, dtype, 1};
  auto copy = [](std::span<const double> in, std::span<double> out) { std::copy(in.begin(), in.end(), out.begin()); };
  return {"identity", s, s, copy, copy};
}

/// Diagonal real operator, mostly for tests and dense checks.
inline LinearOperator diagonal_op(std::vector<double> d) {
  const Space s{{d.size(), 1, 1}, DType::Real64, 1};
  auto mul = [d](std::span<const double> in, std::span<double> out) {
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] * in[i];
  };
  return {"diagonal", s, s, mul, mul};
}

/// ∇ as an operator from image space to the stacked gradient field (direction-major blocks).
inline LinearOperator gradient_op(Shape shape, DType dtype = DType::Real64) {
  const Space dom{shape, dtype, 1};
  const Space cod{shape, dtype, shape.ndirs()};
  const std::size_t nc = scalars_per_element(dtype);
  return {"gradient", dom, cod,
          [shape, nc](std::span<const double> in, std::span<double> out) { grad_flat(in, shape, nc, out); },
          [shape, nc](std::span<const double> in, std::span<double> out) { grad_adjoint_flat(in, shape, nc, out); }};
}

/// ‖[A; B]‖ = sqrt(λ_max(AᴴA + BᴴB)).
inline double stacked_norm(const LinearOperator& A, const LinearOperator& B, const OpNormOptions& opt = {}) {
  if (!(A.domain() == B.domain())) throw ShapeError("stacked_norm: operators act on different spaces");
  std::vector<double> ta(A.codomain().scalars()), tb(B.codomain().scalars()), ub(A.domain().scalars());
  auto normal = [&](std::span<const double> in, std::span<double> out) {
    A.apply(in, ta);
    A.apply_adjoint(ta, out);
    B.apply(in, tb);
    B.apply_adjoint(tb, ub);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += ub[i];
  };
  return std::sqrt(largest_eigenvalue(normal, A.domain().scalars(), opt));
}

/// |⟨Ax, y⟩ − ⟨x, Aᴴy⟩| / (‖x‖‖y‖) for one random probe pair.
inline double adjoint_defect(const LinearOperator& A, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::vector<double> x(A.domain().scalars()), y(A.codomain().scalars());
  for (auto& v : x) v = nd(rng);
  for (auto& v : y) v = nd(rng);
  const auto ax = A.apply(x);
  const auto aty = A.apply_adjoint(y);
  return std::abs(dot(ax, y) - dot(x, aty)) / (norm2(x) * norm2(y));
}

/// Dense real matrix of an operator (columns = images of unit vectors). Only for small problems.
inline Eigen::MatrixXd dense_matrix(const LinearOperator& A) {
  const std::size_t n = A.domain().scalars();
  const std::size_t m = A.codomain().scalars();
  Eigen::MatrixXd M(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  std::vector<double> e(n, 0.0), col(m);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    A.apply(e, col);
    for (std::size_t i = 0; i < m; ++i) M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
    e[j] = 0.0;
  }
  return M;
}

/// Conjugate gradients on AᴴA x = Aᴴz from x = 0; `iters` = 0 returns Aᴴz itself.
inline Tensor cg_normal_init(const LinearOperator& A, const Tensor& z, std::size_t iters) {
  const auto rhs = A.apply_adjoint(z.raw());
  if (iters == 0) return Tensor::from_raw(A.domain().shape, A.domain().dtype, rhs);
  const std::size_t n = rhs.size();
  std::vector<double> x(n, 0.0), r = rhs, p = rhs, ap(n), tmp(A.codomain().scalars());
  double rr = dot(r, r);
  for (std::size_t k = 0; k < iters && rr > 0.0; ++k) {
    A.apply(p, tmp);
    A.apply_adjoint(tmp, ap);
    const double pap = dot(p, ap);
    if (pap <= 0.0) break;
    const double alpha = rr / pap;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    const double rr_new = dot(r, r);
    if (rr_new == 0.0) break;
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
  }
  return Tensor::from_raw(A.domain().shape, A.domain().dtype, std::move(x));
}

}  // namespace tvmap
