#pragma once

// Dataset assembly for the four tasks. Item i of a split draws all of its randomness from
// seed + offset(split) + i, so items can be built in any order.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "certificates.hpp"
#include "config.hpp"
#include "metrics.hpp"
#include "mri.hpp"
#include "paramnet.hpp"
#include "phantoms.hpp"
#include "qmri.hpp"
#include "radon.hpp"

namespace tvmap {

enum class Split { Train, Val, Test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline constexpr std::uint64_t kSplitStride = 1000003;

inline std::uint64_t item_seed(std::uint64_t seed, Split s, std::size_t i) {
  return seed + kSplitStride * static_cast<std::uint64_t>(s) + i;
}

struct Item {
  Sample sample;
  Tensor mask;  // mri and qmri
};

struct QmriTruth {
  T1Map truth;
  std::vector<double> times;
};

struct Dataset {
  ExperimentConfig cfg;
  std::vector<Item> train, val, test;
  std::vector<QmriTruth> qmri_test;  // one per test series

  std::vector<Item>& split(Split s) { return s == Split::Train ? train : s == Split::Val ? val : test; }
  const std::vector<Item>& split(Split s) const { return s == Split::Train ? train : s == Split::Val ? val : test; }
  DType input_dtype() const { return cfg.task == Task::Mri || cfg.task == Task::Qmri ? DType::Complex128 : DType::Real64; }
};

inline std::vector<Sample> samples_of(const std::vector<Item>& items) {
  std::vector<Sample> out;
  for (const auto& it : items) out.push_back(it.sample);
  return out;
}

namespace detail {

inline Tensor initial_image(const LinearOperator& A, const Tensor& z, std::size_t cg) { return cg_normal_init(A, z, cg); }

inline Item denoise_item(const ExperimentConfig& c, std::uint64_t s, const StepParams& sp) {
  const DiskPhantom ph = moving_disks(c.nx, c.ny, c.nt, c.disks, s);
  const Tensor z = add_gaussian(ph.image, c.sigma, s ^ 0x9e3779b97f4a7c15ULL, false);
  return {make_l2_sample(identity_op(c.shape()), z, z, ph.image, sp), {}};
}

inline Item mri_item(const ExperimentConfig& c, std::uint64_t s, const Tensor& coils) {
  const Tensor x = moving_disks(c.nx, c.ny, c.nt, c.disks, s).image.as_complex();
  const Tensor mask = make_cartesian_mask(c.nx, c.ny, c.nt, c.accel, c.center_fraction, s + 1);
  const LinearOperator A = MriEncoder(coils, mask).op();
  const Tensor clean = Tensor::from_raw(A.codomain().shape, DType::Complex128, A.apply(x.raw()));
  const Tensor z = add_gaussian(clean, c.sigma, s ^ 0x9e3779b97f4a7c15ULL, true);
  return {make_l2_sample(A, z, initial_image(A, z, c.cg_init), x), mask};
}

inline Item ct_item(const ExperimentConfig& c, std::uint64_t s, const LinearOperator& A, const RadonOp& R) {
  const Tensor x = ellipse_ct(c.nx, s, c.ellipses);
  const Tensor z = ct_poisson_log(A, x, c.kl, s ^ 0x9e3779b97f4a7c15ULL);
  Tensor x0 = fbp(R, z);
  for (auto& v : x0.raw()) v = std::max(v, 0.0);
  return {make_kl_sample(A, z, x0, x, c.kl), {}};
}

// Region parameters jittered by ±10% per series, mimicking per-class uniform sampling.
inline std::vector<QmriRegion> jittered_regions(std::uint64_t s) {
  std::mt19937_64 rng(s);
  std::uniform_real_distribution<double> u(0.9, 1.1);
  auto regs = default_qmri_regions();
  for (auto& r : regs) {
    r.m0 *= u(rng);
    r.t1 *= u(rng);
  }
  return regs;
}

}  // namespace detail

/// Builds every split. Denoising shares one step-size pair (A = I); MRI and qMRI draw one mask set per
/// item and compute steps per item; CT shares the Radon operator. A qMRI item is one inversion-recovery
/// series treated as 2D + inversion time.
inline Dataset build_dataset(const ExperimentConfig& c) {
  c.validate();
  Dataset d;
  d.cfg = c;
  const std::size_t counts[3] = {c.n_train, c.n_val, c.n_test};
  const Split splits[3] = {Split::Train, Split::Val, Split::Test};
  switch (c.task) {
    case Task::Denoise: {
      const StepParams sp = pdhg_steps(identity_op(c.shape()));
      for (int k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < counts[k]; ++i) d.split(splits[k]).push_back(detail::denoise_item(c, item_seed(c.seed, splits[k], i), sp));
      break;
    }
    case Task::Mri: {
      const Tensor coils = synth_coil_maps(c.nx, c.ny, c.coils);
      for (int k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < counts[k]; ++i) d.split(splits[k]).push_back(detail::mri_item(c, item_seed(c.seed, splits[k], i), coils));
      break;
    }
    case Task::Ct: {
      RadonGeometry g;
      g.n = c.nx;
      g.side = c.side;
      g.n_angles = c.angles;
      g.n_bins = c.bins;
      const RadonOp R(g);
      const LinearOperator A = R.op();
      for (int k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < counts[k]; ++i) d.split(splits[k]).push_back(detail::ct_item(c, item_seed(c.seed, splits[k], i), A, R));
      break;
    }
    case Task::Qmri: {
      if (c.regions + 1 > default_qmri_regions().size()) throw ConfigError("qmri supports at most 3 regions");
      const Tensor labels = qmri_regions(c.nx, c.regions);
      const Tensor coils = synth_coil_maps(c.nx, c.ny, c.coils);
      const std::vector<double> times = c.inversion_times.empty() ? default_inversion_times() : c.inversion_times;
      for (int k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < counts[k]; ++i) {
          const std::uint64_t s = item_seed(c.seed, splits[k], i);
          // noiseless series; noise enters in k-space
          const QmriPhantom ph = synth_qmri_series(labels, detail::jittered_regions(s), times, 0.0, s);
          const Tensor mask = make_cartesian_mask(c.nx, c.ny, c.nt, c.accel, c.center_fraction, s + 1);
          const LinearOperator A = MriEncoder(coils, mask).op();
          const Tensor clean = Tensor::from_raw(A.codomain().shape, DType::Complex128, A.apply(ph.series.images.raw()));
          const Tensor z = add_gaussian(clean, c.sigma, s ^ 0x9e3779b97f4a7c15ULL, true);
          d.split(splits[k]).push_back({make_l2_sample(A, z, detail::initial_image(A, z, c.cg_init), ph.series.images), mask});
          if (splits[k] == Split::Test) d.qmri_test.push_back({ph.truth, times});
        }
      break;
    }
  }
  return d;
}

struct Metrics {
  double psnr = 0.0, nrmse = 0.0, ssim = 0.0;
};

/// Magnitude images for complex data, the image itself otherwise.
inline Tensor display_image(const Tensor& x) { return x.is_complex() ? x.magnitude() : x; }

inline Metrics image_metrics(const Tensor& x, const Tensor& ref) {
  const Tensor a = display_image(x), b = display_image(ref);
  return {psnr(a, b), nrmse(a, b), ssim(a, b)};
}

/// Fits T₁ to each reconstructed qMRI test series; returns the mean relative RMSE.
inline double qmri_t1_error(const Dataset& d, const std::vector<Tensor>& recon) {
  if (d.qmri_test.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t k = 0; k < d.qmri_test.size(); ++k)
    acc += t1_relative_rmse(fit_t1({d.qmri_test[k].times, recon[k]}), d.qmri_test[k].truth);
  return acc / static_cast<double>(d.qmri_test.size());
}

inline SolveReport solve_sample(const Sample& s, const GradField& lambda, std::size_t T, bool record = false) {
  if (s.kl) return pd3o_solve_ct(s.ct_problem(lambda), s.x0, T, s.pd3o, record);
  return pdhg_solve(s.tv_problem(lambda), s.x0, T, s.pdhg, record);
}

/// Mean metrics of S^T with a scalar map over a split (plus the qMRI T₁ error when applicable).
struct SplitScore {
  Metrics mean;
  double t1_rmse = 0.0;
};

inline SplitScore score_split(const Dataset& d, const std::vector<Item>& items, const std::function<GradField(const Sample&)>& map_for,
                              std::size_t T) {
  SplitScore sc;
  std::vector<Tensor> recon;
  for (const auto& it : items) {
    recon.push_back(solve_sample(it.sample, map_for(it.sample), T).x);
    const Metrics m = image_metrics(recon.back(), it.sample.x_true);
    sc.mean.psnr += m.psnr;
    sc.mean.nrmse += m.nrmse;
    sc.mean.ssim += m.ssim;
  }
  const double n = static_cast<double>(std::max<std::size_t>(items.size(), 1));
  sc.mean.psnr /= n;
  sc.mean.nrmse /= n;
  sc.mean.ssim /= n;
  if (d.cfg.task == Task::Qmri && &items == &d.test) sc.t1_rmse = qmri_t1_error(d, recon);
  return sc;
}

// Small denoising instances for the convergence certificates.

inline TvProblem rate_instance(std::uint64_t seed, double lambda = 0.3) {
  const Shape s{4, 4, 1};
  const DiskPhantom ph = moving_disks(8, 8, 1, 1, seed);
  std::vector<double> x(16);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t i = 0; i < 4; ++i) x[y * 4 + i] = ph.image.raw()[(2 * y) * 8 + 2 * i];
  const Tensor z = add_gaussian(Tensor::from_real(s, x), 0.1, seed + 1, false);
  return {identity_op(s), z, GradField::constant(s, 2, lambda)};
}

inline std::vector<std::size_t> rate_schedule() {
  std::vector<std::size_t> T;
  for (std::size_t k = 1; k <= 1024; k *= 2) T.push_back(k);
  return T;
}

inline RateCertificate certify_rate(std::uint64_t seed) {
  const TvProblem pb = rate_instance(seed);
  return rate_certificate(pb, pb.z, rate_schedule());
}

/// Random Λ pairs on an 8-pixel (4x2) denoising problem, entries uniform in [0.05, 1].
inline std::vector<LipschitzProbe> certify_lipschitz(std::uint64_t seed, std::size_t probes) {
  const Shape s{4, 2, 1};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0), lam(0.05, 1.0);
  std::vector<LipschitzProbe> out;
  for (std::size_t k = 0; k < probes; ++k) {
    std::vector<double> z(8);
    for (auto& v : z) v = u(rng);
    std::vector<double> a(16), b(16);
    for (auto& v : a) v = lam(rng);
    for (auto& v : b) v = lam(rng);
    out.push_back(lipschitz_probe(identity_op(s), Tensor::from_real(s, z), GradField::unflatten(a, s, 2, DType::Real64),
                                  GradField::unflatten(b, s, 2, DType::Real64)));
  }
  return out;
}

}  // namespace tvmap
