// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any criterion fails.
// Progress goes to stderr, verdicts to stdout.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "tvmap/tvmap.hpp"

using namespace tvmap;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string name, detail;
  double seconds = 0.0;
};

std::map<int, Verdict> verdicts;

void record(int id, std::string name, bool ok, std::string detail, double seconds) {
  std::fprintf(stderr, "[%d] %s: %s (%.1f s)\n", id, ok ? "pass" : "FAIL", detail.c_str(), seconds);
  verdicts[id] = {ok, std::move(name), std::move(detail), seconds};
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1 -------------------------------------------------------------------------

void adjoint_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  auto worst = [&](const LinearOperator& A) {
    double m = 0.0;
    for (int k = 0; k < 100; ++k) m = std::max(m, adjoint_defect(A, rng));
    return m;
  };
  const Shape s{32, 32, 8};
  const double g_real = worst(gradient_op(s));
  const double g_cplx = worst(gradient_op(s, DType::Complex128));
  const double mri = worst(MriEncoder(synth_coil_maps(32, 32, 4), make_cartesian_mask(32, 32, 8, 4.0, 0.08, 3)).op());
  RadonGeometry g;
  g.n = 64;
  const double radon = worst(RadonOp(g).op());
  const double m = std::max({g_real, g_cplx, mri, radon});
  const double secs = since(t0);
  record(1, "adjoint suite", m <= 1e-10 && secs < 10.0,
         fmt("max defect grad %.2e / grad(complex) %.2e / mri %.2e / radon %.2e, tol 1e-10", g_real, g_cplx, mri, radon), secs);
}

// 2 -------------------------------------------------------------------------

// Minimizes the dual ½‖z − ∇ᵀq‖² over |q| ≤ Λ by exact coordinate steps; x = z − ∇ᵀq.
std::vector<double> rof_by_dual_coordinates(const Tensor& z, const GradField& lambda) {
  const Eigen::MatrixXd D = dense_matrix(gradient_op(z.shape()));
  const auto lam = lambda.flatten();
  Eigen::VectorXd q = Eigen::VectorXd::Zero(D.rows());
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(z.raw().data(), D.cols());
  for (int sweep = 0; sweep < 200000; ++sweep) {
    double change = 0.0;
    for (Eigen::Index j = 0; j < D.rows(); ++j) {
      const double nn = D.row(j).squaredNorm();
      if (nn == 0.0) continue;
      const auto jj = static_cast<std::size_t>(j);
      const double qn = std::clamp(q[j] + D.row(j).dot(x) / nn, -lam[jj], lam[jj]);
      const double dq = qn - q[j];
      if (dq != 0.0) {
        x -= dq * D.row(j).transpose();
        q[j] = qn;
        change = std::max(change, std::abs(dq));
      }
    }
    if (change < 1e-15) break;
  }
  return {x.data(), x.data() + x.size()};
}

void rof_oracle() {
  const auto t0 = Clock::now();
  const Tensor z2 = Tensor::from_real({2, 1, 1}, {0.0, 2.0});
  const TvProblem p2{identity_op(z2.shape()), z2, GradField::constant(z2.shape(), 2, 0.5)};
  const Tensor x2 = pdhg_solve(p2, z2, 5000, pdhg_steps(p2.A)).x;
  const double e2 = std::max(std::abs(x2.raw()[0] - 0.5), std::abs(x2.raw()[1] - 1.5));

  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  double e8 = 0.0;
  int count = 0;
  for (Shape s : {Shape{8, 1, 1}, Shape{4, 2, 1}, Shape{2, 2, 2}})
    for (int k = 0; k < 4; ++k, ++count) {
      std::vector<double> zv(8);
      for (auto& v : zv) v = u(rng);
      const Tensor z = Tensor::from_real(s, zv);
      GradField lam = GradField::zeros(s, s.ndirs());
      for (auto& c : lam.comps)
        for (auto& v : c.raw()) v = 0.05 + 0.3 * u(rng);
      const TvProblem pb{identity_op(s), z, lam};
      e8 = std::max(e8, distance(pdhg_solve(pb, z, 20000, pdhg_steps(pb.A)).x.raw(), rof_by_dual_coordinates(z, lam)));
    }
  const double secs = since(t0);
  record(2, "ROF oracle", e2 <= 1e-6 && e8 <= 1e-5 && secs < 30.0,
         fmt("2-pixel max error %.2e (tol 1e-6); %d 8-pixel instances max distance %.2e (tol 1e-5)", e2, count, e8), secs);
}

// 3, 4 ----------------------------------------------------------------------

void rate() {
  const auto t0 = Clock::now();
  const RateCertificate rc = certify_rate(0);
  double worst = 0.0;
  for (const auto& r : rc.rows) worst = std::max(worst, r.measured / r.bound);
  const double secs = since(t0);
  record(3, "rate certificate", rc.all_hold() && rc.rows.size() == 11 && secs < 60.0,
         fmt("%zu horizons T = 1..1024, max measured/bound %.3g", rc.rows.size(), worst), secs);
}

void lipschitz() {
  const auto t0 = Clock::now();
  const auto probes = certify_lipschitz(0, 100);
  std::size_t ok = 0;
  double worst = 0.0;
  for (const auto& p : probes) {
    ok += p.holds();
    worst = std::max(worst, p.lhs / p.rhs);
  }
  const double secs = since(t0);
  record(4, "Lipschitz probe", ok == 100 && secs < 120.0, fmt("%zu/100 pairs hold, max lhs/rhs %.3g", ok, worst), secs);
}

// 5 -------------------------------------------------------------------------

void gradient_check_suite() {
  const auto t0 = Clock::now();
  UNetConfig c;
  c.stages = 2;
  c.convs = 1;
  c.filters = 2;
  c.t = 0.3;
  const Shape sh{8, 8, 4};
  double worst = 0.0;
  std::size_t coords = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const DiskPhantom ph = moving_disks(8, 8, 4, 1, seed);
    const Tensor z = add_gaussian(ph.image, 0.2, seed + 500, false);
    const Sample s = make_l2_sample(identity_op(sh), z, z, ph.image);
    // the gradients here are O(1e-8), so a 1e-6 step would be dominated by cancellation in f(θ ± ε)
    const ad::FdReport rep = gradient_check(s, init_weights(c, DType::Real64, seed), c, SharingMode::XY_T, 4, 50, seed, 1e-4);
    worst = std::max(worst, rep.max_rel_err);
    coords += rep.coords.size();
  }
  const double secs = since(t0);
  record(5, "gradient check", worst <= 1e-5 && coords >= 500 && secs < 120.0,
         fmt("10 seeds, %zu coordinates, step 1e-4, max relative error %.2e (tol 1e-5)", coords, worst), secs);
}

// 7 and 6 ---------------------------------------------------------------------

const char* kDeskDenoising = R"([experiment]
task = denoise
seed = 1
[phantom]
nx = 32
ny = 32
nt = 8
disks = 3
train = 24
val = 4
test = 8
[noise]
sigma = 0.2
[solver]
T = 256
mode = xy_t
[net]
stages = 2
convs = 2
filters = 8
t = 0.1
[train]
T_train = 64
lr = 1e-3
epochs = 30
)";

double mean_test_psnr(const Dataset& d, const std::function<Tensor(const Sample&)>& solve) {
  double acc = 0.0;
  for (const auto& it : d.test) acc += psnr(solve(it.sample), it.sample.x_true);
  return acc / static_cast<double>(d.test.size());
}

void learned_map_and_consistency() {
  const ExperimentConfig cfg = ExperimentConfig::from(Config::parse(kDeskDenoising));
  const Dataset d = build_dataset(cfg);
  const Shape sh = cfg.shape();
  const std::size_t T = cfg.T;

  auto t0 = Clock::now();
  std::vector<GridProblem> gp;
  for (const auto& it : d.train) {
    const Sample* s = &it.sample;
    gp.push_back({[s, T](const GradField& l) { return pdhg_solve(s->tv_problem(l), s->x0, T, s->pdhg).x; }, s->x_true});
  }
  std::vector<double> g1, g2;
  for (int k = 0; k < 14; ++k) g1.push_back(0.01 * std::pow(1.35, k));
  for (int k = 0; k < 9; ++k) g2.push_back(0.01 * std::pow(1.5, k));
  const GridResult r1 = grid_search_scalar(gp, SharingMode::XYT, g1);
  std::fprintf(stderr, "  xyt grid: lambda %.4g (%.0f s)\n", r1.best.lambda_xy, since(t0));
  const GridResult r2 = grid_search_scalar(gp, SharingMode::XY_T, g2);
  std::fprintf(stderr, "  xy,t grid: lambda %.4g, %.4g (%.0f s)\n", r2.best.lambda_xy, r2.best.lambda_t, since(t0));

  auto scalar = [&](double a, double b) {
    const GradField l = scalar_map(sh, a, b);
    return mean_test_psnr(d, [&](const Sample& s) { return pdhg_solve(s.tv_problem(l), s.x0, T, s.pdhg).x; });
  };
  const double p_xyt = scalar(r1.best.lambda_xy, r1.best.lambda_xy);
  const double p_xy_t = scalar(r2.best.lambda_xy, r2.best.lambda_t);

  t0 = Clock::now();
  const std::vector<Sample> tr = samples_of(d.train), va = samples_of(d.val);
  const TrainResult res = train(tr, va, cfg.net, cfg.train, init_weights(cfg.net, DType::Real64, cfg.train.seed), [&](const HistoryRow& h) {
    std::fprintf(stderr, "  epoch %zu train %.5g val %.5g (%.0f s)\n", h.epoch, h.train_loss, h.val_loss, since(t0));
  });
  const double train_secs = since(t0);
  const double p_learned = mean_test_psnr(d, [&](const Sample& s) { return reconstruct(s, res.best, cfg.net, cfg.mode, T); });
  record(7, "learned-map ordering", p_learned >= p_xyt + 0.3 && p_learned >= p_xy_t && train_secs <= 1800.0,
         fmt("test PSNR learned %.3f dB, xyt %.3f dB (lambda %.4g), xy,t %.3f dB (lambda %.4g, %.4g); training %.0f s", p_learned, p_xyt,
             r1.best.lambda_xy, p_xy_t, r2.best.lambda_xy, r2.best.lambda_t, train_secs),
         train_secs);

  t0 = Clock::now();
  std::vector<const Sample*> batch;
  for (const auto& s : tr) batch.push_back(&s);
  const double ref = loss_value(batch, res.best, cfg.net, cfg.mode, 10000, 0.0);
  std::string detail = fmt("L^10000 %.6e; |L^T - L^10000|:", ref);
  bool mono = true;
  double prev = INFINITY;
  for (std::size_t Tk : {8, 16, 32, 64, 128}) {
    const double gap = std::abs(loss_value(batch, res.best, cfg.net, cfg.mode, Tk, 0.0) - ref);
    detail += fmt(" T=%zu %.3e", Tk, gap);
    mono = mono && gap <= prev + 1e-6;
    prev = gap;
  }
  const double secs = since(t0);
  record(6, "Gamma-consistency", mono && secs < 600.0, detail, secs);
}

// 8 -------------------------------------------------------------------------

void ct() {
  const auto t0 = Clock::now();
  ExperimentConfig cfg;
  cfg.task = Task::Ct;
  RadonGeometry g;
  g.n = 64;
  g.side = cfg.side;
  const RadonOp R(g);
  const LinearOperator A = R.op();
  const Tensor x = ellipse_ct(64, 7);
  const Tensor z = ct_poisson_log(A, x, cfg.kl, 3);
  Tensor x0 = fbp(R, z);
  for (auto& v : x0.raw()) v = std::max(v, 0.0);
  auto problem = [&](double lam) { return CtProblem{A, z, GradField::constant(x.shape(), 2, lam), cfg.kl}; };

  const double lam0 = 1e-3;
  const CtProblem pb = problem(lam0);
  const Tensor x1024 = pd3o_solve_ct(pb, x0, 1024).x;
  const Tensor xref = pd3o_solve_ct(pb, x0, 20000).x;
  const double f1024 = pb.objective(x1024), fref = pb.objective(xref);
  const double rel = std::abs(f1024 - fref) / std::abs(fref);
  double xmin = INFINITY;
  for (double v : x1024.raw()) xmin = std::min(xmin, v);

  const double p_unreg = psnr(pd3o_solve_ct(problem(1e-12), x0, 1024).x, x);
  double p_best = -INFINITY, l_best = 0.0;
  for (double lam : {1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0}) {
    const double p = psnr(pd3o_solve_ct(problem(lam), x0, 1024).x, x);
    if (p > p_best) p_best = p, l_best = lam;
  }
  const double secs = since(t0);
  record(8, "CT solver", rel <= 1e-4 && xmin >= 0.0 && p_best >= p_unreg + 1.0 && secs < 600.0,
         fmt("KL objective rel. gap T=1024 vs 20000: %.2e (tol 1e-4); min pixel %.3g; PSNR grid %.2f dB (lambda %g) vs unregularized %.2f dB",
             rel, xmin, p_best, l_best, p_unreg),
         secs);
}

// 9 -------------------------------------------------------------------------

void qmri() {
  const auto t0 = Clock::now();
  const Tensor labels = qmri_regions(32, 3);
  const auto& times = default_inversion_times();
  const QmriPhantom clean = synth_qmri_series(labels, default_qmri_regions(), times, 0.0, 1);
  const double e0 = t1_relative_rmse(fit_t1(clean.series), clean.truth);
  const QmriPhantom noisy = synth_qmri_series(labels, default_qmri_regions(), times, 0.02, 2);
  const double e1 = t1_relative_rmse(fit_t1(noisy.series), noisy.truth);
  const double secs = since(t0);
  record(9, "qMRI fit", e0 <= 5e-3 && e1 <= 5e-2 && secs < 120.0,
         fmt("T1 relative RMSE noiseless %.2e (tol 5e-3), sigma 0.02 %.2e (tol 5e-2)", e0, e1), secs);
}

// 10 ------------------------------------------------------------------------

void reductions() {
  const auto t0 = Clock::now();
  UNetConfig c;
  c.stages = 2;
  c.convs = 1;
  c.filters = 2;
  c.t = 0.3;
  const Shape sh{8, 8, 4};
  const DiskPhantom ph = moving_disks(8, 8, 4, 1, 4);
  const Tensor z = add_gaussian(ph.image, 0.2, 5, false);
  const Sample s = make_l2_sample(identity_op(sh), z, z, ph.image);
  const Tensor a = reconstruct(s, zero_weights(c, DType::Real64), c, SharingMode::XY_T, 40);
  const Tensor b = pdhg_solve(s.tv_problem(GradField::constant(sh, 3, 0.3 * std::log(2.0))), s.x0, 40, s.pdhg).x;
  const bool same = a == b;

  // PD3O with a vanishing smooth term against hand-rolled PDHG with the nonnegativity prox
  const Shape s4{2, 2, 1};
  const Tensor x0 = Tensor::from_real(s4, {0.3, -0.2, 1.1, 0.6});
  const std::vector<double> lam{0.25, 0.1, 0.3, 0.2, 0.15, 0.25, 0.05, 0.4};
  const SmoothGradient zero = [](std::span<const double>, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
  const Pd3oSteps sp{0.4, 0.6};
  Pd3oState st = pd3o_start(x0, zero);
  std::vector<double> x = x0.storage(), xbar = x, y(8, 0.0), gq(8), dy(4);
  bool match = true;
  for (int k = 0; k < 50; ++k) {
    pd3o_step(st, s4, lam, zero, sp);
    grad_flat(xbar, s4, 1, gq);
    for (std::size_t i = 0; i < 8; ++i) y[i] = std::clamp(y[i] + sp.sigma * gq[i], -lam[i], lam[i]);
    grad_adjoint_flat(y, s4, 1, dy);
    for (std::size_t i = 0; i < 4; ++i) {
      const double xn = std::max(x[i] - sp.tau * dy[i], 0.0);
      xbar[i] = 2.0 * xn - x[i];
      x[i] = xn;
    }
    match = match && st.p == x && st.xbar == xbar && st.q == y;
  }
  record(10, "reduction identities", same && match,
         fmt("zero-weight net vs scalar PDHG at 0.3 ln 2: %s; PD3O(grad h = 0) vs projected PDHG over 50 steps: %s",
             same ? "bit-identical" : "differ", match ? "identical states" : "differ"),
         since(t0));
}

// 11 ------------------------------------------------------------------------

const char* kPipeline = R"([experiment]
task = denoise
seed = 5
[phantom]
nx = 16
ny = 16
nt = 4
disks = 2
train = 4
val = 2
test = 3
[solver]
T = 32
[net]
stages = 2
convs = 1
filters = 4
[train]
epochs = 3
T_train = 8
lr = 1e-3
)";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TVMAP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void determinism() {
  const auto t0 = Clock::now();
  std::string csv[2];
  bool ran = true;
  for (int k = 0; k < 2; ++k) {
    const fs::path d = fs::absolute("acceptance_pipeline_" + std::to_string(k));
    fs::remove_all(d);
    fs::create_directories(d);
    std::ofstream(d / "desk.cfg") << kPipeline;
    const std::string cfg = " --config " + (d / "desk.cfg").string() + " --out " + (d / "run").string();
    ran = ran && run_cli("gen" + cfg) == 0 && run_cli("train" + cfg + " --quiet") == 0 &&
          run_cli("eval" + cfg + " --checkpoint " + (d / "run" / "checkpoint").string()) == 0;
    csv[k] = slurp(d / "run" / "metrics.csv");
  }
  const bool same = ran && !csv[0].empty() && csv[0] == csv[1];
  record(11, "determinism", same, fmt("two gen/train/eval pipelines: %s (%zu bytes)", !ran ? "a command failed" : same ? "metrics.csv byte-identical" : "metrics.csv differs", csv[0].size()),
         since(t0));
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<void()>>> steps = {
      {1, adjoint_suite}, {2, rof_oracle},  {3, rate},    {4, lipschitz},   {5, gradient_check_suite},
      {9, qmri},          {10, reductions}, {11, determinism}, {8, ct},     {7, learned_map_and_consistency}};
  for (const auto& [id, fn] : steps) {
    try {
      fn();
    } catch (const std::exception& e) {
      record(id, "criterion " + std::to_string(id), false, std::string("exception: ") + e.what(), 0.0);
      if (id == 7) record(6, "Gamma-consistency", false, "no trained parameters", 0.0);
    }
  }
  int failed = 0;
  for (const auto& [id, v] : verdicts) {
    std::printf("%s  %2d  %-22s %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", id, v.name.c_str(), v.detail.c_str(), v.seconds);
    failed += !v.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(verdicts.size()) - failed, verdicts.size());
  return failed == 0 ? 0 : 1;
}
