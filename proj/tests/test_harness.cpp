#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "tvmap/tvmap.hpp"

using namespace tvmap;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TVMAP_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("tvmap_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const char* kTinyConfig = R"([experiment]
task = denoise
seed = 11
[phantom]
nx = 8
ny = 8
nt = 4
train = 2
val = 1
test = 2
[solver]
T = 12
[net]
stages = 2
convs = 1
filters = 2
[train]
epochs = 2
T_train = 4
lr = 1e-3
)";

}  // namespace

TEST(Phantoms, DisksStayInsideFrame) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const DiskPhantom ph = moving_disks(32, 24, 8, 4, seed);
    for (const Disk& d : ph.disks)
      for (double a : {0.0, 0.25, 0.5, 1.0}) {
        const double cx = d.x0 + a * (d.x1 - d.x0), cy = d.y0 + a * (d.y1 - d.y0);
        EXPECT_GE(cx - d.radius, 0.0);
        EXPECT_LE(cx + d.radius, 31.0);
        EXPECT_GE(cy - d.radius, 0.0);
        EXPECT_LE(cy + d.radius, 23.0);
      }
  }
}

TEST(Phantoms, EllipseValuesInUnitRange) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = ellipse_ct(48, seed);
    double mx = 0.0;
    for (double v : x.raw()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      mx = std::max(mx, v);
    }
    EXPECT_GT(mx, 0.0);
  }
}

TEST(Phantoms, SeedReproducible) {
  EXPECT_EQ(moving_disks(16, 16, 4, 3, 9).image, moving_disks(16, 16, 4, 3, 9).image);
  EXPECT_NE(moving_disks(16, 16, 4, 3, 9).image, moving_disks(16, 16, 4, 3, 10).image);
  EXPECT_EQ(ellipse_ct(32, 4), ellipse_ct(32, 4));
  const Tensor lab = qmri_regions(20, 3);
  double mx = 0.0;
  for (double v : lab.raw()) mx = std::max(mx, v);
  EXPECT_EQ(mx, 3.0);
  EXPECT_EQ(lab.raw()[0], 0.0);
}

TEST(Noise, ZeroSigmaIsIdentity) {
  const Tensor x = moving_disks(8, 8, 2, 2, 1).image;
  EXPECT_EQ(add_gaussian(x, 0.0, 3, false), x);
  EXPECT_EQ(add_gaussian(x, 0.0, 3, true), x.as_complex());
  EXPECT_THROW(add_gaussian(x.as_complex(), 0.1, 3, false), std::invalid_argument);
}

TEST(Noise, EmpiricalStandardDeviation) {
  const Shape s{1000, 1000, 1};
  const double sigma = 0.3;
  const Tensor r = add_gaussian(Tensor::zeros(s), sigma, 21, false);
  double ss = 0.0;
  for (double v : r.raw()) ss += v * v;
  EXPECT_NEAR(std::sqrt(ss / 1e6), sigma, 0.01 * sigma);

  const Tensor c = add_gaussian(Tensor::zeros(s, DType::Complex128), sigma, 22, true);
  double re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    re += c.real(i) * c.real(i);
    im += c.imag(i) * c.imag(i);
  }
  EXPECT_NEAR(std::sqrt((re + im) / 1e6), sigma, 0.01 * sigma);
  EXPECT_NEAR(re / im, 1.0, 0.01);
  EXPECT_EQ(add_gaussian(Tensor::zeros(s), sigma, 21, false), r);
}

TEST(CtNoise, HighDoseApproachesLineIntegrals) {
  RadonGeometry g;
  g.n = 32;
  g.side = 0.26;
  g.n_angles = 30;
  g.n_bins = 47;
  const RadonOp R(g);
  const LinearOperator A = R.op();
  const Tensor x = ellipse_ct(32, 3);
  const auto ax = A.apply(x.raw());
  const Tensor z = ct_poisson_log(A, x, {81.35858, 1e9}, 5);
  EXPECT_LE(distance(z.raw(), ax) / norm2(ax), 1e-3);
  EXPECT_EQ(ct_poisson_log(A, x, {81.35858, 1e9}, 5), z);
}

TEST(CtNoise, ZeroCountsAreClamped) {
  RadonGeometry g;
  g.n = 16;
  g.n_angles = 8;
  g.n_bins = 23;
  const RadonOp R(g);
  const Tensor x = Tensor::constant({16, 16, 1}, 1.0);
  std::size_t zeros = 0;
  const KlParams kl{5000.0, 100.0};
  const Tensor z = ct_poisson_log(R.op(), x, kl, 1, &zeros);
  EXPECT_GT(zeros, 0u);
  const double clamped = -std::log(kZeroCountClamp / kl.n0) / kl.mu;
  std::size_t hits = 0;
  for (double v : z.raw()) hits += v == clamped;
  EXPECT_EQ(hits, zeros);
}

TEST(Config, ParsesSectionsAndComments) {
  const Config c = Config::parse("# top\n top = 1\n[a]\n x = 2.5 \n; note\n[ b ]\ny=hello world\n\nz = 1,2 ,3\n");
  EXPECT_EQ(c.str("top"), "1");
  EXPECT_EQ(c.num("a.x"), 2.5);
  EXPECT_EQ(c.str("b.y"), "hello world");
  EXPECT_EQ(c.nums("b.z"), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(c.uint("top"), 1u);
  EXPECT_EQ(c.num("missing", 7.0), 7.0);
}

TEST(Config, RejectsMalformedInput) {
  EXPECT_THROW(Config::parse("a = 1\na = 2\n"), ConfigError);
  EXPECT_THROW(Config::parse("[x\n"), ConfigError);
  EXPECT_THROW(Config::parse("novalue\n"), ConfigError);
  EXPECT_THROW(Config::parse(" = 3\n"), ConfigError);
  const Config c = Config::parse("n = 1.5x\nm = -2\nf = maybe\n");
  EXPECT_THROW(c.num("n"), ConfigError);
  EXPECT_THROW(c.uint("m"), ConfigError);
  EXPECT_THROW(c.flag("f", false), ConfigError);
  EXPECT_THROW(c.str("absent"), ConfigError);
}

TEST(Config, ExperimentDefaultsValidationAndRoundTrip) {
  EXPECT_THROW(ExperimentConfig::from(Config::parse("[experiment]\ntask = denoise\n")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from(Config::parse("[experiment]\ntask = blur\nseed = 1\n")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from(Config::parse("[experiment]\ntask = denoise\nseed = 1\n[net]\nfliters = 3\n")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from(Config::parse("[experiment]\ntask = ct\nseed = 1\n[solver]\nmode = xy_t\n")), ConfigError);

  const ExperimentConfig ct = ExperimentConfig::from(Config::parse("[experiment]\ntask = ct\nseed = 4\n"));
  EXPECT_EQ(ct.nx, 64u);
  EXPECT_EQ(ct.angles, 180u);
  EXPECT_EQ(ct.bins, 95u);
  EXPECT_EQ(ct.kl.mu, 81.35858);
  EXPECT_EQ(ct.kl.n0, 4096.0);

  const ExperimentConfig e = ExperimentConfig::from(Config::parse(kTinyConfig));
  EXPECT_EQ(e.shape(), (Shape{8, 8, 4}));
  EXPECT_EQ(e.train.seed, 11u);
  const ExperimentConfig back = ExperimentConfig::from(Config(e.manifest()));
  EXPECT_EQ(back.manifest(), e.manifest());
}

TEST(Dataset, ItemsDependOnlyOnTheirSeed) {
  ExperimentConfig e = ExperimentConfig::from(Config::parse(kTinyConfig));
  const Dataset a = build_dataset(e);
  e.n_train = 5;
  const Dataset b = build_dataset(e);
  ASSERT_EQ(a.train.size(), 2u);
  EXPECT_EQ(a.train[1].sample.z, b.train[1].sample.z);
  EXPECT_EQ(a.test[0].sample.z, b.test[0].sample.z);
  EXPECT_NE(a.train[0].sample.z, a.train[1].sample.z);
}

TEST(Csv, FormatIsPlain) {
  const fs::path d = scratch("csv");
  {
    CsvWriter w(d / "m.csv", {"a", "b"});
    w.row({1.0, 0.1});
  }
  EXPECT_EQ(slurp(d / "m.csv"), "a,b\n1,0.10000000000000001\n");
}

TEST(Pgm, MinMaxNormalisedFrames) {
  const Tensor x = Tensor::from_real({2, 1, 2}, {1.0, 3.0, 5.0, 5.0});
  const auto f0 = encode_pgm(x, 0);
  const std::string head = "P5\n2 1\n255\n";
  ASSERT_EQ(f0.size(), head.size() + 2);
  EXPECT_EQ(std::string(f0.begin(), f0.begin() + static_cast<long>(head.size())), head);
  EXPECT_EQ(static_cast<unsigned char>(f0[head.size()]), 0);
  EXPECT_EQ(static_cast<unsigned char>(f0[head.size() + 1]), 255);
  const auto f1 = encode_pgm(x, 1);
  EXPECT_EQ(static_cast<unsigned char>(f1[head.size()]), 0);
  EXPECT_THROW(encode_pgm(x, 2), ShapeError);
}

TEST(Cli, ExitCodes) {
  const fs::path d = scratch("codes");
  std::ofstream(d / "noseed.cfg") << "[experiment]\ntask = denoise\n";
  std::ofstream(d / "boom.cfg") << std::string(kTinyConfig).replace(std::string(kTinyConfig).find("lr = 1e-3"), 9, "lr = 1e308");
  const std::string out = " --out " + (d / "run").string();
  EXPECT_EQ(run_cli("gen --config " + (d / "noseed.cfg").string() + out), 2);
  EXPECT_EQ(run_cli("gen --config " + (d / "missing.cfg").string() + out), 2);
  EXPECT_EQ(run_cli("solve --bogus-flag"), 2);
  EXPECT_EQ(run_cli("train --config " + (d / "boom.cfg").string() + out + " --quiet"), 3);
  EXPECT_EQ(run_cli("certify --rate --out " + (d / "cert").string()), 0);
  EXPECT_TRUE(fs::exists(d / "cert" / "certify_manifest.txt"));
  EXPECT_EQ(run_cli("certify --out " + (d / "cert").string()), 2);
}

TEST(Cli, CommandsWriteOutputsAndManifests) {
  const fs::path d = scratch("commands");
  std::ofstream(d / "tiny.cfg") << kTinyConfig;
  const std::string cfg = " --config " + (d / "tiny.cfg").string() + " --out " + (d / "run").string();
  ASSERT_EQ(run_cli("gen" + cfg), 0);
  EXPECT_TRUE(fs::exists(d / "run" / "data" / "train_000_z.tnsr"));
  ASSERT_EQ(run_cli("solve" + cfg + " --lambda 0.1 --T 8"), 0);
  const Tensor x = read_tensor(d / "run" / "solve" / "x.tnsr");
  EXPECT_EQ(x.shape(), (Shape{8, 8, 4}));
  EXPECT_EQ(run_cli("gridsearch" + cfg + " --grid 0.05,0.2 --T 8"), 0);
  EXPECT_EQ(run_cli("preview " + (d / "run" / "solve" / "x.tnsr").string() + " --out " + (d / "prev").string()), 0);
  EXPECT_TRUE(fs::exists(d / "prev" / "x_frame003.pgm"));

  // the manifest alone reproduces the run
  const auto man = read_manifest(d / "run" / "gen_manifest.txt");
  std::map<std::string, std::string> cfg_only;
  for (const auto& [k, v] : man)
    if (k != "command" && k.rfind("args.", 0) != 0) cfg_only[k] = v;
  cfg_only["experiment.out"] = (d / "rerun").string();
  write_keyvalue(d / "from_manifest.cfg", cfg_only);
  ASSERT_EQ(run_cli("gen --config " + (d / "from_manifest.cfg").string()), 0);
  EXPECT_EQ(slurp(d / "run" / "data" / "test_001_z.tnsr"), slurp(d / "rerun" / "data" / "test_001_z.tnsr"));
}

TEST(Cli, FitT1RoundTrip) {
  const fs::path d = scratch("fit");
  const auto ph = synth_qmri_series(qmri_regions(12), default_qmri_regions(), default_inversion_times(), 0.0, 1);
  write_tensor(d / "series.tnsr", ph.series.images);
  ASSERT_EQ(run_cli("fit-t1 --series " + (d / "series.tnsr").string() + " --out " + d.string()), 0);
  const Tensor t1 = read_tensor(d / "t1.tnsr");
  T1Map fit{t1, read_tensor(d / "m0.tnsr"), {}};
  EXPECT_LE(t1_relative_rmse(fit, ph.truth), 5e-3);
  EXPECT_EQ(run_cli("fit-t1 --series " + (d / "series.tnsr").string() + " --times 1,2 --out " + d.string()), 2);
}

TEST(Cli, PipelineIsDeterministic) {
  std::string csv[2];
  for (int k = 0; k < 2; ++k) {
    const fs::path d = scratch("pipeline" + std::to_string(k));
    std::ofstream(d / "tiny.cfg") << kTinyConfig;
    const std::string cfg = " --config " + (d / "tiny.cfg").string() + " --out " + (d / "run").string();
    ASSERT_EQ(run_cli("gen" + cfg), 0);
    ASSERT_EQ(run_cli("train" + cfg + " --quiet"), 0);
    ASSERT_EQ(run_cli("eval" + cfg + " --checkpoint " + (d / "run" / "checkpoint").string() + " --t-test 4,12"), 0);
    csv[k] = slurp(d / "run" / "metrics.csv");
  }
  EXPECT_FALSE(csv[0].empty());
  EXPECT_EQ(csv[0], csv[1]);
}
