#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "tvmap/paramnet.hpp"
#include "tvmap/train.hpp"

using namespace tvmap;

namespace {

UNetConfig tiny(std::size_t rank = 3, std::size_t out = 2) {
  UNetConfig c;
  c.rank = rank;
  c.stages = 2;
  c.convs = 1;
  c.filters = 2;
  c.out_channels = out;
  return c;
}

// A noisy square moving one pixel per frame; real-valued denoising.
Sample denoise_sample(Shape s, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> xt(s.size()), z(s.size());
  for (std::size_t t = 0; t < s.nt; ++t)
    for (std::size_t y = 0; y < s.ny; ++y)
      for (std::size_t x = 0; x < s.nx; ++x) {
        const std::size_t i = s.index(x, y, t);
        xt[i] = (x >= 1 + t % 3 && x < 5 + t % 3 && y >= 2 && y < 6) ? 1.0 : 0.2;
        z[i] = xt[i] + sigma * nd(rng);
      }
  const Tensor zt = Tensor::from_real(s, z);
  return make_l2_sample(identity_op(s), zt, zt, Tensor::from_real(s, xt));
}

}  // namespace

TEST(Net, ZeroWeightsGiveScaledLog2) {
  UNetConfig c = tiny();
  c.t = 0.1;
  const Sample s = denoise_sample({8, 8, 4}, 0.1, 1);
  const GradField lam = parameter_map(s.x0, zero_weights(c, DType::Real64), c, SharingMode::XY_T);
  ASSERT_EQ(lam.ndirs(), 3u);
  for (const auto& comp : lam.comps)
    for (double v : comp.raw()) EXPECT_DOUBLE_EQ(v, 0.1 * std::log(2.0));
  EXPECT_NEAR(0.1 * std::log(2.0), 0.0693, 5e-5);
}

TEST(Net, OutputPositiveForRandomWeights) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  const UNetConfig c = tiny(2, 1);
  for (int k = 0; k < 100; ++k) {
    NetWeights W = init_weights(c, DType::Complex128, k);
    auto th = W.flat();
    for (auto& v : th) v *= 5.0;
    W.set_flat(th);
    std::vector<std::complex<double>> x(64);
    for (auto& e : x) e = {3.0 * nd(rng), 3.0 * nd(rng)};
    const GradField lam = parameter_map(Tensor::from_complex({8, 8, 1}, x), W, c, SharingMode::XYT);
    EXPECT_TRUE(lam.strictly_positive());
  }
}

TEST(Net, InitializationScheme) {
  const UNetConfig c = tiny();
  const NetWeights a = init_weights(c, DType::Real64, 7), b = init_weights(c, DType::Real64, 7);
  EXPECT_EQ(a.flat(), b.flat());
  EXPECT_NE(a.flat(), init_weights(c, DType::Real64, 8).flat());
  for (const auto& l : a.layers) {
    const double bound = std::sqrt(1.0 / static_cast<double>(l.shape.cin * l.shape.kd * l.shape.kh * l.shape.kw));
    for (double v : l.w) EXPECT_LE(std::abs(v), bound);
  }
  for (std::size_t i = 0; i + 1 < a.layers.size(); ++i)
    for (double v : a.layers[i].b) EXPECT_EQ(v, 0.0);
  for (double v : a.layers.back().b) EXPECT_EQ(v, -1.0);
  // two stages of one conv each, one decoder conv, one head; complex input doubles the first fan-in
  EXPECT_EQ(a.layers.size(), 4u);
  EXPECT_EQ(init_weights(c, DType::Complex128, 1).layers[0].shape.cin, 2u);
}

TEST(Net, RejectsIndivisibleShapes) {
  const UNetConfig c = tiny();
  const Tensor x = Tensor::zeros({7, 8, 4});
  EXPECT_THROW(parameter_map(x, zero_weights(c, DType::Real64), c, SharingMode::XY_T), ShapeError);
  EXPECT_THROW(parameter_map(Tensor::zeros({8, 8, 1}), zero_weights(c, DType::Real64), c, SharingMode::XYT), ShapeError);
}

TEST(Reconstruct, ZeroWeightsReduceToScalarPdhg) {
  UNetConfig c = tiny();
  c.t = 0.3;
  const Sample s = denoise_sample({8, 8, 4}, 0.2, 3);
  const Tensor a = reconstruct(s, zero_weights(c, DType::Real64), c, SharingMode::XY_T, 40);
  const double lam = 0.3 * std::log(2.0);
  const Tensor b = pdhg_solve(s.tv_problem(GradField::constant(s.x0.shape(), 3, lam)), s.x0, 40, s.pdhg).x;
  EXPECT_EQ(a, b);
}

TEST(Reconstruct, ZeroIterationsAndDeterminism) {
  const UNetConfig c = tiny();
  const Sample s = denoise_sample({8, 8, 4}, 0.2, 4);
  const NetWeights W = init_weights(c, DType::Real64, 1);
  EXPECT_EQ(reconstruct(s, W, c, SharingMode::XY_T, 0), s.x0);
  EXPECT_EQ(reconstruct(s, W, c, SharingMode::XY_T, 30), reconstruct(s, W, c, SharingMode::XY_T, 30));
}

TEST(Loss, TrivialCases) {
  const UNetConfig c = tiny();
  const NetWeights W = init_weights(c, DType::Real64, 2);
  const Shape sh{8, 8, 4};
  const Tensor flat = Tensor::constant(sh, 0.7);
  const Sample perfect = make_l2_sample(identity_op(sh), flat, flat, flat);
  EXPECT_EQ(loss_value({&perfect}, W, c, SharingMode::XY_T, 10, 0.0), 0.0);
  const Sample off = make_l2_sample(identity_op(sh), flat, Tensor::constant(sh, 0.5), flat);
  EXPECT_NEAR(loss_value({&off}, W, c, SharingMode::XY_T, 0, 0.0), 0.04, 1e-15);
  // taped and untaped losses agree exactly
  const Sample s = denoise_sample(sh, 0.2, 5);
  EXPECT_EQ(loss_grad({&s}, W, c, SharingMode::XY_T, 8, 0.0).loss, loss_value({&s}, W, c, SharingMode::XY_T, 8, 0.0));
}

TEST(Loss, DecayTermAndGradient) {
  const UNetConfig c = tiny();
  const NetWeights W = init_weights(c, DType::Real64, 3);
  const Sample s = denoise_sample({8, 8, 4}, 0.2, 6);
  const LossGrad a = loss_grad({&s}, W, c, SharingMode::XY_T, 4, 0.0);
  const LossGrad b = loss_grad({&s}, W, c, SharingMode::XY_T, 4, 0.01);
  const auto th = W.flat();
  double sq = 0.0;
  for (double v : th) sq += v * v;
  EXPECT_DOUBLE_EQ(b.loss, a.loss + 0.01 * sq);
  for (std::size_t i = 0; i < th.size(); ++i) EXPECT_DOUBLE_EQ(b.grad[i], a.grad[i] + 0.02 * th[i]);
}

TEST(Loss, EndToEndGradientMatchesFiniteDifferences) {
  UNetConfig c = tiny();
  c.t = 0.3;
  const Sample s = denoise_sample({8, 8, 4}, 0.2, 7);
  const NetWeights W = init_weights(c, DType::Real64, 11);
  const ad::FdReport rep = gradient_check(s, W, c, SharingMode::XY_T, 4, 50, 1);
  EXPECT_LE(rep.max_rel_err, 1e-5);
}

TEST(Adam, ZeroGradientIsNoOp) {
  TrainConfig cfg;
  cfg.lr = 0.1;
  std::vector<double> th{1.0, -2.0};
  AdamState st;
  for (int k = 0; k < 5; ++k) adam_step(th, std::vector<double>{0.0, 0.0}, st, cfg);
  EXPECT_EQ(th, (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, ConstantGradientMovesAtLearningRate) {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  std::vector<double> th{0.0, 0.0};
  AdamState st;
  for (int k = 0; k < 2000; ++k) adam_step(th, std::vector<double>{3.0, -0.5}, st, cfg);
  std::vector<double> prev = th;
  adam_step(th, std::vector<double>{3.0, -0.5}, st, cfg);
  EXPECT_NEAR(th[0] - prev[0], -1e-3, 1e-8);
  EXPECT_NEAR(th[1] - prev[1], 1e-3, 1e-8);
}

TEST(Adam, DecayOnlyShrinks) {
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  std::vector<double> th{1.0, -2.0, 0.5};
  AdamState st;
  double last = 1e300;
  for (int k = 0; k < 10; ++k) {
    adam_step(th, std::vector<double>(3, 0.0), st, cfg);
    const double n = std::hypot(th[0], th[1], th[2]);
    EXPECT_LT(n, last);
    last = n;
  }
}

TEST(Train, ZeroLearningRateKeepsWeights) {
  const UNetConfig c = tiny();
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.epochs = 2;
  cfg.T_train = 4;
  const std::vector<Sample> tr{denoise_sample({8, 8, 4}, 0.2, 8), denoise_sample({8, 8, 4}, 0.2, 9)};
  const std::vector<Sample> va{denoise_sample({8, 8, 4}, 0.2, 10)};
  const NetWeights W = init_weights(c, DType::Real64, 1);
  const TrainResult r = train(tr, va, c, cfg, W);
  EXPECT_EQ(r.best.flat(), W.flat());
  ASSERT_EQ(r.history.size(), 3u);
  for (const auto& h : r.history) EXPECT_EQ(h.val_loss, r.history[0].val_loss);
  EXPECT_THROW(train({}, va, c, cfg, W), std::invalid_argument);
}

TEST(Train, ImprovesAndIsDeterministic) {
  UNetConfig c = tiny();
  c.t = 0.3;
  TrainConfig cfg;
  cfg.lr = 5e-3;
  cfg.epochs = 4;
  cfg.T_train = 16;
  cfg.seed = 3;
  std::vector<Sample> tr;
  for (std::uint64_t k = 0; k < 4; ++k) tr.push_back(denoise_sample({8, 8, 4}, 0.3, 20 + k));
  const std::vector<Sample> va{denoise_sample({8, 8, 4}, 0.3, 30)};
  const NetWeights W = init_weights(c, DType::Real64, 2);
  const TrainResult a = train(tr, va, c, cfg, W);
  const TrainResult b = train(tr, va, c, cfg, W);
  EXPECT_LT(a.best_val, a.history[0].val_loss);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].val_loss, b.history[i].val_loss);
    if (i > 0) {
      EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
    }
  }
}

TEST(Checkpoint, RoundTrip) {
  const UNetConfig c = tiny(2, 1);
  const NetWeights W = init_weights(c, DType::Complex128, 5);
  const auto dir = std::filesystem::temp_directory_path() / "tvmap_ckpt_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, W, c, DType::Complex128, {{"train.val_loss", "0.5"}});
  const Checkpoint ck = load_checkpoint(dir);
  EXPECT_EQ(ck.weights.flat(), W.flat());
  EXPECT_EQ(ck.input, DType::Complex128);
  EXPECT_EQ(ck.net.rank, 2u);
  EXPECT_EQ(ck.net.t, c.t);
  EXPECT_EQ(ck.manifest.at("train.val_loss"), "0.5");
  std::filesystem::remove_all(dir);
}
