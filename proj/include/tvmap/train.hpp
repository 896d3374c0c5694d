#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "paramnet.hpp"
#include "tnsr_io.hpp"

namespace tvmap {

struct TrainConfig {
  std::size_t T_train = 64;
  std::size_t T_test = 256;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t epochs = 10;
  std::size_t batch = 1;
  std::size_t val_period = 1;  // epochs between validations
  std::uint64_t seed = 0;
  SharingMode mode = SharingMode::XY_T;

  void validate() const {
    if (T_train < 1) throw std::invalid_argument("T_train must be at least 1");
    if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("Adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be non-negative");
    if (batch < 1 || val_period < 1) throw std::invalid_argument("batch size and validation period must be positive");
  }
};

struct AdamState {
  std::vector<double> m, v;
  std::size_t step = 0;
};

/// Adam with bias correction; weight decay is decoupled (AdamW) and applied before the moment step.
inline void adam_step(std::vector<double>& theta, std::span<const double> grad, AdamState& st, const TrainConfig& cfg) {
  if (grad.size() != theta.size()) throw ShapeError("adam: gradient length mismatch");
  if (st.m.empty()) {
    st.m.assign(theta.size(), 0.0);
    st.v.assign(theta.size(), 0.0);
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grad[i];
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    theta[i] -= cfg.lr * cfg.weight_decay * theta[i];
    theta[i] -= cfg.lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + cfg.eps);
  }
}

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean data MSE over the epoch's batches
  double val_loss = std::nan("");
};

struct TrainResult {
  NetWeights best;
  double best_val = 0.0;
  std::size_t best_epoch = 0;
  std::vector<HistoryRow> history;
};

using TrainLog = std::function<void(const HistoryRow&)>;

/// Epochs of seeded shuffled mini-batches; returns the weights with the lowest validation loss
/// (epoch 0 is the initialization).
inline TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set, const UNetConfig& ucfg,
                         const TrainConfig& cfg, NetWeights W, const TrainLog& log = {}) {
  ucfg.validate();
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw std::invalid_argument("training and validation sets must be non-empty");
  std::vector<const Sample*> val;
  for (const auto& s : val_set) val.push_back(&s);
  auto validate = [&](const NetWeights& w) { return loss_value(val, w, ucfg, cfg.mode, cfg.T_train, cfg.weight_decay); };

  TrainResult res;
  res.best = W;
  res.best_val = validate(W);
  res.history.push_back({0, std::nan(""), res.best_val});
  if (log) log(res.history.back());

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  AdamState adam;
  std::vector<double> theta = W.flat();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double acc = 0.0;
    std::size_t nb = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      std::vector<const Sample*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch); ++k) batch.push_back(&train_set[order[k]]);
      const LossGrad lg = loss_grad(batch, W, ucfg, cfg.mode, cfg.T_train, cfg.weight_decay);
      adam_step(theta, lg.data_grad, adam, cfg);
      W.set_flat(theta);
      if (!W.finite()) throw NumericalError("training produced non-finite weights", epoch);
      acc += lg.data;
      ++nb;
    }
    HistoryRow row{epoch, acc / static_cast<double>(nb), std::nan("")};
    if (epoch % cfg.val_period == 0 || epoch == cfg.epochs) {
      row.val_loss = validate(W);
      if (row.val_loss < res.best_val) {
        res.best_val = row.val_loss;
        res.best = W;
        res.best_epoch = epoch;
      }
    }
    res.history.push_back(row);
    if (log) log(row);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints: one TNSR1 file per kernel and bias plus a key=value manifest.

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::map<std::string, std::string> net_manifest(const UNetConfig& u) {
  return {{"net.rank", std::to_string(u.rank)},         {"net.stages", std::to_string(u.stages)},
          {"net.convs", std::to_string(u.convs)},       {"net.filters", std::to_string(u.filters)},
          {"net.kernel", std::to_string(u.kernel)},     {"net.out_channels", std::to_string(u.out_channels)},
          {"net.alpha", format_double(u.alpha)},        {"net.t", format_double(u.t)}};
}

inline void save_checkpoint(const std::filesystem::path& dir, const NetWeights& W, const UNetConfig& u, DType input,
                            std::map<std::string, std::string> extra) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < W.layers.size(); ++i) {
    const auto& l = W.layers[i];
    auto u32 = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
    RawArray w{DType::Real64, {u32(l.shape.cout), u32(l.shape.cin), u32(l.shape.kd), u32(l.shape.kh), u32(l.shape.kw)}, l.w};
    RawArray b{DType::Real64, {u32(l.shape.cout)}, l.b};
    write_raw(dir / ("layer" + std::to_string(i) + "_w.tnsr"), w);
    write_raw(dir / ("layer" + std::to_string(i) + "_b.tnsr"), b);
  }
  auto m = net_manifest(u);
  m["net.input"] = input == DType::Complex128 ? "complex" : "real";
  m["net.layers"] = std::to_string(W.layers.size());
  for (auto& [k, v] : extra) m[k] = v;
  std::ofstream os(dir / "manifest.txt", std::ios::binary);
  for (const auto& [k, v] : m) os << k << '=' << v << '\n';
  if (!os) throw std::runtime_error("cannot write checkpoint manifest in " + dir.string());
}

inline std::map<std::string, std::string> read_manifest(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open manifest " + file.string());
  std::map<std::string, std::string> m;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

struct Checkpoint {
  UNetConfig net;
  DType input = DType::Real64;
  NetWeights weights;
  std::map<std::string, std::string> manifest;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Checkpoint c;
  c.manifest = read_manifest(dir / "manifest.txt");
  auto get = [&](const std::string& k) {
    const auto it = c.manifest.find(k);
    if (it == c.manifest.end()) throw FormatError("checkpoint manifest lacks " + k);
    return it->second;
  };
  c.net.rank = std::stoul(get("net.rank"));
  c.net.stages = std::stoul(get("net.stages"));
  c.net.convs = std::stoul(get("net.convs"));
  c.net.filters = std::stoul(get("net.filters"));
  c.net.kernel = std::stoul(get("net.kernel"));
  c.net.out_channels = std::stoul(get("net.out_channels"));
  c.net.alpha = std::stod(get("net.alpha"));
  c.net.t = std::stod(get("net.t"));
  c.input = get("net.input") == "complex" ? DType::Complex128 : DType::Real64;
  c.weights = zero_weights(c.net, c.input);
  if (std::stoul(get("net.layers")) != c.weights.layers.size()) throw FormatError("checkpoint layer count mismatch");
  for (std::size_t i = 0; i < c.weights.layers.size(); ++i) {
    auto& l = c.weights.layers[i];
    const RawArray w = read_raw(dir / ("layer" + std::to_string(i) + "_w.tnsr"));
    const RawArray b = read_raw(dir / ("layer" + std::to_string(i) + "_b.tnsr"));
    if (w.data.size() != l.w.size() || b.data.size() != l.b.size()) throw FormatError("checkpoint tensor size mismatch");
    l.w = w.data;
    l.b = b.data;
  }
  return c;
}

}  // namespace tvmap
