#pragma once

// Flat key=value experiment files.
//
// Parse rules: lines are trimmed of ASCII whitespace; empty lines and lines starting with '#' or ';'
// are ignored; "[name]" opens a section and later keys become "name.key"; every other line must
// contain '=' with a non-empty key. Values keep inner whitespace, lose surrounding whitespace and
// are never unquoted. A key may appear once. Numbers are parsed with the C locale and must consume
// the whole value.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "prox.hpp"
#include "qmri.hpp"
#include "tensor.hpp"
#include "train.hpp"

namespace tvmap {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

class Config {
 public:
  Config() = default;
  explicit Config(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  static Config parse(const std::string& text) {
    Config c;
    std::istringstream is(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::string s = detail::trim(line);
      if (s.empty() || s[0] == '#' || s[0] == ';') continue;
      auto where = [&] { return "config line " + std::to_string(lineno) + ": "; };
      if (s.front() == '[') {
        if (s.back() != ']') throw ConfigError(where() + "unterminated section header");
        section = detail::trim(s.substr(1, s.size() - 2));
        if (section.empty()) throw ConfigError(where() + "empty section name");
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(where() + "expected key = value");
      const std::string key = detail::trim(s.substr(0, eq));
      if (key.empty()) throw ConfigError(where() + "empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (!c.kv_.emplace(full, detail::trim(s.substr(eq + 1))).second) throw ConfigError(where() + "duplicate key " + full);
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  const std::map<std::string, std::string>& entries() const { return kv_; }
  void set(const std::string& key, std::string value) { kv_[key] = std::move(value); }

  std::string str(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("missing config key " + key);
    used_.insert(key);
    return it->second;
  }
  std::string str(const std::string& key, const std::string& def) const { return has(key) ? str(key) : def; }

  double num(const std::string& key) const {
    const std::string v = str(key);
    double out = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out))
      throw ConfigError("config key " + key + " is not a finite number: '" + v + "'");
    return out;
  }
  double num(const std::string& key, double def) const { return has(key) ? num(key) : def; }

  std::uint64_t uint(const std::string& key) const {
    const std::string v = str(key);
    std::uint64_t out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size() || v.empty())
      throw ConfigError("config key " + key + " is not a non-negative integer: '" + v + "'");
    return out;
  }
  std::uint64_t uint(const std::string& key, std::uint64_t def) const { return has(key) ? uint(key) : def; }

  bool flag(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const std::string v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key " + key + " is not a boolean: '" + v + "'");
  }

  std::vector<double> nums(const std::string& key) const { return parse_list(str(key), key); }

  static std::vector<double> parse_list(const std::string& v, const std::string& what) {
    std::vector<double> out;
    std::istringstream is(v);
    std::string item;
    while (std::getline(is, item, ',')) {
      item = detail::trim(item);
      double d = 0.0;
      const auto r = std::from_chars(item.data(), item.data() + item.size(), d);
      if (item.empty() || r.ec != std::errc() || r.ptr != item.data() + item.size() || !std::isfinite(d))
        throw ConfigError(what + ": bad list entry '" + item + "'");
      out.push_back(d);
    }
    if (out.empty()) throw ConfigError(what + ": empty list");
    return out;
  }

  /// Keys present in the file that no getter asked for.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : kv_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

 private:
  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> used_;
};

enum class Task { Denoise, Mri, Ct, Qmri };

inline Task parse_task(const std::string& s) {
  if (s == "denoise") return Task::Denoise;
  if (s == "mri") return Task::Mri;
  if (s == "ct") return Task::Ct;
  if (s == "qmri") return Task::Qmri;
  throw ConfigError("unknown task '" + s + "' (expected denoise, mri, ct or qmri)");
}

inline std::string to_string(Task t) {
  switch (t) {
    case Task::Denoise: return "denoise";
    case Task::Mri: return "mri";
    case Task::Ct: return "ct";
    case Task::Qmri: return "qmri";
  }
  return "?";
}

struct ExperimentConfig {
  Task task = Task::Denoise;
  std::uint64_t seed = 0;
  std::string out = "out";

  // [phantom]
  std::size_t nx = 32, ny = 32, nt = 8;
  std::size_t disks = 3;
  std::size_t ellipses = 6;
  std::size_t regions = 3;
  std::size_t n_train = 24, n_val = 4, n_test = 8;

  // [noise]
  double sigma = 0.2;

  // [operator]
  double accel = 4.0;
  double center_fraction = 0.08;
  std::size_t coils = 4;
  std::size_t angles = 180;
  std::size_t bins = 95;
  double side = 0.26;  // CT field of view; μ is normalised to this length unit
  KlParams kl{};
  std::vector<double> inversion_times;

  // [solver]
  std::size_t T = 256;
  SharingMode mode = SharingMode::XY_T;
  std::size_t cg_init = 0;  // CG iterations on the normal equations for x₀ (0: x₀ = Aᴴz)

  UNetConfig net{};
  TrainConfig train{};

  Shape shape() const { return {nx, ny, nt}; }

  static ExperimentConfig from(const Config& c) {
    ExperimentConfig e;
    if (!c.has("experiment.seed")) throw ConfigError("experiment.seed is mandatory");
    e.task = parse_task(c.str("experiment.task"));
    e.seed = c.uint("experiment.seed");
    e.out = c.str("experiment.out", e.out);

    if (e.task == Task::Ct) {
      e.nx = e.ny = 64;
      e.nt = 1;
      e.net.rank = 2;
      e.mode = SharingMode::XYT;
      e.sigma = 0.0;
    } else if (e.task == Task::Qmri) {
      e.nt = default_inversion_times().size();
      e.sigma = 0.05;
    }
    auto sz = [&](const std::string& k, std::size_t& v) { v = static_cast<std::size_t>(c.uint(k, v)); };
    sz("phantom.nx", e.nx);
    sz("phantom.ny", e.ny);
    sz("phantom.nt", e.nt);
    sz("phantom.disks", e.disks);
    sz("phantom.ellipses", e.ellipses);
    sz("phantom.regions", e.regions);
    sz("phantom.train", e.n_train);
    sz("phantom.val", e.n_val);
    sz("phantom.test", e.n_test);
    e.sigma = c.num("noise.sigma", e.sigma);
    e.accel = c.num("operator.accel", e.accel);
    e.center_fraction = c.num("operator.center_fraction", e.center_fraction);
    sz("operator.coils", e.coils);
    sz("operator.angles", e.angles);
    sz("operator.bins", e.bins);
    e.side = c.num("operator.side", e.side);
    e.kl.mu = c.num("operator.mu", e.kl.mu);
    e.kl.n0 = c.num("operator.n0", e.kl.n0);
    if (c.has("operator.inversion_times")) e.inversion_times = c.nums("operator.inversion_times");
    sz("solver.T", e.T);
    if (c.has("solver.mode")) {
      try {
        e.mode = parse_sharing_mode(c.str("solver.mode"));
      } catch (const std::invalid_argument& ex) {
        throw ConfigError(ex.what());
      }
    }
    sz("solver.cg_init", e.cg_init);

    sz("net.rank", e.net.rank);
    sz("net.stages", e.net.stages);
    sz("net.convs", e.net.convs);
    sz("net.filters", e.net.filters);
    sz("net.kernel", e.net.kernel);
    e.net.alpha = c.num("net.alpha", e.net.alpha);
    e.net.t = c.num("net.t", e.net.t);

    sz("train.T_train", e.train.T_train);
    sz("train.T_test", e.train.T_test);
    e.train.lr = c.num("train.lr", e.train.lr);
    e.train.weight_decay = c.num("train.weight_decay", e.train.weight_decay);
    sz("train.epochs", e.train.epochs);
    sz("train.batch", e.train.batch);
    sz("train.val_period", e.train.val_period);
    e.train.seed = c.uint("train.seed", e.seed);
    e.train.mode = e.mode;
    e.net.out_channels = channels_for(e.mode, e.net.rank == 3 ? 3 : 2);

    const auto unused = c.unused();
    if (!unused.empty()) throw ConfigError("unknown config key " + unused.front());
    e.validate();
    return e;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (nx < 8 || ny < 8 || nt < 1) fail("phantom must be at least 8x8 with one frame");
    if (task == Task::Ct && (nt != 1 || nx != ny)) fail("ct phantoms are square and single-frame");
    if (task == Task::Qmri && nx != ny) fail("qmri phantom must be square");
    if (task == Task::Qmri && nt != (inversion_times.empty() ? default_inversion_times().size() : inversion_times.size()))
      fail("qmri: phantom.nt must equal the number of inversion times");
    if (!(side > 0.0)) fail("operator.side must be positive");
    if (!(sigma >= 0.0)) fail("noise.sigma must be non-negative");
    if (!(accel >= 1.0)) fail("operator.accel must be at least 1");
    if (!(center_fraction > 0.0 && center_fraction <= 1.0)) fail("operator.center_fraction must lie in (0, 1]");
    if (coils < 1 || angles < 1 || bins < 1) fail("operator sizes must be positive");
    if (!(kl.mu > 0.0) || !(kl.n0 > 0.0)) fail("operator.mu and operator.n0 must be positive");
    if (n_train < 1) fail("phantom.train must be at least 1");
    if (net.rank != (nt > 1 ? 3u : 2u)) fail("net.rank must be 3 for dynamic and 2 for static data");
    if (mode == SharingMode::XY_T && nt == 1) fail("solver.mode xy_t needs a temporal axis");
    try {
      net.validate();
      train.validate();
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(ex.what());
    }
  }

  /// Resolved configuration as flat key=value pairs; parsing them back yields the same config.
  std::map<std::string, std::string> manifest() const {
    std::map<std::string, std::string> m;
    m["experiment.task"] = to_string(task);
    m["experiment.seed"] = std::to_string(seed);
    m["experiment.out"] = out;
    auto u = [](std::size_t v) { return std::to_string(v); };
    m["phantom.nx"] = u(nx);
    m["phantom.ny"] = u(ny);
    m["phantom.nt"] = u(nt);
    m["phantom.disks"] = u(disks);
    m["phantom.ellipses"] = u(ellipses);
    m["phantom.regions"] = u(regions);
    m["phantom.train"] = u(n_train);
    m["phantom.val"] = u(n_val);
    m["phantom.test"] = u(n_test);
    m["noise.sigma"] = format_double(sigma);
    m["operator.accel"] = format_double(accel);
    m["operator.center_fraction"] = format_double(center_fraction);
    m["operator.coils"] = u(coils);
    m["operator.angles"] = u(angles);
    m["operator.bins"] = u(bins);
    m["operator.side"] = format_double(side);
    m["operator.mu"] = format_double(kl.mu);
    m["operator.n0"] = format_double(kl.n0);
    if (!inversion_times.empty()) {
      std::string s;
      for (std::size_t i = 0; i < inversion_times.size(); ++i) s += (i ? "," : "") + format_double(inversion_times[i]);
      m["operator.inversion_times"] = s;
    }
    m["solver.T"] = u(T);
    m["solver.mode"] = to_string(mode);
    m["solver.cg_init"] = u(cg_init);
    for (auto& [k, v] : net_manifest(net))
      if (k != "net.out_channels") m[k] = v;
    m["train.T_train"] = u(train.T_train);
    m["train.T_test"] = u(train.T_test);
    m["train.lr"] = format_double(train.lr);
    m["train.weight_decay"] = format_double(train.weight_decay);
    m["train.epochs"] = u(train.epochs);
    m["train.batch"] = u(train.batch);
    m["train.val_period"] = u(train.val_period);
    m["train.seed"] = std::to_string(train.seed);
    return m;
  }
};

inline void write_keyvalue(const std::filesystem::path& path, const std::map<std::string, std::string>& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  for (const auto& [k, v] : m) os << k << '=' << v << '\n';
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

// Comma-separated, header row, '.' decimal point, LF endings.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : os_(path, std::ios::binary) {
    if (!os_) throw std::runtime_error("cannot write " + path.string());
    row_strings(header);
  }

  void row(const std::vector<double>& values) {
    std::vector<std::string> s;
    for (double v : values) s.push_back(format_double(v));
    row_strings(s);
  }

  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
    os_ << '\n';
    if (!os_) throw std::runtime_error("csv write failed");
  }

 private:
  std::ofstream os_;
};

}  // namespace tvmap
