#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "tvmap/tvmap.hpp"

namespace fs = std::filesystem;
using namespace tvmap;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Common {
  std::string config;
  std::string out;
};

ExperimentConfig load_experiment(const Common& c) {
  if (c.config.empty()) throw ConfigError("--config is required");
  ExperimentConfig e = ExperimentConfig::from(Config::load(c.config));
  if (!c.out.empty()) e.out = c.out;
  return e;
}

void write_manifest(const fs::path& dir, const std::string& command, std::map<std::string, std::string> m,
                    const std::map<std::string, std::string>& args) {
  m["command"] = command;
  for (const auto& [k, v] : args) m["args." + k] = v;
  write_keyvalue(dir / (command + "_manifest.txt"), m);
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

std::string item_name(const Split s, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03zu", to_string(s).c_str(), i);
  return buf;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + s + "'");
}

int cmd_gen(const Common& c) {
  const ExperimentConfig e = load_experiment(c);
  const Dataset d = build_dataset(e);
  const fs::path dir = fs::path(e.out) / "data";
  fs::create_directories(dir);
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    const auto& items = d.split(s);
    for (std::size_t i = 0; i < items.size(); ++i) {
      const std::string base = item_name(s, i);
      write_tensor(dir / (base + "_x_true.tnsr"), items[i].sample.x_true);
      write_tensor(dir / (base + "_x0.tnsr"), items[i].sample.x0);
      write_tensor(dir / (base + "_z.tnsr"), items[i].sample.z);
      if (!items[i].mask.storage().empty()) write_tensor(dir / (base + "_mask.tnsr"), items[i].mask);
    }
  }
  for (std::size_t k = 0; k < d.qmri_test.size(); ++k) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "test_s%03zu", k);
    write_tensor(dir / (std::string(buf) + "_t1.tnsr"), d.qmri_test[k].truth.t1);
    write_tensor(dir / (std::string(buf) + "_m0.tnsr"), d.qmri_test[k].truth.m0);
  }
  write_manifest(e.out, "gen", e.manifest(), {});
  std::cout << "wrote " << d.train.size() + d.val.size() + d.test.size() << " items to " << dir.string() << "\n";
  return 0;
}

struct SolveArgs {
  std::string split = "test";
  std::size_t index = 0;
  double lambda = 0.0, lambda_t = 0.0;
  std::string map;
  std::size_t T = 0;
};

int cmd_solve(const Common& c, const SolveArgs& a) {
  const ExperimentConfig e = load_experiment(c);
  const Split split = parse_split(a.split);
  const Dataset d = build_dataset(e);
  const auto& items = d.split(split);
  if (a.index >= items.size()) throw ConfigError("--index out of range for split " + a.split);
  const Sample& s = items[a.index].sample;
  const Shape& sh = s.x0.shape();
  GradField lam;
  if (!a.map.empty()) {
    const Tensor m = read_tensor(a.map);
    if (m.is_complex() || m.size() != sh.size() * sh.ndirs()) throw ConfigError("--map must be a real tensor with ndirs * voxels entries");
    lam = GradField::unflatten(m.raw(), sh, sh.ndirs(), DType::Real64);
  } else {
    if (!(a.lambda > 0.0)) throw ConfigError("--lambda must be positive (or pass --map)");
    lam = scalar_map(sh, a.lambda, a.lambda_t > 0.0 ? a.lambda_t : a.lambda);
  }
  const std::size_t T = a.T ? a.T : e.T;
  const SolveReport r = solve_sample(s, lam, T, true);
  const fs::path dir = fs::path(e.out) / "solve";
  fs::create_directories(dir);
  write_tensor(dir / "x.tnsr", r.x);
  CsvWriter csv(dir / "diagnostics.csv", {"iteration", "objective", "step_norm", "data_residual"});
  for (const auto& g : r.diagnostics) csv.row({static_cast<double>(g.iter), g.objective, g.step_norm, g.data_residual});
  const Metrics m = image_metrics(r.x, s.x_true);
  auto man = e.manifest();
  man["result.psnr"] = format_double(m.psnr);
  man["result.nrmse"] = format_double(m.nrmse);
  man["result.ssim"] = format_double(m.ssim);
  write_manifest(e.out, "solve", man,
                 {{"split", a.split}, {"index", std::to_string(a.index)}, {"lambda", format_double(a.lambda)},
                  {"lambda_t", format_double(a.lambda_t)}, {"map", a.map}, {"T", std::to_string(T)}});
  std::cout << "psnr " << format_double(m.psnr) << " nrmse " << format_double(m.nrmse) << " ssim " << format_double(m.ssim) << "\n";
  return 0;
}

struct GridArgs {
  std::string mode = "xyt";
  std::string grid, grid_t;
  std::string split = "train";
  std::size_t limit = 0;
  std::size_t T = 0;
};

int cmd_gridsearch(const Common& c, const GridArgs& a) {
  const ExperimentConfig e = load_experiment(c);
  SharingMode mode;
  try {
    mode = parse_sharing_mode(a.mode);
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  const std::vector<double> gxy = Config::parse_list(a.grid, "--grid");
  const std::vector<double> gt = a.grid_t.empty() ? std::vector<double>{} : Config::parse_list(a.grid_t, "--grid-t");
  const Dataset d = build_dataset(e);
  const auto& items = d.split(parse_split(a.split));
  const std::size_t n = a.limit ? std::min(a.limit, items.size()) : items.size();
  const std::size_t T = a.T ? a.T : e.T;
  std::vector<GridProblem> gp;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample* s = &items[i].sample;
    gp.push_back({[s, T](const GradField& l) { return display_image(solve_sample(*s, l, T).x); }, display_image(s->x_true)});
  }
  const GridResult r = grid_search_scalar(gp, mode, gxy, gt);
  fs::create_directories(e.out);
  CsvWriter csv(fs::path(e.out) / "gridsearch.csv", {"lambda_xy", "lambda_t", "mean_psnr"});
  for (const auto& p : r.table) csv.row({p.lambda_xy, p.lambda_t, p.mean_psnr});
  auto man = e.manifest();
  man["result.lambda_xy"] = format_double(r.best.lambda_xy);
  man["result.lambda_t"] = format_double(r.best.lambda_t);
  man["result.mean_psnr"] = format_double(r.best.mean_psnr);
  write_manifest(e.out, "gridsearch", man,
                 {{"mode", to_string(mode)}, {"grid", join(gxy)}, {"grid_t", gt.empty() ? "" : join(gt)}, {"split", a.split},
                  {"limit", std::to_string(n)}, {"T", std::to_string(T)}});
  std::cout << "best lambda_xy " << format_double(r.best.lambda_xy) << " lambda_t " << format_double(r.best.lambda_t)
            << " mean_psnr " << format_double(r.best.mean_psnr) << "\n";
  return 0;
}

int cmd_train(const Common& c, bool quiet) {
  const ExperimentConfig e = load_experiment(c);
  const Dataset d = build_dataset(e);
  if (d.val.empty()) throw ConfigError("training needs a validation split (phantom.val >= 1)");
  const NetWeights W0 = init_weights(e.net, d.input_dtype(), e.seed);
  const TrainResult r = train(samples_of(d.train), samples_of(d.val), e.net, e.train, W0, [&](const HistoryRow& h) {
    if (!quiet) std::cerr << "epoch " << h.epoch << " train " << format_double(h.train_loss) << " val " << format_double(h.val_loss) << "\n";
  });
  if (!r.best.finite()) throw NumericalError("training produced non-finite weights", r.best_epoch);
  fs::create_directories(e.out);
  CsvWriter csv(fs::path(e.out) / "history.csv", {"epoch", "train_loss", "val_loss"});
  for (const auto& h : r.history) csv.row({static_cast<double>(h.epoch), h.train_loss, h.val_loss});
  auto extra = e.manifest();
  extra["train.best_epoch"] = std::to_string(r.best_epoch);
  extra["train.best_val"] = format_double(r.best_val);
  extra.erase("net.rank");
  for (const auto& [k, v] : net_manifest(e.net)) extra.erase(k);
  save_checkpoint(fs::path(e.out) / "checkpoint", r.best, e.net, d.input_dtype(), extra);
  write_manifest(e.out, "train", e.manifest(), {});
  std::cout << "best epoch " << r.best_epoch << " val " << format_double(r.best_val) << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string t_test;
  std::string split = "test";
  double lambda = 0.0, lambda_t = 0.0;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  const ExperimentConfig e = load_experiment(c);
  if (a.checkpoint.empty() == !(a.lambda > 0.0)) throw ConfigError("eval needs exactly one of --checkpoint or --lambda");
  std::vector<std::size_t> Ts;
  if (a.t_test.empty()) {
    Ts.push_back(e.train.T_test);
  } else {
    for (double v : Config::parse_list(a.t_test, "--t-test")) {
      if (!(v >= 0.0) || v != std::floor(v)) throw ConfigError("--t-test entries must be non-negative integers");
      Ts.push_back(static_cast<std::size_t>(v));
    }
  }
  const Dataset d = build_dataset(e);
  const auto& items = d.split(parse_split(a.split));
  std::function<GradField(const Sample&)> map_for;
  Checkpoint ck;
  if (!a.checkpoint.empty()) {
    ck = load_checkpoint(a.checkpoint);
    if (ck.input != d.input_dtype()) throw ConfigError("checkpoint input type does not match the task");
    map_for = [&](const Sample& s) { return parameter_map(s.x0, ck.weights, ck.net, e.mode); };
  } else {
    map_for = [&](const Sample& s) { return scalar_map(s.x0.shape(), a.lambda, a.lambda_t > 0.0 ? a.lambda_t : a.lambda); };
  }
  // maps do not depend on T; compute them once
  std::vector<GradField> maps;
  for (const auto& it : items) maps.push_back(map_for(it.sample));
  std::size_t k = 0;
  auto cached = [&](const Sample&) { return maps[k++ % maps.size()]; };

  fs::create_directories(e.out);
  std::vector<std::string> head{"T_test", "psnr", "nrmse", "ssim"};
  if (e.task == Task::Qmri) head.push_back("t1_rel_rmse");
  CsvWriter csv(fs::path(e.out) / "metrics.csv", head);
  for (std::size_t T : Ts) {
    k = 0;
    const SplitScore sc = score_split(d, items, cached, T);
    std::vector<double> row{static_cast<double>(T), sc.mean.psnr, sc.mean.nrmse, sc.mean.ssim};
    if (e.task == Task::Qmri) row.push_back(sc.t1_rmse);
    csv.row(row);
    std::cout << "T " << T << " psnr " << format_double(sc.mean.psnr) << "\n";
  }
  std::string tl;
  for (std::size_t i = 0; i < Ts.size(); ++i) tl += (i ? "," : "") + std::to_string(Ts[i]);
  write_manifest(e.out, "eval", e.manifest(),
                 {{"checkpoint", a.checkpoint}, {"t_test", tl}, {"split", a.split}, {"lambda", format_double(a.lambda)},
                  {"lambda_t", format_double(a.lambda_t)}});
  return 0;
}

struct CertArgs {
  bool rate = false, lipschitz = false;
  std::uint64_t seed = 0;
  std::size_t probes = 100;
  std::string out = "out";
};

int cmd_certify(const CertArgs& a) {
  if (a.rate == a.lipschitz) throw ConfigError("certify needs exactly one of --rate or --lipschitz");
  fs::create_directories(a.out);
  bool ok = true;
  std::map<std::string, std::string> man{{"seed", std::to_string(a.seed)}};
  if (a.rate) {
    const RateCertificate rc = certify_rate(a.seed);
    CsvWriter csv(fs::path(a.out) / "certify_rate.csv", {"T", "measured", "bound"});
    for (const auto& r : rc.rows) csv.row({static_cast<double>(r.T), r.measured, r.bound});
    man["rate.C_zA"] = format_double(rc.C_zA);
    man["rate.c"] = format_double(rc.c);
    man["rate.C"] = format_double(rc.C);
    man["rate.v0_dist_M"] = format_double(rc.v0_dist_M);
    ok = rc.all_hold();
    std::cout << "rate certificate " << (ok ? "holds" : "VIOLATED") << " for T = 1 .. 1024\n";
  } else {
    const auto probes = certify_lipschitz(a.seed, a.probes);
    CsvWriter csv(fs::path(a.out) / "certify_lipschitz.csv", {"probe", "lhs", "rhs"});
    for (std::size_t i = 0; i < probes.size(); ++i) {
      csv.row({static_cast<double>(i), probes[i].lhs, probes[i].rhs});
      ok = ok && probes[i].holds();
    }
    man["lipschitz.probes"] = std::to_string(a.probes);
    std::cout << "lipschitz bound " << (ok ? "holds" : "VIOLATED") << " on " << probes.size() << " probes\n";
  }
  man["result.holds"] = ok ? "true" : "false";
  write_manifest(a.out, "certify", man, {{"kind", a.rate ? "rate" : "lipschitz"}});
  if (!ok) {
    std::cerr << "tvmap: certificate violated; see the CSV in " << a.out << "\n";
    return kExitNumerical;
  }
  return 0;
}

int cmd_fit_t1(const std::string& series, const std::string& times, const std::string& out) {
  InversionSeries s;
  s.images = read_tensor(series);
  s.times = times.empty() ? default_inversion_times() : Config::parse_list(times, "--times");
  try {
    s.validate();
  } catch (const std::exception& ex) {
    throw ConfigError(ex.what());
  }
  const T1Map m = fit_t1(s);
  fs::create_directories(out);
  write_tensor(fs::path(out) / "t1.tnsr", m.t1);
  write_tensor(fs::path(out) / "m0.tnsr", m.m0);
  std::size_t deg = 0;
  for (bool b : m.degenerate) deg += b;
  write_manifest(out, "fit_t1", {{"result.degenerate_pixels", std::to_string(deg)}}, {{"series", series}, {"times", join(s.times)}});
  std::cout << "fitted " << m.degenerate.size() << " pixels (" << deg << " degenerate)\n";
  return 0;
}

int cmd_preview(const std::string& tensor, const std::string& out) {
  const Tensor x = read_tensor(tensor);
  fs::create_directories(out);
  const std::string stem = fs::path(tensor).stem().string();
  for (std::size_t t = 0; t < x.shape().nt; ++t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_frame%03zu.pgm", t);
    write_pgm(fs::path(out) / (stem + buf), x, t);
  }
  write_manifest(out, "preview", {}, {{"tensor", tensor}});
  std::cout << "wrote " << x.shape().nt << " frames\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tvmap: weighted spatio-temporal TV reconstruction with learned parameter-maps"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "experiment config file")->required();
    sub->add_option("--out", common.out, "output directory (overrides experiment.out)");
  };

  auto* gen = app.add_subcommand("gen", "generate phantoms and corrupted data");
  add_common(gen);

  SolveArgs sa;
  auto* solve = app.add_subcommand("solve", "reconstruct one item with a fixed map");
  add_common(solve);
  solve->add_option("--split", sa.split, "train, val or test");
  solve->add_option("--index", sa.index, "item index within the split");
  solve->add_option("--lambda", sa.lambda, "scalar lambda (spatial, and temporal unless --lambda-t)");
  solve->add_option("--lambda-t", sa.lambda_t, "scalar temporal lambda");
  solve->add_option("--map", sa.map, "TNSR1 parameter-map, direction-major");
  solve->add_option("--T", sa.T, "iterations (default solver.T)");

  GridArgs ga;
  auto* grid = app.add_subcommand("gridsearch", "scalar lambda grid search by mean PSNR");
  add_common(grid);
  grid->add_option("--mode", ga.mode, "xyt or xy_t");
  grid->add_option("--grid", ga.grid, "comma-separated lambda values")->required();
  grid->add_option("--grid-t", ga.grid_t, "temporal grid for xy_t (default: --grid)");
  grid->add_option("--split", ga.split, "split to search on");
  grid->add_option("--limit", ga.limit, "use only the first N items");
  grid->add_option("--T", ga.T, "iterations (default solver.T)");

  bool quiet = false;
  auto* tr = app.add_subcommand("train", "train the parameter-map network");
  add_common(tr);
  tr->add_flag("--quiet", quiet, "no per-epoch log");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "test metrics per number of iterations");
  add_common(ev);
  ev->add_option("--checkpoint", ea.checkpoint, "checkpoint directory");
  ev->add_option("--t-test", ea.t_test, "comma-separated iteration counts");
  ev->add_option("--split", ea.split, "split to evaluate");
  ev->add_option("--lambda", ea.lambda, "evaluate a scalar lambda instead of a checkpoint");
  ev->add_option("--lambda-t", ea.lambda_t, "scalar temporal lambda");

  CertArgs ca;
  auto* cert = app.add_subcommand("certify", "convergence certificates on small denoising problems");
  cert->add_flag("--rate", ca.rate, "sub-linear rate bound");
  cert->add_flag("--lipschitz", ca.lipschitz, "Lipschitz continuity of the solution map");
  cert->add_option("--seed", ca.seed, "instance seed");
  cert->add_option("--probes", ca.probes, "number of random map pairs");
  cert->add_option("--out", ca.out, "output directory");

  std::string series, times, fit_out = "out";
  auto* fit = app.add_subcommand("fit-t1", "per-pixel T1 regression");
  fit->add_option("--series", series, "complex TNSR1 series (nt = number of inversion times)")->required();
  fit->add_option("--times", times, "comma-separated inversion times in seconds");
  fit->add_option("--out", fit_out, "output directory");

  std::string tensor, prev_out = "out";
  auto* prev = app.add_subcommand("preview", "8-bit PGM per frame");
  prev->add_option("tensor", tensor, "TNSR1 file")->required();
  prev->add_option("--out", prev_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen) return cmd_gen(common);
    if (*solve) return cmd_solve(common, sa);
    if (*grid) return cmd_gridsearch(common, ga);
    if (*tr) return cmd_train(common, quiet);
    if (*ev) return cmd_eval(common, ea);
    if (*cert) return cmd_certify(ca);
    if (*fit) return cmd_fit_t1(series, times, fit_out);
    if (*prev) return cmd_preview(tensor, prev_out);
  } catch (const NumericalError& e) {
    std::cerr << "tvmap: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const StepSizeError& e) {
    std::cerr << "tvmap: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const OpNormError& e) {
    std::cerr << "tvmap: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ConfigError& e) {
    std::cerr << "tvmap: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "tvmap: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "tvmap: bad input file: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "tvmap: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
