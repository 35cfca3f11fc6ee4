// SPDX-License-Identifier: Apache-2.0
//
// Subcommand implementations behind tools/kunet. Each returns a process exit
// code and writes machine-parseable key=value lines to `out`.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "kunet/checkpoint.hpp"
#include "kunet/config.hpp"
#include "kunet/data.hpp"
#include "kunet/grad_check.hpp"
#include "kunet/train.hpp"
#include "kunet/unet.hpp"

namespace kunet {

enum ExitCode : int { exit_ok = 0, exit_failed = 1, exit_config = 2, exit_data = 3, exit_training = 4 };

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write '" + path.string() + "'");
  os << text;
}

inline std::string baseline_line(const EvalMetrics& m) {
  return "baseline repeat_last mse=" + format_real(m.mse) + " mae=" + format_real(m.mae);
}

template <typename T>
int run_training(const RunConfig& cfg, const SeriesTable& table, const WindowSets& windows, std::ostream& out) {
  KUNet<T> model(resolve_model(cfg), cfg.train.seed);
  namespace fs = std::filesystem;
  const fs::path dir(cfg.output_dir);
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& e) { out << epoch_line(e) << '\n'; };
  const auto report = train(model, cfg.train, table, windows, hooks);
  const auto& plan = model.config().plan;
  const auto base = evaluate_repeat_last<T>(table, windows.test, plan.seq_len, plan.output_len(), cfg.train.batch_size);

  std::string summary = summary_line(report) + "\n" + baseline_line(base) + "\n";
  write_file(dir / "metrics.txt", metrics_text(report) + baseline_line(base) + "\n");
  write_file(dir / "summary.txt", summary);
  std::ofstream ck(dir / "checkpoint.txt");
  save_checkpoint(ck, model, cfg);
  out << summary;
  return exit_ok;
}

}  // namespace detail

/// Loads data, builds the three window sets and reports what was read.
inline WindowSets prepare_windows(const RunConfig& cfg, const SeriesTable& table, std::ostream* warn) {
  const auto m = resolve_model(cfg);
  const auto splits = split(table, cfg.data.split);
  return make_window_sets(splits, m.plan.seq_len, m.plan.output_len(), cfg.train.stride, warn);
}

/// Trains, evaluates and writes config.txt, ingest.txt, metrics.txt,
/// summary.txt and checkpoint.txt into cfg.output_dir.
inline int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    validate(cfg, &err);
    IngestReport ingest;
    const auto table = load_data(cfg.data, &ingest);
    const auto windows = prepare_windows(cfg, table, &err);
    std::filesystem::create_directories(cfg.output_dir);
    const std::filesystem::path dir(cfg.output_dir);
    detail::write_file(dir / "config.txt", config_text(cfg));
    detail::write_file(dir / "ingest.txt", ingest.to_text());
    if (cfg.precision == Precision::f64) return detail::run_training<double>(cfg, table, windows, out);
    return detail::run_training<float>(cfg, table, windows, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return exit_data;
  } catch (const TrainingError& e) {
    err << "training error: " << e.what() << '\n';
    return exit_training;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_failed;
  }
}

/// Scores a checkpoint on the test split described by `cfg` (data and split
/// keys only; the model comes from the checkpoint).
inline int cmd_eval(const std::string& checkpoint, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    std::ifstream in(checkpoint);
    if (!in) throw DataError("cannot open checkpoint '" + checkpoint + "'");
    const auto header = read_checkpoint_header(in);
    in.seekg(0);
    RunConfig run = cfg;
    run.model = header.config.model;
    run.horizon_len = header.config.horizon_len;
    run.train.norm = header.config.train.norm;
    const auto table = load_data(run.data);
    const auto windows = prepare_windows(run, table, &err);
    auto score = [&]<typename T>(KUNet<T> model) {
      const auto& p = model.config().plan;
      const auto m = evaluate(model, table, windows.test, run.train.norm, run.train.batch_size);
      const auto b = evaluate_repeat_last<T>(table, windows.test, p.seq_len, p.output_len(), run.train.batch_size);
      out << horizon_lines(m) << "eval mse=" << format_real(m.mse) << " mae=" << format_real(m.mae)
          << " windows=" << m.windows << '\n'
          << detail::baseline_line(b) << '\n';
    };
    if (header.precision == "f64") {
      score(load_checkpoint<double>(in));
    } else {
      score(load_checkpoint<float>(in));
    }
    return exit_ok;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return exit_data;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_failed;
  }
}

struct GradCheckRequest {
  Variant variant = Variant::linear;
  std::size_t seq_len = 8;
  LengthSchedule lookback{2, {2, 2}};
  std::size_t hidden = 4;
  std::size_t batch = 2;
  std::vector<std::uint64_t> seeds{0};
  double tolerance = 1e-4;
};

/// Whole-model gradient check at 64-bit: loss is the MSE between the forecast
/// of a random batch and a random target.
inline GradCheckReport model_grad_check(const ModelConfig& cfg, std::size_t batch, std::uint64_t seed,
                                        double tolerance = 1e-4) {
  KUNet<double> model(cfg, seed);
  Rng rng = Rng(seed).fork(99);
  const auto& p = cfg.plan;
  std::vector<double> xs(batch * p.seq_len * p.features), ys(batch * p.output_len() * p.features);
  for (auto& v : xs) v = rng.normal();
  for (auto& v : ys) v = rng.normal();
  const Tensor<double> x({batch, p.seq_len, p.features}, xs);
  const Tensor<double> y({batch, p.output_len(), p.features}, ys);
  std::vector<Tensor<double>> params;
  for (const auto& np : model.parameters()) params.push_back(np.tensor);
  GradCheckOptions opt;
  opt.tolerance = tolerance;
  return grad_check([&] { return mse_loss(model.forward(x), y); }, params, opt);
}

inline int cmd_gradcheck(const GradCheckRequest& req, std::ostream& out, std::ostream& err) {
  try {
    ModelConfig cfg;
    cfg.plan.seq_len = req.seq_len;
    cfg.plan.lookback = req.lookback;
    cfg.plan.hidden = req.hidden;
    cfg.variant = req.variant;
    validate(cfg);
    double worst = 0.0;
    for (auto seed : req.seeds) {
      KUNet<double> probe(cfg, seed);
      const auto r = model_grad_check(cfg, req.batch, seed, req.tolerance);
      worst = std::max(worst, r.max_relative_error);
      out << "gradcheck variant=" << to_string(req.variant) << " seed=" << seed
          << " max_relative_error=" << format_real(r.max_relative_error)
          << " worst=" << probe.parameters()[r.worst_tensor].name << "[" << r.worst_index << "]"
          << " coordinates=" << r.coordinates << '\n';
    }
    const bool ok = worst <= req.tolerance;
    out << "result worst_relative_error=" << format_real(worst) << " tolerance=" << format_real(req.tolerance)
        << " status=" << (ok ? "pass" : "fail") << '\n';
    return ok ? exit_ok : exit_failed;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_config;
  }
}

/// Parameter count, per-layer breakdown and attention cost of a model config.
inline void print_report(const ModelConfig& cfg, std::size_t registry_count, std::ostream& out) {
  const auto pc = count_parameters(cfg);
  out << "model variant=" << to_string(cfg.variant) << " L=" << cfg.plan.seq_len
      << " lookback=" << schedule_str(cfg.plan.lookback) << " horizon=" << schedule_str(cfg.plan.output())
      << " features=" << cfg.plan.features << " hidden=" << cfg.plan.hidden << '\n';
  for (const auto& l : pc.layers) out << "layer name=" << l.name << " kind=" << to_string(l.kind) << " parameters=" << l.count << '\n';
  out << "parameters total=" << pc.total << " registry=" << registry_count << '\n';
  out << "attention_cost per_sample=" << attention_cost(cfg, 1) << '\n';
}

inline int cmd_report(const std::string& checkpoint, std::ostream& out, std::ostream& err) {
  try {
    std::ifstream in(checkpoint);
    if (!in) throw DataError("cannot open checkpoint '" + checkpoint + "'");
    const auto header = read_checkpoint_header(in);
    in.seekg(0);
    if (header.precision == "f64") {
      const auto m = load_checkpoint<double>(in);
      print_report(m.config(), m.parameter_count(), out);
    } else {
      const auto m = load_checkpoint<float>(in);
      print_report(m.config(), m.parameter_count(), out);
    }
    return exit_ok;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_data;
  }
}

/// Plans L = unit * multiple^(depth-1) for depth in [min_depth, max_depth],
/// i.e. every level has the same segment length when unit == multiple.
struct BenchFamily {
  std::size_t unit = 4;
  std::size_t multiple = 4;
  std::size_t min_depth = 3;
  std::size_t max_depth = 6;
  std::size_t hidden = 16;
  std::size_t batch = 1;
};

struct BenchRow {
  std::size_t seq_len = 0;
  std::size_t levels = 0;
  std::size_t params_linear = 0;
  std::size_t params_inner = 0;
  std::size_t params_outer = 0;
  std::uint64_t attention_inner = 0;
  std::uint64_t attention_outer = 0;
};

inline ModelConfig bench_config(const BenchFamily& f, std::size_t depth) {
  ModelConfig c;
  c.plan.lookback.unit = f.unit;
  c.plan.lookback.multiples.assign(depth - 1, f.multiple);
  c.plan.seq_len = c.plan.lookback.length();
  c.plan.hidden = f.hidden;
  return c;
}

inline std::vector<BenchRow> bench_rows(const BenchFamily& f) {
  if (f.min_depth < 2 || f.max_depth < f.min_depth) throw ConfigError("bench: need 2 <= min_depth <= max_depth");
  std::vector<BenchRow> rows;
  for (std::size_t d = f.min_depth; d <= f.max_depth; ++d) {
    auto lin = bench_config(f, d);
    auto inner = lin;
    inner.variant = Variant::transformer;
    auto outer = lin;
    outer.overrides = {{0, KernelKind::transformer}, {1, KernelKind::transformer}};
    validate(inner);
    validate(outer);
    rows.push_back({lin.plan.seq_len, d, count_parameters(lin).total, count_parameters(inner).total,
                    count_parameters(outer).total, attention_cost(inner, f.batch), attention_cost(outer, f.batch)});
  }
  return rows;
}

inline int cmd_bench(const BenchFamily& f, std::ostream& out, std::ostream& err) {
  try {
    out << "L levels params_linear params_inner params_outer attention_inner attention_outer\n";
    for (const auto& r : bench_rows(f)) {
      out << r.seq_len << ' ' << r.levels << ' ' << r.params_linear << ' ' << r.params_inner << ' ' << r.params_outer
          << ' ' << r.attention_inner << ' ' << r.attention_outer << '\n';
    }
    return exit_ok;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_config;
  }
}

/// Writes the synthetic ETT-style surrogate as CSV.
inline int cmd_synth(const std::string& path, std::size_t rows, std::uint64_t seed, std::ostream& err) {
  std::ofstream os(path);
  if (!os) {
    err << "error: cannot write '" << path << "'\n";
    return exit_failed;
  }
  write_csv(os, ett_surrogate(rows, seed));
  return exit_ok;
}

}  // namespace kunet
