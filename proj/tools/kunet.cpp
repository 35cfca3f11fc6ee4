// SPDX-License-Identifier: Apache-2.0
//
// kunet: train, evaluate and inspect hierarchical U-Net forecasters.
#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "kunet/kunet.hpp"

namespace {

kunet::RunConfig effective_config(const std::string& path, const std::vector<std::string>& overrides) {
  auto cfg = path.empty() ? kunet::default_run_config() : kunet::load_config(path);
  for (const auto& o : overrides) kunet::apply_override(cfg, o);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical U-Net time-series forecaster.\n"
               "Relative data paths are also searched in $KUNET_DATA_DIR."};
  app.require_subcommand(1);

  std::string config_path, checkpoint;
  std::vector<std::string> overrides;

  auto* train = app.add_subcommand("train", "train a model and write config, metrics, summary and checkpoint");
  train->add_option("-c,--config", config_path, "key = value config file");
  train->add_option("-s,--set", overrides, "override, key=value (repeatable)");

  auto* eval = app.add_subcommand("eval", "score a checkpoint on the configured test split");
  eval->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("-c,--config", config_path, "config for the data and split keys");
  eval->add_option("-s,--set", overrides, "override, key=value (repeatable)");

  kunet::GradCheckRequest gc;
  std::string gc_variant = "linear", gc_lookback = "2*2*2";
  std::size_t gc_seeds = 1;
  auto* gradcheck = app.add_subcommand("gradcheck", "whole-model finite-difference gradient check (64-bit)");
  gradcheck->add_option("--variant", gc_variant, "linear, linear-1-hidden, linear-5-hidden, transformer, lstm")
      ->capture_default_str();
  gradcheck->add_option("--lookback", gc_lookback, "look-back schedule")->capture_default_str();
  gradcheck->add_option("--hidden", gc.hidden, "hidden width")->capture_default_str();
  gradcheck->add_option("--batch", gc.batch, "batch size")->capture_default_str();
  gradcheck->add_option("--seeds", gc_seeds, "check seeds 0..n-1")->capture_default_str();
  gradcheck->add_option("--tolerance", gc.tolerance, "max relative error")->capture_default_str();

  auto* report = app.add_subcommand("report", "parameter breakdown and attention cost");
  report->add_option("checkpoint", checkpoint, "checkpoint file (omit to report --config)");
  report->add_option("-c,--config", config_path, "config file");
  report->add_option("-s,--set", overrides, "override, key=value (repeatable)");

  kunet::BenchFamily fam;
  auto* bench = app.add_subcommand("bench", "L vs parameters and attention cost, innermost vs outermost attention");
  bench->add_option("--unit", fam.unit, "innermost segment length")->capture_default_str();
  bench->add_option("--multiple", fam.multiple, "multiple at every further level")->capture_default_str();
  bench->add_option("--min-depth", fam.min_depth, "fewest levels")->capture_default_str();
  bench->add_option("--max-depth", fam.max_depth, "most levels")->capture_default_str();
  bench->add_option("--hidden", fam.hidden, "hidden width")->capture_default_str();

  std::string synth_out;
  std::size_t synth_rows = 17420;
  std::uint64_t synth_seed = 2016;
  auto* synth = app.add_subcommand("synth", "write the synthetic hourly ETT-style surrogate as CSV");
  synth->add_option("output", synth_out, "CSV path")->required();
  synth->add_option("--rows", synth_rows, "row count")->capture_default_str();
  synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();

  auto* show = app.add_subcommand("config", "print the effective config");
  show->add_option("-c,--config", config_path, "config file");
  show->add_option("-s,--set", overrides, "override, key=value (repeatable)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return kunet::cmd_train(effective_config(config_path, overrides), std::cout, std::cerr);
    if (*eval) return kunet::cmd_eval(checkpoint, effective_config(config_path, overrides), std::cout, std::cerr);
    if (*gradcheck) {
      gc.variant = kunet::parse_variant(gc_variant);
      gc.lookback = kunet::parse_schedule(gc_lookback, "--lookback");
      gc.seq_len = gc.lookback.length();
      gc.seeds.clear();
      for (std::size_t s = 0; s < gc_seeds; ++s) gc.seeds.push_back(s);
      return kunet::cmd_gradcheck(gc, std::cout, std::cerr);
    }
    if (*report) {
      if (!checkpoint.empty()) return kunet::cmd_report(checkpoint, std::cout, std::cerr);
      const auto model = kunet::resolve_model(effective_config(config_path, overrides));
      const kunet::KUNet<double> built(model, 0);
      kunet::print_report(model, built.parameter_count(), std::cout);
      return 0;
    }
    if (*bench) return kunet::cmd_bench(fam, std::cout, std::cerr);
    if (*synth) return kunet::cmd_synth(synth_out, synth_rows, synth_seed, std::cerr);
    if (*show) {
      std::cout << kunet::config_text(effective_config(config_path, overrides));
      return 0;
    }
  } catch (const kunet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kunet::exit_config;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kunet::exit_failed;
  }
  return 0;
}
