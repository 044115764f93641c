// vesselseg: train, evaluate and analyze coronary vessel segmentation
// models on PNG datasets (clinical exports or synthetic phantoms).
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// failure during optimization.

#include <CLI11.hpp>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "vesselseg/commands.hpp"

namespace {

using namespace vesselseg;

// Folds the convenience flags and any leftover --dotted.path tokens into the
// raw config tree, in command-line order for the dotted ones.
nlohmann::json resolve_config(const std::string& config_path,
                              const std::vector<std::string>& extras, const std::string& seed,
                              const std::string& out, const std::string& device) {
  nlohmann::json raw =
      config_path.empty() ? nlohmann::json::object() : load_config_json(config_path);
  if (!seed.empty()) apply_override(raw, "seed", seed);
  if (!out.empty()) apply_override(raw, "out_dir", out);
  if (!device.empty()) apply_override(raw, "train.device", device);
  for (const auto& [key, value] : parse_override_args(extras)) {
    apply_override(raw, key, value);
  }
  return raw;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coronary vessel segmentation research toolkit"};
  app.require_subcommand(1);

  // train ------------------------------------------------------------------
  std::string train_config, train_seed, train_out, train_device;
  CLI::App* train = app.add_subcommand("train", "Train a model from an experiment config");
  train->add_option("--config", train_config, "experiment config (JSON)")->required();
  train->add_option("--seed", train_seed, "override the experiment seed");
  train->add_option("--out", train_out, "override the output directory");
  train->add_option("--device", train_device, "override the compute device");
  train->allow_extras();

  // eval -------------------------------------------------------------------
  std::string eval_ckpt, eval_data, eval_split = "test", eval_out;
  int64_t eval_batch = 8;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--split", eval_split, "dataset split to score (default test)");
  eval->add_option("--out", eval_out, "directory for per-image and aggregate reports");
  eval->add_option("--batch-size", eval_batch, "evaluation batch size");

  // sweep ------------------------------------------------------------------
  std::string sweep_configs, sweep_out;
  CLI::App* sweep = app.add_subcommand("sweep", "Run a directory of run-cell configs");
  sweep->add_option("--configs", sweep_configs, "directory of *.json cell configs")->required();
  sweep->add_option("--out", sweep_out, "sweep output directory")->required();
  sweep->allow_extras();

  // pareto -----------------------------------------------------------------
  std::string pareto_summary, pareto_out;
  CLI::App* pareto = app.add_subcommand("pareto", "Frontier + plots from a sweep summary");
  pareto->add_option("--summary", pareto_summary, "sweep summary.csv")->required();
  pareto->add_option("--out", pareto_out, "report output directory")->required();

  // synth ------------------------------------------------------------------
  int64_t synth_count = 0, synth_size = 512;
  std::string synth_seed = "1", synth_out;
  double synth_width_scale = 1.0, synth_test_fraction = 0.2;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic phantom dataset");
  synth->add_option("--count", synth_count, "number of phantoms")->required();
  synth->add_option("--size", synth_size, "image side in pixels (multiple of 32)");
  synth->add_option("--seed", synth_seed, "base seed");
  synth->add_option("--out", synth_out, "dataset directory to create")->required();
  synth->add_option("--width-scale", synth_width_scale, "vessel width multiplier");
  synth->add_option("--test-fraction", synth_test_fraction, "held-out fraction (default 0.2)");

  // describe ----------------------------------------------------------------
  std::string describe_config;
  int64_t describe_size = 512;
  bool describe_json = false;
  CLI::App* describe = app.add_subcommand("describe", "Print model graph and cost breakdown");
  describe->add_option("--config", describe_config, "experiment config (JSON, model section)");
  describe->add_option("--size", describe_size, "input side for the FLOP count");
  describe->add_flag("--json", describe_json, "emit machine-readable JSON");
  describe->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*train) {
      cmd_train(resolve_config(train_config, train->remaining(), train_seed, train_out,
                               train_device));
    } else if (*eval) {
      cmd_eval(eval_ckpt, eval_data, eval_split, eval_out, eval_batch);
    } else if (*sweep) {
      cmd_sweep(sweep_configs, sweep_out, parse_override_args(sweep->remaining()));
    } else if (*pareto) {
      cmd_pareto(pareto_summary, pareto_out);
    } else if (*synth) {
      uint64_t seed = 0;
      try {
        seed = std::stoull(synth_seed);
      } catch (const std::logic_error&) {
        throw ConfigError("synth --seed must be a non-negative integer");
      }
      cmd_synth(synth_count, synth_size, seed, synth_width_scale, synth_test_fraction,
                synth_out);
    } else if (*describe) {
      nlohmann::json raw =
          describe_config.empty() ? nlohmann::json::object() : load_config_json(describe_config);
      for (const auto& [key, value] : parse_override_args(describe->remaining())) {
        apply_override(raw, key, value);
      }
      cmd_describe(raw, describe_size, describe_json);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
