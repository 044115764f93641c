// Subcommand bodies behind the CLI binary, written as plain functions so
// tests can drive them in-process.  Each command validates its inputs,
// performs the work, writes artifacts under the requested directory, and
// throws (ConfigError / DataError / NumericError) on failure; the binary
// maps exception types to exit codes.

#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "vesselseg/analysis.hpp"
#include "vesselseg/config.hpp"
#include "vesselseg/data.hpp"
#include "vesselseg/model.hpp"
#include "vesselseg/phantom.hpp"
#include "vesselseg/report.hpp"
#include "vesselseg/training.hpp"

namespace vesselseg {

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

// Executes one run cell: every configured seed trains a fresh model into
// <out>/seed_<s>/, and the cell-level summary aggregates their held-out test
// metrics (when the dataset carries a test split).  The resolved config and
// an environment manifest land next to the results so the cell can be
// re-executed bit-compatibly where the platform allows.
inline nlohmann::json cmd_train(const nlohmann::json& raw_config) {
  ExperimentConfig cfg = ExperimentConfig::from_json(raw_config);
  if (cfg.data.dir.empty()) throw ConfigError("data.dir must name a dataset directory");
  const std::filesystem::path out_dir(cfg.out_dir);
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir / "config.json", cfg.to_json().dump(2) + "\n");
  write_text_file(out_dir / "environment.json", environment_manifest().dump(2) + "\n");

  Dataset dataset = Dataset::load(cfg.data.dir);
  const AnnotatedImage& probe = dataset.at(0);
  const int64_t image_h = probe.image.size(0), image_w = probe.image.size(1);

  nlohmann::json per_run = nlohmann::json::array();
  std::vector<MetricReport> test_reports;
  double wall_total = 0;
  for (uint64_t seed : cfg.train.seeds) {
    torch::manual_seed(int64_t(seed));  // encoder construction draws framework noise
    SegModel model(cfg.model);
    RunRecord record = train_model(model, dataset, cfg.train, cfg.loss, cfg.data.policy, seed,
                                   out_dir / ("seed_" + std::to_string(seed)));
    if (record.has_test) test_reports.push_back(record.final_test);
    wall_total += record.wall_seconds;
    per_run.push_back(record.summary_json());
    std::cout << "seed " << seed << ": best val gds " << format_double(record.best_val_gds)
              << " @ epoch " << record.best_epoch
              << (record.has_test ? ", test gds " + format_double(record.final_test.gds) : "")
              << "\n";
  }

  torch::manual_seed(int64_t(cfg.train.seeds.front()));
  SegModel cost_model(cfg.model);
  if (cfg.train.freeze_encoder) cost_model->freeze_encoder();
  CostReport cost = cost_model->cost(image_h, image_w);

  nlohmann::json summary{{"status", "ok"},
                         {"encoder", cfg.model.encoder_id},
                         {"decoder_family", to_string(cfg.model.decoder_family)},
                         {"attention", to_string(cfg.model.attention)},
                         {"runs", cfg.train.seeds.size()},
                         {"seeds", cfg.train.seeds},
                         {"params", cost.params_trainable + cost.params_frozen},
                         {"flops", cost.flops},
                         {"image_size", {image_h, image_w}},
                         {"wall_seconds", wall_total},
                         {"per_run", per_run}};
  if (test_reports.size() == cfg.train.seeds.size() && !test_reports.empty()) {
    nlohmann::json stats;
    for (const auto& [column, ms] : summarize_metric_reports(test_reports)) {
      stats[column] = {ms.first, ms.second};
    }
    summary["test_stats"] = stats;
  }
  write_text_file_atomic(out_dir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

// Scores a checkpoint on one split of a dataset; writes per-image rows and
// the aggregate report when an output directory is given.
inline MetricReport cmd_eval(const std::filesystem::path& checkpoint_dir,
                             const std::filesystem::path& data_dir, const std::string& split,
                             const std::filesystem::path& out_dir, int64_t batch_size) {
  SegModel model = load_checkpoint(checkpoint_dir);
  Dataset all = Dataset::load(data_dir);
  Dataset ds = all.filter_split(split);
  if (ds.empty()) {
    throw DataError("dataset " + data_dir.string() + " has no samples in split '" + split + "'");
  }
  std::vector<MetricReport> per_image;
  MetricReport mean = evaluate_model(model, ds, batch_size, parse_device("cpu"), &per_image);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::string csv = "stem," + mean.csv_header() + "\n";
    for (int64_t i = 0; i < ds.size(); ++i) {
      csv += ds.at(i).meta.stem + "," + per_image[size_t(i)].csv_row() + "\n";
    }
    write_text_file(out_dir / "per_image.csv", csv);
    nlohmann::json agg{{"split", split},
                       {"images", ds.size()},
                       {"checkpoint", checkpoint_dir.string()},
                       {"report", mean.to_json()}};
    write_text_file(out_dir / "aggregate.json", agg.dump(2) + "\n");
  }
  std::cout << "evaluated " << ds.size() << " images from split '" << split << "': gds "
            << format_double(mean.gds) << ", artery dsc "
            << format_double(mean.per_class[1].dsc) << ", catheter dsc "
            << format_double(mean.per_class[2].dsc) << "\n";
  return mean;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

// Renders `count` phantoms into a dataset directory.  Stems are zero-padded
// sequence numbers, five consecutive images share a synthetic patient id
// (so patient-level reasoning stays exercised), and the train/test split is
// stratified by projection view.
inline Dataset cmd_synth(int64_t count, int64_t size, uint64_t seed, double width_scale,
                         double test_fraction, const std::filesystem::path& out_dir) {
  if (count <= 0) throw ConfigError("synth --count must be > 0");
  if (test_fraction < 0 || test_fraction > 1) {
    throw ConfigError("synth --test-fraction must lie in [0, 1]");
  }
  PhantomConfig pcfg;
  pcfg.size = size;
  pcfg.width_scale = width_scale;
  pcfg.validate();

  std::vector<AnnotatedImage> samples;
  std::vector<ImageMeta> metas;
  for (int64_t i = 0; i < count; ++i) {
    AnnotatedImage s = generate_phantom(seed + uint64_t(i), pcfg);
    char stem[16], patient[16];
    std::snprintf(stem, sizeof(stem), "ph%05lld", static_cast<long long>(i));
    std::snprintf(patient, sizeof(patient), "p%03lld", static_cast<long long>(i / 5));
    s.meta.stem = stem;
    s.meta.patient_id = patient;
    metas.push_back(s.meta);
    samples.push_back(std::move(s));
  }
  assign_stratified_split(metas, test_fraction, seed);

  Dataset ds;
  for (size_t i = 0; i < samples.size(); ++i) {
    samples[i].meta.split = metas[i].split;
    ds.add(samples[i]);
  }
  ds.save(out_dir);
  std::cout << "wrote " << ds.size() << " phantoms (" << ds.filter_split("test").size()
            << " held out) to " << out_dir.string() << "\n";
  return ds;
}

// ---------------------------------------------------------------------------
// pareto
// ---------------------------------------------------------------------------

// Frontier + plots from a sweep summary CSV.
inline std::vector<SweepSummaryRow> cmd_pareto(const std::filesystem::path& summary_csv,
                                               const std::filesystem::path& out_dir) {
  std::vector<SweepSummaryRow> rows = read_sweep_summary(summary_csv);
  std::vector<SweepSummaryRow> frontier = emit_frontier_report(rows, out_dir);
  std::cout << "frontier (" << frontier.size() << " of " << rows.size() << " rows):\n";
  for (const auto& r : frontier) {
    std::cout << "  " << r.label << "  flops " << r.flops << "  gds "
              << format_double(r.gds_mean) << "\n";
  }
  return frontier;
}

// ---------------------------------------------------------------------------
// describe
// ---------------------------------------------------------------------------

// Prints the decoder node graph, per-node channels, and parameter/FLOP
// breakdown for a model spec (from a config file and/or dotted overrides).
inline nlohmann::json cmd_describe(const nlohmann::json& raw_config, int64_t size,
                                   bool as_json, std::ostream& os = std::cout) {
  configdetail::reject_unknown_keys(raw_config, configdetail::experiment_schema(), "");
  ModelSpec spec;
  if (raw_config.contains("model")) spec = ModelSpec::from_json(raw_config.at("model"));
  SegModel model(spec);
  nlohmann::json info = describe_model(model, size, size);
  if (as_json) {
    os << info.dump(2) << "\n";
    return info;
  }
  os << "model: " << spec.encoder_id << " + " << to_string(spec.decoder_family)
     << " (attention " << to_string(spec.attention) << ", " << spec.num_classes
     << " classes)\n";
  os << "input " << size << "x" << size << ": params "
     << info.at("params_trainable").get<int64_t>() + info.at("params_frozen").get<int64_t>()
     << " (" << info.at("params_frozen").get<int64_t>() << " frozen), flops "
     << info.at("flops").get<int64_t>() << "\n";
  os << "per module:\n";
  for (const auto& [name, cost] : info.at("per_module").items()) {
    os << "  " << name << ": params " << cost.at("params").get<int64_t>() << ", flops "
       << cost.at("flops").get<int64_t>() << "\n";
  }
  os << "decoder nodes (row, col -> out channels <- inputs):\n";
  for (const auto& n : info.at("nodes")) {
    os << "  " << n.at("name").get<std::string>() << " (" << n.at("row") << ","
       << n.at("col") << ") -> " << n.at("out_channels") << " <- ";
    const auto& inputs = n.at("inputs");
    for (size_t i = 0; i < inputs.size(); ++i) {
      os << (i ? ", " : "") << inputs[i].get<std::string>();
    }
    os << "\n";
  }
  return info;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

namespace cmddetail {

// A sweep cell is complete once its summary.json parses with status "ok";
// anything else (absent, truncated, failed) schedules a re-run.
inline bool cell_is_complete(const std::filesystem::path& cell_dir) {
  nlohmann::json j = nlohmann::json::parse(
      std::filesystem::exists(cell_dir / "summary.json")
          ? read_text_file(cell_dir / "summary.json")
          : std::string("null"),
      nullptr, /*allow_exceptions=*/false);
  return j.is_object() && j.value("status", "") == "ok";
}

inline SweepSummaryRow row_from_cell(const std::string& label,
                                     const std::filesystem::path& cell_dir) {
  SweepSummaryRow row;
  row.label = label;
  row.status = "failed";
  nlohmann::json j = nlohmann::json::parse(
      std::filesystem::exists(cell_dir / "summary.json")
          ? read_text_file(cell_dir / "summary.json")
          : std::string("null"),
      nullptr, /*allow_exceptions=*/false);
  if (!j.is_object()) return row;
  row.encoder = j.value("encoder", "");
  row.decoder_family = j.value("decoder_family", "");
  row.attention = j.value("attention", "");
  if (j.value("status", "") != "ok" || !j.contains("test_stats")) return row;
  const auto& stats = j.at("test_stats");
  auto mean_of = [&](const std::string& k) { return stats.at(k).at(0).get<double>(); };
  auto std_of = [&](const std::string& k) { return stats.at(k).at(1).get<double>(); };
  row.status = "ok";
  row.runs = j.value("runs", int64_t(0));
  row.params = j.value("params", int64_t(0));
  row.flops = j.value("flops", int64_t(0));
  row.gds_mean = mean_of("gds");
  row.gds_std = std_of("gds");
  row.dsc_overall_mean = mean_of("dsc_overall");
  row.dsc_background_mean = mean_of("dsc_background");
  row.dsc_artery_mean = mean_of("dsc_artery");
  row.dsc_artery_std = std_of("dsc_artery");
  row.dsc_catheter_mean = mean_of("dsc_catheter");
  row.dsc_catheter_std = std_of("dsc_catheter");
  return row;
}

}  // namespace cmddetail

// Runs every *.json config under `configs_dir` as an independent cell in
// <out>/<config stem>/, skipping cells that already completed, recording
// failures without aborting the rest of the grid, and aggregating completed
// cells into summary.csv after every cell so concurrent observers always
// see a consistent file.
inline std::vector<SweepSummaryRow> cmd_sweep(
    const std::filesystem::path& configs_dir, const std::filesystem::path& out_dir,
    const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
  std::vector<std::filesystem::path> configs;
  if (std::filesystem::is_directory(configs_dir)) {
    for (const auto& entry : std::filesystem::directory_iterator(configs_dir)) {
      if (entry.path().extension() == ".json") configs.push_back(entry.path());
    }
  }
  std::sort(configs.begin(), configs.end());
  if (configs.empty()) {
    throw ConfigError("no .json run configs under " + configs_dir.string());
  }
  std::filesystem::create_directories(out_dir);

  std::vector<SweepSummaryRow> rows;
  int skipped = 0, failed = 0;
  for (const auto& config_path : configs) {
    const std::string label = config_path.stem().string();
    const std::filesystem::path cell_dir = out_dir / label;
    if (cmddetail::cell_is_complete(cell_dir)) {
      ++skipped;
    } else {
      try {
        nlohmann::json raw = load_config_json(config_path);
        for (const auto& [key, value] : overrides) apply_override(raw, key, value);
        raw["out_dir"] = cell_dir.string();
        cmd_train(raw);
      } catch (const std::exception& e) {
        std::filesystem::create_directories(cell_dir);
        write_text_file_atomic(
            cell_dir / "summary.json",
            nlohmann::json{{"status", "failed"}, {"error", e.what()}}.dump(2) + "\n");
        std::cout << "cell " << label << " failed: " << e.what() << "\n";
        ++failed;
      }
    }
    rows.push_back(cmddetail::row_from_cell(label, cell_dir));
    write_text_file_atomic(out_dir / "summary.csv", [&] {
      std::string text = sweep_summary_header() + "\n";
      for (const auto& r : rows) text += to_csv_row(r) + "\n";
      return text;
    }());
  }
  std::cout << "sweep: " << rows.size() << " cells (" << skipped << " already complete, "
            << failed << " failed)\n";
  return rows;
}

}  // namespace vesselseg
