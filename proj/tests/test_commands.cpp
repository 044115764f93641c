#include "vesselseg/commands.hpp"

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace vesselseg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "vesselseg_cmd_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Minimal run-cell config over a phantom dataset; trains in well under a
// second per seed.
nlohmann::json tiny_config(const fs::path& data_dir, const fs::path& out_dir,
                           int64_t epochs = 2, const std::string& attention = "none") {
  return {{"model",
           {{"encoder", "tiny"},
            {"encoder_widths", {4, 8, 8, 8, 8}},
            {"decoder_widths", {8, 8, 8, 8, 8}},
            {"attention", attention}}},
          {"train",
           {{"epochs", epochs},
            {"batch_size", 2},
            {"seeds", {1}},
            {"lr_drops", nlohmann::json::array()},
            {"val_fraction", 0.25}}},
          {"data", {{"dir", data_dir.string()}, {"policy", {{"copies_per_sample", 1}}}}},
          {"out_dir", out_dir.string()},
          {"seed", 3}};
}

fs::path synth_fixture(const fs::path& dir, int64_t count, double test_fraction) {
  cmd_synth(count, 64, 11, 4.0, test_fraction, dir);
  return dir;
}

// Runs the installed binary and returns its exit code.
int run_cli(const std::string& args) {
  const std::string cmd = std::string(VESSELSEG_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

TEST(Synth, WritesAStratifiedDeterministicDataset) {
  fs::path dir = fresh_dir("synth_a");
  Dataset ds = cmd_synth(15, 64, 11, 4.0, 0.2, dir);
  EXPECT_EQ(ds.size(), 15);
  EXPECT_EQ(ds.at(0).meta.stem, "ph00000");
  EXPECT_EQ(ds.at(14).meta.stem, "ph00014");
  EXPECT_EQ(ds.at(4).meta.patient_id, "p000");   // five images per patient
  EXPECT_EQ(ds.at(5).meta.patient_id, "p001");

  // Split fractions hold per view (the stratification unit).
  std::map<std::string, std::pair<int64_t, int64_t>> view_counts;  // view -> (test, total)
  for (const auto& s : ds.samples()) {
    view_counts[s.meta.view].second++;
    if (s.meta.split == "test") view_counts[s.meta.view].first++;
  }
  for (const auto& [view, counts] : view_counts) {
    EXPECT_EQ(counts.first, std::llround(0.2 * double(counts.second))) << "view " << view;
  }

  Dataset reloaded = Dataset::load(dir);
  EXPECT_EQ(reloaded.size(), 15);
  EXPECT_TRUE(torch::equal(reloaded.at(0).image, ds.at(0).image));

  // Same seed, same bytes.
  fs::path dir2 = fresh_dir("synth_b");
  cmd_synth(15, 64, 11, 4.0, 0.2, dir2);
  EXPECT_EQ(read_text_file(dir / "meta.csv"), read_text_file(dir2 / "meta.csv"));

  EXPECT_THROW(cmd_synth(0, 64, 1, 1.0, 0.2, dir), ConfigError);
  EXPECT_THROW(cmd_synth(3, 64, 1, 1.0, 1.5, dir), ConfigError);
  EXPECT_THROW(cmd_synth(3, 65, 1, 1.0, 0.2, dir), ConfigError);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

TEST(Train, MinimalConfigCompletesEndToEnd) {
  fs::path data = synth_fixture(fresh_dir("train_data"), 8, 0.25);
  fs::path out = fresh_dir("train_out");
  nlohmann::json summary = cmd_train(tiny_config(data, out));

  EXPECT_EQ(summary.at("status"), "ok");
  EXPECT_EQ(summary.at("runs"), 1);
  EXPECT_TRUE(fs::exists(out / "config.json"));
  EXPECT_TRUE(fs::exists(out / "environment.json"));
  EXPECT_TRUE(fs::exists(out / "summary.json"));
  EXPECT_TRUE(fs::exists(out / "seed_1" / "record.csv"));
  EXPECT_TRUE(fs::exists(out / "seed_1" / "checkpoints" / "best" / "manifest.json"));
  EXPECT_TRUE(fs::exists(out / "seed_1" / "checkpoints" / "last" / "weights.pt"));

  // Dataset carries a test split, so aggregated test stats must be present.
  ASSERT_TRUE(summary.contains("test_stats"));
  const auto& gds = summary.at("test_stats").at("gds");
  EXPECT_GE(gds.at(0).get<double>(), 0.0);
  EXPECT_LE(gds.at(0).get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(gds.at(1).get<double>(), 0.0);  // one seed -> zero spread

  // The stored config is the resolved one and reloads strictly.
  nlohmann::json stored = load_config_json(out / "config.json");
  EXPECT_EQ(ExperimentConfig::from_json(stored).to_json(), stored);
}

TEST(Train, FailsBeforeTrainingWhenDataIsMissing) {
  fs::path out = fresh_dir("train_missing_out");
  nlohmann::json cfg = tiny_config("/nonexistent/dataset", out);
  EXPECT_THROW(cmd_train(cfg), DataError);
  EXPECT_FALSE(fs::exists(out / "seed_1"));  // nothing was trained

  cfg["data"]["dir"] = "";
  EXPECT_THROW(cmd_train(cfg), ConfigError);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

TEST(Eval, ReproducesTheRecordedTestScore) {
  fs::path data = synth_fixture(fresh_dir("eval_data"), 8, 0.25);
  const int64_t n_test = Dataset::load(data).filter_split("test").size();
  ASSERT_GT(n_test, 0);
  fs::path out = fresh_dir("eval_run");
  nlohmann::json summary = cmd_train(tiny_config(data, out));
  const double recorded = summary.at("per_run").at(0).at("test").at("gds").get<double>();

  fs::path report_dir = fresh_dir("eval_report");
  MetricReport mean =
      cmd_eval(out / "seed_1" / "checkpoints" / "best", data, "test", report_dir, 2);
  EXPECT_NEAR(mean.gds, recorded, 1e-9);

  // Per-image rows average to the aggregate (within CSV print precision).
  auto lines = split(read_text_file(report_dir / "per_image.csv"), '\n');
  ASSERT_GE(lines.size(), 2u);
  double sum = 0;
  int64_t n = 0;
  for (size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    auto cols = split(lines[i], ',');
    sum += std::stod(cols.back());  // gds is the final column
    ++n;
  }
  EXPECT_EQ(n, n_test);
  EXPECT_NEAR(sum / double(n), mean.gds, 1e-7);

  nlohmann::json agg = nlohmann::json::parse(read_text_file(report_dir / "aggregate.json"));
  EXPECT_EQ(agg.at("images").get<int64_t>(), n_test);
  EXPECT_NEAR(agg.at("report").at("gds").get<double>(), mean.gds, 1e-12);
}

TEST(Eval, EmptySplitIsADataError) {
  fs::path data = synth_fixture(fresh_dir("eval_trainonly"), 4, 0.0);
  fs::path out = fresh_dir("eval_trainonly_run");
  cmd_train(tiny_config(data, out, 1));
  try {
    cmd_eval(out / "seed_1" / "checkpoints" / "best", data, "test", {}, 2);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("test"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// describe
// ---------------------------------------------------------------------------

TEST(Describe, PrintsGraphNodesAndCosts) {
  nlohmann::json raw = {{"model", {{"encoder", "tiny"}}}};
  std::ostringstream text;
  nlohmann::json info = cmd_describe(raw, 64, /*as_json=*/false, text);
  EXPECT_EQ(info.at("nodes").size(), 10u);
  EXPECT_GT(info.at("params_trainable").get<int64_t>(), 0);
  EXPECT_NE(text.str().find("x0_4"), std::string::npos);
  EXPECT_NE(text.str().find("params"), std::string::npos);

  std::ostringstream machine;
  cmd_describe(raw, 64, /*as_json=*/true, machine);
  nlohmann::json parsed = nlohmann::json::parse(machine.str());
  EXPECT_EQ(parsed.at("input_size"), nlohmann::json({64, 64}));

  EXPECT_THROW(cmd_describe({{"model", {{"bogus", 1}}}}, 64, true, machine), ConfigError);
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

TEST(Sweep, GridAggregatesResumesAndRecordsFailures) {
  fs::path data = synth_fixture(fresh_dir("sweep_data"), 8, 0.25);
  fs::path configs = fresh_dir("sweep_configs");
  fs::path out = fresh_dir("sweep_out");
  for (const std::string att : {"none", "scse"}) {
    nlohmann::json cfg = tiny_config(data, "ignored", 1, att);
    write_text_file(configs / ("cell_" + att + ".json"), cfg.dump(2));
  }
  // A third cell that cannot run: its dataset does not exist.
  nlohmann::json broken = tiny_config("/nonexistent/dataset", "ignored", 1);
  write_text_file(configs / "cell_broken.json", broken.dump(2));

  std::vector<SweepSummaryRow> rows = cmd_sweep(configs, out);
  ASSERT_EQ(rows.size(), 3u);  // sorted by file name: broken, none, scse
  EXPECT_EQ(rows[0].label, "cell_broken");
  EXPECT_EQ(rows[0].status, "failed");
  EXPECT_EQ(rows[1].status, "ok");
  EXPECT_EQ(rows[2].status, "ok");
  EXPECT_EQ(rows[1].attention, "none");
  EXPECT_EQ(rows[2].attention, "scse");
  EXPECT_GT(rows[1].params, 0);
  EXPECT_GT(rows[2].flops, rows[1].flops);  // attention adds gating compute
  EXPECT_GE(rows[1].gds_mean, 0.0);

  // The summary parses through the documented reader.
  std::vector<SweepSummaryRow> parsed = read_sweep_summary(out / "summary.csv");
  ASSERT_EQ(parsed.size(), 3u);
  EXPECT_EQ(parsed[0].status, "failed");

  // Resume: completed cells are not re-run (their artifacts stay untouched);
  // the failed cell is retried and fails the same way.
  const auto stamp = fs::last_write_time(out / "cell_none" / "summary.json");
  std::vector<SweepSummaryRow> again = cmd_sweep(configs, out);
  EXPECT_EQ(fs::last_write_time(out / "cell_none" / "summary.json"), stamp);
  ASSERT_EQ(again.size(), 3u);
  EXPECT_EQ(again[1].gds_mean, rows[1].gds_mean);

  nlohmann::json failed_cell =
      nlohmann::json::parse(read_text_file(out / "cell_broken" / "summary.json"));
  EXPECT_EQ(failed_cell.at("status"), "failed");
  EXPECT_FALSE(failed_cell.at("error").get<std::string>().empty());
}

TEST(Sweep, NoConfigsIsAConfigError) {
  EXPECT_THROW(cmd_sweep(fresh_dir("sweep_empty"), fresh_dir("sweep_empty_out")), ConfigError);
  EXPECT_THROW(cmd_sweep("/nonexistent/configs", fresh_dir("sweep_empty_out2")), ConfigError);
}

// ---------------------------------------------------------------------------
// pareto
// ---------------------------------------------------------------------------

TEST(Pareto, WritesFrontierAndPlots) {
  fs::path dir = fresh_dir("pareto");
  std::vector<SweepSummaryRow> rows(3);
  rows[0].label = "small";
  rows[0].flops = 1'000'000;
  rows[0].gds_mean = 0.90;
  rows[1].label = "medium";
  rows[1].flops = 2'000'000;
  rows[1].gds_mean = 0.92;
  rows[2].label = "large";
  rows[2].flops = 3'000'000;
  rows[2].gds_mean = 0.91;  // dominated by medium
  for (auto& r : rows) {
    r.encoder = "tiny";
    r.decoder_family = "efficient_unetpp";
    r.attention = "none";
    r.runs = 3;
    r.params = 1000;
  }
  write_sweep_summary(dir / "summary.csv", rows);

  std::vector<SweepSummaryRow> frontier = cmd_pareto(dir / "summary.csv", dir / "report");
  ASSERT_EQ(frontier.size(), 2u);
  EXPECT_EQ(frontier[0].label, "small");
  EXPECT_EQ(frontier[1].label, "medium");
  for (const std::string name : {"frontier.csv", "gds_vs_flops.svg", "gds_vs_flops.png",
                                 "gds_vs_params.svg", "gds_vs_params.png"}) {
    EXPECT_TRUE(fs::exists(dir / "report" / name)) << name;
  }

  EXPECT_THROW(cmd_pareto(dir / "missing.csv", dir / "report2"), DataError);
}

// ---------------------------------------------------------------------------
// Binary exit codes
// ---------------------------------------------------------------------------

TEST(ExitCodes, MapErrorCategoriesAsDocumented) {
  fs::path dir = fresh_dir("exit_codes");

  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("synth --count 8 --size 64 --seed 9 --width-scale 4 --out " +
                    (dir / "ds").string()),
            0);

  // Config errors: unreadable config file, unknown key, bad flag usage.
  EXPECT_EQ(run_cli("train --config /nonexistent/exp.json"), 2);
  nlohmann::json cfg = tiny_config(dir / "ds", dir / "run", 1);
  write_text_file(dir / "exp.json", cfg.dump(2));
  EXPECT_EQ(run_cli("train --config " + (dir / "exp.json").string() + " --loss.gama 1"), 2);
  EXPECT_EQ(run_cli("train"), 2);  // missing required --config

  // Data error: dataset directory does not exist.
  nlohmann::json missing = tiny_config("/nonexistent/dataset", dir / "run2", 1);
  write_text_file(dir / "missing.json", missing.dump(2));
  EXPECT_EQ(run_cli("train --config " + (dir / "missing.json").string()), 3);

  // Numeric failure: an absurd learning rate diverges immediately.
  EXPECT_EQ(run_cli("train --config " + (dir / "exp.json").string() + " --train.lr0 1e30"), 4);

  // And the happy path end-to-end.
  EXPECT_EQ(run_cli("train --config " + (dir / "exp.json").string()), 0);
  EXPECT_EQ(run_cli("describe --config " + (dir / "exp.json").string() + " --size 64"), 0);
}
