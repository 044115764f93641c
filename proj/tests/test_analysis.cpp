#include "vesselseg/analysis.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "vesselseg/common.hpp"
#include "vesselseg/png_io.hpp"
#include "vesselseg/report.hpp"

using namespace vesselseg;
namespace fs = std::filesystem;

TEST(CostLedger, ConvFixture) {
  // 3x3 conv, 4->8 channels, 16x16 output: 288 weights, 73728 MACs.
  CostLedger ledger;
  ledger.add_conv("conv", 4, 8, 3, 16, 16);
  ASSERT_EQ(ledger.items.size(), 1u);
  EXPECT_EQ(ledger.items[0].params, 288);
  EXPECT_EQ(ledger.items[0].macs, 73728);
  auto report = CostReport::from_ledger(ledger);
  EXPECT_EQ(report.flops, 147456);
}

TEST(CostLedger, BatchNormAndBiasFixtures) {
  CostLedger ledger;
  ledger.add_batchnorm("bn", 8);
  EXPECT_EQ(ledger.items[0].params, 16);
  EXPECT_EQ(ledger.items[0].macs, 0);
  ledger.add_conv("convb", 4, 8, 1, 4, 4, 1, /*bias=*/true);
  EXPECT_EQ(ledger.items[1].params, 4 * 8 + 8);
  EXPECT_EQ(ledger.items[1].macs, 32 * 16);
  ledger.add_linear("fc", 10, 5);
  EXPECT_EQ(ledger.items[2].params, 55);
  EXPECT_EQ(ledger.items[2].macs, 50);
}

TEST(CostLedger, GroupedConvDividesWeights) {
  CostLedger ledger;
  ledger.add_conv("dw", 8, 8, 3, 4, 4, 8);  // depthwise
  EXPECT_EQ(ledger.items[0].params, 8 * 1 * 9);
  EXPECT_THROW(ledger.add_conv("bad", 8, 8, 3, 4, 4, 3), std::invalid_argument);
}

TEST(CostLedger, QuadruplesWithDoubledResolution) {
  CostLedger a, b;
  a.add_conv("c", 16, 32, 3, 64, 64);
  b.add_conv("c", 16, 32, 3, 128, 128);
  EXPECT_EQ(4 * a.items[0].macs, b.items[0].macs);
  EXPECT_EQ(a.items[0].params, b.items[0].params);  // params are resolution-free
}

TEST(CostReport, TotalsEqualItemSums) {
  CostLedger ledger;
  ledger.add_conv("encoder/c1", 3, 8, 3, 32, 32, 1, false, /*frozen=*/true);
  ledger.add_batchnorm("encoder/bn1", 8, /*frozen=*/true);
  ledger.add_conv("decoder/c2", 8, 4, 1, 32, 32);
  auto r = CostReport::from_ledger(ledger);
  int64_t params = 0, macs = 0;
  for (const auto& it : r.items) {
    params += it.params;
    macs += it.macs;
  }
  EXPECT_EQ(r.params_total(), params);
  EXPECT_EQ(r.macs, macs);
  EXPECT_EQ(r.flops, 2 * macs);
  EXPECT_EQ(r.params_frozen, 3 * 8 * 9 + 16);
  EXPECT_EQ(r.params_trainable, 32);
}

TEST(CostReport, PrefixSumsRespectPathBoundaries) {
  CostLedger ledger;
  ledger.add_conv("decoder/x0_1/conv", 4, 4, 1, 8, 8);
  ledger.add_conv("decoder2/conv", 4, 4, 1, 8, 8);
  ledger.add_conv("head", 4, 3, 3, 8, 8);
  auto r = CostReport::from_ledger(ledger);
  EXPECT_EQ(sum_params(r, "decoder"), 16);
  EXPECT_EQ(sum_params(r, "decoder2"), 16);
  EXPECT_EQ(sum_params(r, "head"), 4 * 3 * 9);
  EXPECT_EQ(sum_flops(r, "decoder") + sum_flops(r, "decoder2") + sum_flops(r, "head"), r.flops);
}

TEST(Pareto, SimpleFixture) {
  std::vector<ParetoPoint> pts = {
      {"a", 1.0, 0.5}, {"b", 2.0, 0.6}, {"c", 3.0, 0.4}, {"d", 2.5, 0.6}};
  auto f = pareto_frontier(pts);
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[0].label, "a");
  EXPECT_EQ(f[1].label, "b");  // d matches b's quality at higher cost -> dominated
}

TEST(Pareto, EqualCostAndQualityTiesAllSurvive) {
  std::vector<ParetoPoint> pts = {{"a", 1.0, 0.5}, {"b", 1.0, 0.5}, {"c", 1.0, 0.4}};
  auto f = pareto_frontier(pts);
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[0].label, "a");
  EXPECT_EQ(f[1].label, "b");
}

TEST(Pareto, SinglePointIsItsOwnFrontier) {
  auto f = pareto_frontier({{"only", 5.0, 0.1}});
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].label, "only");
}

TEST(Pareto, EmptyInputIsAnError) {
  EXPECT_THROW(pareto_frontier({}), std::invalid_argument);
}

TEST(Pareto, MatchesBruteForceOracleWithTies) {
  Rng rng(2024);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<ParetoPoint> pts;
    std::vector<oracle::ParetoInput> opts;
    int n = 100 + int(rng.below(100));
    for (int i = 0; i < n; ++i) {
      // Coarse grid values force plenty of exact ties on both axes.
      double flops = double(rng.below(20)) * 0.5;
      double gds = double(rng.below(20)) / 20.0;
      pts.push_back({"p" + std::to_string(i), flops, gds});
      opts.push_back({flops, gds});
    }
    auto got = pareto_frontier(pts);
    auto want_idx = oracle::pareto_indices(opts);
    std::set<std::string> got_labels, want_labels;
    for (const auto& p : got) got_labels.insert(p.label);
    for (size_t i : want_idx) want_labels.insert(pts[i].label);
    EXPECT_EQ(got_labels, want_labels) << "trial " << trial;
    // Frontier comes back sorted by cost.
    for (size_t i = 1; i < got.size(); ++i) EXPECT_LE(got[i - 1].flops, got[i].flops);
  }
}

TEST(Pareto, InvariantUnderMonotoneCostRescale) {
  Rng rng(7);
  std::vector<ParetoPoint> pts, scaled;
  for (int i = 0; i < 200; ++i) {
    double flops = rng.uniform(1e6, 1e10);
    double gds = rng.uniform(0.0, 1.0);
    pts.push_back({"p" + std::to_string(i), flops, gds});
    scaled.push_back({"p" + std::to_string(i), flops / 1e9, gds});
  }
  auto a = pareto_frontier(pts);
  auto b = pareto_frontier(scaled);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].label, b[i].label);
}

TEST(SweepSummary, CsvRoundTrip) {
  SweepSummaryRow r;
  r.label = "b0-scse";
  r.encoder = "efficientnet-b0";
  r.decoder_family = "efficient_unetpp";
  r.attention = "scse";
  r.runs = 3;
  r.params = 1234567;
  r.flops = 9876543210;
  r.gds_mean = 0.912345678;
  r.gds_std = 0.012;
  r.dsc_artery_mean = 0.89;
  auto dir = fs::temp_directory_path() / "vesselseg_summary_test";
  fs::create_directories(dir);
  write_sweep_summary(dir / "summary.csv", {r});
  auto rows = read_sweep_summary(dir / "summary.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].label, "b0-scse");
  EXPECT_EQ(rows[0].flops, 9876543210);
  EXPECT_NEAR(rows[0].gds_mean, 0.912345678, 1e-9);
  fs::remove_all(dir);
}

TEST(SweepSummary, RejectsForeignHeader) {
  auto dir = fs::temp_directory_path() / "vesselseg_summary_bad";
  fs::create_directories(dir);
  write_text_file(dir / "summary.csv", "foo,bar\n1,2\n");
  EXPECT_THROW(read_sweep_summary(dir / "summary.csv"), DataError);
  write_text_file(dir / "short.csv", sweep_summary_header() + "\na,b\n");
  EXPECT_THROW(read_sweep_summary(dir / "short.csv"), DataError);
  fs::remove_all(dir);
}

TEST(FrontierReport, EmitsCsvAndPlots) {
  std::vector<SweepSummaryRow> rows;
  Rng rng(55);
  for (int i = 0; i < 8; ++i) {
    SweepSummaryRow r;
    r.label = "cell" + std::to_string(i);
    r.encoder = "tiny";
    r.decoder_family = "efficient_unetpp";
    r.attention = i % 2 ? "scse" : "none";
    r.runs = 3;
    r.params = 100000 + i * 50000;
    r.flops = int64_t(1e9) * (1 + i);
    r.gds_mean = rng.uniform(0.5, 0.95);
    rows.push_back(r);
  }
  SweepSummaryRow failed;
  failed.label = "broken";
  failed.status = "failed";
  rows.push_back(failed);

  auto dir = fs::temp_directory_path() / "vesselseg_frontier_test";
  fs::remove_all(dir);
  auto frontier = emit_frontier_report(rows, dir);
  EXPECT_FALSE(frontier.empty());
  for (const auto& fr : frontier) EXPECT_NE(fr.label, "broken");
  EXPECT_TRUE(fs::exists(dir / "frontier.csv"));
  EXPECT_TRUE(fs::exists(dir / "gds_vs_flops.svg"));
  EXPECT_TRUE(fs::exists(dir / "gds_vs_flops.png"));
  EXPECT_TRUE(fs::exists(dir / "gds_vs_params.svg"));
  EXPECT_TRUE(fs::exists(dir / "gds_vs_params.png"));

  auto svg = read_text_file(dir / "gds_vs_flops.svg");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("GDS"), std::string::npos);
  auto [rgb, w, h] = read_png_rgb8(dir / "gds_vs_flops.png");
  EXPECT_EQ(w, 960);
  EXPECT_EQ(h, 640);
  // The canvas must contain non-background ink.
  bool has_ink = false;
  for (size_t i = 0; i < rgb.size(); i += 3) {
    if (rgb[i] != 255 || rgb[i + 1] != 255 || rgb[i + 2] != 255) has_ink = true;
  }
  EXPECT_TRUE(has_ink);

  // Frontier csv parses under the same strict schema.
  auto persisted = read_sweep_summary(dir / "frontier.csv");
  EXPECT_EQ(persisted.size(), frontier.size());
  fs::remove_all(dir);
}

TEST(FrontierReport, AllFailedRowsIsAnError) {
  SweepSummaryRow failed;
  failed.label = "x";
  failed.status = "failed";
  auto dir = fs::temp_directory_path() / "vesselseg_frontier_fail";
  EXPECT_THROW(emit_frontier_report({failed}, dir), DataError);
  fs::remove_all(dir);
}
