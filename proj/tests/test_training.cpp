#include "vesselseg/training.hpp"

#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "vesselseg/phantom.hpp"

using namespace vesselseg;

namespace {

// ---------------------------------------------------------------------------
// Test-local oracles, written before the module under test.
// ---------------------------------------------------------------------------

// Hand-applied schedule rule (rate divides by ten starting at epochs 50 and
// 100 of a 150-epoch run, 1-indexed): the table below was produced on paper
// from that sentence alone.
struct LrFixture {
  int64_t epoch;
  double lr;
};
const LrFixture kLrTable[] = {
    {1, 1e-3}, {49, 1e-3}, {50, 1e-4}, {99, 1e-4}, {100, 1e-5}, {150, 1e-5},
};

// {0.8, 0.9, 1.0}: mean = 0.9, population variance = (0.01 + 0 + 0.01) / 3,
// std = sqrt(0.02 / 3) = 0.0816496580927726 (worked longhand).
constexpr double kTriplicateMean = 0.9;
constexpr double kTriplicateStd = 0.0816496580927726;

// Sample variance about the sample mean, accumulated in double.
double weight_variance(const torch::Tensor& w) {
  auto c = w.detach().contiguous();
  const float* p = c.data_ptr<float>();
  const int64_t n = c.numel();
  double mean = 0;
  for (int64_t i = 0; i < n; ++i) mean += p[i];
  mean /= double(n);
  double var = 0;
  for (int64_t i = 0; i < n; ++i) var += (p[i] - mean) * (p[i] - mean);
  return var / double(n);
}

double max_abs(const torch::Tensor& w) {
  auto c = w.detach().contiguous();
  const float* p = c.data_ptr<float>();
  double m = 0;
  for (int64_t i = 0; i < c.numel(); ++i) m = std::max(m, std::abs(double(p[i])));
  return m;
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

// Small model that still exercises every decoder path; trains in seconds.
ModelSpec tiny_spec(Attention attention = Attention::kNone) {
  ModelSpec spec;
  spec.encoder_id = "tiny";
  spec.encoder_widths = {4, 8, 8, 8, 8};
  spec.decoder_widths = {8, 8, 8, 8, 8};
  spec.attention = attention;
  return spec;
}

// Phantom dataset: `n_train` training and `n_test` held-out images at 64 px
// with widened vessels so every class survives the small canvas.
Dataset phantom_set(int n_train, int n_test, uint64_t seed0 = 100) {
  PhantomConfig cfg;
  cfg.size = 64;
  cfg.width_scale = 4.0;
  Dataset ds;
  for (int i = 0; i < n_train + n_test; ++i) {
    AnnotatedImage s = generate_phantom(seed0 + uint64_t(i), cfg);
    if (i >= n_train) s.meta.split = "test";
    ds.add(s);
  }
  return ds;
}

AugmentationPolicy zero_policy(int64_t copies = 0) {
  AugmentationPolicy p;
  p.rotation_deg = 0;
  p.shift_frac = 0;
  p.zoom_frac = 0;
  p.brightness_frac = 0;
  p.copies_per_sample = copies;
  return p;
}

TrainConfig quick_cfg(int64_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 2;
  t.lr_drops = {};
  t.seeds = {1};
  t.val_fraction = 0.25;
  return t;
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "vesselseg_train_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

// ---------------------------------------------------------------------------
// Schedule and configuration
// ---------------------------------------------------------------------------

TEST(LearningRateSchedule, MatchesHandComputedTable) {
  TrainConfig cfg;  // defaults: lr0 1e-3, drops at 50 and 100, 150 epochs
  for (const auto& row : kLrTable) {
    EXPECT_DOUBLE_EQ(lr_at(row.epoch, cfg), row.lr) << "epoch " << row.epoch;
  }
  EXPECT_THROW(lr_at(0, cfg), std::invalid_argument);
  EXPECT_THROW(lr_at(151, cfg), std::invalid_argument);
}

TEST(TrainConfig, RejectsBadValues) {
  auto broken = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(broken([](TrainConfig& c) { c.epochs = 0; }).validate(), ConfigError);
  EXPECT_THROW(broken([](TrainConfig& c) { c.batch_size = 0; }).validate(), ConfigError);
  EXPECT_THROW(broken([](TrainConfig& c) { c.lr0 = 0; }).validate(), ConfigError);
  EXPECT_THROW(broken([](TrainConfig& c) { c.lr_drops = {0}; }).validate(), ConfigError);
  EXPECT_THROW(broken([](TrainConfig& c) { c.lr_drops = {200}; }).validate(), ConfigError);
  EXPECT_THROW(broken([](TrainConfig& c) { c.lr_drops = {80, 80}; }).validate(), ConfigError);
  EXPECT_THROW(broken([](TrainConfig& c) { c.beta1 = 1.0; }).validate(), ConfigError);
  EXPECT_THROW(broken([](TrainConfig& c) { c.beta2 = -0.1; }).validate(), ConfigError);
  EXPECT_THROW(broken([](TrainConfig& c) { c.weight_decay = -1; }).validate(), ConfigError);
  EXPECT_THROW(broken([](TrainConfig& c) { c.seeds = {}; }).validate(), ConfigError);
  EXPECT_THROW(broken([](TrainConfig& c) { c.val_fraction = 1.0; }).validate(), ConfigError);
  TrainConfig().validate();  // defaults are sound
}

TEST(TrainConfig, JsonRoundTripPreservesEveryField) {
  TrainConfig c;
  c.epochs = 42;
  c.batch_size = 3;
  c.lr0 = 5e-4;
  c.lr_drops = {10, 30};
  c.beta1 = 0.85;
  c.beta2 = 0.95;
  c.weight_decay = 1e-5;
  c.seeds = {7, 8};
  c.val_fraction = 0.2;
  c.freeze_encoder = true;
  c.device = "cpu";
  TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_THROW(TrainConfig::from_json({{"epochs", 0}}), ConfigError);
}

// ---------------------------------------------------------------------------
// Weight initialization
// ---------------------------------------------------------------------------

TEST(DecoderInit, SameSeedIsReproducibleAcrossModels) {
  // Two independently constructed models start from different framework
  // noise; seeding the project initializer must erase that difference.
  SegModel a(tiny_spec());
  SegModel b(tiny_spec());
  init_decoder_weights(a, 7);
  init_decoder_weights(b, 7);
  EXPECT_EQ(module_checksum(*a->decoder), module_checksum(*b->decoder));
  EXPECT_TRUE(torch::equal(a->head->weight, b->head->weight));

  init_decoder_weights(b, 8);
  EXPECT_NE(module_checksum(*a->decoder), module_checksum(*b->decoder));
}

TEST(DecoderInit, HiddenConvVarianceTracksFanIn) {
  // Fan-in scaled normal: empirical variance of each large convolution must
  // sit within 10% of 2/fan_in (sampling error at >= 8192 draws is ~1.6%).
  ModelSpec spec;  // default widths give several >= 8192-weight convolutions
  spec.encoder_id = "tiny";
  SegModel model(spec);
  init_decoder_weights(model, 3);
  int checked = 0;
  for (const auto& m : model->decoder->modules(false)) {
    auto* conv = m->as<torch::nn::Conv2d>();
    if (!conv || conv->weight.numel() < 8192) continue;
    const double fan_in = double(conv->weight.numel() / conv->weight.size(0));
    const double expected = 2.0 / fan_in;
    EXPECT_NEAR(weight_variance(conv->weight) / expected, 1.0, 0.10);
    ++checked;
  }
  EXPECT_GE(checked, 3);
}

TEST(DecoderInit, HeadStaysInsideTheXavierRange) {
  ModelSpec spec;
  spec.encoder_id = "tiny";
  SegModel model(spec);
  init_decoder_weights(model, 11);
  torch::Tensor w = model->head->weight;
  const double fan_in = double(w.numel() / w.size(0));
  const double fan_out = double(w.size(0) * w.size(2) * w.size(3));
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  const double observed = max_abs(w);
  EXPECT_LE(observed, bound);
  EXPECT_GT(observed, 0.7 * bound);  // a uniform draw hugging zero would be broken
  if (model->head->bias.defined()) {
    EXPECT_EQ(max_abs(model->head->bias), 0.0);
  }
}

TEST(DecoderInit, NormalizationResetsToIdentity) {
  SegModel model(tiny_spec(Attention::kSCSE));
  {
    // Scribble over every norm layer so the reset is observable.
    torch::NoGradGuard no_grad;
    for (const auto& m : model->decoder->modules(false)) {
      if (auto* bn = m->as<torch::nn::BatchNorm2d>()) {
        bn->weight.fill_(5.0);
        bn->bias.fill_(-2.0);
        bn->running_mean.fill_(3.0);
        bn->running_var.fill_(9.0);
      }
    }
  }
  init_decoder_weights(model, 1);
  int seen = 0;
  for (const auto& m : model->decoder->modules(false)) {
    auto* bn = m->as<torch::nn::BatchNorm2d>();
    if (!bn) continue;
    EXPECT_TRUE(torch::equal(bn->weight, torch::ones_like(bn->weight)));
    EXPECT_TRUE(torch::equal(bn->bias, torch::zeros_like(bn->bias)));
    EXPECT_TRUE(torch::equal(bn->running_mean, torch::zeros_like(bn->running_mean)));
    EXPECT_TRUE(torch::equal(bn->running_var, torch::ones_like(bn->running_var)));
    ++seen;
  }
  EXPECT_GT(seen, 0);
}

// ---------------------------------------------------------------------------
// Validation carve and evaluation
// ---------------------------------------------------------------------------

TEST(SplitTrainVal, CarveIsDeterministicAndSized) {
  Dataset ds = phantom_set(10, 0);
  auto [train1, val1] = split_train_val(ds, 0.2, 5);
  EXPECT_EQ(train1.size(), 8);
  EXPECT_EQ(val1.size(), 2);

  std::set<std::string> stems;
  for (const auto& s : train1.samples()) stems.insert(s.meta.stem);
  for (const auto& s : val1.samples()) stems.insert(s.meta.stem);
  EXPECT_EQ(stems.size(), 10u);  // a partition, nothing lost or duplicated

  auto [train2, val2] = split_train_val(ds, 0.2, 5);
  for (int64_t i = 0; i < val1.size(); ++i) {
    EXPECT_EQ(val1.at(i).meta.stem, val2.at(i).meta.stem);
  }

  auto [train3, val3] = split_train_val(ds, 0.0, 5);
  EXPECT_EQ(train3.size(), 10);
  EXPECT_TRUE(val3.empty());
}

TEST(EvaluateModel, ProducesBoundedScoresAndPerImageRows) {
  Dataset ds = phantom_set(3, 0);
  SegModel model(tiny_spec());
  init_decoder_weights(model, 1);
  std::vector<MetricReport> rows;
  MetricReport mean = evaluate_model(model, ds, 2, torch::kCPU, &rows);
  EXPECT_EQ(rows.size(), 3u);
  EXPECT_EQ(mean.names, class_names(kNumClasses));
  EXPECT_GE(mean.gds, 0.0);
  EXPECT_LE(mean.gds, 1.0);
  EXPECT_GE(mean.overall_dsc, 0.0);
  EXPECT_LE(mean.overall_dsc, 1.0);

  Dataset empty;
  EXPECT_THROW(evaluate_model(model, empty, 2, torch::kCPU), DataError);
}

// ---------------------------------------------------------------------------
// Aggregation arithmetic
// ---------------------------------------------------------------------------

TEST(MeanStd, MatchesHandComputedTriplicate) {
  auto [mean, std] = mean_std({0.8, 0.9, 1.0});
  EXPECT_NEAR(mean, kTriplicateMean, 1e-12);
  EXPECT_NEAR(std, kTriplicateStd, 1e-12);

  auto [m1, s1] = mean_std({0.5});
  EXPECT_DOUBLE_EQ(m1, 0.5);
  EXPECT_DOUBLE_EQ(s1, 0.0);

  EXPECT_THROW(mean_std({}), std::invalid_argument);
}

TEST(SummarizeMetricReports, AggregatesEachColumnAcrossRuns) {
  MetricReport a, b;
  a.names = b.names = class_names(kNumClasses);
  a.per_class = {{0.9, 0.9, 0.9}, {0.8, 0.7, 0.6}, {0.5, 0.5, 0.5}};
  b.per_class = {{1.0, 0.9, 0.9}, {0.6, 0.7, 0.6}, {0.5, 0.5, 0.5}};
  a.overall_dsc = 0.8;
  b.overall_dsc = 0.6;
  a.gds = 0.7;
  b.gds = 0.9;
  auto stats = summarize_metric_reports({a, b});
  EXPECT_NEAR(stats.at("dsc_artery").first, 0.7, 1e-12);
  EXPECT_NEAR(stats.at("dsc_artery").second, 0.1, 1e-12);
  EXPECT_NEAR(stats.at("dsc_overall").first, 0.7, 1e-12);
  EXPECT_NEAR(stats.at("gds").first, 0.8, 1e-12);
  EXPECT_NEAR(stats.at("precision_background").second, 0.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Training runs
// ---------------------------------------------------------------------------

TEST(Training, SameSeedReproducesTheRunExactly) {
  torch::set_num_threads(1);  // rule out reduction-order noise
  Dataset ds = phantom_set(4, 1);
  TrainConfig cfg = quick_cfg(2);
  AugmentationPolicy policy = zero_policy(1);

  // Encoder weights are drawn at construction; identical runs must start
  // from identical framework RNG state.
  torch::manual_seed(7);
  SegModel m1(tiny_spec());
  torch::manual_seed(7);
  SegModel m2(tiny_spec());
  RunRecord r1 = train_model(m1, ds, cfg, LossConfig{}, policy, 9);
  RunRecord r2 = train_model(m2, ds, cfg, LossConfig{}, policy, 9);

  ASSERT_EQ(r1.epochs.size(), r2.epochs.size());
  for (size_t e = 0; e < r1.epochs.size(); ++e) {
    EXPECT_DOUBLE_EQ(r1.epochs[e].train_loss, r2.epochs[e].train_loss);
    EXPECT_DOUBLE_EQ(r1.epochs[e].val_gds, r2.epochs[e].val_gds);
  }
  EXPECT_EQ(r1.val_stems, r2.val_stems);
  EXPECT_EQ(module_checksum(*m1), module_checksum(*m2));
  EXPECT_EQ(r1.best_epoch, r2.best_epoch);
}

TEST(Training, LossFallsOnASmallFixture) {
  Dataset ds = phantom_set(6, 0);
  TrainConfig cfg = quick_cfg(12);
  SegModel model(tiny_spec());
  RunRecord r = train_model(model, ds, cfg, LossConfig{}, zero_policy(0), 1);

  ASSERT_EQ(r.epochs.size(), 12u);
  double head = 0, tail = 0;
  for (int e = 0; e < 3; ++e) head += r.epochs[size_t(e)].train_loss;
  for (int e = 9; e < 12; ++e) tail += r.epochs[size_t(e)].train_loss;
  EXPECT_LT(tail, head) << "mean loss over the last three epochs should undercut the first three";
  EXPECT_GE(r.best_val_gds, r.epochs.front().val_gds);
  EXPECT_FALSE(r.has_test);
  EXPECT_GT(r.wall_seconds, 0.0);
}

TEST(Training, FrozenEncoderNeverMoves) {
  Dataset ds = phantom_set(4, 0);
  TrainConfig cfg = quick_cfg(2);

  cfg.freeze_encoder = true;
  SegModel frozen(tiny_spec());
  RunRecord rf = train_model(frozen, ds, cfg, LossConfig{}, zero_policy(0), 2);
  EXPECT_EQ(rf.encoder_checksum_before, rf.encoder_checksum_after);

  cfg.freeze_encoder = false;
  SegModel thawed(tiny_spec());
  RunRecord rt = train_model(thawed, ds, cfg, LossConfig{}, zero_policy(0), 2);
  EXPECT_NE(rt.encoder_checksum_before, rt.encoder_checksum_after);
}

TEST(Training, LossMixWeightChangesTheOutcome) {
  Dataset ds = phantom_set(4, 0);
  TrainConfig cfg = quick_cfg(2);
  LossConfig dice_only;
  dice_only.lambda = 0.0;
  LossConfig mixed;  // default lambda = 1

  SegModel a(tiny_spec());
  SegModel b(tiny_spec());
  train_model(a, ds, cfg, dice_only, zero_policy(0), 5);
  train_model(b, ds, cfg, mixed, zero_policy(0), 5);
  EXPECT_NE(module_checksum(*a->decoder), module_checksum(*b->decoder));
}

TEST(Training, ValidatesSplitAndDevice) {
  Dataset only_test = phantom_set(0, 2);
  SegModel model(tiny_spec());
  EXPECT_THROW(
      train_model(model, only_test, quick_cfg(1), LossConfig{}, zero_policy(0), 1),
      DataError);

  Dataset ds = phantom_set(2, 0);
  TrainConfig cfg = quick_cfg(1);
  cfg.device = "warp-core";
  EXPECT_THROW(train_model(model, ds, cfg, LossConfig{}, zero_policy(0), 1), ConfigError);
}

TEST(Training, DivergenceAbortsWithDiagnostics) {
  // An absurd learning rate sends the weights to infinity after one step;
  // the loop must fail loudly and leave the offending batch on disk.
  Dataset ds = phantom_set(4, 0);
  TrainConfig cfg = quick_cfg(1);
  cfg.lr0 = 1e30;
  auto out = fresh_dir("diverge");
  SegModel model(tiny_spec());
  try {
    train_model(model, ds, cfg, LossConfig{}, zero_policy(0), 1, out);
    FAIL() << "a 1e30 learning rate should not converge";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
    EXPECT_TRUE(std::filesystem::exists(out / "diagnostic_batch.pt"));
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST(Checkpoints, BestCheckpointReproducesItsValidationScore) {
  Dataset ds = phantom_set(6, 2);
  TrainConfig cfg = quick_cfg(3);
  auto out = fresh_dir("best_ckpt");
  SegModel model(tiny_spec());
  RunRecord r = train_model(model, ds, cfg, LossConfig{}, zero_policy(0), 4, out);

  nlohmann::json manifest;
  SegModel restored = load_checkpoint(out / "checkpoints" / "best", &manifest);
  EXPECT_EQ(manifest.at("epoch").get<int64_t>(), r.best_epoch);
  EXPECT_EQ(manifest.at("seed").get<uint64_t>(), 4u);

  // Rebuild the carve the run scored against and re-measure.
  Dataset val;
  for (const std::string& stem : r.val_stems) {
    for (const auto& s : ds.samples()) {
      if (s.meta.stem == stem) val.add(s);
    }
  }
  ASSERT_FALSE(val.empty());
  MetricReport again = evaluate_model(restored, val, cfg.batch_size, torch::kCPU);
  EXPECT_NEAR(again.gds, r.best_val_gds, 1e-6);
  EXPECT_NEAR(manifest.at("val_gds").get<double>(), r.best_val_gds, 1e-12);

  // The returned model already carries the best weights.
  MetricReport in_memory = evaluate_model(model, val, cfg.batch_size, torch::kCPU);
  EXPECT_NEAR(in_memory.gds, r.best_val_gds, 1e-6);

  EXPECT_TRUE(std::filesystem::exists(out / "checkpoints" / "last" / "weights.pt"));
  EXPECT_TRUE(std::filesystem::exists(out / "record.csv"));
  EXPECT_TRUE(std::filesystem::exists(out / "summary.json"));
}

TEST(Checkpoints, RejectsMissingOrMismatchedArtifacts) {
  EXPECT_THROW(load_checkpoint(fresh_dir("no_such_ckpt")), DataError);

  // Version from the future.
  auto dir = fresh_dir("bad_version");
  SegModel model(tiny_spec());
  save_checkpoint(model, dir, {});
  nlohmann::json manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  manifest["version"] = 99;
  write_text_file(dir / "manifest.json", manifest.dump());
  EXPECT_THROW(load_checkpoint(dir), DataError);

  // Weights that disagree with the declared architecture.
  auto dir2 = fresh_dir("shape_mismatch");
  save_checkpoint(model, dir2, {});
  nlohmann::json m2 = nlohmann::json::parse(read_text_file(dir2 / "manifest.json"));
  m2["model"]["encoder_widths"] = {8, 8, 8, 8, 8};
  write_text_file(dir2 / "manifest.json", m2.dump());
  EXPECT_THROW(load_checkpoint(dir2), DataError);
}

// ---------------------------------------------------------------------------
// Repeated runs
// ---------------------------------------------------------------------------

TEST(Triplicate, AggregatesSeedsAndRequiresATestSplit) {
  Dataset ds = phantom_set(4, 2);
  TrainConfig cfg = quick_cfg(2);
  cfg.seeds = {1, 2};
  auto out = fresh_dir("triplicate");
  TriplicateResult res =
      run_triplicate(tiny_spec(), ds, cfg, LossConfig{}, zero_policy(0), out);

  ASSERT_EQ(res.runs.size(), 2u);
  EXPECT_TRUE(res.warning.empty());
  EXPECT_TRUE(res.runs[0].has_test);
  EXPECT_NE(res.runs[0].seed, res.runs[1].seed);
  const auto [gds_mean, gds_std] = res.stats.at("gds");
  EXPECT_NEAR(gds_mean, (res.runs[0].final_test.gds + res.runs[1].final_test.gds) / 2, 1e-12);
  EXPECT_GE(gds_std, 0.0);
  EXPECT_TRUE(std::filesystem::exists(out / "seed_1" / "summary.json"));
  EXPECT_TRUE(std::filesystem::exists(out / "seed_2" / "summary.json"));

  cfg.seeds = {1};
  TriplicateResult solo = run_triplicate(tiny_spec(), ds, cfg, LossConfig{}, zero_policy(0));
  EXPECT_FALSE(solo.warning.empty());
  EXPECT_DOUBLE_EQ(solo.stats.at("gds").second, 0.0);

  Dataset no_test = phantom_set(4, 0);
  EXPECT_THROW(run_triplicate(tiny_spec(), no_test, cfg, LossConfig{}, zero_policy(0)),
               DataError);
}

TEST(RunRecord, SerializesCsvAndJson) {
  RunRecord r;
  r.seed = 3;
  r.epochs = {{1, 1e-3, 0.9, 0.5, 0.4}, {2, 1e-3, 0.7, 0.6, 0.5}};
  r.best_epoch = 2;
  r.best_val_gds = 0.6;
  r.val_stems = {"ph1"};
  std::string csv = r.epochs_csv();
  EXPECT_NE(csv.find("epoch,lr,train_loss,val_gds,val_dsc_overall"), std::string::npos);
  EXPECT_NE(csv.find("\n2,"), std::string::npos);
  nlohmann::json j = r.summary_json();
  EXPECT_EQ(j.at("best_epoch"), 2);
  EXPECT_EQ(j.at("epochs_run"), 2u);
  EXPECT_FALSE(j.contains("test"));
}
