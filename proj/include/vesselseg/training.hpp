// Optimization protocol: decoder initialization, Adam with a step schedule,
// epoch loop over augmented streams, best-validation checkpointing, and
// repeated runs aggregated as mean ± population std.
//
// Determinism: decoder weights are drawn from the project RNG (not the
// framework's), augmentation seeds derive from (seed, epoch, sample, copy),
// and checkpoints restore bit-exact parameter state, so two runs with the
// same seed on the same device produce identical records wherever the
// platform's kernels are deterministic.

#pragma once

#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vesselseg/common.hpp"
#include "vesselseg/data.hpp"
#include "vesselseg/losses.hpp"
#include "vesselseg/metrics.hpp"
#include "vesselseg/model.hpp"

namespace vesselseg {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  int64_t epochs = 150;
  int64_t batch_size = 8;
  double lr0 = 1e-3;
  std::vector<int64_t> lr_drops = {50, 100};  // rate divides by 10 at each, 1-indexed
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  std::vector<uint64_t> seeds = {1, 2, 3};
  double val_fraction = 0.10;  // carved from the training split for checkpoint selection
  bool freeze_encoder = false;
  std::string device = "cpu";

  void validate() const {
    if (epochs <= 0) throw ConfigError("train.epochs must be > 0");
    if (batch_size <= 0) throw ConfigError("train.batch_size must be > 0");
    if (!(lr0 > 0)) throw ConfigError("train.lr0 must be > 0");
    for (size_t i = 0; i < lr_drops.size(); ++i) {
      if (lr_drops[i] < 1 || lr_drops[i] > epochs) {
        throw ConfigError("train.lr_drops entries must lie in [1, epochs]");
      }
      if (i > 0 && lr_drops[i] <= lr_drops[i - 1]) {
        throw ConfigError("train.lr_drops must be strictly increasing");
      }
    }
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
      throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
    }
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
    if (seeds.empty()) throw ConfigError("train.seeds must list at least one seed");
    if (!(val_fraction >= 0 && val_fraction < 1)) {
      throw ConfigError("train.val_fraction must lie in [0, 1)");
    }
  }

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"lr0", lr0},
            {"lr_drops", lr_drops},
            {"beta1", beta1},
            {"beta2", beta2},
            {"weight_decay", weight_decay},
            {"seeds", seeds},
            {"val_fraction", val_fraction},
            {"freeze_encoder", freeze_encoder},
            {"device", device}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr0 = j.value("lr0", c.lr0);
    if (j.contains("lr_drops")) c.lr_drops = j.at("lr_drops").get<std::vector<int64_t>>();
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.freeze_encoder = j.value("freeze_encoder", c.freeze_encoder);
    c.device = j.value("device", c.device);
    c.validate();
    return c;
  }
};

// Piecewise-constant schedule: the rate divides by 10 starting AT each drop
// epoch (1-indexed).
inline double lr_at(int64_t epoch, const TrainConfig& cfg) {
  require(epoch >= 1 && epoch <= cfg.epochs, "epoch out of range for the lr schedule");
  double lr = cfg.lr0;
  for (int64_t drop : cfg.lr_drops) {
    if (epoch >= drop) lr /= 10.0;
  }
  return lr;
}

inline torch::Device parse_device(const std::string& name) {
  try {
    return torch::Device(name);
  } catch (const c10::Error&) {
    throw ConfigError("unknown device '" + name + "'");
  }
}

// ---------------------------------------------------------------------------
// Weight initialization
// ---------------------------------------------------------------------------

namespace traindetail {

inline void fill_normal(torch::Tensor& w, double stddev, Rng& rng) {
  float* p = w.data_ptr<float>();
  for (int64_t i = 0; i < w.numel(); ++i) p[i] = float(stddev * rng.normal());
}

inline void fill_uniform(torch::Tensor& w, double bound, Rng& rng) {
  float* p = w.data_ptr<float>();
  for (int64_t i = 0; i < w.numel(); ++i) p[i] = float(rng.uniform(-bound, bound));
}

}  // namespace traindetail

// Hidden decoder convolutions draw from a fan-in scaled normal (variance
// 2/fan_in, the rectifier gain; hardswish layers use the same gain), the
// output head from a symmetric Xavier-uniform range, batch-norm resets to
// scale 1 / shift 0, and biases clear to zero.  The encoder keeps whatever
// weights it arrived with (pretrained or framework-default).  Deterministic
// given the seed.
inline void init_decoder_weights(SegModel& model, uint64_t seed) {
  torch::NoGradGuard no_grad;
  Rng rng(mix_seed({seed, 0x696e6974ull}));
  for (const std::shared_ptr<torch::nn::Module>& m : model->decoder->modules(false)) {
    if (auto* conv = m->as<torch::nn::Conv2d>()) {
      torch::Tensor w = conv->weight;
      const double fan_in = double(w.numel() / w.size(0));
      traindetail::fill_normal(w, std::sqrt(2.0 / fan_in), rng);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* bn = m->as<torch::nn::BatchNorm2d>()) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
      bn->reset_running_stats();
    }
  }
  torch::Tensor hw = model->head->weight;
  const double fan_in = double(hw.numel() / hw.size(0));
  const double fan_out = double(hw.size(0) * hw.size(2) * hw.size(3));
  traindetail::fill_uniform(hw, std::sqrt(6.0 / (fan_in + fan_out)), rng);
  if (model->head->bias.defined()) model->head->bias.zero_();
}

// ---------------------------------------------------------------------------
// Validation carve and evaluation
// ---------------------------------------------------------------------------

// Deterministically carves round(fraction * n) samples out of `ds` for
// checkpoint selection.  Returns {train, val}.
inline std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double fraction,
                                                   uint64_t seed) {
  require(fraction >= 0 && fraction < 1, "validation fraction must lie in [0, 1)");
  std::vector<int64_t> indices(size_t(ds.size()));
  for (int64_t i = 0; i < ds.size(); ++i) indices[size_t(i)] = i;
  Rng rng(mix_seed({seed, 0x76616cull}));
  deterministic_shuffle(indices, rng);
  const int64_t n_val = int64_t(std::llround(fraction * double(ds.size())));
  Dataset train, val;
  for (int64_t k = 0; k < ds.size(); ++k) {
    (k < n_val ? val : train).add(ds.at(indices[size_t(k)]));
  }
  return {std::move(train), std::move(val)};
}

// Mean metric report over a dataset (optionally also per-image rows).
// Restores the module's training/eval mode before returning.
inline MetricReport evaluate_model(SegModel& model, const Dataset& ds, int64_t batch_size,
                                   torch::Device device,
                                   std::vector<MetricReport>* per_image = nullptr) {
  if (ds.empty()) throw DataError("cannot evaluate an empty dataset");
  require(batch_size > 0, "batch size must be positive");
  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();
  std::vector<MetricReport> reports;
  for (int64_t start = 0; start < ds.size(); start += batch_size) {
    const int64_t n = std::min<int64_t>(batch_size, ds.size() - start);
    std::vector<torch::Tensor> images;
    for (int64_t k = 0; k < n; ++k) images.push_back(ds.at(start + k).image);
    torch::Tensor x =
        torch::stack(images).to(torch::kFloat32).div(255.0).unsqueeze(1).to(device);
    torch::Tensor probs = model->forward(x).to(torch::kCPU);
    for (int64_t k = 0; k < n; ++k) {
      torch::Tensor g = one_hot_target(ds.at(start + k).mask, model->spec.num_classes);
      reports.push_back(evaluate_image(g, probs[k]));
    }
  }
  if (was_training) model->train();
  if (per_image) *per_image = reports;
  return mean_report(reports);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

// A checkpoint is a directory: manifest.json (model/train/loss configs plus
// the epoch and validation snapshot) and weights.pt (all parameters and
// buffers).
inline void save_checkpoint(const SegModel& model, const std::filesystem::path& dir,
                            nlohmann::json manifest) {
  std::filesystem::create_directories(dir);
  manifest["version"] = kCheckpointVersion;
  manifest["model"] = model->spec.to_json();
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  torch::serialize::OutputArchive archive;
  const_cast<SegModel&>(model)->save(archive);
  archive.save_to((dir / "weights.pt").string());
}

inline nlohmann::json read_checkpoint_manifest(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("unreadable checkpoint manifest in " + dir.string() + ": " + e.what());
  }
  if (manifest.value("version", -1) != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version in " + dir.string());
  }
  return manifest;
}

inline SegModel load_checkpoint(const std::filesystem::path& dir,
                                nlohmann::json* manifest_out = nullptr) {
  nlohmann::json manifest = read_checkpoint_manifest(dir);
  ModelSpec spec;
  try {
    spec = ModelSpec::from_json(manifest.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint manifest lacks a usable model spec: " + std::string(e.what()));
  }
  SegModel model(spec);
  // The archive reader resizes destination tensors in place, so a manifest
  // that disagrees with the stored weights would otherwise load silently.
  std::vector<std::pair<std::string, std::vector<int64_t>>> expected;
  for (const auto& item : model->named_parameters()) {
    expected.emplace_back(item.key(), item.value().sizes().vec());
  }
  torch::serialize::InputArchive archive;
  try {
    archive.load_from((dir / "weights.pt").string());
    model->load(archive);
  } catch (const c10::Error& e) {
    throw DataError("checkpoint weights in " + dir.string() +
                    " do not match the declared model: " + e.msg());
  }
  for (const auto& [name, sizes] : expected) {
    if (model->named_parameters()[name].sizes().vec() != sizes) {
      throw DataError("checkpoint weights in " + dir.string() + " have the wrong shape for " +
                      name + " under the declared model spec");
    }
  }
  if (manifest_out) *manifest_out = std::move(manifest);
  return model;
}

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

struct EpochRow {
  int64_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_gds = 0;
  double val_dsc_overall = 0;
};

struct RunRecord {
  uint64_t seed = 0;
  std::vector<EpochRow> epochs;
  int64_t best_epoch = 0;
  double best_val_gds = 0;
  bool has_test = false;
  MetricReport final_test;
  uint64_t encoder_checksum_before = 0;
  uint64_t encoder_checksum_after = 0;
  double wall_seconds = 0;
  std::vector<std::string> val_stems;

  std::string epochs_csv() const {
    std::vector<std::string> lines = {"epoch,lr,train_loss,val_gds,val_dsc_overall"};
    for (const EpochRow& r : epochs) {
      lines.push_back(std::to_string(r.epoch) + "," + format_double(r.lr) + "," +
                      format_double(r.train_loss) + "," + format_double(r.val_gds) + "," +
                      format_double(r.val_dsc_overall));
    }
    return join(lines, "\n") + "\n";
  }

  nlohmann::json summary_json() const {
    nlohmann::json j{{"seed", seed},
                     {"epochs_run", epochs.size()},
                     {"best_epoch", best_epoch},
                     {"best_val_gds", best_val_gds},
                     {"encoder_checksum_before", encoder_checksum_before},
                     {"encoder_checksum_after", encoder_checksum_after},
                     {"wall_seconds", wall_seconds},
                     {"val_stems", val_stems}};
    if (has_test) j["test"] = final_test.to_json();
    return j;
  }
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

// Trains on dataset's "train" split (minus a validation carve used to pick
// the best checkpoint by GDS) and, when a "test" split exists, evaluates the
// best weights on it.  When the validation carve rounds to zero samples the
// training set doubles as the validation set.  With `out_dir` set, writes
// checkpoints/{best,last}, record.csv, and summary.json.  A non-finite loss
// aborts with a diagnostic dump of the offending batch.
inline RunRecord train_model(SegModel& model, const Dataset& dataset, const TrainConfig& tcfg,
                             const LossConfig& lcfg, const AugmentationPolicy& policy,
                             uint64_t seed, const std::filesystem::path& out_dir = {}) {
  tcfg.validate();
  lcfg.validate();
  policy.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const torch::Device device = parse_device(tcfg.device);

  Dataset train_all = dataset.filter_split("train");
  if (train_all.empty()) throw DataError("training split is empty");
  auto [train_ds, val_ds] = split_train_val(train_all, tcfg.val_fraction, seed);
  const Dataset& val_eval = val_ds.empty() ? train_ds : val_ds;
  Dataset test_ds = dataset.filter_split("test");

  torch::manual_seed(int64_t(seed));
  if (tcfg.freeze_encoder) model->freeze_encoder();
  init_decoder_weights(model, seed);
  model->to(device);

  RunRecord record;
  record.seed = seed;
  record.encoder_checksum_before = model->encoder_checksum();
  for (const auto& s : val_eval.samples()) record.val_stems.push_back(s.meta.stem);

  torch::optim::Adam optimizer(model->trainable_parameters(),
                               torch::optim::AdamOptions(tcfg.lr0)
                                   .betas({tcfg.beta1, tcfg.beta2})
                                   .weight_decay(tcfg.weight_decay));

  // Bit-exact snapshot of the best validation state (parameters + buffers).
  std::vector<torch::Tensor> best_state;
  auto capture_best = [&]() {
    best_state.clear();
    for (const auto& p : model->parameters()) best_state.push_back(p.detach().clone());
    for (const auto& b : model->buffers()) best_state.push_back(b.detach().clone());
  };
  auto restore_best = [&]() {
    torch::NoGradGuard no_grad;
    size_t k = 0;
    for (auto& p : model->parameters()) p.copy_(best_state[k++]);
    for (auto& b : model->buffers()) b.copy_(best_state[k++]);
  };

  double best_gds = -1.0;
  for (int64_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, tcfg);
    for (auto& group : optimizer.param_groups()) {
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
    model->train();
    EpochStream stream(train_ds, policy, seed, epoch, tcfg.batch_size);
    double loss_sum = 0;
    int64_t batches = 0;
    while (auto batch = stream.next()) {
      torch::Tensor images = batch->images.to(device);
      torch::Tensor masks = batch->masks.to(device);
      optimizer.zero_grad();
      // Divergence (exploding weights, NaN activations) must fail loudly,
      // with the offending batch preserved for offline inspection.
      auto abort_non_finite = [&](const std::string& what) {
        std::string msg = "non-finite " + what + " at epoch " + std::to_string(epoch) +
                          ", batch " + std::to_string(batches) + "; image range [" +
                          format_double(images.min().item<double>()) + ", " +
                          format_double(images.max().item<double>()) + "]";
        if (!out_dir.empty()) {
          std::filesystem::create_directories(out_dir);
          torch::serialize::OutputArchive dump;
          dump.write("images", images.to(torch::kCPU));
          dump.write("masks", masks.to(torch::kCPU));
          const auto dump_path = out_dir / "diagnostic_batch.pt";
          dump.save_to(dump_path.string());
          msg += "; offending batch saved to " + dump_path.string();
        }
        throw NumericError(msg);
      };
      torch::Tensor probs = model->forward(images);
      if (!probs.isfinite().all().item<bool>()) abort_non_finite("model output");
      torch::Tensor target = one_hot_target(masks, model->spec.num_classes);
      torch::Tensor loss = combined_loss(target, probs, lcfg);
      const double loss_value = loss.item<double>();
      if (!std::isfinite(loss_value)) abort_non_finite("training loss");
      loss.backward();
      optimizer.step();
      loss_sum += loss_value;
      ++batches;
    }

    MetricReport val = evaluate_model(model, val_eval, tcfg.batch_size, device);
    record.epochs.push_back(
        {epoch, lr, batches > 0 ? loss_sum / double(batches) : 0.0, val.gds, val.overall_dsc});
    if (val.gds > best_gds) {
      best_gds = val.gds;
      record.best_epoch = epoch;
      record.best_val_gds = val.gds;
      capture_best();
      if (!out_dir.empty()) {
        save_checkpoint(model, out_dir / "checkpoints" / "best",
                        {{"train", tcfg.to_json()},
                         {"loss", lcfg.to_json()},
                         {"epoch", epoch},
                         {"val_gds", val.gds},
                         {"seed", seed}});
      }
    }
  }

  if (!out_dir.empty()) {
    save_checkpoint(model, out_dir / "checkpoints" / "last",
                    {{"train", tcfg.to_json()},
                     {"loss", lcfg.to_json()},
                     {"epoch", tcfg.epochs},
                     {"val_gds", record.epochs.back().val_gds},
                     {"seed", seed}});
  }
  restore_best();

  if (!test_ds.empty()) {
    record.has_test = true;
    record.final_test = evaluate_model(model, test_ds, tcfg.batch_size, device);
  }
  record.encoder_checksum_after = model->encoder_checksum();
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir / "record.csv", record.epochs_csv());
    write_text_file(out_dir / "summary.json", record.summary_json().dump(2) + "\n");
  }
  return record;
}

// ---------------------------------------------------------------------------
// Repeated runs
// ---------------------------------------------------------------------------

// Mean and population standard deviation.  A single value reports std 0.
inline std::pair<double, double> mean_std(const std::vector<double>& values) {
  require(!values.empty(), "mean_std: no values");
  double mean = 0;
  for (double v : values) mean += v;
  mean /= double(values.size());
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= double(values.size());
  return {mean, std::sqrt(var)};
}

// Per-metric mean/std across repeated runs' reports, keyed by the metric
// report's CSV column names.
inline std::map<std::string, std::pair<double, double>> summarize_metric_reports(
    const std::vector<MetricReport>& reports) {
  require(!reports.empty(), "summarize_metric_reports: no reports");
  std::map<std::string, std::pair<double, double>> out;
  const MetricReport& first = reports.front();
  for (size_t c = 0; c < first.names.size(); ++c) {
    std::vector<double> dsc, precision, recall;
    for (const auto& r : reports) {
      dsc.push_back(r.per_class[c].dsc);
      precision.push_back(r.per_class[c].precision);
      recall.push_back(r.per_class[c].recall);
    }
    out["dsc_" + first.names[c]] = mean_std(dsc);
    out["precision_" + first.names[c]] = mean_std(precision);
    out["recall_" + first.names[c]] = mean_std(recall);
  }
  std::vector<double> overall, gds;
  for (const auto& r : reports) {
    overall.push_back(r.overall_dsc);
    gds.push_back(r.gds);
  }
  out["dsc_overall"] = mean_std(overall);
  out["gds"] = mean_std(gds);
  return out;
}

struct TriplicateResult {
  std::vector<RunRecord> runs;
  std::map<std::string, std::pair<double, double>> stats;  // over final test reports
  std::string warning;  // set when fewer than two runs were requested
};

// Builds a fresh model per configured seed, trains each, and aggregates the
// final test metrics.  Requires a non-empty test split.
inline TriplicateResult run_triplicate(const ModelSpec& spec, const Dataset& dataset,
                                       const TrainConfig& tcfg, const LossConfig& lcfg,
                                       const AugmentationPolicy& policy,
                                       const std::filesystem::path& out_dir = {}) {
  tcfg.validate();
  if (dataset.filter_split("test").empty()) {
    throw DataError("repeated-run aggregation needs a non-empty test split");
  }
  TriplicateResult result;
  if (tcfg.seeds.size() < 2) {
    result.warning = "fewer than two seeds: std is reported as 0";
  }
  std::vector<MetricReport> reports;
  for (uint64_t seed : tcfg.seeds) {
    torch::manual_seed(int64_t(seed));  // encoder construction draws framework noise
    SegModel model(spec);
    std::filesystem::path run_dir =
        out_dir.empty() ? std::filesystem::path{} : out_dir / ("seed_" + std::to_string(seed));
    RunRecord record = train_model(model, dataset, tcfg, lcfg, policy, seed, run_dir);
    reports.push_back(record.final_test);
    result.runs.push_back(std::move(record));
  }
  result.stats = summarize_metric_reports(reports);
  return result;
}

}  // namespace vesselseg
