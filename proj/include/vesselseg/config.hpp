// Experiment configuration: one JSON file describes one run cell (model,
// optimization, loss, data source, output location).  Parsing is strict --
// unknown keys anywhere in the tree are rejected by their dotted path, so a
// typo like "loss.gama" fails before any work starts.  Command lines may
// override individual values through the same dotted paths.

#pragma once

#include <torch/version.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "vesselseg/common.hpp"
#include "vesselseg/data.hpp"
#include "vesselseg/losses.hpp"
#include "vesselseg/model.hpp"
#include "vesselseg/training.hpp"

namespace vesselseg {

inline constexpr const char* kLibraryVersion = "0.1.0";

// Where pretrained encoder weights are cached when an external source
// provides them; nothing is ever bundled with the library.
inline std::filesystem::path weight_cache_dir() {
  if (const char* env = std::getenv("VESSELSEG_WEIGHT_CACHE")) {
    return std::filesystem::path(env);
  }
  if (const char* home = std::getenv("HOME")) {
    return std::filesystem::path(home) / ".cache" / "vesselseg";
  }
  return std::filesystem::temp_directory_path() / "vesselseg-weights";
}

struct DataConfig {
  std::string dir;  // dataset root: images/, masks/, meta.csv; commands that
                    // consume data reject an empty value
  AugmentationPolicy policy;

  void validate() const { policy.validate(); }

  nlohmann::json to_json() const { return {{"dir", dir}, {"policy", policy.to_json()}}; }

  static DataConfig from_json(const nlohmann::json& j) {
    DataConfig c;
    c.dir = j.value("dir", c.dir);
    if (j.contains("policy")) c.policy = AugmentationPolicy::from_json(j.at("policy"));
    c.validate();
    return c;
  }
};

namespace configdetail {

// Key whitelist, mirroring the nested from_json readers.  A node with
// children accepts exactly those keys; a leaf accepts any JSON value (the
// typed readers validate the contents).
struct SchemaNode {
  std::map<std::string, SchemaNode> children;
  bool is_leaf() const { return children.empty(); }
};

inline const SchemaNode& experiment_schema() {
  static const SchemaNode schema = [] {
    SchemaNode leaf;
    SchemaNode block;
    block.children = {{"bottleneck_ratio", leaf}, {"groups", leaf}, {"squeeze_ratio", leaf}};
    SchemaNode model;
    model.children = {{"encoder", leaf},   {"decoder_family", leaf},
                      {"decoder_widths", leaf}, {"attention", leaf},
                      {"num_classes", leaf},  {"encoder_widths", leaf},
                      {"block", block}};
    SchemaNode train;
    train.children = {{"epochs", leaf},       {"batch_size", leaf},
                      {"lr0", leaf},          {"lr_drops", leaf},
                      {"beta1", leaf},        {"beta2", leaf},
                      {"weight_decay", leaf}, {"seeds", leaf},
                      {"val_fraction", leaf}, {"freeze_encoder", leaf},
                      {"device", leaf}};
    SchemaNode loss;
    loss.children = {{"lambda", leaf}, {"k", leaf},
                     {"gamma", leaf},  {"alpha", leaf},
                     {"weight_policy", leaf}, {"alpha_per_class", leaf}};
    SchemaNode policy;
    policy.children = {{"rotation_deg", leaf},
                       {"shift_frac", leaf},
                       {"zoom_frac", leaf},
                       {"brightness_frac", leaf},
                       {"copies_per_sample", leaf}};
    SchemaNode data;
    data.children = {{"dir", leaf}, {"policy", policy}};
    SchemaNode root;
    root.children = {{"model", model}, {"train", train},   {"loss", loss},
                     {"data", data},   {"out_dir", leaf},  {"seed", leaf}};
    return root;
  }();
  return schema;
}

inline void reject_unknown_keys(const nlohmann::json& j, const SchemaNode& node,
                                const std::string& prefix) {
  if (node.is_leaf() || !j.is_object()) return;
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto found = node.children.find(it.key());
    if (found == node.children.end()) {
      throw ConfigError("unknown config key '" + prefix + it.key() + "'");
    }
    reject_unknown_keys(it.value(), found->second, prefix + it.key() + ".");
  }
}

}  // namespace configdetail

struct ExperimentConfig {
  ModelSpec model;
  TrainConfig train;
  LossConfig loss;
  DataConfig data;
  std::string out_dir = "runs/run";
  uint64_t seed = 1;

  void validate() const {
    model.validate();
    train.validate();
    loss.validate();
    data.validate();
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  }

  nlohmann::json to_json() const {
    return {{"model", model.to_json()}, {"train", train.to_json()}, {"loss", loss.to_json()},
            {"data", data.to_json()},   {"out_dir", out_dir},       {"seed", seed}};
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    configdetail::reject_unknown_keys(j, configdetail::experiment_schema(), "");
    ExperimentConfig c;
    try {
      if (j.contains("model")) c.model = ModelSpec::from_json(j.at("model"));
      if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
      if (j.contains("loss")) c.loss = LossConfig::from_json(j.at("loss"));
      if (j.contains("data")) c.data = DataConfig::from_json(j.at("data"));
      c.out_dir = j.value("out_dir", c.out_dir);
      c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config value has the wrong type: ") + e.what());
    }
    c.validate();
    return c;
  }
};

// Reads and parses a config file; parse failures carry the file name.
inline nlohmann::json load_config_json(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.what());
  }
  nlohmann::json j = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  return j;
}

// Applies `--a.b.c value` style overrides onto the raw JSON tree.  The value
// is parsed as JSON when possible ("0.5", "[1,2]", "true"), otherwise taken
// as a bare string ("scse"), so users need no shell-quoted quotes.
inline void apply_override(nlohmann::json& j, const std::string& dotted,
                           const std::string& value) {
  const std::vector<std::string> parts = split(dotted, '.');
  nlohmann::json* node = &j;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].empty()) {
      throw ConfigError("override key '" + dotted + "' has an empty path segment");
    }
    if (i + 1 == parts.size()) break;
    node = &((*node)[parts[i]]);
    if (!node->is_object() && !node->is_null()) {
      throw ConfigError("override key '" + dotted + "' descends into a non-object value");
    }
  }
  nlohmann::json parsed = nlohmann::json::parse(value, nullptr, /*allow_exceptions=*/false);
  (*node)[parts.back()] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
}

// Leftover command-line tokens as (dotted key, value) pairs: accepts
// "--a.b=v" and "--a.b v".
inline std::vector<std::pair<std::string, std::string>> parse_override_args(
    const std::vector<std::string>& args) {
  std::vector<std::pair<std::string, std::string>> out;
  for (size_t i = 0; i < args.size(); ++i) {
    const std::string& tok = args[i];
    if (tok.rfind("--", 0) != 0 || tok.size() <= 2) {
      throw ConfigError("unexpected argument '" + tok + "' (overrides look like --loss.k 0)");
    }
    const std::string body = tok.substr(2);
    const size_t eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= args.size()) {
        throw ConfigError("override '" + tok + "' is missing a value");
      }
      out.emplace_back(body, args[++i]);
    }
  }
  return out;
}

// Snapshot of the software stack a run executed under, stored with its
// artifacts so results can be traced back to the code that made them.
inline nlohmann::json environment_manifest() {
  return {{"library_version", kLibraryVersion},
          {"torch_version", TORCH_VERSION},
          {"build_type",
#ifdef NDEBUG
           "release"
#else
           "debug"
#endif
          },
          {"hardware_threads", std::thread::hardware_concurrency()},
          {"weight_cache", weight_cache_dir().string()}};
}

}  // namespace vesselseg
