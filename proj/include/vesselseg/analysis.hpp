#pragma once

// Analytic cost accounting and accuracy/cost trade-off tooling.
//
// Parameter counts are exact (trainable and frozen reported separately).
// MACs are counted for convolutions and linear layers only; normalization,
// activations and pooling are excluded. FLOPs = 2 * MACs.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "vesselseg/common.hpp"

namespace vesselseg {

struct LayerCost {
  std::string path;  // slash-separated module path, e.g. "decoder/x0_1/expand"
  std::string kind;  // "conv" | "linear" | "batchnorm"
  int64_t params = 0;
  int64_t macs = 0;
  bool frozen = false;
};

// Modules append their layers while walking the architecture with the
// running spatial size; totals are derived afterwards.
struct CostLedger {
  std::vector<LayerCost> items;

  void add_conv(const std::string& path, int64_t in_ch, int64_t out_ch, int64_t kernel,
                int64_t out_h, int64_t out_w, int64_t groups = 1, bool bias = false,
                bool frozen = false) {
    require(groups >= 1 && in_ch % groups == 0, "cost ledger: groups must divide in channels");
    int64_t weights = out_ch * (in_ch / groups) * kernel * kernel;
    items.push_back({path, "conv", weights + (bias ? out_ch : 0), weights * out_h * out_w, frozen});
  }

  void add_linear(const std::string& path, int64_t in_features, int64_t out_features,
                  bool bias = true, bool frozen = false) {
    int64_t weights = in_features * out_features;
    items.push_back({path, "linear", weights + (bias ? out_features : 0), weights, frozen});
  }

  // BN carries 2*C trainable parameters and no counted MACs.
  void add_batchnorm(const std::string& path, int64_t channels, bool frozen = false) {
    items.push_back({path, "batchnorm", 2 * channels, 0, frozen});
  }
};

struct CostReport {
  int64_t params_trainable = 0;
  int64_t params_frozen = 0;
  int64_t macs = 0;
  int64_t flops = 0;
  std::vector<LayerCost> items;

  static CostReport from_ledger(const CostLedger& ledger) {
    CostReport r;
    r.items = ledger.items;
    for (const auto& it : r.items) {
      (it.frozen ? r.params_frozen : r.params_trainable) += it.params;
      r.macs += it.macs;
    }
    r.flops = 2 * r.macs;
    return r;
  }

  int64_t params_total() const { return params_trainable + params_frozen; }

  nlohmann::json to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& it : items) {
      layers.push_back({{"path", it.path},
                        {"kind", it.kind},
                        {"params", it.params},
                        {"macs", it.macs},
                        {"frozen", it.frozen}});
    }
    return {{"params_trainable", params_trainable},
            {"params_frozen", params_frozen},
            {"params_total", params_total()},
            {"macs", macs},
            {"flops", flops},
            {"layers", layers}};
  }
};

namespace detail {
inline bool path_has_prefix(const std::string& path, const std::string& prefix) {
  if (path == prefix) return true;
  return path.size() > prefix.size() && path.compare(0, prefix.size(), prefix) == 0 &&
         path[prefix.size()] == '/';
}
}  // namespace detail

// Totals restricted to one subtree of the module path (e.g. "decoder").
inline int64_t sum_flops(const CostReport& report, const std::string& prefix) {
  int64_t macs = 0;
  for (const auto& it : report.items) {
    if (detail::path_has_prefix(it.path, prefix)) macs += it.macs;
  }
  return 2 * macs;
}

inline int64_t sum_params(const CostReport& report, const std::string& prefix) {
  int64_t params = 0;
  for (const auto& it : report.items) {
    if (detail::path_has_prefix(it.path, prefix)) params += it.params;
  }
  return params;
}

// -------------------------------------------------------------------------
// Pareto frontier over (cost, quality) points.
// -------------------------------------------------------------------------

struct ParetoPoint {
  std::string label;
  double flops = 0.0;
  double gds = 0.0;
  double params = 0.0;  // carried along for reports, not part of dominance
};

// Point a dominates b when a.flops <= b.flops and a.gds >= b.gds with at
// least one strict inequality. Returns the non-dominated points sorted by
// ascending flops; points tied on both axes are all kept (input order).
inline std::vector<ParetoPoint> pareto_frontier(const std::vector<ParetoPoint>& points) {
  require(!points.empty(), "pareto_frontier: empty point set");
  std::vector<size_t> order(points.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (points[a].flops != points[b].flops) return points[a].flops < points[b].flops;
    return points[a].gds > points[b].gds;
  });

  std::vector<ParetoPoint> frontier;
  double best_gds = -std::numeric_limits<double>::infinity();
  size_t i = 0;
  while (i < order.size()) {
    // One group of equal-flops points at a time.
    size_t j = i;
    double flops = points[order[i]].flops;
    double group_best = -std::numeric_limits<double>::infinity();
    while (j < order.size() && points[order[j]].flops == flops) {
      group_best = std::max(group_best, points[order[j]].gds);
      ++j;
    }
    if (group_best > best_gds) {
      // Cheaper groups all scored strictly below; keep every point that
      // attains the group maximum (equal-cost, equal-quality ties survive).
      for (size_t k = i; k < j; ++k) {
        if (points[order[k]].gds == group_best) frontier.push_back(points[order[k]]);
      }
      best_gds = group_best;
    }
    i = j;
  }
  return frontier;
}

}  // namespace vesselseg
