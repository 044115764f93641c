#pragma once

// Segmentation quality measures for multi-class vessel masks: the
// generalized dice score with per-class weighting, hard per-class
// dice/precision/recall, and the per-image MetricReport record.
//
// Tensor conventions:
//   LabelMask      kLong [H,W] (or [B,H,W]) holding class ids
//   OneHotTarget   float [C,H,W] (or [B,C,H,W]) with 0/1 entries
//   ProbMap        float [C,H,W] (or [B,C,H,W]); channels sum to 1 per pixel
// A batch dimension is folded into the pixel axis everywhere, i.e. a batch
// is scored as one large image.

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <string>
#include <vector>

#include "vesselseg/common.hpp"

namespace vesselseg {

constexpr int64_t kNumClasses = 3;
constexpr double kAreaEps = 1e-6;

inline const std::vector<std::string>& default_class_names() {
  static const std::vector<std::string> names = {"background", "artery", "catheter"};
  return names;
}

// Class names used in reports: the clinical triple for 3 classes, generic
// ids otherwise.
inline std::vector<std::string> class_names(int64_t num_classes) {
  require(num_classes > 0, "class_names: num_classes must be positive");
  if (num_classes == kNumClasses) return default_class_names();
  std::vector<std::string> names;
  for (int64_t c = 0; c < num_classes; ++c) names.push_back("class" + std::to_string(c));
  return names;
}

// Flattens to [C, N] with the class axis first. Accepts [C,N], [C,H,W] and
// [B,C,H,W]; for batched input the batch axis is folded into the pixels.
inline torch::Tensor flatten_by_class(const torch::Tensor& t) {
  require(t.dim() >= 2 && t.dim() <= 4, "flatten_by_class: expected 2-4 dims, got " +
                                            std::to_string(t.dim()));
  if (t.dim() == 4) return t.transpose(0, 1).reshape({t.size(1), -1});
  return t.reshape({t.size(0), -1});
}

// LabelMask -> OneHotTarget. [H,W] -> [C,H,W], [B,H,W] -> [B,C,H,W].
inline torch::Tensor one_hot_target(const torch::Tensor& mask, int64_t num_classes,
                             torch::Dtype dtype = torch::kFloat) {
  require(mask.dim() == 2 || mask.dim() == 3, "one_hot: expected [H,W] or [B,H,W] mask");
  require(num_classes > 0, "one_hot: num_classes must be positive");
  auto m = mask.to(torch::kLong);
  if (m.numel() > 0) {
    int64_t lo = m.min().item<int64_t>();
    int64_t hi = m.max().item<int64_t>();
    require(lo >= 0 && hi < num_classes,
            "one_hot: label " + std::to_string(lo < 0 ? lo : hi) + " outside [0, " +
                std::to_string(num_classes) + ")");
  }
  auto oh = torch::one_hot(m, num_classes);  // [..., C]
  int64_t class_dim = mask.dim() == 2 ? 0 : 1;
  return oh.movedim(-1, class_dim).to(dtype).contiguous();
}

// Inverse squared-area class weights computed from the reference mask:
// w_c = 1 / (area_c^2 + eps) for classes present, exactly 0 for absent
// classes so they cannot contribute spurious perfect-overlap credit.
// Always returned as float64; callers cast as needed.
inline torch::Tensor inverse_area_weights(const torch::Tensor& g) {
  auto area = flatten_by_class(g).to(torch::kDouble).sum(1);  // [C]
  auto w = 1.0 / (area * area + kAreaEps);
  return torch::where(area > 0, w, torch::zeros_like(w));
}

// Generalized dice score as a differentiable 0-dim tensor:
//   GDS = 2 * sum_c w_c sum_i g_ci p_ci / sum_c w_c sum_i (g_ci + p_ci).
// The weights are treated as constants (detached).
inline torch::Tensor gds_tensor(const torch::Tensor& g, const torch::Tensor& p,
                                const torch::Tensor& w) {
  require(g.sizes() == p.sizes(), "gds: target and prediction shapes differ");
  auto pc = flatten_by_class(p);
  auto gc = flatten_by_class(g).to(pc.dtype());
  require(w.dim() == 1 && w.size(0) == pc.size(0),
          "gds: weight vector must have one entry per class");
  auto wv = w.detach().to(pc.dtype());
  auto num = (wv * (gc * pc).sum(1)).sum();
  auto den = (wv * (gc + pc).sum(1)).sum();
  require(den.item<double>() > 0,
          "gds: weighted denominator is zero (no class mass under nonzero weights)");
  return 2.0 * num / den;
}

inline double generalized_dice_score(const torch::Tensor& g, const torch::Tensor& p,
                                     const torch::Tensor& w) {
  torch::NoGradGuard no_grad;
  return gds_tensor(g.to(torch::kDouble), p.to(torch::kDouble),
                    w.to(torch::kDouble)).item<double>();
}

struct ClassScores {
  double dsc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Hard per-class scores from a label prediction against a one-hot target.
// Degenerate denominators resolve by presence: a class absent from both the
// target and the prediction scores 1.0 (nothing to find, nothing found
// wrongly); a zero denominator with the class present on the other side
// scores 0.0.
inline std::vector<ClassScores> dice_per_class(const torch::Tensor& g,
                                               const torch::Tensor& pred) {
  require(g.dim() == 3, "dice_per_class: target must be [C,H,W]");
  require(pred.dim() == 2, "dice_per_class: prediction must be [H,W]");
  require(g.size(1) == pred.size(0) && g.size(2) == pred.size(1),
          "dice_per_class: spatial shapes differ");
  torch::NoGradGuard no_grad;
  int64_t num_classes = g.size(0);
  auto gc = flatten_by_class(g).to(torch::kDouble);
  auto pc = flatten_by_class(one_hot_target(pred, num_classes, torch::kDouble));
  auto tp = (gc * pc).sum(1);
  auto g_area = gc.sum(1);
  auto p_area = pc.sum(1);
  std::vector<ClassScores> out(static_cast<size_t>(num_classes));
  for (int64_t c = 0; c < num_classes; ++c) {
    double tpc = tp[c].item<double>();
    double ga = g_area[c].item<double>();
    double pa = p_area[c].item<double>();
    ClassScores& s = out[size_t(c)];
    bool absent_everywhere = (ga == 0.0 && pa == 0.0);
    s.dsc = (ga + pa) > 0 ? 2.0 * tpc / (ga + pa) : (absent_everywhere ? 1.0 : 0.0);
    s.precision = pa > 0 ? tpc / pa : (ga == 0.0 ? 1.0 : 0.0);
    s.recall = ga > 0 ? tpc / ga : (pa == 0.0 ? 1.0 : 0.0);
  }
  return out;
}

// Per-image evaluation record. `overall_dsc` is the unweighted generalized
// dice of the hardened prediction (all-class micro dice); `gds` uses
// inverse squared-area weights from the target.
struct MetricReport {
  std::vector<std::string> names;
  std::vector<ClassScores> per_class;
  double overall_dsc = 0.0;
  double gds = 0.0;

  static std::string csv_header(const std::vector<std::string>& names) {
    std::vector<std::string> cols;
    for (const auto& n : names) cols.push_back("dsc_" + n);
    for (const auto& n : names) cols.push_back("precision_" + n);
    for (const auto& n : names) cols.push_back("recall_" + n);
    cols.push_back("dsc_overall");
    cols.push_back("gds");
    return join(cols, ",");
  }

  std::string csv_header() const { return csv_header(names); }

  std::string csv_row() const {
    std::vector<std::string> cols;
    for (const auto& s : per_class) cols.push_back(format_double(s.dsc));
    for (const auto& s : per_class) cols.push_back(format_double(s.precision));
    for (const auto& s : per_class) cols.push_back(format_double(s.recall));
    cols.push_back(format_double(overall_dsc));
    cols.push_back(format_double(gds));
    return join(cols, ",");
  }

  nlohmann::json to_json() const {
    nlohmann::json per;
    for (size_t c = 0; c < per_class.size(); ++c) {
      per[names[c]] = {{"dsc", per_class[c].dsc},
                       {"precision", per_class[c].precision},
                       {"recall", per_class[c].recall}};
    }
    return {{"per_class", per}, {"dsc_overall", overall_dsc}, {"gds", gds}};
  }
};

// Scores one probability map against a one-hot target. The prediction is
// hardened by per-pixel argmax (ties resolve to the lowest class index).
inline MetricReport evaluate_image(const torch::Tensor& g, const torch::Tensor& p) {
  require(g.dim() == 3 && p.dim() == 3, "evaluate_image: expected [C,H,W] tensors");
  require(g.sizes() == p.sizes(), "evaluate_image: target and prediction shapes differ");
  torch::NoGradGuard no_grad;
  auto gd = g.to(torch::kDouble);
  auto pred = p.argmax(0);
  auto pred_oh = one_hot_target(pred, g.size(0), torch::kDouble);
  MetricReport r;
  r.names = class_names(g.size(0));
  r.per_class = dice_per_class(gd, pred);
  r.overall_dsc = generalized_dice_score(gd, pred_oh, torch::ones({g.size(0)}, torch::kDouble));
  r.gds = generalized_dice_score(gd, pred_oh, inverse_area_weights(gd));
  return r;
}

// Field-wise mean of several reports (dataset-level aggregation).
inline MetricReport mean_report(const std::vector<MetricReport>& reports) {
  require(!reports.empty(), "mean_report: no reports to aggregate");
  MetricReport m;
  m.names = reports.front().names;
  m.per_class.assign(reports.front().per_class.size(), ClassScores{});
  for (const auto& r : reports) {
    require(r.per_class.size() == m.per_class.size(), "mean_report: class counts differ");
    for (size_t c = 0; c < m.per_class.size(); ++c) {
      m.per_class[c].dsc += r.per_class[c].dsc;
      m.per_class[c].precision += r.per_class[c].precision;
      m.per_class[c].recall += r.per_class[c].recall;
    }
    m.overall_dsc += r.overall_dsc;
    m.gds += r.gds;
  }
  double n = double(reports.size());
  for (auto& s : m.per_class) {
    s.dsc /= n;
    s.precision /= n;
    s.recall /= n;
  }
  m.overall_dsc /= n;
  m.gds /= n;
  return m;
}

}  // namespace vesselseg
