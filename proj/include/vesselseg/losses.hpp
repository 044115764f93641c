#pragma once

// Training objective for unbalanced vessel segmentation: penalized
// generalized dice loss plus a weighted focal term.
//
//   GDL   = 1 - GDS
//   pGDL  = GDL / (1 + k * (1 - GDL))          (steeper near convergence)
//   FL    = mean_i -alpha'_i (1 - p'_i)^gamma log(p'_i)
//   total = pGDL + lambda * FL
//
// where p'_i is the predicted probability of pixel i's true class. All
// terms are differentiable w.r.t. the probability map.

#include <torch/torch.h>

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "vesselseg/common.hpp"
#include "vesselseg/metrics.hpp"

namespace vesselseg {

// True-class probabilities are clamped away from {0,1} so the focal log
// stays finite for saturated predictions.
constexpr double kProbClampEps = 1e-7;

enum class WeightPolicy { kOnes, kInverseSquaredArea };

inline std::string to_string(WeightPolicy p) {
  return p == WeightPolicy::kOnes ? "ones" : "inverse_squared_area";
}

inline WeightPolicy weight_policy_from_string(const std::string& s) {
  if (s == "ones") return WeightPolicy::kOnes;
  if (s == "inverse_squared_area") return WeightPolicy::kInverseSquaredArea;
  throw ConfigError("unknown weight policy '" + s + "' (expected 'ones' or 'inverse_squared_area')");
}

struct LossConfig {
  double lambda = 1.0;  // focal term mixing coefficient
  double k = 0.75;      // dice penalization strength
  double gamma = 2.0;   // focal focusing exponent
  double alpha = 0.25;  // focal scale (used when alpha_per_class is empty)
  WeightPolicy weight_policy = WeightPolicy::kInverseSquaredArea;
  std::vector<double> alpha_per_class;  // optional per-class focal scales

  void validate() const {
    if (lambda < 0) throw ConfigError("loss.lambda must be >= 0");
    if (k < 0) throw ConfigError("loss.k must be >= 0");
    if (gamma < 0) throw ConfigError("loss.gamma must be >= 0");
    if (alpha <= 0) throw ConfigError("loss.alpha must be > 0");
    for (double a : alpha_per_class) {
      if (a <= 0) throw ConfigError("loss.alpha_per_class entries must be > 0");
    }
  }

  nlohmann::json to_json() const {
    return {{"lambda", lambda},
            {"k", k},
            {"gamma", gamma},
            {"alpha", alpha},
            {"weight_policy", to_string(weight_policy)},
            {"alpha_per_class", alpha_per_class}};
  }

  static LossConfig from_json(const nlohmann::json& j) {
    LossConfig c;
    c.lambda = j.value("lambda", c.lambda);
    c.k = j.value("k", c.k);
    c.gamma = j.value("gamma", c.gamma);
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("weight_policy")) {
      c.weight_policy = weight_policy_from_string(j.at("weight_policy").get<std::string>());
    }
    if (j.contains("alpha_per_class")) {
      c.alpha_per_class = j.at("alpha_per_class").get<std::vector<double>>();
    }
    c.validate();
    return c;
  }
};

inline torch::Tensor generalized_dice_loss(const torch::Tensor& g, const torch::Tensor& p,
                                           const torch::Tensor& w) {
  return 1.0 - gds_tensor(g, p, w);
}

// Scalar form of the penalty map, exposed for direct verification.
inline double penalized_gdl_value(double gdl, double k) {
  require(k >= 0, "penalized gdl: k must be >= 0");
  return gdl / (1.0 + k * (1.0 - gdl));
}

inline torch::Tensor penalized_gdl(const torch::Tensor& g, const torch::Tensor& p,
                                   const torch::Tensor& w, double k) {
  require(k >= 0, "penalized gdl: k must be >= 0");
  auto l = generalized_dice_loss(g, p, w);
  return l / (1.0 + k * (1.0 - l));
}

// Focal loss over per-pixel true-class probabilities. `alpha` may be a
// scalar (uniform) or a length-C vector applied by each pixel's true class.
inline torch::Tensor focal_loss(const torch::Tensor& g, const torch::Tensor& p, double gamma,
                                const torch::Tensor& alpha) {
  require(g.sizes() == p.sizes(), "focal loss: target and prediction shapes differ");
  require(gamma >= 0, "focal loss: gamma must be >= 0");
  auto pc = flatten_by_class(p);
  auto gc = flatten_by_class(g).to(pc.dtype());
  auto p_true = (gc * pc).sum(0).clamp(kProbClampEps, 1.0 - kProbClampEps);  // [N]
  torch::Tensor a;
  if (alpha.dim() == 0) {
    a = alpha.to(pc.dtype());
  } else {
    require(alpha.dim() == 1 && alpha.size(0) == pc.size(0),
            "focal loss: per-class alpha must have one entry per class");
    a = (alpha.to(pc.dtype()).view({-1, 1}) * gc).sum(0);  // [N]
  }
  return (-a * torch::pow(1.0 - p_true, gamma) * torch::log(p_true)).mean();
}

inline torch::Tensor focal_loss(const torch::Tensor& g, const torch::Tensor& p, double gamma,
                                double alpha) {
  return focal_loss(g, p, gamma, torch::scalar_tensor(alpha, p.dtype()));
}

inline torch::Tensor class_weights_for(const torch::Tensor& g, WeightPolicy policy) {
  auto num_classes = flatten_by_class(g).size(0);
  if (policy == WeightPolicy::kOnes) return torch::ones({num_classes}, torch::kDouble);
  return inverse_area_weights(g);
}

// Full objective. Class weights for the dice term are recomputed from the
// target of each call (i.e. per batch during training).
inline torch::Tensor combined_loss(const torch::Tensor& g, const torch::Tensor& p,
                                   const LossConfig& cfg) {
  cfg.validate();
  auto w = class_weights_for(g, cfg.weight_policy);
  auto dice_term = penalized_gdl(g, p, w, cfg.k);
  torch::Tensor alpha =
      cfg.alpha_per_class.empty()
          ? torch::scalar_tensor(cfg.alpha, p.dtype())
          : torch::tensor(cfg.alpha_per_class, torch::kDouble).to(p.dtype());
  auto focal_term = focal_loss(g, p, cfg.gamma, alpha);
  return dice_term + cfg.lambda * focal_term;
}

}  // namespace vesselseg
