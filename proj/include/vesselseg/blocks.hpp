#pragma once

// Decoder building blocks.
//
// UnetPPBlock          two 3x3 conv + BN + ReLU refinements (plain family)
// EfficientBlock       residual depthwise bottleneck: 1x1 conv -> BN+hardswish
//                      -> 3x3 grouped (default depthwise) conv -> BN+hardswish
//                      -> recalibration gate -> 1x1 conv -> BN, plus a
//                      residual shortcut (1x1-projected when widths differ)
// ScSE                 concurrent channel (cSE) and spatial (sSE) sigmoid
//                      gates; configurable to either alone or disabled
//
// Every block reports its exact parameter/MAC footprint through add_costs.

#include <torch/torch.h>

#include <cmath>
#include <memory>
#include <string>

#include "vesselseg/analysis.hpp"
#include "vesselseg/common.hpp"

namespace vesselseg {

enum class Attention { kNone, kSE, kSSE, kSCSE };

inline std::string to_string(Attention a) {
  switch (a) {
    case Attention::kNone: return "none";
    case Attention::kSE: return "se";
    case Attention::kSSE: return "sse";
    case Attention::kSCSE: return "scse";
  }
  return "none";
}

inline Attention attention_from_string(const std::string& s) {
  if (s == "none") return Attention::kNone;
  if (s == "se") return Attention::kSE;
  if (s == "sse") return Attention::kSSE;
  if (s == "scse") return Attention::kSCSE;
  throw ConfigError("unknown attention kind '" + s + "' (expected none|se|sse|scse)");
}

struct BlockOptions {
  double bottleneck_ratio = 1.0;  // bottleneck width = round(in * ratio)
  int64_t groups = 0;             // groups of the 3x3 conv; 0 = depthwise
  int64_t squeeze_ratio = 1;      // channel-gate reduction

  void validate() const {
    if (bottleneck_ratio <= 0) throw ConfigError("model.block.bottleneck_ratio must be > 0");
    if (groups < 0) throw ConfigError("model.block.groups must be >= 0");
    if (squeeze_ratio < 1) throw ConfigError("model.block.squeeze_ratio must be >= 1");
  }
};

namespace nn_detail {

inline torch::nn::Conv2d conv1x1(int64_t in, int64_t out, bool bias = false) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).bias(bias));
}

inline torch::nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t groups = 1, bool bias = false) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, 3).padding(1).groups(groups).bias(bias));
}

}  // namespace nn_detail

// Channel gate (cSE): GAP -> 1x1 conv C->C/r -> ReLU -> 1x1 conv C/r->C ->
// sigmoid. Returns the [B,C,1,1] gate, not the gated tensor.
struct ChannelGateImpl : torch::nn::Module {
  torch::nn::Conv2d squeeze{nullptr}, expand{nullptr};
  int64_t channels, reduced;

  ChannelGateImpl(int64_t channels_, int64_t squeeze_ratio)
      : channels(channels_), reduced(std::max<int64_t>(1, channels_ / squeeze_ratio)) {
    squeeze = register_module("squeeze", nn_detail::conv1x1(channels, reduced, /*bias=*/true));
    expand = register_module("expand", nn_detail::conv1x1(reduced, channels, /*bias=*/true));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto s = torch::adaptive_avg_pool2d(x, {1, 1});
    s = torch::relu(squeeze(s));
    return torch::sigmoid(expand(s));
  }

  void add_costs(CostLedger& ledger, const std::string& path) const {
    // 1x1 convs applied to the pooled 1x1 map: per-image MACs, not per-pixel.
    ledger.add_conv(path + "/squeeze", channels, reduced, 1, 1, 1, 1, /*bias=*/true);
    ledger.add_conv(path + "/expand", reduced, channels, 1, 1, 1, 1, /*bias=*/true);
  }
};
TORCH_MODULE(ChannelGate);

// Spatial gate (sSE): 1x1 conv C->1 -> sigmoid. Returns the [B,1,H,W] gate.
struct SpatialGateImpl : torch::nn::Module {
  torch::nn::Conv2d proj{nullptr};
  int64_t channels;

  explicit SpatialGateImpl(int64_t channels_) : channels(channels_) {
    proj = register_module("proj", nn_detail::conv1x1(channels, 1, /*bias=*/true));
  }

  torch::Tensor forward(const torch::Tensor& x) { return torch::sigmoid(proj(x)); }

  void add_costs(CostLedger& ledger, const std::string& path, int64_t h, int64_t w) const {
    ledger.add_conv(path + "/proj", channels, 1, 1, h, w, 1, /*bias=*/true);
  }
};
TORCH_MODULE(SpatialGate);

// Concurrent recalibration: x * cse(x) + x * sse(x) for scSE, either term
// alone for se/sse, identity for none.
struct ScSEImpl : torch::nn::Module {
  Attention kind;
  ChannelGate cse{nullptr};
  SpatialGate sse{nullptr};

  ScSEImpl(int64_t channels, Attention kind_, int64_t squeeze_ratio) : kind(kind_) {
    if (kind == Attention::kSE || kind == Attention::kSCSE) {
      cse = register_module("cse", ChannelGate(channels, squeeze_ratio));
    }
    if (kind == Attention::kSSE || kind == Attention::kSCSE) {
      sse = register_module("sse", SpatialGate(channels));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    switch (kind) {
      case Attention::kNone: return x;
      case Attention::kSE: return x * cse(x);
      case Attention::kSSE: return x * sse(x);
      case Attention::kSCSE: return x * cse(x) + x * sse(x);
    }
    return x;
  }

  void add_costs(CostLedger& ledger, const std::string& path, int64_t h, int64_t w) const {
    if (cse) cse->add_costs(ledger, path + "/cse");
    if (sse) sse->add_costs(ledger, path + "/sse", h, w);
  }
};
TORCH_MODULE(ScSE);

// Common interface the decoder uses to store either block family.
struct DecoderBlockBase : torch::nn::Module {
  virtual torch::Tensor forward(const torch::Tensor& x) = 0;
  virtual void add_costs(CostLedger& ledger, const std::string& path, int64_t h,
                         int64_t w) const = 0;
  virtual int64_t in_channels() const = 0;
  virtual int64_t out_channels() const = 0;
  ~DecoderBlockBase() override = default;
};

// Residual depthwise-bottleneck refinement.
struct EfficientBlockImpl : DecoderBlockBase {
  torch::nn::Conv2d expand{nullptr}, depthwise{nullptr}, project{nullptr}, shortcut{nullptr};
  torch::nn::BatchNorm2d bn_expand{nullptr}, bn_depthwise{nullptr}, bn_project{nullptr};
  ScSE gate{nullptr};
  int64_t in_ch, out_ch, mid_ch, groups;

  EfficientBlockImpl(int64_t in_ch_, int64_t out_ch_, Attention attention,
                     const BlockOptions& opt = {})
      : in_ch(in_ch_), out_ch(out_ch_) {
    opt.validate();
    require(in_ch > 0 && out_ch > 0, "block: channel counts must be positive");
    mid_ch = std::max<int64_t>(1, int64_t(std::llround(double(in_ch) * opt.bottleneck_ratio)));
    groups = opt.groups == 0 ? mid_ch : opt.groups;
    require(mid_ch % groups == 0, "block: groups (" + std::to_string(groups) +
                                      ") must divide the bottleneck width (" +
                                      std::to_string(mid_ch) + ")");
    expand = register_module("expand", nn_detail::conv1x1(in_ch, mid_ch));
    bn_expand = register_module("bn_expand", torch::nn::BatchNorm2d(mid_ch));
    depthwise = register_module("depthwise", nn_detail::conv3x3(mid_ch, mid_ch, groups));
    bn_depthwise = register_module("bn_depthwise", torch::nn::BatchNorm2d(mid_ch));
    gate = register_module("gate", ScSE(mid_ch, attention, opt.squeeze_ratio));
    project = register_module("project", nn_detail::conv1x1(mid_ch, out_ch));
    bn_project = register_module("bn_project", torch::nn::BatchNorm2d(out_ch));
    if (in_ch != out_ch) {
      shortcut = register_module("shortcut", nn_detail::conv1x1(in_ch, out_ch));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) override {
    auto y = torch::hardswish(bn_expand(expand(x)));
    y = torch::hardswish(bn_depthwise(depthwise(y)));
    y = gate(y);
    y = bn_project(project(y));  // linear bottleneck: no activation
    return y + (shortcut ? shortcut(x) : x);
  }

  void add_costs(CostLedger& ledger, const std::string& path, int64_t h,
                 int64_t w) const override {
    ledger.add_conv(path + "/expand", in_ch, mid_ch, 1, h, w);
    ledger.add_batchnorm(path + "/bn_expand", mid_ch);
    ledger.add_conv(path + "/depthwise", mid_ch, mid_ch, 3, h, w, groups);
    ledger.add_batchnorm(path + "/bn_depthwise", mid_ch);
    gate->add_costs(ledger, path + "/gate", h, w);
    ledger.add_conv(path + "/project", mid_ch, out_ch, 1, h, w);
    ledger.add_batchnorm(path + "/bn_project", out_ch);
    if (shortcut) ledger.add_conv(path + "/shortcut", in_ch, out_ch, 1, h, w);
  }

  int64_t in_channels() const override { return in_ch; }
  int64_t out_channels() const override { return out_ch; }
};
TORCH_MODULE(EfficientBlock);

// Plain double 3x3 refinement (the dense-skip baseline family).
struct UnetPPBlockImpl : DecoderBlockBase {
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
  int64_t in_ch, out_ch;

  UnetPPBlockImpl(int64_t in_ch_, int64_t out_ch_) : in_ch(in_ch_), out_ch(out_ch_) {
    require(in_ch > 0 && out_ch > 0, "block: channel counts must be positive");
    conv1 = register_module("conv1", nn_detail::conv3x3(in_ch, out_ch));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(out_ch));
    conv2 = register_module("conv2", nn_detail::conv3x3(out_ch, out_ch));
    bn2 = register_module("bn2", torch::nn::BatchNorm2d(out_ch));
  }

  torch::Tensor forward(const torch::Tensor& x) override {
    auto y = torch::relu(bn1(conv1(x)));
    return torch::relu(bn2(conv2(y)));
  }

  void add_costs(CostLedger& ledger, const std::string& path, int64_t h,
                 int64_t w) const override {
    ledger.add_conv(path + "/conv1", in_ch, out_ch, 3, h, w);
    ledger.add_batchnorm(path + "/bn1", out_ch);
    ledger.add_conv(path + "/conv2", out_ch, out_ch, 3, h, w);
    ledger.add_batchnorm(path + "/bn2", out_ch);
  }

  int64_t in_channels() const override { return in_ch; }
  int64_t out_channels() const override { return out_ch; }
};
TORCH_MODULE(UnetPPBlock);

}  // namespace vesselseg
