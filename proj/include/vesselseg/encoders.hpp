#pragma once

// Encoder backbones exposing a five-level feature pyramid (strides 2, 4,
// 8, 16, 32). All encoders take 3-channel input; grayscale frames are
// channel-replicated by the model wrapper.
//
//   tiny               small strided double-conv stack for fast experiments
//   efficientnet-b0..7 MBConv backbone with compound width/depth scaling,
//                      randomly initialized (no bundled pretrained weights)
//
// Freezing is supported generically: parameters stop requiring gradients,
// the module is held in eval mode (BN running statistics stay fixed), and a
// byte-level checksum lets callers verify the weights never move.

#include <torch/torch.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vesselseg/analysis.hpp"
#include "vesselseg/blocks.hpp"
#include "vesselseg/common.hpp"

namespace vesselseg {

struct EncoderBase : torch::nn::Module {
  // Returns the five pyramid maps, finest (stride 2) first.
  virtual std::vector<torch::Tensor> forward_stages(const torch::Tensor& x) = 0;
  virtual std::array<int64_t, 5> stage_channels() const = 0;
  virtual void add_costs(CostLedger& ledger, const std::string& path, int64_t h,
                         int64_t w) const = 0;
  virtual std::string id() const = 0;
  ~EncoderBase() override = default;
};

inline void set_requires_grad(torch::nn::Module& m, bool on) {
  for (auto& p : m.parameters()) p.set_requires_grad(on);
}

// FNV-1a over parameter and buffer names + raw bytes, in registration
// order. Stable across runs of the same build; used to prove frozen
// weights stay untouched.
inline uint64_t module_checksum(const torch::nn::Module& m) {
  uint64_t h = kFnvOffset;
  auto absorb = [&h](const std::string& name, const torch::Tensor& t) {
    h = fnv1a(name.data(), name.size(), h);
    auto c = t.detach().to(torch::kCPU).contiguous();
    h = fnv1a(c.data_ptr(), size_t(c.numel()) * c.element_size(), h);
  };
  for (const auto& item : m.named_parameters(/*recurse=*/true)) absorb(item.key(), item.value());
  for (const auto& item : m.named_buffers(/*recurse=*/true)) absorb(item.key(), item.value());
  return h;
}

// -------------------------------------------------------------------------
// Tiny encoder: five stages of [3x3 s2 conv + BN + ReLU, 3x3 conv + BN +
// ReLU]. Default widths {8, 16, 32, 64, 128}.
// -------------------------------------------------------------------------

struct TinyEncoderImpl : EncoderBase {
  std::array<int64_t, 5> widths{};
  std::vector<torch::nn::Sequential> stages;

  explicit TinyEncoderImpl(const std::vector<int64_t>& widths_in = {}) {
    std::vector<int64_t> w = widths_in.empty() ? std::vector<int64_t>{8, 16, 32, 64, 128}
                                               : widths_in;
    require(w.size() == 5, "tiny encoder expects 5 stage widths, got " +
                               std::to_string(w.size()));
    for (size_t i = 0; i < 5; ++i) {
      require(w[i] > 0, "tiny encoder widths must be positive");
      widths[i] = w[i];
    }
    int64_t in_ch = 3;
    for (size_t i = 0; i < 5; ++i) {
      torch::nn::Sequential stage(
          torch::nn::Conv2d(
              torch::nn::Conv2dOptions(in_ch, widths[i], 3).stride(2).padding(1).bias(false)),
          torch::nn::BatchNorm2d(widths[i]), torch::nn::ReLU(),
          torch::nn::Conv2d(torch::nn::Conv2dOptions(widths[i], widths[i], 3).padding(1).bias(false)),
          torch::nn::BatchNorm2d(widths[i]), torch::nn::ReLU());
      stages.push_back(register_module("stage" + std::to_string(i), stage));
      in_ch = widths[i];
    }
  }

  std::vector<torch::Tensor> forward_stages(const torch::Tensor& x) override {
    std::vector<torch::Tensor> taps;
    auto y = x;
    for (auto& stage : stages) {
      y = stage->forward(y);
      taps.push_back(y);
    }
    return taps;
  }

  std::array<int64_t, 5> stage_channels() const override { return widths; }
  std::string id() const override { return "tiny"; }

  void add_costs(CostLedger& ledger, const std::string& path, int64_t h,
                 int64_t w) const override {
    int64_t in_ch = 3;
    for (size_t i = 0; i < 5; ++i) {
      h /= 2;
      w /= 2;
      std::string p = path + "/stage" + std::to_string(i);
      ledger.add_conv(p + "/conv1", in_ch, widths[i], 3, h, w);
      ledger.add_batchnorm(p + "/bn1", widths[i]);
      ledger.add_conv(p + "/conv2", widths[i], widths[i], 3, h, w);
      ledger.add_batchnorm(p + "/bn2", widths[i]);
      in_ch = widths[i];
    }
  }
};
TORCH_MODULE(TinyEncoder);

// -------------------------------------------------------------------------
// EfficientNet backbone.
// -------------------------------------------------------------------------

// Width scaling rounds to a multiple of 8, bumping up when rounding would
// lose more than 10% of the scaled value.
inline int64_t round_filters(int64_t filters, double width_mult, int64_t divisor = 8) {
  double f = double(filters) * width_mult;
  int64_t rounded = std::max(divisor, (int64_t(f + double(divisor) / 2.0) / divisor) * divisor);
  if (double(rounded) < 0.9 * f) rounded += divisor;
  return rounded;
}

inline int64_t round_repeats(int64_t repeats, double depth_mult) {
  return int64_t(std::ceil(double(repeats) * depth_mult));
}

struct MBConvImpl : torch::nn::Module {
  torch::nn::Conv2d expand{nullptr}, depthwise{nullptr}, se_reduce{nullptr}, se_expand{nullptr},
      project{nullptr};
  torch::nn::BatchNorm2d bn_expand{nullptr}, bn_depthwise{nullptr}, bn_project{nullptr};
  int64_t in_ch, out_ch, exp_ch, se_ch, kernel, stride;
  bool residual;

  MBConvImpl(int64_t in_ch_, int64_t out_ch_, int64_t expand_ratio, int64_t kernel_,
             int64_t stride_, double se_ratio = 0.25)
      : in_ch(in_ch_), out_ch(out_ch_), exp_ch(in_ch_ * expand_ratio), kernel(kernel_),
        stride(stride_), residual(stride_ == 1 && in_ch_ == out_ch_) {
    se_ch = std::max<int64_t>(1, int64_t(double(in_ch) * se_ratio));
    if (exp_ch != in_ch) {
      expand = register_module(
          "expand", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, exp_ch, 1).bias(false)));
      bn_expand = register_module("bn_expand", torch::nn::BatchNorm2d(exp_ch));
    }
    depthwise = register_module(
        "depthwise", torch::nn::Conv2d(torch::nn::Conv2dOptions(exp_ch, exp_ch, kernel)
                                           .stride(stride)
                                           .padding(kernel / 2)
                                           .groups(exp_ch)
                                           .bias(false)));
    bn_depthwise = register_module("bn_depthwise", torch::nn::BatchNorm2d(exp_ch));
    se_reduce = register_module(
        "se_reduce", torch::nn::Conv2d(torch::nn::Conv2dOptions(exp_ch, se_ch, 1).bias(true)));
    se_expand = register_module(
        "se_expand", torch::nn::Conv2d(torch::nn::Conv2dOptions(se_ch, exp_ch, 1).bias(true)));
    project = register_module(
        "project", torch::nn::Conv2d(torch::nn::Conv2dOptions(exp_ch, out_ch, 1).bias(false)));
    bn_project = register_module("bn_project", torch::nn::BatchNorm2d(out_ch));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto y = x;
    if (expand) y = torch::silu(bn_expand(expand(y)));
    y = torch::silu(bn_depthwise(depthwise(y)));
    auto s = torch::adaptive_avg_pool2d(y, {1, 1});
    s = torch::silu(se_reduce(s));
    y = y * torch::sigmoid(se_expand(s));
    y = bn_project(project(y));
    return residual ? x + y : y;
  }

  // h, w: spatial size of the block input.
  void add_costs(CostLedger& ledger, const std::string& path, int64_t h, int64_t w) const {
    if (expand) {
      ledger.add_conv(path + "/expand", in_ch, exp_ch, 1, h, w);
      ledger.add_batchnorm(path + "/bn_expand", exp_ch);
    }
    int64_t oh = h / stride, ow = w / stride;
    ledger.add_conv(path + "/depthwise", exp_ch, exp_ch, kernel, oh, ow, exp_ch);
    ledger.add_batchnorm(path + "/bn_depthwise", exp_ch);
    ledger.add_conv(path + "/se_reduce", exp_ch, se_ch, 1, 1, 1, 1, /*bias=*/true);
    ledger.add_conv(path + "/se_expand", se_ch, exp_ch, 1, 1, 1, 1, /*bias=*/true);
    ledger.add_conv(path + "/project", exp_ch, out_ch, 1, oh, ow);
    ledger.add_batchnorm(path + "/bn_project", out_ch);
  }
};
TORCH_MODULE(MBConv);

struct EfficientNetStageSpec {
  int64_t expand_ratio, channels, repeats, stride, kernel;
};

// Base (B0) stage table; width/depth multipliers derive the other variants.
inline const std::array<EfficientNetStageSpec, 7>& efficientnet_base_stages() {
  static const std::array<EfficientNetStageSpec, 7> stages = {{
      {1, 16, 1, 1, 3},
      {6, 24, 2, 2, 3},
      {6, 40, 2, 2, 5},
      {6, 80, 3, 2, 3},
      {6, 112, 3, 1, 5},
      {6, 192, 4, 2, 5},
      {6, 320, 1, 1, 3},
  }};
  return stages;
}

inline std::pair<double, double> efficientnet_multipliers(int variant) {
  static const std::array<std::pair<double, double>, 8> table = {{
      {1.0, 1.0}, {1.0, 1.1}, {1.1, 1.2}, {1.2, 1.4},
      {1.4, 1.8}, {1.6, 2.2}, {1.8, 2.6}, {2.0, 3.1},
  }};
  require(variant >= 0 && variant <= 7, "efficientnet variant must be 0..7");
  return table[size_t(variant)];
}

struct EfficientNetEncoderImpl : EncoderBase {
  int variant;
  torch::nn::Conv2d stem{nullptr};
  torch::nn::BatchNorm2d bn_stem{nullptr};
  int64_t stem_ch;
  std::vector<std::vector<MBConv>> stages;           // 7 stages of scaled MBConv blocks
  std::vector<EfficientNetStageSpec> scaled_stages;  // per-block plan, channels/repeats scaled
  std::array<int64_t, 5> taps_channels{};
  // Pyramid taps sit after stages 1, 2, 3, 5 and 7 (1-indexed): the last
  // stage producing each of strides 2, 4, 8, 16, 32.
  static constexpr std::array<int, 5> kTapAfterStage = {0, 1, 2, 4, 6};

  explicit EfficientNetEncoderImpl(int variant_) : variant(variant_) {
    auto [width_mult, depth_mult] = efficientnet_multipliers(variant);
    stem_ch = round_filters(32, width_mult);
    stem = register_module(
        "stem",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(3, stem_ch, 3).stride(2).padding(1).bias(false)));
    bn_stem = register_module("bn_stem", torch::nn::BatchNorm2d(stem_ch));

    int64_t in_ch = stem_ch;
    for (size_t s = 0; s < efficientnet_base_stages().size(); ++s) {
      const auto& base = efficientnet_base_stages()[s];
      EfficientNetStageSpec scaled = base;
      scaled.channels = round_filters(base.channels, width_mult);
      scaled.repeats = round_repeats(base.repeats, depth_mult);
      scaled_stages.push_back(scaled);
      std::vector<MBConv> blocks;
      for (int64_t r = 0; r < scaled.repeats; ++r) {
        int64_t stride = r == 0 ? scaled.stride : 1;
        MBConv block(in_ch, scaled.channels, scaled.expand_ratio, scaled.kernel, stride);
        register_module("s" + std::to_string(s) + "_" + std::to_string(r), block);
        blocks.push_back(block);
        in_ch = scaled.channels;
      }
      stages.push_back(std::move(blocks));
    }
    for (size_t t = 0; t < 5; ++t) {
      taps_channels[t] = scaled_stages[size_t(kTapAfterStage[t])].channels;
    }
  }

  std::vector<torch::Tensor> forward_stages(const torch::Tensor& x) override {
    std::vector<torch::Tensor> taps;
    auto y = torch::silu(bn_stem(stem(x)));
    size_t next_tap = 0;
    for (size_t s = 0; s < stages.size(); ++s) {
      for (auto& block : stages[s]) y = block(y);
      if (next_tap < 5 && int(s) == kTapAfterStage[next_tap]) {
        taps.push_back(y);
        ++next_tap;
      }
    }
    return taps;
  }

  std::array<int64_t, 5> stage_channels() const override { return taps_channels; }
  std::string id() const override { return "efficientnet-b" + std::to_string(variant); }

  void add_costs(CostLedger& ledger, const std::string& path, int64_t h,
                 int64_t w) const override {
    h /= 2;
    w /= 2;
    ledger.add_conv(path + "/stem", 3, stem_ch, 3, h, w);
    ledger.add_batchnorm(path + "/bn_stem", stem_ch);
    for (size_t s = 0; s < stages.size(); ++s) {
      for (size_t r = 0; r < stages[s].size(); ++r) {
        const auto& block = *stages[s][r];
        block.add_costs(ledger, path + "/s" + std::to_string(s) + "_" + std::to_string(r), h, w);
        h /= block.stride;
        w /= block.stride;
      }
    }
  }
};
TORCH_MODULE(EfficientNetEncoder);

// -------------------------------------------------------------------------
// Registry.
// -------------------------------------------------------------------------

inline std::vector<std::string> encoder_ids() {
  std::vector<std::string> ids = {"tiny"};
  for (int v = 0; v <= 7; ++v) ids.push_back("efficientnet-b" + std::to_string(v));
  return ids;
}

// tiny_widths applies to the tiny encoder only (empty = its defaults).
inline std::shared_ptr<EncoderBase> make_encoder(const std::string& id,
                                                 const std::vector<int64_t>& tiny_widths = {}) {
  if (id == "tiny") return std::make_shared<TinyEncoderImpl>(tiny_widths);
  for (int v = 0; v <= 7; ++v) {
    if (id == "efficientnet-b" + std::to_string(v)) {
      return std::make_shared<EfficientNetEncoderImpl>(v);
    }
  }
  throw ConfigError("unknown encoder id '" + id + "' (known: " + join(encoder_ids(), ", ") + ")");
}

}  // namespace vesselseg
