#pragma once

// Nested dense-skip decoder over a five-level encoder pyramid (feature
// strides 2, 4, 8, 16, 32).
//
// Grid notation: X(i,0) are the encoder taps (row i = pyramid level, finest
// first). Refinement node X(i,j), j >= 1, consumes the 2x-upsampled
// X(i+1,j-1) concatenated with all same-row predecessors X(i,0..j-1).
// Nodes exist for i + j <= 4, which yields exactly 10 refinement nodes;
// the segmentation head reads X(0,4) at stride 2.
//
// Width convention: `widths` is ordered head-to-stem, i.e. widths[0] is the
// deepest decoder row and widths.back() the finest. With a five-level
// pyramid the deepest entry widths[0] pads the list (row 4 holds no
// refinement nodes) so presets keep the familiar five-element form.

#include <torch/torch.h>

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vesselseg/analysis.hpp"
#include "vesselseg/blocks.hpp"
#include "vesselseg/common.hpp"

namespace vesselseg {

enum class DecoderFamily { kUnetPP, kEfficientUnetPP };

inline std::string to_string(DecoderFamily f) {
  return f == DecoderFamily::kUnetPP ? "unetpp" : "efficient_unetpp";
}

inline DecoderFamily decoder_family_from_string(const std::string& s) {
  if (s == "unetpp") return DecoderFamily::kUnetPP;
  if (s == "efficient_unetpp") return DecoderFamily::kEfficientUnetPP;
  throw ConfigError("unknown decoder family '" + s + "' (expected unetpp|efficient_unetpp)");
}

struct DecoderNodeInfo {
  int row = 0, col = 0;
  int64_t in_channels = 0, out_channels = 0;
  std::vector<std::string> inputs;  // human-readable input list
  std::string name;                 // module name, e.g. "x0_1"
};

struct NestedDecoderImpl : torch::nn::Module {
  static constexpr int kLevels = 5;

  DecoderFamily family;
  Attention attention;
  BlockOptions options;
  std::array<int64_t, kLevels> encoder_channels{};
  std::array<int64_t, kLevels> row_channels{};  // refinement width per row (rows 0..3 used)
  std::map<std::pair<int, int>, std::shared_ptr<DecoderBlockBase>> blocks;

  NestedDecoderImpl(const std::array<int64_t, kLevels>& encoder_channels_,
                    DecoderFamily family_, const std::vector<int64_t>& widths,
                    Attention attention_, const BlockOptions& options_ = {})
      : family(family_), attention(attention_), options(options_),
        encoder_channels(encoder_channels_) {
    require(widths.size() == kLevels,
            "decoder widths must list " + std::to_string(kLevels) + " entries, got " +
                std::to_string(widths.size()));
    for (int64_t w : widths) require(w > 0, "decoder widths must be positive");
    // Head-to-stem order: reverse so row_channels[0] is the finest row.
    for (int i = 0; i < kLevels; ++i) row_channels[size_t(i)] = widths[size_t(kLevels - 1 - i)];

    for (int j = 1; j < kLevels; ++j) {
      for (int i = 0; i + j < kLevels; ++i) {
        int64_t in_ch = input_channels(i, j);
        int64_t out_ch = row_channels[size_t(i)];
        std::shared_ptr<DecoderBlockBase> block;
        if (family == DecoderFamily::kUnetPP) {
          block = std::make_shared<UnetPPBlockImpl>(in_ch, out_ch);
        } else {
          block = std::make_shared<EfficientBlockImpl>(in_ch, out_ch, attention, options);
        }
        register_module(node_name(i, j), block);
        blocks[{i, j}] = std::move(block);
      }
    }
  }

  static std::string node_name(int i, int j) {
    return "x" + std::to_string(i) + "_" + std::to_string(j);
  }

  // Channels entering X(i,j): the upsampled below-row predecessor plus all
  // same-row predecessors (the encoder tap and earlier refinements).
  int64_t input_channels(int i, int j) const {
    int64_t below = j == 1 ? encoder_channels[size_t(i + 1)] : row_channels[size_t(i + 1)];
    return below + encoder_channels[size_t(i)] + int64_t(j - 1) * row_channels[size_t(i)];
  }

  int64_t out_channels() const { return row_channels[0]; }

  // taps: five encoder maps, strides 2,4,8,16,32 (finest first).
  torch::Tensor forward(const std::vector<torch::Tensor>& taps) {
    require(int(taps.size()) == kLevels, "decoder expects 5 encoder taps");
    for (int i = 0; i < kLevels; ++i) {
      require(taps[size_t(i)].size(1) == encoder_channels[size_t(i)],
              "encoder tap " + std::to_string(i) + " has " +
                  std::to_string(taps[size_t(i)].size(1)) + " channels, expected " +
                  std::to_string(encoder_channels[size_t(i)]));
    }
    std::map<std::pair<int, int>, torch::Tensor> x;
    for (int i = 0; i < kLevels; ++i) x[{i, 0}] = taps[size_t(i)];
    namespace F = torch::nn::functional;
    for (int j = 1; j < kLevels; ++j) {
      for (int i = 0; i + j < kLevels; ++i) {
        auto up = F::interpolate(x.at({i + 1, j - 1}),
                                 F::InterpolateFuncOptions()
                                     .scale_factor(std::vector<double>{2.0, 2.0})
                                     .mode(torch::kBilinear)
                                     .align_corners(false));
        std::vector<torch::Tensor> parts = {up};
        for (int m = 0; m < j; ++m) parts.push_back(x.at({i, m}));
        x[{i, j}] = blocks.at({i, j})->forward(torch::cat(parts, 1));
      }
    }
    return x.at({0, kLevels - 1});
  }

  // Topologically ordered node table (column-major, finest row first).
  std::vector<DecoderNodeInfo> describe() const {
    std::vector<DecoderNodeInfo> out;
    for (int j = 1; j < kLevels; ++j) {
      for (int i = 0; i + j < kLevels; ++i) {
        DecoderNodeInfo n;
        n.row = i;
        n.col = j;
        n.name = node_name(i, j);
        n.in_channels = input_channels(i, j);
        n.out_channels = row_channels[size_t(i)];
        n.inputs.push_back("up(" + node_name(i + 1, j - 1) + ")");
        for (int m = 0; m < j; ++m) n.inputs.push_back(node_name(i, m));
        out.push_back(std::move(n));
      }
    }
    return out;
  }

  // input_h/input_w: the network input size; row i runs at stride 2^(i+1).
  void add_costs(CostLedger& ledger, const std::string& path, int64_t input_h,
                 int64_t input_w) const {
    for (const auto& [key, block] : blocks) {
      int64_t h = input_h >> (key.first + 1);
      int64_t w = input_w >> (key.first + 1);
      block->add_costs(ledger, path + "/" + node_name(key.first, key.second), h, w);
    }
  }
};
TORCH_MODULE(NestedDecoder);

}  // namespace vesselseg
