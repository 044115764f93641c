#pragma once

// Full segmentation network: encoder pyramid -> nested dense-skip decoder
// -> 3x3 segmentation head -> 2x bilinear upsample -> per-pixel softmax.
// Input is a grayscale frame [B,1,H,W] (replicated to the encoders' three
// channels) with H and W positive multiples of 32.

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <memory>
#include <string>
#include <vector>

#include "vesselseg/analysis.hpp"
#include "vesselseg/common.hpp"
#include "vesselseg/decoder.hpp"
#include "vesselseg/encoders.hpp"
#include "vesselseg/metrics.hpp"

namespace vesselseg {

struct ModelSpec {
  std::string encoder_id = "efficientnet-b0";
  DecoderFamily decoder_family = DecoderFamily::kEfficientUnetPP;
  std::vector<int64_t> decoder_widths = {256, 128, 64, 32, 16};  // head-to-stem
  Attention attention = Attention::kSCSE;
  int64_t num_classes = kNumClasses;
  std::vector<int64_t> encoder_widths;  // tiny encoder only; empty = defaults
  BlockOptions block;

  void validate() const {
    if (num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
    if (decoder_widths.size() != 5) {
      throw ConfigError("model.decoder_widths must list 5 entries, got " +
                        std::to_string(decoder_widths.size()));
    }
    for (int64_t w : decoder_widths) {
      if (w <= 0) throw ConfigError("model.decoder_widths entries must be positive");
    }
    if (!encoder_widths.empty() && encoder_id != "tiny") {
      throw ConfigError("model.encoder_widths only applies to the tiny encoder");
    }
    block.validate();
  }

  nlohmann::json to_json() const {
    return {{"encoder", encoder_id},
            {"decoder_family", to_string(decoder_family)},
            {"decoder_widths", decoder_widths},
            {"attention", to_string(attention)},
            {"num_classes", num_classes},
            {"encoder_widths", encoder_widths},
            {"block",
             {{"bottleneck_ratio", block.bottleneck_ratio},
              {"groups", block.groups},
              {"squeeze_ratio", block.squeeze_ratio}}}};
  }

  static ModelSpec from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.encoder_id = j.value("encoder", s.encoder_id);
    if (j.contains("decoder_family")) {
      s.decoder_family = decoder_family_from_string(j.at("decoder_family").get<std::string>());
    }
    if (j.contains("decoder_widths")) {
      s.decoder_widths = j.at("decoder_widths").get<std::vector<int64_t>>();
    }
    if (j.contains("attention")) {
      s.attention = attention_from_string(j.at("attention").get<std::string>());
    }
    s.num_classes = j.value("num_classes", s.num_classes);
    if (j.contains("encoder_widths")) {
      s.encoder_widths = j.at("encoder_widths").get<std::vector<int64_t>>();
    }
    if (j.contains("block")) {
      const auto& b = j.at("block");
      s.block.bottleneck_ratio = b.value("bottleneck_ratio", s.block.bottleneck_ratio);
      s.block.groups = b.value("groups", s.block.groups);
      s.block.squeeze_ratio = b.value("squeeze_ratio", s.block.squeeze_ratio);
    }
    s.validate();
    return s;
  }
};

struct SegModelImpl : torch::nn::Module {
  ModelSpec spec;
  std::shared_ptr<EncoderBase> encoder;
  NestedDecoder decoder{nullptr};
  torch::nn::Conv2d head{nullptr};
  bool encoder_frozen = false;

  explicit SegModelImpl(const ModelSpec& spec_) : spec(spec_) {
    spec.validate();
    encoder = make_encoder(spec.encoder_id, spec.encoder_widths);
    register_module("encoder", std::static_pointer_cast<torch::nn::Module>(encoder));
    decoder = register_module(
        "decoder", NestedDecoder(encoder->stage_channels(), spec.decoder_family,
                                 spec.decoder_widths, spec.attention, spec.block));
    head = register_module(
        "head", torch::nn::Conv2d(torch::nn::Conv2dOptions(decoder->out_channels(),
                                                           spec.num_classes, 3)
                                      .padding(1)
                                      .bias(true)));
  }

  void check_input(const torch::Tensor& x) const {
    require(x.dim() == 4, "model input must be [B,C,H,W]");
    require(x.size(1) == 1 || x.size(1) == 3,
            "model input must have 1 (grayscale) or 3 channels, got " + std::to_string(x.size(1)));
    for (int d : {2, 3}) {
      int64_t v = x.size(d);
      const char* name = d == 2 ? "height" : "width";
      require(v > 0 && v % 32 == 0, "input " + std::string(name) + " " + std::to_string(v) +
                                        " must be a positive multiple of 32");
    }
  }

  torch::Tensor forward_logits(const torch::Tensor& x) {
    check_input(x);
    auto in = x.size(1) == 1 ? x.repeat({1, 3, 1, 1}) : x;
    auto taps = encoder->forward_stages(in);
    auto d = decoder(taps);  // stride 2
    auto logits = head(d);
    namespace F = torch::nn::functional;
    return F::interpolate(logits, F::InterpolateFuncOptions()
                                      .scale_factor(std::vector<double>{2.0, 2.0})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
  }

  // Probability map [B,C,H,W]; channels sum to one per pixel.
  torch::Tensor forward(const torch::Tensor& x) {
    return torch::softmax(forward_logits(x), 1);
  }

  // A frozen encoder stays in eval mode (BN statistics fixed) even when
  // the rest of the network trains.
  void train(bool on = true) override {
    torch::nn::Module::train(on);
    if (encoder_frozen) encoder->eval();
  }

  void freeze_encoder() {
    set_requires_grad(*encoder, false);
    encoder->eval();
    encoder_frozen = true;
  }

  uint64_t encoder_checksum() const { return module_checksum(*encoder); }

  // Trainable parameters only (what an optimizer should see).
  std::vector<torch::Tensor> trainable_parameters() const {
    std::vector<torch::Tensor> out;
    for (const auto& p : parameters()) {
      if (p.requires_grad()) out.push_back(p);
    }
    return out;
  }

  CostReport cost(int64_t input_h, int64_t input_w) const {
    require(input_h > 0 && input_h % 32 == 0 && input_w > 0 && input_w % 32 == 0,
            "cost: input size must be a positive multiple of 32");
    CostLedger ledger;
    encoder->add_costs(ledger, "encoder", input_h, input_w);
    decoder->add_costs(ledger, "decoder", input_h, input_w);
    ledger.add_conv("head", decoder->out_channels(), spec.num_classes, 3, input_h / 2,
                    input_w / 2, 1, /*bias=*/true);
    if (encoder_frozen) {
      for (auto& item : ledger.items) {
        if (detail::path_has_prefix(item.path, "encoder")) item.frozen = true;
      }
    }
    return CostReport::from_ledger(ledger);
  }
};
TORCH_MODULE(SegModel);

// Structured description used by the CLI: spec, node table, costs.
inline nlohmann::json describe_model(const SegModel& model, int64_t input_h, int64_t input_w) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : model->decoder->describe()) {
    nodes.push_back({{"name", n.name},
                     {"row", n.row},
                     {"col", n.col},
                     {"in_channels", n.in_channels},
                     {"out_channels", n.out_channels},
                     {"inputs", n.inputs}});
  }
  auto cost = model->cost(input_h, input_w);
  nlohmann::json per_module;
  for (const std::string& prefix : {"encoder", "decoder", "head"}) {
    per_module[prefix] = {{"params", sum_params(cost, prefix)},
                          {"flops", sum_flops(cost, prefix)}};
  }
  std::array<int64_t, 5> enc = model->encoder->stage_channels();
  return {{"spec", model->spec.to_json()},
          {"encoder_channels", std::vector<int64_t>(enc.begin(), enc.end())},
          {"nodes", nodes},
          {"input_size", {input_h, input_w}},
          {"params_trainable", cost.params_trainable},
          {"params_frozen", cost.params_frozen},
          {"flops", cost.flops},
          {"per_module", per_module}};
}

}  // namespace vesselseg
