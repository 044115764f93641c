// Dataset schema and online augmentation for grayscale segmentation frames.
//
// A dataset is a flat directory: `images/<stem>.png` (8-bit grayscale),
// `masks/<stem>.png` (palette-indexed labels), and `meta.csv` describing
// provenance and the train/test split.  Augmentation composes rotation,
// shift, and zoom into a single resampling pass (bilinear for images with
// edge replication, nearest for masks with background fill) followed by a
// multiplicative brightness change on the image alone.  Every random draw
// is derived from explicit seeds so epoch streams are reproducible and
// independent of worker scheduling.

#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vesselseg/common.hpp"
#include "vesselseg/metrics.hpp"
#include "vesselseg/png_io.hpp"

namespace vesselseg {

// ---------------------------------------------------------------------------
// Samples and metadata
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& known_views() {
  static const std::vector<std::string> v = {"LCA", "RCA"};
  return v;
}

inline const std::vector<std::string>& known_splits() {
  static const std::vector<std::string> v = {"train", "test"};
  return v;
}

struct ImageMeta {
  std::string stem;
  std::string patient_id;
  std::string view;       // one of known_views()
  std::string annotator;
  std::string split;      // one of known_splits()

  void validate() const {
    auto in = [](const std::vector<std::string>& set, const std::string& v) {
      return std::find(set.begin(), set.end(), v) != set.end();
    };
    if (stem.empty()) throw DataError("sample metadata is missing a stem");
    if (!in(known_views(), view)) {
      throw DataError("unknown view '" + view + "' for sample " + stem + " (expected " +
                      join(known_views(), "|") + ")");
    }
    if (!in(known_splits(), split)) {
      throw DataError("unknown split '" + split + "' for sample " + stem + " (expected " +
                      join(known_splits(), "|") + ")");
    }
    for (const std::string* field : {&stem, &patient_id, &view, &annotator, &split}) {
      if (field->find_first_of(",\n\r") != std::string::npos) {
        throw DataError("metadata fields may not contain commas or newlines: '" + *field + "'");
      }
    }
  }
};

// One grayscale frame with its label mask.  The mask stores one class id per
// pixel; dimensions always match the image.
struct AnnotatedImage {
  torch::Tensor image;  // u8 [H,W]
  torch::Tensor mask;   // i64 [H,W], values in [0, num_classes)
  ImageMeta meta;

  void validate(int64_t num_classes = kNumClasses) const {
    if (!image.defined() || !mask.defined()) {
      throw DataError("sample has an undefined image or mask tensor");
    }
    if (image.dim() != 2 || image.dtype() != torch::kUInt8) {
      throw DataError("sample image must be u8 [H,W]");
    }
    if (mask.dim() != 2 || mask.dtype() != torch::kLong) {
      throw DataError("sample mask must be i64 [H,W]");
    }
    if (image.sizes() != mask.sizes()) {
      throw DataError("image and mask dimensions differ for sample '" + meta.stem + "'");
    }
    if (mask.numel() > 0) {
      int64_t lo = mask.min().item<int64_t>();
      int64_t hi = mask.max().item<int64_t>();
      if (lo < 0 || hi >= num_classes) {
        throw DataError("mask labels for sample '" + meta.stem + "' fall outside [0, " +
                        std::to_string(num_classes) + ")");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// meta.csv
// ---------------------------------------------------------------------------

inline const std::string& meta_csv_header() {
  static const std::string h = "stem,patient_id,view,annotator,split";
  return h;
}

inline std::string meta_csv_row(const ImageMeta& m) {
  return join({m.stem, m.patient_id, m.view, m.annotator, m.split}, ",");
}

inline std::vector<ImageMeta> parse_meta_csv(const std::string& text,
                                             const std::filesystem::path& origin) {
  std::vector<std::string> lines = split(text, '\n');
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw DataError("empty metadata file: " + origin.string());
  if (trim(lines[0]) != meta_csv_header()) {
    throw DataError("unexpected metadata header in " + origin.string() + ": got '" +
                    trim(lines[0]) + "', expected '" + meta_csv_header() + "'");
  }
  std::vector<ImageMeta> out;
  for (size_t i = 1; i < lines.size(); ++i) {
    std::vector<std::string> fields = split(trim(lines[i]), ',');
    if (fields.size() != 5) {
      throw DataError("metadata row " + std::to_string(i + 1) + " in " + origin.string() +
                      " has " + std::to_string(fields.size()) + " fields, expected 5");
    }
    ImageMeta m{fields[0], fields[1], fields[2], fields[3], fields[4]};
    m.validate();
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset container (in-memory, backed by the directory layout above)
// ---------------------------------------------------------------------------

class Dataset {
 public:
  Dataset() = default;

  void add(AnnotatedImage sample) {
    sample.validate();
    sample.meta.validate();
    for (const auto& existing : samples_) {
      if (existing.meta.stem == sample.meta.stem) {
        throw DataError("duplicate sample stem '" + sample.meta.stem + "'");
      }
    }
    samples_.push_back(std::move(sample));
  }

  int64_t size() const { return int64_t(samples_.size()); }
  bool empty() const { return samples_.empty(); }

  const AnnotatedImage& at(int64_t index) const {
    require(index >= 0 && index < size(), "dataset index out of range");
    return samples_[size_t(index)];
  }

  const std::vector<AnnotatedImage>& samples() const { return samples_; }

  std::vector<ImageMeta> metas() const {
    std::vector<ImageMeta> out;
    out.reserve(samples_.size());
    for (const auto& s : samples_) out.push_back(s.meta);
    return out;
  }

  // Samples whose meta.split matches (e.g. "train").
  Dataset filter_split(const std::string& split) const {
    Dataset out;
    for (const auto& s : samples_) {
      if (s.meta.split == split) out.samples_.push_back(s);
    }
    return out;
  }

  void save(const std::filesystem::path& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    std::vector<std::string> lines = {meta_csv_header()};
    for (const auto& s : samples_) {
      s.validate();
      s.meta.validate();
      write_png_gray8(dir / "images" / (s.meta.stem + ".png"), s.image);
      write_png_mask(dir / "masks" / (s.meta.stem + ".png"), s.mask);
      lines.push_back(meta_csv_row(s.meta));
    }
    write_text_file(dir / "meta.csv", join(lines, "\n") + "\n");
  }

  static Dataset load(const std::filesystem::path& dir) {
    std::filesystem::path meta_path = dir / "meta.csv";
    std::vector<ImageMeta> metas = parse_meta_csv(read_text_file(meta_path), meta_path);
    Dataset out;
    for (auto& m : metas) {
      AnnotatedImage s;
      s.image = read_png_gray8(dir / "images" / (m.stem + ".png"));
      s.mask = read_png_mask(dir / "masks" / (m.stem + ".png")).to(torch::kLong);
      s.meta = std::move(m);
      out.add(std::move(s));
    }
    return out;
  }

 private:
  std::vector<AnnotatedImage> samples_;
};

// Assigns train/test splits stratified by view so both splits see
// approximately the same LCA/RCA mix.  Deterministic given the seed and the
// order of `metas`.
inline void assign_stratified_split(std::vector<ImageMeta>& metas, double test_fraction,
                                    uint64_t seed) {
  require(test_fraction >= 0.0 && test_fraction <= 1.0,
          "test fraction must lie in [0, 1]");
  std::map<std::string, std::vector<size_t>> by_view;
  for (size_t i = 0; i < metas.size(); ++i) by_view[metas[i].view].push_back(i);
  Rng rng(mix_seed({seed, 0x73706c6974ull}));
  for (auto& [view, indices] : by_view) {
    deterministic_shuffle(indices, rng);
    size_t n_test = size_t(std::llround(test_fraction * double(indices.size())));
    for (size_t k = 0; k < indices.size(); ++k) {
      metas[indices[k]].split = (k < n_test) ? "test" : "train";
    }
  }
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

// Symmetric draw ranges for the four online transformations, plus how many
// augmented copies accompany each original per epoch.
struct AugmentationPolicy {
  double rotation_deg = 20.0;    // rotation angle drawn from ±rotation_deg
  double shift_frac = 0.10;      // shift drawn from ±shift_frac of the image side
  double zoom_frac = 0.10;       // zoom factor drawn from 1 ± zoom_frac
  double brightness_frac = 0.40; // brightness factor drawn from 1 ± brightness_frac
  int64_t copies_per_sample = 3;

  void validate() const {
    if (rotation_deg < 0) throw ConfigError("augment.rotation_deg must be >= 0");
    if (shift_frac < 0) throw ConfigError("augment.shift_frac must be >= 0");
    if (zoom_frac < 0 || zoom_frac >= 1.0) {
      throw ConfigError("augment.zoom_frac must lie in [0, 1)");
    }
    if (brightness_frac < 0 || brightness_frac >= 1.0) {
      throw ConfigError("augment.brightness_frac must lie in [0, 1)");
    }
    if (copies_per_sample < 0) throw ConfigError("augment.copies_per_sample must be >= 0");
  }

  nlohmann::json to_json() const {
    return {{"rotation_deg", rotation_deg},
            {"shift_frac", shift_frac},
            {"zoom_frac", zoom_frac},
            {"brightness_frac", brightness_frac},
            {"copies_per_sample", copies_per_sample}};
  }

  static AugmentationPolicy from_json(const nlohmann::json& j) {
    AugmentationPolicy p;
    p.rotation_deg = j.value("rotation_deg", p.rotation_deg);
    p.shift_frac = j.value("shift_frac", p.shift_frac);
    p.zoom_frac = j.value("zoom_frac", p.zoom_frac);
    p.brightness_frac = j.value("brightness_frac", p.brightness_frac);
    p.copies_per_sample = j.value("copies_per_sample", p.copies_per_sample);
    p.validate();
    return p;
  }
};

// One concrete transformation, fully determined.  Defaults are the identity.
struct AugmentParams {
  double rotation_deg = 0.0; // positive angles rotate content about the centre
  double shift_x = 0.0;      // fraction of width; positive moves content right
  double shift_y = 0.0;      // fraction of height; positive moves content down
  double zoom = 1.0;         // > 1 magnifies about the centre
  double brightness = 1.0;   // multiplicative intensity factor, image only
};

// Draw order is fixed (rotation, shift x, shift y, zoom, brightness) so a
// given rng state always yields the same transformation.
inline AugmentParams draw_params(const AugmentationPolicy& policy, Rng& rng) {
  AugmentParams p;
  p.rotation_deg = rng.uniform(-policy.rotation_deg, policy.rotation_deg);
  p.shift_x = rng.uniform(-policy.shift_frac, policy.shift_frac);
  p.shift_y = rng.uniform(-policy.shift_frac, policy.shift_frac);
  p.zoom = 1.0 + rng.uniform(-policy.zoom_frac, policy.zoom_frac);
  p.brightness = 1.0 + rng.uniform(-policy.brightness_frac, policy.brightness_frac);
  return p;
}

// Applies rotation -> shift -> zoom as one composed affine resampling, then
// brightness.  The image is sampled bilinearly with edge replication; the
// mask with nearest-neighbour lookup and background (0) fill, so labels are
// never blended.  An identity parameter set reproduces the input bit-exactly.
inline AnnotatedImage apply_augment(const AnnotatedImage& sample, const AugmentParams& params) {
  sample.validate();
  require(params.zoom > 0, "zoom factor must be positive");
  require(params.brightness >= 0, "brightness factor must be >= 0");

  const int64_t h = sample.image.size(0);
  const int64_t w = sample.image.size(1);
  const double theta = params.rotation_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double cx = double(w - 1) / 2.0;
  const double cy = double(h - 1) / 2.0;
  const double tx = params.shift_x * double(w);
  const double ty = params.shift_y * double(h);

  AnnotatedImage out;
  out.meta = sample.meta;
  out.image = torch::empty_like(sample.image);
  out.mask = torch::empty_like(sample.mask);

  auto src_img = sample.image.accessor<uint8_t, 2>();
  auto src_mask = sample.mask.accessor<int64_t, 2>();
  auto dst_img = out.image.accessor<uint8_t, 2>();
  auto dst_mask = out.mask.accessor<int64_t, 2>();

  auto clamp_x = [&](int64_t x) { return std::clamp<int64_t>(x, 0, w - 1); };
  auto clamp_y = [&](int64_t y) { return std::clamp<int64_t>(y, 0, h - 1); };

  for (int64_t oy = 0; oy < h; ++oy) {
    for (int64_t ox = 0; ox < w; ++ox) {
      // Invert zoom, then shift, then rotation to find the source position.
      const double ux = (double(ox) - cx) / params.zoom - tx;
      const double uy = (double(oy) - cy) / params.zoom - ty;
      const double px = cos_t * ux + sin_t * uy + cx;
      const double py = -sin_t * ux + cos_t * uy + cy;

      const double fx0 = std::floor(px);
      const double fy0 = std::floor(py);
      const double fx = px - fx0;
      const double fy = py - fy0;
      const int64_t x0 = clamp_x(int64_t(fx0));
      const int64_t x1 = clamp_x(int64_t(fx0) + 1);
      const int64_t y0 = clamp_y(int64_t(fy0));
      const int64_t y1 = clamp_y(int64_t(fy0) + 1);
      double v = (1.0 - fy) * ((1.0 - fx) * double(src_img[y0][x0]) +
                               fx * double(src_img[y0][x1])) +
                 fy * ((1.0 - fx) * double(src_img[y1][x0]) +
                       fx * double(src_img[y1][x1]));
      v = std::clamp(v * params.brightness, 0.0, 255.0);
      dst_img[oy][ox] = uint8_t(std::llround(v));

      const int64_t nx = int64_t(std::llround(px));
      const int64_t ny = int64_t(std::llround(py));
      dst_mask[oy][ox] =
          (nx >= 0 && nx < w && ny >= 0 && ny < h) ? src_mask[ny][nx] : int64_t(0);
    }
  }
  return out;
}

inline AnnotatedImage augment(const AnnotatedImage& sample, const AugmentationPolicy& policy,
                              uint64_t seed) {
  policy.validate();
  Rng rng(seed);
  return apply_augment(sample, draw_params(policy, rng));
}

// ---------------------------------------------------------------------------
// Epoch stream
// ---------------------------------------------------------------------------

struct Batch {
  torch::Tensor images;  // f32 [B,1,H,W] in [0,1]
  torch::Tensor masks;   // i64 [B,H,W]
};

// One epoch of (original + copies_per_sample augmented) samples in a
// deterministically shuffled order, batched on demand.  Augmentation seeds
// depend only on (global_seed, epoch, sample index, copy index), so the
// stream contents do not depend on batch size or on how many workers
// prefetch them.
class EpochStream {
 public:
  EpochStream(const Dataset& dataset, AugmentationPolicy policy, uint64_t global_seed,
              int64_t epoch, int64_t batch_size)
      : dataset_(&dataset),
        policy_(std::move(policy)),
        global_seed_(global_seed),
        epoch_(epoch),
        batch_size_(batch_size) {
    require(batch_size_ > 0, "batch size must be positive");
    require(epoch_ >= 0, "epoch index must be >= 0");
    policy_.validate();
    order_.reserve(size_t(dataset.size() * (policy_.copies_per_sample + 1)));
    for (int64_t i = 0; i < dataset.size(); ++i) {
      for (int64_t c = 0; c <= policy_.copies_per_sample; ++c) order_.push_back({i, c});
    }
    Rng rng(mix_seed({global_seed_, uint64_t(epoch_), kOrderSalt}));
    deterministic_shuffle(order_, rng);
  }

  int64_t total_samples() const { return int64_t(order_.size()); }
  int64_t num_batches() const {
    return (total_samples() + batch_size_ - 1) / batch_size_;
  }

  // The shuffled (sample index, copy index) schedule; copy 0 is the original.
  const std::vector<std::pair<int64_t, int64_t>>& order() const { return order_; }

  uint64_t sample_seed(int64_t sample_index, int64_t copy_index) const {
    return mix_seed({global_seed_, uint64_t(epoch_), uint64_t(sample_index),
                     uint64_t(copy_index)});
  }

  // Copy 0 returns the stored sample untouched; higher copies are fresh
  // augmentations under the per-(epoch, sample, copy) seed.
  AnnotatedImage materialize(int64_t sample_index, int64_t copy_index) const {
    const AnnotatedImage& s = dataset_->at(sample_index);
    if (copy_index == 0) return s;
    return augment(s, policy_, sample_seed(sample_index, copy_index));
  }

  std::optional<Batch> next() {
    if (cursor_ >= total_samples()) return std::nullopt;
    const int64_t n = std::min<int64_t>(batch_size_, total_samples() - cursor_);
    std::vector<torch::Tensor> images, masks;
    images.reserve(size_t(n));
    masks.reserve(size_t(n));
    for (int64_t k = 0; k < n; ++k) {
      auto [i, c] = order_[size_t(cursor_ + k)];
      AnnotatedImage s = materialize(i, c);
      if (!images.empty() && s.image.sizes() != images.front().sizes()) {
        throw DataError("samples in a batch must share dimensions; sample '" + s.meta.stem +
                        "' differs");
      }
      images.push_back(s.image);
      masks.push_back(s.mask);
    }
    cursor_ += n;
    Batch b;
    b.images = torch::stack(images).to(torch::kFloat32).div(255.0).unsqueeze(1);
    b.masks = torch::stack(masks);
    return b;
  }

  void reset() { cursor_ = 0; }

 private:
  static constexpr uint64_t kOrderSalt = 0x6f7264657273616cull;

  const Dataset* dataset_;
  AugmentationPolicy policy_;
  uint64_t global_seed_;
  int64_t epoch_;
  int64_t batch_size_;
  std::vector<std::pair<int64_t, int64_t>> order_;
  int64_t cursor_ = 0;
};

}  // namespace vesselseg
