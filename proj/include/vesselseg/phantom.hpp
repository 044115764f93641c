// Synthetic angiographic phantoms with exact ground-truth masks.
//
// Each phantom is a noisy bright background crossed by dark tubular
// structures: one catheter entering from the frame edge (label 2), one
// branching artery tree grown from an edge root (label 1, overwriting the
// catheter where they cross), and unlabeled clutter — thin sub-calibre
// vessels and broad soft bands — that mimics structures a clinical
// annotation protocol would skip.  Labels are written where tube geometry is
// stamped, before blur and noise touch the image, so the mask is exact by
// construction and the generator doubles as a segmentation oracle.
//
// Geometry is expressed at a nominal 0.2 mm/pixel at size 512 and scales
// linearly with the render size.  The clinically relevant calibre cutoff
// (2 mm at the vessel origin) therefore maps to a 10 pixel root width before
// `width_scale`; labeled trees start at or above it, clutter stays below.

#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <tuple>
#include <vector>

#include "vesselseg/common.hpp"
#include "vesselseg/data.hpp"

namespace vesselseg {

inline constexpr double kMmPerPixelAt512 = 0.2;
inline constexpr double kRelevantRootWidthPxAt512 = 10.0;  // 2 mm at 0.2 mm/px

struct PhantomConfig {
  int64_t size = 512;
  // Multiplies every rendered width.  Small renders (e.g. 64 px test
  // fixtures) use > 1 so vessels stay several pixels wide.
  double width_scale = 1.0;

  void validate() const {
    if (size <= 0 || size % 32 != 0) {
      throw ConfigError("phantom.size must be a positive multiple of 32");
    }
    if (!(width_scale > 0)) throw ConfigError("phantom.width_scale must be > 0");
  }
};

namespace phantomdetail {

struct Frame {
  int64_t size = 0;
  std::vector<double> image;
  std::vector<uint8_t> mask;
  int64_t artery_px = 0;

  explicit Frame(int64_t n) : size(n), image(size_t(n * n), 0.0), mask(size_t(n * n), 0) {}
  double& img(int64_t y, int64_t x) { return image[size_t(y * size + x)]; }
  uint8_t& lab(int64_t y, int64_t x) { return mask[size_t(y * size + x)]; }
};

// Stamps a filled disc.  The image darkens toward `level` (dark structures
// win via min-blend, with a slight radial lift so centrelines read darker);
// label >= 0 also claims the mask, label -1 leaves it untouched.
inline void stamp_disc(Frame& f, double cx, double cy, double radius, double level, int label) {
  const double r = std::max(radius, 0.8);
  const int64_t x_lo = std::max<int64_t>(0, int64_t(std::floor(cx - r)));
  const int64_t x_hi = std::min<int64_t>(f.size - 1, int64_t(std::ceil(cx + r)));
  const int64_t y_lo = std::max<int64_t>(0, int64_t(std::floor(cy - r)));
  const int64_t y_hi = std::min<int64_t>(f.size - 1, int64_t(std::ceil(cy + r)));
  for (int64_t y = y_lo; y <= y_hi; ++y) {
    for (int64_t x = x_lo; x <= x_hi; ++x) {
      const double dx = double(x) - cx;
      const double dy = double(y) - cy;
      const double d2 = dx * dx + dy * dy;
      if (d2 > r * r) continue;
      const double lift = 18.0 * (d2 / (r * r));
      f.img(y, x) = std::min(f.img(y, x), level + lift);
      if (label >= 0) {
        if (label == 1 && f.lab(y, x) != 1) ++f.artery_px;
        f.lab(y, x) = uint8_t(label);
      }
    }
  }
}

// Random border point with an inward heading: (x, y, angle).
inline std::tuple<double, double, double> edge_entry(Rng& rng, int64_t size) {
  const double u = rng.uniform(0.15, 0.85) * double(size - 1);
  const double half_pi = std::numbers::pi / 2.0;
  double x = 0, y = 0, angle = 0;
  switch (int(rng.below(4))) {
    case 0: x = u; y = 1.0; angle = half_pi; break;            // top edge, heading down
    case 1: x = double(size - 2); y = u; angle = 2 * half_pi; break;  // right, heading left
    case 2: x = u; y = double(size - 2); angle = -half_pi; break;     // bottom, heading up
    default: x = 1.0; y = u; angle = 0.0; break;               // left, heading right
  }
  return {x, y, angle + rng.uniform(-0.35, 0.35)};
}

struct TreeState {
  Rng* rng = nullptr;
  Frame* frame = nullptr;
  std::vector<std::array<double, 3>>* anchors = nullptr;  // {x, y, width} per stamp
  int64_t budget_px = 0;
  double min_width = 1.5;
  int max_depth = 4;
};

// Grows one vessel run, recursively spawning tapered side branches.  Steps
// are short enough that consecutive stamps share pixels, so everything a
// single call paints stays 8-connected to its starting point.
inline void walk_artery(TreeState& st, double x, double y, double angle, double width,
                        double level, int depth) {
  Rng& rng = *st.rng;
  Frame& f = *st.frame;
  int64_t steps_left = 8 * f.size;
  while (width >= st.min_width && steps_left-- > 0) {
    if (x < -width || x > double(f.size) + width || y < -width ||
        y > double(f.size) + width) {
      break;
    }
    if (f.artery_px >= st.budget_px) break;
    stamp_disc(f, x, y, width / 2.0, level, 1);
    st.anchors->push_back({x, y, width});
    const double step = std::clamp(0.30 * width, 0.5, 0.8);
    angle += rng.uniform(-0.045, 0.045);
    x += std::cos(angle) * step;
    y += std::sin(angle) * step;
    width *= 0.9994;
    if (depth < st.max_depth && rng.coin(0.005)) {
      const double sign = rng.coin() ? 1.0 : -1.0;
      const double child_width = width * rng.uniform(0.72, 0.88);
      const double child_angle = angle + sign * rng.uniform(0.35, 0.95);
      walk_artery(st, x, y, child_angle, child_width, level + rng.uniform(0.0, 8.0),
                  depth + 1);
      width *= rng.uniform(0.80, 0.95);
      angle -= sign * rng.uniform(0.05, 0.25);
    }
  }
}

// Straighter, unbranched tube used for the catheter and for unlabeled
// sub-calibre clutter.
inline void walk_tube(Frame& f, Rng& rng, double x, double y, double angle, double width,
                      double level, double length_px, double wobble, int label) {
  double remaining = length_px;
  while (remaining > 0) {
    if (x < -width || x > double(f.size) + width || y < -width ||
        y > double(f.size) + width) {
      break;
    }
    stamp_disc(f, x, y, width / 2.0, level, label);
    const double step = std::clamp(0.35 * width, 0.5, 0.8);
    angle += rng.uniform(-wobble, wobble);
    x += std::cos(angle) * step;
    y += std::sin(angle) * step;
    remaining -= step;
  }
}

// Broad, faint darkening with a Gaussian cross-profile along a random line
// (soft-tissue shadow stand-in).  Image only.
inline void soft_band(Frame& f, Rng& rng) {
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double nx = -std::sin(angle);
  const double ny = std::cos(angle);
  const double cx = rng.uniform(0.2, 0.8) * double(f.size);
  const double cy = rng.uniform(0.2, 0.8) * double(f.size);
  const double amp = rng.uniform(6.0, 18.0);
  const double sigma = rng.uniform(0.08, 0.20) * double(f.size);
  for (int64_t y = 0; y < f.size; ++y) {
    for (int64_t x = 0; x < f.size; ++x) {
      const double d = nx * (double(x) - cx) + ny * (double(y) - cy);
      f.img(y, x) -= amp * std::exp(-(d * d) / (2.0 * sigma * sigma));
    }
  }
}

// One horizontal+vertical pass of a [1 2 1]/4 kernel with edge clamp.
inline void blur_121(Frame& f) {
  std::vector<double> tmp(f.image.size());
  const int64_t n = f.size;
  for (int64_t y = 0; y < n; ++y) {
    for (int64_t x = 0; x < n; ++x) {
      const int64_t xl = std::max<int64_t>(0, x - 1);
      const int64_t xr = std::min<int64_t>(n - 1, x + 1);
      tmp[size_t(y * n + x)] =
          0.25 * f.img(y, xl) + 0.5 * f.img(y, x) + 0.25 * f.img(y, xr);
    }
  }
  for (int64_t y = 0; y < n; ++y) {
    for (int64_t x = 0; x < n; ++x) {
      const int64_t yu = std::max<int64_t>(0, y - 1);
      const int64_t yd = std::min<int64_t>(n - 1, y + 1);
      f.img(y, x) = 0.25 * tmp[size_t(yu * n + x)] + 0.5 * tmp[size_t(y * n + x)] +
                    0.25 * tmp[size_t(yd * n + x)];
    }
  }
}

}  // namespace phantomdetail

// Renders one phantom.  Deterministic given (seed, config); different seeds
// give different geometry.  The caller typically overwrites stem/patient/split
// metadata with its own numbering scheme.
inline AnnotatedImage generate_phantom(uint64_t seed, const PhantomConfig& cfg = PhantomConfig{}) {
  using namespace phantomdetail;
  cfg.validate();
  Rng rng(mix_seed({seed, 0x7068616e746f6dull}));
  const int64_t n = cfg.size;
  Frame frame(n);

  // Bright background with a little low-frequency structure.
  const double base = rng.uniform(175.0, 215.0);
  struct Wave {
    double amp, fx, fy, phase;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 2; ++k) {
    const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double freq = rng.uniform(0.5, 1.5) * 2.0 * std::numbers::pi / double(n);
    waves.push_back({rng.uniform(4.0, 12.0), freq * std::cos(dir), freq * std::sin(dir),
                     rng.uniform(0.0, 2.0 * std::numbers::pi)});
  }
  for (int64_t y = 0; y < n; ++y) {
    for (int64_t x = 0; x < n; ++x) {
      double v = base;
      for (const Wave& wv : waves) {
        v += wv.amp * std::cos(wv.fx * double(x) + wv.fy * double(y) + wv.phase);
      }
      frame.img(y, x) = v;
    }
  }

  const double scale = double(n) / 512.0;
  const double relevant_w = kRelevantRootWidthPxAt512 * scale * cfg.width_scale;

  // Unlabeled clutter first so labeled tubes paint over it.
  const int64_t num_bands = 1 + rng.below(2);
  for (int64_t k = 0; k < num_bands; ++k) soft_band(frame, rng);
  const int64_t num_thin = 2 + rng.below(4);
  for (int64_t k = 0; k < num_thin; ++k) {
    auto [x, y, angle] = edge_entry(rng, n);
    walk_tube(frame, rng, x, y, angle, relevant_w * rng.uniform(0.20, 0.45),
              rng.uniform(120.0, 160.0), rng.uniform(0.3, 0.8) * double(n), 0.06, -1);
  }

  // Catheter: a dark, stiff tube entering from the frame edge.
  {
    auto [x, y, angle] = edge_entry(rng, n);
    walk_tube(frame, rng, x, y, angle, relevant_w * rng.uniform(0.75, 1.05),
              rng.uniform(30.0, 55.0), rng.uniform(0.6, 1.1) * double(n), 0.03, 2);
  }

  // Artery tree.  The root enters at or above the relevant calibre; growth
  // stops at a pixel budget, and extra branches sprout from existing anchors
  // until a floor coverage is met, so the labeled fraction stays inside a
  // fixed band without breaking connectivity.
  {
    std::vector<std::array<double, 3>> anchors;
    TreeState st;
    st.rng = &rng;
    st.frame = &frame;
    st.anchors = &anchors;
    st.budget_px = int64_t(std::llround(0.12 * double(n) * double(n)));
    st.min_width = std::max(1.5, 0.15 * relevant_w);
    auto [x, y, angle] = edge_entry(rng, n);
    // Clamped so even tiny renders grow a tree; width_scale is the intended
    // way to keep small fixtures legible.
    const double root_w =
        std::max(relevant_w * rng.uniform(1.0, 1.4), st.min_width * 1.25);
    walk_artery(st, x, y, angle, root_w, rng.uniform(60.0, 90.0), 0);
    const int64_t floor_px = int64_t(std::llround(0.025 * double(n) * double(n)));
    int attempts = 0;
    while (frame.artery_px < floor_px && attempts < 60 && !anchors.empty()) {
      const auto a = anchors[size_t(rng.below(int64_t(anchors.size())))];
      const double w = std::max(st.min_width * 1.05, a[2] * rng.uniform(0.70, 0.95));
      walk_artery(st, a[0], a[1], rng.uniform(0.0, 2.0 * std::numbers::pi), w,
                  rng.uniform(60.0, 90.0), 1);
      ++attempts;
    }
  }

  blur_121(frame);
  const double noise_sigma = rng.uniform(2.5, 6.0);
  for (double& v : frame.image) v += noise_sigma * rng.normal();

  AnnotatedImage out;
  out.image = torch::empty({n, n}, torch::kUInt8);
  out.mask = torch::empty({n, n}, torch::kLong);
  auto img = out.image.accessor<uint8_t, 2>();
  auto msk = out.mask.accessor<int64_t, 2>();
  for (int64_t y = 0; y < n; ++y) {
    for (int64_t x = 0; x < n; ++x) {
      img[y][x] = uint8_t(std::llround(std::clamp(frame.img(y, x), 0.0, 255.0)));
      msk[y][x] = int64_t(frame.lab(y, x));
    }
  }
  out.meta.stem = "ph" + std::to_string(seed);
  out.meta.patient_id = "p" + std::to_string(seed);
  out.meta.view = rng.coin() ? "LCA" : "RCA";
  out.meta.annotator = "synthetic";
  out.meta.split = "train";
  return out;
}

}  // namespace vesselseg
