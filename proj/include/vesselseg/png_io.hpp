#pragma once

// PNG IO built directly on libpng: 8-bit grayscale angiogram frames,
// palette-indexed label masks (read back as raw indices), and RGB canvases
// for rendered plots. All failures raise DataError with the path.

#include <png.h>
#include <torch/torch.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <tuple>
#include <vector>

#include "vesselseg/common.hpp"

namespace vesselseg {

namespace detail {

struct FileHandle {
  std::FILE* f = nullptr;
  explicit FileHandle(const std::filesystem::path& path, const char* mode)
      : f(std::fopen(path.string().c_str(), mode)) {}
  ~FileHandle() {
    if (f) std::fclose(f);
  }
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;
};

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  PngReader() {
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png) info = png_create_info_struct(png);
  }
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  PngWriter() {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (png) info = png_create_info_struct(png);
  }
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

// Reads any supported PNG into one byte per pixel per channel. Palette
// images are NOT expanded: rows hold raw palette indices.
inline std::tuple<std::vector<unsigned char>, png_uint_32, png_uint_32, int, int> read_png_raw(
    const std::filesystem::path& path) {
  FileHandle file(path, "rb");
  if (!file.f) throw DataError("cannot open png: " + path.string());
  PngReader r;
  if (!r.png || !r.info) throw DataError("libpng initialization failed");
  if (setjmp(png_jmpbuf(r.png))) throw DataError("corrupt or unreadable png: " + path.string());
  png_init_io(r.png, file.f);
  png_read_info(r.png, r.info);

  png_uint_32 width = png_get_image_width(r.png, r.info);
  png_uint_32 height = png_get_image_height(r.png, r.info);
  int color_type = png_get_color_type(r.png, r.info);
  int bit_depth = png_get_bit_depth(r.png, r.info);

  if (bit_depth == 16) png_set_strip_16(r.png);
  if (bit_depth < 8) {
    if (color_type == PNG_COLOR_TYPE_GRAY) png_set_expand_gray_1_2_4_to_8(r.png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_packing(r.png);
  }
  png_read_update_info(r.png, r.info);

  size_t rowbytes = png_get_rowbytes(r.png, r.info);
  std::vector<unsigned char> data(rowbytes * height);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = data.data() + y * rowbytes;
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);

  int channels = int(rowbytes / width);
  return {std::move(data), width, height, color_type, channels};
}

inline void write_png(const std::filesystem::path& path, const unsigned char* data,
                      png_uint_32 width, png_uint_32 height, int color_type, int channels,
                      const std::vector<png_color>& palette) {
  FileHandle file(path, "wb");
  if (!file.f) throw DataError("cannot open png for writing: " + path.string());
  PngWriter w;
  if (!w.png || !w.info) throw DataError("libpng initialization failed");
  if (setjmp(png_jmpbuf(w.png))) throw DataError("png write failed: " + path.string());
  png_init_io(w.png, file.f);
  png_set_IHDR(w.png, w.info, width, height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    png_set_PLTE(w.png, w.info, palette.data(), int(palette.size()));
  }
  png_write_info(w.png, w.info);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) {
    rows[y] = const_cast<png_bytep>(data + size_t(y) * width * channels);
  }
  png_write_image(w.png, rows.data());
  png_write_end(w.png, nullptr);
}

}  // namespace detail

// 8-bit grayscale frame -> u8 [H,W].
inline torch::Tensor read_png_gray8(const std::filesystem::path& path) {
  auto [data, w, h, color_type, channels] = detail::read_png_raw(path);
  if (color_type != PNG_COLOR_TYPE_GRAY || channels != 1) {
    throw DataError("expected 8-bit grayscale png: " + path.string());
  }
  auto t = torch::from_blob(data.data(), {int64_t(h), int64_t(w)}, torch::kUInt8);
  return t.clone();
}

inline void write_png_gray8(const std::filesystem::path& path, const torch::Tensor& img) {
  require(img.dim() == 2 && img.dtype() == torch::kUInt8, "write_png_gray8: expected u8 [H,W]");
  auto c = img.contiguous();
  detail::write_png(path, c.data_ptr<unsigned char>(), png_uint_32(c.size(1)),
                    png_uint_32(c.size(0)), PNG_COLOR_TYPE_GRAY, 1, {});
}

// Display palette for label masks: background, artery, catheter.
inline const std::vector<png_color>& mask_palette() {
  static const std::vector<png_color> p = {{0, 0, 0}, {220, 60, 60}, {70, 110, 220}};
  return p;
}

// Label mask -> palette-indexed PNG (one byte per pixel, values are class ids).
inline void write_png_mask(const std::filesystem::path& path, const torch::Tensor& mask) {
  require(mask.dim() == 2, "write_png_mask: expected [H,W]");
  auto m = mask.to(torch::kUInt8).contiguous();
  int64_t hi = m.numel() > 0 ? m.max().item<int64_t>() : 0;
  require(hi < int64_t(mask_palette().size()),
          "write_png_mask: label " + std::to_string(hi) + " has no palette entry");
  detail::write_png(path, m.data_ptr<unsigned char>(), png_uint_32(m.size(1)),
                    png_uint_32(m.size(0)), PNG_COLOR_TYPE_PALETTE, 1, mask_palette());
}

// Reads a label mask (palette indices or plain grayscale values) and
// validates every pixel is a known class id.
inline torch::Tensor read_png_mask(const std::filesystem::path& path, int64_t num_classes = 3) {
  auto [data, w, h, color_type, channels] = detail::read_png_raw(path);
  if (channels != 1 ||
      (color_type != PNG_COLOR_TYPE_PALETTE && color_type != PNG_COLOR_TYPE_GRAY)) {
    throw DataError("mask must be a palette-indexed or grayscale png: " + path.string());
  }
  for (unsigned char v : data) {
    if (int64_t(v) >= num_classes) {
      throw DataError("unknown label value " + std::to_string(int(v)) + " in mask: " +
                      path.string());
    }
  }
  auto t = torch::from_blob(data.data(), {int64_t(h), int64_t(w)}, torch::kUInt8);
  return t.clone();
}

// RGB canvas (plots).
inline void write_png_rgb8(const std::filesystem::path& path,
                           const std::vector<unsigned char>& rgb, int width, int height) {
  require(int64_t(rgb.size()) == int64_t(width) * height * 3, "write_png_rgb8: buffer size");
  detail::write_png(path, rgb.data(), png_uint_32(width), png_uint_32(height),
                    PNG_COLOR_TYPE_RGB, 3, {});
}

inline std::tuple<std::vector<unsigned char>, int, int> read_png_rgb8(
    const std::filesystem::path& path) {
  auto [data, w, h, color_type, channels] = detail::read_png_raw(path);
  if (color_type != PNG_COLOR_TYPE_RGB || channels != 3) {
    throw DataError("expected 8-bit rgb png: " + path.string());
  }
  return {std::move(data), int(w), int(h)};
}

}  // namespace vesselseg
