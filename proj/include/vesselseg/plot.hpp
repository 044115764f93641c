#pragma once

// Scatter plot rendering for accuracy/cost reports, emitted both as SVG
// (primary, with per-point tooltips) and as a rasterized PNG. No external
// plotting dependency; the raster path draws onto an RGB canvas with a
// built-in 5x7 bitmap font.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vesselseg/common.hpp"
#include "vesselseg/png_io.hpp"

namespace vesselseg {

struct ScatterPlot {
  struct Point {
    double x = 0.0;
    double y = 0.0;
    std::string label;
    bool highlight = false;  // frontier members get the accent color
  };
  std::string title, xlabel, ylabel;
  std::vector<Point> points;
  std::vector<std::pair<double, double>> line;  // ordered polyline (frontier)
};

namespace plotdetail {

struct Rgb {
  unsigned char r, g, b;
};
constexpr Rgb kInk{40, 40, 48};
constexpr Rgb kGrid{225, 225, 230};
constexpr Rgb kPoint{90, 120, 200};
constexpr Rgb kAccent{200, 70, 60};

constexpr int kWidth = 960, kHeight = 640;
constexpr int kMarginL = 90, kMarginR = 40, kMarginT = 60, kMarginB = 80;

struct Range {
  double lo, hi;
  double map(double v, double pix_lo, double pix_hi) const {
    return pix_lo + (v - lo) / (hi - lo) * (pix_hi - pix_lo);
  }
};

inline Range padded_range(double lo, double hi) {
  if (!(hi > lo)) {
    double pad = std::abs(lo) > 0 ? std::abs(lo) * 0.1 : 1.0;
    return {lo - pad, hi + pad};
  }
  double pad = (hi - lo) * 0.06;
  return {lo - pad, hi + pad};
}

// Tick positions snapped to a 1/2/5 decade grid.
inline std::vector<double> ticks(const Range& r, int target = 5) {
  double span = r.hi - r.lo;
  double raw = span / target;
  double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (raw <= m * mag) {
      step = m * mag;
      break;
    }
  }
  std::vector<double> out;
  for (double t = std::ceil(r.lo / step) * step; t <= r.hi + step * 1e-9; t += step) {
    out.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
  }
  return out;
}

inline std::string tick_label(double v) { return format_double(v, 6); }

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// 5x7 bitmap glyphs (uppercase + digits + punctuation), one byte per row,
// low 5 bits used, MSB-left.
inline const unsigned char* glyph(char c) {
  static const std::map<char, std::array<unsigned char, 7>> font = {
      {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
      {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
      {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
      {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
      {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
      {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
      {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
      {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
      {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
      {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
      {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x06, 0x08, 0x10, 0x1F}},
      {'3', {0x0E, 0x11, 0x01, 0x06, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
      {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
      {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
      {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
      {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
      {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
      {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
      {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
      {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
      {'%', {0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13}},
      {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
      {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
      {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
  };
  char u = char(std::toupper(static_cast<unsigned char>(c)));
  auto it = font.find(u);
  return it == font.end() ? font.at(' ').data() : it->second.data();
}

struct Canvas {
  int w, h;
  std::vector<unsigned char> rgb;
  Canvas(int w_, int h_) : w(w_), h(h_), rgb(size_t(w_) * h_ * 3, 255) {}

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    size_t i = (size_t(y) * w + x) * 3;
    rgb[i] = c.r;
    rgb[i + 1] = c.g;
    rgb[i + 2] = c.b;
  }

  void line(int x0, int y0, int x1, int y1, Rgb c) {
    int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void disk(int cx, int cy, int rad, Rgb c) {
    for (int y = -rad; y <= rad; ++y) {
      for (int x = -rad; x <= rad; ++x) {
        if (x * x + y * y <= rad * rad) set(cx + x, cy + y, c);
      }
    }
  }

  // Draws text with its top-left corner at (x, y); scale multiplies the
  // 5x7 cell. Lowercase maps to uppercase (single-case font).
  void text(int x, int y, const std::string& s, Rgb c, int scale = 2) {
    int cx = x;
    for (char ch : s) {
      const unsigned char* g = glyph(ch);
      for (int row = 0; row < 7; ++row) {
        for (int col = 0; col < 5; ++col) {
          if (g[row] & (1 << (4 - col))) {
            for (int sy = 0; sy < scale; ++sy) {
              for (int sx = 0; sx < scale; ++sx) {
                set(cx + col * scale + sx, y + row * scale + sy, c);
              }
            }
          }
        }
      }
      cx += 6 * scale;
    }
  }

  int text_width(const std::string& s, int scale = 2) const { return int(s.size()) * 6 * scale; }
};

}  // namespace plotdetail

inline std::string scatter_svg(const ScatterPlot& plot) {
  using namespace plotdetail;
  double x_lo = 0, x_hi = 0, y_lo = 0, y_hi = 0;
  require(!plot.points.empty(), "scatter plot: no points");
  x_lo = x_hi = plot.points[0].x;
  y_lo = y_hi = plot.points[0].y;
  for (const auto& p : plot.points) {
    x_lo = std::min(x_lo, p.x);
    x_hi = std::max(x_hi, p.x);
    y_lo = std::min(y_lo, p.y);
    y_hi = std::max(y_hi, p.y);
  }
  Range xr = padded_range(x_lo, x_hi), yr = padded_range(y_lo, y_hi);
  auto px = [&](double v) { return xr.map(v, kMarginL, kWidth - kMarginR); };
  auto py = [&](double v) { return yr.map(v, kHeight - kMarginB, kMarginT); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << kWidth / 2 << "\" y=\"30\" text-anchor=\"middle\" font-size=\"20\" "
       "font-family=\"sans-serif\">"
    << xml_escape(plot.title) << "</text>\n";

  for (double t : ticks(xr)) {
    double x = px(t);
    s << "<line x1=\"" << x << "\" y1=\"" << kMarginT << "\" x2=\"" << x << "\" y2=\""
      << kHeight - kMarginB << "\" stroke=\"#e1e1e6\"/>\n";
    s << "<text x=\"" << x << "\" y=\"" << kHeight - kMarginB + 22
      << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">"
      << tick_label(t) << "</text>\n";
  }
  for (double t : ticks(yr)) {
    double y = py(t);
    s << "<line x1=\"" << kMarginL << "\" y1=\"" << y << "\" x2=\"" << kWidth - kMarginR
      << "\" y2=\"" << y << "\" stroke=\"#e1e1e6\"/>\n";
    s << "<text x=\"" << kMarginL - 8 << "\" y=\"" << y + 4
      << "\" text-anchor=\"end\" font-size=\"13\" font-family=\"sans-serif\">" << tick_label(t)
      << "</text>\n";
  }
  s << "<rect x=\"" << kMarginL << "\" y=\"" << kMarginT << "\" width=\""
    << kWidth - kMarginL - kMarginR << "\" height=\"" << kHeight - kMarginT - kMarginB
    << "\" fill=\"none\" stroke=\"#282830\"/>\n";
  s << "<text x=\"" << (kMarginL + kWidth - kMarginR) / 2 << "\" y=\"" << kHeight - 18
    << "\" text-anchor=\"middle\" font-size=\"15\" font-family=\"sans-serif\">"
    << xml_escape(plot.xlabel) << "</text>\n";
  s << "<text x=\"22\" y=\"" << (kMarginT + kHeight - kMarginB) / 2
    << "\" text-anchor=\"middle\" font-size=\"15\" font-family=\"sans-serif\" "
       "transform=\"rotate(-90 22 "
    << (kMarginT + kHeight - kMarginB) / 2 << ")\">" << xml_escape(plot.ylabel) << "</text>\n";

  if (plot.line.size() >= 2) {
    s << "<polyline fill=\"none\" stroke=\"#c8463c\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : plot.line) s << px(x) << "," << py(y) << " ";
    s << "\"/>\n";
  }
  for (const auto& p : plot.points) {
    const char* fill = p.highlight ? "#c8463c" : "#5a78c8";
    s << "<circle cx=\"" << px(p.x) << "\" cy=\"" << py(p.y) << "\" r=\"5\" fill=\"" << fill
      << "\" fill-opacity=\"0.85\"><title>" << xml_escape(p.label) << "</title></circle>\n";
    if (!p.label.empty()) {
      s << "<text x=\"" << px(p.x) + 8 << "\" y=\"" << py(p.y) - 6
        << "\" font-size=\"11\" font-family=\"sans-serif\" fill=\"#50505a\">"
        << xml_escape(p.label) << "</text>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

inline void write_scatter_svg(const std::filesystem::path& path, const ScatterPlot& plot) {
  write_text_file(path, scatter_svg(plot));
}

inline void write_scatter_png(const std::filesystem::path& path, const ScatterPlot& plot) {
  using namespace plotdetail;
  require(!plot.points.empty(), "scatter plot: no points");
  double x_lo = plot.points[0].x, x_hi = plot.points[0].x;
  double y_lo = plot.points[0].y, y_hi = plot.points[0].y;
  for (const auto& p : plot.points) {
    x_lo = std::min(x_lo, p.x);
    x_hi = std::max(x_hi, p.x);
    y_lo = std::min(y_lo, p.y);
    y_hi = std::max(y_hi, p.y);
  }
  Range xr = padded_range(x_lo, x_hi), yr = padded_range(y_lo, y_hi);
  auto px = [&](double v) { return int(std::lround(xr.map(v, kMarginL, kWidth - kMarginR))); };
  auto py = [&](double v) { return int(std::lround(yr.map(v, kHeight - kMarginB, kMarginT))); };

  Canvas c(kWidth, kHeight);
  for (double t : ticks(xr)) {
    c.line(px(t), kMarginT, px(t), kHeight - kMarginB, kGrid);
    auto lbl = tick_label(t);
    c.text(px(t) - c.text_width(lbl) / 2, kHeight - kMarginB + 10, lbl, kInk);
  }
  for (double t : ticks(yr)) {
    c.line(kMarginL, py(t), kWidth - kMarginR, py(t), kGrid);
    auto lbl = tick_label(t);
    c.text(kMarginL - 10 - c.text_width(lbl), py(t) - 7, lbl, kInk);
  }
  c.line(kMarginL, kMarginT, kMarginL, kHeight - kMarginB, kInk);
  c.line(kMarginL, kHeight - kMarginB, kWidth - kMarginR, kHeight - kMarginB, kInk);
  c.line(kMarginL, kMarginT, kWidth - kMarginR, kMarginT, kInk);
  c.line(kWidth - kMarginR, kMarginT, kWidth - kMarginR, kHeight - kMarginB, kInk);
  c.text((kWidth - c.text_width(plot.title, 3)) / 2, 18, plot.title, kInk, 3);
  c.text((kMarginL + kWidth - kMarginR - c.text_width(plot.xlabel)) / 2, kHeight - 34,
         plot.xlabel, kInk);
  c.text(8, kMarginT - 26, plot.ylabel, kInk);

  if (plot.line.size() >= 2) {
    for (size_t i = 1; i < plot.line.size(); ++i) {
      c.line(px(plot.line[i - 1].first), py(plot.line[i - 1].second), px(plot.line[i].first),
             py(plot.line[i].second), kAccent);
    }
  }
  for (const auto& p : plot.points) {
    c.disk(px(p.x), py(p.y), 4, p.highlight ? kAccent : kPoint);
  }
  write_png_rgb8(path, c.rgb, c.w, c.h);
}

}  // namespace vesselseg
