#pragma once

// Minimal line-chart rasterizer for the loss-curve image. No text: series
// colours are listed in the accompanying CSV header order.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "introvae/image_io.hpp"

namespace introvae::plot {

using Color = std::array<std::uint8_t, 3>;

struct Series {
  std::vector<double> y;
  Color color;
  bool dashed = false;
};

inline void put(RgbImage& img, int x, int y, const Color& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  auto* p = img.pixels.data() + (std::size_t(y) * img.width + x) * 3;
  p[0] = c[0], p[1] = c[1], p[2] = c[2];
}

inline void line(RgbImage& img, int x0, int y0, int x1, int y1, const Color& c, bool dashed) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy, n = 0;
  while (true) {
    if (!dashed || (n / 6) % 2 == 0) put(img, x0, y0, c);
    ++n;
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) err += dy, x0 += sx;
    if (e2 <= dx) err += dx, y0 += sy;
  }
}

// Plots every series against its index, sharing one y range that starts at 0.
inline RgbImage line_chart(const std::vector<Series>& series, int width = 800, int height = 400) {
  RgbImage img{width, height, std::vector<std::uint8_t>(std::size_t(width) * height * 3, 255)};
  const int margin = 20;
  std::size_t n = 0;
  double y_max = 0;
  for (const auto& s : series) {
    n = std::max(n, s.y.size());
    for (double v : s.y)
      if (std::isfinite(v)) y_max = std::max(y_max, v);
  }
  if (n < 2 || y_max <= 0) return img;
  y_max *= 1.05;
  const Color axis{0, 0, 0};
  line(img, margin, height - margin, width - margin, height - margin, axis, false);
  line(img, margin, margin, margin, height - margin, axis, false);
  auto px = [&](std::size_t i) { return margin + int(std::lround(double(i) / double(n - 1) * (width - 2 * margin))); };
  auto py = [&](double v) { return height - margin - int(std::lround(v / y_max * (height - 2 * margin))); };
  for (const auto& s : series)
    for (std::size_t i = 1; i < s.y.size(); ++i)
      if (std::isfinite(s.y[i - 1]) && std::isfinite(s.y[i]))
        line(img, px(i - 1), py(s.y[i - 1]), px(i), py(s.y[i]), s.color, s.dashed);
  return img;
}

// Trailing moving average, used to smooth per-step loss traces.
inline std::vector<double> smooth(const std::vector<double>& y, std::size_t window) {
  std::vector<double> out(y.size());
  double acc = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    acc += y[i];
    if (i >= window) acc -= y[i - window];
    out[i] = acc / double(std::min(i + 1, window));
  }
  return out;
}

}  // namespace introvae::plot
