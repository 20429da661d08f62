#include "carl/io/plot.hpp"

#include "carl/io/png_io.hpp"

#include <algorithm>
#include <cmath>

namespace carl::io {

Canvas::Canvas(int height, int width, std::uint8_t fill)
    : h_(height), w_(width), rgb_(std::size_t(height) * width * 3, fill) {}

void Canvas::set(int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (y < 0 || y >= h_ || x < 0 || x >= w_) return;
  std::size_t i = (std::size_t(y) * w_ + x) * 3;
  rgb_[i] = r;
  rgb_[i + 1] = g;
  rgb_[i + 2] = b;
}

void Canvas::line(int y0, int x0, int y1, int x1, std::uint8_t r, std::uint8_t g,
                  std::uint8_t b) {
  int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    set(y0, x0, r, g, b);
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

void Canvas::dot(int y, int x, int radius, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius) set(y + dy, x + dx, r, g, b);
}

void Canvas::save(const std::string& path) const { write_png_rgb(path, h_, w_, rgb_); }

int AxisMap::px(double x) const {
  double t = (x - x_min) / std::max(1e-12, x_max - x_min);
  return margin + int(std::lround(t * (width - 2 * margin)));
}

int AxisMap::py(double y) const {
  double t = (y - y_min) / std::max(1e-12, y_max - y_min);
  return height - margin - int(std::lround(t * (height - 2 * margin)));
}

}  // namespace carl::io
