#pragma once

#include "carl/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace carl::io {

// Minimal RGB raster canvas for the emitted scatter/curve plots.
class Canvas {
 public:
  Canvas(int height, int width, std::uint8_t fill = 255);
  void set(int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  void line(int y0, int x0, int y1, int x1, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  void dot(int y, int x, int radius, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  void save(const std::string& path) const;
  int height() const { return h_; }
  int width() const { return w_; }

 private:
  int h_, w_;
  std::vector<std::uint8_t> rgb_;
};

// Maps data coordinates into canvas pixels with fixed margins.
struct AxisMap {
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  int height = 400, width = 600, margin = 30;
  int px(double x) const;
  int py(double y) const;  // y axis points up
};

}  // namespace carl::io
