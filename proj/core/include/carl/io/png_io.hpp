#pragma once

#include "carl/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace carl::io {

// 8-bit grayscale; values clamped from [0,1]
void write_png_gray(const std::string& path, int height, int width, const float* data);
// returns row-major bytes
std::vector<std::uint8_t> read_png_gray(const std::string& path, int* height, int* width);

// interleaved RGB, row-major
void write_png_rgb(const std::string& path, int height, int width,
                   const std::vector<std::uint8_t>& rgb);

}  // namespace carl::io
