#include "carl/io/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace carl::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const std::string& path, int height, int width, int channels,
               const std::vector<std::uint8_t>& bytes) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ResourceError("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ResourceError("libpng write failure for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[std::size_t(y)] = const_cast<png_bytep>(&bytes[std::size_t(y) * width * channels]);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_gray(const std::string& path, int height, int width, const float* data) {
  std::vector<std::uint8_t> bytes(std::size_t(height) * width);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    float v = std::fmin(1.0f, std::fmax(0.0f, data[i]));
    bytes[i] = std::uint8_t(std::lround(255.0f * v));
  }
  write_png(path, height, width, 1, bytes);
}

std::vector<std::uint8_t> read_png_gray(const std::string& path, int* height, int* width) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ResourceError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ResourceError("libpng read failure for " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) png_set_rgb_to_gray(png, 1, -1, -1);
  png_read_update_info(png, info);
  int h = int(png_get_image_height(png, info));
  int w = int(png_get_image_width(png, info));
  std::vector<std::uint8_t> bytes(std::size_t(h) * w);
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[std::size_t(y)] = &bytes[std::size_t(y) * w];
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  *height = h;
  *width = w;
  return bytes;
}

void write_png_rgb(const std::string& path, int height, int width,
                   const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != std::size_t(height) * width * 3) throw InputError("rgb buffer size mismatch");
  write_png(path, height, width, 3, rgb);
}

}  // namespace carl::io
