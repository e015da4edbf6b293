#pragma once

// 8-bit PNG I/O (libpng) and conversions to planar float images.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "sortrack/tensor.hpp"

namespace sortrack {

// Interleaved 8-bit image with 1 (gray) or 3 (RGB) channels.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline void write_png(const Image8& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3) throw InputError("write_png: only gray or RGB images");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw InputError("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng error writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // No timestamps or text chunks: output bytes depend only on pixels.
  png_write_info(png, info);
  const std::size_t stride = img.width * img.channels;
  for (std::size_t y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline Image8 read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw InputError("read_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError("read_png: corrupt PNG " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  png_set_strip_alpha(png);
  const auto color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  Image8 img(png_get_image_width(png, info), png_get_image_height(png, info), png_get_channels(png, info));
  const std::size_t stride = img.width * img.channels;
  for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + y * stride, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// Planar float image on the 0..255 scale; gray input is replicated to RGB.
inline FeatureMap to_planar(const Image8& img) {
  FeatureMap out = FeatureMap::map(3, img.height, img.width);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        out(c, y, x) = img.at(y, x, img.channels == 3 ? c : 0);
  return out;
}

inline Image8 to_image8(const FeatureMap& planar) {
  require_rank(planar, 3, "to_image8");
  const std::size_t c = planar.channels();
  if (c != 1 && c != 3) throw ShapeError("to_image8: expected 1 or 3 channels");
  Image8 img(planar.width(), planar.height(), c);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        img.at(y, x, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(planar(ch, y, x)), 0L, 255L));
  return img;
}

// Min-max scaled grayscale rendering of a single-channel map.
template <class T>
Image8 heatmap_image(const BasicTensor<T>& map) {
  const std::size_t h = map.rank() == 3 ? map.height() : map.dim(0);
  const std::size_t w = map.rank() == 3 ? map.width() : map.dim(1);
  Image8 img(w, h, 1);
  double lo = map[0], hi = map[0];
  for (std::size_t i = 0; i < h * w; ++i) {
    lo = std::min(lo, static_cast<double>(map[i]));
    hi = std::max(hi, static_cast<double>(map[i]));
  }
  const double range = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < h * w; ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (static_cast<double>(map[i]) - lo) / range));
  return img;
}

}  // namespace sortrack
