#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "pbd/errors.hpp"
#include "pbd/grids.hpp"

namespace pbd {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path);
  return f;
}

[[noreturn]] inline void png_quiet_error(png_structp png, png_const_charp) { png_longjmp(png, 1); }
inline void png_quiet_warning(png_structp, png_const_charp) {}

}  // namespace detail

/// Reads a PNG as a [0, 1] grayscale grid. Colour images are averaged over
/// their RGB channels; alpha is ignored; 16-bit samples are reduced to 8 bits.
inline RealGrid read_png(const std::string& path) {
  auto file = detail::open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_quiet_error, detail::png_quiet_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error(ErrorKind::Io, "libpng initialisation failed");
  }
  RealGrid out;
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorKind::Io, "malformed PNG " + path);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const std::size_t w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  const std::size_t channels = png_get_channels(png, info);
  buffer.resize(h * w * channels);
  rows.resize(h);
  for (std::size_t r = 0; r < h; ++r) rows[r] = buffer.data() + r * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  out = RealGrid(h, w);
  for (std::size_t j = 0; j < h * w; ++j) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < channels; ++ch) acc += buffer[j * channels + ch];
    out[j] = acc / (255.0 * static_cast<double>(channels));
  }
  return out;
}

/// Writes an 8-bit grayscale PNG; values are clamped to [0, 1].
inline void write_png(const RealGrid& g, const std::string& path) {
  auto file = detail::open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_quiet_error, detail::png_quiet_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(ErrorKind::Io, "libpng initialisation failed");
  }
  std::vector<png_byte> buffer(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) {
    buffer[j] = static_cast<png_byte>(std::lround(255.0 * std::clamp(g[j], 0.0, 1.0)));
  }
  std::vector<png_bytep> rows(g.height());
  for (std::size_t r = 0; r < g.height(); ++r) rows[r] = buffer.data() + r * g.width();
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::Io, "failed writing PNG " + path);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(g.width()), static_cast<png_uint_32>(g.height()), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Rescales to [0, 1] by the grid's own min and max (for kernel previews).
inline RealGrid normalize_for_display(const RealGrid& g) {
  RealGrid out = g;
  if (g.size() == 0) return out;
  const auto [lo, hi] = std::minmax_element(g.data().begin(), g.data().end());
  const double span = *hi - *lo;
  for (auto& v : out.data()) v = span > 0.0 ? (v - *lo) / span : 0.0;
  return out;
}

}  // namespace pbd
