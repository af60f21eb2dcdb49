#pragma once

// 8-bit grayscale / RGB PNG input and output through libpng.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "miscalib/errors.hpp"
#include "miscalib/rectify.hpp"

namespace miscalib {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

// Reads a PNG as 1 channel (gray) or 3 channels (RGB); alpha is dropped,
// palettes and 16-bit samples are reduced to 8-bit. Samples are 0..255.
inline ImageBuffer read_png(const std::string& path) {
  detail::FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError(path + ": not a PNG file");

  std::string message;
  png_structp png = png_create_read_struct(
      PNG_LIBPNG_VER_STRING, &message, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }

  ImageBuffer img;
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path + ": corrupt PNG (" + message + ")");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
    png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path + ": unsupported channel layout");
  }
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  img = ImageBuffer({int(width), int(height)}, channels);
  for (png_uint_32 y = 0; y < height; ++y)
    for (std::size_t i = 0; i < std::size_t(width) * channels; ++i)
      img.samples[y * std::size_t(width) * channels + i] = float(rows[y][i]);
  return img;
}

inline unsigned char to_u8(float value) {
  return static_cast<unsigned char>(std::clamp(std::lround(value), 0L, 255L));
}

inline void write_png(const std::string& path, const ImageBuffer& img) {
  if (img.channels != 1 && img.channels != 3)
    throw InvalidArgument("PNG output supports 1 or 3 channels");
  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open " + path + " for writing");

  std::string message;
  png_structp png = png_create_write_struct(
      PNG_LIBPNG_VER_STRING, &message, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }

  const std::size_t stride = std::size_t(img.size.width) * img.channels;
  std::vector<unsigned char> pixels(stride * img.size.height);
  std::transform(img.samples.begin(), img.samples.end(), pixels.begin(), to_u8);
  std::vector<png_bytep> rows(img.size.height);
  for (int y = 0; y < img.size.height; ++y) rows[y] = pixels.data() + y * stride;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path + ": PNG encoding failed (" + message + ")");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, png_uint_32(img.size.width), png_uint_32(img.size.height),
               8, img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw IoError("failed writing " + path);
}

}  // namespace miscalib
