#pragma once

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "nidslam/error.hpp"
#include "nidslam/image.hpp"

namespace nidslam::png {

/// Decoded PNG as interleaved samples widened to 16 bits.
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1 gray, 2 gray+alpha, 3 rgb, 4 rgba
  int bit_depth = 0;  // 8 or 16
  std::vector<std::uint16_t> samples;

  std::uint16_t at(int row, int col, int ch) const {
    return samples[(static_cast<std::size_t>(row) * width + col) * channels + ch];
  }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline Raster read(const std::string& path) {
  detail::FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw Error(ErrorCode::kFormat, "'" + path + "' is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kIo, "libpng allocation failed");
  }
  Raster raster;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kFormat, "corrupt PNG '" + path + "'");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_bit_depth(png, info) == 16) png_set_swap(png);
  png_read_update_info(png, info);

  raster.width = static_cast<int>(png_get_image_width(png, info));
  raster.height = static_cast<int>(png_get_image_height(png, info));
  raster.channels = png_get_channels(png, info);
  raster.bit_depth = png_get_bit_depth(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  buffer.resize(row_bytes * raster.height);
  rows.resize(raster.height);
  for (int r = 0; r < raster.height; ++r) rows[r] = buffer.data() + r * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(raster.width) * raster.height * raster.channels;
  raster.samples.resize(n);
  if (raster.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      raster.samples[i] = static_cast<std::uint16_t>(buffer[2 * i] | (buffer[2 * i + 1] << 8));
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) raster.samples[i] = buffer[i];
  }
  return raster;
}

inline void write(const std::string& path, int width, int height, int channels, int bit_depth,
                  const std::vector<std::uint16_t>& samples) {
  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "libpng allocation failed");
  }
  const std::size_t bytes_per_sample = bit_depth == 16 ? 2 : 1;
  const std::size_t row_bytes = static_cast<std::size_t>(width) * channels * bytes_per_sample;
  std::vector<png_byte> buffer(row_bytes * height);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (bit_depth == 16) {
      buffer[2 * i] = static_cast<png_byte>(samples[i] >> 8);
      buffer[2 * i + 1] = static_cast<png_byte>(samples[i] & 0xff);
    } else {
      buffer[i] = static_cast<png_byte>(samples[i]);
    }
  }
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r) rows[r] = buffer.data() + r * row_bytes;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, "failed writing PNG '" + path + "'");
  }
  png_init_io(png, file.get());
  const int color_type = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline void write_rgb8(const std::string& path, const RgbImage& rgb) {
  std::vector<std::uint16_t> samples;
  samples.reserve(rgb.size() * 3);
  for (const Vec3& c : rgb.data()) {
    for (int k = 0; k < 3; ++k) {
      const double v = std::clamp(c[k], 0.0, 1.0);
      samples.push_back(static_cast<std::uint16_t>(std::lround(v * 255.0)));
    }
  }
  write(path, rgb.width(), rgb.height(), 3, 8, samples);
}

/// Depth in meters quantized by depth_scale; 0 stays invalid.
inline void write_depth16(const std::string& path, const DepthImage& depth, double depth_scale) {
  std::vector<std::uint16_t> samples;
  samples.reserve(depth.size());
  for (double d : depth.data()) {
    const double raw = std::round(std::max(d, 0.0) * depth_scale);
    samples.push_back(static_cast<std::uint16_t>(std::min(raw, 65535.0)));
  }
  write(path, depth.width(), depth.height(), 1, 16, samples);
}

inline void write_mask(const std::string& path, const MaskImage& mask) {
  std::vector<std::uint16_t> samples;
  samples.reserve(mask.size());
  for (auto v : mask.data()) samples.push_back(v ? 255 : 0);
  write(path, mask.width(), mask.height(), 1, 8, samples);
}

inline RgbImage read_rgb(const std::string& path) {
  const Raster r = read(path);
  const double scale = r.bit_depth == 16 ? 65535.0 : 255.0;
  RgbImage out(r.width, r.height);
  for (int row = 0; row < r.height; ++row) {
    for (int col = 0; col < r.width; ++col) {
      if (r.channels >= 3) {
        out(row, col) = Vec3(r.at(row, col, 0), r.at(row, col, 1), r.at(row, col, 2)) / scale;
      } else {
        out(row, col) = Vec3::Constant(r.at(row, col, 0) / scale);
      }
    }
  }
  return out;
}

inline DepthImage read_depth(const std::string& path, double depth_scale) {
  const Raster r = read(path);
  if (r.channels != 1) throw Error(ErrorCode::kFormat, "depth PNG '" + path + "' is not single-channel");
  DepthImage out(r.width, r.height);
  for (int row = 0; row < r.height; ++row) {
    for (int col = 0; col < r.width; ++col) out(row, col) = r.at(row, col, 0) / depth_scale;
  }
  return out;
}

inline MaskImage read_mask(const std::string& path) {
  const Raster r = read(path);
  MaskImage out(r.width, r.height);
  for (int row = 0; row < r.height; ++row) {
    for (int col = 0; col < r.width; ++col) out(row, col) = r.at(row, col, 0) != 0;
  }
  return out;
}

}  // namespace nidslam::png
