#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fcn/tensor.hpp"

namespace fcn {

/// 8-bit raster, 1 (gray) or 3 (RGB) channels, row-major interleaved.
struct Image8 {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::int64_t channels = 1;
  std::vector<std::uint8_t> data;

  std::uint8_t at(std::int64_t y, std::int64_t x, std::int64_t c = 0) const {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t& at(std::int64_t y, std::int64_t x, std::int64_t c = 0) {
    return data[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

// Portable pixmaps: binary P5 (gray) and P6 (RGB), maxval <= 255.
Image8 decode_pnm(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_pgm(const Image8& img);
std::vector<std::uint8_t> encode_ppm(const Image8& img);

// 8-bit PNG, gray or RGB, non-interlaced (zlib-backed).
Image8 decode_png(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_png(const Image8& img);

/// Dispatch on magic bytes (P5/P6/PNG).
Image8 load_image(const std::string& path);
void save_image(const std::string& path, const Image8& img);  // by extension

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

// Label maps are single-channel 8-bit with 255 = ignore.
LabelMap image_to_labels(const Image8& img);
Image8 labels_to_image(const LabelMap& m, std::int64_t index = 0);

/// [0,1]-scaled tensor (1, c, h, w) from an 8-bit image and back.
Tensor image_to_tensor(const Image8& img);
Image8 tensor_to_image(const Tensor& t);  // clamps to [0,1]

}  // namespace fcn
