// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Netpbm images: P6 colour, P5 grayscale and P4 bitmaps.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "refseg/tensor.hpp"

namespace refseg {

class ImageFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Interleaved 8-bit RGB, row-major.
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  bool operator==(const RgbImage&) const = default;
};

// Row-major 0/1 map.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  std::uint8_t at(std::size_t i, std::size_t j) const { return bits[i * width + j]; }
  std::uint8_t& at(std::size_t i, std::size_t j) { return bits[i * width + j]; }
  std::size_t count() const;
  bool operator==(const BinaryMask&) const = default;
};

void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_ppm(const std::filesystem::path& path);

void write_pbm(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask read_pbm(const std::filesystem::path& path);

// Values in [0, 1] are scaled to 0..255 with rounding.
void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<double>& values);

/// 3 x H x W tensor with values v / 255.
Tensor to_tensor(const RgbImage& image);
/// 1 x H x W tensor of 0.0 / 1.0.
Tensor to_tensor(const BinaryMask& mask);
/// Pixels with value >= threshold become 1. Accepts H x W or 1 x H x W.
BinaryMask threshold_map(const Tensor& map, double threshold = 0.5);

}  // namespace refseg
