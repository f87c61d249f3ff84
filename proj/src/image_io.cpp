// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include "refseg/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace refseg {
namespace {

struct Header {
  std::string magic;
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t maxval = 1;
};

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Parses magic, dimensions and (unless P4) maxval; returns the payload offset.
std::size_t parse_header(const std::vector<char>& buf, Header& h, const std::filesystem::path& path) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::string tok;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) tok += buf[pos++];
    if (tok.empty()) throw ImageFormatError(path.string() + ": truncated header");
    return tok;
  };
  auto number = [&]() {
    const auto tok = next_token();
    if (!std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw ImageFormatError(path.string() + ": bad header field '" + tok + "'");
    }
    return static_cast<std::size_t>(std::stoull(tok));
  };
  h.magic = next_token();
  h.width = number();
  h.height = number();
  if (h.magic != "P4") h.maxval = number();
  if (h.width == 0 || h.height == 0) throw ImageFormatError(path.string() + ": empty image");
  return pos + 1;  // single whitespace byte before the raster
}

void write_bytes(const std::filesystem::path& path, const std::string& header, const std::vector<std::uint8_t>& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << header;
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::pair<std::size_t, std::size_t> map_dims(const Tensor& map) {
  if (map.ndim() == 2) return {map.dim(0), map.dim(1)};
  if (map.ndim() == 3 && map.dim(0) == 1) return {map.dim(1), map.dim(2)};
  throw ShapeError("expected H x W or 1 x H x W map, got " + shape_str(map.shape()));
}

}  // namespace

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  if (image.pixels.size() != image.height * image.width * 3) throw std::invalid_argument("write_ppm: size mismatch");
  write_bytes(path, "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n",
              image.pixels);
}

RgbImage read_ppm(const std::filesystem::path& path) {
  const auto buf = slurp(path);
  Header h;
  const auto off = parse_header(buf, h, path);
  if (h.magic != "P6" || h.maxval != 255) throw ImageFormatError(path.string() + ": expected 8-bit P6");
  RgbImage img{h.height, h.width, {}};
  const auto n = h.width * h.height * 3;
  if (buf.size() < off + n) throw ImageFormatError(path.string() + ": truncated raster");
  img.pixels.assign(buf.begin() + static_cast<std::ptrdiff_t>(off), buf.begin() + static_cast<std::ptrdiff_t>(off + n));
  return img;
}

void write_pbm(const std::filesystem::path& path, const BinaryMask& mask) {
  const std::size_t row_bytes = (mask.width + 7) / 8;
  std::vector<std::uint8_t> data(row_bytes * mask.height, 0);
  for (std::size_t i = 0; i < mask.height; ++i) {
    for (std::size_t j = 0; j < mask.width; ++j) {
      if (mask.at(i, j)) data[i * row_bytes + j / 8] |= static_cast<std::uint8_t>(0x80u >> (j % 8));
    }
  }
  write_bytes(path, "P4\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n", data);
}

BinaryMask read_pbm(const std::filesystem::path& path) {
  const auto buf = slurp(path);
  Header h;
  const auto off = parse_header(buf, h, path);
  if (h.magic != "P4") throw ImageFormatError(path.string() + ": expected P4");
  const std::size_t row_bytes = (h.width + 7) / 8;
  if (buf.size() < off + row_bytes * h.height) throw ImageFormatError(path.string() + ": truncated raster");
  BinaryMask mask(h.height, h.width);
  for (std::size_t i = 0; i < h.height; ++i) {
    for (std::size_t j = 0; j < h.width; ++j) {
      const auto byte = static_cast<std::uint8_t>(buf[off + i * row_bytes + j / 8]);
      mask.at(i, j) = (byte >> (7 - j % 8)) & 1u;
    }
  }
  return mask;
}

void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<double>& values) {
  if (values.size() != height * width) throw std::invalid_argument("write_pgm: size mismatch");
  std::vector<std::uint8_t> data(values.size());
  std::transform(values.begin(), values.end(), data.begin(), [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  });
  write_bytes(path, "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n", data);
}

Tensor to_tensor(const RgbImage& image) {
  const auto area = image.height * image.width;
  std::vector<double> v(3 * area);
  for (std::size_t p = 0; p < area; ++p) {
    for (std::size_t c = 0; c < 3; ++c) v[c * area + p] = image.pixels[p * 3 + c] / 255.0;
  }
  return Tensor::from({3, image.height, image.width}, std::move(v));
}

Tensor to_tensor(const BinaryMask& mask) {
  std::vector<double> v(mask.bits.begin(), mask.bits.end());
  return Tensor::from({1, mask.height, mask.width}, std::move(v));
}

BinaryMask threshold_map(const Tensor& map, double threshold) {
  const auto [h, w] = map_dims(map);
  BinaryMask mask(h, w);
  const auto d = map.data();
  for (std::size_t p = 0; p < h * w; ++p) mask.bits[p] = d[p] >= threshold ? 1 : 0;
  return mask;
}

}  // namespace refseg
