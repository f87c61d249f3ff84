// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include "refseg/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace refseg {
namespace {

constexpr std::string_view kMagic = "refseg-params 1";

void put_f64_le(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(bytes, 8);
}

double get_f64_le(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw std::runtime_error("parameter archive: truncated payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

Tensor ParameterStore::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  value.set_requires_grad(true);
  entries_.push_back({std::move(name), value});
  return value;
}

const Tensor& ParameterStore::get(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
}

bool ParameterStore::contains(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

void ParameterStore::write(std::ostream& os) const {
  os << kMagic << '\n' << entries_.size() << '\n';
  for (const auto& e : entries_) {
    os << e.name << ' ' << e.value.ndim();
    for (auto d : e.value.shape()) os << ' ' << d;
    os << '\n';
  }
  os << "end\n";
  for (const auto& e : entries_) {
    for (double v : e.value.data()) put_f64_le(os, v);
  }
}

void ParameterStore::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write(os);
}

std::vector<ArchiveRecord> read_archive(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMagic) throw std::runtime_error("parameter archive: bad header");
  if (!std::getline(is, line)) throw std::runtime_error("parameter archive: missing count");
  const auto count = std::stoull(line);
  std::vector<ArchiveRecord> records;
  records.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw std::runtime_error("parameter archive: truncated manifest");
    std::istringstream fields(line);
    ArchiveRecord rec;
    std::size_t ndim = 0;
    if (!(fields >> rec.name >> ndim)) throw std::runtime_error("parameter archive: bad manifest line");
    rec.shape.resize(ndim);
    for (auto& d : rec.shape) {
      if (!(fields >> d)) throw std::runtime_error("parameter archive: bad shape for " + rec.name);
    }
    records.push_back(std::move(rec));
  }
  if (!std::getline(is, line) || line != "end") throw std::runtime_error("parameter archive: missing manifest end");
  for (auto& rec : records) {
    rec.values.resize(shape_numel(rec.shape));
    for (auto& v : rec.values) v = get_f64_le(is);
  }
  return records;
}

void ParameterStore::read_into(std::istream& is) {
  auto records = read_archive(is);
  if (records.size() != entries_.size()) {
    throw std::runtime_error("parameter archive: expected " + std::to_string(entries_.size()) + " tensors, found " +
                             std::to_string(records.size()));
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& e = entries_[i];
    if (records[i].name != e.name || records[i].shape != e.value.shape()) {
      throw std::runtime_error("parameter archive: entry " + records[i].name + shape_str(records[i].shape) +
                               " does not match " + e.name + shape_str(e.value.shape()));
    }
    auto dst = e.value.mutable_data();
    std::copy(records[i].values.begin(), records[i].values.end(), dst.begin());
  }
}

void ParameterStore::load_into(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  read_into(is);
}

Tensor init_uniform(Shape shape, double bound, Rng& rng) { return uniform_tensor(std::move(shape), -bound, bound, rng); }

Tensor init_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  return init_uniform(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

Tensor init_he(Shape shape, std::size_t fan_in, Rng& rng) {
  return init_uniform(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

}  // namespace refseg
