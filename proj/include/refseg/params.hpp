// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Named parameter collection and its on-disk archive.
//
// Archive layout (manifest first, then payload):
//
//   refseg-params 1\n
//   <count>\n
//   <name> <ndim> <d0> ... <dn-1>\n      one line per tensor, payload order
//   end\n
//   <f64 little-endian values of every tensor, concatenated>

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "refseg/random.hpp"
#include "refseg/tensor.hpp"

namespace refseg {

class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  // Registers a trainable leaf. Names must be unique.
  Tensor add(std::string name, Tensor value);

  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;
  void zero_grad();

  void write(std::ostream& os) const;
  void save(const std::filesystem::path& path) const;
  // Overwrites values in place; names, order and shapes must match exactly.
  void read_into(std::istream& is);
  void load_into(const std::filesystem::path& path);

 private:
  std::vector<Entry> entries_;
};

struct ArchiveRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

std::vector<ArchiveRecord> read_archive(std::istream& is);

// uniform(-bound, bound)
Tensor init_uniform(Shape shape, double bound, Rng& rng);
// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
Tensor init_fan_in(Shape shape, std::size_t fan_in, Rng& rng);
// He-uniform for layers followed by relu: bound sqrt(6 / fan_in).
Tensor init_he(Shape shape, std::size_t fan_in, Rng& rng);

}  // namespace refseg
