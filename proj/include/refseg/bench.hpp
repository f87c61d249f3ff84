// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Memory scaling of the two co-attention variants: analytic affinity counts
// next to element counts measured through the tensor allocation hooks.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "refseg/coattention.hpp"

namespace refseg {

inline constexpr std::size_t kDefaultAllocCap = 400'000'000;

struct BenchOptions {
  std::vector<std::size_t> sizes{20, 40, 96};
  std::size_t channels = 512;
  std::size_t proj_channels = 256;
  std::size_t out_channels = 64;
  std::vector<AttentionVariant> variants{AttentionVariant::Vanilla, AttentionVariant::Asymmetric};
  std::optional<std::size_t> alloc_cap = kDefaultAllocCap;  // live elements
  std::uint64_t seed = 0;
  PpmSpec ppm;
};

struct BenchRow {
  AttentionVariant variant = AttentionVariant::Vanilla;
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t analytic_affinity = 0;
  std::size_t analytic_bytes = 0;
  std::size_t measured_peak = 0;      // peak live elements during one forward
  std::size_t measured_affinity = 0;  // elements allocated under the affinity tag
  double wall_ms = 0.0;
  bool skipped = false;
  std::string note;
};

struct GrowthRow {
  AttentionVariant variant = AttentionVariant::Vanilla;
  std::size_t from = 0, to = 0;  // spatial edge lengths
  double analytic_ratio = 0.0;
  std::optional<double> measured_ratio;  // absent when either row was skipped
};

// Forward passes run without gradient recording.
std::vector<BenchRow> run_bench(const BenchOptions& options);
std::vector<GrowthRow> growth_ratios(const std::vector<BenchRow>& rows);

// Wall time is left out unless requested so the table is reproducible.
void write_bench_tsv(std::ostream& os, const std::vector<BenchRow>& rows, bool include_timing = false);
void write_growth_tsv(std::ostream& os, const std::vector<GrowthRow>& rows);

}  // namespace refseg
