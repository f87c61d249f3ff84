// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include "refseg/bench.hpp"

#include <chrono>
#include <cstdio>
#include <ostream>

#include "refseg/random.hpp"

namespace refseg {
namespace {

std::string ratio_str(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

BenchRow measure(AttentionVariant variant, std::size_t size, const BenchOptions& o) {
  BenchRow row;
  row.variant = variant;
  row.channels = o.channels;
  row.height = row.width = size;
  const auto cost = attention_cost(variant, o.channels, o.proj_channels, size, size, o.ppm);
  row.analytic_affinity = cost.affinity_elements;
  row.analytic_bytes = cost.bytes;

  Rng rng = derive_rng(o.seed, size);
  ParameterStore store;
  std::optional<VcmParams> vp;
  std::optional<AcmParams> ap;
  if (variant == AttentionVariant::Vanilla) {
    vp = make_vcm_params(store, "bench", o.channels, o.proj_channels, o.out_channels, rng);
  } else {
    ap = make_acm_params(store, "bench", o.channels, o.proj_channels, o.out_channels, rng);
  }
  const Tensor m = uniform_tensor({o.channels, size, size}, -1.0, 1.0, rng);
  const Tensor l = uniform_tensor({o.channels, size, size}, -1.0, 1.0, rng);

  NoGradGuard no_grad;
  AllocationScope scope(o.alloc_cap);
  const auto start = std::chrono::steady_clock::now();
  try {
    const auto out = vp ? vcm(m, l, *vp) : acm(m, l, *ap, o.ppm);
    (void)out;
  } catch (const AllocationCapExceeded&) {
    row.skipped = true;
    row.note = "skipped: allocation cap";
    return row;
  }
  row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  row.measured_peak = scope.peak_live_elements();
  row.measured_affinity = scope.tagged_elements(kAffinityTag);
  return row;
}

}  // namespace

std::vector<BenchRow> run_bench(const BenchOptions& options) {
  std::vector<BenchRow> rows;
  for (auto variant : options.variants) {
    if (variant == AttentionVariant::None) throw std::invalid_argument("bench: variant must be vcm or acm");
    for (auto size : options.sizes) rows.push_back(measure(variant, size, options));
  }
  return rows;
}

std::vector<GrowthRow> growth_ratios(const std::vector<BenchRow>& rows) {
  std::vector<GrowthRow> out;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    const auto& a = rows[k - 1];
    const auto& b = rows[k];
    if (a.variant != b.variant) continue;
    GrowthRow g;
    g.variant = a.variant;
    g.from = a.height;
    g.to = b.height;
    g.analytic_ratio = static_cast<double>(b.analytic_affinity) / static_cast<double>(a.analytic_affinity);
    if (!a.skipped && !b.skipped) {
      g.measured_ratio = static_cast<double>(b.measured_peak) / static_cast<double>(a.measured_peak);
    }
    out.push_back(g);
  }
  return out;
}

void write_bench_tsv(std::ostream& os, const std::vector<BenchRow>& rows, bool include_timing) {
  os << "variant\tC\tH\tW\tanalytic_affinity\tanalytic_bytes\tmeasured_peak\tmeasured_affinity";
  if (include_timing) os << "\twall_ms";
  os << "\tnote\n";
  for (const auto& r : rows) {
    os << to_string(r.variant) << "\t" << r.channels << "\t" << r.height << "\t" << r.width << "\t"
       << r.analytic_affinity << "\t" << r.analytic_bytes << "\t";
    if (r.skipped) {
      os << "-\t-";
    } else {
      os << r.measured_peak << "\t" << r.measured_affinity;
    }
    if (include_timing) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.1f", r.wall_ms);
      os << "\t" << (r.skipped ? "-" : buf);
    }
    os << "\t" << (r.note.empty() ? "-" : r.note) << "\n";
  }
}

void write_growth_tsv(std::ostream& os, const std::vector<GrowthRow>& rows) {
  os << "variant\tfrom\tto\tanalytic_ratio\tmeasured_ratio\n";
  for (const auto& g : rows) {
    os << to_string(g.variant) << "\t" << g.from << "\t" << g.to << "\t" << ratio_str(g.analytic_ratio) << "\t"
       << (g.measured_ratio ? ratio_str(*g.measured_ratio) : "-") << "\n";
  }
}

}  // namespace refseg
