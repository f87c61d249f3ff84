// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Registry of named finite-difference checks covering every op and every
// composed module.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "refseg/gradcheck.hpp"

namespace refseg {

inline constexpr double kGradTolerance = 1e-4;

struct GradCase {
  std::string name;  // "<module>.<what>"
  std::function<GradCheckResult(std::uint64_t seed)> run;
  bool fixture = false;  // negative controls, off by default
};

const std::vector<GradCase>& gradcheck_cases();

class UnknownFilter : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SuiteOptions {
  std::string filter;  // substring of the case name; empty runs all
  std::size_t seeds = 20;
  std::uint64_t base_seed = 0;
  bool include_fixtures = false;
  double tolerance = kGradTolerance;
};

struct SuiteRow {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t kinks_skipped = 0;
  std::size_t seeds = 0;
  bool passed = false;
};

// Throws UnknownFilter when no case matches.
std::vector<SuiteRow> run_gradcheck_suite(const SuiteOptions& options);
void write_suite_tsv(std::ostream& os, const std::vector<SuiteRow>& rows);

}  // namespace refseg
