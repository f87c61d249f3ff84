// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checking.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "refseg/tensor.hpp"

namespace refseg {

struct GradCheckOptions {
  double step = 1e-5;
  // Relative error denominator is max(|analytic|, |numeric|, abs_floor).
  double abs_floor = 1e-3;
  // 0 checks every coordinate; otherwise a seeded random subset per input.
  std::size_t max_coords_per_input = 0;
  // One-sided differences disagreeing by more than this (relative) mean a
  // non-differentiable point lies within the step; the step is then shrunk
  // tenfold up to kink_refinements times before the coordinate is skipped.
  double kink_tolerance = 2e-4;
  int kink_refinements = 2;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_coord = 0;
  std::size_t kinks_skipped = 0;
};

using GradFunction = std::function<Tensor(const std::vector<Tensor>&)>;

// Checks d/d(inputs) of sum(weights * f(inputs)) for fixed random weights.
// Every input is treated as differentiable; pass constants by capture.
GradCheckResult check_gradients(const GradFunction& f, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options = {});

// For closures over existing leaves (module parameter structs): gradients flow
// into the leaves themselves and finite differences perturb them in place.
using ClosureFunction = std::function<Tensor()>;
GradCheckResult check_gradients_in_place(const ClosureFunction& f, const std::vector<Tensor>& leaves,
                                         const GradCheckOptions& options = {});

}  // namespace refseg
