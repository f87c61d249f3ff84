// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include "refseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "refseg/ops.hpp"
#include "refseg/random.hpp"

namespace refseg {
namespace {

double objective(const Tensor& out, const std::vector<double>& weights) {
  double total = 0.0;
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) total += weights[i] * d[i];
  return total;
}

}  // namespace

namespace {

std::vector<double> random_weights(std::size_t n, Rng& rng) {
  std::vector<double> weights(n);
  std::uniform_real_distribution<double> wdist(0.5, 1.5);
  for (auto& w : weights) w = wdist(rng);
  return weights;
}

// Compares analytic gradients against central differences, perturbing
// probes[k] in place and re-evaluating through eval().
GradCheckResult compare(const std::function<Tensor()>& eval, std::vector<Tensor>& probes,
                        const std::vector<Tensor>& analytic, const std::vector<double>& weights, Rng& rng,
                        const GradCheckOptions& options) {
  GradCheckResult result;
  NoGradGuard no_grad;
  const double center = objective(eval(), weights);
  for (std::size_t k = 0; k < probes.size(); ++k) {
    const auto n = probes[k].numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_input > 0 && n > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
    }
    auto values = probes[k].mutable_data();
    for (auto idx : coords) {
      const double saved = values[idx];
      double numeric = 0.0;
      bool smooth = false;
      double step = options.step;
      for (int attempt = 0; attempt <= options.kink_refinements && !smooth; ++attempt, step /= 10.0) {
        values[idx] = saved + step;
        const double plus = objective(eval(), weights);
        values[idx] = saved - step;
        const double minus = objective(eval(), weights);
        values[idx] = saved;
        const double forward = (plus - center) / step;
        const double backward = (center - minus) / step;
        const double scale = std::max({std::abs(forward), std::abs(backward), options.abs_floor});
        numeric = (plus - minus) / (2.0 * step);
        smooth = std::abs(forward - backward) <= options.kink_tolerance * scale;
      }
      if (!smooth) {
        ++result.kinks_skipped;
        continue;
      }
      const double a = analytic[k][idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.coords_checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = k;
        result.worst_coord = idx;
      }
    }
  }
  return result;
}

}  // namespace

GradCheckResult check_gradients(const GradFunction& f, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options) {
  Rng rng = derive_rng(options.seed, 0x9c4e);

  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(in.detach().set_requires_grad(true));

  Tensor out = f(leaves);
  const auto weights = random_weights(out.numel(), rng);
  sum(mul(out, Tensor::from(out.shape(), weights))).backward();

  std::vector<Tensor> probes, analytic;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    probes.push_back(inputs[k].detach());
    analytic.push_back(leaves[k].grad_tensor());
  }
  return compare([&] { return f(probes); }, probes, analytic, weights, rng, options);
}

GradCheckResult check_gradients_in_place(const ClosureFunction& f, const std::vector<Tensor>& leaves,
                                         const GradCheckOptions& options) {
  Rng rng = derive_rng(options.seed, 0x9c4e);
  std::vector<Tensor> probes = leaves;
  for (auto& t : probes) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor out = f();
  const auto weights = random_weights(out.numel(), rng);
  sum(mul(out, Tensor::from(out.shape(), weights))).backward();
  std::vector<Tensor> analytic;
  for (const auto& t : probes) analytic.push_back(t.grad_tensor());
  return compare(f, probes, analytic, weights, rng, options);
}

}  // namespace refseg
