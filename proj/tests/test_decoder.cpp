// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "refseg/decoder.hpp"
#include "refseg/gradcheck_suite.hpp"
#include "refseg/ops.hpp"
#include "test_util.hpp"

namespace refseg {
namespace {

using testing::bit_equal;
using testing::max_abs_diff;
using testing::random_tensor;

StnParams stn_with_theta(std::size_t channels, const std::vector<double>& theta) {
  ParameterStore store;
  Rng rng = derive_rng(1, 7);
  auto p = make_stn_params(store, "stn", channels, 4, rng);
  p.fc2_w = Tensor::zeros(p.fc2_w.shape());
  p.fc2_b = Tensor::from({6}, theta);
  return p;
}

const std::vector<double> kIdentity{1, 0, 0, 0, 1, 0};

struct Toy {
  BackboneConfig backbone;
  DecoderConfig config;
  ParameterStore store;
  DecoderParams params;
  std::array<Tensor, kStages> features;

  explicit Toy(std::uint64_t seed, bool bem = true, std::array<std::size_t, kStages> sizes = {8, 4, 4, 2, 2}) {
    backbone.channels = {2, 2, 3, 3, 3};
    config.channels = 2;
    config.stn_hidden = 3;
    config.boundary_enhancement = bem;
    Rng rng = derive_rng(seed, 8);
    params = make_decoder_params(store, backbone, config, rng);
    for (std::size_t i = 0; i < kStages; ++i) {
      features[i] = random_tensor({backbone.channels[i], sizes[i], sizes[i]}, seed * 10 + i, 0.0, 1.0);
    }
  }
};

TEST(Stn, IdentityInitGivesZeroResidual) {
  ParameterStore store;
  Rng rng = derive_rng(2, 0);
  const auto stn = make_stn_params(store, "stn", 3, 4, rng);
  const auto s = random_tensor({3, 5, 5}, 3);
  const auto r = boundary_residual(s, stn);
  EXPECT_TRUE(bit_equal(r.theta, Tensor::from({2, 3}, kIdentity)));
  for (double v : r.residual.data()) EXPECT_EQ(v, 0.0);
}

TEST(Stn, ConstantMapIsTransformInvariantInside) {
  const auto s = Tensor::filled({2, 6, 6}, 0.8);
  const auto r = boundary_residual(s, stn_with_theta(2, {0.9, 0.05, 0.02, -0.04, 0.85, -0.03}));
  for (double v : r.residual.data()) EXPECT_NEAR(v, 0.0, 1e-14);
}

TEST(Stn, OneCellShiftMarksTheEdge) {
  const std::size_t n = 6;
  std::vector<double> v(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = j >= 3 ? 1.0 : 0.0;
  }
  const auto s = Tensor::from({1, n, n}, v);
  const auto r = boundary_residual(s, stn_with_theta(1, {1, 0, 2.0 / (n - 1), 0, 1, 0}));
  for (std::size_t i = 0; i < n; ++i) {
    // The last column samples outside the map; it is masked out.
    for (std::size_t j = 0; j + 1 < n; ++j) {
      const double b = r.residual.at(0, i, j);
      if (j == 2) {
        EXPECT_NEAR(b, -1.0, 1e-12);
      } else {
        EXPECT_NEAR(b, 0.0, 1e-12) << i << "," << j;
      }
    }
  }
}

TEST(Stn, NonSquareIsRejected) {
  EXPECT_THROW(boundary_residual(Tensor::zeros({1, 4, 5}), stn_with_theta(1, kIdentity)), ShapeError);
}

TEST(PredictBoundary, ZeroInputsGiveHalf) {
  const auto bp = predict_boundary(Tensor::zeros({2, 2, 2}), Tensor::zeros({2, 4, 4}), random_tensor({2, 4, 3, 3}, 4),
                                   Tensor::zeros({2}), random_tensor({1, 2, 1, 1}, 5), Tensor::zeros({1}));
  EXPECT_EQ(bp.map.shape(), (Shape{1, 4, 4}));
  for (double v : bp.map.data()) EXPECT_EQ(v, 0.5);
}

TEST(PredictBoundary, MapIsOpenUnitInterval) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto bp = predict_boundary(random_tensor({2, 3, 3}, seed, -5, 5), random_tensor({2, 6, 6}, seed + 1, -5, 5),
                                     random_tensor({2, 4, 3, 3}, seed + 2), random_tensor({2}, seed + 3),
                                     random_tensor({1, 2, 1, 1}, seed + 4), random_tensor({1}, seed + 5));
    for (double v : bp.map.data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(RefineMask, IdentityStnAndZeroBoundaryConcatenatesSTwice) {
  const auto s = random_tensor({2, 4, 4}, 6);
  const auto w = random_tensor({2, 4, 3, 3}, 7), b = random_tensor({2}, 8);
  const auto rm = refine_mask(Tensor::zeros({2, 4, 4}), s, s, w, b, random_tensor({1, 2, 1, 1}, 9), Tensor::zeros({1}));
  const auto ref = testing::direct_conv(concat({s, s}, 0), w, b, 1, 1);
  EXPECT_LE(max_abs_diff(rm.features.data(), ref), 1e-13);
  for (double v : rm.map.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Decode, ZeroParametersGiveHalfEverywhere) {
  Toy toy(10);
  for (const auto& e : toy.store.entries()) {
    auto t = e.value;
    for (auto& v : t.mutable_data()) v = 0.0;
  }
  const auto st = decode(toy.features, toy.params, toy.config, 16, 16);
  EXPECT_EQ(st.prediction.shape(), (Shape{1, 16, 16}));
  for (double v : st.prediction.data()) EXPECT_EQ(v, 0.5);
}

TEST(Decode, PredictionMatchesRequestedSize) {
  Toy toy(11);
  const auto st = decode(toy.features, toy.params, toy.config, 24, 24);
  EXPECT_EQ(st.prediction.shape(), (Shape{1, 24, 24}));
  EXPECT_EQ(st.boundary_prediction.shape(), (Shape{1, 24, 24}));
  for (std::size_t level = 1; level < kStages; ++level) {
    EXPECT_GE(st.mask_maps[level - 1].dim(1), st.s[level].dim(1));
  }
}

TEST(Decode, IdentityStnMatchesDisabledBoundaryEnhancement) {
  Toy on(12, true), off(12, false);
  const auto a = decode(on.features, on.params, on.config, 16, 16);
  const auto b = decode(off.features, off.params, off.config, 16, 16);
  for (std::size_t level = 0; level < kTransitions; ++level) {
    EXPECT_TRUE(bit_equal(a.mask_maps[level], b.mask_maps[level])) << level;
    EXPECT_TRUE(bit_equal(a.s[level], b.s[level])) << level;
  }
  EXPECT_TRUE(bit_equal(a.prediction, b.prediction));
  for (std::size_t level = 1; level < kStages; ++level) {
    for (double v : a.residuals[level].data()) EXPECT_EQ(v, 0.0);
  }
  EXPECT_FALSE(b.boundary_prediction.defined());
}

TEST(Decode, MatchesHandComposition) {
  Toy toy(13, true, {4, 4, 4, 4, 4});
  // Move every STN off identity so all three ops contribute.
  for (std::size_t k = 0; k < kTransitions; ++k) {
    toy.params.transitions[k].stn.fc2_b = Tensor::from({6}, {0.95, 0.03, 0.05 * static_cast<double>(k), -0.02, 1.01, 0.04});
  }
  const auto st = decode(toy.features, toy.params, toy.config, 4, 4);

  std::array<Tensor, kStages> d, s;
  for (std::size_t i = 0; i < kStages; ++i) {
    d[i] = conv2d(toy.features[i], toy.params.lateral_w[i], toy.params.lateral_b[i], 1, 0);
  }
  for (std::size_t i = kStages - 1; i-- > 0;) d[i] = add(d[i], d[i + 1]);
  s[4] = d[4];
  Tensor sm;
  for (std::size_t k = 0; k < kTransitions; ++k) {
    const auto i = kStages - 1 - k;
    const auto& tp = toy.params.transitions[k];
    const auto br = boundary_residual(s[i], tp.stn);
    const auto bp = predict_boundary(br.residual, d[i - 1], tp.boundary_w, tp.boundary_b, tp.boundary_head_w,
                                     tp.boundary_head_b);
    const auto rm = refine_mask(bp.features, br.warped, s[i], tp.refine_w, tp.refine_b, tp.mask_head_w,
                                tp.mask_head_b);
    s[i - 1] = rm.features;
    sm = rm.map;
  }
  EXPECT_LE(max_abs_diff(sm, st.mask_maps[0]), 1e-14);
  EXPECT_LE(max_abs_diff(sm, st.prediction), 1e-14);
}

TEST(Decode, CoarseMapsIgnoreFinerStages) {
  Toy toy(14);
  const auto a = decode(toy.features, toy.params, toy.config, 8, 8);
  for (std::size_t perturbed = 0; perturbed < kStages - 1; ++perturbed) {
    auto features = toy.features;
    features[perturbed] = affine(features[perturbed], 1.0, 0.25);
    const auto b = decode(features, toy.params, toy.config, 8, 8);
    for (std::size_t level = 0; level < kTransitions; ++level) {
      const bool depends = level <= perturbed;
      EXPECT_EQ(bit_equal(a.mask_maps[level], b.mask_maps[level]), !depends) << perturbed << " " << level;
      EXPECT_EQ(bit_equal(a.boundary_maps[level], b.boundary_maps[level]), !depends) << perturbed << " " << level;
    }
  }
}

DecoderState constant_state(double sm, double bm, std::size_t size = 4) {
  DecoderState st;
  for (std::size_t level = 0; level < kTransitions; ++level) {
    st.mask_maps[level] = Tensor::filled({1, size, size}, sm);
    st.boundary_maps[level] = Tensor::filled({1, size, size}, bm);
    st.stn_maps[level + 1] = Tensor::filled({1, size, size}, sm);
  }
  return st;
}

TEST(TotalLoss, HalfMapsGiveLn2PerMap) {
  const auto gt = Tensor::from({1, 4, 4}, std::vector<double>{1, 0, 1, 0, 0, 1, 0, 1, 1, 1, 0, 0, 0, 0, 1, 1});
  const auto loss = total_loss(constant_state(0.5, 0.5), gt, gt, true);
  EXPECT_NEAR(loss.total.item(), 3.0 * kTransitions * std::log(2.0), 1e-12);
  EXPECT_NEAR(loss.mask, kTransitions * std::log(2.0), 1e-12);
  const auto mask_only = total_loss(constant_state(0.5, 0.5), gt, gt, false);
  EXPECT_NEAR(mask_only.total.item(), kTransitions * std::log(2.0), 1e-12);
}

TEST(TotalLoss, PerfectPredictionsAreNearZero) {
  const auto ones = Tensor::filled({1, 4, 4}, 1.0);
  const auto loss = total_loss(constant_state(1.0, 1.0), ones, ones, true);
  EXPECT_LT(loss.total.item() / (3.0 * kTransitions), 1e-5);
  const auto saturated = total_loss(constant_state(0.0, 1.0), ones, ones, true);
  EXPECT_TRUE(std::isfinite(saturated.total.item()));
}

TEST(TotalLoss, NonBinaryTargetsAreRejected) {
  const auto gt = Tensor::filled({1, 4, 4}, 0.5);
  EXPECT_THROW(total_loss(constant_state(0.5, 0.5), gt, Tensor::filled({1, 4, 4}, 1.0), true), std::invalid_argument);
}

TEST(TotalLoss, NearestResizeKeepsLabelsBinary) {
  const auto gt = Tensor::from({1, 4, 4}, std::vector<double>{1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1});
  const auto small = nearest_resize(gt, 2, 2);
  EXPECT_EQ(small.shape(), (Shape{1, 2, 2}));
  EXPECT_EQ(std::vector<double>(small.data().begin(), small.data().end()), (std::vector<double>{1, 0, 0, 1}));
}

TEST(Decoder, RegisteredGradchecksPass) {
  for (const char* filter : {"decoder.", "loss."}) {
    SuiteOptions options;
    options.filter = filter;
    options.seeds = 3;
    for (const auto& row : run_gradcheck_suite(options)) {
      EXPECT_TRUE(row.passed) << row.name << " " << row.max_rel_error;
    }
  }
}

}  // namespace
}  // namespace refseg
