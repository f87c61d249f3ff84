// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Top-down decoder with boundary enhancement. Levels are 1-based: level i
// holds D_i and S_i; each transition i -> i-1 (i = 5..2) produces the
// boundary map BM_{i-1} and the refined mask SM_{i-1}.

#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "refseg/fusion_encoder.hpp"
#include "refseg/params.hpp"
#include "refseg/tensor.hpp"

namespace refseg {

inline constexpr std::size_t kTransitions = kStages - 1;

// Global average pool -> fc -> relu -> fc -> 6 affine parameters. The last
// layer starts at zero weights and identity bias.
struct StnParams {
  Tensor fc1_w, fc1_b;  // C x hidden, hidden
  Tensor fc2_w, fc2_b;  // hidden x 6, 6
};

StnParams make_stn_params(ParameterStore& store, const std::string& prefix, std::size_t channels,
                          std::size_t hidden, Rng& rng);

/// 2 x 3 affine matrix predicted from S.
Tensor stn_theta(const Tensor& s, const StnParams& stn);

struct BoundaryResidual {
  Tensor theta;
  Tensor warped;    // STN(S)
  Tensor residual;  // B = S - STN(S)
};

BoundaryResidual boundary_residual(const Tensor& s, const StnParams& stn);

struct BoundaryPrediction {
  Tensor features;  // B~_{i-1}
  Tensor map;       // BM_{i-1}, 1 x H x W in (0, 1)
};

/// B~ = relu(conv3x3(cat(up(B), D_prev))), BM = sigmoid(conv1x1(B~)).
BoundaryPrediction predict_boundary(const Tensor& residual, const Tensor& d_prev, const Tensor& conv_w,
                                    const Tensor& conv_b, const Tensor& head_w, const Tensor& head_b);

struct RefinedMask {
  Tensor features;  // S_{i-1}
  Tensor map;       // SM_{i-1}
};

/// S_prev = conv3x3(cat(B~ + up(STN(S)), up(S))), SM = sigmoid(conv1x1(S_prev)).
RefinedMask refine_mask(const Tensor& boundary_features, const Tensor& warped, const Tensor& s,
                        const Tensor& conv_w, const Tensor& conv_b, const Tensor& head_w, const Tensor& head_b);

struct TransitionParams {
  StnParams stn;
  Tensor boundary_w, boundary_b;  // 2Cd -> Cd, 3x3
  Tensor boundary_head_w, boundary_head_b;  // Cd -> 1
  Tensor refine_w, refine_b;      // 2Cd -> Cd, 3x3
  Tensor mask_head_w, mask_head_b;  // Cd -> 1
  Tensor stn_head_w, stn_head_b;    // Cd -> 1, supervises STN(S) directly
};

struct DecoderParams {
  std::array<Tensor, kStages> lateral_w, lateral_b;  // C_i -> Cd, 1x1
  // transitions[k] maps level 5-k to level 4-k.
  std::array<TransitionParams, kTransitions> transitions;
};

struct DecoderConfig {
  std::size_t channels = 16;
  std::size_t stn_hidden = 16;
  bool boundary_enhancement = true;
};

DecoderParams make_decoder_params(ParameterStore& store, const BackboneConfig& backbone,
                                  const DecoderConfig& config, Rng& rng);

struct DecoderState {
  // Index by level - 1.
  std::array<Tensor, kStages> d;
  std::array<Tensor, kStages> s;
  std::array<Tensor, kStages> boundary_features;  // levels 1..4
  std::array<Tensor, kStages> boundary_maps;      // BM, levels 1..4 (BEM only)
  std::array<Tensor, kStages> mask_maps;          // SM, levels 1..4
  std::array<Tensor, kStages> residuals;          // B, levels 2..5
  std::array<Tensor, kStages> warped;             // STN(S), levels 2..5
  std::array<Tensor, kStages> stn_maps;           // sigmoid(head(STN(S))), levels 2..5 (BEM only)
  std::array<Tensor, kStages> thetas;             // levels 2..5 (BEM only)
  Tensor prediction;                              // SM_1 resized to the input
  Tensor boundary_prediction;                     // BM_1 resized to the input (BEM only)
};

// Without boundary enhancement the STN is bypassed: B = 0 and STN(S) = S.
DecoderState decode(const std::array<Tensor, kStages>& features, const DecoderParams& params,
                    const DecoderConfig& config, std::size_t out_h, std::size_t out_w);

struct LossBreakdown {
  Tensor total;
  double mask = 0.0;
  double boundary = 0.0;
  double stn = 0.0;
};

// Sum over levels of bce(SM, gt) + bce(BM, boundary) + bce(STN head, gt),
// with gt maps resized by nearest neighbour. Boundary and STN terms only
// apply with boundary enhancement. gt values must be 0 or 1.
LossBreakdown total_loss(const DecoderState& state, const Tensor& gt_mask, const Tensor& gt_boundary,
                         bool boundary_enhancement);

/// Nearest-neighbour resize of an H x W (or 1 x H x W) map to 1 x out_h x out_w.
Tensor nearest_resize(const Tensor& map, std::size_t out_h, std::size_t out_w);

}  // namespace refseg
