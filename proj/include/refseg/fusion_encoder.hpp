// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Visual backbone with language injected into its last three stages.

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "refseg/coattention.hpp"
#include "refseg/params.hpp"
#include "refseg/tensor.hpp"
#include "refseg/text_encoder.hpp"

namespace refseg {

inline constexpr std::size_t kStages = 5;
inline constexpr std::size_t kFirstFusedStage = 3;  // 1-based; stages 3, 4, 5 are fused
inline constexpr std::size_t kFusedStages = kStages - kFirstFusedStage + 1;
inline constexpr std::size_t kCoordChannels = 8;

class UnsupportedConfiguration : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct BackboneConfig {
  std::array<std::size_t, kStages> channels{16, 32, 64, 96, 128};
  std::array<std::size_t, kStages> strides{1, 2, 2, 2, 1};

  // Throws unless every value is positive and the last stride is 1.
  void validate() const;
};

// Language goes into the backbone (encoder fusion) or only into the
// decoder-side lateral features (decoder fusion).
enum class FusionMode { Encoder, Decoder };

std::string to_string(FusionMode m);
FusionMode parse_fusion_mode(std::string_view s);

struct StageParams {
  Tensor conv1_w, conv1_b;  // first conv carries the stride
  Tensor conv2_w, conv2_b;
  Tensor skip_w, skip_b;    // 1x1 projection; undefined for an identity skip
  std::size_t stride = 1;
};

StageParams make_stage_params(ParameterStore& store, const std::string& prefix, std::size_t in_channels,
                              std::size_t out_channels, std::size_t stride, Rng& rng);

/// relu(conv2(relu(conv1(x))) + skip(x)), 3x3 convs with padding 1.
Tensor backbone_stage(const Tensor& x, const StageParams& p);

/// 8 x H x W coordinate features per cell: x_center, y_center, x_min, y_min,
/// x_max, y_max (all in [-1, 1]), then 1/W and 1/H.
Tensor spatial_coords(std::size_t height, std::size_t width);

/// M = w * [l2norm(E), l2norm(h_sent), coords] + b as a 1x1 conv.
Tensor initial_fusion(const Tensor& visual, const Tensor& sentence, const Tensor& w, const Tensor& b);

/// l_p = sum_t e_t softmax_t(m_p . (e_t K)), then projected by `out_proj`.
/// words: T x D, key_proj: D x C, out_proj: D x C_out. Returns C_out x H x W.
Tensor adaptive_linguistic_context(const Tensor& m, const Tensor& words, const Tensor& key_proj,
                                   const Tensor& out_proj);

struct FusionParams {
  Tensor fuse_w, fuse_b;        // (C_i + C_h + 8) -> C_mm, 1x1
  Tensor key_proj, value_proj;  // D -> C_mm
  Tensor out_w, out_b;          // C_mm -> C_i, 1x1
  Tensor gamma, beta;           // C_i
  std::optional<VcmParams> vcm;
  std::optional<AcmParams> acm;
};

struct EncoderParams {
  std::array<StageParams, kStages> stages;
  std::array<FusionParams, kFusedStages> fusion;
};

struct EncoderConfig {
  BackboneConfig backbone;
  std::size_t word_dim = 64;
  std::size_t sentence_dim = 128;
  std::size_t fused_channels = 128;    // C_mm and C2
  std::size_t attention_channels = 64;  // C1
  FusionMode mode = FusionMode::Encoder;
  AttentionVariant attention = AttentionVariant::Asymmetric;
  PpmSpec ppm;

  void validate() const;
};

EncoderParams make_encoder_params(ParameterStore& store, const EncoderConfig& config, Rng& rng);

struct EncoderOutput {
  // E_1..E_5; for the fused stages these already include the language term.
  std::array<Tensor, kStages> features;
  std::array<Tensor, kFusedStages> multimodal;  // M per fused stage
  std::array<Tensor, kFusedStages> linguistic;  // L per fused stage (undefined without attention)
  std::vector<AttentionArtifacts> attention;
};

EncoderOutput efn_forward(const Tensor& image, const LinguisticContext& ling, const EncoderParams& params,
                          const EncoderConfig& config);

}  // namespace refseg
