// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Parallel co-attention between the multi-modal map M and the linguistic map
// L. Both are C x H x W and are flattened row-major (position p = y*W + x).
//
// Vanilla (VCM):
//   A  = (W_m M)^T (W_l L)                      HW x HW
//   A1 = softmax_rows(A), A2 = softmax_rows(A^T)
//   M~ = M A1^T, L~ = L A2^T                    C x HW
//
// Asymmetric (ACM), with a pyramid pooling of N anchors:
//   SA_m = PPM(W_m1 M)^T (W_m2 M)               N x HW
//   SA_l = PPM(W_l1 L)^T (W_l2 L)               N x HW
//   A3   = softmax_rows((SA_m + SA_l)^T)        HW x N
//   M~   = A3 PPM(W_m3 M)^T, L~ = A3 PPM(W_l3 L)^T   HW x C1
//
// Both fuse with F = conv3x3(concat(M~, L~)).

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "refseg/params.hpp"
#include "refseg/tensor.hpp"

namespace refseg {

// Allocation tag carried by affinity matrices (A for VCM; SA_m, SA_l, A3 for ACM).
inline constexpr std::string_view kAffinityTag = "affinity";

enum class AttentionVariant { None, Vanilla, Asymmetric };

std::string to_string(AttentionVariant v);
AttentionVariant parse_attention_variant(std::string_view s);

struct PpmSpec {
  std::vector<std::size_t> bins{1, 3, 6, 8};

  // Bin edge lengths actually used on an h x w map: each clamped to min(h, w).
  std::vector<std::size_t> effective_bins(std::size_t h, std::size_t w) const;
  std::size_t anchors(std::size_t h, std::size_t w) const;
  // Anchor count with no clamping.
  std::size_t anchors() const;
};

/// C x H x W -> C x N. Bins in listed order, each flattened row-major.
Tensor pyramid_pool(const Tensor& x, const PpmSpec& spec);

struct VcmParams {
  Tensor w_m, w_l;        // C1 x C
  Tensor fuse_w, fuse_b;  // C2 x 2C x 3 x 3, C2
};

struct AcmParams {
  Tensor w_m1, w_m2, w_m3;  // C1 x C
  Tensor w_l1, w_l2, w_l3;  // C1 x C
  Tensor fuse_w, fuse_b;    // C2 x 2C1 x 3 x 3, C2
};

VcmParams make_vcm_params(ParameterStore& store, const std::string& prefix, std::size_t channels,
                          std::size_t proj_channels, std::size_t out_channels, Rng& rng);
AcmParams make_acm_params(ParameterStore& store, const std::string& prefix, std::size_t channels,
                          std::size_t proj_channels, std::size_t out_channels, Rng& rng);

struct AttentionArtifacts {
  AttentionVariant variant = AttentionVariant::None;
  Tensor affinity;              // VCM: A
  Tensor affinity_rows;         // VCM: A1
  Tensor affinity_cols;         // VCM: A2
  Tensor self_affinity_m;       // ACM: SA_m
  Tensor self_affinity_l;       // ACM: SA_l
  Tensor anchor_weights;        // ACM: A3
  Tensor m_updated, l_updated;  // M~, L~ as feature maps
  Tensor fused;                 // F
};

AttentionArtifacts vcm(const Tensor& m, const Tensor& l, const VcmParams& params);
AttentionArtifacts acm(const Tensor& m, const Tensor& l, const AcmParams& params, const PpmSpec& ppm = {});

struct CostReport {
  AttentionVariant variant = AttentionVariant::None;
  std::size_t channels = 0, proj_channels = 0, height = 0, width = 0, anchors = 0;
  std::size_t affinity_elements = 0;
  std::size_t flops = 0;  // matmul flops (2mnk), projections included
  std::size_t bytes = 0;  // affinity_elements * 8
};

// VCM affinity (HW)^2; ACM affinity 2*N*HW + HW*N.
CostReport attention_cost(AttentionVariant variant, std::size_t channels, std::size_t proj_channels,
                          std::size_t height, std::size_t width, const PpmSpec& ppm = {});

std::string cost_table_header();
std::string cost_table_row(const CostReport& report);

}  // namespace refseg
