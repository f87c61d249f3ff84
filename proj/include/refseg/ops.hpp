// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations over refseg::Tensor. Feature maps are C x H x W,
// matrices are rows x cols, all storage is row-major.

#pragma once

#include <cstddef>
#include <vector>

#include "refseg/tensor.hpp"

namespace refseg {

inline constexpr double kBceEpsilon = 1e-7;

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& x);
/// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);

// Elementwise. Binary ops require identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// scale * x + shift
Tensor affine(const Tensor& x, double scale, double shift);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Structural.
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Rows [begin, end) along axis 0.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
/// Selects rows of a V x D table; repeated ids accumulate on backward.
Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& ids);
/// x: m x n, bias: n. Adds bias to every row.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

/// Direct 2-D convolution, x: C x H x W, weight: K x C x k x k, bias: K (optional).
/// Output spatial size is floor((H + 2 pad - k) / stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad);

/// Average pooling onto an out_h x out_w grid; bin i spans
/// [floor(i*H/out_h), ceil((i+1)*H/out_h)).
Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w);
/// C x H x W -> C
Tensor global_avg_pool(const Tensor& x);

/// Affine warp of x by a 2x3 matrix in normalized [-1, 1] coordinates (corner
/// pixels at -1 and +1), bilinear sampling, zeros outside the input.
Tensor grid_sample_bilinear(const Tensor& x, const Tensor& theta);
/// Bilinear resize of C x H x W with corner pixels aligned.
Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);

/// Per-position L2 normalization across channels: x / sqrt(|x|^2 + 1e-12).
Tensor l2_normalize_channels(const Tensor& x);
/// C (or C x 1 x 1) -> C x H x W by repetition.
Tensor broadcast_spatial(const Tensor& v, std::size_t h, std::size_t w);
/// Per-channel standardization over spatial positions with learned scale and shift.
Tensor standardize_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                            double eps = 1e-5);

/// Mean binary cross entropy; predictions clamped to [eps, 1 - eps].
Tensor bce_loss(const Tensor& pred, const Tensor& target);

}  // namespace refseg
