// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include "refseg/decoder.hpp"

#include <stdexcept>

#include "refseg/ops.hpp"

namespace refseg {
namespace {

Tensor resize_like(const Tensor& x, const Tensor& ref) {
  return bilinear_resize(x, ref.dim(1), ref.dim(2));
}

Tensor bce_at(const Tensor& pred, const Tensor& gt) {
  return bce_loss(pred, nearest_resize(gt, pred.dim(1), pred.dim(2)));
}

void require_binary(const Tensor& t, const char* what) {
  for (double v : t.data()) {
    if (v != 0.0 && v != 1.0) throw std::invalid_argument(std::string("total_loss: ") + what + " must be binary");
  }
}

}  // namespace

StnParams make_stn_params(ParameterStore& store, const std::string& prefix, std::size_t channels,
                          std::size_t hidden, Rng& rng) {
  StnParams p;
  p.fc1_w = store.add(prefix + ".fc1.w", init_he({channels, hidden}, channels, rng));
  p.fc1_b = store.add(prefix + ".fc1.b", Tensor::zeros({hidden}));
  p.fc2_w = store.add(prefix + ".fc2.w", Tensor::zeros({hidden, 6}));
  p.fc2_b = store.add(prefix + ".fc2.b", Tensor::from({6}, {1, 0, 0, 0, 1, 0}));
  return p;
}

Tensor stn_theta(const Tensor& s, const StnParams& stn) {
  const Tensor pooled = reshape(global_avg_pool(s), {1, s.dim(0)});
  const Tensor hidden = relu(add_row_bias(matmul(pooled, stn.fc1_w), stn.fc1_b));
  return reshape(add_row_bias(matmul(hidden, stn.fc2_w), stn.fc2_b), {2, 3});
}

BoundaryResidual boundary_residual(const Tensor& s, const StnParams& stn) {
  if (s.ndim() != 3 || s.dim(1) != s.dim(2)) {
    throw ShapeError("boundary_residual: S must be square C x H x W, got " + shape_str(s.shape()));
  }
  BoundaryResidual r;
  r.theta = stn_theta(s, stn);
  r.warped = grid_sample_bilinear(s, r.theta);
  r.residual = sub(s, r.warped);
  return r;
}

BoundaryPrediction predict_boundary(const Tensor& residual, const Tensor& d_prev, const Tensor& conv_w,
                                    const Tensor& conv_b, const Tensor& head_w, const Tensor& head_b) {
  BoundaryPrediction out;
  out.features = relu(conv2d(concat({resize_like(residual, d_prev), d_prev}, 0), conv_w, conv_b, 1, 1));
  out.map = sigmoid(conv2d(out.features, head_w, head_b, 1, 0));
  return out;
}

RefinedMask refine_mask(const Tensor& boundary_features, const Tensor& warped, const Tensor& s,
                        const Tensor& conv_w, const Tensor& conv_b, const Tensor& head_w, const Tensor& head_b) {
  const Tensor guided = add(boundary_features, resize_like(warped, boundary_features));
  RefinedMask out;
  out.features = conv2d(concat({guided, resize_like(s, boundary_features)}, 0), conv_w, conv_b, 1, 1);
  out.map = sigmoid(conv2d(out.features, head_w, head_b, 1, 0));
  return out;
}

DecoderParams make_decoder_params(ParameterStore& store, const BackboneConfig& backbone,
                                  const DecoderConfig& config, Rng& rng) {
  const auto cd = config.channels;
  DecoderParams p;
  for (std::size_t i = 0; i < kStages; ++i) {
    const auto c = backbone.channels[i];
    const std::string prefix = "dec.lateral" + std::to_string(i + 1);
    p.lateral_w[i] = store.add(prefix + ".w", init_fan_in({cd, c, 1, 1}, c, rng));
    p.lateral_b[i] = store.add(prefix + ".b", Tensor::zeros({cd}));
  }
  for (std::size_t k = 0; k < kTransitions; ++k) {
    const std::string prefix = "dec.bem" + std::to_string(kStages - k);
    auto& t = p.transitions[k];
    t.stn = make_stn_params(store, prefix + ".stn", cd, config.stn_hidden, rng);
    t.boundary_w = store.add(prefix + ".boundary.w", init_he({cd, 2 * cd, 3, 3}, 2 * cd * 9, rng));
    t.boundary_b = store.add(prefix + ".boundary.b", Tensor::zeros({cd}));
    t.boundary_head_w = store.add(prefix + ".boundary_head.w", init_fan_in({1, cd, 1, 1}, cd, rng));
    t.boundary_head_b = store.add(prefix + ".boundary_head.b", Tensor::zeros({1}));
    t.refine_w = store.add(prefix + ".refine.w", init_fan_in({cd, 2 * cd, 3, 3}, 2 * cd * 9, rng));
    t.refine_b = store.add(prefix + ".refine.b", Tensor::zeros({cd}));
    t.mask_head_w = store.add(prefix + ".mask_head.w", init_fan_in({1, cd, 1, 1}, cd, rng));
    t.mask_head_b = store.add(prefix + ".mask_head.b", Tensor::zeros({1}));
    t.stn_head_w = store.add(prefix + ".stn_head.w", init_fan_in({1, cd, 1, 1}, cd, rng));
    t.stn_head_b = store.add(prefix + ".stn_head.b", Tensor::zeros({1}));
  }
  return p;
}

DecoderState decode(const std::array<Tensor, kStages>& features, const DecoderParams& params,
                    const DecoderConfig& config, std::size_t out_h, std::size_t out_w) {
  for (const auto& f : features) {
    if (!f.defined() || f.ndim() != 3) throw std::invalid_argument("decode: expected five C x H x W stage features");
  }
  DecoderState st;
  const auto top = kStages - 1;
  st.d[top] = conv2d(features[top], params.lateral_w[top], params.lateral_b[top], 1, 0);
  for (std::size_t i = top; i-- > 0;) {
    const Tensor lateral = conv2d(features[i], params.lateral_w[i], params.lateral_b[i], 1, 0);
    st.d[i] = add(lateral, resize_like(st.d[i + 1], lateral));
  }
  st.s[top] = st.d[top];

  const bool bem = config.boundary_enhancement;
  for (std::size_t k = 0; k < kTransitions; ++k) {
    const std::size_t i = top - k;  // source level index
    const std::size_t prev = i - 1;
    const auto& tp = params.transitions[k];
    Tensor residual, warped;
    if (bem) {
      auto br = boundary_residual(st.s[i], tp.stn);
      st.thetas[i] = br.theta;
      residual = br.residual;
      warped = br.warped;
      st.stn_maps[i] = sigmoid(conv2d(warped, tp.stn_head_w, tp.stn_head_b, 1, 0));
    } else {
      residual = Tensor::zeros(st.s[i].shape());
      warped = st.s[i];
    }
    st.residuals[i] = residual;
    st.warped[i] = warped;

    auto bp = predict_boundary(residual, st.d[prev], tp.boundary_w, tp.boundary_b, tp.boundary_head_w,
                               tp.boundary_head_b);
    st.boundary_features[prev] = bp.features;
    if (bem) st.boundary_maps[prev] = bp.map;

    auto rm = refine_mask(bp.features, warped, st.s[i], tp.refine_w, tp.refine_b, tp.mask_head_w, tp.mask_head_b);
    st.s[prev] = rm.features;
    st.mask_maps[prev] = rm.map;
  }
  st.prediction = bilinear_resize(st.mask_maps[0], out_h, out_w);
  if (bem) st.boundary_prediction = bilinear_resize(st.boundary_maps[0], out_h, out_w);
  return st;
}

LossBreakdown total_loss(const DecoderState& state, const Tensor& gt_mask, const Tensor& gt_boundary,
                         bool boundary_enhancement) {
  require_binary(gt_mask, "gt mask");
  if (boundary_enhancement) require_binary(gt_boundary, "gt boundary");
  std::vector<Tensor> terms;
  LossBreakdown out;
  for (std::size_t level = 0; level < kTransitions; ++level) {
    auto t = bce_at(state.mask_maps[level], gt_mask);
    out.mask += t.item();
    terms.push_back(t);
    if (!boundary_enhancement) continue;
    auto b = bce_at(state.boundary_maps[level], gt_boundary);
    out.boundary += b.item();
    terms.push_back(b);
    auto s = bce_at(state.stn_maps[level + 1], gt_mask);
    out.stn += s.item();
    terms.push_back(s);
  }
  out.total = sum(concat(terms, 0));
  return out;
}

Tensor nearest_resize(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  std::size_t h = 0, w = 0;
  if (map.ndim() == 2) {
    h = map.dim(0);
    w = map.dim(1);
  } else if (map.ndim() == 3 && map.dim(0) == 1) {
    h = map.dim(1);
    w = map.dim(2);
  } else {
    throw ShapeError("nearest_resize: expected H x W or 1 x H x W, got " + shape_str(map.shape()));
  }
  std::vector<double> v(out_h * out_w);
  auto src = map.data();
  for (std::size_t i = 0; i < out_h; ++i) {
    const auto si = i * h / out_h;
    for (std::size_t j = 0; j < out_w; ++j) v[i * out_w + j] = src[si * w + j * w / out_w];
  }
  return Tensor::from({1, out_h, out_w}, std::move(v));
}

}  // namespace refseg
