// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include "refseg/fusion_encoder.hpp"

#include <stdexcept>

#include "refseg/ops.hpp"

namespace refseg {

void BackboneConfig::validate() const {
  for (std::size_t i = 0; i < kStages; ++i) {
    if (channels[i] == 0 || strides[i] == 0) throw std::invalid_argument("backbone: channels and strides must be positive");
  }
  if (strides[kStages - 1] != 1) throw std::invalid_argument("backbone: the last stage must have stride 1");
}

std::string to_string(FusionMode m) { return m == FusionMode::Encoder ? "efn" : "dfn"; }

FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "efn") return FusionMode::Encoder;
  if (s == "dfn") return FusionMode::Decoder;
  throw std::invalid_argument("unknown fusion mode '" + std::string(s) + "'");
}

void EncoderConfig::validate() const {
  backbone.validate();
  if (mode == FusionMode::Decoder && attention != AttentionVariant::None) {
    throw UnsupportedConfiguration("decoder fusion only supports plain concatenation fusion (attention=none)");
  }
  if (word_dim == 0 || sentence_dim == 0 || fused_channels == 0 || attention_channels == 0) {
    throw std::invalid_argument("encoder: dimensions must be positive");
  }
}

StageParams make_stage_params(ParameterStore& store, const std::string& prefix, std::size_t in_channels,
                              std::size_t out_channels, std::size_t stride, Rng& rng) {
  StageParams p;
  p.stride = stride;
  p.conv1_w = store.add(prefix + ".conv1.w", init_he({out_channels, in_channels, 3, 3}, in_channels * 9, rng));
  p.conv1_b = store.add(prefix + ".conv1.b", Tensor::zeros({out_channels}));
  p.conv2_w = store.add(prefix + ".conv2.w", init_he({out_channels, out_channels, 3, 3}, out_channels * 9, rng));
  p.conv2_b = store.add(prefix + ".conv2.b", Tensor::zeros({out_channels}));
  if (in_channels != out_channels || stride != 1) {
    p.skip_w = store.add(prefix + ".skip.w", init_fan_in({out_channels, in_channels, 1, 1}, in_channels, rng));
    p.skip_b = store.add(prefix + ".skip.b", Tensor::zeros({out_channels}));
  }
  return p;
}

Tensor backbone_stage(const Tensor& x, const StageParams& p) {
  const Tensor inner = conv2d(relu(conv2d(x, p.conv1_w, p.conv1_b, p.stride, 1)), p.conv2_w, p.conv2_b, 1, 1);
  const Tensor skip = p.skip_w.defined() ? conv2d(x, p.skip_w, p.skip_b, p.stride, 0) : x;
  return relu(add(inner, skip));
}

Tensor spatial_coords(std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw std::invalid_argument("spatial_coords: empty grid");
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  const std::size_t area = height * width;
  std::vector<double> v(kCoordChannels * area);
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t p = i * width + j;
      const double x_min = 2.0 * static_cast<double>(j) / w - 1.0;
      const double x_max = 2.0 * static_cast<double>(j + 1) / w - 1.0;
      const double y_min = 2.0 * static_cast<double>(i) / h - 1.0;
      const double y_max = 2.0 * static_cast<double>(i + 1) / h - 1.0;
      v[0 * area + p] = (x_min + x_max) / 2.0;
      v[1 * area + p] = (y_min + y_max) / 2.0;
      v[2 * area + p] = x_min;
      v[3 * area + p] = y_min;
      v[4 * area + p] = x_max;
      v[5 * area + p] = y_max;
      v[6 * area + p] = 1.0 / w;
      v[7 * area + p] = 1.0 / h;
    }
  }
  return Tensor::from({kCoordChannels, height, width}, std::move(v));
}

Tensor initial_fusion(const Tensor& visual, const Tensor& sentence, const Tensor& w, const Tensor& b) {
  if (visual.ndim() != 3) throw ShapeError("initial_fusion: visual feature must be C x H x W");
  const auto h = visual.dim(1), wd = visual.dim(2);
  const Tensor lang = broadcast_spatial(l2_normalize_channels(reshape(sentence, {sentence.numel()})), h, wd);
  const Tensor stacked = concat({l2_normalize_channels(visual), lang, spatial_coords(h, wd)}, 0);
  return conv2d(stacked, w, b, 1, 0);
}

Tensor adaptive_linguistic_context(const Tensor& m, const Tensor& words, const Tensor& key_proj,
                                   const Tensor& out_proj) {
  if (m.ndim() != 3) throw ShapeError("adaptive_linguistic_context: M must be C x H x W");
  if (words.ndim() != 2 || words.dim(0) == 0) {
    throw std::invalid_argument("adaptive_linguistic_context: expression has no words");
  }
  const auto c = m.dim(0), h = m.dim(1), w = m.dim(2);
  if (key_proj.ndim() != 2 || key_proj.dim(0) != words.dim(1) || key_proj.dim(1) != c) {
    throw ShapeError("adaptive_linguistic_context: key projection " + shape_str(key_proj.shape()) +
                     " incompatible with words " + shape_str(words.shape()) + " and M " + shape_str(m.shape()));
  }
  const Tensor keys = matmul(words, key_proj);                                          // T x C
  const Tensor positions = transpose2d(reshape(m, {c, h * w}));                         // HW x C
  const Tensor weights = softmax_rows(matmul(positions, transpose2d(keys)));            // HW x T
  const Tensor context = matmul(matmul(weights, words), out_proj);                      // HW x C_out
  return reshape(transpose2d(context), {out_proj.dim(1), h, w});
}

EncoderParams make_encoder_params(ParameterStore& store, const EncoderConfig& config, Rng& rng) {
  config.validate();
  EncoderParams p;
  std::size_t in_channels = 3;
  for (std::size_t s = 0; s < kStages; ++s) {
    const auto out_channels = config.backbone.channels[s];
    p.stages[s] = make_stage_params(store, "enc.stage" + std::to_string(s + 1), in_channels, out_channels,
                                    config.backbone.strides[s], rng);
    in_channels = out_channels;
  }
  const auto cmm = config.fused_channels;
  for (std::size_t k = 0; k < kFusedStages; ++k) {
    const auto stage_channels = config.backbone.channels[kFirstFusedStage - 1 + k];
    const std::string prefix = "enc.fuse" + std::to_string(kFirstFusedStage + k);
    auto& f = p.fusion[k];
    const auto fan_in = stage_channels + config.sentence_dim + kCoordChannels;
    f.fuse_w = store.add(prefix + ".m.w", init_fan_in({cmm, fan_in, 1, 1}, fan_in, rng));
    f.fuse_b = store.add(prefix + ".m.b", Tensor::zeros({cmm}));
    if (config.attention != AttentionVariant::None) {
      f.key_proj = store.add(prefix + ".l.key", init_fan_in({config.word_dim, cmm}, config.word_dim, rng));
      f.value_proj = store.add(prefix + ".l.value", init_fan_in({config.word_dim, cmm}, config.word_dim, rng));
    }
    if (config.attention == AttentionVariant::Vanilla) {
      f.vcm = make_vcm_params(store, prefix + ".vcm", cmm, config.attention_channels, cmm, rng);
    } else if (config.attention == AttentionVariant::Asymmetric) {
      f.acm = make_acm_params(store, prefix + ".acm", cmm, config.attention_channels, cmm, rng);
    }
    f.out_w = store.add(prefix + ".out.w", init_fan_in({stage_channels, cmm, 1, 1}, cmm, rng));
    f.out_b = store.add(prefix + ".out.b", Tensor::zeros({stage_channels}));
    f.gamma = store.add(prefix + ".norm.gamma", Tensor::filled({stage_channels}, 1.0));
    f.beta = store.add(prefix + ".norm.beta", Tensor::zeros({stage_channels}));
  }
  return p;
}

EncoderOutput efn_forward(const Tensor& image, const LinguisticContext& ling, const EncoderParams& params,
                          const EncoderConfig& config) {
  config.validate();
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw ShapeError("efn_forward: image must be 3 x H x W, got " + shape_str(image.shape()));
  }
  EncoderOutput out;
  Tensor x = image;
  for (std::size_t s = 0; s < kStages; ++s) {
    x = backbone_stage(x, params.stages[s]);
    if (s + 1 < kFirstFusedStage) {
      out.features[s] = x;
      continue;
    }
    const auto k = s + 1 - kFirstFusedStage;
    const auto& f = params.fusion[k];
    const Tensor m = initial_fusion(x, ling.sentence, f.fuse_w, f.fuse_b);
    out.multimodal[k] = m;
    Tensor fused = m;
    if (config.attention != AttentionVariant::None) {
      const Tensor l = adaptive_linguistic_context(m, ling.words, f.key_proj, f.value_proj);
      out.linguistic[k] = l;
      auto artifacts = config.attention == AttentionVariant::Vanilla ? vcm(m, l, *f.vcm) : acm(m, l, *f.acm, config.ppm);
      fused = artifacts.fused;
      out.attention.push_back(std::move(artifacts));
    }
    const Tensor enriched = add(x, standardize_channels(conv2d(fused, f.out_w, f.out_b, 1, 0), f.gamma, f.beta));
    out.features[s] = enriched;
    // Encoder fusion feeds the enriched map onward; decoder fusion keeps the
    // backbone language-free and hands the enriched map only to the decoder.
    if (config.mode == FusionMode::Encoder) x = enriched;
  }
  return out;
}

}  // namespace refseg
