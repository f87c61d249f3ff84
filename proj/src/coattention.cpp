// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include "refseg/coattention.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "refseg/ops.hpp"

namespace refseg {
namespace {

void require_pair(const char* who, const Tensor& m, const Tensor& l) {
  if (m.ndim() != 3 || m.shape() != l.shape()) {
    throw ShapeError(std::string(who) + ": M " + shape_str(m.shape()) + " and L " + shape_str(l.shape()) +
                     " must be matching C x H x W maps");
  }
}

Tensor flatten(const Tensor& x) { return reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}); }

Tensor project(const Tensor& w, const Tensor& flat) {
  if (w.ndim() != 2 || w.dim(1) != flat.dim(0)) {
    throw ShapeError("co-attention projection " + shape_str(w.shape()) + " does not accept " +
                     std::to_string(flat.dim(0)) + " channels");
  }
  return matmul(w, flat);
}

Tensor fuse(const Tensor& m_map, const Tensor& l_map, const Tensor& w, const Tensor& b) {
  return conv2d(concat({m_map, l_map}, 0), w, b, 1, 1);
}

}  // namespace

std::string to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::None: return "none";
    case AttentionVariant::Vanilla: return "vcm";
    case AttentionVariant::Asymmetric: return "acm";
  }
  return "?";
}

AttentionVariant parse_attention_variant(std::string_view s) {
  if (s == "none") return AttentionVariant::None;
  if (s == "vcm") return AttentionVariant::Vanilla;
  if (s == "acm") return AttentionVariant::Asymmetric;
  throw std::invalid_argument("unknown attention variant '" + std::string(s) + "'");
}

std::vector<std::size_t> PpmSpec::effective_bins(std::size_t h, std::size_t w) const {
  const auto limit = std::min(h, w);
  std::vector<std::size_t> out;
  out.reserve(bins.size());
  for (auto b : bins) out.push_back(std::min(b, limit));
  return out;
}

std::size_t PpmSpec::anchors(std::size_t h, std::size_t w) const {
  std::size_t n = 0;
  for (auto b : effective_bins(h, w)) n += b * b;
  return n;
}

std::size_t PpmSpec::anchors() const {
  std::size_t n = 0;
  for (auto b : bins) n += b * b;
  return n;
}

Tensor pyramid_pool(const Tensor& x, const PpmSpec& spec) {
  if (x.ndim() != 3) throw ShapeError("pyramid_pool: expected C x H x W, got " + shape_str(x.shape()));
  if (spec.bins.empty()) throw std::invalid_argument("pyramid_pool: no bins");
  const auto c = x.dim(0);
  std::vector<Tensor> levels;
  for (auto b : spec.effective_bins(x.dim(1), x.dim(2))) {
    if (b == 0) throw std::invalid_argument("pyramid_pool: zero bin size");
    levels.push_back(reshape(adaptive_avg_pool(x, b, b), {c, b * b}));
  }
  return levels.size() == 1 ? levels.front() : concat(levels, 1);
}

VcmParams make_vcm_params(ParameterStore& store, const std::string& prefix, std::size_t channels,
                          std::size_t proj_channels, std::size_t out_channels, Rng& rng) {
  VcmParams p;
  p.w_m = store.add(prefix + ".w_m", init_fan_in({proj_channels, channels}, channels, rng));
  p.w_l = store.add(prefix + ".w_l", init_fan_in({proj_channels, channels}, channels, rng));
  p.fuse_w = store.add(prefix + ".fuse.w", init_fan_in({out_channels, 2 * channels, 3, 3}, 2 * channels * 9, rng));
  p.fuse_b = store.add(prefix + ".fuse.b", Tensor::zeros({out_channels}));
  return p;
}

AcmParams make_acm_params(ParameterStore& store, const std::string& prefix, std::size_t channels,
                          std::size_t proj_channels, std::size_t out_channels, Rng& rng) {
  AcmParams p;
  auto proj = [&](const char* name) {
    return store.add(prefix + "." + name, init_fan_in({proj_channels, channels}, channels, rng));
  };
  p.w_m1 = proj("w_m1");
  p.w_m2 = proj("w_m2");
  p.w_m3 = proj("w_m3");
  p.w_l1 = proj("w_l1");
  p.w_l2 = proj("w_l2");
  p.w_l3 = proj("w_l3");
  p.fuse_w = store.add(prefix + ".fuse.w",
                       init_fan_in({out_channels, 2 * proj_channels, 3, 3}, 2 * proj_channels * 9, rng));
  p.fuse_b = store.add(prefix + ".fuse.b", Tensor::zeros({out_channels}));
  return p;
}

AttentionArtifacts vcm(const Tensor& m, const Tensor& l, const VcmParams& params) {
  require_pair("vcm", m, l);
  const auto c = m.dim(0), h = m.dim(1), w = m.dim(2);
  const Tensor m_flat = flatten(m);
  const Tensor l_flat = flatten(l);
  const Tensor keys = transpose2d(project(params.w_m, m_flat));  // HW x C1
  const Tensor queries = project(params.w_l, l_flat);             // C1 x HW

  AttentionArtifacts out;
  out.variant = AttentionVariant::Vanilla;
  {
    AllocationTag tag{std::string(kAffinityTag)};
    out.affinity = matmul(keys, queries);
  }
  out.affinity_rows = softmax_rows(out.affinity);
  out.affinity_cols = softmax_rows(transpose2d(out.affinity));
  out.m_updated = reshape(matmul(m_flat, transpose2d(out.affinity_rows)), {c, h, w});
  out.l_updated = reshape(matmul(l_flat, transpose2d(out.affinity_cols)), {c, h, w});
  out.fused = fuse(out.m_updated, out.l_updated, params.fuse_w, params.fuse_b);
  return out;
}

AttentionArtifacts acm(const Tensor& m, const Tensor& l, const AcmParams& params, const PpmSpec& ppm) {
  require_pair("acm", m, l);
  const auto h = m.dim(1), w = m.dim(2);
  const Tensor m_flat = flatten(m);
  const Tensor l_flat = flatten(l);
  const auto c1 = params.w_m1.dim(0);

  auto pooled = [&](const Tensor& proj, const Tensor& flat) {
    return pyramid_pool(reshape(project(proj, flat), {c1, h, w}), ppm);  // C1 x N
  };
  const Tensor anchors_m = transpose2d(pooled(params.w_m1, m_flat));  // N x C1
  const Tensor anchors_l = transpose2d(pooled(params.w_l1, l_flat));
  const Tensor keys_m = project(params.w_m2, m_flat);  // C1 x HW
  const Tensor keys_l = project(params.w_l2, l_flat);

  AttentionArtifacts out;
  out.variant = AttentionVariant::Asymmetric;
  {
    AllocationTag tag{std::string(kAffinityTag)};
    out.self_affinity_m = matmul(anchors_m, keys_m);
    out.self_affinity_l = matmul(anchors_l, keys_l);
  }
  const Tensor combined = transpose2d(add(out.self_affinity_m, out.self_affinity_l));
  {
    AllocationTag tag{std::string(kAffinityTag)};
    out.anchor_weights = softmax_rows(combined);  // HW x N
  }
  const Tensor values_m = transpose2d(pooled(params.w_m3, m_flat));  // N x C1
  const Tensor values_l = transpose2d(pooled(params.w_l3, l_flat));
  out.m_updated = reshape(transpose2d(matmul(out.anchor_weights, values_m)), {c1, h, w});
  out.l_updated = reshape(transpose2d(matmul(out.anchor_weights, values_l)), {c1, h, w});
  out.fused = fuse(out.m_updated, out.l_updated, params.fuse_w, params.fuse_b);
  return out;
}

CostReport attention_cost(AttentionVariant variant, std::size_t channels, std::size_t proj_channels,
                          std::size_t height, std::size_t width, const PpmSpec& ppm) {
  if (channels == 0 || proj_channels == 0 || height == 0 || width == 0) {
    throw std::invalid_argument("attention_cost: dimensions must be positive");
  }
  CostReport r;
  r.variant = variant;
  r.channels = channels;
  r.proj_channels = proj_channels;
  r.height = height;
  r.width = width;
  const std::size_t hw = height * width;
  const std::size_t c = channels, c1 = proj_channels;
  switch (variant) {
    case AttentionVariant::Vanilla:
      r.affinity_elements = hw * hw;
      r.flops = 2 * (2 * c1 * c * hw)  // W_m M, W_l L
                + 2 * hw * c1 * hw     // A
                + 2 * (2 * c * hw * hw);  // M A1^T, L A2^T
      break;
    case AttentionVariant::Asymmetric: {
      const auto n = ppm.anchors(height, width);
      r.anchors = n;
      r.affinity_elements = 2 * n * hw + hw * n;
      r.flops = 6 * (2 * c1 * c * hw)  // six projections
                + 2 * (2 * n * c1 * hw)  // SA_m, SA_l
                + 2 * (2 * hw * n * c1);  // A3 PPM(.)^T twice
      break;
    }
    case AttentionVariant::None:
      break;
  }
  r.bytes = r.affinity_elements * sizeof(double);
  return r;
}

std::string cost_table_header() { return "variant\tC\tC1\tH\tW\tN\taffinity_elements\tflops\tbytes"; }

std::string cost_table_row(const CostReport& r) {
  std::ostringstream os;
  os << to_string(r.variant) << '\t' << r.channels << '\t' << r.proj_channels << '\t' << r.height << '\t'
     << r.width << '\t' << r.anchors << '\t' << r.affinity_elements << '\t' << r.flops << '\t' << r.bytes;
  return os.str();
}

}  // namespace refseg
