// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include "refseg/gradcheck_suite.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

#include "refseg/coattention.hpp"
#include "refseg/decoder.hpp"
#include "refseg/fusion_encoder.hpp"
#include "refseg/ops.hpp"
#include "refseg/random.hpp"
#include "refseg/text_encoder.hpp"

namespace refseg {
namespace {

using Inputs = std::vector<Tensor>;

GradCheckOptions options_for(std::uint64_t seed, std::size_t max_coords = 0) {
  GradCheckOptions o;
  o.seed = seed;
  o.max_coords_per_input = max_coords;
  return o;
}

Tensor rand(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) { return uniform_tensor(std::move(shape), lo, hi, rng); }

// Every store entry is a leaf under test.
std::vector<Tensor> leaves_of(const ParameterStore& store) {
  std::vector<Tensor> out;
  for (const auto& e : store.entries()) out.push_back(e.value);
  return out;
}

// Single-op case: f over freshly drawn inputs.
GradCase op_case(std::string name, std::function<Inputs(Rng&)> make, GradFunction f) {
  return {std::move(name), [make = std::move(make), f = std::move(f)](std::uint64_t seed) {
            Rng rng = derive_rng(seed, 1);
            return check_gradients(f, make(rng), options_for(seed));
          }};
}

// Wrong backward for y = x * x: reports x instead of 2x.
Tensor broken_square(const Tensor& x) {
  Buffer v(x.data().begin(), x.data().end());
  for (auto& e : v) e *= e;
  return Tensor::make_result("broken_square", x.shape(), std::move(v), {x}, [](detail::Node& self) {
    auto& parent = *self.parents[0];
    auto& g = parent.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * parent.data[i];
  });
}

// Moves every parameter off its initial value so no relu pre-activation
// sits exactly on the kink (zero biases on zero inputs otherwise do).
void jitter(const ParameterStore& store, Rng& rng) {
  std::uniform_real_distribution<double> d(-0.05, 0.05);
  for (const auto& e : store.entries()) {
    Tensor t = e.value;
    for (auto& v : t.mutable_data()) v += d(rng);
  }
}

void randomize_stn(StnParams& stn, Rng& rng) {
  auto w = stn.fc2_w.mutable_data();
  for (auto& v : w) v = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
  auto b = stn.fc2_b.mutable_data();
  const double identity[6] = {1, 0, 0, 0, 1, 0};
  for (std::size_t i = 0; i < 6; ++i) b[i] = identity[i] + std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
}

EncoderConfig tiny_encoder(AttentionVariant attention, FusionMode mode) {
  EncoderConfig c;
  c.backbone.channels = {2, 3, 3, 4, 4};
  c.backbone.strides = {1, 2, 1, 2, 1};
  c.word_dim = 3;
  c.sentence_dim = 4;
  c.fused_channels = 4;
  c.attention_channels = 2;
  c.mode = mode;
  c.attention = attention;
  c.ppm.bins = {1, 2};
  return c;
}

GradCheckResult efn_case(std::uint64_t seed, AttentionVariant attention, FusionMode mode) {
  Rng rng = derive_rng(seed, 1);
  const auto config = tiny_encoder(attention, mode);
  ParameterStore store;
  const auto params = make_encoder_params(store, config, rng);
  jitter(store, rng);
  const Tensor image = store.add("input.image", rand({3, 8, 8}, rng, 0.0, 1.0));
  LinguisticContext ling;
  ling.words = store.add("input.words", rand({3, config.word_dim}, rng));
  ling.sentence = store.add("input.sentence", rand({config.sentence_dim}, rng));
  auto f = [&] {
    const auto out = efn_forward(image, ling, params, config);
    return concat({reshape(out.features[2], {out.features[2].numel()}), reshape(out.features[4], {out.features[4].numel()})},
                  0);
  };
  return check_gradients_in_place(f, leaves_of(store), options_for(seed, 3));
}

struct TinyDecoder {
  ParameterStore store;
  BackboneConfig backbone;
  DecoderConfig config;
  DecoderParams params;
  std::array<Tensor, kStages> features;
};

void build_tiny_decoder(TinyDecoder& d, Rng& rng, bool bem) {
  d.backbone.channels = {2, 2, 3, 3, 3};
  d.backbone.strides = {1, 2, 1, 2, 1};
  d.config.channels = 2;
  d.config.stn_hidden = 2;
  d.config.boundary_enhancement = bem;
  d.params = make_decoder_params(d.store, d.backbone, d.config, rng);
  jitter(d.store, rng);
  for (auto& t : d.params.transitions) randomize_stn(t.stn, rng);
  const std::size_t sizes[kStages] = {8, 4, 4, 2, 2};
  for (std::size_t i = 0; i < kStages; ++i) {
    d.features[i] = d.store.add("input.feature" + std::to_string(i + 1),
                                rand({d.backbone.channels[i], sizes[i], sizes[i]}, rng));
  }
}

std::vector<GradCase> build_cases() {
  std::vector<GradCase> cases;

  // tensor ops
  cases.push_back(op_case(
      "tensor.matmul", [](Rng& r) { return Inputs{rand({3, 4}, r), rand({4, 2}, r)}; },
      [](const Inputs& x) { return matmul(x[0], x[1]); }));
  cases.push_back(op_case(
      "tensor.transpose2d", [](Rng& r) { return Inputs{rand({3, 4}, r)}; },
      [](const Inputs& x) { return transpose2d(x[0]); }));
  cases.push_back(op_case(
      "tensor.softmax_rows", [](Rng& r) { return Inputs{rand({3, 5}, r, -2.0, 2.0)}; },
      [](const Inputs& x) { return softmax_rows(x[0]); }));
  cases.push_back(op_case(
      "tensor.add", [](Rng& r) { return Inputs{rand({2, 3}, r), rand({2, 3}, r)}; },
      [](const Inputs& x) { return add(x[0], x[1]); }));
  cases.push_back(op_case(
      "tensor.sub", [](Rng& r) { return Inputs{rand({2, 3}, r), rand({2, 3}, r)}; },
      [](const Inputs& x) { return sub(x[0], x[1]); }));
  cases.push_back(op_case(
      "tensor.mul", [](Rng& r) { return Inputs{rand({2, 3}, r), rand({2, 3}, r)}; },
      [](const Inputs& x) { return mul(x[0], x[1]); }));
  cases.push_back(op_case(
      "tensor.affine", [](Rng& r) { return Inputs{rand({2, 3}, r)}; },
      [](const Inputs& x) { return affine(x[0], -1.7, 0.3); }));
  cases.push_back(op_case(
      "tensor.sigmoid", [](Rng& r) { return Inputs{rand({2, 4}, r, -4.0, 4.0)}; },
      [](const Inputs& x) { return sigmoid(x[0]); }));
  cases.push_back(op_case(
      "tensor.tanh", [](Rng& r) { return Inputs{rand({2, 4}, r, -2.0, 2.0)}; },
      [](const Inputs& x) { return tanh(x[0]); }));
  cases.push_back(op_case(
      "tensor.relu", [](Rng& r) { return Inputs{rand({3, 4}, r)}; },
      [](const Inputs& x) { return relu(x[0]); }));
  cases.push_back(op_case(
      "tensor.sum", [](Rng& r) { return Inputs{rand({3, 4}, r)}; }, [](const Inputs& x) { return sum(x[0]); }));
  cases.push_back(op_case(
      "tensor.mean", [](Rng& r) { return Inputs{rand({3, 4}, r)}; }, [](const Inputs& x) { return mean(x[0]); }));
  cases.push_back(op_case(
      "tensor.reshape", [](Rng& r) { return Inputs{rand({2, 6}, r)}; },
      [](const Inputs& x) { return reshape(x[0], {3, 2, 2}); }));
  cases.push_back(op_case(
      "tensor.concat", [](Rng& r) { return Inputs{rand({2, 3, 2}, r), rand({1, 3, 2}, r), rand({2, 3, 2}, r)}; },
      [](const Inputs& x) { return concat({x[0], x[1], x[2]}, 0); }));
  cases.push_back(op_case(
      "tensor.concat_cols", [](Rng& r) { return Inputs{rand({2, 3}, r), rand({2, 1}, r)}; },
      [](const Inputs& x) { return concat({x[0], x[1]}, 1); }));
  cases.push_back(op_case(
      "tensor.slice_rows", [](Rng& r) { return Inputs{rand({4, 3}, r)}; },
      [](const Inputs& x) { return slice_rows(x[0], 1, 3); }));
  cases.push_back(op_case(
      "tensor.gather_rows", [](Rng& r) { return Inputs{rand({5, 3}, r)}; },
      [](const Inputs& x) { return gather_rows(x[0], {4, 1, 1, 0}); }));
  cases.push_back(op_case(
      "tensor.add_row_bias", [](Rng& r) { return Inputs{rand({3, 4}, r), rand({4}, r)}; },
      [](const Inputs& x) { return add_row_bias(x[0], x[1]); }));
  cases.push_back(op_case(
      "tensor.conv2d", [](Rng& r) { return Inputs{rand({2, 5, 5}, r), rand({3, 2, 3, 3}, r), rand({3}, r)}; },
      [](const Inputs& x) { return conv2d(x[0], x[1], x[2], 1, 1); }));
  cases.push_back(op_case(
      "tensor.conv2d_stride2", [](Rng& r) { return Inputs{rand({2, 6, 6}, r), rand({3, 2, 3, 3}, r), rand({3}, r)}; },
      [](const Inputs& x) { return conv2d(x[0], x[1], x[2], 2, 1); }));
  cases.push_back(op_case(
      "tensor.conv2d_1x1", [](Rng& r) { return Inputs{rand({3, 4, 3}, r), rand({2, 3, 1, 1}, r)}; },
      [](const Inputs& x) { return conv2d(x[0], x[1], Tensor{}, 1, 0); }));
  cases.push_back(op_case(
      "tensor.adaptive_avg_pool", [](Rng& r) { return Inputs{rand({2, 5, 7}, r)}; },
      [](const Inputs& x) { return adaptive_avg_pool(x[0], 3, 2); }));
  cases.push_back(op_case(
      "tensor.global_avg_pool", [](Rng& r) { return Inputs{rand({3, 4, 2}, r)}; },
      [](const Inputs& x) { return global_avg_pool(x[0]); }));
  cases.push_back(op_case(
      "tensor.grid_sample_bilinear",
      [](Rng& r) {
        auto theta = rand({2, 3}, r, -0.15, 0.15);
        auto t = theta.mutable_data();
        t[0] += 1.0;
        t[4] += 1.0;
        return Inputs{rand({2, 5, 5}, r), theta};
      },
      [](const Inputs& x) { return grid_sample_bilinear(x[0], x[1]); }));
  cases.push_back(op_case(
      "tensor.bilinear_resize", [](Rng& r) { return Inputs{rand({2, 3, 4}, r)}; },
      [](const Inputs& x) { return bilinear_resize(x[0], 5, 7); }));
  cases.push_back(op_case(
      "tensor.bilinear_downsize", [](Rng& r) { return Inputs{rand({2, 6, 5}, r)}; },
      [](const Inputs& x) { return bilinear_resize(x[0], 4, 3); }));
  cases.push_back(op_case(
      "tensor.l2_normalize_channels", [](Rng& r) { return Inputs{rand({3, 2, 2}, r)}; },
      [](const Inputs& x) { return l2_normalize_channels(x[0]); }));
  cases.push_back(op_case(
      "tensor.broadcast_spatial", [](Rng& r) { return Inputs{rand({3}, r)}; },
      [](const Inputs& x) { return broadcast_spatial(x[0], 2, 3); }));
  cases.push_back(op_case(
      "tensor.standardize_channels", [](Rng& r) { return Inputs{rand({3, 3, 3}, r), rand({3}, r), rand({3}, r)}; },
      [](const Inputs& x) { return standardize_channels(x[0], x[1], x[2]); }));
  cases.push_back(op_case(
      "tensor.bce_loss", [](Rng& r) { return Inputs{rand({1, 3, 4}, r, -3.0, 3.0), rand({1, 3, 4}, r, 0.0, 1.0)}; },
      [](const Inputs& x) { return bce_loss(sigmoid(x[0]), x[1]); }));

  // text encoder
  cases.push_back({"text.gru_cell", [](std::uint64_t seed) {
                     Rng rng = derive_rng(seed, 1);
                     ParameterStore store;
                     const auto p = make_gru_params(store, "gru", 3, 2, rng);
                     for (const auto& e : store.entries()) {
                       Tensor t = e.value;
                       auto v = t.mutable_data();
                       for (auto& x : v) x = std::uniform_real_distribution<double>(-1, 1)(rng);
                     }
                     const Tensor x = store.add("input.x", rand({1, 3}, rng));
                     const Tensor h = store.add("input.h", rand({1, 2}, rng));
                     return check_gradients_in_place([&] { return gru_cell(x, h, p); }, leaves_of(store),
                                                     options_for(seed));
                   }});
  cases.push_back({"text.encode", [](std::uint64_t seed) {
                     Rng rng = derive_rng(seed, 1);
                     ParameterStore store;
                     const auto p = make_text_encoder_params(store, 6, 3, 2, rng);
                     TokenSequence seq{{2, 5, 3, 1, kPadId}, 4, 1};
                     return check_gradients_in_place(
                         [&] {
                           const auto ctx = encode(seq, p);
                           return concat({reshape(ctx.states, {ctx.states.numel()}), ctx.sentence}, 0);
                         },
                         leaves_of(store), options_for(seed));
                   }});

  // fusion encoder
  cases.push_back({"fusion.backbone_stage", [](std::uint64_t seed) {
                     Rng rng = derive_rng(seed, 1);
                     ParameterStore store;
                     const auto p = make_stage_params(store, "stage", 2, 3, 2, rng);
                     jitter(store, rng);
                     const Tensor x = store.add("input.x", rand({2, 6, 6}, rng));
                     return check_gradients_in_place([&] { return backbone_stage(x, p); }, leaves_of(store),
                                                     options_for(seed, 12));
                   }});
  cases.push_back(op_case(
      "fusion.initial_fusion",
      [](Rng& r) { return Inputs{rand({3, 3, 2}, r), rand({4}, r), rand({5, 3 + 4 + 8, 1, 1}, r), rand({5}, r)}; },
      [](const Inputs& x) { return initial_fusion(x[0], x[1], x[2], x[3]); }));
  cases.push_back(op_case(
      "fusion.linguistic_context",
      [](Rng& r) { return Inputs{rand({4, 2, 3}, r), rand({3, 3}, r), rand({3, 4}, r), rand({3, 5}, r)}; },
      [](const Inputs& x) { return adaptive_linguistic_context(x[0], x[1], x[2], x[3]); }));
  cases.push_back({"fusion.efn_acm", [](std::uint64_t s) {
                     return efn_case(s, AttentionVariant::Asymmetric, FusionMode::Encoder);
                   }});
  cases.push_back({"fusion.efn_vcm", [](std::uint64_t s) {
                     return efn_case(s, AttentionVariant::Vanilla, FusionMode::Encoder);
                   }});
  cases.push_back({"fusion.dfn", [](std::uint64_t s) { return efn_case(s, AttentionVariant::None, FusionMode::Decoder); }});

  // co-attention
  cases.push_back(op_case(
      "coattention.pyramid_pool", [](Rng& r) { return Inputs{rand({3, 5, 6}, r)}; },
      [](const Inputs& x) { return pyramid_pool(x[0], PpmSpec{{1, 2, 3}}); }));
  cases.push_back({"coattention.vcm", [](std::uint64_t seed) {
                     Rng rng = derive_rng(seed, 1);
                     ParameterStore store;
                     const auto p = make_vcm_params(store, "vcm", 3, 2, 3, rng);
                     const Tensor m = store.add("input.m", rand({3, 3, 4}, rng));
                     const Tensor l = store.add("input.l", rand({3, 3, 4}, rng));
                     return check_gradients_in_place([&] { return vcm(m, l, p).fused; }, leaves_of(store),
                                                     options_for(seed));
                   }});
  cases.push_back({"coattention.acm", [](std::uint64_t seed) {
                     Rng rng = derive_rng(seed, 1);
                     ParameterStore store;
                     const auto p = make_acm_params(store, "acm", 3, 2, 3, rng);
                     const Tensor m = store.add("input.m", rand({3, 3, 4}, rng));
                     const Tensor l = store.add("input.l", rand({3, 3, 4}, rng));
                     return check_gradients_in_place([&] { return acm(m, l, p, PpmSpec{{1, 2}}).fused; },
                                                     leaves_of(store), options_for(seed));
                   }});

  // decoder
  cases.push_back({"decoder.stn_theta", [](std::uint64_t seed) {
                     Rng rng = derive_rng(seed, 1);
                     ParameterStore store;
                     auto p = make_stn_params(store, "stn", 3, 4, rng);
                     randomize_stn(p, rng);
                     const Tensor s = store.add("input.s", rand({3, 4, 4}, rng));
                     return check_gradients_in_place([&] { return stn_theta(s, p); }, leaves_of(store),
                                                     options_for(seed));
                   }});
  cases.push_back({"decoder.boundary_residual", [](std::uint64_t seed) {
                     Rng rng = derive_rng(seed, 1);
                     ParameterStore store;
                     auto p = make_stn_params(store, "stn", 2, 3, rng);
                     randomize_stn(p, rng);
                     const Tensor s = store.add("input.s", rand({2, 4, 4}, rng));
                     return check_gradients_in_place([&] { return boundary_residual(s, p).residual; },
                                                     leaves_of(store), options_for(seed));
                   }});
  cases.push_back(op_case(
      "decoder.predict_boundary",
      [](Rng& r) {
        return Inputs{rand({2, 3, 3}, r), rand({2, 5, 5}, r), rand({2, 4, 3, 3}, r), rand({2}, r),
                      rand({1, 2, 1, 1}, r), rand({1}, r)};
      },
      [](const Inputs& x) {
        const auto bp = predict_boundary(x[0], x[1], x[2], x[3], x[4], x[5]);
        return concat({reshape(bp.features, {bp.features.numel()}), reshape(bp.map, {bp.map.numel()})}, 0);
      }));
  cases.push_back(op_case(
      "decoder.refine_mask",
      [](Rng& r) {
        return Inputs{rand({2, 5, 5}, r), rand({2, 3, 3}, r), rand({2, 3, 3}, r), rand({2, 4, 3, 3}, r),
                      rand({2}, r), rand({1, 2, 1, 1}, r), rand({1}, r)};
      },
      [](const Inputs& x) {
        const auto rm = refine_mask(x[0], x[1], x[2], x[3], x[4], x[5], x[6]);
        return concat({reshape(rm.features, {rm.features.numel()}), reshape(rm.map, {rm.map.numel()})}, 0);
      }));
  cases.push_back({"decoder.bem_chain", [](std::uint64_t seed) {
                     Rng rng = derive_rng(seed, 1);
                     TinyDecoder d;
                     build_tiny_decoder(d, rng, true);
                     auto f = [&] {
                       const auto st = decode(d.features, d.params, d.config, 8, 8);
                       return concat({reshape(st.prediction, {64}), reshape(st.boundary_prediction, {64})}, 0);
                     };
                     return check_gradients_in_place(f, leaves_of(d.store), options_for(seed, 3));
                   }});

  // total loss through the decoder
  cases.push_back({"loss.total", [](std::uint64_t seed) {
                     Rng rng = derive_rng(seed, 1);
                     TinyDecoder d;
                     build_tiny_decoder(d, rng, true);
                     std::vector<double> gt(64), edge(64);
                     for (std::size_t i = 0; i < 64; ++i) {
                       gt[i] = static_cast<double>(rng() % 2);
                       edge[i] = static_cast<double>(rng() % 2);
                     }
                     const Tensor gt_mask = Tensor::from({1, 8, 8}, gt);
                     const Tensor gt_edge = Tensor::from({1, 8, 8}, edge);
                     auto f = [&] {
                       const auto st = decode(d.features, d.params, d.config, 8, 8);
                       return total_loss(st, gt_mask, gt_edge, true).total;
                     };
                     return check_gradients_in_place(f, leaves_of(d.store), options_for(seed, 3));
                   }});

  cases.push_back({"fixture.broken_square",
                   [](std::uint64_t seed) {
                     Rng rng = derive_rng(seed, 1);
                     return check_gradients([](const Inputs& x) { return broken_square(x[0]); },
                                            {rand({2, 3}, rng, 0.5, 1.5)}, options_for(seed));
                   },
                   true});
  return cases;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

}  // namespace

const std::vector<GradCase>& gradcheck_cases() {
  static const std::vector<GradCase> cases = build_cases();
  return cases;
}

std::vector<SuiteRow> run_gradcheck_suite(const SuiteOptions& options) {
  std::vector<SuiteRow> rows;
  for (const auto& c : gradcheck_cases()) {
    if (c.fixture && !options.include_fixtures) continue;
    if (!options.filter.empty() && c.name.find(options.filter) == std::string::npos) continue;
    SuiteRow row;
    row.name = c.name;
    for (std::size_t k = 0; k < options.seeds; ++k) {
      const auto r = c.run(options.base_seed + k);
      row.max_rel_error = std::max(row.max_rel_error, r.max_rel_error);
      row.coords_checked += r.coords_checked;
      row.kinks_skipped += r.kinks_skipped;
      ++row.seeds;
    }
    row.passed = row.max_rel_error <= options.tolerance;
    rows.push_back(row);
  }
  if (rows.empty()) throw UnknownFilter("no gradient check matches '" + options.filter + "'");
  return rows;
}

void write_suite_tsv(std::ostream& os, const std::vector<SuiteRow>& rows) {
  os << "check\tseeds\tcoords\tkinks_skipped\tmax_rel_error\tstatus\n";
  for (const auto& r : rows) {
    os << r.name << "\t" << r.seeds << "\t" << r.coords_checked << "\t" << r.kinks_skipped << "\t" << sci(r.max_rel_error) << "\t"
       << (r.passed ? "pass" : "FAIL") << "\n";
  }
}

}  // namespace refseg
