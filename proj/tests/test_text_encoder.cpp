// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "refseg/gradcheck.hpp"
#include "refseg/ops.hpp"
#include "refseg/text_encoder.hpp"
#include "test_util.hpp"

namespace refseg {
namespace {

using testing::bit_equal;
using testing::max_abs_diff;
using testing::random_tensor;

Vocabulary small_vocab() {
  Vocabulary v;
  for (const char* w : {"red", "circle", "left", "of", "the"}) v.add(w);
  return v;
}

GruParams zero_gru(std::size_t in, std::size_t hidden) {
  return GruParams::from_tensors({Tensor::zeros({in, hidden}), Tensor::zeros({hidden, hidden}), Tensor::zeros({hidden}),
                                  Tensor::zeros({in, hidden}), Tensor::zeros({hidden, hidden}), Tensor::zeros({hidden}),
                                  Tensor::zeros({in, hidden}), Tensor::zeros({hidden, hidden}),
                                  Tensor::zeros({hidden})});
}

GruParams random_gru(std::size_t in, std::size_t hidden, std::uint64_t seed) {
  ParameterStore store;
  Rng rng = derive_rng(seed, 1);
  return make_gru_params(store, "g", in, hidden, rng);
}

// Scalar-loop GRU step.
std::vector<double> reference_gru(const std::vector<double>& x, const std::vector<double>& h, const GruParams& p) {
  const auto in = p.input_dim(), hid = p.hidden_dim();
  auto affine = [&](const Tensor& w, const Tensor& u, const Tensor& b, const std::vector<double>& hv, std::size_t j) {
    double acc = b[j];
    for (std::size_t i = 0; i < in; ++i) acc += x[i] * w.at(i, j);
    for (std::size_t i = 0; i < hid; ++i) acc += hv[i] * u.at(i, j);
    return acc;
  };
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  std::vector<double> z(hid), r(hid), rh(hid), out(hid);
  for (std::size_t j = 0; j < hid; ++j) {
    z[j] = sig(affine(p.w_z, p.u_z, p.b_z, h, j));
    r[j] = sig(affine(p.w_r, p.u_r, p.b_r, h, j));
  }
  for (std::size_t j = 0; j < hid; ++j) rh[j] = r[j] * h[j];
  for (std::size_t j = 0; j < hid; ++j) {
    const double c = std::tanh(affine(p.w_h, p.u_h, p.b_h, rh, j));
    out[j] = (1.0 - z[j]) * h[j] + z[j] * c;
  }
  return out;
}

TEST(Tokenize, KnownWords) {
  const auto v = small_vocab();
  const auto seq = tokenize("red circle", v);
  EXPECT_EQ(seq.length, 2u);
  EXPECT_EQ(seq.ids[0], *v.find("red"));
  EXPECT_EQ(seq.ids[1], *v.find("circle"));
  EXPECT_EQ(seq.unknown, 0u);
}

TEST(Tokenize, CaseFolds) {
  const auto v = small_vocab();
  EXPECT_EQ(tokenize("RED   circle", v).ids, tokenize("red circle", v).ids);
}

TEST(Tokenize, UnknownMapsToUnk) {
  const auto seq = tokenize("xyzzy circle", small_vocab());
  EXPECT_EQ(seq.ids[0], kUnkId);
  EXPECT_EQ(seq.unknown, 1u);
}

TEST(Tokenize, BlankIsAnError) {
  EXPECT_THROW(tokenize("", small_vocab()), std::invalid_argument);
  EXPECT_THROW(tokenize(" \t\n", small_vocab()), std::invalid_argument);
}

TEST(Tokenize, TruncatesAtMaxLen) {
  std::string text;
  for (int i = 0; i < 30; ++i) text += "red ";
  EXPECT_EQ(tokenize(text, small_vocab()).length, kDefaultMaxLen);
}

TEST(Vocabulary, ReservedIdsAndRoundTrip) {
  auto v = small_vocab();
  EXPECT_EQ(v.token(kPadId), v.token(0));
  EXPECT_EQ(*v.find("red"), 2u);
  EXPECT_EQ(v.add("red"), 2u);
  std::stringstream ss;
  v.write(ss);
  EXPECT_EQ(ss.str().substr(0, 4), "red\n");
  EXPECT_EQ(Vocabulary::read(ss), v);
}

TEST(GruCell, ZeroWeightsHalveState) {
  const auto h = Tensor::from({1, 3}, {0.4, -1.0, 2.0});
  const auto out = gru_cell(Tensor::from({1, 2}, {5.0, -3.0}), h, zero_gru(2, 3));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(out[j], 0.5 * h[j]);
}

TEST(GruCell, ZeroEverythingGivesZero) {
  const auto out = gru_cell(Tensor::zeros({1, 2}), Tensor::zeros({1, 3}), zero_gru(2, 3));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(GruCell, MatchesScalarLoops) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = random_gru(4, 6, seed);
    const auto x = random_tensor({1, 4}, seed + 10);
    const auto h = random_tensor({1, 6}, seed + 20);
    const auto ref = reference_gru({x.data().begin(), x.data().end()}, {h.data().begin(), h.data().end()}, p);
    EXPECT_LE(max_abs_diff(gru_cell(x, h, p).data(), ref), 1e-14);
  }
}

TEST(GruCell, RejectsMismatchedDims) {
  EXPECT_THROW(gru_cell(Tensor::zeros({1, 3}), Tensor::zeros({1, 3}), zero_gru(2, 3)), ShapeError);
}

TEST(GruCell, GradientOverAllParams) {
  const auto p = random_gru(3, 4, 7);
  auto inputs = p.tensors();
  inputs.push_back(random_tensor({1, 3}, 8));
  inputs.push_back(random_tensor({1, 4}, 9));
  const auto r = check_gradients(
      [](const std::vector<Tensor>& in) {
        const auto q = GruParams::from_tensors({in.begin(), in.begin() + 9});
        return sum(gru_cell(in[9], in[10], q));
      },
      inputs);
  EXPECT_LE(r.max_rel_error, 1e-4);
}

struct Encoder {
  TextEncoderParams params;
  explicit Encoder(std::uint64_t seed, std::size_t vocab = 8, std::size_t embed = 4, std::size_t hidden = 6) {
    ParameterStore store;
    Rng rng = derive_rng(seed, 2);
    params = make_text_encoder_params(store, vocab, embed, hidden, rng);
  }
};

TokenSequence seq_of(std::vector<std::size_t> ids) {
  TokenSequence s;
  s.length = ids.size();
  s.ids = std::move(ids);
  return s;
}

TEST(Encode, SingleTokenIsOneStepEachWay) {
  const Encoder enc(3);
  const auto ctx = encode(seq_of({4}), enc.params);
  const auto e = gather_rows(enc.params.embedding, {4});
  const auto zero = Tensor::zeros({1, 6});
  const auto fwd = gru_cell(e, zero, enc.params.forward);
  const auto bwd = gru_cell(e, zero, enc.params.backward);
  ASSERT_EQ(ctx.states.shape(), (Shape{1, 12}));
  for (std::size_t j = 0; j < 6; ++j) {
    EXPECT_EQ(ctx.states[j], fwd[j]);
    EXPECT_EQ(ctx.states[6 + j], bwd[j]);
  }
}

TEST(Encode, ReversalSwapsDirections) {
  const Encoder enc(4);
  auto swapped = enc.params;
  std::swap(swapped.forward, swapped.backward);
  const auto a = encode(seq_of({2, 5, 3}), enc.params);
  const auto b = encode(seq_of({3, 5, 2}), swapped);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_NEAR(a.states.at(t, j), b.states.at(2 - t, 6 + j), 1e-15);
      EXPECT_NEAR(a.states.at(t, 6 + j), b.states.at(2 - t, j), 1e-15);
    }
  }
}

TEST(Encode, SentenceIsForwardLastAndBackwardFirst) {
  const Encoder enc(5);
  const auto ctx = encode(seq_of({2, 3, 4, 5}), enc.params);
  ASSERT_EQ(ctx.sentence.numel(), 12u);
  for (std::size_t j = 0; j < 6; ++j) {
    EXPECT_EQ(ctx.sentence[j], ctx.states.at(3, j));
    EXPECT_EQ(ctx.sentence[6 + j], ctx.states.at(0, 6 + j));
  }
}

TEST(Encode, TrailingPadIsIgnored) {
  const Encoder enc(6);
  auto padded = seq_of({2, 3, 4, kPadId, kPadId});
  padded.length = 3;
  const auto a = encode(seq_of({2, 3, 4}), enc.params);
  const auto b = encode(padded, enc.params);
  EXPECT_TRUE(bit_equal(a.states, b.states));
  EXPECT_TRUE(bit_equal(a.sentence, b.sentence));
}

TEST(Encode, RejectsOutOfRangeIds) { EXPECT_THROW(encode(seq_of({2, 99}), Encoder(7).params), std::exception); }

TEST(Encode, DeterministicInit) {
  const Encoder a(8), b(8), c(9);
  EXPECT_TRUE(bit_equal(a.params.embedding, b.params.embedding));
  EXPECT_FALSE(bit_equal(a.params.embedding, c.params.embedding));
}

TEST(Encode, GradientThroughThreeTokens) {
  const Encoder enc(10, 8, 4, 6);
  auto inputs = enc.params.forward.tensors();
  for (const auto& t : enc.params.backward.tensors()) inputs.push_back(t);
  inputs.push_back(enc.params.embedding);
  GradCheckOptions options;
  options.max_coords_per_input = 12;
  const auto r = check_gradients(
      [](const std::vector<Tensor>& in) {
        TextEncoderParams p;
        p.forward = GruParams::from_tensors({in.begin(), in.begin() + 9});
        p.backward = GruParams::from_tensors({in.begin() + 9, in.begin() + 18});
        p.embedding = in[18];
        const auto ctx = encode(seq_of({2, 6, 3}), p);
        return add(sum(mul(ctx.states, ctx.states)), sum(ctx.sentence));
      },
      inputs, options);
  EXPECT_LE(r.max_rel_error, 1e-4);
}

}  // namespace
}  // namespace refseg
