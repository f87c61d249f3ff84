// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include "refseg/text_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "refseg/ops.hpp"

namespace refseg {

Vocabulary::Vocabulary() : tokens_{"<pad>", "<unk>"} {}

std::size_t Vocabulary::add(std::string_view token) {
  if (auto id = find(token)) return *id;
  const auto id = tokens_.size();
  tokens_.emplace_back(token);
  index_.emplace(tokens_.back(), id);
  return id;
}

std::optional<std::size_t> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(std::size_t id) const { return tokens_.at(id); }

void Vocabulary::write(std::ostream& os) const {
  for (std::size_t id = 2; id < tokens_.size(); ++id) os << tokens_[id] << '\n';
}

Vocabulary Vocabulary::read(std::istream& is) {
  Vocabulary vocab;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (vocab.find(line)) throw std::runtime_error("vocabulary: duplicate token '" + line + "'");
    vocab.add(line);
  }
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write(os);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return read(is);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  auto words = split_words(text);
  if (words.empty()) throw std::invalid_argument("tokenize: expression has no words");
  if (max_len == 0) throw std::invalid_argument("tokenize: max_len must be positive");
  TokenSequence seq;
  for (const auto& w : words) {
    if (seq.ids.size() == max_len) break;
    auto id = vocab.find(w);
    if (!id) ++seq.unknown;
    seq.ids.push_back(id.value_or(kUnkId));
  }
  seq.length = seq.ids.size();
  return seq;
}

GruParams GruParams::from_tensors(const std::vector<Tensor>& t) {
  if (t.size() != 9) throw std::invalid_argument("GruParams: expected 9 tensors");
  return {t[0], t[1], t[2], t[3], t[4], t[5], t[6], t[7], t[8]};
}

GruParams make_gru_params(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                          std::size_t hidden_dim, Rng& rng) {
  // PyTorch-style bound 1/sqrt(hidden) for every GRU tensor.
  auto make = [&](const char* name, Shape shape) {
    return store.add(prefix + "." + name, init_fan_in(std::move(shape), hidden_dim, rng));
  };
  GruParams p;
  p.w_z = make("w_z", {input_dim, hidden_dim});
  p.u_z = make("u_z", {hidden_dim, hidden_dim});
  p.b_z = make("b_z", {hidden_dim});
  p.w_r = make("w_r", {input_dim, hidden_dim});
  p.u_r = make("u_r", {hidden_dim, hidden_dim});
  p.b_r = make("b_r", {hidden_dim});
  p.w_h = make("w_h", {input_dim, hidden_dim});
  p.u_h = make("u_h", {hidden_dim, hidden_dim});
  p.b_h = make("b_h", {hidden_dim});
  return p;
}

Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& p) {
  if (x.ndim() != 2 || x.dim(0) != 1 || x.dim(1) != p.input_dim()) {
    throw ShapeError("gru_cell: input " + shape_str(x.shape()) + " vs input_dim " + std::to_string(p.input_dim()));
  }
  if (h_prev.ndim() != 2 || h_prev.dim(0) != 1 || h_prev.dim(1) != p.hidden_dim()) {
    throw ShapeError("gru_cell: state " + shape_str(h_prev.shape()) + " vs hidden_dim " +
                     std::to_string(p.hidden_dim()));
  }
  auto gate = [&](const Tensor& w, const Tensor& u, const Tensor& b, const Tensor& h) {
    return add_row_bias(add(matmul(x, w), matmul(h, u)), b);
  };
  const Tensor z = sigmoid(gate(p.w_z, p.u_z, p.b_z, h_prev));
  const Tensor r = sigmoid(gate(p.w_r, p.u_r, p.b_r, h_prev));
  const Tensor candidate = tanh(gate(p.w_h, p.u_h, p.b_h, mul(r, h_prev)));
  return add(mul(affine(z, -1.0, 1.0), h_prev), mul(z, candidate));
}

TextEncoderParams make_text_encoder_params(ParameterStore& store, std::size_t vocab_size, std::size_t embed_dim,
                                           std::size_t hidden_dim, Rng& rng) {
  TextEncoderParams p;
  p.embedding = store.add("text.embedding", init_uniform({vocab_size, embed_dim}, 1.0, rng));
  p.forward = make_gru_params(store, "text.gru_fwd", embed_dim, hidden_dim, rng);
  p.backward = make_gru_params(store, "text.gru_bwd", embed_dim, hidden_dim, rng);
  return p;
}

LinguisticContext encode(const TokenSequence& seq, const TextEncoderParams& params) {
  if (seq.length == 0 || seq.length > seq.ids.size()) {
    throw std::invalid_argument("encode: sequence length must be in [1, ids.size()]");
  }
  const std::vector<std::size_t> ids(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(seq.length));
  const auto T = ids.size();
  const auto hidden = params.forward.hidden_dim();

  LinguisticContext ctx;
  ctx.words = gather_rows(params.embedding, ids);

  std::vector<Tensor> fwd(T), bwd(T);
  Tensor h = Tensor::zeros({1, hidden});
  for (std::size_t t = 0; t < T; ++t) {
    h = gru_cell(slice_rows(ctx.words, t, t + 1), h, params.forward);
    fwd[t] = h;
  }
  h = Tensor::zeros({1, params.backward.hidden_dim()});
  for (std::size_t t = T; t-- > 0;) {
    h = gru_cell(slice_rows(ctx.words, t, t + 1), h, params.backward);
    bwd[t] = h;
  }

  std::vector<Tensor> rows;
  rows.reserve(T);
  for (std::size_t t = 0; t < T; ++t) rows.push_back(concat({fwd[t], bwd[t]}, 1));
  ctx.states = concat(rows, 0);
  const Tensor last = concat({fwd[T - 1], bwd[0]}, 1);
  ctx.sentence = reshape(last, {last.numel()});
  return ctx;
}

}  // namespace refseg
