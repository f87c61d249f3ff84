// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Expression tokenization, word embeddings and the bidirectional GRU that
// turns them into per-word contexts and a sentence vector.

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "refseg/params.hpp"
#include "refseg/tensor.hpp"

namespace refseg {

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kDefaultMaxLen = 20;

// Reserved ids PAD=0 and UNK=1; other tokens numbered in first-seen order.
// Serialized one token per line, line k (0-based) holding id k + 2.
class Vocabulary {
 public:
  Vocabulary();

  std::size_t add(std::string_view token);
  std::optional<std::size_t> find(std::string_view token) const;
  const std::string& token(std::size_t id) const;
  std::size_t size() const { return tokens_.size(); }

  void write(std::ostream& os) const;
  static Vocabulary read(std::istream& is);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct TokenSequence {
  std::vector<std::size_t> ids;  // may carry trailing PAD ids
  std::size_t length = 0;        // real tokens, a prefix of ids
  std::size_t unknown = 0;       // tokens mapped to UNK
};

// Lowercases, splits on whitespace, maps unknown words to UNK and truncates
// to max_len tokens. Throws std::invalid_argument for blank text.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len = kDefaultMaxLen);
std::vector<std::string> split_words(std::string_view text);

// Row-vector convention: x is 1 x input, h is 1 x hidden; w_* are
// input x hidden, u_* hidden x hidden, b_* hidden.
struct GruParams {
  Tensor w_z, u_z, b_z;
  Tensor w_r, u_r, b_r;
  Tensor w_h, u_h, b_h;

  std::size_t input_dim() const { return w_z.dim(0); }
  std::size_t hidden_dim() const { return w_z.dim(1); }
  std::vector<Tensor> tensors() const { return {w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h}; }
  static GruParams from_tensors(const std::vector<Tensor>& t);
};

GruParams make_gru_params(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                          std::size_t hidden_dim, Rng& rng);

/// z = sig(x W_z + h U_z + b_z), r = sig(x W_r + h U_r + b_r),
/// c = tanh(x W_h + (r * h) U_h + b_h), h' = (1 - z) * h + z * c
Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& p);

struct TextEncoderParams {
  Tensor embedding;  // vocab x embed_dim
  GruParams forward;
  GruParams backward;
};

TextEncoderParams make_text_encoder_params(ParameterStore& store, std::size_t vocab_size, std::size_t embed_dim,
                                           std::size_t hidden_dim, Rng& rng);

struct LinguisticContext {
  Tensor words;     // T x embed_dim, the embeddings e_t
  Tensor states;    // T x 2*hidden, forward state || backward state per word
  Tensor sentence;  // 2*hidden: last forward state || last backward state
};

// PAD positions past seq.length never enter the recurrence.
LinguisticContext encode(const TokenSequence& seq, const TextEncoderParams& params);

}  // namespace refseg
