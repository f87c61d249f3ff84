// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Full referring-segmentation network: text encoder, fused visual encoder and
// boundary-enhanced decoder sharing one ParameterStore.

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "refseg/decoder.hpp"
#include "refseg/fusion_encoder.hpp"
#include "refseg/params.hpp"
#include "refseg/text_encoder.hpp"

namespace refseg {

// Flat key=value configuration text, keys sorted, one per line. '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& kv);

struct ModelConfig {
  std::size_t vocab_size = 2;
  std::size_t embed_dim = 64;
  std::size_t gru_hidden = 64;  // per direction
  std::size_t max_len = kDefaultMaxLen;
  EncoderConfig encoder;
  DecoderConfig decoder;

  void validate() const;
  // Keys prefixed "model."; unknown keys are left for the caller.
  void apply(const KeyValues& kv);
  void store(KeyValues& kv) const;
};

struct ForwardResult {
  LinguisticContext language;
  EncoderOutput encoder;
  DecoderState decoder;
};

class Network {
 public:
  Network(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  ForwardResult forward(const Tensor& image, const TokenSequence& tokens) const;
  LossBreakdown loss(const ForwardResult& result, const Tensor& gt_mask, const Tensor& gt_boundary) const;

 private:
  ModelConfig config_;
  ParameterStore store_;
  TextEncoderParams text_;
  EncoderParams encoder_;
  DecoderParams decoder_;
};

}  // namespace refseg
