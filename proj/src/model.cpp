// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include "refseg/model.hpp"

#include <sstream>
#include <stdexcept>

namespace refseg {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || v.front() == '-') {
    throw std::invalid_argument("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(n);
}

template <std::size_t N>
std::string join(const std::array<std::size_t, N>& values) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

std::vector<std::size_t> split_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
  return out;
}

template <std::size_t N>
std::array<std::size_t, N> to_array(const std::string& key, const std::string& v) {
  auto values = split_sizes(key, v);
  if (values.size() != N) throw std::invalid_argument("config: '" + key + "' expects " + std::to_string(N) + " values");
  std::array<std::size_t, N> out{};
  std::copy(values.begin(), values.end(), out.begin());
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw std::invalid_argument("config: '" + key + "' expects on/off, got '" + v + "'");
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": missing '='");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

void ModelConfig::validate() const {
  if (vocab_size < 2 || embed_dim == 0 || gru_hidden == 0 || max_len == 0) {
    throw std::invalid_argument("model: vocabulary and dimensions must be positive");
  }
  if (decoder.channels == 0 || decoder.stn_hidden == 0) throw std::invalid_argument("model: decoder dims must be positive");
  encoder.validate();
}

void ModelConfig::apply(const KeyValues& kv) {
  for (const auto& [key, v] : kv) {
    if (key == "model.vocab_size") vocab_size = to_size(key, v);
    else if (key == "model.embed_dim") embed_dim = to_size(key, v);
    else if (key == "model.gru_hidden") gru_hidden = to_size(key, v);
    else if (key == "model.max_len") max_len = to_size(key, v);
    else if (key == "model.backbone_channels") encoder.backbone.channels = to_array<kStages>(key, v);
    else if (key == "model.backbone_strides") encoder.backbone.strides = to_array<kStages>(key, v);
    else if (key == "model.fused_channels") encoder.fused_channels = to_size(key, v);
    else if (key == "model.attention_channels") encoder.attention_channels = to_size(key, v);
    else if (key == "model.ppm_bins") encoder.ppm.bins = split_sizes(key, v);
    else if (key == "model.decoder_channels") decoder.channels = to_size(key, v);
    else if (key == "model.stn_hidden") decoder.stn_hidden = to_size(key, v);
    else if (key == "model.variant") encoder.attention = parse_attention_variant(v);
    else if (key == "model.mode") encoder.mode = parse_fusion_mode(v);
    else if (key == "model.bem") decoder.boundary_enhancement = to_bool(key, v);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  encoder.word_dim = embed_dim;
  encoder.sentence_dim = 2 * gru_hidden;
}

void ModelConfig::store(KeyValues& kv) const {
  kv["model.vocab_size"] = std::to_string(vocab_size);
  kv["model.embed_dim"] = std::to_string(embed_dim);
  kv["model.gru_hidden"] = std::to_string(gru_hidden);
  kv["model.max_len"] = std::to_string(max_len);
  kv["model.backbone_channels"] = join(encoder.backbone.channels);
  kv["model.backbone_strides"] = join(encoder.backbone.strides);
  kv["model.fused_channels"] = std::to_string(encoder.fused_channels);
  kv["model.attention_channels"] = std::to_string(encoder.attention_channels);
  std::string bins;
  for (std::size_t i = 0; i < encoder.ppm.bins.size(); ++i) bins += (i ? "," : "") + std::to_string(encoder.ppm.bins[i]);
  kv["model.ppm_bins"] = bins;
  kv["model.decoder_channels"] = std::to_string(decoder.channels);
  kv["model.stn_hidden"] = std::to_string(decoder.stn_hidden);
  kv["model.variant"] = to_string(encoder.attention);
  kv["model.mode"] = to_string(encoder.mode);
  kv["model.bem"] = decoder.boundary_enhancement ? "on" : "off";
}

Network::Network(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.encoder.word_dim = config_.embed_dim;
  config_.encoder.sentence_dim = 2 * config_.gru_hidden;
  config_.validate();
  Rng rng = derive_rng(seed, 0);
  text_ = make_text_encoder_params(store_, config_.vocab_size, config_.embed_dim, config_.gru_hidden, rng);
  encoder_ = make_encoder_params(store_, config_.encoder, rng);
  decoder_ = make_decoder_params(store_, config_.encoder.backbone, config_.decoder, rng);
}

ForwardResult Network::forward(const Tensor& image, const TokenSequence& tokens) const {
  ForwardResult r;
  r.language = encode(tokens, text_);
  r.encoder = efn_forward(image, r.language, encoder_, config_.encoder);
  r.decoder = decode(r.encoder.features, decoder_, config_.decoder, image.dim(1), image.dim(2));
  return r;
}

LossBreakdown Network::loss(const ForwardResult& result, const Tensor& gt_mask, const Tensor& gt_boundary) const {
  return total_loss(result.decoder, gt_mask, gt_boundary, config_.decoder.boundary_enhancement);
}

}  // namespace refseg
