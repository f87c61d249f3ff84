// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Toy training loop, checkpoints, evaluation and single-image inference.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "refseg/dataset.hpp"
#include "refseg/metrics.hpp"
#include "refseg/model.hpp"

namespace refseg {

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t image_size = 64;
  std::size_t batch_size = 8;
  std::size_t steps = 2000;
  double lr = 0.01;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  std::size_t lr_decay_step = 0;  // 0 disables the step schedule
  double lr_decay_factor = 0.1;
  std::size_t checkpoint_every = 500;
  ModelConfig model;

  // 320 x 320, lr 0.00075, weight decay 5e-4, batch 12, 200k iterations, lr / 10 at 100k.
  static RunConfig paper_preset();

  void validate() const;
  void apply(const KeyValues& kv);  // throws on unknown keys
  KeyValues store() const;
  std::string to_text() const { return format_key_values(store()); }
  static RunConfig from_text(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  double lr_at(std::size_t step) const;
};

// SGD with momentum and L2 weight decay: v = m v + (g + wd w), w -= lr v.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  // Gradients are multiplied by grad_scale before use.
  void step(ParameterStore& params, double lr, double grad_scale = 1.0);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PreparedSample {
  std::string id;
  std::string expression;
  Tensor image;
  Tensor mask;
  Tensor boundary;
  TokenSequence tokens;
  BinaryMask gt;
};

std::vector<PreparedSample> load_split(const std::filesystem::path& data_dir, const std::string& split,
                                       const Vocabulary& vocab, std::size_t max_len);

struct Checkpoint {
  RunConfig config;
  Vocabulary vocab;
  std::unique_ptr<Network> network;
};

// <dir>/model.params, <dir>/run.cfg, <dir>/vocab.txt
void save_checkpoint(const std::filesystem::path& dir, const Network& net, const RunConfig& config,
                     const Vocabulary& vocab);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

struct TrainResult {
  std::vector<double> losses;  // total loss per step, batch mean
  std::filesystem::path checkpoint;
};

// Writes <out>/loss.tsv, <out>/checkpoint (final) and <out>/checkpoint-<step>
// every checkpoint_every steps. A non-finite value aborts with
// <out>/nan_dump.txt describing the last batch.
TrainResult train(const RunConfig& config, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir);

struct Evaluation {
  EvalReport report;
  std::vector<IouCounts> counts;
  std::vector<std::size_t> lengths;
};

Evaluation evaluate(const Network& net, const std::vector<PreparedSample>& samples);
// Every pixel predicted foreground.
Evaluation evaluate_all_foreground(const std::vector<PreparedSample>& samples);

struct Inference {
  Tensor mask_map;      // 1 x H x W
  Tensor boundary_map;  // 1 x H x W, undefined without boundary enhancement
  BinaryMask mask;
  std::size_t unknown_tokens = 0;
};

Inference infer(const Network& net, const Vocabulary& vocab, const RgbImage& image, const std::string& expression);

}  // namespace refseg
