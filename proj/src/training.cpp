// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include "refseg/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "refseg/random.hpp"

namespace refseg {
namespace {

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_float(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  return d;
}

std::size_t to_count(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw std::invalid_argument("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(std::stoull(v));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::string step_dir_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "checkpoint-%06zu", step);
  return buf;
}

}  // namespace

RunConfig RunConfig::paper_preset() {
  RunConfig c;
  c.image_size = 320;
  c.batch_size = 12;
  c.steps = 200000;
  c.lr = 0.00075;
  c.weight_decay = 5e-4;
  c.lr_decay_step = 100000;
  c.lr_decay_factor = 0.1;
  c.checkpoint_every = 10000;
  return c;
}

void RunConfig::validate() const {
  if (image_size == 0 || image_size % 8 != 0) throw std::invalid_argument("run: image_size must be a positive multiple of 8");
  if (batch_size == 0) throw std::invalid_argument("run: batch_size must be positive");
  if (checkpoint_every == 0) throw std::invalid_argument("run: checkpoint_every must be positive");
  if (!(lr > 0) || !(weight_decay >= 0) || !(momentum >= 0 && momentum < 1) || !(lr_decay_factor > 0)) {
    throw std::invalid_argument("run: lr must be positive, weight decay non-negative, momentum in [0, 1)");
  }
  model.validate();
}

void RunConfig::apply(const KeyValues& kv) {
  KeyValues model_keys;
  for (const auto& [key, v] : kv) {
    if (key.rfind("model.", 0) == 0) model_keys[key] = v;
    else if (key == "preset") {
      if (v != "paper") throw std::invalid_argument("config: unknown preset '" + v + "'");
      const auto m = model;
      *this = paper_preset();
      model = m;
    }
  }
  for (const auto& [key, v] : kv) {
    if (key.rfind("model.", 0) == 0 || key == "preset") continue;
    if (key == "seed") seed = to_count(key, v);
    else if (key == "image_size") image_size = to_count(key, v);
    else if (key == "batch_size") batch_size = to_count(key, v);
    else if (key == "steps") steps = to_count(key, v);
    else if (key == "lr") lr = to_double(key, v);
    else if (key == "weight_decay") weight_decay = to_double(key, v);
    else if (key == "momentum") momentum = to_double(key, v);
    else if (key == "lr_decay_step") lr_decay_step = to_count(key, v);
    else if (key == "lr_decay_factor") lr_decay_factor = to_double(key, v);
    else if (key == "checkpoint_every") checkpoint_every = to_count(key, v);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  model.apply(model_keys);
}

KeyValues RunConfig::store() const {
  KeyValues kv;
  kv["seed"] = std::to_string(seed);
  kv["image_size"] = std::to_string(image_size);
  kv["batch_size"] = std::to_string(batch_size);
  kv["steps"] = std::to_string(steps);
  kv["lr"] = exact(lr);
  kv["weight_decay"] = exact(weight_decay);
  kv["momentum"] = exact(momentum);
  kv["lr_decay_step"] = std::to_string(lr_decay_step);
  kv["lr_decay_factor"] = exact(lr_decay_factor);
  kv["checkpoint_every"] = std::to_string(checkpoint_every);
  model.store(kv);
  return kv;
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig c;
  c.apply(parse_key_values(text));
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return from_text(read_file(path)); }

double RunConfig::lr_at(std::size_t step) const {
  if (lr_decay_step == 0) return lr;
  return lr * std::pow(lr_decay_factor, static_cast<double>(step / lr_decay_step));
}

void Sgd::step(ParameterStore& params, double lr, double grad_scale) {
  const auto& entries = params.entries();
  if (velocity_.empty()) {
    for (const auto& e : entries) velocity_.emplace_back(e.value.numel(), 0.0);
  }
  if (velocity_.size() != entries.size()) throw std::logic_error("Sgd: parameter set changed");
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor w = entries[k].value;
    auto values = w.mutable_data();
    auto& v = velocity_[k];
    const auto grad = w.has_grad() ? w.grad() : std::span<const double>{};
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = (grad.empty() ? 0.0 : grad[i] * grad_scale) + weight_decay_ * values[i];
      if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in " + entries[k].name);
      v[i] = momentum_ * v[i] + g;
      values[i] -= lr * v[i];
    }
  }
}

std::vector<PreparedSample> load_split(const std::filesystem::path& data_dir, const std::string& split,
                                       const Vocabulary& vocab, std::size_t max_len) {
  std::vector<PreparedSample> out;
  for (const auto& entry : read_manifest(data_dir)) {
    if (entry.split != split) continue;
    auto s = load_sample(data_dir, entry.id);
    PreparedSample p;
    p.id = entry.id;
    p.expression = s.expression;
    p.image = to_tensor(s.image);
    p.mask = to_tensor(s.mask);
    p.boundary = to_tensor(s.boundary);
    p.tokens = tokenize(s.expression, vocab, max_len);
    p.gt = std::move(s.mask);
    out.push_back(std::move(p));
  }
  if (out.empty()) throw std::invalid_argument("split '" + split + "' is empty in " + data_dir.string());
  return out;
}

void save_checkpoint(const std::filesystem::path& dir, const Network& net, const RunConfig& config,
                     const Vocabulary& vocab) {
  std::filesystem::create_directories(dir);
  net.params().save(dir / "model.params");
  write_file(dir / "run.cfg", config.to_text());
  vocab.save(dir / "vocab.txt");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Checkpoint c;
  c.config = RunConfig::load(dir / "run.cfg");
  c.vocab = Vocabulary::load(dir / "vocab.txt");
  if (c.vocab.size() != c.config.model.vocab_size) {
    throw std::runtime_error("checkpoint: vocabulary size does not match the model configuration");
  }
  c.network = std::make_unique<Network>(c.config.model, c.config.seed);
  c.network->params().load_into(dir / "model.params");
  return c;
}

TrainResult train(const RunConfig& base, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir) {
  RunConfig config = base;
  const auto vocab = Vocabulary::load(data_dir / "vocab.txt");
  config.model.vocab_size = vocab.size();
  config.validate();
  const auto samples = load_split(data_dir, "train", vocab, config.model.max_len);
  for (const auto& s : samples) {
    if (s.image.dim(1) != config.image_size || s.image.dim(2) != config.image_size) {
      throw std::invalid_argument("train: sample " + s.id + " does not match image_size " +
                                  std::to_string(config.image_size));
    }
  }

  std::filesystem::create_directories(out_dir);
  Network net(config.model, config.seed);
  Sgd sgd(config.momentum, config.weight_decay);
  std::ofstream log(out_dir / "loss.tsv", std::ios::binary);
  if (!log) throw std::runtime_error("cannot write " + (out_dir / "loss.tsv").string());
  log << "step\tlr\ttotal\tmask\tboundary\tstn\n";

  TrainResult result;
  std::vector<std::size_t> order(samples.size());
  std::size_t cursor = order.size(), epoch = 0;
  std::vector<std::size_t> batch;
  for (std::size_t step = 0; step < config.steps; ++step) {
    batch.clear();
    while (batch.size() < config.batch_size) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng = derive_rng(config.seed, 0x7a11000 + epoch++);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }

    const double lr = config.lr_at(step);
    double total = 0, mask = 0, boundary = 0, stn = 0;
    try {
      net.params().zero_grad();
      for (auto idx : batch) {
        const auto& s = samples[idx];
        const auto fwd = net.forward(s.image, s.tokens);
        const auto loss = net.loss(fwd, s.mask, s.boundary);
        loss.total.backward();
        total += loss.total.item();
        mask += loss.mask;
        boundary += loss.boundary;
        stn += loss.stn;
      }
      if (!std::isfinite(total)) throw NonFiniteError("non-finite loss");
      sgd.step(net.params(), lr, 1.0 / static_cast<double>(batch.size()));
    } catch (const NonFiniteError& e) {
      std::string dump = "step=" + std::to_string(step) + "\nlr=" + exact(lr) + "\nerror=" + e.what() + "\nbatch=";
      for (auto idx : batch) dump += samples[idx].id + " ";
      dump += "\n";
      for (auto idx : batch) dump += "expression." + samples[idx].id + "=" + samples[idx].expression + "\n";
      write_file(out_dir / "nan_dump.txt", dump);
      throw TrainingAborted("training aborted at step " + std::to_string(step) + ": " + e.what() + " (see " +
                            (out_dir / "nan_dump.txt").string() + ")");
    }
    const double n = static_cast<double>(batch.size());
    result.losses.push_back(total / n);
    log << step << "\t" << short_float(lr) << "\t" << short_float(total / n) << "\t" << short_float(mask / n) << "\t"
        << short_float(boundary / n) << "\t" << short_float(stn / n) << "\n";
    log.flush();
    if ((step + 1) % config.checkpoint_every == 0 && step + 1 < config.steps) {
      save_checkpoint(out_dir / step_dir_name(step + 1), net, config, vocab);
    }
  }
  result.checkpoint = out_dir / "checkpoint";
  save_checkpoint(result.checkpoint, net, config, vocab);
  return result;
}

Evaluation evaluate(const Network& net, const std::vector<PreparedSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  NoGradGuard guard;
  Evaluation ev;
  for (const auto& s : samples) {
    const auto fwd = net.forward(s.image, s.tokens);
    ev.counts.push_back(iou_counts(threshold_map(fwd.decoder.prediction), s.gt));
    ev.lengths.push_back(s.tokens.length);
  }
  ev.report = make_report(ev.counts, ev.lengths, kLengthBucketEdges);
  return ev;
}

Evaluation evaluate_all_foreground(const std::vector<PreparedSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  Evaluation ev;
  for (const auto& s : samples) {
    BinaryMask full(s.gt.height, s.gt.width);
    std::fill(full.bits.begin(), full.bits.end(), std::uint8_t{1});
    ev.counts.push_back(iou_counts(full, s.gt));
    ev.lengths.push_back(s.tokens.length);
  }
  ev.report = make_report(ev.counts, ev.lengths, kLengthBucketEdges);
  return ev;
}

Inference infer(const Network& net, const Vocabulary& vocab, const RgbImage& image, const std::string& expression) {
  NoGradGuard guard;
  const auto tokens = tokenize(expression, vocab, net.config().max_len);
  const auto fwd = net.forward(to_tensor(image), tokens);
  Inference out;
  out.mask_map = fwd.decoder.prediction;
  out.boundary_map = fwd.decoder.boundary_prediction;
  out.mask = threshold_map(out.mask_map);
  out.unknown_tokens = tokens.unknown;
  return out;
}

}  // namespace refseg
