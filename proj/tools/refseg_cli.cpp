// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// refseg command-line driver.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "refseg/bench.hpp"
#include "refseg/dataset.hpp"
#include "refseg/gradcheck_suite.hpp"
#include "refseg/training.hpp"

namespace fs = std::filesystem;
using namespace refseg;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct ModelFlags {
  std::string variant;
  std::string mode;
  std::string bem;

  void add_to(CLI::App* app) {
    app->add_option("--variant", variant, "Co-attention variant")->check(CLI::IsMember({"vcm", "acm", "none"}));
    app->add_option("--mode", mode, "Fusion mode")->check(CLI::IsMember({"efn", "dfn"}));
    app->add_option("--bem", bem, "Boundary enhancement")->check(CLI::IsMember({"on", "off"}));
  }

  void apply(KeyValues& kv) const {
    if (!variant.empty()) kv["model.variant"] = variant;
    if (!mode.empty()) kv["model.mode"] = mode;
    if (!bem.empty()) kv["model.bem"] = bem;
  }
};

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::vector<double> values_of(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Referring image segmentation with encoder fusion and boundary enhancement"};
  app.require_subcommand(1);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Run finite-difference gradient checks");
  SuiteOptions suite;
  std::string gc_out;
  gc->add_option("--filter", suite.filter, "Only checks whose name contains this text");
  gc->add_option("--seeds", suite.seeds, "Seeds per check")->check(CLI::PositiveNumber);
  gc->add_option("--seed", suite.base_seed, "First seed");
  gc->add_flag("--include-fixtures", suite.include_fixtures, "Also run the deliberately broken negative controls");
  gc->add_option("--out", gc_out, "Also write the table to this file");

  // gen-data
  auto* gd = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  std::size_t gd_n = 576, gd_size = 64;
  std::optional<std::size_t> gd_val;
  std::uint64_t gd_seed = 0;
  std::string gd_out;
  gd->add_option("--out", gd_out, "Output directory")->required();
  gd->add_option("-n,--samples", gd_n, "Number of samples")->check(CLI::PositiveNumber);
  gd->add_option("--size", gd_size, "Image edge length (multiple of 8)");
  gd->add_option("--val", gd_val, "Validation samples (default n / 9)");
  gd->add_option("--seed", gd_seed, "Seed");

  // train
  auto* tr = app.add_subcommand("train", "Train on a generated dataset");
  std::string tr_data, tr_out, tr_config;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::size_t> tr_steps;
  ModelFlags tr_model;
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--out", tr_out, "Run directory")->required();
  tr->add_option("--config", tr_config, "key=value run configuration");
  tr->add_option("--seed", tr_seed, "Seed");
  tr->add_option("--steps", tr_steps, "Training steps");
  tr_model.add_to(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_split = "val", ev_out;
  bool ev_baseline = false;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint directory")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--split", ev_split, "Split name");
  ev->add_option("--out", ev_out, "Also write the report to this file");
  ev->add_flag("--all-foreground", ev_baseline, "Score the all-foreground baseline instead of the model");

  // infer
  auto* in = app.add_subcommand("infer", "Segment one image");
  std::string in_ckpt, in_image, in_expr, in_out;
  in->add_option("--checkpoint", in_ckpt, "Checkpoint directory")->required();
  in->add_option("--image", in_image, "P6 image")->required();
  in->add_option("--expr", in_expr, "Referring expression")->required();
  in->add_option("--out", in_out, "Output directory")->required();

  // bench-mem
  auto* bm = app.add_subcommand("bench-mem", "Co-attention memory scaling");
  BenchOptions bench;
  std::string bm_variant = "both", bm_out;
  bool bm_timing = false, bm_no_cap = false;
  bm->add_option("--sizes", bench.sizes, "Spatial edge lengths")->delimiter(',');
  bm->add_option("--channels", bench.channels, "Input channels C");
  bm->add_option("--proj-channels", bench.proj_channels, "Projection channels C1");
  bm->add_option("--variant", bm_variant, "vcm, acm or both")->check(CLI::IsMember({"vcm", "acm", "both"}));
  bm->add_option("--alloc-cap", bench.alloc_cap, "Live element cap per measurement");
  bm->add_flag("--no-cap", bm_no_cap, "Disable the allocation cap");
  bm->add_option("--seed", bench.seed, "Seed");
  bm->add_option("--out", bm_out, "Directory for bench.tsv and growth.tsv");
  bm->add_flag("--timing", bm_timing, "Include wall time in the printed table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gc) {
      std::vector<SuiteRow> rows;
      try {
        rows = run_gradcheck_suite(suite);
      } catch (const UnknownFilter& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
      }
      std::ostringstream table;
      write_suite_tsv(table, rows);
      std::cout << table.str();
      if (!gc_out.empty()) write_text(gc_out, table.str());
      const bool ok = std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.passed; });
      return ok ? 0 : kExitFailure;
    }

    if (*gd) {
      const auto samples = generate_dataset(gd_n, gd_size, gd_size, gd_seed);
      const auto splits = assign_splits(gd_n, gd_val.value_or((gd_n + 4) / 9), gd_seed);
      write_dataset(gd_out, samples, splits, dataset_vocabulary());
      std::cout << "wrote " << gd_n << " samples to " << gd_out << "\n";
      return 0;
    }

    if (*tr) {
      KeyValues kv;
      if (!tr_config.empty()) kv = parse_key_values(read_text(tr_config));
      tr_model.apply(kv);
      if (tr_seed) kv["seed"] = std::to_string(*tr_seed);
      if (tr_steps) kv["steps"] = std::to_string(*tr_steps);
      RunConfig config;
      config.apply(kv);
      const auto result = train(config, tr_data, tr_out);
      if (!result.losses.empty()) {
        std::cout << "step 0 loss " << result.losses.front() << ", final loss " << result.losses.back() << "\n";
      }
      std::cout << "checkpoint " << result.checkpoint.string() << "\n";
      return 0;
    }

    if (*ev) {
      Evaluation result;
      if (ev_baseline) {
        result = evaluate_all_foreground(load_split(ev_data, ev_split, dataset_vocabulary(), kDefaultMaxLen));
      } else {
        const auto ckpt = load_checkpoint(ev_ckpt);
        result = evaluate(*ckpt.network, load_split(ev_data, ev_split, ckpt.vocab, ckpt.config.model.max_len));
      }
      std::ostringstream table;
      result.report.write_tsv(table);
      std::cout << table.str();
      if (!ev_out.empty()) write_text(ev_out, table.str());
      return 0;
    }

    if (*in) {
      const auto ckpt = load_checkpoint(in_ckpt);
      const auto image = read_ppm(in_image);
      const auto result = infer(*ckpt.network, ckpt.vocab, image, in_expr);
      if (result.unknown_tokens > 0) {
        std::cerr << "warning: " << result.unknown_tokens << " unknown token(s) mapped to UNK\n";
      }
      fs::create_directories(in_out);
      write_pgm(fs::path(in_out) / "mask_prob.pgm", image.height, image.width, values_of(result.mask_map));
      write_pbm(fs::path(in_out) / "mask.pbm", result.mask);
      if (result.boundary_map.defined()) {
        write_pgm(fs::path(in_out) / "boundary_prob.pgm", image.height, image.width, values_of(result.boundary_map));
      }
      std::cout << "foreground pixels " << result.mask.count() << " of " << image.height * image.width << "\n";
      return 0;
    }

    if (*bm) {
      if (bm_no_cap) bench.alloc_cap.reset();
      if (bm_variant == "vcm") bench.variants = {AttentionVariant::Vanilla};
      if (bm_variant == "acm") bench.variants = {AttentionVariant::Asymmetric};
      const auto rows = run_bench(bench);
      const auto growth = growth_ratios(rows);
      write_bench_tsv(std::cout, rows, bm_timing);
      std::cout << "\n";
      write_growth_tsv(std::cout, growth);
      if (!bm_out.empty()) {
        std::ostringstream a, b;
        write_bench_tsv(a, rows);
        write_growth_tsv(b, growth);
        write_text(fs::path(bm_out) / "bench.tsv", a.str());
        write_text(fs::path(bm_out) / "growth.tsv", b.str());
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
