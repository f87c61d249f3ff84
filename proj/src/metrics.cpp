// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0

#include "refseg/metrics.hpp"

#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace refseg {
namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

IouCounts iou_counts(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width) throw std::invalid_argument("iou_counts: shape mismatch");
  IouCounts c;
  for (std::size_t p = 0; p < gt.bits.size(); ++p) {
    const bool a = pred.bits[p] != 0, b = gt.bits[p] != 0;
    c.intersection += a && b;
    c.union_ += a || b;
  }
  return c;
}

double overall_iou(const std::vector<IouCounts>& counts) {
  if (counts.empty()) throw std::invalid_argument("overall_iou: no samples");
  std::size_t i = 0, u = 0;
  for (const auto& c : counts) {
    i += c.intersection;
    u += c.union_;
  }
  return u == 0 ? 1.0 : static_cast<double>(i) / static_cast<double>(u);
}

double overall_iou(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts) {
  if (preds.size() != gts.size()) throw std::invalid_argument("overall_iou: list length mismatch");
  std::vector<IouCounts> counts;
  counts.reserve(preds.size());
  for (std::size_t k = 0; k < preds.size(); ++k) counts.push_back(iou_counts(preds[k], gts[k]));
  return overall_iou(counts);
}

double prec_at(const std::vector<double>& ious, double x) {
  if (ious.empty()) return 0.0;
  std::size_t n = 0;
  for (double v : ious) n += v > x;
  return static_cast<double>(n) / static_cast<double>(ious.size());
}

std::string bucket_label(std::size_t lo, std::size_t hi_exclusive) {
  return hi_exclusive == lo + 1 ? std::to_string(lo) : std::to_string(lo) + "-" + std::to_string(hi_exclusive - 1);
}

std::map<std::string, double> bucket_by_length(const std::vector<std::size_t>& lengths,
                                               const std::vector<IouCounts>& counts,
                                               const std::vector<std::size_t>& edges) {
  if (lengths.size() != counts.size()) throw std::invalid_argument("bucket_by_length: list length mismatch");
  for (std::size_t k = 1; k < edges.size(); ++k) {
    if (edges[k] <= edges[k - 1]) throw std::invalid_argument("bucket_by_length: edges must ascend");
  }
  std::map<std::string, double> out;
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    std::vector<IouCounts> members;
    for (std::size_t k = 0; k < lengths.size(); ++k) {
      if (lengths[k] >= edges[b] && lengths[k] < edges[b + 1]) members.push_back(counts[k]);
    }
    if (!members.empty()) out[bucket_label(edges[b], edges[b + 1])] = overall_iou(members);
  }
  return out;
}

void EvalReport::write_tsv(std::ostream& os) const {
  os << "metric\tvalue\n";
  os << "samples\t" << samples << "\n";
  os << "overall_iou\t" << fixed(overall_iou) << "\n";
  os << "mean_iou\t" << fixed(mean_iou) << "\n";
  for (const auto& [x, v] : prec_at) os << "prec@" << fixed(x).substr(0, 3) << "\t" << fixed(v) << "\n";
  for (const auto& [label, v] : length_buckets) os << "iou_len_" << label << "\t" << fixed(v) << "\n";
}

EvalReport make_report(const std::vector<IouCounts>& counts, const std::vector<std::size_t>& lengths,
                       const std::vector<std::size_t>& bucket_edges) {
  EvalReport r;
  r.samples = counts.size();
  r.overall_iou = overall_iou(counts);
  std::vector<double> ious;
  double total = 0.0;
  for (const auto& c : counts) {
    ious.push_back(c.iou());
    total += ious.back();
  }
  r.mean_iou = total / static_cast<double>(counts.size());
  for (double x : kPrecThresholds) r.prec_at[x] = prec_at(ious, x);
  r.length_buckets = bucket_by_length(lengths, counts, bucket_edges);
  return r;
}

}  // namespace refseg
