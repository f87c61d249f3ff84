// Copyright 2026 The refseg Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Overall IoU (cumulative intersection over cumulative union), Prec@X and
// IoU bucketed by expression length.

#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "refseg/image_io.hpp"

namespace refseg {

inline const std::vector<double> kPrecThresholds = {0.5, 0.6, 0.7, 0.8, 0.9};

struct IouCounts {
  std::size_t intersection = 0;
  std::size_t union_ = 0;

  // Empty prediction against empty ground truth counts as a perfect match.
  double iou() const { return union_ == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(union_); }
};

IouCounts iou_counts(const BinaryMask& pred, const BinaryMask& gt);

double overall_iou(const std::vector<IouCounts>& counts);
double overall_iou(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts);

/// Fraction of IoUs strictly greater than x. Empty list gives 0.
double prec_at(const std::vector<double>& ious, double x);

// Buckets [edges[k], edges[k+1]) over token counts, keyed by label such as
// "1-2" or "3". Buckets with no samples are omitted.
std::map<std::string, double> bucket_by_length(const std::vector<std::size_t>& lengths,
                                               const std::vector<IouCounts>& counts,
                                               const std::vector<std::size_t>& edges);
std::string bucket_label(std::size_t lo, std::size_t hi_exclusive);

struct EvalReport {
  std::size_t samples = 0;
  double overall_iou = 0.0;
  double mean_iou = 0.0;
  std::map<double, double> prec_at;
  std::map<std::string, double> length_buckets;

  // metric<TAB>value rows under a header.
  void write_tsv(std::ostream& os) const;
  bool operator==(const EvalReport&) const = default;
};

EvalReport make_report(const std::vector<IouCounts>& counts, const std::vector<std::size_t>& lengths,
                       const std::vector<std::size_t>& bucket_edges);

}  // namespace refseg
