#pragma once

#include <set>
#include <span>
#include <string>

namespace guide {

// One scored example with a binary outcome label.
struct StatSample {
  double score = 0.0;
  bool label = false;
};

// Area under the ROC curve: the fraction of (positive, negative) pairs where
// the positive scores higher, ties counting one half. Computed from midranks.
// Throws UndefinedStatistic unless both labels are present.
double roc_auc(std::span<const StatSample> samples);

// Pearson correlation. Throws on length mismatch, fewer than two points, or
// a constant input.
double pearson_corr(std::span<const double> x, std::span<const double> y);

// |a ∩ b| / |a ∪ b|; two empty sets give 1.0.
double jaccard_keys(const std::set<std::string>& a, const std::set<std::string>& b);

}  // namespace guide
