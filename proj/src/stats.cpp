#include "guide/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "guide/error.hpp"

namespace guide {

double roc_auc(std::span<const StatSample> samples) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (const auto& s : samples) {
    if (!std::isfinite(s.score)) throw Error("roc_auc: non-finite score");
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples[a].score < samples[b].score;
  });

  // Sum of 1-based midranks over positives (Mann-Whitney U).
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && samples[order[j]].score == samples[order[i]].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (samples[order[t]].label) {
        positive_rank_sum += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = samples.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw UndefinedStatistic("roc_auc: undefined without both positive and negative labels");
  }
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

double pearson_corr(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("pearson_corr: length mismatch");
  if (x.size() < 2) throw Error("pearson_corr: need at least two points");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw Error("pearson_corr: non-finite input");
    }
  }
  const auto constant = [](std::span<const double> v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *lo == *hi;
  };
  if (constant(x) || constant(y)) {
    throw UndefinedStatistic("pearson_corr: zero variance");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double jaccard_keys(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& key : a) common += b.count(key);
  const std::size_t united = a.size() + b.size() - common;
  return static_cast<double>(common) / static_cast<double>(united);
}

}  // namespace guide
