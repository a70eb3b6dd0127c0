#include <doctest.h>

#include <random>

#include "guide/error.hpp"
#include "guide/stats.hpp"
#include "oracles.hpp"

using guide::StatSample;

namespace {

std::vector<StatSample> samples(std::vector<double> scores, std::vector<int> labels) {
  std::vector<StatSample> out;
  for (std::size_t i = 0; i < scores.size(); ++i) out.push_back({scores[i], labels[i] == 1});
  return out;
}

}  // namespace

TEST_CASE("roc_auc worked examples") {
  CHECK(guide::roc_auc(samples({0.9, 0.1}, {1, 0})) == 1.0);
  CHECK(guide::roc_auc(samples({0.1, 0.9}, {1, 0})) == 0.0);
  // one tied pair contributes half credit
  const auto tied = samples({0.8, 0.8, 0.3, 0.5}, {1, 0, 0, 1});
  CHECK(oracle::auc_pairs(tied) == 0.625);
  CHECK(guide::roc_auc(tied) == 0.625);
}

TEST_CASE("roc_auc is undefined for a single class") {
  CHECK_THROWS_AS(guide::roc_auc(samples({0.2, 0.4}, {1, 1})), guide::UndefinedStatistic);
  CHECK_THROWS_AS(guide::roc_auc(samples({0.2, 0.4}, {0, 0})), guide::UndefinedStatistic);
  CHECK_THROWS_AS(guide::roc_auc({}), guide::UndefinedStatistic);
}

TEST_CASE("roc_auc matches brute-force pair counting") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> coarse(0, 6);  // forces ties
  std::uniform_int_distribution<std::size_t> len(2, 60);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<StatSample> s(len(rng));
    for (auto& x : s) {
      x.score = coarse(rng) * 0.25;
      x.label = rng() % 2 == 0;
    }
    s[0].label = true;
    s[1].label = false;
    const double auc = guide::roc_auc(s);
    CHECK(auc >= 0.0);
    CHECK(auc <= 1.0);
    CHECK(std::abs(auc - oracle::auc_pairs(s)) < 1e-12);
  }
}

TEST_CASE("pearson_corr") {
  const std::vector<double> x{1, 2, 3};
  CHECK(guide::pearson_corr(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(guide::pearson_corr(x, std::vector<double>{-1, -2, -3}) ==
        doctest::Approx(-1.0).epsilon(1e-15));
  // sqrt(4/7) from the centred sums 24/9, 42/9, 24/9
  const double r = guide::pearson_corr(std::vector<double>{1, 2, 4}, std::vector<double>{1, 3, 3});
  CHECK(std::abs(r - 0.75592894601845445443) < 1e-15);

  CHECK_THROWS_AS(guide::pearson_corr(std::vector<double>{1, 1, 1}, x), guide::UndefinedStatistic);
  CHECK_THROWS_AS(guide::pearson_corr(std::vector<double>{1}, std::vector<double>{2}),
                  guide::Error);
  CHECK_THROWS_AS(guide::pearson_corr(x, std::vector<double>{1, 2}), guide::Error);
}

TEST_CASE("pearson_corr matches the raw-moment formula") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> dist(0.0, 3.0);
  std::uniform_int_distribution<std::size_t> len(2, 50);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = len(rng);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = dist(rng);
      y[i] = 0.3 * x[i] + dist(rng);
    }
    const double r = guide::pearson_corr(x, y);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
    CHECK(std::abs(r - oracle::pearson_moments(x, y)) < 1e-12);
  }
}

TEST_CASE("jaccard_keys") {
  using Set = std::set<std::string>;
  CHECK(guide::jaccard_keys(Set{"title"}, Set{"title"}) == 1.0);
  CHECK(guide::jaccard_keys(Set{"title"}, Set{"genre"}) == 0.0);
  CHECK(guide::jaccard_keys(Set{"title", "genre", "author"}, Set{"title", "author", "date"}) ==
        0.5);
  CHECK(guide::jaccard_keys(Set{}, Set{}) == 1.0);
  CHECK(guide::jaccard_keys(Set{"a"}, Set{}) == 0.0);
}
