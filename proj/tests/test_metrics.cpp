#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "sdg/metrics.hpp"
#include "sdg/train.hpp"

using namespace sdg;
using namespace sdg::testing;

TEST(Ranks, PessimisticTies) {
  std::vector<double> neg = {0.5, 0.2, 0.5, 0.9};
  EXPECT_EQ(pessimistic_rank(0.5, neg), 4u);
  EXPECT_EQ(pessimistic_rank(1.0, neg), 1u);
  EXPECT_EQ(pessimistic_rank(0.0, neg), 5u);
}

TEST(Ranks, ExtremeCases) {
  std::vector<std::size_t> hr_k = {1, 10};
  std::vector<double> best(100, 0.0), worst(100, 1.0);
  best[0] = 1.0;
  worst[0] = 0.0;
  std::vector<double> rows_best, rows_worst;
  for (int e = 0; e < 5; ++e) {
    rows_best.insert(rows_best.end(), best.begin(), best.end());
    rows_worst.insert(rows_worst.end(), worst.begin(), worst.end());
  }
  auto a = report_from_scores(rows_best, 100, hr_k);
  EXPECT_DOUBLE_EQ(a.mrr, 1.0);
  EXPECT_DOUBLE_EQ(a.hr[10], 1.0);
  auto b = report_from_scores(rows_worst, 100, hr_k);
  EXPECT_DOUBLE_EQ(b.mrr, 0.01);
  EXPECT_DOUBLE_EQ(b.hr[10], 0.0);
  EXPECT_THROW(report_from_scores(std::vector<double>(7), 3, hr_k), std::invalid_argument);
}

TEST(Ranks, MatchesFullSortOracle) {
  std::mt19937_64 rng(1);
  std::vector<std::size_t> hr_k = {1, 3, 10, 20};
  double worst = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t E = 200, N = 50;
    auto scores = random_scores(rng, E * N, inst % 2 == 0);
    auto rep = report_from_scores(scores, N, hr_k, true);
    double mrr = 0;
    std::map<std::size_t, double> hr;
    for (std::size_t e = 0; e < E; ++e) {
      std::vector<double> row(scores.begin() + e * N, scores.begin() + (e + 1) * N);
      const auto r = sort_rank(row);
      ASSERT_EQ(rep.ranks[e], r);
      mrr += 1.0 / r;
      for (auto k : hr_k) hr[k] += r <= k ? 1.0 : 0.0;
    }
    worst = std::max(worst, std::abs(rep.mrr - mrr / E));
    for (auto k : hr_k) worst = std::max(worst, std::abs(rep.hr[k] - hr[k] / E));
    EXPECT_LE(rep.hr[1], rep.hr[3]);
    EXPECT_LE(rep.hr[3], rep.hr[10]);
    EXPECT_LE(rep.hr[10], rep.hr[20]);
    // Ranks past 20 contribute at most 1/21 each.
    EXPECT_LE(rep.mrr, rep.hr[20] + (1.0 - rep.hr[20]) / 21.0 + 1e-12);
    std::vector<std::size_t> all_k = {1, N};
    auto full = report_from_scores(scores, N, all_k);
    EXPECT_DOUBLE_EQ(full.hr[N], 1.0);
    EXPECT_LE(full.mrr, full.hr[N]);
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Ranks, SummarizeRejectsZero) {
  std::vector<std::size_t> ranks = {1, 0};
  std::vector<std::size_t> k = {1};
  EXPECT_THROW(summarize_ranks(ranks, k), std::invalid_argument);
  auto s = summarize_ranks(std::vector<std::size_t>{1, 2, 4}, k);
  EXPECT_NEAR(s.mrr, (1 + 0.5 + 0.25) / 3, 1e-15);
  EXPECT_NEAR(s.hr[1], 1.0 / 3, 1e-15);
}

TEST(Pointwise, Examples) {
  std::vector<double> s = {0.9, 0.8, 0.1, 0.2};
  std::vector<int> y = {1, 1, 0, 0};
  EXPECT_DOUBLE_EQ(average_precision(s, y), 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(s, y), 1.0);
  std::vector<double> same(4, 0.3);
  EXPECT_DOUBLE_EQ(roc_auc(same, y), 0.5);
  EXPECT_DOUBLE_EQ(average_precision(same, y), 0.5);
  std::vector<int> one_class = {1, 1, 1, 1};
  EXPECT_THROW(roc_auc(s, one_class), std::invalid_argument);
  EXPECT_THROW(average_precision(s, one_class), std::invalid_argument);
  std::vector<int> bad = {1, 2, 0, 0};
  EXPECT_THROW(roc_auc(s, bad), std::invalid_argument);
}

TEST(Pointwise, MatchesQuadraticOracle) {
  std::mt19937_64 rng(2);
  double worst_ap = 0, worst_auc = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t n = 1000;
    auto s = random_scores(rng, n, inst % 3 == 0);
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng() % 2);
    y[0] = 1;
    y[1] = 0;
    // Positives drawn slightly higher so AP and AUC are not all near chance.
    for (std::size_t i = 0; i < n; ++i)
      if (y[i]) s[i] += 0.5;
    worst_ap = std::max(worst_ap, std::abs(average_precision(s, y) - ap_oracle(s, y)));
    worst_auc = std::max(worst_auc, std::abs(roc_auc(s, y) - auc_oracle(s, y)));
  }
  EXPECT_LT(worst_ap, 1e-10);
  EXPECT_LT(worst_auc, 1e-10);
}
