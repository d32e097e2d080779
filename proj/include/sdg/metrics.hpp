#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

namespace sdg {

// 1 + number of negatives scoring >= the positive (ties count against it).
std::size_t pessimistic_rank(double positive, std::span<const double> negatives);

struct RankingSummary {
  double mrr = 0.0;
  std::map<std::size_t, double> hr;  // K -> HR@K
};

RankingSummary summarize_ranks(std::span<const std::size_t> ranks,
                               std::span<const std::size_t> hr_k);

// Average precision over pooled scores. Tied scores share the precision of
// their tie group (all items scoring >= s count as retrieved at s).
double average_precision(std::span<const double> scores, std::span<const int> labels);

// Mann-Whitney AUC with midranks; ties count one half.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

}  // namespace sdg
