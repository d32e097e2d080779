#include "sdg/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace sdg {

std::size_t pessimistic_rank(double positive, std::span<const double> negatives) {
  std::size_t r = 1;
  for (double s : negatives) r += s >= positive ? 1 : 0;
  return r;
}

RankingSummary summarize_ranks(std::span<const std::size_t> ranks,
                               std::span<const std::size_t> hr_k) {
  RankingSummary out;
  for (auto k : hr_k) out.hr[k] = 0.0;
  if (ranks.empty()) return out;
  for (auto r : ranks) {
    if (r == 0) throw std::invalid_argument("ranks are 1-based");
    out.mrr += 1.0 / static_cast<double>(r);
    for (auto& [k, v] : out.hr) v += r <= k ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(ranks.size());
  out.mrr /= n;
  for (auto& [k, v] : out.hr) v /= n;
  return out;
}

namespace {

void check_binary(std::span<const double> scores, std::span<const int> labels,
                  std::size_t* pos, std::size_t* neg) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores/labels size mismatch");
  *pos = 0;
  *neg = 0;
  for (int l : labels) {
    if (l == 1) ++*pos;
    else if (l == 0) ++*neg;
    else throw std::invalid_argument("labels must be 0 or 1");
  }
  if (*pos == 0 || *neg == 0) throw std::invalid_argument("degenerate single-class input");
}

std::vector<std::size_t> order_desc(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  std::size_t P, N;
  check_binary(scores, labels, &P, &N);
  const auto idx = order_desc(scores);
  double ap = 0.0;
  std::size_t seen = 0, seen_pos = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i, group_pos = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) group_pos += labels[idx[j++]];
    seen += j - i;
    seen_pos += group_pos;
    ap += static_cast<double>(group_pos) * static_cast<double>(seen_pos) / static_cast<double>(seen);
    i = j;
  }
  return ap / static_cast<double>(P);
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  std::size_t P, N;
  check_binary(scores, labels, &P, &N);
  auto idx = order_desc(scores);
  std::reverse(idx.begin(), idx.end());  // ascending
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i, group_pos = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) group_pos += labels[idx[j++]];
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += midrank * static_cast<double>(group_pos);
    i = j;
  }
  const double p = static_cast<double>(P), n = static_cast<double>(N);
  return (rank_sum - p * (p + 1) / 2.0) / (p * n);
}

}  // namespace sdg
