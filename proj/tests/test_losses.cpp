#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sdg/losses.hpp"
#include "sdg/nn.hpp"

using namespace sdg;
using nn::Var;

namespace {

Var<double> seq(std::vector<double> v, std::size_t B, std::size_t L, std::size_t d) {
  return Var<double>::constant(std::move(v), {B, L, d});
}

Var<double> scores(std::vector<double> v, std::size_t B, std::size_t L) {
  return Var<double>::constant(std::move(v), {B, L});
}

double log_sigmoid(double x) { return -std::log1p(std::exp(-x)); }

std::vector<double> randn(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST(DiffLoss, CosineExamples) {
  std::vector<std::uint8_t> one = {1};
  auto a = seq({1, 2, 3}, 1, 1, 3);
  EXPECT_NEAR(diff_loss(a, a, one).item(), 0.0, 1e-15);
  EXPECT_NEAR(diff_loss(seq({1, 0, 0}, 1, 1, 3), seq({0, 5, 0}, 1, 1, 3), one).item(), 1.0, 1e-15);
  EXPECT_NEAR(diff_loss(a, seq({-1, -2, -3}, 1, 1, 3), one).item(), 4.0, 1e-12);
  // cos with a zero vector is 0.
  EXPECT_DOUBLE_EQ(diff_loss(seq({0, 0, 0}, 1, 1, 3), a, one).item(), 1.0);
}

TEST(DiffLoss, AveragesValidRowsOnly) {
  // Rows: identical (0), orthogonal (1), masked garbage.
  auto x = seq({1, 0, 1, 0, 7, 7}, 1, 3, 2);
  auto y = seq({1, 0, 0, 1, -7, 7}, 1, 3, 2);
  std::vector<std::uint8_t> valid = {1, 1, 0};
  EXPECT_NEAR(diff_loss(x, y, valid).item(), 0.5, 1e-15);
  std::vector<std::uint8_t> none = {0, 0, 0};
  EXPECT_THROW(diff_loss(x, y, none), std::invalid_argument);
  EXPECT_THROW(diff_loss(x, seq({1, 2}, 1, 1, 2), valid), std::invalid_argument);
}

TEST(DiffLoss, RangeAndScaleInvariance) {
  const std::size_t B = 3, L = 4, d = 6;
  auto a = randn(B * L * d, 1), b = randn(B * L * d, 2);
  std::vector<std::uint8_t> valid = {1, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 0};
  const double base = diff_loss(seq(a, B, L, d), seq(b, B, L, d), valid).item();
  EXPECT_GE(base, 0.0);
  EXPECT_LE(base, 4.0);
  for (auto [sa, sb] : {std::pair{0.5, 3.0}, {10.0, 0.01}, {2.0, 2.0}}) {
    auto a2 = a, b2 = b;
    for (auto& v : a2) v *= sa;
    for (auto& v : b2) v *= sb;
    EXPECT_NEAR(diff_loss(seq(a2, B, L, d), seq(b2, B, L, d), valid).item(), base, 1e-10);
  }
}

TEST(DiffLoss, MseVariant) {
  auto x = seq({1, 2, 3, 4, 100, 100}, 1, 3, 2);
  auto y = seq({0, 2, 3, 6, 0, 0}, 1, 3, 2);
  std::vector<std::uint8_t> valid = {1, 1, 0};
  EXPECT_NEAR(diff_loss(x, y, valid, ReconLoss::kMse).item(), (1.0 + 0 + 0 + 4) / 4.0, 1e-15);
}

TEST(DiffLoss, CosineMseIdentityOnUnitVectors) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  const std::size_t d = 64;
  std::vector<std::uint8_t> one = {1};
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> a(d), b(d);
    double na = 0, nb = 0;
    for (std::size_t i = 0; i < d; ++i) {
      a[i] = n(rng);
      b[i] = n(rng);
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    for (std::size_t i = 0; i < d; ++i) {
      a[i] /= std::sqrt(na);
      b[i] /= std::sqrt(nb);
    }
    const double sq = d * diff_loss(seq(a, 1, 1, d), seq(b, 1, 1, d), one, ReconLoss::kMse).item();
    const double cos_term = std::sqrt(diff_loss(seq(a, 1, 1, d), seq(b, 1, 1, d), one).item());
    worst = std::max(worst, std::abs(sq - 2 * cos_term));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(DiffLoss, GradientsReachBothInputs) {
  nn::ParameterStore<double> s;
  Rng rng(4);
  auto a = s.add("a", {2, 3, 4}, nn::Init::normal(1.0), rng);
  auto b = s.add("b", {2, 3, 4}, nn::Init::normal(1.0), rng);
  std::vector<std::uint8_t> valid = {1, 0, 1, 1, 1, 0};
  for (auto kind : {ReconLoss::kCosine, ReconLoss::kMse}) {
    auto r = nn::grad_check([&] { return diff_loss(a, b, valid, kind); }, s);
    EXPECT_LT(r.max_rel_error, 1e-7) << to_string(kind) << " " << r.worst_param;
  }
}

TEST(TaskLoss, BceZeroScores) {
  std::vector<double> z(6, 0.0);
  std::vector<std::uint8_t> valid(6, 1);
  auto [last, inter] = task_loss_bce(scores(z, 2, 3), scores(z, 2, 3), valid);
  EXPECT_NEAR(last.item(), 2 * std::log(2.0), 1e-15);
  EXPECT_NEAR(inter.item(), 2 * std::log(2.0), 1e-15);
}

TEST(TaskLoss, Limits) {
  std::vector<std::uint8_t> valid(4, 1);
  auto [l1, i1] = task_loss_bce(scores(std::vector<double>(4, 800.0), 2, 2),
                                scores(std::vector<double>(4, -800.0), 2, 2), valid);
  EXPECT_EQ(l1.item(), 0.0);
  EXPECT_EQ(i1.item(), 0.0);
  auto [l2, i2] = task_loss_bpr(scores(std::vector<double>(4, 400.0), 2, 2),
                                scores(std::vector<double>(4, -400.0), 2, 2), valid);
  EXPECT_EQ(l2.item(), 0.0);
  EXPECT_EQ(i2.item(), 0.0);
  // Large wrong-way scores stay finite.
  auto [l3, i3] = task_loss_bce(scores(std::vector<double>(4, -800.0), 2, 2),
                                scores(std::vector<double>(4, 800.0), 2, 2), valid);
  EXPECT_NEAR(l3.item(), 1600.0, 1e-9);
  EXPECT_TRUE(std::isfinite(i3.item()));
}

TEST(TaskLoss, BceMatchesFormula) {
  const std::size_t B = 2, L = 3;
  auto p = randn(B * L, 5), n = randn(B * L, 6);
  std::vector<std::uint8_t> valid = {0, 1, 1, 1, 1, 1};
  auto [last, inter] = task_loss_bce(scores(p, B, L), scores(n, B, L), valid);
  auto term = [&](std::size_t i) { return -log_sigmoid(p[i]) - log_sigmoid(-n[i]); };
  const double want_last = (term(2) + term(5)) / 2;
  const double want_inter = (term(1) + (term(3) + term(4)) / 2) / 2;
  EXPECT_NEAR(last.item(), want_last, 1e-14);
  EXPECT_NEAR(inter.item(), want_inter, 1e-14);
}

TEST(TaskLoss, BprMatchesFormulaAndSymmetry) {
  const std::size_t B = 2, L = 3;
  auto p = randn(B * L, 7), n = randn(B * L, 8);
  std::vector<std::uint8_t> valid = {1, 1, 1, 0, 0, 1};
  auto [last, inter] = task_loss_bpr(scores(p, B, L), scores(n, B, L), valid);
  auto term = [&](std::size_t i) { return -log_sigmoid(p[i] - n[i]); };
  EXPECT_NEAR(last.item(), (term(2) + term(5)) / 2, 1e-14);
  // Row 1 has no valid intermediate position and adds 0.
  EXPECT_NEAR(inter.item(), (term(0) + term(1)) / 2 / 2, 1e-14);

  // Swapping arguments maps x -> -x: -log s(x) - (-log s(-x)) = -x.
  auto [slast, sinter] = task_loss_bpr(scores(n, B, L), scores(p, B, L), valid);
  const double x2 = p[2] - n[2], x5 = p[5] - n[5];
  EXPECT_NEAR(last.item() - slast.item(), -(x2 + x5) / 2, 1e-13);

  std::vector<double> same = {0.3, 0.3, 0.3, 0.3, 0.3, 0.3};
  auto [el, ei] = task_loss_bpr(scores(same, B, L), scores(same, B, L), valid);
  EXPECT_NEAR(el.item(), std::log(2.0), 1e-15);
}

TEST(TaskLoss, MaskedPositionsAreBitIdentical) {
  const std::size_t B = 3, L = 4;
  auto p = randn(B * L, 9), n = randn(B * L, 10);
  std::vector<std::uint8_t> valid = {0, 0, 1, 1, 0, 1, 1, 1, 1, 1, 1, 1};
  for (auto kind : {TaskLoss::kBce, TaskLoss::kBpr}) {
    auto [l0, i0] = task_loss(kind, scores(p, B, L), scores(n, B, L), valid);
    auto p2 = p, n2 = n;
    std::mt19937_64 rng(11);
    for (std::size_t i = 0; i < B * L; ++i)
      if (!valid[i]) {
        p2[i] = static_cast<double>(rng() % 1000) - 500;
        n2[i] = std::nan("");
      }
    auto [l1, i1] = task_loss(kind, scores(p2, B, L), scores(n2, B, L), valid);
    EXPECT_EQ(l0.item(), l1.item());
    EXPECT_EQ(i0.item(), i1.item());
  }
}

TEST(TaskLoss, FinalPositionMustBeValid) {
  std::vector<std::uint8_t> valid = {1, 0};
  EXPECT_THROW(task_loss_bce(scores({0, 0}, 1, 2), scores({0, 0}, 1, 2), valid),
               std::invalid_argument);
}

TEST(TaskLoss, GradCheck) {
  nn::ParameterStore<double> s;
  Rng rng(12);
  auto p = s.add("p", {3, 4}, nn::Init::normal(2.0), rng);
  auto n = s.add("n", {3, 4}, nn::Init::normal(2.0), rng);
  std::vector<std::uint8_t> valid = {0, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 1};
  for (auto kind : {TaskLoss::kBce, TaskLoss::kBpr}) {
    auto r = nn::grad_check(
        [&] {
          auto [a, b] = task_loss(kind, p, n, valid);
          return total_loss(Var<double>(), a, b, 0.0, 0.7);
        },
        s);
    EXPECT_LT(r.max_rel_error, 1e-8) << to_string(kind);
  }
}

TEST(TotalLoss, Composition) {
  auto a = total_loss(0.5, 0.2, 0.3, 0.0, 1.0);
  EXPECT_DOUBLE_EQ(a.l_total, a.l_task);
  EXPECT_DOUBLE_EQ(a.l_task, 0.5);
  auto b = total_loss(0.5, 0.2, 0.3, 0.4, 0.0);
  EXPECT_DOUBLE_EQ(b.l_task, 0.2);
  EXPECT_DOUBLE_EQ(b.l_total, 0.2 + 0.4 * 0.5);
  EXPECT_DOUBLE_EQ(total_loss(1, 1, 1, 1, 1).l_total, 3.0);

  LossBreakdown parts;
  auto one = Var<double>::constant({1.0}, {1});
  auto v = total_loss(Var<double>::constant({0.25}, {1}), one,
                      Var<double>::constant({2.0}, {1}), 0.2, 0.5, &parts);
  EXPECT_DOUBLE_EQ(v.item(), 1.0 + 0.5 * 2.0 + 0.2 * 0.25);
  EXPECT_DOUBLE_EQ(parts.l_diff, 0.25);
  EXPECT_DOUBLE_EQ(parts.l_task, 2.0);
  EXPECT_DOUBLE_EQ(parts.l_total, v.item());
  auto w = total_loss(Var<double>(), one, one, 0.2, 1.0, &parts);
  EXPECT_DOUBLE_EQ(w.item(), 2.0);
  EXPECT_DOUBLE_EQ(parts.l_diff, 0.0);
}

TEST(LossNames, RoundTrip) {
  for (auto k : {ReconLoss::kCosine, ReconLoss::kMse}) EXPECT_EQ(parse_recon_loss(to_string(k)), k);
  for (auto k : {TaskLoss::kBce, TaskLoss::kBpr}) EXPECT_EQ(parse_task_loss(to_string(k)), k);
  EXPECT_THROW(parse_task_loss("hinge"), std::invalid_argument);
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-16);
  EXPECT_EQ(softplus(-1000.0), 0.0);
  EXPECT_EQ(softplus(1000.0), 1000.0);
}
