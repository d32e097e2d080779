#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include "sdg/autograd.hpp"

namespace sdg {

enum class ReconLoss { kCosine, kMse };
enum class TaskLoss { kBce, kBpr };

std::string to_string(ReconLoss r);
std::string to_string(TaskLoss t);
ReconLoss parse_recon_loss(std::string_view s);
TaskLoss parse_task_loss(std::string_view s);

// Stable log(1 + exp(x)).
double softplus(double x);

// Mean over valid positions of (1 - cos(x0_hat_i, x0_i))^2, or the mean
// squared error over the valid rows for kMse. Inputs are (..., d) with one
// mask entry per row. Throws if no row is valid.
template <typename T>
nn::Var<T> diff_loss(const nn::Var<T>& x0_hat, const nn::Var<T>& x0,
                     std::span<const std::uint8_t> valid, ReconLoss kind = ReconLoss::kCosine);

// Scores are (B, L). l_last averages the final position over the batch;
// l_inter averages, per row, the valid positions before the last one and
// then averages over the batch (rows without such positions add 0).
template <typename T>
std::pair<nn::Var<T>, nn::Var<T>> task_loss_bce(const nn::Var<T>& scores_pos,
                                                const nn::Var<T>& scores_neg,
                                                std::span<const std::uint8_t> valid);
template <typename T>
std::pair<nn::Var<T>, nn::Var<T>> task_loss_bpr(const nn::Var<T>& scores_pos,
                                                const nn::Var<T>& scores_neg,
                                                std::span<const std::uint8_t> valid);
template <typename T>
std::pair<nn::Var<T>, nn::Var<T>> task_loss(TaskLoss kind, const nn::Var<T>& scores_pos,
                                            const nn::Var<T>& scores_neg,
                                            std::span<const std::uint8_t> valid);

struct LossBreakdown {
  double l_diff = 0.0;
  double l_last = 0.0;
  double l_inter = 0.0;
  double l_task = 0.0;
  double l_total = 0.0;
};

LossBreakdown total_loss(double l_diff, double l_last, double l_inter, double lambda_diff,
                         double lambda_inter);

// Differentiable l_last + lambda_inter l_inter + lambda_diff l_diff. `l_diff`
// may be undefined (no diffusion term).
template <typename T>
nn::Var<T> total_loss(const nn::Var<T>& l_diff, const nn::Var<T>& l_last,
                      const nn::Var<T>& l_inter, double lambda_diff, double lambda_inter,
                      LossBreakdown* parts = nullptr);

}  // namespace sdg
