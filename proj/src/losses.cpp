#include "sdg/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace sdg {

std::string to_string(ReconLoss r) { return r == ReconLoss::kCosine ? "cosine" : "mse"; }
std::string to_string(TaskLoss t) { return t == TaskLoss::kBce ? "bce" : "bpr"; }

ReconLoss parse_recon_loss(std::string_view s) {
  if (s == "cosine") return ReconLoss::kCosine;
  if (s == "mse") return ReconLoss::kMse;
  throw std::invalid_argument("unknown reconstruction loss: " + std::string(s));
}

TaskLoss parse_task_loss(std::string_view s) {
  if (s == "bce") return TaskLoss::kBce;
  if (s == "bpr") return TaskLoss::kBpr;
  throw std::invalid_argument("unknown task loss: " + std::string(s));
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kCosEps = 1e-12;

template <typename T>
nn::Node<T>& parent(nn::Node<T>& self, std::size_t i) {
  return *self.parents[i];
}

template <typename T>
nn::Var<T> cosine_loss(const nn::Var<T>& a, const nn::Var<T>& b,
                       std::span<const std::uint8_t> valid) {
  const std::size_t d = a.cols();
  const std::size_t rows = a.rows();
  std::size_t n = 0;
  for (std::size_t r = 0; r < rows; ++r) n += valid[r] ? 1 : 0;
  const auto av = a.value();
  const auto bv = b.value();
  // Per row: dot, |a|, |b|.
  std::vector<double> dots(rows), na(rows), nb(rows);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!valid[r]) continue;
    double dot = 0, sa = 0, sb = 0;
    for (std::size_t c = 0; c < d; ++c) {
      const double x = av[r * d + c], y = bv[r * d + c];
      dot += x * y;
      sa += x * x;
      sb += y * y;
    }
    dots[r] = dot;
    na[r] = std::sqrt(sa);
    nb[r] = std::sqrt(sb);
    const double cos = dot / (na[r] * nb[r] + kCosEps);
    total += (1.0 - cos) * (1.0 - cos);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<std::uint8_t> mask(valid.begin(), valid.end());
  return nn::make_result<T>(
      {static_cast<T>(total * inv_n)}, nn::Shape{1}, {a, b},
      [=, mask = std::move(mask), dots = std::move(dots), na = std::move(na),
       nb = std::move(nb)](nn::Node<T>& self) {
        auto& pa = parent(self, 0);
        auto& pb = parent(self, 1);
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        const double g = self.grad[0];
        for (std::size_t r = 0; r < rows; ++r) {
          if (!mask[r]) continue;
          const double den = na[r] * nb[r] + kCosEps;
          const double cos = dots[r] / den;
          const double dl_dcos = -2.0 * (1.0 - cos) * inv_n * g;
          const double ra = na[r] > 0 ? nb[r] / na[r] : 0.0;
          const double rb = nb[r] > 0 ? na[r] / nb[r] : 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            const double x = pa.value[r * d + c], y = pb.value[r * d + c];
            if (pa.requires_grad)
              pa.grad[r * d + c] +=
                  static_cast<T>(dl_dcos * (y / den - dots[r] * ra * x / (den * den)));
            if (pb.requires_grad)
              pb.grad[r * d + c] +=
                  static_cast<T>(dl_dcos * (x / den - dots[r] * rb * y / (den * den)));
          }
        }
      });
}

template <typename T>
nn::Var<T> mse_loss(const nn::Var<T>& a, const nn::Var<T>& b,
                    std::span<const std::uint8_t> valid) {
  const std::size_t d = a.cols();
  const std::size_t rows = a.rows();
  std::size_t n = 0;
  for (std::size_t r = 0; r < rows; ++r) n += valid[r] ? 1 : 0;
  const auto av = a.value();
  const auto bv = b.value();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!valid[r]) continue;
    for (std::size_t c = 0; c < d; ++c) {
      const double e = static_cast<double>(av[r * d + c]) - bv[r * d + c];
      total += e * e;
    }
  }
  const double inv = 1.0 / static_cast<double>(n * d);
  std::vector<std::uint8_t> mask(valid.begin(), valid.end());
  return nn::make_result<T>(
      {static_cast<T>(total * inv)}, nn::Shape{1}, {a, b},
      [=, mask = std::move(mask)](nn::Node<T>& self) {
        auto& pa = parent(self, 0);
        auto& pb = parent(self, 1);
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        const double g = self.grad[0];
        for (std::size_t r = 0; r < rows; ++r) {
          if (!mask[r]) continue;
          for (std::size_t c = 0; c < d; ++c) {
            const double e =
                2.0 * inv * g * (static_cast<double>(pa.value[r * d + c]) - pb.value[r * d + c]);
            if (pa.requires_grad) pa.grad[r * d + c] += static_cast<T>(e);
            if (pb.requires_grad) pb.grad[r * d + c] -= static_cast<T>(e);
          }
        }
      });
}

// sum_i w_i f(p_i, n_i) with f the BCE or BPR pair term.
template <typename T>
nn::Var<T> weighted_pair_loss(const nn::Var<T>& p, const nn::Var<T>& n,
                              std::vector<double> w, TaskLoss kind) {
  const auto pv = p.value();
  const auto nv = n.value();
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) continue;
    const double f = kind == TaskLoss::kBce ? softplus(-pv[i]) + softplus(nv[i])
                                            : softplus(-(static_cast<double>(pv[i]) - nv[i]));
    total += w[i] * f;
  }
  return nn::make_result<T>({static_cast<T>(total)}, nn::Shape{1}, {p, n},
                            [w = std::move(w), kind](nn::Node<T>& self) {
                              auto& pp = parent(self, 0);
                              auto& pn = parent(self, 1);
                              if (pp.requires_grad) pp.ensure_grad();
                              if (pn.requires_grad) pn.ensure_grad();
                              const double g = self.grad[0];
                              for (std::size_t i = 0; i < w.size(); ++i) {
                                if (w[i] == 0.0) continue;
                                double dp, dn;
                                if (kind == TaskLoss::kBce) {
                                  dp = -sigmoid(-pp.value[i]);
                                  dn = sigmoid(pn.value[i]);
                                } else {
                                  const double s = sigmoid(
                                      -(static_cast<double>(pp.value[i]) - pn.value[i]));
                                  dp = -s;
                                  dn = s;
                                }
                                if (pp.requires_grad) pp.grad[i] += static_cast<T>(g * w[i] * dp);
                                if (pn.requires_grad) pn.grad[i] += static_cast<T>(g * w[i] * dn);
                              }
                            });
}

}  // namespace

template <typename T>
nn::Var<T> diff_loss(const nn::Var<T>& x0_hat, const nn::Var<T>& x0,
                     std::span<const std::uint8_t> valid, ReconLoss kind) {
  if (x0_hat.shape() != x0.shape())
    throw std::invalid_argument("diff_loss: shape mismatch " + nn::shape_string(x0_hat.shape()) +
                                " vs " + nn::shape_string(x0.shape()));
  if (valid.size() != x0.rows()) throw std::invalid_argument("diff_loss: mask size");
  bool any = false;
  for (auto v : valid) any = any || v;
  if (!any) throw std::invalid_argument("diff_loss: no valid positions");
  return kind == ReconLoss::kCosine ? cosine_loss(x0_hat, x0, valid) : mse_loss(x0_hat, x0, valid);
}

template <typename T>
std::pair<nn::Var<T>, nn::Var<T>> task_loss(TaskLoss kind, const nn::Var<T>& scores_pos,
                                            const nn::Var<T>& scores_neg,
                                            std::span<const std::uint8_t> valid) {
  if (scores_pos.shape() != scores_neg.shape() || scores_pos.rank() != 2)
    throw std::invalid_argument("task loss expects matching (B, L) scores");
  const std::size_t B = scores_pos.dim(0);
  const std::size_t L = scores_pos.dim(1);
  if (valid.size() != B * L) throw std::invalid_argument("task loss: mask size");
  if (B == 0) throw std::invalid_argument("task loss: empty batch");
  std::vector<double> w_last(B * L, 0.0), w_inter(B * L, 0.0);
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b) {
    if (!valid[b * L + L - 1])
      throw std::invalid_argument("task loss: final position must be valid");
    w_last[b * L + L - 1] = inv_b;
    std::size_t m = 0;
    for (std::size_t i = 0; i + 1 < L; ++i) m += valid[b * L + i] ? 1 : 0;
    if (m == 0) continue;
    for (std::size_t i = 0; i + 1 < L; ++i)
      if (valid[b * L + i]) w_inter[b * L + i] = inv_b / static_cast<double>(m);
  }
  return {weighted_pair_loss(scores_pos, scores_neg, std::move(w_last), kind),
          weighted_pair_loss(scores_pos, scores_neg, std::move(w_inter), kind)};
}

template <typename T>
std::pair<nn::Var<T>, nn::Var<T>> task_loss_bce(const nn::Var<T>& scores_pos,
                                                const nn::Var<T>& scores_neg,
                                                std::span<const std::uint8_t> valid) {
  return task_loss(TaskLoss::kBce, scores_pos, scores_neg, valid);
}

template <typename T>
std::pair<nn::Var<T>, nn::Var<T>> task_loss_bpr(const nn::Var<T>& scores_pos,
                                                const nn::Var<T>& scores_neg,
                                                std::span<const std::uint8_t> valid) {
  return task_loss(TaskLoss::kBpr, scores_pos, scores_neg, valid);
}

LossBreakdown total_loss(double l_diff, double l_last, double l_inter, double lambda_diff,
                         double lambda_inter) {
  LossBreakdown out;
  out.l_diff = l_diff;
  out.l_last = l_last;
  out.l_inter = l_inter;
  out.l_task = l_last + lambda_inter * l_inter;
  out.l_total = out.l_task + lambda_diff * l_diff;
  return out;
}

template <typename T>
nn::Var<T> total_loss(const nn::Var<T>& l_diff, const nn::Var<T>& l_last,
                      const nn::Var<T>& l_inter, double lambda_diff, double lambda_inter,
                      LossBreakdown* parts) {
  auto task = nn::axpby(T(1), l_last, static_cast<T>(lambda_inter), l_inter);
  nn::Var<T> total = task;
  if (l_diff.defined() && lambda_diff != 0.0)
    total = nn::axpby(T(1), task, static_cast<T>(lambda_diff), l_diff);
  if (parts) {
    *parts = total_loss(l_diff.defined() ? static_cast<double>(l_diff.item()) : 0.0,
                        l_last.item(), l_inter.item(), lambda_diff, lambda_inter);
    parts->l_total = total.item();
  }
  return total;
}

#define SDG_INSTANTIATE(T)                                                                    \
  template nn::Var<T> diff_loss<T>(const nn::Var<T>&, const nn::Var<T>&,                     \
                                   std::span<const std::uint8_t>, ReconLoss);                 \
  template std::pair<nn::Var<T>, nn::Var<T>> task_loss<T>(                                    \
      TaskLoss, const nn::Var<T>&, const nn::Var<T>&, std::span<const std::uint8_t>);         \
  template std::pair<nn::Var<T>, nn::Var<T>> task_loss_bce<T>(                                \
      const nn::Var<T>&, const nn::Var<T>&, std::span<const std::uint8_t>);                   \
  template std::pair<nn::Var<T>, nn::Var<T>> task_loss_bpr<T>(                                \
      const nn::Var<T>&, const nn::Var<T>&, std::span<const std::uint8_t>);                   \
  template nn::Var<T> total_loss<T>(const nn::Var<T>&, const nn::Var<T>&, const nn::Var<T>&,  \
                                    double, double, LossBreakdown*);

SDG_INSTANTIATE(float)
SDG_INSTANTIATE(double)

#undef SDG_INSTANTIATE

}  // namespace sdg
