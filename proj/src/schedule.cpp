#include "sdg/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sdg {
namespace {

constexpr double kMaxBeta = 0.999;
constexpr double kMinBeta = 1e-8;

// Linear betas on the 1000-step reference scale, stretched to K steps.
std::vector<double> linear_betas(std::size_t steps, double min_beta, double max_beta) {
  const double scale = 1000.0 / static_cast<double>(steps);
  const double start = scale * 1e-4;
  const double end = scale * 0.02;
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[i] = std::clamp(start + frac * (end - start), min_beta, max_beta);
  }
  return betas;
}

template <typename AlphaBarFn>
std::vector<double> betas_from_alpha_bar(std::size_t steps, AlphaBarFn f) {
  std::vector<double> betas(steps);
  const double n = static_cast<double>(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double prev = f(static_cast<double>(i) / n);
    const double next = f(static_cast<double>(i + 1) / n);
    betas[i] = std::clamp(1.0 - next / prev, kMinBeta, kMaxBeta);
  }
  return betas;
}

}  // namespace

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kLinear: return "linear";
    case ScheduleKind::kCosine: return "cosine";
    case ScheduleKind::kSqrt: return "sqrt";
    case ScheduleKind::kTruncatedLinear: return "truncated_linear";
  }
  return "unknown";
}

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "linear") return ScheduleKind::kLinear;
  if (name == "cosine") return ScheduleKind::kCosine;
  if (name == "sqrt") return ScheduleKind::kSqrt;
  if (name == "truncated_linear") return ScheduleKind::kTruncatedLinear;
  throw std::invalid_argument("unknown schedule kind: " + std::string(name));
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, std::size_t steps) : kind_(kind) {
  if (steps == 0) throw std::invalid_argument("schedule needs at least one step");
  switch (kind) {
    case ScheduleKind::kLinear:
      betas_ = linear_betas(steps, 1e-6, kMaxBeta);
      break;
    case ScheduleKind::kTruncatedLinear:
      betas_ = linear_betas(steps, 1e-6, 0.1);
      break;
    case ScheduleKind::kCosine: {
      constexpr double s = 0.008;
      betas_ = betas_from_alpha_bar(steps, [](double x) {
        const double c = std::cos((x + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return c * c;
      });
      break;
    }
    case ScheduleKind::kSqrt:
      betas_ = betas_from_alpha_bar(steps, [](double x) { return 1.0 - std::sqrt(x + 1e-4); });
      break;
    default:
      throw std::invalid_argument("unknown schedule kind");
  }
  alphas_.resize(steps);
  alpha_bars_.resize(steps);
  double running = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    alphas_[i] = 1.0 - betas_[i];
    running *= alphas_[i];
    alpha_bars_[i] = running;
  }
}

void NoiseSchedule::check_step(std::size_t k) const {
  if (k < 1 || k > steps())
    throw std::out_of_range("diffusion step " + std::to_string(k) + " outside 1.." +
                            std::to_string(steps()));
}

double NoiseSchedule::beta(std::size_t k) const {
  check_step(k);
  return betas_[k - 1];
}

double NoiseSchedule::alpha(std::size_t k) const {
  check_step(k);
  return alphas_[k - 1];
}

double NoiseSchedule::alpha_bar(std::size_t k) const {
  if (k == 0) return 1.0;
  check_step(k);
  return alpha_bars_[k - 1];
}

PosteriorCoefficients NoiseSchedule::posterior(std::size_t k) const {
  check_step(k);
  // alpha_bar(0) = 1 makes the first step recover x0 exactly.
  if (k == 1) return {0.0, 1.0, 0.0};
  const double ab = alpha_bars_[k - 1];
  const double ab_prev = alpha_bars_[k - 2];
  const double b = betas_[k - 1];
  const double denom = 1.0 - ab;
  return {std::sqrt(alphas_[k - 1]) * (1.0 - ab_prev) / denom,
          std::sqrt(ab_prev) * b / denom,
          b * (1.0 - ab_prev) / denom};
}

NoiseSchedule make_schedule(ScheduleKind kind, std::size_t steps) {
  return NoiseSchedule(kind, steps);
}

PosteriorCoefficients posterior_coefficients(const NoiseSchedule& s, std::size_t k) {
  return s.posterior(k);
}

}  // namespace sdg
