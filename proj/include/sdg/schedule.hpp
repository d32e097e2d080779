#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace sdg {

enum class ScheduleKind { kLinear, kCosine, kSqrt, kTruncatedLinear };

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view name);

struct PosteriorCoefficients {
  double c_xk = 0.0;
  double c_x0 = 0.0;
  double var = 0.0;
};

// Diffusion noise tables for steps 1..K. Vectors are 0-based: betas[k-1] is
// beta_k. alpha_bar(0) is 1 by convention.
class NoiseSchedule {
 public:
  NoiseSchedule(ScheduleKind kind, std::size_t steps);

  ScheduleKind kind() const { return kind_; }
  std::size_t steps() const { return betas_.size(); }

  double beta(std::size_t k) const;
  double alpha(std::size_t k) const;
  double alpha_bar(std::size_t k) const;

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  // Mean/variance coefficients of q(x^{k-1} | x^k, x^0).
  PosteriorCoefficients posterior(std::size_t k) const;

 private:
  void check_step(std::size_t k) const;

  ScheduleKind kind_;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

NoiseSchedule make_schedule(ScheduleKind kind, std::size_t steps);
PosteriorCoefficients posterior_coefficients(const NoiseSchedule& s, std::size_t k);

}  // namespace sdg
