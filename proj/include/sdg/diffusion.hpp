#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sdg/autograd.hpp"
#include "sdg/errors.hpp"
#include "sdg/random.hpp"
#include "sdg/schedule.hpp"

namespace sdg {

// (B, L, d) row-major values with a (B, L) validity mask.
template <typename T>
struct SequenceTensor {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::size_t dim = 0;
  std::vector<T> values;
  std::vector<std::uint8_t> valid;

  SequenceTensor() = default;
  SequenceTensor(std::size_t b, std::size_t l, std::size_t d)
      : batch(b), length(l), dim(d), values(b * l * d, T(0)), valid(b * l, 1) {}

  bool same_shape(const SequenceTensor& o) const {
    return batch == o.batch && length == o.length && dim == o.dim;
  }
  bool all_finite() const {
    for (T v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

template <typename T>
SequenceTensor<T> gaussian_like(std::size_t b, std::size_t l, std::size_t d, Rng& rng) {
  SequenceTensor<T> out(b, l, d);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (auto& v : out.values) v = static_cast<T>(n01(rng));
  return out;
}

// sqrt(abar_k) x0 + sqrt(1 - abar_k) eps.
template <typename T>
SequenceTensor<T> forward_marginal(const SequenceTensor<T>& x0, std::size_t k,
                                   const SequenceTensor<T>& eps, const NoiseSchedule& s);

// Differentiable variant used during training; gradients flow into x0.
template <typename T>
nn::Var<T> forward_marginal(const nn::Var<T>& x0, std::size_t k, const std::vector<T>& eps,
                            const NoiseSchedule& s);

// c_xk xk + c_x0 x0_hat + sqrt(var) noise; at k = 1 this is x0_hat exactly.
template <typename T>
SequenceTensor<T> reverse_step(const SequenceTensor<T>& xk, const SequenceTensor<T>& x0_hat,
                               std::size_t k, const SequenceTensor<T>& noise,
                               const NoiseSchedule& s);

// Ancestral sampling from X^K ~ N(0, I) down to X^0. `denoiser(xk, k, context)`
// must return an x0 estimate of the same shape. `valid` is carried on every
// intermediate tensor.
template <typename T, typename Context, typename Denoiser>
SequenceTensor<T> sample_loop(Denoiser&& denoiser, const Context& context, std::size_t batch,
                              std::size_t length, std::size_t dim,
                              const std::vector<std::uint8_t>& valid, const NoiseSchedule& s,
                              Rng& rng) {
  if (!valid.empty() && valid.size() != batch * length)
    throw std::invalid_argument("sample_loop: mask shape");
  auto x = gaussian_like<T>(batch, length, dim, rng);
  if (!valid.empty()) x.valid = valid;
  SequenceTensor<T> zero(batch, length, dim);
  for (std::size_t k = s.steps(); k >= 1; --k) {
    SequenceTensor<T> x0_hat = denoiser(static_cast<const SequenceTensor<T>&>(x), k, context);
    if (!x0_hat.same_shape(x))
      throw std::invalid_argument("denoiser returned a tensor of the wrong shape at step " +
                                  std::to_string(k));
    if (!x0_hat.all_finite())
      throw NonFiniteError("non-finite denoiser output at step " + std::to_string(k), k);
    if (k > 1) {
      auto noise = gaussian_like<T>(batch, length, dim, rng);
      x = reverse_step(x, x0_hat, k, noise, s);
    } else {
      x = reverse_step(x, x0_hat, k, zero, s);
    }
    if (!x.all_finite())
      throw NonFiniteError("non-finite sample at step " + std::to_string(k), k);
    if (!valid.empty()) x.valid = valid;
  }
  return x;
}

}  // namespace sdg
