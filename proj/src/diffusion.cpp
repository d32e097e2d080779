#include "sdg/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace sdg {

namespace {

void check_range(std::size_t k, const NoiseSchedule& s) {
  if (k < 1 || k > s.steps())
    throw std::out_of_range("diffusion step " + std::to_string(k) + " outside 1.." +
                            std::to_string(s.steps()));
}

}  // namespace

template <typename T>
SequenceTensor<T> forward_marginal(const SequenceTensor<T>& x0, std::size_t k,
                                   const SequenceTensor<T>& eps, const NoiseSchedule& s) {
  if (!x0.same_shape(eps) || x0.values.size() != eps.values.size())
    throw std::invalid_argument("forward_marginal: shape mismatch");
  check_range(k, s);
  const double ab = s.alpha_bar(k);
  const T a = static_cast<T>(std::sqrt(ab));
  const T b = static_cast<T>(std::sqrt(1.0 - ab));
  SequenceTensor<T> out = x0;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = a * x0.values[i] + b * eps.values[i];
  return out;
}

template <typename T>
nn::Var<T> forward_marginal(const nn::Var<T>& x0, std::size_t k, const std::vector<T>& eps,
                            const NoiseSchedule& s) {
  if (x0.numel() != eps.size()) throw std::invalid_argument("forward_marginal: shape mismatch");
  check_range(k, s);
  const double ab = s.alpha_bar(k);
  auto e = nn::Var<T>::constant(eps, x0.shape());
  return nn::axpby(static_cast<T>(std::sqrt(ab)), x0, static_cast<T>(std::sqrt(1.0 - ab)), e);
}

template <typename T>
SequenceTensor<T> reverse_step(const SequenceTensor<T>& xk, const SequenceTensor<T>& x0_hat,
                               std::size_t k, const SequenceTensor<T>& noise,
                               const NoiseSchedule& s) {
  if (!xk.same_shape(x0_hat) || !xk.same_shape(noise) ||
      xk.values.size() != x0_hat.values.size() || xk.values.size() != noise.values.size())
    throw std::invalid_argument("reverse_step: shape mismatch");
  check_range(k, s);
  if (k == 1) {
    SequenceTensor<T> out = x0_hat;
    out.valid = xk.valid;
    return out;
  }
  const auto c = s.posterior(k);
  const T cxk = static_cast<T>(c.c_xk);
  const T cx0 = static_cast<T>(c.c_x0);
  const T sd = static_cast<T>(std::sqrt(c.var));
  SequenceTensor<T> out = xk;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = cxk * xk.values[i] + cx0 * x0_hat.values[i] + sd * noise.values[i];
  return out;
}

#define SDG_INSTANTIATE(T)                                                                  \
  template SequenceTensor<T> forward_marginal<T>(const SequenceTensor<T>&, std::size_t,     \
                                                 const SequenceTensor<T>&,                  \
                                                 const NoiseSchedule&);                     \
  template nn::Var<T> forward_marginal<T>(const nn::Var<T>&, std::size_t,                   \
                                          const std::vector<T>&, const NoiseSchedule&);     \
  template SequenceTensor<T> reverse_step<T>(const SequenceTensor<T>&,                      \
                                             const SequenceTensor<T>&, std::size_t,         \
                                             const SequenceTensor<T>&, const NoiseSchedule&);

SDG_INSTANTIATE(float)
SDG_INSTANTIATE(double)

#undef SDG_INSTANTIATE

}  // namespace sdg
