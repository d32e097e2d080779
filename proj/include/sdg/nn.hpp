#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sdg/autograd.hpp"
#include "sdg/random.hpp"

namespace sdg::nn {

struct Init {
  enum class Kind { kNormal, kZeros, kOnes };
  Kind kind = Kind::kZeros;
  double std = 0.0;

  static Init normal(double std) { return {Kind::kNormal, std}; }
  static Init zeros() { return {Kind::kZeros, 0.0}; }
  static Init ones() { return {Kind::kOnes, 1.0}; }
};

// Named, ordered parameter tensors. Handles returned by add() share storage
// with the store, so modules hold them directly.
template <typename T>
class ParameterStore {
 public:
  Var<T> add(const std::string& name, Shape shape, Init init, Rng& rng);
  // Registers an already-built tensor (used when loading checkpoints).
  Var<T> add(const std::string& name, Shape shape, std::vector<T> values);

  bool contains(const std::string& name) const { return index_.contains(name); }
  const Var<T>& get(const std::string& name) const;
  Var<T>& get(const std::string& name);

  std::size_t size() const { return params_.size(); }
  std::size_t num_values() const;
  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return params_; }
  std::vector<std::pair<std::string, Var<T>>>& entries() { return params_; }

  void zero_grad();
  bool all_finite() const;

  // Flat copy of all values / restore from one, in registration order.
  std::vector<T> snapshot() const;
  void restore(std::span<const T> values);

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
struct Linear {
  Var<T> weight;  // (in, out)
  Var<T> bias;    // (out), may be undefined

  static Linear create(ParameterStore<T>& store, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng, double init_std = 0.02, bool with_bias = true);
  Var<T> operator()(const Var<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
  Var<T> gamma;
  Var<T> beta;

  static LayerNorm create(ParameterStore<T>& store, const std::string& name, std::size_t d,
                          Rng& rng);
  Var<T> operator()(const Var<T>& x) const { return layer_norm(x, gamma, beta); }
};

enum class Activation { kGelu, kNone };

struct MlpSpec {
  std::vector<std::size_t> sizes;  // in, hidden..., out
  Activation activation = Activation::kGelu;
};

// Affine-activation chain; the final layer is affine only.
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;
  Activation activation = Activation::kGelu;

  static Mlp create(ParameterStore<T>& store, const std::string& name, const MlpSpec& spec,
                    Rng& rng);
  Var<T> operator()(const Var<T>& x) const;
};

template <typename T>
Var<T> mlp_forward(const Mlp<T>& mlp, const Var<T>& x) {
  return mlp(x);
}

struct AttentionConfig {
  std::size_t dim = 64;
  std::size_t heads = 2;
  std::size_t ffn_dim = 256;
  std::size_t layers = 1;
  double dropout = 0.1;

  void validate() const;
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> wq, wk, wv, wo;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParameterStore<T>& store, const std::string& name,
                                   std::size_t d, std::size_t heads, Rng& rng);
  // Output rows without any admissible key are exactly zero (bias included).
  Var<T> operator()(const Var<T>& queries, const Var<T>& keys_values,
                    const AttentionMask& mask) const;
};

// Pre-norm self-attention block with causal + key-padding mask.
template <typename T>
struct CausalBlock {
  LayerNorm<T> ln_attn, ln_ffn;
  MultiHeadAttention<T> attn;
  Mlp<T> ffn;
  double dropout = 0.0;

  static CausalBlock create(ParameterStore<T>& store, const std::string& name,
                            const AttentionConfig& cfg, Rng& rng);
  // x (B, L, d); key_valid (B, L). rng == nullptr disables dropout.
  Var<T> operator()(const Var<T>& x, std::span<const std::uint8_t> key_valid, Rng* rng) const;
};

// Pre-norm cross-attention block: queries attend over keys_values.
template <typename T>
struct CrossBlock {
  LayerNorm<T> ln_q, ln_kv, ln_ffn;
  MultiHeadAttention<T> attn;
  Mlp<T> ffn;
  double dropout = 0.0;

  static CrossBlock create(ParameterStore<T>& store, const std::string& name,
                           const AttentionConfig& cfg, Rng& rng);
  Var<T> operator()(const Var<T>& queries, const Var<T>& keys_values,
                    std::span<const std::uint8_t> key_valid, Rng* rng) const;
};

template <typename T>
struct CausalTransformer {
  std::vector<CausalBlock<T>> blocks;
  LayerNorm<T> ln_out;

  static CausalTransformer create(ParameterStore<T>& store, const std::string& name,
                                  const AttentionConfig& cfg, Rng& rng);
  Var<T> operator()(const Var<T>& x, std::span<const std::uint8_t> key_valid, Rng* rng) const;
};

template <typename T>
struct CrossTransformer {
  std::vector<CrossBlock<T>> blocks;
  LayerNorm<T> ln_out;

  static CrossTransformer create(ParameterStore<T>& store, const std::string& name,
                                 const AttentionConfig& cfg, Rng& rng);
  Var<T> operator()(const Var<T>& queries, const Var<T>& keys_values,
                    std::span<const std::uint8_t> key_valid, Rng* rng) const;
};

template <typename T>
Var<T> causal_block_forward(const CausalBlock<T>& block, const Var<T>& x,
                            std::span<const std::uint8_t> key_valid, Rng* rng = nullptr) {
  return block(x, key_valid, rng);
}

template <typename T>
Var<T> cross_block_forward(const CrossBlock<T>& block, const Var<T>& queries,
                           const Var<T>& keys_values, std::span<const std::uint8_t> key_valid,
                           Rng* rng = nullptr) {
  return block(queries, keys_values, key_valid, rng);
}

// ids (B, L) into a (num_nodes + 1, d) table; the last row is padding.
template <typename T>
Var<T> embed_lookup(const Var<T>& table, std::span<const std::uint32_t> ids, std::size_t batch,
                    std::size_t length);

// (L, d) row-major; PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(...).
std::vector<double> sinusoidal_pe(std::size_t length, std::size_t dim);
// The same formula evaluated at the scalar position k.
std::vector<double> step_embedding(std::size_t k, std::size_t dim);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares backprop gradients of `f` with five-point central differences on
// a random subset of coordinates (at least `min_coords`, or all of them).
// rel = |a - n| / max(|a|, |n|, abs_floor). The floor keeps gradients that
// are zero in exact arithmetic (e.g. key biases under softmax) from being
// judged on rounding noise alone.
GradCheckResult grad_check(const std::function<Var<double>()>& f, ParameterStore<double>& params,
                           double eps = 1e-4, std::size_t min_coords = 256,
                           std::uint64_t seed = 0, double abs_floor = 1e-6);

}  // namespace sdg::nn
