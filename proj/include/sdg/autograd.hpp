#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// tensors. Every op records a closure that accumulates gradients into its
// parents; Var::backward() replays them in reverse topological order.
// Instantiated for float (training) and double (gradient checks).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sdg/random.hpp"

namespace sdg::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct Node {
  std::vector<T> value;
  std::vector<T> grad;
  Shape shape;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// Graph recording is on by default; NoGradGuard disables it for inference.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(std::vector<T> value, Shape shape);
  static Var zeros(Shape shape);
  // Leaf that accumulates gradients.
  static Var parameter(std::vector<T> value, Shape shape);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }
  // Size of the trailing axis; rows() treats everything before it as a batch.
  std::size_t cols() const { return node_->shape.back(); }
  std::size_t rows() const { return numel() / cols(); }

  std::span<const T> value() const { return node_->value; }
  std::span<T> mutable_value() { return node_->value; }
  // Empty when no gradient has reached this node.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  // Seeds d(self)/d(self) = 1; self must be a scalar.
  void backward() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds an op result. Parents and the backward closure are dropped when no
// parent needs a gradient or recording is disabled.
template <typename T>
Var<T> make_result(std::vector<T> value, Shape shape, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward_fn);

// ---- elementwise -----------------------------------------------------------
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
// sa * a + sb * b
template <typename T> Var<T> axpby(T sa, const Var<T>& a, T sb, const Var<T>& b);
template <typename T> Var<T> gelu(const Var<T>& x);

// x (..., d) + v (d), broadcast over rows.
template <typename T> Var<T> add_row(const Var<T>& x, const Var<T>& v);
// x (B, L, d) + v (B, d), broadcast over the middle axis.
template <typename T> Var<T> add_per_batch(const Var<T>& x, const Var<T>& v);

// ---- linear algebra --------------------------------------------------------
// x (..., in) * w (in, out) [+ b (out)].
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);
template <typename T> Var<T> matmul(const Var<T>& x, const Var<T>& w);

// ---- normalisation / regularisation ---------------------------------------
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));
// Inverted dropout; identity when p == 0.
template <typename T> Var<T> dropout(const Var<T>& x, double p, Rng& rng);

// ---- indexing / shape ------------------------------------------------------
// table (N, d) rows gathered by ids, result shape = out_prefix + {d}.
template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const std::uint32_t> ids, Shape out_prefix);
template <typename T> Var<T> concat_last(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
// Zeroes rows (trailing-axis vectors) whose flag is 0.
template <typename T> Var<T> mask_rows(const Var<T>& x, std::span<const std::uint8_t> keep);
// x (..., N) -> (...), picking column j.
template <typename T> Var<T> select_last(const Var<T>& x, std::size_t j);
// x (B, L, d) -> (B, d) at position `pos`.
template <typename T> Var<T> take_position(const Var<T>& x, std::size_t pos);

// ---- reductions ------------------------------------------------------------
template <typename T> Var<T> sum(const Var<T>& x);

// ---- attention -------------------------------------------------------------
struct AttentionMask {
  // (B, Lk) key validity; empty means every key is valid.
  std::span<const std::uint8_t> key_valid;
  // Query i may only see keys j <= i.
  bool causal = false;
};

// Scaled dot-product attention with `heads` heads over q (B, Lq, d) and
// k, v (B, Lk, d). Query rows with no admissible key produce zeros.
template <typename T>
Var<T> multi_head_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                            std::size_t heads, const AttentionMask& mask);

// Per-query flag: does the query have at least one admissible key.
std::vector<std::uint8_t> attended_rows(std::size_t batch, std::size_t lq, std::size_t lk,
                                        const AttentionMask& mask);

}  // namespace sdg::nn
