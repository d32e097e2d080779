#include "sdg/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace sdg::nn {
namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
}

template <typename T>
Node<T>& parent(Node<T>& self, std::size_t i) {
  return *self.parents[i];
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Var<T> Var<T>::constant(std::vector<T> value, Shape shape) {
  if (value.size() != nn::numel(shape))
    throw std::invalid_argument("constant: value size does not match " + shape_string(shape));
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->shape = std::move(shape);
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::zeros(Shape shape) {
  std::vector<T> v(nn::numel(shape), T(0));
  return constant(std::move(v), std::move(shape));
}

template <typename T>
Var<T> Var<T>::parameter(std::vector<T> value, Shape shape) {
  Var v = constant(std::move(value), std::move(shape));
  v.node_->requires_grad = true;
  return v;
}

template <typename T>
T Var<T>::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on non-scalar " + shape_string(shape()));
  return node_->value[0];
}

template <typename T>
void Var<T>::backward() const {
  if (numel() != 1) throw std::invalid_argument("backward() needs a scalar");
  if (!node_->requires_grad) return;
  // Iterative post-order DFS for a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T>* p = n->parents[i++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad();
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

template <typename T>
Var<T> make_result(std::vector<T> value, Shape shape, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->shape = std::move(shape);
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parents) needs = needs || (p.defined() && p.requires_grad());
  if (needs) {
    node->requires_grad = true;
    for (auto& p : parents) node->parents.push_back(p.ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(node));
}

// Accumulates `g` scaled into a parent's gradient if it wants one.
template <typename T>
static void accumulate(Node<T>& p, std::span<const T> g, T s = T(1)) {
  if (!p.requires_grad) return;
  p.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += s * g[i];
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return axpby(T(1), a, T(1), b);
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return axpby(T(1), a, T(-1), b);
}

template <typename T>
Var<T> axpby(T sa, const Var<T>& a, T sb, const Var<T>& b) {
  require_same_shape(a, b, "axpby");
  std::vector<T> out(a.numel());
  const auto av = a.value();
  const auto bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sa * av[i] + sb * bv[i];
  return make_result<T>(std::move(out), a.shape(), {a, b}, [sa, sb](Node<T>& self) {
    accumulate<T>(parent(self, 0), self.grad, sa);
    accumulate<T>(parent(self, 1), self.grad, sb);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  const auto av = a.value();
  const auto bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result<T>(std::move(out), a.shape(), {a, b}, [](Node<T>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  std::vector<T> out(a.value().begin(), a.value().end());
  for (auto& v : out) v *= s;
  return make_result<T>(std::move(out), a.shape(), {a},
                        [s](Node<T>& self) { accumulate<T>(parent(self, 0), self.grad, s); });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  const auto xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i)
    out[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * T(inv_sqrt2)));
  return make_result<T>(std::move(out), x.shape(), {x}, [](Node<T>& self) {
    auto& px = parent(self, 0);
    px.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T u = px.value[i];
      const T cdf = T(0.5) * (T(1) + std::erf(u * T(inv_sqrt2)));
      const T pdf = T(inv_sqrt_2pi) * std::exp(T(-0.5) * u * u);
      px.grad[i] += self.grad[i] * (cdf + u * pdf);
    }
  });
}

template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& v) {
  const std::size_t d = x.cols();
  if (v.numel() != d) throw std::invalid_argument("add_row: vector size mismatch");
  std::vector<T> out(x.value().begin(), x.value().end());
  const auto vv = v.value();
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += vv[c];
  return make_result<T>(std::move(out), x.shape(), {x, v}, [d](Node<T>& self) {
    accumulate<T>(parent(self, 0), self.grad);
    auto& pv = parent(self, 1);
    if (pv.requires_grad) {
      pv.ensure_grad();
      const std::size_t rows = self.grad.size() / d;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) pv.grad[c] += self.grad[r * d + c];
    }
  });
}

template <typename T>
Var<T> add_per_batch(const Var<T>& x, const Var<T>& v) {
  if (x.rank() != 3 || v.rank() != 2 || v.dim(0) != x.dim(0) || v.dim(1) != x.dim(2))
    throw std::invalid_argument("add_per_batch: expected (B,L,d) + (B,d)");
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
  std::vector<T> out(x.value().begin(), x.value().end());
  const auto vv = v.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t c = 0; c < d; ++c) out[(b * L + l) * d + c] += vv[b * d + c];
  return make_result<T>(std::move(out), x.shape(), {x, v}, [B, L, d](Node<T>& self) {
    accumulate<T>(parent(self, 0), self.grad);
    auto& pv = parent(self, 1);
    if (pv.requires_grad) {
      pv.ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l)
          for (std::size_t c = 0; c < d; ++c) pv.grad[b * d + c] += self.grad[(b * L + l) * d + c];
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (w.rank() != 2 || x.cols() != w.dim(0))
    throw std::invalid_argument("linear: input " + shape_string(x.shape()) + " vs weight " +
                                shape_string(w.shape()));
  const std::size_t rows = x.rows(), in = w.dim(0), outd = w.dim(1);
  if (b.defined() && b.numel() != outd) throw std::invalid_argument("linear: bias size mismatch");
  std::vector<T> out(rows * outd);
  {
    Eigen::Map<const RowMat<T>> X(x.value().data(), rows, in);
    Eigen::Map<const RowMat<T>> W(w.value().data(), in, outd);
    Eigen::Map<RowMat<T>> Y(out.data(), rows, outd);
    Y.noalias() = X * W;
    if (b.defined()) Y.rowwise() += Eigen::Map<const RowVec<T>>(b.value().data(), outd);
  }
  Shape shape = x.shape();
  shape.back() = outd;
  std::vector<Var<T>> parents{x, w};
  const bool has_bias = b.defined();
  if (has_bias) parents.push_back(b);
  return make_result<T>(std::move(out), std::move(shape), std::move(parents),
                        [rows, in, outd, has_bias](Node<T>& self) {
                          Eigen::Map<const RowMat<T>> G(self.grad.data(), rows, outd);
                          auto& px = parent(self, 0);
                          auto& pw = parent(self, 1);
                          Eigen::Map<const RowMat<T>> W(pw.value.data(), in, outd);
                          if (px.requires_grad) {
                            px.ensure_grad();
                            Eigen::Map<RowMat<T>> dX(px.grad.data(), rows, in);
                            dX.noalias() += G * W.transpose();
                          }
                          if (pw.requires_grad) {
                            pw.ensure_grad();
                            Eigen::Map<const RowMat<T>> X(px.value.data(), rows, in);
                            Eigen::Map<RowMat<T>> dW(pw.grad.data(), in, outd);
                            dW.noalias() += X.transpose() * G;
                          }
                          if (has_bias) {
                            auto& pb = parent(self, 2);
                            if (pb.requires_grad) {
                              pb.ensure_grad();
                              // Fixed summation order; Eigen's vectorised column
                              // sum depends on buffer alignment.
                              for (std::size_t r = 0; r < rows; ++r) {
                                const T* g = self.grad.data() + r * outd;
                                for (std::size_t c = 0; c < outd; ++c) pb.grad[c] += g[c];
                              }
                            }
                          }
                        });
}

template <typename T>
Var<T> matmul(const Var<T>& x, const Var<T>& w) {
  return linear(x, w, Var<T>());
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const std::size_t d = x.cols(), rows = x.rows();
  if (gamma.numel() != d || beta.numel() != d)
    throw std::invalid_argument("layer_norm: parameter size mismatch");
  const auto xv = x.value();
  const auto gv = gamma.value();
  const auto bv = beta.value();
  std::vector<T> out(xv.size()), xhat(xv.size()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= T(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= T(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (row[c] - mean) * rstd[r];
      xhat[r * d + c] = h;
      out[r * d + c] = gv[c] * h + bv[c];
    }
  }
  return make_result<T>(
      std::move(out), x.shape(), {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        auto& px = parent(self, 0);
        auto& pg = parent(self, 1);
        auto& pb = parent(self, 2);
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        if (px.requires_grad) px.ensure_grad();
        std::vector<T> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = self.grad.data() + r * d;
          const T* h = xhat.data() + r * d;
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t c = 0; c < d; ++c) {
            if (pg.requires_grad) pg.grad[c] += g[c] * h[c];
            if (pb.requires_grad) pb.grad[c] += g[c];
            dxhat[c] = g[c] * pg.value[c];
            mean_dh += dxhat[c];
            mean_dh_h += dxhat[c] * h[c];
          }
          if (!px.requires_grad) continue;
          mean_dh /= T(d);
          mean_dh_h /= T(d);
          for (std::size_t c = 0; c < d; ++c)
            px.grad[r * d + c] += rstd[r] * (dxhat[c] - mean_dh - h[c] * mean_dh_h);
        }
      });
}

template <typename T>
Var<T> dropout(const Var<T>& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  const T s = T(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? s : T(0);
  std::vector<T> out(x.numel());
  const auto xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return make_result<T>(std::move(out), x.shape(), {x}, [mask = std::move(mask)](Node<T>& self) {
    auto& px = parent(self, 0);
    px.ensure_grad();
    for (std::size_t i = 0; i < mask.size(); ++i) px.grad[i] += self.grad[i] * mask[i];
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const std::uint32_t> ids, Shape out_prefix) {
  if (table.rank() != 2) throw std::invalid_argument("gather_rows: table must be 2-D");
  if (nn::numel(out_prefix) != ids.size())
    throw std::invalid_argument("gather_rows: ids do not fill " + shape_string(out_prefix));
  const std::size_t n = table.dim(0), d = table.dim(1);
  std::vector<std::uint32_t> idv(ids.begin(), ids.end());
  std::vector<T> out(ids.size() * d);
  const auto tv = table.value();
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] >= n)
      throw std::out_of_range("gather_rows: id " + std::to_string(idv[i]) + " >= " +
                              std::to_string(n));
    std::copy_n(tv.data() + idv[i] * d, d, out.data() + i * d);
  }
  Shape shape = std::move(out_prefix);
  shape.push_back(d);
  return make_result<T>(std::move(out), std::move(shape), {table},
                        [d, idv = std::move(idv)](Node<T>& self) {
                          auto& pt = parent(self, 0);
                          pt.ensure_grad();
                          for (std::size_t i = 0; i < idv.size(); ++i) {
                            T* dst = pt.grad.data() + idv[i] * d;
                            const T* src = self.grad.data() + i * d;
                            for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                          }
                        });
}

template <typename T>
Var<T> concat_last(const Var<T>& a, const Var<T>& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("concat_last: row count mismatch");
  const std::size_t rows = a.rows(), da = a.cols(), db = b.cols();
  std::vector<T> out(rows * (da + db));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data() + r * da, da, out.data() + r * (da + db));
    std::copy_n(b.value().data() + r * db, db, out.data() + r * (da + db) + da);
  }
  Shape shape = a.shape();
  shape.back() = da + db;
  return make_result<T>(std::move(out), std::move(shape), {a, b}, [rows, da, db](Node<T>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* g = self.grad.data() + r * (da + db);
      if (pa.requires_grad)
        for (std::size_t c = 0; c < da; ++c) pa.grad[r * da + c] += g[c];
      if (pb.requires_grad)
        for (std::size_t c = 0; c < db; ++c) pb.grad[r * db + c] += g[da + c];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (nn::numel(shape) != x.numel())
    throw std::invalid_argument("reshape: " + shape_string(x.shape()) + " -> " +
                                shape_string(shape));
  std::vector<T> out(x.value().begin(), x.value().end());
  return make_result<T>(std::move(out), std::move(shape), {x},
                        [](Node<T>& self) { accumulate<T>(parent(self, 0), self.grad); });
}

template <typename T>
Var<T> mask_rows(const Var<T>& x, std::span<const std::uint8_t> keep) {
  const std::size_t d = x.cols();
  if (keep.size() != x.rows()) throw std::invalid_argument("mask_rows: flag count mismatch");
  std::vector<std::uint8_t> kv(keep.begin(), keep.end());
  std::vector<T> out(x.value().begin(), x.value().end());
  for (std::size_t r = 0; r < kv.size(); ++r)
    if (!kv[r]) std::fill_n(out.data() + r * d, d, T(0));
  return make_result<T>(std::move(out), x.shape(), {x}, [d, kv = std::move(kv)](Node<T>& self) {
    auto& px = parent(self, 0);
    px.ensure_grad();
    for (std::size_t r = 0; r < kv.size(); ++r)
      if (kv[r])
        for (std::size_t c = 0; c < d; ++c) px.grad[r * d + c] += self.grad[r * d + c];
  });
}

template <typename T>
Var<T> select_last(const Var<T>& x, std::size_t j) {
  const std::size_t n = x.cols(), rows = x.rows();
  if (j >= n) throw std::out_of_range("select_last: column out of range");
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = x.value()[r * n + j];
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  if (shape.empty()) shape.push_back(1);
  return make_result<T>(std::move(out), std::move(shape), {x}, [n, rows, j](Node<T>& self) {
    auto& px = parent(self, 0);
    px.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) px.grad[r * n + j] += self.grad[r];
  });
}

template <typename T>
Var<T> take_position(const Var<T>& x, std::size_t pos) {
  if (x.rank() != 3 || pos >= x.dim(1)) throw std::invalid_argument("take_position: bad input");
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
  std::vector<T> out(B * d);
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(x.value().data() + (b * L + pos) * d, d, out.data() + b * d);
  return make_result<T>(std::move(out), Shape{B, d}, {x}, [B, L, d, pos](Node<T>& self) {
    auto& px = parent(self, 0);
    px.ensure_grad();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < d; ++c) px.grad[(b * L + pos) * d + c] += self.grad[b * d + c];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (auto v : x.value()) s += v;
  return make_result<T>({s}, Shape{1}, {x}, [](Node<T>& self) {
    auto& px = parent(self, 0);
    px.ensure_grad();
    for (auto& g : px.grad) g += self.grad[0];
  });
}

std::vector<std::uint8_t> attended_rows(std::size_t batch, std::size_t lq, std::size_t lk,
                                        const AttentionMask& mask) {
  std::vector<std::uint8_t> out(batch * lq, 0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < lq; ++i) {
      const std::size_t limit = mask.causal ? std::min(i + 1, lk) : lk;
      for (std::size_t j = 0; j < limit; ++j)
        if (mask.key_valid.empty() || mask.key_valid[b * lk + j]) {
          out[b * lq + i] = 1;
          break;
        }
    }
  return out;
}

template <typename T>
Var<T> multi_head_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                            std::size_t heads, const AttentionMask& mask) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
    throw std::invalid_argument("attention: expected rank-3 inputs");
  const std::size_t B = q.dim(0), Lq = q.dim(1), d = q.dim(2), Lk = k.dim(1);
  if (k.dim(0) != B || v.dim(0) != B || k.dim(2) != d || v.dim(2) != d || v.dim(1) != Lk)
    throw std::invalid_argument("attention: shape mismatch " + shape_string(q.shape()) + " " +
                                shape_string(k.shape()) + " " + shape_string(v.shape()));
  if (heads == 0 || d % heads != 0) throw std::invalid_argument("attention: d % heads != 0");
  if (!mask.key_valid.empty() && mask.key_valid.size() != B * Lk)
    throw std::invalid_argument("attention: key mask size mismatch");
  const std::size_t dh = d / heads;
  const T inv_scale = T(1) / std::sqrt(T(dh));

  // allowed[b, i, j]
  std::vector<std::uint8_t> allowed(B * Lq * Lk, 0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < Lq; ++i)
      for (std::size_t j = 0; j < Lk; ++j)
        allowed[(b * Lq + i) * Lk + j] =
            (!mask.causal || j <= i) && (mask.key_valid.empty() || mask.key_valid[b * Lk + j]);

  std::vector<T> probs(B * heads * Lq * Lk, T(0));
  std::vector<T> out(B * Lq * d, T(0));
  const T* qv = q.value().data();
  const T* kv = k.value().data();
  const T* vv = v.value().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < Lq; ++i) {
        T* p = probs.data() + ((b * heads + h) * Lq + i) * Lk;
        const std::uint8_t* ok = allowed.data() + (b * Lq + i) * Lk;
        const T* qi = qv + (b * Lq + i) * d + h * dh;
        T mx = -std::numeric_limits<T>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < Lk; ++j) {
          if (!ok[j]) continue;
          const T* kj = kv + (b * Lk + j) * d + h * dh;
          T s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          p[j] = s * inv_scale;
          mx = std::max(mx, p[j]);
          any = true;
        }
        if (!any) continue;
        T z = 0;
        for (std::size_t j = 0; j < Lk; ++j) {
          if (!ok[j]) continue;
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        T* oi = out.data() + (b * Lq + i) * d + h * dh;
        for (std::size_t j = 0; j < Lk; ++j) {
          if (!ok[j]) continue;
          p[j] /= z;
          const T* vj = vv + (b * Lk + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
        }
      }

  return make_result<T>(
      std::move(out), Shape{B, Lq, d}, {q, k, v},
      [B, Lq, Lk, d, heads, dh, inv_scale, probs = std::move(probs)](Node<T>& self) {
        auto& pq = parent(self, 0);
        auto& pk = parent(self, 1);
        auto& pv = parent(self, 2);
        pq.ensure_grad();
        pk.ensure_grad();
        pv.ensure_grad();
        std::vector<T> dp(Lk);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < Lq; ++i) {
              const T* p = probs.data() + ((b * heads + h) * Lq + i) * Lk;
              const T* go = self.grad.data() + (b * Lq + i) * d + h * dh;
              T dot = 0;
              for (std::size_t j = 0; j < Lk; ++j) {
                dp[j] = 0;
                if (p[j] == T(0)) continue;
                const T* vj = pv.value.data() + (b * Lk + j) * d + h * dh;
                T* dvj = pv.grad.data() + (b * Lk + j) * d + h * dh;
                T s = 0;
                for (std::size_t c = 0; c < dh; ++c) {
                  s += go[c] * vj[c];
                  dvj[c] += p[j] * go[c];
                }
                dp[j] = s;
                dot += p[j] * s;
              }
              const T* qi = pq.value.data() + (b * Lq + i) * d + h * dh;
              T* dqi = pq.grad.data() + (b * Lq + i) * d + h * dh;
              for (std::size_t j = 0; j < Lk; ++j) {
                if (p[j] == T(0)) continue;
                const T ds = p[j] * (dp[j] - dot) * inv_scale;
                const T* kj = pk.value.data() + (b * Lk + j) * d + h * dh;
                T* dkj = pk.grad.data() + (b * Lk + j) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) {
                  dqi[c] += ds * kj[c];
                  dkj[c] += ds * qi[c];
                }
              }
            }
      });
}

#define SDG_INSTANTIATE(T)                                                                    \
  template class Var<T>;                                                                     \
  template Var<T> make_result<T>(std::vector<T>, Shape, std::vector<Var<T>>,                \
                                 std::function<void(Node<T>&)>);                             \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> scale<T>(const Var<T>&, T);                                                \
  template Var<T> axpby<T>(T, const Var<T>&, T, const Var<T>&);                              \
  template Var<T> gelu<T>(const Var<T>&);                                                    \
  template Var<T> add_row<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> add_per_batch<T>(const Var<T>&, const Var<T>&);                            \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                    \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                   \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);             \
  template Var<T> dropout<T>(const Var<T>&, double, Rng&);                                   \
  template Var<T> gather_rows<T>(const Var<T>&, std::span<const std::uint32_t>, Shape);      \
  template Var<T> concat_last<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                          \
  template Var<T> mask_rows<T>(const Var<T>&, std::span<const std::uint8_t>);                \
  template Var<T> select_last<T>(const Var<T>&, std::size_t);                                \
  template Var<T> take_position<T>(const Var<T>&, std::size_t);                              \
  template Var<T> sum<T>(const Var<T>&);                                                     \
  template Var<T> multi_head_attention<T>(const Var<T>&, const Var<T>&, const Var<T>&,       \
                                          std::size_t, const AttentionMask&);

SDG_INSTANTIATE(float)
SDG_INSTANTIATE(double)

#undef SDG_INSTANTIATE

}  // namespace sdg::nn
