#include "sdg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sdg::nn {

template <typename T>
Var<T> ParameterStore<T>::add(const std::string& name, Shape shape, Init init, Rng& rng) {
  std::vector<T> values(nn::numel(shape));
  switch (init.kind) {
    case Init::Kind::kNormal: {
      std::normal_distribution<double> dist(0.0, init.std);
      for (auto& v : values) v = static_cast<T>(dist(rng));
      break;
    }
    case Init::Kind::kZeros:
      break;
    case Init::Kind::kOnes:
      std::fill(values.begin(), values.end(), T(1));
      break;
  }
  return add(name, std::move(shape), std::move(values));
}

template <typename T>
Var<T> ParameterStore<T>::add(const std::string& name, Shape shape, std::vector<T> values) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter: " + name);
  auto v = Var<T>::parameter(std::move(values), std::move(shape));
  index_.emplace(name, params_.size());
  params_.emplace_back(name, v);
  return v;
}

template <typename T>
const Var<T>& ParameterStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second].second;
}

template <typename T>
Var<T>& ParameterStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second].second;
}

template <typename T>
std::size_t ParameterStore<T>::num_values() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.numel();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& [_, p] : params_) p.zero_grad();
}

template <typename T>
bool ParameterStore<T>::all_finite() const {
  for (const auto& [_, p] : params_)
    for (auto v : p.value())
      if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
std::vector<T> ParameterStore<T>::snapshot() const {
  std::vector<T> out;
  out.reserve(num_values());
  for (const auto& [_, p] : params_) out.insert(out.end(), p.value().begin(), p.value().end());
  return out;
}

template <typename T>
void ParameterStore<T>::restore(std::span<const T> values) {
  if (values.size() != num_values()) throw std::invalid_argument("snapshot size mismatch");
  std::size_t off = 0;
  for (auto& [_, p] : params_) {
    auto dst = p.mutable_value();
    std::copy_n(values.data() + off, dst.size(), dst.data());
    off += dst.size();
  }
}

template <typename T>
Linear<T> Linear<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t in,
                            std::size_t out, Rng& rng, double init_std, bool with_bias) {
  Linear l;
  l.weight = store.add(name + ".weight", {in, out}, Init::normal(init_std), rng);
  if (with_bias) l.bias = store.add(name + ".bias", {out}, Init::zeros(), rng);
  return l;
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(ParameterStore<T>& store, const std::string& name,
                                  std::size_t d, Rng& rng) {
  LayerNorm ln;
  ln.gamma = store.add(name + ".gamma", {d}, Init::ones(), rng);
  ln.beta = store.add(name + ".beta", {d}, Init::zeros(), rng);
  return ln;
}

template <typename T>
Mlp<T> Mlp<T>::create(ParameterStore<T>& store, const std::string& name, const MlpSpec& spec,
                      Rng& rng) {
  if (spec.sizes.size() < 2) throw std::invalid_argument("MLP needs at least in/out sizes");
  Mlp m;
  m.activation = spec.activation;
  for (std::size_t i = 0; i + 1 < spec.sizes.size(); ++i)
    m.layers.push_back(Linear<T>::create(store, name + ".layer" + std::to_string(i),
                                         spec.sizes[i], spec.sizes[i + 1], rng));
  return m;
}

template <typename T>
Var<T> Mlp<T>::operator()(const Var<T>& x) const {
  Var<T> h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (h.cols() != layers[i].weight.dim(0))
      throw std::invalid_argument("MLP layer " + std::to_string(i) + ": input dim " +
                                  std::to_string(h.cols()) + " != " +
                                  std::to_string(layers[i].weight.dim(0)));
    h = layers[i](h);
    if (i + 1 < layers.size() && activation == Activation::kGelu) h = gelu(h);
  }
  return h;
}

void AttentionConfig::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0)
    throw std::invalid_argument("attention dim must be a positive multiple of heads");
  if (ffn_dim == 0) throw std::invalid_argument("ffn_dim must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
}

template <typename T>
MultiHeadAttention<T> MultiHeadAttention<T>::create(ParameterStore<T>& store,
                                                    const std::string& name, std::size_t d,
                                                    std::size_t heads, Rng& rng) {
  MultiHeadAttention m;
  m.wq = Linear<T>::create(store, name + ".q", d, d, rng);
  m.wk = Linear<T>::create(store, name + ".k", d, d, rng);
  m.wv = Linear<T>::create(store, name + ".v", d, d, rng);
  m.wo = Linear<T>::create(store, name + ".o", d, d, rng);
  m.heads = heads;
  return m;
}

template <typename T>
Var<T> MultiHeadAttention<T>::operator()(const Var<T>& queries, const Var<T>& keys_values,
                                         const AttentionMask& mask) const {
  const auto q = wq(queries);
  const auto k = wk(keys_values);
  const auto v = wv(keys_values);
  auto out = wo(multi_head_attention(q, k, v, heads, mask));
  const auto rows = attended_rows(queries.dim(0), queries.dim(1), keys_values.dim(1), mask);
  if (std::find(rows.begin(), rows.end(), std::uint8_t{0}) != rows.end())
    out = mask_rows(out, rows);
  return out;
}

template <typename T>
CausalBlock<T> CausalBlock<T>::create(ParameterStore<T>& store, const std::string& name,
                                      const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  CausalBlock b;
  b.ln_attn = LayerNorm<T>::create(store, name + ".ln_attn", cfg.dim, rng);
  b.attn = MultiHeadAttention<T>::create(store, name + ".attn", cfg.dim, cfg.heads, rng);
  b.ln_ffn = LayerNorm<T>::create(store, name + ".ln_ffn", cfg.dim, rng);
  b.ffn = Mlp<T>::create(store, name + ".ffn", {{cfg.dim, cfg.ffn_dim, cfg.dim}}, rng);
  b.dropout = cfg.dropout;
  return b;
}

template <typename T>
Var<T> CausalBlock<T>::operator()(const Var<T>& x, std::span<const std::uint8_t> key_valid,
                                  Rng* rng) const {
  if (x.rank() != 3) throw std::invalid_argument("causal block expects (B, L, d)");
  const auto h = ln_attn(x);
  auto a = attn(h, h, AttentionMask{key_valid, true});
  if (rng) a = nn::dropout(a, dropout, *rng);
  const auto x1 = add(x, a);
  auto f = ffn(ln_ffn(x1));
  if (rng) f = nn::dropout(f, dropout, *rng);
  return add(x1, f);
}

template <typename T>
CrossBlock<T> CrossBlock<T>::create(ParameterStore<T>& store, const std::string& name,
                                    const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  CrossBlock b;
  b.ln_q = LayerNorm<T>::create(store, name + ".ln_q", cfg.dim, rng);
  b.ln_kv = LayerNorm<T>::create(store, name + ".ln_kv", cfg.dim, rng);
  b.attn = MultiHeadAttention<T>::create(store, name + ".attn", cfg.dim, cfg.heads, rng);
  b.ln_ffn = LayerNorm<T>::create(store, name + ".ln_ffn", cfg.dim, rng);
  b.ffn = Mlp<T>::create(store, name + ".ffn", {{cfg.dim, cfg.ffn_dim, cfg.dim}}, rng);
  b.dropout = cfg.dropout;
  return b;
}

template <typename T>
Var<T> CrossBlock<T>::operator()(const Var<T>& queries, const Var<T>& keys_values,
                                 std::span<const std::uint8_t> key_valid, Rng* rng) const {
  if (queries.rank() != 3 || keys_values.rank() != 3 || queries.dim(0) != keys_values.dim(0) ||
      queries.dim(2) != keys_values.dim(2))
    throw std::invalid_argument("cross block shape mismatch: " + shape_string(queries.shape()) +
                                " vs " + shape_string(keys_values.shape()));
  auto a = attn(ln_q(queries), ln_kv(keys_values), AttentionMask{key_valid, false});
  if (rng) a = nn::dropout(a, dropout, *rng);
  const auto x1 = add(queries, a);
  auto f = ffn(ln_ffn(x1));
  if (rng) f = nn::dropout(f, dropout, *rng);
  return add(x1, f);
}

template <typename T>
CausalTransformer<T> CausalTransformer<T>::create(ParameterStore<T>& store,
                                                  const std::string& name,
                                                  const AttentionConfig& cfg, Rng& rng) {
  CausalTransformer t;
  for (std::size_t i = 0; i < cfg.layers; ++i)
    t.blocks.push_back(
        CausalBlock<T>::create(store, name + ".block" + std::to_string(i), cfg, rng));
  t.ln_out = LayerNorm<T>::create(store, name + ".ln_out", cfg.dim, rng);
  return t;
}

template <typename T>
Var<T> CausalTransformer<T>::operator()(const Var<T>& x, std::span<const std::uint8_t> key_valid,
                                        Rng* rng) const {
  Var<T> h = x;
  for (const auto& b : blocks) h = b(h, key_valid, rng);
  return ln_out(h);
}

template <typename T>
CrossTransformer<T> CrossTransformer<T>::create(ParameterStore<T>& store,
                                                const std::string& name,
                                                const AttentionConfig& cfg, Rng& rng) {
  CrossTransformer t;
  for (std::size_t i = 0; i < cfg.layers; ++i)
    t.blocks.push_back(CrossBlock<T>::create(store, name + ".block" + std::to_string(i), cfg, rng));
  t.ln_out = LayerNorm<T>::create(store, name + ".ln_out", cfg.dim, rng);
  return t;
}

template <typename T>
Var<T> CrossTransformer<T>::operator()(const Var<T>& queries, const Var<T>& keys_values,
                                       std::span<const std::uint8_t> key_valid, Rng* rng) const {
  Var<T> h = queries;
  for (const auto& b : blocks) h = b(h, keys_values, key_valid, rng);
  return ln_out(h);
}

template <typename T>
Var<T> embed_lookup(const Var<T>& table, std::span<const std::uint32_t> ids, std::size_t batch,
                    std::size_t length) {
  if (ids.size() != batch * length) throw std::invalid_argument("embed_lookup: ids size");
  return gather_rows(table, ids, {batch, length});
}

std::vector<double> sinusoidal_pe(std::size_t length, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("sinusoidal encoding needs even dim");
  std::vector<double> pe(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      pe[pos * dim + 2 * i] = std::sin(angle);
      pe[pos * dim + 2 * i + 1] = std::cos(angle);
    }
  return pe;
}

std::vector<double> step_embedding(std::size_t k, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("step embedding needs even dim");
  std::vector<double> e(dim);
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double angle = static_cast<double>(k) /
                         std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
    e[2 * i] = std::sin(angle);
    e[2 * i + 1] = std::cos(angle);
  }
  return e;
}

GradCheckResult grad_check(const std::function<Var<double>()>& f, ParameterStore<double>& params,
                           double eps, std::size_t min_coords, std::uint64_t seed,
                           double abs_floor) {
  params.zero_grad();
  const Var<double> loss = f();
  if (!std::isfinite(loss.item())) throw std::domain_error("grad_check: non-finite objective");
  loss.backward();

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  auto& entries = params.entries();
  for (std::size_t p = 0; p < entries.size(); ++p)
    for (std::size_t i = 0; i < entries[p].second.numel(); ++i) coords.emplace_back(p, i);
  if (coords.size() > min_coords) {
    Rng rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(min_coords);
  }

  auto eval = [&]() {
    NoGradGuard guard;
    const double v = f().item();
    if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite objective");
    return v;
  };

  GradCheckResult result;
  for (const auto& [p, i] : coords) {
    auto& var = entries[p].second;
    const auto g = var.grad();
    const double analytic = g.empty() ? 0.0 : g[i];
    double& x = var.mutable_value()[i];
    const double x0 = x;
    x = x0 + 2 * eps;
    const double f2 = eval();
    x = x0 + eps;
    const double f1 = eval();
    x = x0 - eps;
    const double fm1 = eval();
    x = x0 - 2 * eps;
    const double fm2 = eval();
    x = x0;
    // Differences first, so equal evaluations give exactly zero.
    const double numeric = (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * eps);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (result.coords_checked == 0 || rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_param = entries[p].first;
      result.worst_index = i;
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
    ++result.coords_checked;
  }
  return result;
}

#define SDG_INSTANTIATE(T)                                                                    \
  template class ParameterStore<T>;                                                          \
  template struct Linear<T>;                                                                 \
  template struct LayerNorm<T>;                                                              \
  template struct Mlp<T>;                                                                    \
  template struct MultiHeadAttention<T>;                                                     \
  template struct CausalBlock<T>;                                                            \
  template struct CrossBlock<T>;                                                             \
  template struct CausalTransformer<T>;                                                      \
  template struct CrossTransformer<T>;                                                       \
  template Var<T> embed_lookup<T>(const Var<T>&, std::span<const std::uint32_t>, std::size_t, \
                                  std::size_t);

SDG_INSTANTIATE(float)
SDG_INSTANTIATE(double)

#undef SDG_INSTANTIATE

}  // namespace sdg::nn
