#include "sdg/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sdg/diffusion.hpp"

namespace sdg {

namespace {
constexpr std::uint64_t kInitStream = 0x1417;

// Content at padded slots must not reach the model, including through the
// residual path of rows whose query is a padded slot.
HistoryBatch canonical_padding(const HistoryBatch& h, NodeId padding_id) {
  HistoryBatch out = h;
  for (std::size_t i = 0; i < out.valid.size(); ++i)
    if (!out.valid[i]) {
      out.nodes[i] = padding_id;
      out.times[i] = 0.0;
    }
  return out;
}
}

std::string to_string(DenoiserKind k) { return k == DenoiserKind::kTransformer ? "transformer" : "mlp"; }

DenoiserKind parse_denoiser_kind(std::string_view s) {
  if (s == "transformer") return DenoiserKind::kTransformer;
  if (s == "mlp") return DenoiserKind::kMlp;
  throw std::invalid_argument("unknown denoiser: " + std::string(s));
}

void SDGConfig::validate() const {
  if (history_length < 2) throw std::invalid_argument("history_length must be at least 2");
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("dim must be even and positive");
  if (diffusion_steps < 1) throw std::invalid_argument("diffusion_steps must be at least 1");
  if (layers < 1) throw std::invalid_argument("layers must be at least 1");
  if (lambda_diff < 0 || lambda_inter < 0) throw std::invalid_argument("loss weights must be >= 0");
  attention().validate();
}

nn::AttentionConfig SDGConfig::attention() const {
  return {dim, heads, resolved_ffn_dim(), layers, dropout};
}

EventBatch slice_events(const EventLog& log, std::size_t begin, std::size_t end) {
  if (begin > end || end > log.size()) throw std::out_of_range("slice_events: bad range");
  EventBatch b;
  for (std::size_t i = begin; i < end; ++i) b.push_back(log.events[i]);
  return b;
}

TargetBatch build_target(const HistoryBatch& history, std::span<const NodeId> dst,
                         std::span<const Timestamp> t) {
  const std::size_t B = history.batch, L = history.length;
  if (dst.size() != B || t.size() != B) throw std::invalid_argument("build_target: batch size");
  TargetBatch out;
  out.batch = B;
  out.length = L;
  out.nodes.resize(B * L);
  out.times.resize(B * L);
  out.valid.resize(B * L);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t o = b * L;
    for (std::size_t i = 0; i + 1 < L; ++i) {
      out.nodes[o + i] = history.nodes[o + i + 1];
      out.times[o + i] = history.times[o + i + 1];
      out.valid[o + i] = history.valid[o + i + 1];
    }
    out.nodes[o + L - 1] = dst[b];
    out.times[o + L - 1] = t[b];
    out.valid[o + L - 1] = 1;
  }
  return out;
}

void restrict_to_last(TargetBatch& target) {
  for (std::size_t b = 0; b < target.batch; ++b)
    for (std::size_t i = 0; i + 1 < target.length; ++i) target.valid[b * target.length + i] = 0;
}

std::vector<NodeId> sample_negative_sequence(const TargetBatch& target,
                                             std::span<const NodeId> pool, NodeId padding_id,
                                             Rng& rng) {
  if (pool.empty()) throw std::invalid_argument("negative pool is empty");
  const bool single = std::all_of(pool.begin(), pool.end(), [&](NodeId v) { return v == pool[0]; });
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<NodeId> out(target.nodes.size(), padding_id);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!target.valid[i]) continue;
    const NodeId pos = target.nodes[i];
    if (single && pool[0] == pos) throw std::invalid_argument("pool exhausted");
    NodeId v;
    do v = pool[pick(rng)];
    while (v == pos);
    out[i] = v;
  }
  return out;
}

template <typename T>
SDGModel<T>::SDGModel(const SDGConfig& cfg, std::size_t num_nodes, std::uint64_t seed)
    : cfg_(cfg), num_nodes_(num_nodes), schedule_(cfg.schedule, cfg.diffusion_steps) {
  cfg_.validate();
  if (cfg_.repeat_time_encoding)
    throw std::logic_error("repeat_time_encoding is an extension hook and is not implemented");
  if (num_nodes == 0) throw std::invalid_argument("model needs at least one node");
  const std::size_t d = cfg_.dim, ffn = cfg_.resolved_ffn_dim();
  const auto att = cfg_.attention();
  Rng rng(derive_seed(seed, kInitStream));

  embedding_ = store_.add("embedding.weight", {num_nodes + 1, d}, nn::Init::normal(0.02), rng);
  auto pad = embedding_.mutable_value().subspan(num_nodes * d, d);
  std::fill(pad.begin(), pad.end(), T(0));

  encoder_ = nn::CausalTransformer<T>::create(store_, "encoder", att, rng);
  step_mlp_ = nn::Mlp<T>::create(store_, "step_mlp", {{d, ffn, d}}, rng);
  context_ = nn::CausalTransformer<T>::create(store_, "context", att, rng);
  if (cfg_.denoiser == DenoiserKind::kTransformer)
    cross_ = nn::CrossTransformer<T>::create(store_, "cross", att, rng);
  else
    mlp_denoiser_ = nn::Mlp<T>::create(store_, "mlp_denoiser", {{2 * d, ffn, d}}, rng);
  delta_time_ = nn::Linear<T>::create(store_, "delta_time", 1, d, rng);
  scorer_ = nn::Mlp<T>::create(store_, "scorer", {{2 * d, d, 1}}, rng);

  const auto pe = nn::sinusoidal_pe(cfg_.history_length, d);
  pe_.assign(pe.begin(), pe.end());
}

template <typename T>
nn::Var<T> SDGModel<T>::encode_history(const HistoryBatch& history, Rng* dropout_rng) const {
  const std::size_t B = history.batch, L = history.length, d = cfg_.dim;
  if (L != cfg_.history_length)
    throw std::invalid_argument("history length " + std::to_string(L) + " != configured " +
                                std::to_string(cfg_.history_length));
  std::vector<NodeId> ids = history.nodes;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (!history.valid[i]) ids[i] = padding_id();
  auto e = nn::embed_lookup(embedding_, ids, B, L);
  std::vector<T> pe(B * L * d);
  for (std::size_t b = 0; b < B; ++b) std::copy(pe_.begin(), pe_.end(), pe.begin() + b * L * d);
  e = nn::add(e, nn::Var<T>::constant(std::move(pe), {B, L, d}));
  return encoder_(e, history.valid, dropout_rng);
}

template <typename T>
nn::Var<T> SDGModel<T>::context_stream(const nn::Var<T>& z,
                                       std::span<const std::uint8_t> history_valid,
                                       Rng* dropout_rng) const {
  return context_(z, history_valid, dropout_rng);
}

template <typename T>
nn::Var<T> SDGModel<T>::denoise(const nn::Var<T>& xk, std::size_t k, const nn::Var<T>& z_ctx,
                                std::span<const std::uint8_t> target_valid,
                                Rng* dropout_rng) const {
  if (xk.shape() != z_ctx.shape() || xk.rank() != 3 || xk.dim(2) != cfg_.dim)
    throw std::invalid_argument("denoise: shape mismatch " + nn::shape_string(xk.shape()) +
                                " vs " + nn::shape_string(z_ctx.shape()));
  if (k < 1 || k > cfg_.diffusion_steps)
    throw std::out_of_range("denoise: step " + std::to_string(k) + " out of range");
  const std::size_t d = cfg_.dim;
  const auto g = nn::step_embedding(k, d);
  auto gamma = nn::Var<T>::constant(std::vector<T>(g.begin(), g.end()), {1, d});
  const auto step = nn::reshape(step_mlp_(gamma), {d});
  const auto xh = nn::add_row(xk, step);
  if (cfg_.denoiser == DenoiserKind::kMlp) return mlp_denoiser_(nn::concat_last(z_ctx, xh));
  return cross_(z_ctx, xh, target_valid, dropout_rng);
}

template <typename T>
nn::Var<T> SDGModel<T>::score(const nn::Var<T>& x0_hat, std::span<const NodeId> candidates,
                              std::size_t num_candidates, std::span<const Timestamp> target_times,
                              std::span<const Timestamp> t) const {
  if (x0_hat.rank() != 3 || x0_hat.dim(2) != cfg_.dim)
    throw std::invalid_argument("score: x0_hat must be (B, L, d)");
  const std::size_t B = x0_hat.dim(0), L = x0_hat.dim(1), d = cfg_.dim, N = num_candidates;
  const std::size_t R = B * L;
  if (N == 0 || candidates.size() != R * N || target_times.size() != R || t.size() != B)
    throw std::invalid_argument("score: input sizes do not match (B, L, N)");
  for (auto c : candidates)
    if (c > num_nodes_) throw std::out_of_range("score: candidate id " + std::to_string(c));

  std::vector<T> phi(R);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < L; ++i) {
      const double dt = t[b] - target_times[b * L + i];
      if (dt < 0)
        throw std::invalid_argument("score: negative elapsed time at batch " + std::to_string(b) +
                                    " position " + std::to_string(i));
      phi[b * L + i] = static_cast<T>(std::log1p(dt));
    }
  const auto time_feat = delta_time_(nn::Var<T>::constant(std::move(phi), {R, 1}));

  const auto h = nn::gather_rows(embedding_, candidates, {R, N});
  if (N == 1) {
    const auto x = nn::reshape(x0_hat, {R, 1, d});
    const auto feat = nn::concat_last(nn::mul(x, h), nn::reshape(time_feat, {R, 1, d}));
    return nn::reshape(scorer_(feat), {B, L, 1});
  }
  std::vector<std::uint32_t> rep(R * N);
  for (std::size_t r = 0; r < R; ++r) std::fill_n(rep.begin() + r * N, N, r);
  const auto x = nn::gather_rows(nn::reshape(x0_hat, {R, d}), rep, {R, N});
  const auto tf = nn::gather_rows(time_feat, rep, {R, N});
  const auto feat = nn::concat_last(nn::mul(x, h), tf);
  return nn::reshape(scorer_(feat), {B, L, N});
}

template <typename T>
ForwardOutput<T> SDGModel<T>::forward_train(const HistoryBatch& raw_history,
                                            const EventBatch& events,
                                            std::span<const NodeId> negative_pool, Rng& rng,
                                            bool train_mode) const {
  const HistoryBatch history = canonical_padding(raw_history, padding_id());
  const std::size_t B = events.size(), L = cfg_.history_length, d = cfg_.dim;
  if (history.batch != B) throw std::invalid_argument("forward_train: history batch size");
  Rng* drop = train_mode && cfg_.dropout > 0 ? &rng : nullptr;

  ForwardOutput<T> out;
  out.target = build_target(history, events.dst, events.ts);
  if (!cfg_.sequence_diffusion) restrict_to_last(out.target);
  out.loss_mask = out.target.valid;

  const auto z = encode_history(history, drop);
  out.x0 = nn::embed_lookup(embedding_, out.target.nodes, B, L);
  if (cfg_.use_diffusion) {
    out.step = std::uniform_int_distribution<std::size_t>(1, cfg_.diffusion_steps)(rng);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<T> eps(B * L * d);
    for (auto& e : eps) e = static_cast<T>(n01(rng));
    const auto xk = forward_marginal(out.x0, out.step, eps, schedule_);
    const auto zc = context_stream(z, history.valid, drop);
    out.x0_hat = denoise(xk, out.step, zc, out.target.valid, drop);
  } else {
    out.x0_hat = z;
  }
  out.negatives = sample_negative_sequence(out.target, negative_pool, padding_id(), rng);
  out.scores_pos = nn::reshape(score(out.x0_hat, out.target.nodes, 1, out.target.times, events.ts),
                               {B, L});
  out.scores_neg =
      nn::reshape(score(out.x0_hat, out.negatives, 1, out.target.times, events.ts), {B, L});
  return out;
}

template <typename T>
ForwardOutput<T> SDGModel<T>::forward_train(const AdjacencyIndex& index, const EventBatch& events,
                                            std::span<const NodeId> negative_pool, Rng& rng,
                                            bool train_mode) const {
  const auto history = recent_neighbors_batch(index, events.src, events.ts,
                                              cfg_.history_length, padding_id());
  return forward_train(history, events, negative_pool, rng, train_mode);
}

template <typename T>
nn::Var<T> SDGModel<T>::loss(const ForwardOutput<T>& out, LossBreakdown* parts) const {
  nn::Var<T> l_diff;
  if (cfg_.use_diffusion) {
    auto target = out.x0;
    if (cfg_.detach_target)
      target = nn::Var<T>::constant({out.x0.value().begin(), out.x0.value().end()}, out.x0.shape());
    l_diff = diff_loss(out.x0_hat, target, out.loss_mask, cfg_.recon_loss);
  }
  const auto [l_last, l_inter] =
      task_loss(cfg_.task_loss, out.scores_pos, out.scores_neg, out.loss_mask);
  const double lambda_diff = cfg_.use_diffusion ? cfg_.lambda_diff : 0.0;
  return total_loss(l_diff, l_last, l_inter, lambda_diff, cfg_.lambda_inter, parts);
}

template <typename T>
std::vector<T> SDGModel<T>::generate_last(const HistoryBatch& history,
                                          std::span<const Timestamp> t, Rng& rng) const {
  nn::NoGradGuard guard;
  const std::size_t B = history.batch, L = cfg_.history_length, d = cfg_.dim;
  if (t.size() != B) throw std::invalid_argument("generate_last: batch size");
  const auto z = encode_history(history);
  nn::Var<T> x0_hat;
  if (!cfg_.use_diffusion) {
    x0_hat = z;
  } else {
    std::vector<NodeId> dst(B, padding_id());
    auto target = build_target(history, dst, t);
    if (!cfg_.sequence_diffusion) restrict_to_last(target);
    const auto zc = context_stream(z, history.valid);
    auto denoiser = [&](const SequenceTensor<T>& xk, std::size_t k, const nn::Var<T>& ctx) {
      auto xv = nn::Var<T>::constant(xk.values, {B, L, d});
      const auto est = denoise(xv, k, ctx, target.valid);
      SequenceTensor<T> r(B, L, d);
      std::copy(est.value().begin(), est.value().end(), r.values.begin());
      r.valid = xk.valid;
      return r;
    };
    const auto x = sample_loop<T>(denoiser, zc, B, L, d, target.valid, schedule_, rng);
    x0_hat = nn::Var<T>::constant(x.values, {B, L, d});
  }
  const auto last = nn::take_position(x0_hat, L - 1);
  return {last.value().begin(), last.value().end()};
}

template <typename T>
std::vector<T> SDGModel<T>::score_last(std::span<const T> x_last,
                                       std::span<const NodeId> candidates,
                                       std::size_t num_candidates) const {
  nn::NoGradGuard guard;
  const std::size_t d = cfg_.dim;
  if (x_last.size() % d != 0) throw std::invalid_argument("score_last: bad input size");
  const std::size_t B = x_last.size() / d;
  auto x = nn::Var<T>::constant(std::vector<T>(x_last.begin(), x_last.end()), {B, 1, d});
  std::vector<Timestamp> zeros(B, 0.0);
  const auto s = score(x, candidates, num_candidates, zeros, zeros);
  return {s.value().begin(), s.value().end()};
}

template <typename T>
std::vector<T> SDGModel<T>::score_candidates(const HistoryBatch& history,
                                             std::span<const Timestamp> t,
                                             std::span<const NodeId> candidates,
                                             std::size_t num_candidates, Rng& rng) const {
  const auto x = generate_last(history, t, rng);
  return score_last(x, candidates, num_candidates);
}

template <typename T>
std::vector<RankedCandidate> SDGModel<T>::generate_and_rank(const AdjacencyIndex& index, NodeId u,
                                                            Timestamp t,
                                                            std::span<const NodeId> candidates,
                                                            Rng& rng) const {
  if (candidates.empty()) throw std::invalid_argument("generate_and_rank: empty candidate list");
  const NodeId src[] = {u};
  const Timestamp ts[] = {t};
  const auto hist = recent_neighbors_batch(index, src, ts, cfg_.history_length, padding_id());
  const auto scores = score_candidates(hist, ts, candidates, candidates.size(), rng);
  std::vector<RankedCandidate> out(candidates.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {candidates[i], static_cast<double>(scores[i])};
  std::stable_sort(out.begin(), out.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.node < b.node;
  });
  return out;
}

template class SDGModel<float>;
template class SDGModel<double>;

}  // namespace sdg
