#include "sdg/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "sdg/errors.hpp"

namespace sdg {

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (eval_batch_size == 0) throw std::invalid_argument("eval_batch_size must be positive");
  if (lr < 0) throw std::invalid_argument("lr must be >= 0");
  if (max_epochs == 0) throw std::invalid_argument("max_epochs must be positive");
  if (patience > max_epochs) throw std::invalid_argument("patience must not exceed max_epochs");
  if (eval_negatives == 0) throw std::invalid_argument("eval_negatives must be positive");
  if (grad_clip < 0) throw std::invalid_argument("grad_clip must be >= 0");
}

Adam::Adam(nn::ParameterStore<float>& params, double lr, double beta1, double beta2, double eps)
    : params_(params), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& [_, p] : params_.entries()) {
    m_.emplace_back(p.numel(), 0.0f);
    v_.emplace_back(p.numel(), 0.0f);
  }
}

double Adam::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& [_, p] : params_.entries())
    for (float g : p.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / (norm + 1e-6));
    for (auto& [_, p] : params_.entries())
      if (!p.grad().empty())
        for (float& g : p.mutable_grad()) g *= s;
  }
  return norm;
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  auto& entries = params_.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& p = entries[i].second;
    const auto g = p.grad();
    auto x = p.mutable_value();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = static_cast<float>(b1_ * m[j] + (1.0 - b1_) * gj);
      v[j] = static_cast<float>(b2_ * v[j] + (1.0 - b2_) * gj * gj);
      const double mh = m[j] / c1;
      const double vh = v[j] / c2;
      x[j] -= static_cast<float>(lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }
}

EvalReport report_from_scores(std::span<const double> scores, std::size_t num_candidates,
                              std::span<const std::size_t> hr_k, bool keep_ranks) {
  if (num_candidates == 0 || scores.size() % num_candidates != 0)
    throw std::invalid_argument("score matrix size is not a multiple of the candidate count");
  const std::size_t E = scores.size() / num_candidates;
  EvalReport rep;
  rep.num_events = E;
  std::vector<std::size_t> ranks(E);
  std::vector<double> pw;
  std::vector<int> labels;
  for (std::size_t e = 0; e < E; ++e) {
    const auto row = scores.subspan(e * num_candidates, num_candidates);
    ranks[e] = pessimistic_rank(row[0], row.subspan(1));
    if (num_candidates > 1) {
      pw.push_back(row[0]);
      labels.push_back(1);
      pw.push_back(row[1]);
      labels.push_back(0);
    }
  }
  const auto s = summarize_ranks(ranks, hr_k);
  rep.mrr = s.mrr;
  rep.hr = s.hr;
  if (!pw.empty()) {
    rep.ap = average_precision(pw, labels);
    rep.auc = roc_auc(pw, labels);
    rep.has_pointwise = true;
  }
  if (keep_ranks) rep.ranks = std::move(ranks);
  return rep;
}

std::vector<std::vector<NodeId>> generate_eval_negatives(const EventLog& log, IndexRange range,
                                                         std::span<const NodeId> pool,
                                                         std::size_t count, std::uint64_t seed) {
  std::vector<std::vector<NodeId>> out;
  out.reserve(range.size());
  for (std::size_t i = range.begin; i < range.end; ++i) {
    Rng rng = make_rng(seed, streams::kEvalNegatives, i);
    out.push_back(sample_negatives(rng, count, pool, {log.events[i].dst}));
  }
  return out;
}

EvalReport evaluate(const SDGModel<float>& model, const EventLog& log,
                    const AdjacencyIndex& index, IndexRange range,
                    std::span<const NodeId> negative_pool, const EvalOptions& opts) {
  if (range.end > log.size() || range.begin > range.end)
    throw std::out_of_range("evaluation range outside the log");
  if (opts.negatives && opts.negatives->size() != range.size())
    throw std::invalid_argument("negatives list misaligned: " +
                                std::to_string(opts.negatives->size()) + " lists for " +
                                std::to_string(range.size()) + " events");
  if (opts.batch_size == 0) throw std::invalid_argument("eval batch size must be positive");
  const std::size_t L = model.config().history_length, d = model.config().dim;

  std::vector<std::size_t> ranks;
  std::vector<double> pw;
  std::vector<int> labels;
  ranks.reserve(range.size());
  for (std::size_t start = range.begin; start < range.end; start += opts.batch_size) {
    const std::size_t stop = std::min(range.end, start + opts.batch_size);
    const auto events = slice_events(log, start, stop);
    auto hist = recent_neighbors_batch(index, events.src, events.ts, L, model.padding_id());
    if (opts.sigma > 0) {
      for (std::size_t b = 0; b < events.size(); ++b) {
        auto row = hist.row(b);
        Rng prng = make_rng(opts.seed, streams::kPerturb, start + b);
        perturb_sequence(row, opts.sigma, prng, model.num_nodes());
        hist.set_row(b, row);
      }
    }
    Rng noise = make_rng(opts.seed, streams::kEvalNoise, start);
    const auto x = model.generate_last(hist, events.ts, noise);

    std::vector<std::vector<NodeId>> cands(events.size());
    for (std::size_t b = 0; b < events.size(); ++b) {
      const std::size_t ev = start + b;
      cands[b].push_back(events.dst[b]);
      if (opts.negatives) {
        const auto& negs = (*opts.negatives)[ev - range.begin];
        cands[b].insert(cands[b].end(), negs.begin(), negs.end());
      } else {
        Rng rng = make_rng(opts.seed, streams::kEvalNegatives, ev);
        const auto negs = sample_negatives(rng, opts.num_negatives, negative_pool, {events.dst[b]});
        cands[b].insert(cands[b].end(), negs.begin(), negs.end());
      }
    }
    auto consume = [&](std::span<const float> s) {
      std::vector<double> ds(s.begin(), s.end());
      ranks.push_back(pessimistic_rank(ds[0], std::span<const double>(ds).subspan(1)));
      if (ds.size() > 1) {
        pw.push_back(ds[0]);
        labels.push_back(1);
        pw.push_back(ds[1]);
        labels.push_back(0);
      }
    };
    const std::size_t N = cands[0].size();
    const bool uniform = std::all_of(cands.begin(), cands.end(),
                                     [&](const auto& c) { return c.size() == N; });
    if (uniform) {
      std::vector<NodeId> flat;
      flat.reserve(events.size() * N);
      for (const auto& c : cands) flat.insert(flat.end(), c.begin(), c.end());
      const auto s = model.score_last(x, flat, N);
      for (std::size_t b = 0; b < events.size(); ++b)
        consume(std::span<const float>(s).subspan(b * N, N));
    } else {
      for (std::size_t b = 0; b < events.size(); ++b) {
        const auto s = model.score_last(std::span<const float>(x).subspan(b * d, d), cands[b],
                                        cands[b].size());
        consume(s);
      }
    }
  }

  EvalReport rep;
  rep.num_events = ranks.size();
  const auto s = summarize_ranks(ranks, opts.hr_k);
  rep.mrr = s.mrr;
  rep.hr = s.hr;
  std::size_t npos = 0;
  for (int l : labels) npos += l;
  if (npos > 0 && npos < labels.size()) {
    rep.ap = average_precision(pw, labels);
    rep.auc = roc_auc(pw, labels);
    rep.has_pointwise = true;
  }
  if (opts.keep_ranks) rep.ranks = std::move(ranks);
  return rep;
}

EvalReport evaluate_ranking(const SDGModel<float>& model, const EventLog& log,
                            const AdjacencyIndex& index, IndexRange range,
                            std::span<const NodeId> negative_pool, const EvalOptions& opts) {
  return evaluate(model, log, index, range, negative_pool, opts);
}

std::pair<double, double> evaluate_pointwise(const SDGModel<float>& model, const EventLog& log,
                                             const AdjacencyIndex& index, IndexRange range,
                                             std::span<const NodeId> negative_pool,
                                             const EvalOptions& opts) {
  EvalOptions one = opts;
  if (!opts.negatives) one.num_negatives = 1;
  const auto rep = evaluate(model, log, index, range, negative_pool, one);
  if (!rep.has_pointwise) throw std::invalid_argument("degenerate single-class input");
  return {rep.ap, rep.auc};
}

std::vector<std::size_t> perturb_sequence(HistorySequence& h, double sigma, Rng& rng,
                                          std::size_t num_nodes) {
  if (sigma < 0 || sigma > 1) throw std::invalid_argument("sigma must be in [0, 1]");
  if (sigma == 0 || num_nodes == 0) return {};
  std::vector<std::size_t> pos;
  Timestamp lo = std::numeric_limits<Timestamp>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < h.length(); ++i)
    if (h.valid[i]) {
      pos.push_back(i);
      lo = std::min(lo, h.times[i]);
      hi = std::max(hi, h.times[i]);
    }
  if (pos.empty()) return {};
  std::shuffle(pos.begin(), pos.end(), rng);
  std::uniform_int_distribution<std::size_t> node_dist(0, num_nodes - 1);
  std::uniform_real_distribution<double> time_dist(0.0, 1.0);
  std::vector<NodeId> nodes(pos.size());
  std::vector<Timestamp> times(pos.size());
  for (std::size_t j = 0; j < pos.size(); ++j) {
    nodes[j] = static_cast<NodeId>(node_dist(rng));
    times[j] = lo + (hi - lo) * time_dist(rng);
  }
  const auto target = static_cast<std::size_t>(std::floor(sigma * static_cast<double>(h.length()) + 1e-9));
  const std::size_t count = std::min(target, pos.size());
  for (std::size_t j = 0; j < count; ++j) {
    h.nodes[pos[j]] = nodes[j];
    h.times[pos[j]] = times[j];
  }
  pos.resize(count);
  std::sort(pos.begin(), pos.end());
  return pos;
}

HistoryBatch perturb_history(const HistoryBatch& batch, double sigma, Rng& rng,
                             std::size_t num_nodes, std::vector<std::size_t>* perturbed) {
  HistoryBatch out = batch;
  if (perturbed) perturbed->clear();
  for (std::size_t b = 0; b < batch.batch; ++b) {
    auto row = out.row(b);
    const auto pos = perturb_sequence(row, sigma, rng, num_nodes);
    out.set_row(b, row);
    if (perturbed)
      for (auto p : pos) perturbed->push_back(b * batch.length + p);
  }
  return out;
}

std::vector<NodeId> negative_pool(const EventLog& log) {
  return log.bipartite ? log.destination_nodes() : log.all_nodes();
}

TrainResult train(SDGModel<float>& model, const EventLog& log, const AdjacencyIndex& index,
                  const DatasetSplit& split, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  const auto pool = negative_pool(log);
  auto& params = model.params();
  Adam adam(params, cfg.lr);
  auto emb = model.embedding();
  const std::size_t d = model.config().dim;
  const std::size_t pad_offset = model.num_nodes() * d;

  TrainResult result;
  std::vector<float> best = params.snapshot();
  double best_val = -std::numeric_limits<double>::infinity();
  std::size_t global_batch = 0;

  EvalOptions eval_opts;
  eval_opts.num_negatives = cfg.eval_negatives;
  eval_opts.seed = cfg.seed;
  eval_opts.batch_size = cfg.eval_batch_size;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    LossBreakdown sum;
    std::size_t batches = 0;
    for (std::size_t start = split.train.begin; start < split.train.end;
         start += cfg.batch_size, ++global_batch) {
      const auto events = slice_events(log, start, std::min(split.train.end, start + cfg.batch_size));
      Rng rng = make_rng(cfg.seed, streams::kTrainBatch, global_batch);
      params.zero_grad();
      const auto out = model.forward_train(index, events, pool, rng, true);
      LossBreakdown parts;
      const auto loss = model.loss(out, &parts);
      if (!std::isfinite(parts.l_total))
        throw NonFiniteError("non-finite loss at batch " + std::to_string(global_batch),
                             global_batch);
      loss.backward();
      // The padding row stays at its zero initialisation.
      auto g = emb.mutable_grad();
      std::fill_n(g.begin() + pad_offset, d, 0.0f);
      if (cfg.grad_clip > 0) adam.clip_grad_norm(cfg.grad_clip);
      adam.step();
      if (!params.all_finite())
        throw NonFiniteError("non-finite parameters after batch " + std::to_string(global_batch),
                             global_batch);
      sum.l_diff += parts.l_diff;
      sum.l_last += parts.l_last;
      sum.l_inter += parts.l_inter;
      sum.l_task += parts.l_task;
      sum.l_total += parts.l_total;
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    if (batches) {
      const double n = static_cast<double>(batches);
      rec.train_loss = {sum.l_diff / n, sum.l_last / n, sum.l_inter / n, sum.l_task / n,
                        sum.l_total / n};
    }
    rec.val_mrr = split.val.empty()
                      ? 0.0
                      : evaluate_ranking(model, log, index, split.val, pool, eval_opts).mrr;
    rec.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_mrr > best_val || split.val.empty()) {
      best_val = rec.val_mrr;
      result.best_epoch = epoch;
      best = params.snapshot();
    } else if (epoch - result.best_epoch >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }
  params.restore(best);
  result.best_val_mrr = best_val;
  return result;
}

void export_embeddings(const SDGModel<float>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t d = model.config().dim;
  out << "node_id";
  for (std::size_t c = 0; c < d; ++c) out << ",dim_" << c;
  out << '\n';
  const auto table = model.embedding().value();
  char buf[64];
  for (std::size_t n = 0; n < model.num_nodes(); ++n) {
    out << n;
    for (std::size_t c = 0; c < d; ++c) {
      const auto r = std::to_chars(buf, buf + sizeof buf, table[n * d + c]);
      out << ',' << std::string_view(buf, r.ptr - buf);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace sdg
