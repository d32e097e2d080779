#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdg/autograd.hpp"
#include "sdg/event_store.hpp"
#include "sdg/losses.hpp"
#include "sdg/nn.hpp"
#include "sdg/random.hpp"
#include "sdg/schedule.hpp"

namespace sdg {

enum class DenoiserKind { kTransformer, kMlp };

std::string to_string(DenoiserKind k);
DenoiserKind parse_denoiser_kind(std::string_view s);

struct SDGConfig {
  std::size_t history_length = 30;
  std::size_t dim = 64;
  std::size_t diffusion_steps = 32;
  std::size_t layers = 1;
  std::size_t heads = 2;
  std::size_t ffn_dim = 0;  // 0 means 4 * dim
  double dropout = 0.1;
  ScheduleKind schedule = ScheduleKind::kCosine;
  double lambda_diff = 0.2;
  double lambda_inter = 1.0;
  TaskLoss task_loss = TaskLoss::kBce;
  // Treat X0 as a constant inside the reconstruction loss. With gradients on
  // both sides the embedding table can satisfy it by collapsing.
  bool detach_target = true;

  // Ablation switches.
  ReconLoss recon_loss = ReconLoss::kCosine;
  bool sequence_diffusion = true;  // false: diffuse and score the final position only
  bool use_diffusion = true;       // false: score the encoder output directly
  DenoiserKind denoiser = DenoiserKind::kTransformer;
  bool repeat_time_encoding = false;  // extension hook, not implemented

  void validate() const;
  std::size_t resolved_ffn_dim() const { return ffn_dim ? ffn_dim : 4 * dim; }
  nn::AttentionConfig attention() const;
};

struct EventBatch {
  std::vector<NodeId> src;
  std::vector<NodeId> dst;
  std::vector<Timestamp> ts;

  std::size_t size() const { return src.size(); }
  void push_back(const Event& e) {
    src.push_back(e.src);
    dst.push_back(e.dst);
    ts.push_back(e.ts);
  }
};

EventBatch slice_events(const EventLog& log, std::size_t begin, std::size_t end);

// History shifted left by one with (dst, t) appended at the last position.
struct TargetBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<NodeId> nodes;
  std::vector<Timestamp> times;
  std::vector<std::uint8_t> valid;
};

TargetBatch build_target(const HistoryBatch& history, std::span<const NodeId> dst,
                         std::span<const Timestamp> t);

// Keeps only the final position valid.
void restrict_to_last(TargetBatch& target);

// Per-position uniform negatives from `pool`, each different from the positive
// at that position. Invalid positions get `padding_id`.
std::vector<NodeId> sample_negative_sequence(const TargetBatch& target,
                                             std::span<const NodeId> pool, NodeId padding_id,
                                             Rng& rng);

template <typename T>
struct ForwardOutput {
  TargetBatch target;
  std::vector<std::uint8_t> loss_mask;  // (B, L)
  std::vector<NodeId> negatives;        // (B, L)
  std::size_t step = 0;
  nn::Var<T> x0;
  nn::Var<T> x0_hat;
  nn::Var<T> scores_pos;  // (B, L)
  nn::Var<T> scores_neg;  // (B, L)
};

struct RankedCandidate {
  NodeId node = 0;
  double score = 0.0;
};

template <typename T>
class SDGModel {
 public:
  SDGModel(const SDGConfig& cfg, std::size_t num_nodes, std::uint64_t seed);

  const SDGConfig& config() const { return cfg_; }
  std::size_t num_nodes() const { return num_nodes_; }
  NodeId padding_id() const { return static_cast<NodeId>(num_nodes_); }
  const NoiseSchedule& schedule() const { return schedule_; }
  nn::ParameterStore<T>& params() { return store_; }
  const nn::ParameterStore<T>& params() const { return store_; }
  const nn::Var<T>& embedding() const { return embedding_; }

  // Z = CausalTransformer(H[nodes] + PE), (B, L, d).
  nn::Var<T> encode_history(const HistoryBatch& history, Rng* dropout_rng = nullptr) const;
  // Denoiser-side causal transformer over Z.
  nn::Var<T> context_stream(const nn::Var<T>& z, std::span<const std::uint8_t> history_valid,
                            Rng* dropout_rng = nullptr) const;
  // x0 estimate from xk and step k, queries from z_ctx, keys masked by target_valid.
  nn::Var<T> denoise(const nn::Var<T>& xk, std::size_t k, const nn::Var<T>& z_ctx,
                     std::span<const std::uint8_t> target_valid,
                     Rng* dropout_rng = nullptr) const;
  // x0_hat (B, L, d), candidates (B, L, N) flattened, target_times (B, L),
  // t (B). Returns (B, L, N).
  nn::Var<T> score(const nn::Var<T>& x0_hat, std::span<const NodeId> candidates,
                   std::size_t num_candidates, std::span<const Timestamp> target_times,
                   std::span<const Timestamp> t) const;

  // One training forward pass. `rng` drives k, noise, negatives and dropout.
  ForwardOutput<T> forward_train(const HistoryBatch& history, const EventBatch& events,
                                 std::span<const NodeId> negative_pool, Rng& rng,
                                 bool train_mode = true) const;
  ForwardOutput<T> forward_train(const AdjacencyIndex& index, const EventBatch& events,
                                 std::span<const NodeId> negative_pool, Rng& rng,
                                 bool train_mode = true) const;
  // Loss of a forward pass; fills `parts` when given.
  nn::Var<T> loss(const ForwardOutput<T>& out, LossBreakdown* parts = nullptr) const;

  // Generated final-position representation, (B, d). No autograd.
  std::vector<T> generate_last(const HistoryBatch& history, std::span<const Timestamp> t,
                               Rng& rng) const;
  // Final-position scores for per-event candidate lists (B x N, row-major).
  std::vector<T> score_candidates(const HistoryBatch& history, std::span<const Timestamp> t,
                                  std::span<const NodeId> candidates,
                                  std::size_t num_candidates, Rng& rng) const;
  // Scores from an already generated final-position representation.
  std::vector<T> score_last(std::span<const T> x_last, std::span<const NodeId> candidates,
                            std::size_t num_candidates) const;

  // Candidates sorted by descending score, ties by ascending id.
  std::vector<RankedCandidate> generate_and_rank(const AdjacencyIndex& index, NodeId u,
                                                 Timestamp t, std::span<const NodeId> candidates,
                                                 Rng& rng) const;

 private:
  SDGConfig cfg_;
  std::size_t num_nodes_;
  NoiseSchedule schedule_;
  nn::ParameterStore<T> store_;

  nn::Var<T> embedding_;
  nn::CausalTransformer<T> encoder_;
  nn::Mlp<T> step_mlp_;
  nn::CausalTransformer<T> context_;
  nn::CrossTransformer<T> cross_;
  nn::Mlp<T> mlp_denoiser_;
  nn::Linear<T> delta_time_;
  nn::Mlp<T> scorer_;
  std::vector<T> pe_;  // (L, d)
};

}  // namespace sdg
