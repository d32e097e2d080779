#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "sdg/event_store.hpp"
#include "sdg/losses.hpp"
#include "sdg/metrics.hpp"
#include "sdg/model.hpp"
#include "sdg/nn.hpp"

namespace sdg {

// RNG stream tags. Each (seed, stream, index) triple is an independent draw.
namespace streams {
inline constexpr std::uint64_t kTrainBatch = 0x7261;
inline constexpr std::uint64_t kEvalNegatives = 0x6e65;
inline constexpr std::uint64_t kEvalNoise = 0x6e6f;
inline constexpr std::uint64_t kPerturb = 0x7065;
}  // namespace streams

struct TrainConfig {
  std::size_t batch_size = 200;
  double lr = 1e-4;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  std::size_t eval_negatives = 100;
  double grad_clip = 5.0;  // global L2 norm; 0 disables
  std::size_t eval_batch_size = 200;

  void validate() const;
};

class Adam {
 public:
  Adam(nn::ParameterStore<float>& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  // Rescales gradients to `max_norm` if their global norm exceeds it; returns
  // the pre-clip norm.
  double clip_grad_norm(double max_norm);
  void step();
  std::size_t steps() const { return t_; }

 private:
  nn::ParameterStore<float>& params_;
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

struct EvalOptions {
  std::size_t num_negatives = 100;
  std::uint64_t seed = 0;
  // Per-event candidate negatives aligned with the evaluated range; when set,
  // num_negatives is ignored.
  const std::vector<std::vector<NodeId>>* negatives = nullptr;
  double sigma = 0.0;
  std::vector<std::size_t> hr_k = {1, 5, 10, 20};
  std::size_t batch_size = 200;
  bool keep_ranks = false;
};

struct EvalReport {
  std::size_t num_events = 0;
  double mrr = 0.0;
  std::map<std::size_t, double> hr;
  double ap = 0.0;
  double auc = 0.0;
  bool has_pointwise = false;
  std::vector<std::size_t> ranks;
};

// Ranking metrics from (E x N) score rows whose column 0 is the positive.
EvalReport report_from_scores(std::span<const double> scores, std::size_t num_candidates,
                              std::span<const std::size_t> hr_k, bool keep_ranks = false);

// Ranks each event's positive among its negatives (MRR, HR@K) and computes
// AP / ROC-AUC from the positive and the first negative of every event.
EvalReport evaluate(const SDGModel<float>& model, const EventLog& log,
                    const AdjacencyIndex& index, IndexRange range,
                    std::span<const NodeId> negative_pool, const EvalOptions& opts);

EvalReport evaluate_ranking(const SDGModel<float>& model, const EventLog& log,
                            const AdjacencyIndex& index, IndexRange range,
                            std::span<const NodeId> negative_pool, const EvalOptions& opts);
// Returns {ap, auc}.
std::pair<double, double> evaluate_pointwise(const SDGModel<float>& model, const EventLog& log,
                                             const AdjacencyIndex& index, IndexRange range,
                                             std::span<const NodeId> negative_pool,
                                             const EvalOptions& opts);

// Seeded negatives exactly as evaluate() draws them when no file is given.
std::vector<std::vector<NodeId>> generate_eval_negatives(const EventLog& log, IndexRange range,
                                                         std::span<const NodeId> pool,
                                                         std::size_t count, std::uint64_t seed);

// Replaces floor(sigma * L) valid positions (all of them if fewer) with
// uniform random nodes and timestamps uniform in the sequence's time span.
// For one rng state the perturbed set for a smaller sigma is a prefix of the
// set for a larger one. Returns the perturbed positions.
std::vector<std::size_t> perturb_sequence(HistorySequence& h, double sigma, Rng& rng,
                                          std::size_t num_nodes);
HistoryBatch perturb_history(const HistoryBatch& batch, double sigma, Rng& rng,
                             std::size_t num_nodes,
                             std::vector<std::size_t>* perturbed = nullptr);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown train_loss;
  double val_mrr = 0.0;
  double wall_time = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_mrr = 0.0;
  bool stopped_early = false;
};

// Negative pool used for both training and evaluation.
std::vector<NodeId> negative_pool(const EventLog& log);

// Mini-batch Adam over the training range in chronological order, validation
// MRR after every epoch, best-validation parameters restored on return.
// Throws NonFiniteError with the global batch index on a non-finite loss.
TrainResult train(SDGModel<float>& model, const EventLog& log, const AdjacencyIndex& index,
                  const DatasetSplit& split, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

// CSV `node_id,dim_0,...` of the embedding table without the padding row.
void export_embeddings(const SDGModel<float>& model, const std::filesystem::path& path);

}  // namespace sdg
