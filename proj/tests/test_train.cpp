#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "sdg/errors.hpp"
#include "sdg/synthetic.hpp"
#include "sdg/train.hpp"
#include "test_util.hpp"

using namespace sdg;
using sdg::testing::TempDir;
using sdg::testing::read_file;

namespace {

SDGConfig tiny_config() {
  SDGConfig c;
  c.history_length = 4;
  c.dim = 8;
  c.diffusion_steps = 4;
  c.heads = 2;
  c.ffn_dim = 16;
  return c;
}

struct Fixture {
  SyntheticGraph g = make_round_robin_graph(40, 800, 3);
  AdjacencyIndex index = build_index(g.log, false);
  DatasetSplit split = chronological_split(g.log, 0.7, 0.15);
  std::vector<NodeId> pool = negative_pool(g.log);
};

TrainConfig quick_train(double lr = 1e-3) {
  TrainConfig t;
  t.batch_size = 100;
  t.lr = lr;
  t.max_epochs = 2;
  t.patience = 2;
  t.seed = 11;
  t.eval_negatives = 20;
  return t;
}

HistorySequence full_sequence(std::size_t L, std::size_t num_nodes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  HistorySequence h;
  for (std::size_t i = 0; i < L; ++i) {
    h.nodes.push_back(static_cast<NodeId>(rng() % num_nodes));
    h.times.push_back(static_cast<double>(10 + i));
    h.valid.push_back(1);
  }
  return h;
}

std::size_t count_diff(const HistorySequence& a, const HistorySequence& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.length(); ++i)
    n += (a.nodes[i] != b.nodes[i] || a.times[i] != b.times[i]) ? 1 : 0;
  return n;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.patience = c.max_epochs + 1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.lr = -1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Adam, FirstStepAndClipping) {
  nn::ParameterStore<float> store;
  Rng rng(1);
  auto w = store.add("w", {3}, nn::Init::zeros(), rng);
  w.mutable_value()[0] = 1.0f;
  auto g = w.mutable_grad();
  g[0] = 0.5f;
  g[1] = -2.0f;
  g[2] = 0.0f;
  Adam adam(store, 0.1);
  // Bias-corrected first step: lr * g / (|g| + eps).
  adam.step();
  EXPECT_NEAR(w.value()[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-6);
  EXPECT_NEAR(w.value()[1], 0.1 * 2.0 / (2.0 + 1e-8), 1e-6);
  EXPECT_EQ(w.value()[2], 0.0f);
  EXPECT_EQ(adam.steps(), 1u);

  auto gg = w.mutable_grad();
  gg[0] = 3.0f;
  gg[1] = 4.0f;
  gg[2] = 0.0f;
  EXPECT_NEAR(adam.clip_grad_norm(10.0), 5.0, 1e-6);
  EXPECT_EQ(w.grad()[0], 3.0f);
  EXPECT_NEAR(adam.clip_grad_norm(1.0), 5.0, 1e-6);
  EXPECT_NEAR(w.grad()[0], 0.6, 1e-5);
  EXPECT_NEAR(w.grad()[1], 0.8, 1e-5);
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  Fixture f;
  SDGModel<float> model(tiny_config(), f.g.log.num_nodes, 5);
  const auto before = model.params().snapshot();
  auto cfg = quick_train(0.0);
  cfg.max_epochs = 1;
  cfg.patience = 1;
  train(model, f.g.log, f.index, f.split, cfg);
  EXPECT_EQ(model.params().snapshot(), before);
}

TEST(Train, FixedBatchLossDecreases) {
  Fixture f;
  SDGModel<float> model(tiny_config(), f.g.log.num_nodes, 6);
  Adam adam(model.params(), 1e-3);
  const auto events = slice_events(f.g.log, 100, 116);
  std::vector<double> losses;
  for (int step = 0; step <= 50; ++step) {
    Rng rng(7);
    model.params().zero_grad();
    const auto loss = model.loss(model.forward_train(f.index, events, f.pool, rng));
    losses.push_back(loss.value()[0]);
    if (step == 50) break;
    loss.backward();
    adam.step();
  }
  EXPECT_LT(losses.back(), losses.front());
  for (std::size_t i = 10; i < losses.size(); i += 10) EXPECT_LT(losses[i], losses[i - 10]);
}

TEST(Train, SameSeedSameCurves) {
  Fixture f;
  auto run = [&] {
    SDGModel<float> model(tiny_config(), f.g.log.num_nodes, 8);
    auto res = train(model, f.g.log, f.index, f.split, quick_train());
    return std::make_pair(res, model.params().snapshot());
  };
  auto [a, pa] = run();
  auto [b, pb] = run();
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    EXPECT_EQ(a.epochs[i].train_loss.l_total, b.epochs[i].train_loss.l_total);
    EXPECT_EQ(a.epochs[i].val_mrr, b.epochs[i].val_mrr);
  }
  EXPECT_EQ(pa, pb);
  EXPECT_EQ(a.best_epoch, b.best_epoch);
}

TEST(Train, EarlyStoppingAndCallback) {
  Fixture f;
  SDGModel<float> model(tiny_config(), f.g.log.num_nodes, 9);
  auto cfg = quick_train(0.0);
  cfg.max_epochs = 6;
  cfg.patience = 2;
  std::vector<std::size_t> seen;
  auto res = train(model, f.g.log, f.index, f.split, cfg,
                   [&](const EpochRecord& r) { seen.push_back(r.epoch); });
  // A constant validation score never improves after the first epoch.
  EXPECT_TRUE(res.stopped_early);
  EXPECT_EQ(res.best_epoch, 1u);
  EXPECT_EQ(res.epochs.size(), 3u);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3}));
}

TEST(Train, NonFiniteLossReportsBatch) {
  Fixture f;
  SDGModel<float> model(tiny_config(), f.g.log.num_nodes, 10);
  model.params().get("scorer.layer1.bias").mutable_value()[0] = std::nanf("");
  try {
    train(model, f.g.log, f.index, f.split, quick_train());
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_EQ(e.where(), 0u);
  }
}

TEST(Perturb, CountsMatchFloorSigmaL) {
  const std::size_t L = 30;
  for (int i = 1; i <= 6; ++i) {
    const double sigma = 0.1 * i;
    const auto h = full_sequence(L, 1000, 20 + i);
    auto p = h;
    Rng rng(30 + i);
    const auto pos = perturb_sequence(p, sigma, rng, 1000);
    const auto expect = static_cast<std::size_t>(std::floor(sigma * L + 1e-9));
    EXPECT_EQ(pos.size(), expect) << "sigma " << sigma;
    EXPECT_EQ(std::set<std::size_t>(pos.begin(), pos.end()).size(), pos.size());
    // Unchanged outside the chosen positions, in range inside them.
    for (std::size_t j = 0; j < L; ++j) {
      if (std::find(pos.begin(), pos.end(), j) == pos.end()) {
        EXPECT_EQ(p.nodes[j], h.nodes[j]);
        EXPECT_EQ(p.times[j], h.times[j]);
      } else {
        EXPECT_LT(p.nodes[j], 1000u);
        EXPECT_GE(p.times[j], 10.0);
        EXPECT_LE(p.times[j], 10.0 + L - 1);
      }
    }
  }
}

TEST(Perturb, ZeroAndFullSigma) {
  auto h = full_sequence(10, 50, 1);
  for (std::size_t i = 0; i < 4; ++i) {
    h.valid[i] = 0;
    h.nodes[i] = 50;
    h.times[i] = 0;
  }
  auto z = h;
  Rng r0(2);
  EXPECT_TRUE(perturb_sequence(z, 0.0, r0, 50).empty());
  EXPECT_EQ(z.nodes, h.nodes);
  EXPECT_EQ(z.times, h.times);
  auto all = h;
  Rng r1(3);
  const auto pos = perturb_sequence(all, 1.0, r1, 50);
  EXPECT_EQ(pos, (std::vector<std::size_t>{4, 5, 6, 7, 8, 9}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(all.nodes[i], 50u);
  EXPECT_THROW(perturb_sequence(all, 1.5, r1, 50), std::invalid_argument);
}

TEST(Perturb, SmallerSigmaIsPrefixOfLarger) {
  const auto h = full_sequence(30, 500, 4);
  HistorySequence prev = h;
  std::vector<std::size_t> prev_pos;
  for (double sigma : {0.1, 0.2, 0.4, 0.6, 1.0}) {
    auto p = h;
    Rng rng(5);
    const auto pos = perturb_sequence(p, sigma, rng, 500);
    for (auto q : prev_pos) {
      EXPECT_NE(std::find(pos.begin(), pos.end(), q), pos.end());
      EXPECT_EQ(p.nodes[q], prev.nodes[q]);
      EXPECT_EQ(p.times[q], prev.times[q]);
    }
    prev = p;
    prev_pos = pos;
  }
}

TEST(Perturb, BatchVersion) {
  HistoryBatch b(3, 30, 100);
  for (std::size_t r = 0; r < 3; ++r) b.set_row(r, full_sequence(30, 100, 40 + r));
  Rng rng(6);
  std::vector<std::size_t> where;
  const auto out = perturb_history(b, 0.2, rng, 100, &where);
  EXPECT_EQ(where.size(), 18u);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(count_diff(out.row(r), b.row(r)) <= 6, true);
  Rng r0(6);
  const auto same = perturb_history(b, 0.0, r0, 100);
  EXPECT_EQ(same.nodes, b.nodes);
  EXPECT_EQ(same.times, b.times);
}

TEST(Evaluate, NegativesFileMatchesGeneratedNegatives) {
  Fixture f;
  SDGModel<float> model(tiny_config(), f.g.log.num_nodes, 12);
  EvalOptions opts;
  opts.num_negatives = 15;
  opts.seed = 13;
  opts.batch_size = 25;
  opts.keep_ranks = true;
  const auto seeded = evaluate(model, f.g.log, f.index, f.split.test, f.pool, opts);
  const auto negs = generate_eval_negatives(f.g.log, f.split.test, f.pool, 15, 13);
  for (std::size_t i = 0; i < negs.size(); ++i) {
    ASSERT_EQ(negs[i].size(), 15u);
    for (auto n : negs[i]) EXPECT_NE(n, f.g.log.events[f.split.test.begin + i].dst);
  }
  auto with_file = opts;
  with_file.negatives = &negs;
  const auto filed = evaluate(model, f.g.log, f.index, f.split.test, f.pool, with_file);
  EXPECT_EQ(seeded.ranks, filed.ranks);
  EXPECT_EQ(seeded.mrr, filed.mrr);
  EXPECT_EQ(seeded.ap, filed.ap);
  EXPECT_EQ(seeded.ranks.size(), f.split.test.size());
  for (auto r : seeded.ranks) {
    EXPECT_GE(r, 1u);
    EXPECT_LE(r, 16u);
  }

  auto short_list = negs;
  short_list.pop_back();
  with_file.negatives = &short_list;
  EXPECT_THROW(evaluate(model, f.g.log, f.index, f.split.test, f.pool, with_file),
               std::invalid_argument);
}

TEST(Evaluate, ReportInvariantsAndDeterminism) {
  Fixture f;
  SDGModel<float> model(tiny_config(), f.g.log.num_nodes, 14);
  EvalOptions opts;
  opts.num_negatives = 30;
  opts.seed = 2;
  opts.hr_k = {1, 5, 10, 20, 31};
  const auto a = evaluate(model, f.g.log, f.index, f.split.val, f.pool, opts);
  const auto b = evaluate(model, f.g.log, f.index, f.split.val, f.pool, opts);
  EXPECT_EQ(a.mrr, b.mrr);
  EXPECT_EQ(a.num_events, f.split.val.size());
  double prev = 0;
  for (auto [k, v] : a.hr) {
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_DOUBLE_EQ(a.hr.at(31), 1.0);
  EXPECT_LE(a.mrr, a.hr.at(31));
  EXPECT_TRUE(a.has_pointwise);
  EXPECT_GE(a.auc, 0.0);
  EXPECT_LE(a.auc, 1.0);

  // sigma = 0 is the unperturbed protocol.
  auto s0 = opts;
  s0.sigma = 0.0;
  EXPECT_EQ(evaluate(model, f.g.log, f.index, f.split.val, f.pool, s0).mrr, a.mrr);

  const auto [ap, auc] = evaluate_pointwise(model, f.g.log, f.index, f.split.val, f.pool, opts);
  EXPECT_GE(ap, 0.0);
  EXPECT_LE(ap, 1.0);
  EXPECT_GE(auc, 0.0);
  EXPECT_LE(auc, 1.0);
  EXPECT_THROW(evaluate(model, f.g.log, f.index, {0, f.g.log.size() + 1}, f.pool, opts),
               std::out_of_range);
}

TEST(Evaluate, RanksMatchDirectScoring) {
  Fixture f;
  SDGModel<float> model(tiny_config(), f.g.log.num_nodes, 15);
  const IndexRange range{f.split.test.begin, f.split.test.begin + 10};
  EvalOptions opts;
  opts.num_negatives = 9;
  opts.seed = 4;
  opts.batch_size = 10;
  opts.keep_ranks = true;
  const auto rep = evaluate(model, f.g.log, f.index, range, f.pool, opts);

  const auto events = slice_events(f.g.log, range.begin, range.end);
  const auto hist = recent_neighbors_batch(f.index, events.src, events.ts, 4, model.padding_id());
  Rng noise = make_rng(4, streams::kEvalNoise, range.begin);
  const auto negs = generate_eval_negatives(f.g.log, range, f.pool, 9, 4);
  std::vector<NodeId> flat;
  for (std::size_t b = 0; b < 10; ++b) {
    flat.push_back(events.dst[b]);
    flat.insert(flat.end(), negs[b].begin(), negs[b].end());
  }
  const auto s = model.score_candidates(hist, events.ts, flat, 10, noise);
  for (std::size_t b = 0; b < 10; ++b) {
    std::size_t r = 1;
    for (std::size_t j = 1; j < 10; ++j) r += s[b * 10 + j] >= s[b * 10] ? 1 : 0;
    EXPECT_EQ(rep.ranks[b], r);
  }
}

TEST(Export, LayoutAndRoundTrip) {
  TempDir dir;
  SDGConfig c = tiny_config();
  c.dim = 2;
  c.heads = 1;
  SDGModel<float> model(c, 3, 16);
  const auto path = dir / "emb.csv";
  export_embeddings(model, path);
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "node_id,dim_0,dim_1");
  const auto table = model.embedding().value();
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    EXPECT_EQ(std::stoul(cell), rows);
    for (std::size_t j = 0; j < 2; ++j) {
      std::getline(ls, cell, ',');
      EXPECT_EQ(std::strtof(cell.c_str(), nullptr), table[rows * 2 + j]);
    }
    ++rows;
  }
  EXPECT_EQ(rows, 3u);
  EXPECT_THROW(export_embeddings(model, dir / "missing" / "x.csv"), IoError);
}

TEST(Export, UntrainedExportEqualsInitDraw) {
  TempDir dir;
  SDGModel<float> a(tiny_config(), 25, 17), b(tiny_config(), 25, 17);
  export_embeddings(a, dir / "a.csv");
  export_embeddings(b, dir / "b.csv");
  EXPECT_EQ(read_file(dir / "a.csv"), read_file(dir / "b.csv"));
  SDGModel<float> other(tiny_config(), 25, 18);
  export_embeddings(other, dir / "c.csv");
  EXPECT_NE(read_file(dir / "a.csv"), read_file(dir / "c.csv"));
}
