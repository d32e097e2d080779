// sdg: ingest, train, evaluate and export SDG temporal link prediction models.

#include <Eigen/Core>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sdg/checkpoint.hpp"
#include "sdg/config.hpp"
#include "sdg/errors.hpp"
#include "sdg/event_store.hpp"
#include "sdg/synthetic.hpp"
#include "sdg/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitFormat = 2;
constexpr int kExitNonFinite = 3;
constexpr int kExitIo = 4;
constexpr int kExitMismatch = 5;

struct DataDir {
  sdg::EventLog log;
  bool undirected_history = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw sdg::IoError("cannot write " + path.string());
  out << text;
  if (!out) throw sdg::IoError("write failed for " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw sdg::IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw sdg::FormatError(path.string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw sdg::IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

DataDir load_data_dir(const fs::path& dir) {
  DataDir d;
  d.log = sdg::read_event_log(dir / "events.bin");
  const auto stats = read_json(dir / "stats.json");
  d.undirected_history = stats.value("undirected_history", !d.log.bipartite);
  return d;
}

json hr_json(const std::map<std::size_t, double>& hr) {
  json out = json::object();
  for (const auto& [k, v] : hr) out[std::to_string(k)] = v;
  return out;
}

json report_json(const sdg::EvalReport& r) {
  json out;
  out["num_events"] = r.num_events;
  out["mrr"] = r.mrr;
  out["hr"] = hr_json(r.hr);
  if (r.has_pointwise) {
    out["ap"] = r.ap;
    out["auc"] = r.auc;
  } else {
    out["ap"] = nullptr;
    out["auc"] = nullptr;
  }
  return out;
}

sdg::IndexRange pick_range(const sdg::DatasetSplit& split, const std::string& name) {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  if (name == "test") return split.test;
  throw sdg::FormatError("unknown split '" + name + "' (train, val or test)");
}

void configure_threads() {
  if (const char* env = std::getenv("SDG_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) Eigen::setNbThreads(n);
  }
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string events, out;
  bool bipartite = false;
  bool undirected = false;
};

int cmd_ingest(const IngestArgs& a) {
  auto res = sdg::load_events(a.events, a.bipartite);
  ensure_dir(a.out);
  const fs::path out(a.out);
  sdg::write_node_map(out / "node_map.csv", res.original_ids);
  sdg::write_event_log(out / "events.bin", res.log);
  json stats;
  stats["num_events"] = res.log.size();
  stats["num_nodes"] = res.log.num_nodes;
  stats["repeat_ratio"] = sdg::repeat_ratio(res.log);
  stats["bipartite"] = res.log.bipartite;
  stats["undirected_history"] = a.undirected || !a.bipartite;
  stats["resorted"] = res.resorted;
  stats["first_ts"] = res.log.empty() ? 0.0 : res.log.events.front().ts;
  stats["last_ts"] = res.log.empty() ? 0.0 : res.log.events.back().ts;
  write_text(out / "stats.json", stats.dump(2) + "\n");
  if (res.resorted) std::cerr << "warning: input was not in timestamp order and was sorted\n";
  std::cout << stats.dump() << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, data, out;
  std::vector<std::string> sets;
};

sdg::RunConfig resolve_config(const std::string& path, const std::vector<std::string>& sets) {
  sdg::RunConfig cfg;
  if (!path.empty()) cfg = sdg::load_run_config(path);
  for (const auto& s : sets) sdg::apply_override(cfg, s);
  // A short override of max_epochs should not trip the patience bound.
  if (cfg.train.patience > cfg.train.max_epochs) cfg.train.patience = cfg.train.max_epochs;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw sdg::FormatError(std::string("invalid config: ") + e.what());
  }
  return cfg;
}

int cmd_train(const TrainArgs& a) {
  auto cfg = resolve_config(a.config, a.sets);
  if (!a.data.empty()) cfg.data_dir = a.data;
  if (!a.out.empty()) cfg.out_dir = a.out;
  if (cfg.data_dir.empty() || cfg.out_dir.empty())
    throw sdg::FormatError("train needs --data and --out (or data_dir / out_dir keys)");
  const auto data = load_data_dir(cfg.data_dir);
  const bool undirected = cfg.undirected_history == "auto" ? data.undirected_history
                                                             : cfg.resolve_undirected(data.log.bipartite);
  const fs::path out(cfg.out_dir);
  ensure_dir(out);
  write_text(out / "config.txt", sdg::to_text(cfg));

  const auto split = sdg::chronological_split(data.log, cfg.train_frac, cfg.val_frac);
  const auto index = sdg::build_index(data.log, undirected);
  sdg::SDGModel<float> model(cfg.model, data.log.num_nodes, cfg.train.seed);
  const auto hash = sdg::hex64(sdg::config_hash(cfg.model, data.log.num_nodes));

  std::vector<json> lines;
  const fs::path metrics_path = out / "metrics.jsonl";
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) throw sdg::IoError("cannot write " + metrics_path.string());
  auto on_epoch = [&](const sdg::EpochRecord& r) {
    json line;
    line["epoch"] = r.epoch;
    line["train_loss"] = {{"diff", r.train_loss.l_diff},
                          {"last", r.train_loss.l_last},
                          {"inter", r.train_loss.l_inter},
                          {"total", r.train_loss.l_total}};
    line["val_mrr"] = r.val_mrr;
    line["test"] = nullptr;
    line["seed"] = cfg.train.seed;
    line["config_hash"] = hash;
    line["wall_time"] = r.wall_time;
    metrics << line.dump() << "\n" << std::flush;
    lines.push_back(std::move(line));
    std::cerr << "epoch " << r.epoch << " loss " << r.train_loss.l_total << " val_mrr " << r.val_mrr
              << "\n";
  };
  const auto result = sdg::train(model, data.log, index, split, cfg.train, on_epoch);
  metrics.close();
  sdg::save_checkpoint(out / "checkpoint.bin", model);

  sdg::EvalOptions opts;
  opts.num_negatives = cfg.train.eval_negatives;
  opts.seed = cfg.train.seed;
  opts.hr_k = cfg.hr_k;
  opts.batch_size = cfg.train.eval_batch_size;
  const auto pool = sdg::negative_pool(data.log);
  json test = nullptr;
  if (!split.test.empty())
    test = report_json(sdg::evaluate(model, data.log, index, split.test, pool, opts));

  // The last line carries the best checkpoint's test metrics.
  lines.back()["test"] = test;
  lines.back()["best_epoch"] = result.best_epoch;
  lines.back()["best_val_mrr"] = result.best_val_mrr;
  std::string all;
  for (const auto& l : lines) all += l.dump() + "\n";
  write_text(metrics_path, all);
  std::cout << lines.back().dump() << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, split = "test", negatives, out, config;
  std::size_t num_neg = 0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t batch_size = 200;
};

int cmd_eval(const EvalArgs& a) {
  const auto model = sdg::load_checkpoint(a.checkpoint);
  const auto data = load_data_dir(a.data);
  if (data.log.num_nodes != model->num_nodes())
    throw sdg::CheckpointMismatch("checkpoint expects " + std::to_string(model->num_nodes()) +
                                  " nodes, data has " + std::to_string(data.log.num_nodes));
  sdg::RunConfig cfg;
  if (!a.config.empty()) {
    cfg = sdg::load_run_config(a.config);
    if (sdg::config_hash(cfg.model, data.log.num_nodes) !=
        sdg::config_hash(model->config(), model->num_nodes()))
      throw sdg::CheckpointMismatch("config " + a.config + " does not match checkpoint " +
                                    a.checkpoint);
  }
  const bool undirected = cfg.undirected_history == "auto" ? data.undirected_history
                                                             : cfg.resolve_undirected(data.log.bipartite);
  const auto split = sdg::chronological_split(data.log, cfg.train_frac, cfg.val_frac);
  const auto range = pick_range(split, a.split);
  const auto index = sdg::build_index(data.log, undirected);

  sdg::EvalOptions opts;
  opts.seed = a.seed_set ? a.seed : cfg.train.seed;
  opts.num_negatives = a.num_neg ? a.num_neg : cfg.train.eval_negatives;
  opts.sigma = a.sigma;
  opts.hr_k = cfg.hr_k;
  opts.batch_size = a.batch_size;
  std::vector<std::vector<sdg::NodeId>> lists;
  if (!a.negatives.empty()) {
    lists = sdg::load_negatives_file(a.negatives, data.log.num_nodes, range.size());
    opts.negatives = &lists;
  }
  const auto pool = sdg::negative_pool(data.log);
  const auto rep = sdg::evaluate(*model, data.log, index, range, pool, opts);

  json out = report_json(rep);
  out["split"] = a.split;
  out["num_negatives"] = a.negatives.empty() ? json(opts.num_negatives) : json("file");
  out["sigma"] = a.sigma;
  out["seed"] = opts.seed;
  out["config_hash"] = sdg::hex64(sdg::config_hash(model->config(), model->num_nodes()));
  if (a.out.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    write_text(a.out, out.dump(2) + "\n");
  }
  return 0;
}

struct NegArgs {
  std::string data, split = "test", out, config;
  std::size_t num_neg = 100;
  std::uint64_t seed = 0;
};

int cmd_negatives(const NegArgs& a) {
  const auto data = load_data_dir(a.data);
  sdg::RunConfig cfg;
  if (!a.config.empty()) cfg = sdg::load_run_config(a.config);
  const auto split = sdg::chronological_split(data.log, cfg.train_frac, cfg.val_frac);
  const auto range = pick_range(split, a.split);
  const auto lists = sdg::generate_eval_negatives(data.log, range, sdg::negative_pool(data.log),
                                                  a.num_neg, a.seed);
  sdg::write_negatives_file(a.out, lists);
  return 0;
}

int cmd_export(const std::string& checkpoint, const std::string& out) {
  const auto model = sdg::load_checkpoint(checkpoint);
  sdg::export_embeddings(*model, out);
  return 0;
}

int cmd_synth(const std::string& out, std::size_t nodes, std::size_t events, std::uint64_t seed) {
  const auto g = sdg::make_round_robin_graph(nodes, events, seed);
  sdg::write_events_csv(out, g.log);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SDG sequence diffusion for temporal link prediction"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Convert an events CSV into a data directory");
  c_ingest->add_option("--events", ingest.events, "CSV with src,dst,ts header")->required();
  c_ingest->add_option("--out", ingest.out, "Output directory")->required();
  c_ingest->add_flag("--bipartite", ingest.bipartite, "Sources and destinations are disjoint");
  c_ingest->add_flag("--undirected-history", ingest.undirected,
                     "Also index each event under its destination");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model");
  c_train->add_option("--config", train.config, "key=value config file");
  c_train->add_option("--set", train.sets, "Override, key=value (repeatable)");
  c_train->add_option("--data", train.data, "Ingested data directory");
  c_train->add_option("--out", train.out, "Run output directory");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  c_eval->add_option("--checkpoint", ev.checkpoint)->required();
  c_eval->add_option("--data", ev.data)->required();
  c_eval->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val", "test"}));
  auto* neg_opt = c_eval->add_option("--negatives", ev.negatives, "Per-event negatives file");
  c_eval->add_option("--num-neg", ev.num_neg, "Random negatives per event")->excludes(neg_opt);
  c_eval->add_option("--sigma", ev.sigma, "Fraction of history positions to perturb")
      ->check(CLI::Range(0.0, 1.0));
  c_eval->add_option("--config", ev.config, "Run config (split fractions, seed, hash check)");
  auto* seed_opt = c_eval->add_option("--seed", ev.seed);
  c_eval->add_option("--batch-size", ev.batch_size)->check(CLI::PositiveNumber);
  c_eval->add_option("--out", ev.out, "Report path (stdout when omitted)");

  NegArgs negs;
  auto* c_negs = app.add_subcommand("negatives", "Write seeded evaluation negatives");
  c_negs->add_option("--data", negs.data)->required();
  c_negs->add_option("--split", negs.split)->check(CLI::IsMember({"train", "val", "test"}));
  c_negs->add_option("--num-neg", negs.num_neg)->check(CLI::PositiveNumber);
  c_negs->add_option("--seed", negs.seed);
  c_negs->add_option("--config", negs.config);
  c_negs->add_option("--out", negs.out)->required();

  std::string exp_ckpt, exp_out;
  auto* c_export = app.add_subcommand("export-emb", "Export node embeddings as CSV");
  c_export->add_option("--checkpoint", exp_ckpt)->required();
  c_export->add_option("--out", exp_out)->required();

  std::string syn_out;
  std::size_t syn_nodes = 200, syn_events = 5000;
  std::uint64_t syn_seed = 0;
  auto* c_synth = app.add_subcommand("synth", "Write the round-robin synthetic events CSV");
  c_synth->add_option("--out", syn_out)->required();
  c_synth->add_option("--nodes", syn_nodes);
  c_synth->add_option("--events", syn_events);
  c_synth->add_option("--seed", syn_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  ev.seed_set = seed_opt->count() > 0;
  configure_threads();

  try {
    if (*c_ingest) return cmd_ingest(ingest);
    if (*c_train) return cmd_train(train);
    if (*c_eval) return cmd_eval(ev);
    if (*c_negs) return cmd_negatives(negs);
    if (*c_export) return cmd_export(exp_ckpt, exp_out);
    if (*c_synth) return cmd_synth(syn_out, syn_nodes, syn_events, syn_seed);
  } catch (const sdg::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const sdg::NonFiniteError& e) {
    std::cerr << "non-finite value: " << e.what() << "\n";
    return kExitNonFinite;
  } catch (const sdg::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const sdg::CheckpointMismatch& e) {
    std::cerr << "checkpoint mismatch: " << e.what() << "\n";
    return kExitMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
