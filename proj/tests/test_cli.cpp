#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>
#include <string>

#include "json.hpp"
#include "sdg/event_store.hpp"
#include "sdg/train.hpp"
#include "test_util.hpp"

using json = nlohmann::json;
using sdg::testing::TempDir;
using sdg::testing::read_file;
using sdg::testing::write_file;

namespace {

std::string quote(const std::string& s) { return "'" + s + "'"; }

// Runs the CLI with stdout and stderr captured next to the temp dir; returns the exit status.
int run(const TempDir& dir, const std::string& args, std::string* out = nullptr) {
  const auto o = (dir / "stdout.txt").string();
  const auto e = (dir / "stderr.txt").string();
  const std::string cmd = quote(SDG_CLI_PATH) + " " + args + " >" + quote(o) + " 2>" + quote(e);
  const int status = std::system(cmd.c_str());
  if (out) *out = read_file(o);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Small model so one epoch on a toy graph takes well under a second.
const std::string kSmall =
    " --set history_length=4 --set dim=8 --set heads=2 --set ffn_dim=16 --set diffusion_steps=4"
    " --set batch_size=100 --set eval_negatives=20 --set max_epochs=1";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    ASSERT_EQ(run(dir_, "synth --out " + p("events.csv") + " --nodes 30 --events 600 --seed 2"), 0);
    ASSERT_EQ(run(dir_, "ingest --events " + p("events.csv") + " --out " + p("data")), 0);
  }
  std::string p(const std::string& name) const { return quote((dir_ / name).string()); }
  void train_to(const std::string& out, const std::string& extra = "") {
    ASSERT_EQ(run(dir_, "train --data " + p("data") + " --out " + p(out) + kSmall + extra), 0)
        << read_file(dir_ / "stderr.txt");
  }
  std::vector<json> metrics(const std::string& run_dir) const {
    std::vector<json> lines;
    std::istringstream in(read_file(dir_ / run_dir / "metrics.jsonl"));
    for (std::string l; std::getline(in, l);)
      if (!l.empty()) lines.push_back(json::parse(l));
    return lines;
  }
  TempDir dir_;
};

}  // namespace

TEST(CliIngest, ThreeEventStats) {
  TempDir dir;
  write_file(dir / "ev.csv", "src,dst,ts\na,b,1\nb,c,2\na,b,3\n");
  std::string out;
  ASSERT_EQ(run(dir, "ingest --events " + quote((dir / "ev.csv").string()) + " --out " +
                         quote((dir / "d").string()), &out),
            0);
  const auto stats = json::parse(read_file(dir / "d" / "stats.json"));
  EXPECT_EQ(stats["num_events"], 3);
  EXPECT_EQ(stats["num_nodes"], 3);
  EXPECT_EQ(json::parse(out), stats);
  const auto loaded = sdg::load_events((dir / "ev.csv").string(), false);
  EXPECT_DOUBLE_EQ(stats["repeat_ratio"].get<double>(), sdg::repeat_ratio(loaded.log));
  EXPECT_DOUBLE_EQ(stats["repeat_ratio"].get<double>(), 1.0 / 3.0);
}

TEST(CliIngest, IdempotentAndFormatErrors) {
  TempDir dir;
  write_file(dir / "ev.csv", "src,dst,ts\n1,2,1.5\n2,3,0.5\n3,1,2\n2,1,7\n");
  const auto ev = quote((dir / "ev.csv").string());
  ASSERT_EQ(run(dir, "ingest --events " + ev + " --out " + quote((dir / "a").string())), 0);
  const auto first = read_file(dir / "a" / "events.bin") + read_file(dir / "a" / "node_map.csv") +
                     read_file(dir / "a" / "stats.json");
  ASSERT_EQ(run(dir, "ingest --events " + ev + " --out " + quote((dir / "a").string())), 0);
  EXPECT_EQ(read_file(dir / "a" / "events.bin") + read_file(dir / "a" / "node_map.csv") +
                read_file(dir / "a" / "stats.json"),
            first);

  write_file(dir / "bad.csv", "src,dst,ts\n1,2,1\n1,2,not_a_time\n");
  EXPECT_EQ(run(dir, "ingest --events " + quote((dir / "bad.csv").string()) + " --out " +
                         quote((dir / "b").string())),
            2);
  EXPECT_NE(read_file(dir / "stderr.txt").find("3"), std::string::npos);
  EXPECT_EQ(run(dir, "ingest --events " + quote((dir / "missing.csv").string()) + " --out " +
                         quote((dir / "b").string())),
            4);
}

TEST_F(CliTest, OneEpochWritesOneLineAndConfigEcho) {
  train_to("run");
  const auto lines = metrics("run");
  ASSERT_EQ(lines.size(), 1u);
  const auto& last = lines.back();
  for (const char* k : {"epoch", "train_loss", "val_mrr", "seed", "config_hash", "wall_time",
                        "best_epoch", "best_val_mrr"})
    EXPECT_TRUE(last.contains(k)) << k;
  ASSERT_TRUE(last["test"].is_object());
  for (const char* k : {"mrr", "hr", "ap", "auc"}) EXPECT_TRUE(last["test"].contains(k)) << k;
  EXPECT_TRUE(std::filesystem::exists(dir_ / "run" / "checkpoint.bin"));

  // The echoed config reproduces the run.
  ASSERT_EQ(run(dir_, "train --config " + p("run/config.txt") + " --out " + p("again")), 0);
  auto a = metrics("run"), b = metrics("again");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i].erase("wall_time");
    b[i].erase("wall_time");
    EXPECT_EQ(a[i], b[i]);
  }
  EXPECT_EQ(read_file(dir_ / "run" / "checkpoint.bin"), read_file(dir_ / "again" / "checkpoint.bin"));
}

TEST_F(CliTest, SameSeedGivesIdenticalMetrics) {
  train_to("r1", " --set seed=7 --set max_epochs=2");
  train_to("r2", " --set seed=7 --set max_epochs=2");
  train_to("r3", " --set seed=8 --set max_epochs=2");
  auto a = metrics("r1"), b = metrics("r2"), c = metrics("r3");
  ASSERT_EQ(a.size(), 2u);
  ASSERT_EQ(b.size(), 2u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i].erase("wall_time");
    b[i].erase("wall_time");
    c[i].erase("wall_time");
    EXPECT_EQ(a[i].dump(), b[i].dump());
  }
  EXPECT_NE(a[0]["train_loss"], c[0]["train_loss"]);
}

TEST_F(CliTest, ConfigErrors) {
  write_file(dir_ / "bad_key", "dimension = 8\n");
  EXPECT_EQ(run(dir_, "train --config " + p("bad_key") + " --data " + p("data") + " --out " + p("x")), 2);
  EXPECT_EQ(run(dir_, "train --data " + p("data") + " --out " + p("x") + " --set dim=abc"), 2);
  EXPECT_EQ(run(dir_, "train --data " + p("data") + " --out " + p("x") + " --set dim=30 --set heads=4"), 2);
  EXPECT_EQ(run(dir_, "train --config " + p("nope") + " --data " + p("data") + " --out " + p("x")), 4);
  EXPECT_EQ(run(dir_, "train --data " + p("no_data") + " --out " + p("x") + kSmall), 4);
  EXPECT_NE(run(dir_, "frobnicate"), 0);
}

TEST_F(CliTest, EvalSchemaSigmaAndMismatch) {
  train_to("run");
  std::string out;
  ASSERT_EQ(run(dir_, "eval --checkpoint " + p("run/checkpoint.bin") + " --data " + p("data") +
                          " --split test --num-neg 1",
                &out),
            0);
  const auto rep = json::parse(out);
  for (const char* k : {"mrr", "hr", "ap", "auc"}) EXPECT_TRUE(rep.contains(k)) << k;
  EXPECT_TRUE(rep["ap"].is_number());

  const std::string base = "eval --checkpoint " + p("run/checkpoint.bin") + " --data " + p("data") +
                           " --config " + p("run/config.txt") + " --num-neg 20";
  ASSERT_EQ(run(dir_, base + " --out " + p("plain.json")), 0);
  ASSERT_EQ(run(dir_, base + " --sigma 0.0 --out " + p("sigma0.json")), 0);
  auto plain = json::parse(read_file(dir_ / "plain.json"));
  auto sigma0 = json::parse(read_file(dir_ / "sigma0.json"));
  EXPECT_EQ(plain.dump(), sigma0.dump());
  ASSERT_EQ(run(dir_, base + " --sigma 0.5 --out " + p("sigma5.json")), 0);
  EXPECT_DOUBLE_EQ(json::parse(read_file(dir_ / "sigma5.json"))["sigma"].get<double>(), 0.5);

  // Config whose model part differs from the checkpoint.
  auto cfg = read_file(dir_ / "run" / "config.txt");
  const auto at = cfg.find("dim = 8\n");
  ASSERT_NE(at, std::string::npos);
  cfg.replace(at, 8, "dim = 16\n");
  write_file(dir_ / "other.txt", cfg);
  EXPECT_EQ(run(dir_, "eval --checkpoint " + p("run/checkpoint.bin") + " --data " + p("data") +
                          " --config " + p("other.txt")),
            5);
  // Data with a different node count.
  ASSERT_EQ(run(dir_, "synth --out " + p("small.csv") + " --nodes 20 --events 300"), 0);
  ASSERT_EQ(run(dir_, "ingest --events " + p("small.csv") + " --out " + p("small")), 0);
  EXPECT_EQ(run(dir_, "eval --checkpoint " + p("run/checkpoint.bin") + " --data " + p("small")), 5);
  write_file(dir_ / "junk.bin", "garbage");
  EXPECT_EQ(run(dir_, "eval --checkpoint " + p("junk.bin") + " --data " + p("data")), 5);
  EXPECT_EQ(run(dir_, "eval --checkpoint " + p("absent.bin") + " --data " + p("data")), 4);
}

TEST_F(CliTest, NegativesFileReproducesSeededRun) {
  train_to("run");
  ASSERT_EQ(run(dir_, "negatives --data " + p("data") + " --split test --num-neg 25 --seed 5 --out " +
                          p("negs.txt")),
            0);
  const std::string base = "eval --checkpoint " + p("run/checkpoint.bin") + " --data " + p("data") +
                           " --split test --seed 5";
  ASSERT_EQ(run(dir_, base + " --num-neg 25 --out " + p("gen.json")), 0);
  ASSERT_EQ(run(dir_, base + " --negatives " + p("negs.txt") + " --out " + p("file.json")), 0);
  auto gen = json::parse(read_file(dir_ / "gen.json"));
  auto file = json::parse(read_file(dir_ / "file.json"));
  gen.erase("num_negatives");
  file.erase("num_negatives");
  EXPECT_EQ(gen.dump(), file.dump());

  // A list for the train split does not line up with the test events.
  ASSERT_EQ(run(dir_, "negatives --data " + p("data") + " --split train --num-neg 25 --out " +
                          p("train.txt")),
            0);
  EXPECT_NE(run(dir_, base + " --negatives " + p("train.txt")), 0);
}

TEST_F(CliTest, ExportEmbeddings) {
  train_to("run");
  ASSERT_EQ(run(dir_, "export-emb --checkpoint " + p("run/checkpoint.bin") + " --out " + p("emb.csv")), 0);
  std::istringstream in(read_file(dir_ / "emb.csv"));
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "node_id,dim_0,dim_1,dim_2,dim_3,dim_4,dim_5,dim_6,dim_7");
  std::size_t rows = 0;
  for (std::string l; std::getline(in, l);) rows += !l.empty();
  EXPECT_EQ(rows, 30u);
  EXPECT_EQ(run(dir_, "export-emb --checkpoint " + p("run/checkpoint.bin") + " --out " +
                          p("no/such/dir/emb.csv")),
            4);
}
