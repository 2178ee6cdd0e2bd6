#include <gtest/gtest.h>

#include <cstdlib>

#include "gocbed/cli.hpp"

using namespace gocbed;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "gocbed");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = gocbed::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

/// metrics.jsonl without the wall-clock field.
std::string metrics_sans_time(const fs::path& p) {
  std::istringstream is(slurp(p));
  std::string line, out;
  while (std::getline(is, line)) {
    json j = json::parse(line);
    j.erase("wall_time");
    out += j.dump() + "\n";
  }
  return out;
}

json tiny_config() {
  return {{"schema", "gocbed.train/1"},
          {"objective", "goal_z"},
          {"T", 2},
          {"n_step", 3},
          {"n_env", 4},
          {"seed", 1},
          {"graph", {{"kind", "toy"}, {"name", "three_node"}}},
          {"mechanism", {{"kind", "linear"}}},
          {"query", {{"kind", "effect"}, {"targets", {2}}, {"node", 1}, {"psi_mean", 2.0}}},
          {"policy", {{"embedding", 8}, {"layers", 1}, {"heads", 2}, {"key_size", 4}}},
          {"posterior", {{"embedding", 8}, {"layers", 1}, {"heads", 2}, {"key_size", 4}, {"hidden", {16}}, {"n_trans", 2}}},
          {"eval", {{"n_rollouts", 32}}}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("gocbed_cli_" + std::to_string(::getpid()) + "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    config_ = dir_ / "tiny.json";
    std::ofstream(config_) << tiny_config().dump(2);
    ::setenv("GOCBED_OUT", (dir_ / "out").c_str(), 1);
  }
  void TearDown() override {
    ::unsetenv("GOCBED_OUT");
    fs::remove_all(dir_);
  }

  fs::path train(const std::string& name, std::vector<std::string> extra = {}) {
    const fs::path out = dir_ / name;
    std::vector<std::string> args = {"train", "--config", config_.string(), "--out", out.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    Result r = invoke(args);
    EXPECT_EQ(r.code, 0) << r.err;
    return out;
  }

  fs::path dir_, config_;
};

}  // namespace

TEST(BundledConfigs, AllParse) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(GOCBED_CONFIG_DIR))
    if (e.path().extension() == ".json") {
      EXPECT_NO_THROW(load_train_config(e.path())) << e.path();
      ++n;
    }
  EXPECT_GE(n, 5);
  // Graph paths resolve next to the config file.
  EXPECT_NO_THROW(World(load_train_config(fs::path(GOCBED_CONFIG_DIR) / "mlp_file_graph.json")));
}

TEST_F(CliTest, TrainWritesManifestAndArtifacts) {
  const fs::path out = train("run");
  json m = json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(m["schema"], cli::kManifestSchema);
  EXPECT_EQ(m["seed"], 1);
  EXPECT_EQ(m["config_hash"], config_hash(m["config"]));
  for (const auto& [k, v] : m["artifacts"].items()) EXPECT_TRUE(fs::exists(out / v.get<std::string>())) << k;
  EXPECT_FALSE(m["source_revision"].get<std::string>().empty());
}

TEST_F(CliTest, RefusesToClobberWithoutOverwrite) {
  const fs::path out = train("run");
  Result r = invoke({"train", "--config", config_.string(), "--out", out.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--overwrite"), std::string::npos);
  train("run", {"--overwrite"});
}

TEST_F(CliTest, SameSeedGivesIdenticalMetrics) {
  const fs::path a = train("a"), b = train("b");
  EXPECT_EQ(metrics_sans_time(a / "metrics.jsonl"), metrics_sans_time(b / "metrics.jsonl"));
  const fs::path c = train("c", {"--seed", "2"});
  EXPECT_NE(metrics_sans_time(a / "metrics.jsonl"), metrics_sans_time(c / "metrics.jsonl"));
}

TEST_F(CliTest, DefaultOutputRootFromEnvironment) {
  Result r = invoke({"train", "--config", config_.string(), "--seed", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  int runs = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "out")) {
    EXPECT_TRUE(fs::exists(e.path() / "manifest.json"));
    EXPECT_NE(e.path().filename().string().find("tiny-seed4-"), std::string::npos);
    ++runs;
  }
  EXPECT_EQ(runs, 1);
}

TEST_F(CliTest, ConfigErrorsExitTwoAndNameTheField) {
  json j = tiny_config();
  j.erase("mechanism");
  std::ofstream(dir_ / "bad.json") << j.dump();
  Result r = invoke({"train", "--config", (dir_ / "bad.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("mechanism"), std::string::npos) << r.err;
  j = tiny_config();
  j["policy"]["embeding"] = 8;
  std::ofstream(dir_ / "typo.json") << j.dump();
  r = invoke({"train", "--config", (dir_ / "typo.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("embeding"), std::string::npos) << r.err;
  EXPECT_EQ(invoke({"train", "--config", "no_such_config"}).code, 2);
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"frobnicate"}).code, 2);
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST_F(CliTest, EvalWritesPerSeedAggregateAndBaseline) {
  const fs::path run = train("run");
  const fs::path out = dir_ / "eval";
  Result r = invoke({"eval", "--checkpoint", (run / "final.ckpt").string(), "--seeds", "1,2", "--n-rollouts", "16",
                  "--baseline", "random", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* stem : {"eval_seed1", "eval_seed2", "eval_aggregate", "random_seed1", "random_seed2", "random_aggregate"})
    for (const char* ext : {".json", ".csv"}) EXPECT_TRUE(fs::exists(out / (std::string(stem) + ext))) << stem << ext;
  json agg = json::parse(slurp(out / "eval_aggregate.json"));
  EXPECT_EQ(agg["seeds"], json({1, 2}));
  EXPECT_EQ(agg["rows"].size(), 3u);
  json base = json::parse(slurp(out / "random_seed1.json"));
  EXPECT_EQ(base["policy"], "random");
  // Beyond the trained horizon: a warning, then a normal report.
  r = invoke({"eval", "--checkpoint", (run / "final.ckpt").string(), "--seeds", "1", "--n-rollouts", "8", "--stages", "4",
           "--out", (dir_ / "eval4").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("warning"), std::string::npos);
  EXPECT_EQ(json::parse(slurp(dir_ / "eval4" / "eval_seed1.json"))["rows"].size(), 5u);
}

TEST_F(CliTest, EstimateSweepIsReproducibleCsv) {
  const fs::path out = dir_ / "nmc.csv";
  std::vector<std::string> args = {"estimate", "--estimator", "nmc", "--m", "10,30,100", "--outer", "40", "--seed", "3", "--out", out.string()};
  ASSERT_EQ(invoke(args).code, 0);
  const std::string first = slurp(out);
  std::istringstream is(first);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0].rfind("# config_hash=", 0), 0u);
  EXPECT_EQ(lines[1], "estimator,m,outer,mean,stderr,n");
  EXPECT_EQ(lines[2].rfind("nmc,10,40,", 0), 0u);
  EXPECT_EQ(invoke(args).code, 2);
  args.push_back("--overwrite");
  ASSERT_EQ(invoke(args).code, 0);
  EXPECT_EQ(slurp(out), first);
}

TEST_F(CliTest, EstimateBoundAndNonlinearNmc) {
  const fs::path out = dir_ / "bound.csv";
  Result r = invoke({"estimate", "--setup", config_.string(), "--estimator", "bound", "--m", "8", "--outer", "16", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(slurp(out).find("\nbound,8,16,"), std::string::npos);
  r = invoke({"estimate", "--setup", (fs::path(GOCBED_CONFIG_DIR) / "mlp_file_graph.json").string(), "--estimator", "nmc",
           "--out", (dir_ / "x.csv").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("linear"), std::string::npos);
}

TEST_F(CliTest, IngestNormalizesAndRejectsCycles) {
  std::ofstream(dir_ / "g.txt") << "# nodes 4\n0 1\n2 1\n";
  Result r = invoke({"ingest", "--adjacency", (dir_ / "g.txt").string(), "--out", (dir_ / "g").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  json g = json::parse(slurp(dir_ / "g" / "graph.json"));
  EXPECT_EQ(g["d"], 4);
  EXPECT_EQ(g["edges"].size(), 2u);
  EXPECT_EQ(slurp(dir_ / "g" / "graph.csv"), "0,1,0,0\n0,0,0,0\n0,1,0,0\n0,0,0,0\n");
  std::ofstream(dir_ / "cyc.txt") << "0 1\n1 0\n";
  EXPECT_EQ(invoke({"ingest", "--adjacency", (dir_ / "cyc.txt").string(), "--out", (dir_ / "c").string()}).code, 2);
}
