#include <gtest/gtest.h>

#include "gocbed/evaluation.hpp"
#include "stats.hpp"

using namespace gocbed;
using gocbed::testing::family_threshold;

namespace {

std::vector<std::uint8_t> adjacency_from_bits(int d, unsigned bits) {
  std::vector<std::uint8_t> a(static_cast<std::size_t>(d) * d, 0);
  int k = 0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (i != j) a[i * d + j] = (bits >> k++) & 1u;
  return a;
}

// Differing directed slots, minus one for every pair that is an exact reversal.
int slot_oracle(int d, const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  int slots = 0, reversals = 0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (i != j) slots += a[i * d + j] != b[i * d + j];
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const bool ab = a[i * d + j] && !a[j * d + i] && !b[i * d + j] && b[j * d + i];
      const bool ba = !a[i * d + j] && a[j * d + i] && b[i * d + j] && !b[j * d + i];
      reversals += ab || ba;
    }
  return slots - reversals;
}

}  // namespace

TEST(Shd, HandCases) {
  Dag empty = Dag::empty(3);
  EXPECT_EQ(shd(empty, empty), 0);
  EXPECT_EQ(shd(empty, Dag::from_edges(3, {{0, 1}})), 1);
  EXPECT_EQ(shd(Dag::from_edges(3, {{0, 1}}), Dag::from_edges(3, {{1, 0}})), 1);
  EXPECT_EQ(shd(Dag::from_edges(3, {{0, 1}, {1, 2}}), Dag::from_edges(3, {{1, 0}, {0, 2}})), 3);
  EXPECT_THROW(shd(empty, Dag::empty(4)), std::invalid_argument);
}

TEST(Shd, MatchesSlotOracleOnDags) {
  const int d = 3;
  std::vector<std::vector<std::uint8_t>> dags;
  for (unsigned bits = 0; bits < 64; ++bits) {
    auto a = adjacency_from_bits(d, bits);
    if (is_acyclic(d, a)) dags.push_back(a);
  }
  ASSERT_EQ(dags.size(), 25u);
  for (const auto& a : dags)
    for (const auto& b : dags) EXPECT_EQ(shd(d, a, b), slot_oracle(d, a, b));
}

TEST(Shd, MetricAxiomsExhaustiveD3) {
  const int d = 3;
  std::vector<std::vector<std::uint8_t>> all;
  for (unsigned bits = 0; bits < 64; ++bits) all.push_back(adjacency_from_bits(d, bits));
  for (std::size_t x = 0; x < all.size(); ++x)
    for (std::size_t y = 0; y < all.size(); ++y) {
      const int dxy = shd(d, all[x], all[y]);
      ASSERT_EQ(dxy, shd(d, all[y], all[x]));
      ASSERT_EQ(dxy == 0, x == y);
      for (std::size_t z = 0; z < all.size(); ++z) ASSERT_LE(dxy, shd(d, all[x], all[z]) + shd(d, all[z], all[y]));
    }
}

TEST(ExpectedShd, ConcentratedPosteriorIsZero) {
  Dag truth = Dag::from_edges(4, {{0, 1}, {1, 2}, {0, 3}});
  Matrix p = Matrix::Zero(4, 4);
  for (auto [i, j] : truth.edges()) p(i, j) = 1.0;
  Rng rng(1);
  McEstimate e = expected_shd(p, truth, 50, rng);
  EXPECT_EQ(e.mean, 0.0);
  EXPECT_EQ(e.stderr_, 0.0);
}

TEST(ExpectedShd, HalfProbabilitiesMatchEnumeration) {
  const int d = 3;
  Dag truth = Dag::empty(d);
  double total = 0.0;
  int count = 0;
  for (unsigned bits = 0; bits < 64; ++bits) {
    auto a = adjacency_from_bits(d, bits);
    if (!is_acyclic(d, a)) continue;
    total += shd(d, a, truth.adjacency());
    ++count;
  }
  const double exact = total / count;
  Matrix p = Matrix::Constant(d, d, 0.5);
  p.diagonal().setZero();
  Rng rng(2);
  McEstimate e = expected_shd(p, truth, 20000, rng);
  EXPECT_LT(std::abs(e.mean - exact), 3.0 * e.stderr_) << e.mean << " vs " << exact;
  EXPECT_THROW(expected_shd(p, truth, 1, rng), std::invalid_argument);
}

TEST(F1, HandCases) {
  Dag truth = Dag::from_edges(3, {{0, 1}, {1, 2}});
  Matrix perfect = Matrix::Zero(3, 3);
  perfect(0, 1) = perfect(1, 2) = 0.9;
  EXPECT_EQ(f1_edges(perfect, truth), 1.0);
  EXPECT_EQ(f1_edges(Matrix::Zero(3, 3), truth), 0.0);
  Matrix half = Matrix::Zero(3, 3);
  half(0, 1) = 0.8;  // caught
  half(2, 0) = 0.7;  // false
  EXPECT_EQ(f1_edges(half, truth), 0.5);
  EXPECT_EQ(f1_edges(Matrix::Zero(3, 3), Dag::empty(3)), 1.0);
}

TEST(F1, BoundedAndMonotoneInTruePositives) {
  Rng rng(5);
  const int d = 5;
  for (int trial = 0; trial < 300; ++trial) {
    Dag truth = sample_dag(ErdosRenyi{2.0}, d, rng);
    Matrix p = Matrix::Zero(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (i != j) p(i, j) = uniform(rng);
    const double f = f1_edges(p, truth);
    ASSERT_GE(f, 0.0);
    ASSERT_LE(f, 1.0);
    // Turning one missed true edge into a hit never lowers F1.
    for (auto [i, j] : truth.edges())
      if (p(i, j) <= 0.5) {
        Matrix q = p;
        q(i, j) = 0.9;
        ASSERT_GE(f1_edges(q, truth), f);
        break;
      }
  }
}

TEST(RandomDesign, UniformTargetsAndRange) {
  const int d = 7, n = 100000;
  Rng rng(11);
  std::vector<int> counts(d, 0);
  for (int k = 0; k < n; ++k) {
    Design des = random_design(d, -10.0, 10.0, rng);
    ASSERT_GE(des.values[0], -10.0);
    ASSERT_LE(des.values[0], 10.0);
    ++counts[des.targets[0]];
  }
  const double p = 1.0 / d, sd = std::sqrt(n * p * (1 - p));
  for (int c : counts) EXPECT_LT(std::abs(c - n * p) / sd, family_threshold(d));
  Rng a(3), b(3);
  for (int k = 0; k < 20; ++k) EXPECT_EQ(random_design(d, -10, 10, a), random_design(d, -10, 10, b));
}

// ---------------------------------------------------------------------------
// Stage sweeps on small trained models

namespace {

json tiny(const std::string& objective) {
  json j = {{"schema", "gocbed.train/1"},
            {"objective", objective},
            {"T", 2},
            {"n_step", 3},
            {"n_env", 4},
            {"seed", 3},
            {"graph", {{"kind", "toy"}, {"name", "three_node"}}},
            {"mechanism", {{"kind", "linear"}}},
            {"query", {{"kind", "effect"}, {"targets", {2}}, {"node", 1}, {"psi_mean", 2.0}}},
            {"policy", {{"embedding", 8}, {"layers", 1}, {"heads", 2}, {"key_size", 4}}},
            {"posterior", {{"embedding", 8}, {"layers", 1}, {"heads", 2}, {"key_size", 4}, {"hidden", {16}}, {"n_trans", 2}}}};
  if (objective == "goal_graph") {
    j["graph"] = {{"kind", "er"}, {"d", 4}, {"expected_degree", 1.0}};
    j["query"] = {{"kind", "graph"}};
  }
  return j;
}

}  // namespace

TEST(StageSweep, RowsAndPriorStage) {
  Trainer tr(parse_train_config(tiny("goal_z")));
  for (int k = 0; k < 3; ++k) tr.step();
  SweepOptions opt;
  opt.n_rollouts = 32;
  EvalReport a = stage_sweep(tr, 17, opt);
  ASSERT_EQ(a.rows.size(), 3u);
  EXPECT_FALSE(a.rows[0].eshd.has_value());
  for (const auto& r : a.rows) EXPECT_GE(r.bound.stderr_, 0.0);
  // Stage 0 sees no data, so it cannot depend on the policy.
  opt.random_policy = true;
  EvalReport b = stage_sweep(tr, 17, opt);
  EXPECT_EQ(a.rows[0].bound.mean, b.rows[0].bound.mean);
  EXPECT_NE(a.rows[2].bound.mean, b.rows[2].bound.mean);
  EXPECT_EQ(b.policy, "random");
}

TEST(StageSweep, ReproducibleAndHorizonFlag) {
  Trainer tr(parse_train_config(tiny("goal_graph")));
  tr.step();
  SweepOptions opt;
  opt.n_rollouts = 8;
  opt.graph_samples = 16;
  EvalReport a = stage_sweep(tr, 5, opt), b = stage_sweep(tr, 5, opt);
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.to_csv(), b.to_csv());
  ASSERT_TRUE(a.rows[1].eshd.has_value());
  ASSERT_TRUE(a.rows[1].f1.has_value());
  EXPECT_FALSE(a.beyond_trained_horizon);
  opt.stages = 4;
  EvalReport c = stage_sweep(tr, 5, opt);
  EXPECT_TRUE(c.beyond_trained_horizon);
  EXPECT_EQ(c.rows.size(), 5u);
}

TEST(StageSweep, AggregateAndCsv) {
  Trainer tr(parse_train_config(tiny("goal_z")));
  SweepOptions opt;
  opt.n_rollouts = 8;
  std::vector<EvalReport> reps;
  for (std::uint64_t s : {1, 2, 3, 4}) reps.push_back(stage_sweep(tr, s, opt));
  EvalReport agg = aggregate(reps);
  EXPECT_EQ(agg.seeds.size(), 4u);
  double m = 0.0;
  for (const auto& r : reps) m += r.rows[1].bound.mean;
  EXPECT_NEAR(agg.rows[1].bound.mean, m / 4, 1e-12);
  EXPECT_GT(agg.rows[1].bound.stderr_, 0.0);
  const std::string csv = agg.to_csv();
  EXPECT_EQ(csv.rfind("# config_hash=", 0), 0u);
  EXPECT_NE(csv.find("\nstage,bound_mean,bound_stderr,eshd_mean,eshd_stderr,f1_mean,f1_stderr\n"), std::string::npos);
}
