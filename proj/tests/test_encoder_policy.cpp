#include <gtest/gtest.h>

#include "gocbed/encoder.hpp"
#include "grad_check.hpp"

using namespace gocbed;
using gocbed::testing::max_grad_error;

namespace {

EncoderConfig small_encoder() { return EncoderConfig{8, 2, 2, 4, 0.05}; }

Tensor random_history(int b, int n, int d, Rng& rng, double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(b) * n * d * 2);
  for (std::size_t k = 0; k < v.size(); k += 2) {
    v[k] = scale * std_normal(rng);
    v[k + 1] = uniform(rng) < 0.2 ? 1.0 : 0.0;
  }
  return Tensor::constant({b, n, d, 2}, std::move(v));
}

// Reorders axis `axis` (1 = samples, 2 = variables) of a (B, n, d, 2) tensor.
Tensor reorder(const Tensor& h, int axis, const std::vector<int>& perm) {
  const int b = h.dim(0), n = h.dim(1), d = h.dim(2);
  std::vector<double> v(h.size());
  for (int r = 0; r < b; ++r)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        for (int c = 0; c < 2; ++c) {
          const int si = axis == 1 ? perm[i] : i, sj = axis == 2 ? perm[j] : j;
          v[((static_cast<std::size_t>(r) * n + i) * d + j) * 2 + c] = h[((static_cast<std::size_t>(r) * n + si) * d + sj) * 2 + c];
        }
  return Tensor::constant(h.shape(), std::move(v));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

}  // namespace

TEST(Encoder, SampleOrderAndDuplicationInvariant) {
  Rng rng(1);
  ParamStore store;
  HistoryEncoder enc(store, "enc", small_encoder(), rng);
  ForwardContext ctx;
  Tensor h = random_history(2, 5, 4, rng);
  Tensor base = enc(h, ctx);
  EXPECT_EQ(base.shape(), (ad::Shape{2, 4, 8}));
  EXPECT_LT(max_abs_diff(base, enc(reorder(h, 1, {3, 0, 4, 1, 2}), ctx)), 1e-6);
  Tensor dup = reorder(random_history(2, 10, 4, rng), 1, {0, 1, 2, 3, 4, 0, 1, 2, 3, 4});
  // Build the duplicate of h: rows 0..4 then 0..4 again.
  std::vector<double> v(2 * 10 * 4 * 2);
  for (int r = 0; r < 2; ++r)
    for (int i = 0; i < 10; ++i)
      for (int k = 0; k < 8; ++k) v[(r * 10 + i) * 8 + k] = h[(r * 5 + i % 5) * 8 + k];
  dup = Tensor::constant({2, 10, 4, 2}, v);
  EXPECT_LT(max_abs_diff(base, enc(dup, ctx)), 1e-6);
}

TEST(Encoder, VariableOrderEquivariant) {
  Rng rng(2);
  ParamStore store;
  HistoryEncoder enc(store, "enc", small_encoder(), rng);
  ForwardContext ctx;
  Tensor h = random_history(1, 4, 5, rng);
  const std::vector<int> perm{2, 4, 0, 1, 3};
  Tensor a = enc(h, ctx), b = enc(reorder(h, 2, perm), ctx);
  double m = 0.0;
  for (int j = 0; j < 5; ++j)
    for (int e = 0; e < 8; ++e) m = std::max(m, std::abs(b[j * 8 + e] - a[perm[j] * 8 + e]));
  EXPECT_LT(m, 1e-6);
}

TEST(Encoder, FiniteForLargeMagnitudes) {
  Rng rng(3);
  ParamStore store;
  HistoryEncoder enc(store, "enc", small_encoder(), rng);
  Tensor out = enc(random_history(1, 6, 3, rng, 1e3), ForwardContext{});
  for (double v : out.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Encoder, GradientCheck) {
  Rng rng(4);
  ParamStore store;
  HistoryEncoder enc(store, "enc", EncoderConfig{4, 1, 2, 3, 0.0}, rng);
  Tensor h = random_history(1, 3, 3, rng);
  std::vector<double> w(12);
  for (auto& x : w) x = std_normal(rng);
  Tensor wt = Tensor::constant({1, 3, 4}, w);
  std::vector<Tensor> params;
  for (auto& [n, t] : store.items()) params.push_back(t);
  EXPECT_LT(max_grad_error(params, [&] { return ad::sum(ad::mul(enc(h, ForwardContext{}), wt)); }), 1e-4);
}

TEST(Encoder, ShapeMismatchRejected) {
  Rng rng(5);
  ParamStore store;
  HistoryEncoder enc(store, "enc", small_encoder(), rng);
  EXPECT_THROW(enc(Tensor::zeros({1, 2, 3, 3}), ForwardContext{}), ad::ShapeError);
}

TEST(Attention, SingleTokenIsResidualPlusValue) {
  Rng rng(6);
  ParamStore store;
  ad::LayerNorm ln(store, "ln", 4);
  ad::MultiHeadAttention mha(store, "a", 4, 2, 3, rng);
  Tensor x = Tensor::constant({1, 1, 4}, {0.3, -1.2, 0.8, 2.0});
  Tensor y = ad::attention_block(x, ln, mha, 0.0, ForwardContext{});
  Tensor expect = ad::add(x, mha.o(mha.v(ln(x))));
  EXPECT_LT(max_abs_diff(y, expect), 1e-12);
}

TEST(Attention, RowPermutationEquivariant) {
  Rng rng(7);
  ParamStore store;
  ad::LayerNorm ln(store, "ln", 4);
  ad::MultiHeadAttention mha(store, "a", 4, 2, 3, rng);
  std::vector<double> v(12);
  for (auto& x : v) x = std_normal(rng);
  Tensor x = Tensor::constant({1, 3, 4}, v);
  std::vector<double> p(12);
  const int perm[3] = {2, 0, 1};
  for (int r = 0; r < 3; ++r)
    for (int e = 0; e < 4; ++e) p[r * 4 + e] = v[perm[r] * 4 + e];
  Tensor a = ad::attention_block(x, ln, mha, 0.0, ForwardContext{});
  Tensor b = ad::attention_block(Tensor::constant({1, 3, 4}, p), ln, mha, 0.0, ForwardContext{});
  for (int r = 0; r < 3; ++r)
    for (int e = 0; e < 4; ++e) EXPECT_NEAR(b[r * 4 + e], a[perm[r] * 4 + e], 1e-12);
}

TEST(Gumbel, LowTemperatureIsNearlyOneHot) {
  Rng rng(8);
  Tensor logits = Tensor::constant({1, 4}, {10.0, 0.0, 0.0, 0.0});
  int hits = 0;
  for (int k = 0; k < 100; ++k) {
    Tensor y = ad::gumbel_softmax(logits, 0.01, rng, false);
    double s = 0.0;
    for (int j = 0; j < 4; ++j) {
      EXPECT_GE(y[j], 0.0);
      s += y[j];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    hits += std::abs(y[0] - 1.0) < 1e-6;
  }
  EXPECT_GE(hits, 99);
}

TEST(Gumbel, UniformLogitsGiveUniformArgmax) {
  Rng rng(9);
  Tensor logits = Tensor::zeros({1, 4});
  std::vector<int> counts(4, 0);
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    Tensor y = ad::gumbel_softmax(logits, 1.0, rng, true);
    for (int j = 0; j < 4; ++j) counts[j] += y[j] == 1.0;
  }
  const double se = std::sqrt(0.25 * 0.75 / n);
  for (int j = 0; j < 4; ++j) EXPECT_LT(std::abs(counts[j] / double(n) - 0.25), 3 * se);
}

TEST(Tau, ScheduleDecaysToFloor) {
  TauSchedule tau;
  EXPECT_DOUBLE_EQ(tau(0), 5.0);
  EXPECT_NEAR(tau(1000), 5.0 * std::pow(0.9995, 1000), 1e-12);
  EXPECT_DOUBLE_EQ(tau(100000), 0.1);
}

TEST(Policy, DeployDeterministicAndBounded) {
  Rng rng(10);
  ParamStore store;
  Policy pol(store, "policy", PolicyConfig{small_encoder(), -10, 10}, rng);
  Tensor h = random_history(3, 4, 5, rng, 50.0);
  auto a = Policy::designs(pol.act(h, 1.0, nullptr, true, ForwardContext{}));
  auto b = Policy::designs(pol.act(h, 1.0, nullptr, true, ForwardContext{}));
  EXPECT_EQ(a, b);
  for (int k = 0; k < 50; ++k) {
    auto out = pol.act(random_history(2, 2, 5, rng, 100.0), 0.5, &rng, false, ForwardContext{true, &rng});
    for (const auto& d : Policy::designs(out)) {
      EXPECT_GE(d.values[0], -10.0);
      EXPECT_LE(d.values[0], 10.0);
    }
  }
}

TEST(Policy, DeployTargetFollowsVariablePermutation) {
  Rng rng(11);
  ParamStore store;
  Policy pol(store, "policy", PolicyConfig{small_encoder(), -10, 10}, rng);
  const std::vector<int> perm{3, 1, 4, 0, 2};
  for (int k = 0; k < 10; ++k) {
    Tensor h = random_history(1, 3, 5, rng);
    Design a = Policy::designs(pol.act(h, 1.0, nullptr, true, ForwardContext{}))[0];
    Design b = Policy::designs(pol.act(reorder(h, 2, perm), 1.0, nullptr, true, ForwardContext{}))[0];
    EXPECT_EQ(perm[b.targets[0]], a.targets[0]);
    EXPECT_NEAR(a.values[0], b.values[0], 1e-9);
  }
}

TEST(Policy, DeployTiesGoToLowestIndex) {
  Rng rng(12);
  ParamStore store;
  Policy pol(store, "policy", PolicyConfig{small_encoder(), -10, 10}, rng);
  // An empty history is the same for every variable, so all logits tie.
  History empty(4, 1);
  Design d = Policy::designs(pol.act(history_tensor(empty), 1.0, nullptr, true, ForwardContext{}))[0];
  EXPECT_EQ(d.targets[0], 0);
}

TEST(Policy, SoftOutputsDifferentiable) {
  Rng rng(13);
  ParamStore store;
  Policy pol(store, "policy", PolicyConfig{EncoderConfig{4, 1, 2, 3, 0.0}, -10, 10}, rng);
  Tensor h = random_history(1, 2, 3, rng);
  Tensor w = Tensor::constant({1, 3}, {0.4, -1.0, 0.7});
  std::vector<Tensor> params;
  for (auto& [n, t] : store.items()) params.push_back(t);
  auto f = [&] {
    PolicyOutput o = pol.act(h, 1.0, nullptr, true, ForwardContext{});
    return ad::add(ad::sum(ad::mul(o.node_values, w)), ad::sum(ad::mul(ad::softmax_last(o.logits), w)));
  };
  EXPECT_LT(max_grad_error(params, f), 1e-4);
}

TEST(HistoryTensor, LayoutAndPadRow) {
  History h(3, 2);
  Matrix x(2, 3);
  x << 1, 7, 2, 3, 7, 4;
  h.append(Design::single(1, 7.0), x);
  Tensor t = history_tensor(h);
  EXPECT_EQ(t.shape(), (ad::Shape{1, 2, 3, 2}));
  EXPECT_EQ(t[(1 * 3 + 2) * 2], 4.0);
  EXPECT_EQ(t[(0 * 3 + 1) * 2 + 1], 1.0);
  EXPECT_EQ(t[(0 * 3 + 0) * 2 + 1], 0.0);
  Tensor pad = history_tensor(History(3, 2));
  EXPECT_EQ(pad.shape(), (ad::Shape{1, 1, 3, 2}));
  for (double v : pad.data()) EXPECT_EQ(v, 0.0);
}
