#include <gtest/gtest.h>

#include <filesystem>

#include "gocbed/autodiff/checkpoint.hpp"
#include "gocbed/autodiff/nn.hpp"
#include "gocbed/autodiff/optim.hpp"
#include "grad_check.hpp"

using namespace gocbed;
using namespace gocbed::ad;
using gocbed::testing::max_grad_error;

namespace {
Tensor random_param(Shape s, Rng& rng, double sd = 1.0) {
  std::vector<double> v(numel(s));
  for (auto& x : v) x = sd * std_normal(rng);
  return Tensor::parameter(std::move(s), std::move(v));
}
}  // namespace

TEST(Autodiff, SquareGradient) {
  Tensor x = Tensor::parameter({1}, {3.0});
  backward(sum(square(x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Autodiff, NonScalarLossRejected) {
  Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  EXPECT_THROW(backward(square(x)), ShapeError);
}

TEST(Autodiff, MlpMatchesFiniteDifferences) {
  Rng rng(1);
  ParamStore store;
  Mlp mlp(store, "m", 3, {5}, 2, rng);
  Tensor x = random_param({4, 3}, rng);
  std::vector<Tensor> params{x};
  for (auto& [n, t] : store.items()) params.push_back(t);
  double err = max_grad_error(params, [&] { return sum(square(mlp(x))); });
  EXPECT_LT(err, 1e-5);
}

TEST(Autodiff, AttentionAndLayerNormMatchFiniteDifferences) {
  Rng rng(2);
  ParamStore store;
  LayerNorm ln(store, "ln", 4);
  MultiHeadAttention mha(store, "a", 4, 2, 3, rng);
  Tensor x = random_param({2, 3, 4}, rng);
  std::vector<Tensor> params{x};
  for (auto& [n, t] : store.items()) params.push_back(t);
  Tensor w = Tensor::constant({2, 3, 4}, std::vector<double>(24, 0.3));
  ForwardContext ctx;
  double err = max_grad_error(params, [&] { return sum(mul(attention_block(x, ln, mha, 0.0, ctx), w)); });
  EXPECT_LT(err, 1e-4);
}

TEST(Autodiff, ShapeOpsMatchFiniteDifferences) {
  Rng rng(3);
  Tensor a = random_param({2, 3, 2}, rng);
  Tensor b = random_param({2, 1, 2}, rng);
  Tensor bias = random_param({2}, rng);
  Tensor s = random_param({1}, rng);
  auto f = [&] {
    Tensor c = concat({a, b}, 1);                      // (2,4,2)
    Tensor p = permute(c, {2, 0, 1});                  // (2,2,4)
    Tensor sl = slice(p, 2, 1, 3);                     // (2,2,3)
    Tensor e = expand(sl, 1, 2);                       // (2,2,2,3)
    Tensor m = max_axis(tanh(e), 2);                   // (2,2,3)
    Tensor q = bmm(reshape(m, {2, 2, 3}), reshape(sl, {2, 2, 3}), true);
    Tensor r = add_bias(softmax_last(q), bias);
    Tensor t = mul_scalar(l2_normalize_last(r), s);
    return add(mean(log_sigmoid(t)), sum(exp(clamp(add_scalar(sigmoid(t), s), -0.5, 0.9))));
  };
  EXPECT_LT(max_grad_error({a, b, bias, s}, f), 1e-5);
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  Rng rng(4);
  Tensor x = random_param({3, 5}, rng, 10.0);
  Tensor y = softmax_last(x);
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int j = 0; j < 5; ++j) s += y[r * 5 + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Autodiff, NoGradGuardSkipsTape) {
  Tensor x = Tensor::parameter({1}, {2.0});
  NoGradGuard g;
  Tensor y = square(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autodiff, GumbelSoftmaxHardIsOneHotWithSoftGradient) {
  Rng rng(5);
  Tensor logits = Tensor::parameter({2, 4}, {0.1, 2.0, -1.0, 0.5, 1.0, 1.0, 1.0, 1.0});
  Tensor y = gumbel_softmax(logits, 0.7, rng, true);
  for (int r = 0; r < 2; ++r) {
    double s = 0;
    for (int j = 0; j < 4; ++j) {
      EXPECT_TRUE(y[r * 4 + j] == 0.0 || y[r * 4 + j] == 1.0);
      s += y[r * 4 + j];
    }
    EXPECT_EQ(s, 1.0);
  }
  backward(sum(mul(y, Tensor::constant({2, 4}, {1, 2, 3, 4, 1, 2, 3, 4}))));
  double total = 0;
  for (double g : logits.grad()) total += std::abs(g);
  EXPECT_GT(total, 0.0);
  EXPECT_THROW(gumbel_softmax(logits, 0.0, rng, true), std::invalid_argument);
}

TEST(Autodiff, GumbelArgmaxFrequenciesFollowSoftmax) {
  Rng rng(6);
  Tensor logits = Tensor::constant({1, 3}, {0.0, std::log(2.0), std::log(5.0)});
  std::vector<int> counts(3, 0);
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    Tensor y = gumbel_softmax(logits, 1.0, rng, true);
    for (int j = 0; j < 3; ++j) counts[j] += y[j] == 1.0;
  }
  const double expect[3] = {0.125, 0.25, 0.625};
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(counts[j] / double(n), expect[j], 0.01);
}

TEST(Optim, AdamMinimizesQuadraticAndScheduleDecays) {
  Tensor w = Tensor::parameter({2}, {3.0, -2.0});
  Adam opt({{"w", w}}, AdamConfig{0.1}, ExponentialSchedule{0.5, 100});
  EXPECT_DOUBLE_EQ(opt.learning_rate(0), 0.1);
  EXPECT_DOUBLE_EQ(opt.learning_rate(250), 0.025);
  for (int i = 0; i < 500; ++i) {
    w.zero_grad();
    backward(sum(square(shift(w, -1.0))));
    opt.step(i);
  }
  EXPECT_NEAR(w[0], 1.0, 1e-3);
  EXPECT_NEAR(w[1], 1.0, 1e-3);
}

TEST(Checkpoint, RoundTripAndVersionCheck) {
  Rng rng(7);
  ParamStore store;
  Mlp mlp(store, "m", 2, {3}, 1, rng);
  auto path = std::filesystem::temp_directory_path() / "gocbed_ck_test.bin";
  Checkpoint ck;
  ck.step = 42;
  ck.metadata = "{\"k\":1}";
  ck.arrays = export_params(store);
  save_checkpoint(path, ck);

  ParamStore other;
  Rng rng2(99);
  Mlp mlp2(other, "m", 2, {3}, 1, rng2);
  Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.step, 42u);
  EXPECT_EQ(back.metadata, ck.metadata);
  import_params(other, back.arrays);
  for (std::size_t k = 0; k < store.items().size(); ++k) {
    auto a = store.items()[k].second.data();
    auto b = other.items()[k].second.data();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }

  ParamStore wrong;
  Mlp mlp3(wrong, "m", 2, {4}, 1, rng2);
  EXPECT_THROW(import_params(wrong, back.arrays), CheckpointError);

  ck.version = 99;
  save_checkpoint(path, ck);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  std::filesystem::remove(path);
}
