#pragma once

// Parameter storage and the neural building blocks used by the encoders,
// the policy heads, and the posterior networks.

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gocbed/autodiff/tensor.hpp"
#include "gocbed/random.hpp"

namespace gocbed::ad {

/// Named, ordered collection of trainable leaves.
class ParamStore {
 public:
  Tensor create(const std::string& name, Shape shape, std::vector<double> init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, Tensor::parameter(std::move(shape), std::move(init)));
    return items_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return items_[it->second].second;
  }
  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return items_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  std::vector<Tensor> with_prefix(const std::string& prefix) const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : items_)
      if (name.rfind(prefix, 0) == 0) out.push_back(t);
    return out;
  }

  void zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
inline std::vector<double> fan_in_uniform(int fan_in, std::size_t count, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::vector<double> v(count);
  for (auto& x : v) x = uniform(rng, -a, a);
  return v;
}

struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

/// Inverted dropout; identity outside training.
inline Tensor dropout(const Tensor& x, double p, const ForwardContext& ctx) {
  if (!ctx.training || p <= 0.0) return x;
  if (!ctx.rng) throw std::invalid_argument("dropout in training mode needs an rng");
  std::vector<double> mask(x.size());
  const double keep = 1.0 - p;
  for (auto& m : mask) m = uniform(*ctx.rng) < keep ? 1.0 / keep : 0.0;
  return mul(x, Tensor::constant(x.shape(), std::move(mask)));
}

struct Dense {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)

  Dense() = default;
  Dense(ParamStore& store, const std::string& name, int in, int out, Rng& rng) {
    weight = store.create(name + "/w", {in, out}, fan_in_uniform(in, static_cast<std::size_t>(in) * out, rng));
    bias = store.create(name + "/b", {out}, fan_in_uniform(in, static_cast<std::size_t>(out), rng));
  }
  int in_dim() const { return weight.dim(0); }
  int out_dim() const { return weight.dim(1); }
  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }

  void zero_init() {
    std::fill(weight.mutable_data().begin(), weight.mutable_data().end(), 0.0);
    std::fill(bias.mutable_data().begin(), bias.mutable_data().end(), 0.0);
  }
};

struct LayerNorm {
  Tensor gain, shift;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, int dim) {
    gain = store.create(name + "/gain", {dim}, std::vector<double>(dim, 1.0));
    shift = store.create(name + "/shift", {dim}, std::vector<double>(dim, 0.0));
  }
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, shift); }
};

/// Feedforward stack with ReLU between layers and a linear output.
struct Mlp {
  std::vector<Dense> layers;

  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, int in, const std::vector<int>& hidden, int out, Rng& rng) {
    int prev = in;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      layers.emplace_back(store, name + "/l" + std::to_string(i), prev, hidden[i], rng);
      prev = hidden[i];
    }
    layers.emplace_back(store, name + "/l" + std::to_string(hidden.size()), prev, out, rng);
  }
  Tensor operator()(Tensor x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](x);
      if (i + 1 < layers.size()) x = relu(x);
    }
    return x;
  }
};

/// Scaled dot-product multi-head self-attention over axis 1 of (G, S, E).
struct MultiHeadAttention {
  int heads = 1, key_size = 1;
  Dense q, k, v, o;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, int model_dim, int heads_, int key_size_,
                     Rng& rng)
      : heads(heads_), key_size(key_size_) {
    if (heads <= 0 || key_size <= 0) throw std::invalid_argument("attention: heads and key size must be positive");
    const int hk = heads * key_size;
    q = Dense(store, name + "/q", model_dim, hk, rng);
    k = Dense(store, name + "/k", model_dim, hk, rng);
    v = Dense(store, name + "/v", model_dim, hk, rng);
    o = Dense(store, name + "/o", hk, model_dim, rng);
  }

  Tensor operator()(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(2) != q.in_dim())
      throw ShapeError("attention input " + shape_str(x.shape()) + ", model dim " + std::to_string(q.in_dim()));
    const int g = x.dim(0), s = x.dim(1);
    auto split = [&](const Tensor& t) {
      return reshape(permute(reshape(t, {g, s, heads, key_size}), {0, 2, 1, 3}), {g * heads, s, key_size});
    };
    Tensor qh = split(q(x)), kh = split(k(x)), vh = split(v(x));
    Tensor scores = scale(bmm(qh, kh, /*transpose_b=*/true), 1.0 / std::sqrt(static_cast<double>(key_size)));
    Tensor ctx = bmm(softmax_last(scores), vh);
    Tensor merged = reshape(permute(reshape(ctx, {g, heads, s, key_size}), {0, 2, 1, 3}), {g, s, heads * key_size});
    return o(merged);
  }
};

/// Pre-norm self-attention sublayer with dropout and residual connection.
inline Tensor attention_block(const Tensor& x, const LayerNorm& ln, const MultiHeadAttention& mha, double p,
                              const ForwardContext& ctx) {
  return add(x, dropout(mha(ln(x)), p, ctx));
}

/// Gumbel-softmax over the last axis. With `hard`, the value is the one-hot
/// argmax (lowest index on ties) and the gradient is that of the soft sample.
inline Tensor gumbel_softmax(const Tensor& logits, double tau, Rng& rng, bool hard) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_softmax: temperature must be positive");
  const int n = logits.dim(-1);
  const std::size_t rows = logits.size() / n;
  std::vector<double> soft(logits.size()), out(logits.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double* y = soft.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      y[j] = (logits[r * n + j] + gumbel(rng)) / tau;
      mx = std::max(mx, y[j]);
    }
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += (y[j] = std::exp(y[j] - mx));
    int best = 0;
    for (int j = 0; j < n; ++j) {
      y[j] /= z;
      if (y[j] > y[best]) best = j;
    }
    if (hard)
      out[r * n + best] = 1.0;
    else
      std::copy_n(y, n, out.data() + r * n);
  }
  return make_op(logits.shape(), std::move(out), {logits}, [n, rows, tau, soft = std::move(soft)](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = soft.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += gy[j] * y[j];
      for (int j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dot) / tau;
    }
  });
}

}  // namespace gocbed::ad
