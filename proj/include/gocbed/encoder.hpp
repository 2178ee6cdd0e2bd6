#pragma once

// History encoder f_phi and the intervention policy pi_gamma.
//
// Histories enter as (B, n, d, 2): channel 0 holds observed values, channel 1
// the intervention mask. Each encoder layer attends across variables, then
// across samples, then applies a feedforward sublayer; a max over samples
// gives a (B, d, E) summary that is invariant to sample order and equivariant
// to variable order.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gocbed/autodiff/nn.hpp"
#include "gocbed/scm.hpp"

namespace gocbed {

using ad::ForwardContext;
using ad::ParamStore;
using ad::Tensor;

struct EncoderConfig {
  int embedding = 32;
  int layers = 4;
  int heads = 8;
  int key_size = 16;
  double dropout = 0.05;

  void validate() const {
    if (embedding < 1 || layers < 0 || heads < 1 || key_size < 1)
      throw std::invalid_argument("encoder dimensions must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  }
};

class HistoryEncoder {
 public:
  HistoryEncoder() = default;
  HistoryEncoder(ParamStore& store, const std::string& name, const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int e = cfg.embedding;
    input_ = ad::Dense(store, name + "/input", 2, e, rng);
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = name + "/layer" + std::to_string(l);
      Layer layer;
      layer.ln_d = ad::LayerNorm(store, p + "/ln_d", e);
      layer.att_d = ad::MultiHeadAttention(store, p + "/att_d", e, cfg.heads, cfg.key_size, rng);
      layer.ln_n = ad::LayerNorm(store, p + "/ln_n", e);
      layer.att_n = ad::MultiHeadAttention(store, p + "/att_n", e, cfg.heads, cfg.key_size, rng);
      layer.ln_f = ad::LayerNorm(store, p + "/ln_f", e);
      layer.ffn = ad::Mlp(store, p + "/ffn", e, {4 * e}, e, rng);
      layers_.push_back(std::move(layer));
    }
    final_ln_ = ad::LayerNorm(store, name + "/ln_out", e);
  }

  int embedding() const { return cfg_.embedding; }

  /// (B, n, d, 2) -> (B, d, E).
  Tensor operator()(const Tensor& h, const ForwardContext& ctx) const {
    if (h.rank() != 4 || h.dim(3) != 2) throw ad::ShapeError("history tensor must be (B, n, d, 2), got " + ad::shape_str(h.shape()));
    const int b = h.dim(0), n = h.dim(1), d = h.dim(2), e = cfg_.embedding;
    Tensor x = input_(h);  // (B, n, d, E)
    for (const auto& layer : layers_) {
      Tensor xd = ad::reshape(x, {b * n, d, e});
      xd = ad::attention_block(xd, layer.ln_d, layer.att_d, cfg_.dropout, ctx);
      Tensor xn = ad::reshape(ad::permute(ad::reshape(xd, {b, n, d, e}), {0, 2, 1, 3}), {b * d, n, e});
      xn = ad::attention_block(xn, layer.ln_n, layer.att_n, cfg_.dropout, ctx);
      x = ad::permute(ad::reshape(xn, {b, d, n, e}), {0, 2, 1, 3});
      x = ad::add(x, ad::dropout(layer.ffn(layer.ln_f(x)), cfg_.dropout, ctx));
    }
    return ad::max_axis(final_ln_(x), 1);
  }

 private:
  struct Layer {
    ad::LayerNorm ln_d, ln_n, ln_f;
    ad::MultiHeadAttention att_d, att_n;
    ad::Mlp ffn;
  };
  EncoderConfig cfg_;
  ad::Dense input_;
  std::vector<Layer> layers_;
  ad::LayerNorm final_ln_;
};

/// Constant history tensor for a batch of equally long histories. An empty
/// history becomes a single zero row with mask 0.
inline Tensor history_tensor(const std::vector<const History*>& hs) {
  if (hs.empty()) throw std::invalid_argument("history_tensor needs at least one history");
  const int d = hs[0]->d();
  const int rows = hs[0]->total_rows();
  const int n = std::max(rows, 1);
  std::vector<double> v(static_cast<std::size_t>(hs.size()) * n * d * 2, 0.0);
  for (std::size_t b = 0; b < hs.size(); ++b) {
    if (hs[b]->d() != d || hs[b]->total_rows() != rows)
      throw std::invalid_argument("history_tensor: histories differ in shape");
    int r = 0;
    for (const auto& step : hs[b]->steps())
      for (Eigen::Index k = 0; k < step.batch.rows(); ++k, ++r)
        for (int i = 0; i < d; ++i) {
          const std::size_t at = ((b * n + r) * d + i) * 2;
          v[at] = step.batch(k, i);
          v[at + 1] = step.design.clamp_of(i) ? 1.0 : 0.0;
        }
  }
  return Tensor::constant({static_cast<int>(hs.size()), n, d, 2}, std::move(v));
}

inline Tensor history_tensor(const History& h) { return history_tensor(std::vector<const History*>{&h}); }

/// tau(step) = max(initial * decay^step, floor).
struct TauSchedule {
  double initial = 5.0;
  double decay = 0.9995;
  double floor = 0.1;

  void validate() const {
    if (!(initial > 0.0 && floor > 0.0 && decay > 0.0 && decay <= 1.0))
      throw std::invalid_argument("tau schedule needs initial > 0, floor > 0, decay in (0, 1]");
  }
  double operator()(long step) const { return std::max(initial * std::pow(decay, static_cast<double>(step)), floor); }
};

struct PolicyConfig {
  EncoderConfig encoder;
  double min_value = -10.0;
  double max_value = 10.0;

  void validate() const {
    encoder.validate();
    if (!(min_value < max_value)) throw std::invalid_argument("policy value range needs min_value < max_value");
  }
};

struct PolicyOutput {
  Tensor target;       // (B, d) one-hot, straight-through in training
  Tensor value;        // (B) clamp value at the chosen node
  Tensor logits;       // (B, d)
  Tensor node_values;  // (B, d) squashed per-node values
};

class Policy {
 public:
  Policy() = default;
  Policy(ParamStore& store, const std::string& name, const PolicyConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    encoder_ = HistoryEncoder(store, name + "/encoder", cfg.encoder, rng);
    target_head_ = ad::Dense(store, name + "/target", cfg.encoder.embedding, 1, rng);
    value_head_ = ad::Dense(store, name + "/value", cfg.encoder.embedding, 1, rng);
  }

  const PolicyConfig& config() const { return cfg_; }

  /// Training mode samples a hard Gumbel-softmax target at temperature tau;
  /// deploy mode takes the argmax (lowest index on ties) without noise.
  PolicyOutput act(const Tensor& history, double tau, Rng* rng, bool deploy, const ForwardContext& ctx) const {
    const int b = history.dim(0), d = history.dim(2);
    Tensor pooled = encoder_(history, ctx);  // (B, d, E)
    PolicyOutput out;
    out.logits = ad::reshape(target_head_(pooled), {b, d});
    Tensor raw = ad::reshape(value_head_(pooled), {b, d});
    out.node_values = ad::shift(ad::scale(ad::sigmoid(raw), cfg_.max_value - cfg_.min_value), cfg_.min_value);
    if (deploy) {
      std::vector<double> onehot(static_cast<std::size_t>(b) * d, 0.0);
      for (int r = 0; r < b; ++r) {
        int best = 0;
        for (int j = 1; j < d; ++j)
          if (out.logits[r * d + j] > out.logits[r * d + best]) best = j;
        onehot[static_cast<std::size_t>(r) * d + best] = 1.0;
      }
      out.target = Tensor::constant({b, d}, std::move(onehot));
    } else {
      if (!rng) throw std::invalid_argument("policy training mode needs an rng");
      out.target = ad::gumbel_softmax(out.logits, tau, *rng, /*hard=*/true);
    }
    out.value = ad::sum_last(ad::mul(out.target, out.node_values));
    return out;
  }

  /// Reads the designs out of an action batch.
  static std::vector<Design> designs(const PolicyOutput& out) {
    const int b = out.target.dim(0), d = out.target.dim(1);
    std::vector<Design> ds;
    for (int r = 0; r < b; ++r) {
      int node = 0;
      for (int j = 0; j < d; ++j)
        if (out.target[r * d + j] == 1.0) node = j;
      ds.push_back(Design::single(node, out.value[r]));
    }
    return ds;
  }

 private:
  PolicyConfig cfg_;
  HistoryEncoder encoder_;
  ad::Dense target_head_, value_head_;
};

}  // namespace gocbed
