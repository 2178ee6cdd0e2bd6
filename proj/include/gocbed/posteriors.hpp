#pragma once

// Variational posteriors: a conditional affine-coupling flow over effect-query
// values and a factorized edge-Bernoulli distribution over graphs.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gocbed/autodiff/nn.hpp"
#include "gocbed/encoder.hpp"
#include "gocbed/scm.hpp"

namespace gocbed {

class RejectionError : public std::runtime_error {
 public:
  RejectionError(const std::string& what, int attempts) : std::runtime_error(what), attempts(attempts) {}
  int attempts;
};

struct FlowConfig {
  int n_trans = 4;
  std::vector<int> hidden{256, 256, 256};
  double s_clamp = 7.0;
  bool zero_init_last = true;  // start at the identity map

  void validate() const {
    if (n_trans < 1) throw std::invalid_argument("flow needs at least one coupling layer");
    for (int h : hidden)
      if (h < 1) throw std::invalid_argument("flow hidden widths must be positive");
    if (!(s_clamp > 0.0)) throw std::invalid_argument("flow s clamp must be positive");
  }
};

/// Conditional Real NVP. Layer k leaves block A untouched and maps block B as
/// z_B = eta_B * exp(s(A, c)) + t(A, c); even layers transform the trailing
/// floor(n/2) coordinates, odd layers the leading ceil(n/2). A final
/// elementwise affine map z = loc + exp(log_scale) * x standardizes the
/// output scale.
class CouplingFlow {
 public:
  CouplingFlow() = default;
  CouplingFlow(ParamStore& store, const std::string& name, int n_z, int cond_dim, const FlowConfig& cfg, Rng& rng)
      : n_z_(n_z), cond_dim_(cond_dim), cfg_(cfg) {
    cfg.validate();
    if (n_z < 1 || cond_dim < 0) throw std::invalid_argument("flow dimensions must be positive");
    for (int k = 0; k < cfg.n_trans; ++k) {
      Layer layer;
      split(k, layer.a_start, layer.a_len, layer.b_start, layer.b_len);
      if (layer.b_len > 0) {
        const std::string p = name + "/coupling" + std::to_string(k);
        // With nothing to condition on, s and t read a constant 1.
        const int in = std::max(layer.a_len + cond_dim, 1);
        layer.s = ad::Mlp(store, p + "/s", in, cfg.hidden, layer.b_len, rng);
        layer.t = ad::Mlp(store, p + "/t", in, cfg.hidden, layer.b_len, rng);
        if (cfg.zero_init_last) {
          layer.s.layers.back().zero_init();
          layer.t.layers.back().zero_init();
        }
      }
      layers_.push_back(std::move(layer));
    }
    loc_ = store.create(name + "/loc", {n_z}, std::vector<double>(n_z, 0.0));
    log_scale_ = store.create(name + "/log_scale", {n_z}, std::vector<double>(n_z, 0.0));
  }

  int n_z() const { return n_z_; }
  int cond_dim() const { return cond_dim_; }

  /// Sets the output standardization from samples of z (rows).
  void set_standardization(const Matrix& samples) {
    if (samples.cols() != n_z_ || samples.rows() < 2) throw std::invalid_argument("standardization needs >= 2 rows of z");
    for (int j = 0; j < n_z_; ++j) {
      const double m = samples.col(j).mean();
      const double var = (samples.col(j).array() - m).square().sum() / static_cast<double>(samples.rows() - 1);
      loc_.mutable_data()[j] = m;
      log_scale_.mutable_data()[j] = 0.5 * std::log(std::max(var, 1e-12));
    }
  }

  /// log q(z | c) for z (B, n_z) and c (B, cond_dim); returns (B).
  Tensor log_prob(const Tensor& z, const Tensor& cond) const {
    check(z, cond);
    for (double v : z.data())
      if (!std::isfinite(v)) throw std::invalid_argument("flow log_prob: non-finite z");
    const int b = z.dim(0);
    Tensor x = ad::mul(ad::add(z, ad::neg(expand_rows(loc_, b))), ad::exp(ad::neg(expand_rows(log_scale_, b))));
    Tensor logdet = ad::scale(ad::sum_last(expand_rows(log_scale_, b)), -1.0);  // (B)
    for (int k = static_cast<int>(layers_.size()) - 1; k >= 0; --k) {
      const Layer& l = layers_[k];
      if (l.b_len == 0) continue;
      auto [s, t] = coupling(l, x, cond);
      Tensor xb = ad::slice(x, 1, l.b_start, l.b_len);
      Tensor eta_b = ad::mul(ad::sub(xb, t), ad::exp(ad::neg(s)));
      x = assemble(l, ad::slice(x, 1, l.a_start, l.a_len), eta_b);
      logdet = ad::sub(logdet, ad::sum_last(s));
    }
    Tensor base = ad::shift(ad::scale(ad::sum_last(ad::square(x)), -0.5), -kLogSqrt2Pi * n_z_);
    return ad::add(base, logdet);
  }

  /// Maps base draws eta (B, n_z) to z.
  Tensor transform(const Tensor& eta, const Tensor& cond) const {
    check(eta, cond);
    const int b = eta.dim(0);
    Tensor x = eta;
    for (const Layer& l : layers_) {
      if (l.b_len == 0) continue;
      auto [s, t] = coupling(l, x, cond);
      Tensor zb = ad::add(ad::mul(ad::slice(x, 1, l.b_start, l.b_len), ad::exp(s)), t);
      x = assemble(l, ad::slice(x, 1, l.a_start, l.a_len), zb);
    }
    return ad::add(ad::mul(x, ad::exp(expand_rows(log_scale_, b))), expand_rows(loc_, b));
  }

  /// z -> eta (inverse of transform).
  Tensor inverse(const Tensor& z, const Tensor& cond) const {
    check(z, cond);
    const int b = z.dim(0);
    Tensor x = ad::mul(ad::sub(z, expand_rows(loc_, b)), ad::exp(ad::neg(expand_rows(log_scale_, b))));
    for (int k = static_cast<int>(layers_.size()) - 1; k >= 0; --k) {
      const Layer& l = layers_[k];
      if (l.b_len == 0) continue;
      auto [s, t] = coupling(l, x, cond);
      Tensor eta_b = ad::mul(ad::sub(ad::slice(x, 1, l.b_start, l.b_len), t), ad::exp(ad::neg(s)));
      x = assemble(l, ad::slice(x, 1, l.a_start, l.a_len), eta_b);
    }
    return x;
  }

  /// `count` draws per conditioning row: returns (B * count, n_z), row-major
  /// by conditioning row.
  Matrix sample(const Tensor& cond, int count, Rng& rng) const {
    ad::NoGradGuard guard;
    const int b = cond.dim(0);
    std::vector<double> eta(static_cast<std::size_t>(b) * count * n_z_);
    for (auto& e : eta) e = std_normal(rng);
    Tensor c = ad::reshape(ad::expand(cond, 1, count), {b * count, cond_dim_});
    Tensor z = transform(Tensor::constant({b * count, n_z_}, std::move(eta)), c);
    Matrix out(b * count, n_z_);
    for (int r = 0; r < b * count; ++r)
      for (int j = 0; j < n_z_; ++j) out(r, j) = z[static_cast<std::size_t>(r) * n_z_ + j];
    return out;
  }

 private:
  struct Layer {
    int a_start = 0, a_len = 0, b_start = 0, b_len = 0;
    ad::Mlp s, t;
  };

  void split(int k, int& a_start, int& a_len, int& b_start, int& b_len) const {
    const int first = (n_z_ + 1) / 2;
    if (k % 2 == 0) {
      a_start = 0, a_len = first, b_start = first, b_len = n_z_ - first;
    } else {
      b_start = 0, b_len = first, a_start = first, a_len = n_z_ - first;
    }
  }

  void check(const Tensor& z, const Tensor& cond) const {
    if (z.rank() != 2 || z.dim(1) != n_z_ || cond.rank() != 2 || cond.dim(1) != cond_dim_ || cond.dim(0) != z.dim(0))
      throw ad::ShapeError("flow: z " + ad::shape_str(z.shape()) + ", cond " + ad::shape_str(cond.shape()) +
                           ", expected (B, " + std::to_string(n_z_) + ") and (B, " + std::to_string(cond_dim_) + ")");
  }

  static Tensor expand_rows(const Tensor& v, int b) { return ad::expand(v, 0, b); }

  std::pair<Tensor, Tensor> coupling(const Layer& l, const Tensor& x, const Tensor& cond) const {
    std::vector<Tensor> parts;
    if (l.a_len > 0) parts.push_back(ad::slice(x, 1, l.a_start, l.a_len));
    if (cond_dim_ > 0) parts.push_back(cond);
    if (parts.empty()) parts.push_back(Tensor::constant({x.dim(0), 1}, std::vector<double>(x.dim(0), 1.0)));
    Tensor in = parts.size() == 1 ? parts[0] : ad::concat(parts, 1);
    return {ad::clamp(l.s(in), -cfg_.s_clamp, cfg_.s_clamp), l.t(in)};
  }

  Tensor assemble(const Layer& l, const Tensor& a, const Tensor& b) const {
    if (l.a_len == 0) return b;
    return l.a_start < l.b_start ? ad::concat({a, b}, 1) : ad::concat({b, a}, 1);
  }

  int n_z_ = 0, cond_dim_ = 0;
  FlowConfig cfg_;
  std::vector<Layer> layers_;
  Tensor loc_, log_scale_;
};

/// Effect-query posterior q(z | f(h), psi): an encoder whose flattened
/// (d * E) output, with psi appended, conditions a coupling flow.
class EffectPosterior {
 public:
  EffectPosterior() = default;
  EffectPosterior(ParamStore& store, const std::string& name, int d, int n_z, const EncoderConfig& enc,
                  const FlowConfig& flow, Rng& rng)
      : d_(d) {
    encoder_ = HistoryEncoder(store, name + "/encoder", enc, rng);
    flow_ = CouplingFlow(store, name + "/flow", n_z, d * enc.embedding + 1, flow, rng);
  }

  CouplingFlow& flow() { return flow_; }
  const CouplingFlow& flow() const { return flow_; }

  /// history (B, n, d, 2), psi (B) -> (B, d*E + 1).
  Tensor condition(const Tensor& history, const Tensor& psi, const ForwardContext& ctx) const {
    const int b = history.dim(0);
    Tensor pooled = encoder_(history, ctx);
    return ad::concat({ad::reshape(pooled, {b, d_ * encoder_.embedding()}), ad::reshape(psi, {b, 1})}, 1);
  }

  Tensor log_prob(const Tensor& z, const Tensor& history, const Tensor& psi, const ForwardContext& ctx) const {
    return flow_.log_prob(z, condition(history, psi, ctx));
  }

 private:
  int d_ = 0;
  HistoryEncoder encoder_;
  CouplingFlow flow_;
};

/// Parameter-query posterior q(theta_S | f(h)): no psi input.
class ParameterPosterior {
 public:
  ParameterPosterior() = default;
  ParameterPosterior(ParamStore& store, const std::string& name, int d, int n_z, const EncoderConfig& enc,
                     const FlowConfig& flow, Rng& rng)
      : d_(d) {
    encoder_ = HistoryEncoder(store, name + "/encoder", enc, rng);
    flow_ = CouplingFlow(store, name + "/flow", n_z, d * enc.embedding, flow, rng);
  }

  CouplingFlow& flow() { return flow_; }
  const CouplingFlow& flow() const { return flow_; }

  Tensor condition(const Tensor& history, const ForwardContext& ctx) const {
    const int b = history.dim(0);
    return ad::reshape(encoder_(history, ctx), {b, d_ * encoder_.embedding()});
  }

  Tensor log_prob(const Tensor& z, const Tensor& history, const ForwardContext& ctx) const {
    return flow_.log_prob(z, condition(history, ctx));
  }

 private:
  int d_ = 0;
  HistoryEncoder encoder_;
  CouplingFlow flow_;
};

struct EdgeConfig {
  int n_out = 0;  // 0: embedding size
  double init_temp = 2.0;
  double init_bias = -3.0;
};

/// q(G | f(h)) = prod_{i != j} Bernoulli(G_ij; sigmoid(<u_i, v_j> exp(temp) + bias)).
class EdgePosterior {
 public:
  EdgePosterior() = default;
  EdgePosterior(ParamStore& store, const std::string& name, const EncoderConfig& enc, const EdgeConfig& cfg, Rng& rng) {
    const int out = cfg.n_out > 0 ? cfg.n_out : enc.embedding;
    encoder_ = HistoryEncoder(store, name + "/encoder", enc, rng);
    u_ = ad::Dense(store, name + "/u", enc.embedding, out, rng);
    v_ = ad::Dense(store, name + "/v", enc.embedding, out, rng);
    temp_ = store.create(name + "/temp", {1}, {cfg.init_temp});
    bias_ = store.create(name + "/bias", {1}, {cfg.init_bias});
  }

  ad::Dense& u_head() { return u_; }
  ad::Dense& v_head() { return v_; }

  /// (B, n, d, 2) -> edge logits (B, d, d); the diagonal is meaningless.
  Tensor logits(const Tensor& history, const ForwardContext& ctx) const {
    Tensor pooled = encoder_(history, ctx);
    Tensor u = ad::l2_normalize_last(u_(pooled));
    Tensor v = ad::l2_normalize_last(v_(pooled));
    return ad::add_scalar(ad::mul_scalar(ad::bmm(u, v, true), ad::exp(temp_)), bias_);
  }

  /// sum_{i != j} log Bernoulli(G_ij; sigmoid(logit_ij)) per batch row; `adj`
  /// is (B, d, d) with 0/1 entries.
  static Tensor log_prob(const Tensor& logits, const Tensor& adj) {
    const int b = logits.dim(0), d = logits.dim(1);
    std::vector<double> off(static_cast<std::size_t>(b) * d * d, 1.0), adj_off(adj.size()), non_off(adj.size());
    for (int r = 0; r < b; ++r)
      for (int i = 0; i < d; ++i) off[(static_cast<std::size_t>(r) * d + i) * d + i] = 0.0;
    for (std::size_t k = 0; k < adj.size(); ++k) {
      if (adj[k] != 0.0 && adj[k] != 1.0) throw std::invalid_argument("adjacency entries must be 0 or 1");
      adj_off[k] = adj[k] * off[k];
      non_off[k] = (1.0 - adj[k]) * off[k];
    }
    Tensor on = Tensor::constant(adj.shape(), std::move(adj_off));
    Tensor offm = Tensor::constant(adj.shape(), std::move(non_off));
    Tensor ll = ad::add(ad::mul(ad::log_sigmoid(logits), on), ad::mul(ad::log_sigmoid(ad::neg(logits)), offm));
    return ad::sum_last(ad::reshape(ll, {b, d * d}));
  }

 private:
  HistoryEncoder encoder_;
  ad::Dense u_, v_;
  Tensor temp_, bias_;
};

inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

/// Edge probabilities of batch row `row` as a d x d matrix with zero diagonal.
inline Matrix edge_probabilities(const Tensor& logits, int row = 0) {
  const int d = logits.dim(1);
  Matrix p = Matrix::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (i != j) p(i, j) = sigmoid(logits[(static_cast<std::size_t>(row) * d + i) * d + j]);
  return p;
}

/// Exact log probability of a graph under independent edge probabilities.
inline double graph_log_prob(const Matrix& probs, const Dag& g) {
  double s = 0.0;
  for (int i = 0; i < g.size(); ++i)
    for (int j = 0; j < g.size(); ++j)
      if (i != j) s += g.edge(i, j) ? std::log(probs(i, j)) : std::log1p(-probs(i, j));
  return s;
}

/// Independent edge flips; may contain cycles.
inline std::vector<std::uint8_t> sample_adjacency(const Matrix& probs, Rng& rng) {
  const int d = static_cast<int>(probs.rows());
  std::vector<std::uint8_t> adj(static_cast<std::size_t>(d) * d, 0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) adj[static_cast<std::size_t>(i) * d + j] = i != j && uniform(rng) < probs(i, j);
  return adj;
}

/// Rejection-samples an acyclic graph from independent edge flips.
inline Dag graph_sample(const Matrix& probs, Rng& rng, int max_tries = 1000) {
  if (max_tries < 1) throw std::invalid_argument("graph_sample needs max_tries >= 1");
  const int d = static_cast<int>(probs.rows());
  for (int attempt = 1; attempt <= max_tries; ++attempt) {
    auto adj = sample_adjacency(probs, rng);
    if (is_acyclic(d, adj)) return Dag::from_adjacency(d, std::move(adj));
  }
  throw RejectionError("no acyclic graph after " + std::to_string(max_tries) + " attempts", max_tries);
}

}  // namespace gocbed
