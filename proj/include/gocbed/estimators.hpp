#pragma once

// EIG estimators: the Monte Carlo variational bound R_{T;L}, the nested Monte
// Carlo estimate of R_T for linear-Gaussian fixed graphs, and the KL gap
// between the two.

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "gocbed/gaussian_oracle.hpp"
#include "gocbed/posteriors.hpp"

namespace gocbed {

class EstimatorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Rollout {
  Scm model;
  double psi = 0.0;
  Vector z;  // query value; graph queries hold the flattened adjacency
  History history;
  std::vector<double> step_log_lik;  // log p(x_t | M, xi_t)
};

using ModelSampler = std::function<Scm(Rng&)>;
/// Chooses the next design for each history in the batch.
using BatchPolicy = std::function<std::vector<Design>(const std::vector<const History*>&, Rng&)>;

inline Vector query_value(const Scm& model, const Query& q, double psi, Rng& rng) {
  switch (q.kind) {
    case Query::Kind::Effect: return sample_query_value(model, q, psi, rng);
    case Query::Kind::Parameters: return parameter_query_value(model, q);
    case Query::Kind::Graph: {
      const auto& a = model.dag.adjacency();
      Vector z(static_cast<Eigen::Index>(a.size()));
      for (std::size_t k = 0; k < a.size(); ++k) z(static_cast<Eigen::Index>(k)) = a[k];
      return z;
    }
  }
  return Vector();
}

/// N rollouts of T stages. Rollout e draws everything from the stream
/// (seed, e); policies act on all histories of a batch together.
inline std::vector<Rollout> generate_rollouts(const ModelSampler& sample_model, const BatchPolicy& policy, int T,
                                              int n_int, const Query& q, int n, std::uint64_t seed,
                                              int batch = 64) {
  if (T < 0 || n < 1 || n_int < 1) throw EstimatorError("rollouts need T >= 0, N >= 1, n_int >= 1");
  std::vector<Rollout> out;
  out.reserve(n);
  std::vector<Rng> rngs;
  for (int e = 0; e < n; ++e) {
    rngs.push_back(make_rng(seed, {static_cast<std::uint64_t>(e)}));
    Rollout r;
    r.model = sample_model(rngs[e]);
    const int d = r.model.size();
    q.validate(d);
    r.psi = sample_psi(q, rngs[e]);
    r.z = query_value(r.model, q, r.psi, rngs[e]);
    r.history = History(d, n_int);
    out.push_back(std::move(r));
  }
  Rng policy_rng = make_rng(seed, {0x706f6cULL});
  for (int start = 0; start < n; start += batch) {
    const int stop = std::min(n, start + batch);
    for (int t = 0; t < T; ++t) {
      std::vector<const History*> hs;
      for (int e = start; e < stop; ++e) hs.push_back(&out[e].history);
      const std::vector<Design> designs = policy(hs, policy_rng);
      for (int e = start; e < stop; ++e) {
        Rollout& r = out[e];
        const Design& des = designs[e - start];
        Matrix x = simulate(r.model, &des, n_int, rngs[e]);
        r.step_log_lik.push_back(log_likelihood(r.model, des, x));
        r.history.append(des, std::move(x));
      }
    }
  }
  return out;
}

/// Uniform random policy: target uniform over nodes, value uniform on [lo, hi].
inline BatchPolicy random_policy(double lo = -10.0, double hi = 10.0) {
  return [lo, hi](const std::vector<const History*>& hs, Rng& rng) {
    std::vector<Design> ds;
    for (const History* h : hs) {
      const int node = std::uniform_int_distribution<int>(0, h->d() - 1)(rng);
      ds.push_back(Design::single(node, uniform(rng, lo, hi)));
    }
    return ds;
  };
}

/// The same design sequence for every rollout.
inline BatchPolicy fixed_policy(std::vector<Design> sequence) {
  return [sequence = std::move(sequence)](const std::vector<const History*>& hs, Rng&) {
    std::vector<Design> ds;
    for (const History* h : hs) ds.push_back(sequence.at(h->size()));
    return ds;
  };
}

/// Mean and standard error of log q over rollouts.
inline McEstimate estimate_bound(const std::vector<double>& log_q) {
  if (log_q.size() < 2) throw EstimatorError("estimate_bound needs at least 2 rollouts");
  for (std::size_t i = 0; i < log_q.size(); ++i)
    if (!std::isfinite(log_q[i])) throw EstimatorError("non-finite log q at rollout " + std::to_string(i));
  return summarize(log_q);
}

// ---------------------------------------------------------------------------
// Variational log densities over rollouts, evaluated at stage t (history
// prefix of length t).

namespace detail {
template <class F>
std::vector<double> batched(const std::vector<Rollout>& rs, int batch, F&& f) {
  std::vector<double> out;
  out.reserve(rs.size());
  for (std::size_t start = 0; start < rs.size(); start += batch) {
    const std::size_t stop = std::min(rs.size(), start + batch);
    const std::vector<double> part = f(start, stop);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

inline std::vector<History> prefixes(const std::vector<Rollout>& rs, std::size_t start, std::size_t stop, int t) {
  std::vector<History> hs;
  for (std::size_t i = start; i < stop; ++i) hs.push_back(rs[i].history.prefix(t));
  return hs;
}

inline Tensor stack_history(const std::vector<History>& hs) {
  std::vector<const History*> ptrs;
  for (const auto& h : hs) ptrs.push_back(&h);
  return history_tensor(ptrs);
}

inline Tensor stack_z(const std::vector<Rollout>& rs, std::size_t start, std::size_t stop) {
  const int nz = static_cast<int>(rs[start].z.size());
  std::vector<double> v;
  for (std::size_t i = start; i < stop; ++i)
    for (int j = 0; j < nz; ++j) v.push_back(rs[i].z(j));
  return Tensor::constant({static_cast<int>(stop - start), nz}, std::move(v));
}
}  // namespace detail

inline std::vector<double> log_q_effect(const EffectPosterior& post, const std::vector<Rollout>& rs, int t,
                                        int batch = 128) {
  ad::NoGradGuard guard;
  return detail::batched(rs, batch, [&](std::size_t a, std::size_t b) {
    std::vector<double> psi;
    for (std::size_t i = a; i < b; ++i) psi.push_back(rs[i].psi);
    Tensor lp = post.log_prob(detail::stack_z(rs, a, b), detail::stack_history(detail::prefixes(rs, a, b, t)),
                              Tensor::constant({static_cast<int>(b - a)}, psi), ForwardContext{});
    return std::vector<double>(lp.data().begin(), lp.data().end());
  });
}

inline std::vector<double> log_q_parameters(const ParameterPosterior& post, const std::vector<Rollout>& rs, int t,
                                            int batch = 128) {
  ad::NoGradGuard guard;
  return detail::batched(rs, batch, [&](std::size_t a, std::size_t b) {
    Tensor lp = post.log_prob(detail::stack_z(rs, a, b), detail::stack_history(detail::prefixes(rs, a, b, t)),
                              ForwardContext{});
    return std::vector<double>(lp.data().begin(), lp.data().end());
  });
}

inline Tensor adjacency_tensor(const std::vector<const Dag*>& gs) {
  const int d = gs[0]->size();
  std::vector<double> v;
  for (const Dag* g : gs)
    for (auto a : g->adjacency()) v.push_back(a);
  return Tensor::constant({static_cast<int>(gs.size()), d, d}, std::move(v));
}

inline std::vector<double> log_q_graph(const EdgePosterior& post, const std::vector<Rollout>& rs, int t,
                                       int batch = 128) {
  ad::NoGradGuard guard;
  return detail::batched(rs, batch, [&](std::size_t a, std::size_t b) {
    std::vector<const Dag*> gs;
    for (std::size_t i = a; i < b; ++i) gs.push_back(&rs[i].model.dag);
    Tensor logits = post.logits(detail::stack_history(detail::prefixes(rs, a, b, t)), ForwardContext{});
    Tensor lp = EdgePosterior::log_prob(logits, adjacency_tensor(gs));
    return std::vector<double>(lp.data().begin(), lp.data().end());
  });
}

// ---------------------------------------------------------------------------
// Nested Monte Carlo

namespace detail {
/// z-law of an effect query as an affine function of psi: mean = m0 + psi * v.
struct AffineZLaw {
  Vector m0, slope;
  Eigen::LLT<Matrix> chol;
  GaussianLaw law;

  AffineZLaw(const Scm& s, const Query& q) {
    const Design d0 = Design::single(q.intervention_node, 0.0), d1 = Design::single(q.intervention_node, 1.0);
    GaussianLaw l0 = interventional_law(s, &d0, q.targets);
    m0 = l0.mean;
    slope = interventional_law(s, &d1, q.targets).mean - m0;
    law = l0;
    chol.compute(l0.cov);
    if (chol.info() != Eigen::Success) throw EstimatorError("query covariance is not positive definite");
  }
  double log_density(const Vector& z, double psi) const {
    GaussianLaw shifted{m0 + psi * slope, law.cov};
    return shifted.log_density(z, chol);
  }
};
}  // namespace detail

struct NmcOptions {
  int m1 = 5000;
  int m2 = 5000;
  /// Subtract an inner estimate of log p(z) so the result estimates the EIG
  /// itself rather than the prior-omitted quantity.
  bool total_eig = false;
};

/// (1/N) sum_i [log (1/M1) sum_j p(z_i, h_i | M_j) - log (1/M2) sum_j p(h_i | M_j)]
/// with models drawn from the conjugate prior. One inner sample set of each
/// size is drawn and shared by all outer rollouts.
inline McEstimate estimate_nmc(const std::vector<Rollout>& rs, const LinearPosterior& prior, const Query& q,
                               const NmcOptions& opt, Rng& rng) {
  if (q.kind != Query::Kind::Effect) throw EstimatorError("NMC supports effect queries only");
  if (opt.m1 < 1 || opt.m2 < 1) throw EstimatorError("NMC inner sizes must be >= 1");
  if (rs.empty()) throw EstimatorError("NMC needs rollouts");
  for (const auto& r : rs)
    if (r.model.mechanism.kind != MechanismKind::LinearGaussian)
      throw EstimatorError("NMC supports only linear-Gaussian mechanisms");
  std::vector<Scm> inner1, inner2;
  std::vector<detail::AffineZLaw> laws1;
  for (int j = 0; j < opt.m1; ++j) {
    inner1.push_back(sample_scm(prior, rng));
    laws1.emplace_back(inner1.back(), q);
  }
  for (int j = 0; j < opt.m2; ++j) inner2.push_back(sample_scm(prior, rng));
  std::vector<double> terms;
  terms.reserve(rs.size());
  std::vector<double> joint(opt.m1), marg(opt.m2), zonly(opt.m1);
  for (const auto& r : rs) {
    for (int j = 0; j < opt.m1; ++j) {
      const double lz = laws1[j].log_density(r.z, r.psi);
      joint[j] = lz + log_likelihood(inner1[j], r.history);
      zonly[j] = lz;
    }
    for (int j = 0; j < opt.m2; ++j) marg[j] = log_likelihood(inner2[j], r.history);
    double term = log_mean_exp(joint) - log_mean_exp(marg);
    if (opt.total_eig) term -= log_mean_exp(zonly);
    if (!std::isfinite(term)) throw EstimatorError("NMC produced a non-finite term");
    terms.push_back(term);
  }
  return summarize(terms);
}

// ---------------------------------------------------------------------------
// Bound gap

struct KlInputs {
  std::function<History(Rng&)> sample_history;
  /// Draw z from the exact posterior given h.
  std::function<Vector(const History&, Rng&)> sample_true_posterior;
  std::function<double(const Vector&, const History&)> log_p;
  std::function<double(const Vector&, const History&)> log_q;
};

/// E_h[KL(p(z | h) || q(z | h))] from n_hist histories with `draws` posterior
/// draws each; the standard error is over histories.
inline McEstimate bound_gap_kl(const KlInputs& in, int n_hist, int draws, Rng& rng) {
  if (n_hist < 2 || draws < 1) throw EstimatorError("bound_gap_kl needs n_hist >= 2 and draws >= 1");
  std::vector<double> per;
  for (int i = 0; i < n_hist; ++i) {
    const History h = in.sample_history(rng);
    double s = 0.0;
    for (int k = 0; k < draws; ++k) {
      const Vector z = in.sample_true_posterior(h, rng);
      s += in.log_p(z, h) - in.log_q(z, h);
    }
    per.push_back(s / draws);
  }
  return summarize(per);
}

/// Exact posterior of an effect query on a conjugate linear model: draws of
/// (theta | h) pushed through the query law.
inline Vector sample_effect_posterior(const LinearPosterior& prior, const History& h, const Query& q, double psi,
                                      Rng& rng) {
  const LinearPosterior post = update_posterior(prior, h);
  return sample_query_value(sample_scm(post, rng), q, psi, rng);
}

}  // namespace gocbed
