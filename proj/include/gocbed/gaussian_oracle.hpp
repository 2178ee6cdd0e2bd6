#pragma once

// Exact linear-Gaussian machinery: interventional laws given the weights,
// per-node conjugate weight posteriors, and Monte Carlo incremental EIG.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/LU>

#include "gocbed/scm.hpp"

namespace gocbed {

struct GaussianLaw {
  Vector mean;
  Matrix cov;

  /// log N(x; mean, cov). Throws if cov is not positive definite.
  double log_density(const Vector& x) const {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) throw ModelError("covariance is not positive definite");
    return log_density(x, llt);
  }
  double log_density(const Vector& x, const Eigen::LLT<Matrix>& llt) const {
    const Vector r = llt.matrixL().solve(x - mean);
    const Matrix& l = llt.matrixLLT();
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < l.rows(); ++i) logdet += std::log(l(i, i));
    return -0.5 * r.squaredNorm() - logdet - kLogSqrt2Pi * static_cast<double>(x.size());
  }
};

/// Receives numerical warnings; stderr by default.
inline std::function<void(const std::string&)>& oracle_warning_sink() {
  static std::function<void(const std::string&)> sink = [](const std::string& m) {
    std::cerr << "warning: " << m << '\n';
  };
  return sink;
}

inline constexpr double kConditionWarnThreshold = 1e8;

/// Law of the selected nodes: X = (I - B^T)^{-1} (b + s + eps) with the rows of
/// intervened nodes removed from B and their noise zeroed.
inline GaussianLaw interventional_law(const Scm& scm, const Design* design, const std::vector<int>& nodes) {
  if (scm.mechanism.kind != MechanismKind::LinearGaussian)
    throw ModelError("interventional_law supports only linear-Gaussian mechanisms");
  const int d = scm.size();
  if (design) design->validate(d);
  Matrix a = Matrix::Identity(d, d);  // I - B^T, row i holds node i's equation
  Vector c = Vector::Zero(d);
  Vector noise_var = Vector::Zero(d);
  for (int i = 0; i < d; ++i) {
    if (auto s = design ? design->clamp_of(i) : std::nullopt) {
      c(i) = *s;
      continue;
    }
    const auto& nm = scm.mechanism.nodes[i];
    for (std::size_t k = 0; k < nm.parents.size(); ++k) a(i, nm.parents[k]) -= nm.weights(k);
    c(i) = nm.bias;
    noise_var(i) = nm.noise_std * nm.noise_std;
  }
  Eigen::PartialPivLU<Matrix> lu(a);
  const double rcond = lu.rcond();
  if (!(rcond * kConditionWarnThreshold >= 1.0))
    oracle_warning_sink()("interventional_law: ill-conditioned system (condition estimate " +
                          std::to_string(1.0 / rcond) + ")");
  Vector mean = lu.solve(c);
  const Matrix ainv = lu.inverse();
  Matrix cov = ainv * noise_var.asDiagonal() * ainv.transpose();
  // Pivoting can perturb clamped entries by an ulp; they are exact by definition.
  if (design)
    for (std::size_t k = 0; k < design->targets.size(); ++k) {
      const int t = design->targets[k];
      mean(t) = design->values[k];
      cov.row(t).setZero();
      cov.col(t).setZero();
    }
  GaussianLaw law;
  const auto n = static_cast<Eigen::Index>(nodes.size());
  law.mean.resize(n);
  law.cov.resize(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    if (nodes[r] < 0 || nodes[r] >= d) throw ModelError("interventional_law: node index out of range");
    law.mean(r) = mean(nodes[r]);
    for (Eigen::Index k = 0; k < n; ++k) law.cov(r, k) = cov(nodes[r], nodes[k]);
  }
  law.cov = (0.5 * (law.cov + law.cov.transpose())).eval();
  return law;
}

/// log p(z | scm, psi) for an effect query.
inline double query_log_density(const Scm& scm, const Query& q, double psi, const Vector& z) {
  if (q.kind != Query::Kind::Effect) throw ModelError("query density needs an effect query");
  const Design des = Design::single(q.intervention_node, psi);
  return interventional_law(scm, &des, q.targets).log_density(z);
}

// ---------------------------------------------------------------------------
// Conjugate weight posteriors

/// Gaussian belief over one node's coefficients [weights over parents..., bias]
/// (bias present only when has_bias) with known noise stddev.
struct NodePosterior {
  std::vector<int> parents;
  bool has_bias = false;
  Vector mean;
  Matrix cov;
  double noise_std = 1.0;

  int dim() const { return static_cast<int>(parents.size()) + (has_bias ? 1 : 0); }

  Vector features(const Matrix& batch, Eigen::Index r) const {
    Vector f(dim());
    for (std::size_t k = 0; k < parents.size(); ++k) f(k) = batch(r, parents[k]);
    if (has_bias) f(dim() - 1) = 1.0;
    return f;
  }
};

/// Product of per-node conjugate posteriors over a fixed graph.
struct LinearPosterior {
  Dag dag;
  std::vector<NodePosterior> nodes;

  void validate() const {
    if (static_cast<int>(nodes.size()) != dag.size()) throw ModelError("posterior node count differs from graph");
    for (int i = 0; i < dag.size(); ++i) {
      const auto& n = nodes[i];
      if (n.parents != dag.parents(i)) throw ModelError("posterior parents differ from graph at node " + std::to_string(i));
      if (n.mean.size() != n.dim() || n.cov.rows() != n.dim() || n.cov.cols() != n.dim())
        throw ModelError("posterior moments have wrong size at node " + std::to_string(i));
      if (!(n.noise_std > 0.0)) throw ModelError("noise stddev must be positive");
      if (n.dim() > 0 && Eigen::LLT<Matrix>(n.cov).info() != Eigen::Success)
        throw ModelError("posterior covariance not positive definite at node " + std::to_string(i));
    }
  }

  /// Broad prior matching a MechanismPrior: weights N(0, weight_variance) and
  /// the uniform bias replaced by a Gaussian with the same mean and variance.
  static LinearPosterior from_mechanism_prior(const Dag& dag, const MechanismPrior& p) {
    LinearPosterior out;
    out.dag = dag;
    const double bias_mean = 0.5 * (p.bias_low + p.bias_high);
    const double bias_var = (p.bias_high - p.bias_low) * (p.bias_high - p.bias_low) / 12.0;
    for (int i = 0; i < dag.size(); ++i) {
      NodePosterior n;
      n.parents = dag.parents(i);
      n.has_bias = true;
      n.mean = Vector::Zero(n.dim());
      n.mean(n.dim() - 1) = bias_mean;
      n.cov = Matrix::Identity(n.dim(), n.dim()) * p.weight_variance;
      n.cov(n.dim() - 1, n.dim() - 1) = bias_var;
      n.noise_std = std::sqrt(p.noise_variance);
      out.nodes.push_back(std::move(n));
    }
    return out;
  }
};

/// Bayesian linear regression update of node i's coefficients. Rows where i
/// is itself intervened are skipped; rows intervening a parent are kept.
inline NodePosterior update_node_posterior(const NodePosterior& prior, const Design& design, const Matrix& batch,
                                           int node) {
  if (design.clamp_of(node) || prior.dim() == 0 || batch.rows() == 0) return prior;
  const int k = prior.dim();
  const double prec_noise = 1.0 / (prior.noise_std * prior.noise_std);
  Eigen::LLT<Matrix> prior_llt(prior.cov);
  if (prior_llt.info() != Eigen::Success) throw ModelError("prior covariance not positive definite");
  const Matrix prior_prec = prior_llt.solve(Matrix::Identity(k, k));
  Matrix prec = prior_prec;
  Vector rhs = prior_prec * prior.mean;
  for (Eigen::Index r = 0; r < batch.rows(); ++r) {
    const Vector f = prior.features(batch, r);
    prec.noalias() += prec_noise * f * f.transpose();
    rhs.noalias() += prec_noise * batch(r, node) * f;
  }
  Eigen::LLT<Matrix> llt(prec);
  NodePosterior post = prior;
  post.cov = llt.solve(Matrix::Identity(k, k));
  post.cov = (0.5 * (post.cov + post.cov.transpose())).eval();
  post.mean = llt.solve(rhs);
  return post;
}

inline LinearPosterior update_posterior(const LinearPosterior& prior, const Design& design, const Matrix& batch) {
  LinearPosterior post = prior;
  for (int i = 0; i < prior.dag.size(); ++i) post.nodes[i] = update_node_posterior(prior.nodes[i], design, batch, i);
  return post;
}

inline LinearPosterior update_posterior(const LinearPosterior& prior, const History& h) {
  LinearPosterior post = prior;
  for (const auto& s : h.steps()) post = update_posterior(post, s.design, s.batch);
  return post;
}

/// Linear SCM with coefficients mean + L * eps, eps read from `std_normals`
/// (one entry per coefficient, node-major).
inline Scm scm_from_normals(const LinearPosterior& belief, std::span<const double> std_normals) {
  Scm s;
  s.dag = belief.dag;
  s.mechanism.kind = MechanismKind::LinearGaussian;
  std::size_t offset = 0;
  for (int i = 0; i < belief.dag.size(); ++i) {
    const auto& n = belief.nodes[i];
    NodeMechanism nm;
    nm.parents = n.parents;
    nm.noise_std = n.noise_std;
    nm.weights = Vector::Zero(static_cast<Eigen::Index>(n.parents.size()));
    if (n.dim() > 0) {
      Vector eps(n.dim());
      for (int k = 0; k < n.dim(); ++k) eps(k) = std_normals[offset + k];
      offset += n.dim();
      const Matrix l = Eigen::LLT<Matrix>(n.cov).matrixL();
      const Vector coef = n.mean + l * eps;
      for (std::size_t k = 0; k < n.parents.size(); ++k) nm.weights(k) = coef(k);
      if (n.has_bias) nm.bias = coef(n.dim() - 1);
    }
    s.mechanism.nodes.push_back(std::move(nm));
  }
  return s;
}

inline int coefficient_count(const LinearPosterior& belief) {
  int k = 0;
  for (const auto& n : belief.nodes) k += n.dim();
  return k;
}

inline Scm sample_scm(const LinearPosterior& belief, Rng& rng) {
  std::vector<double> eps(coefficient_count(belief));
  for (auto& e : eps) e = std_normal(rng);
  return scm_from_normals(belief, eps);
}

// ---------------------------------------------------------------------------
// Incremental EIG

struct McEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  int n = 0;
};

inline McEstimate summarize(const std::vector<double>& v) {
  McEstimate e;
  e.n = static_cast<int>(v.size());
  if (v.empty()) return e;
  // Summing in sorted order makes the result independent of input order.
  std::vector<double> sorted(v);
  std::sort(sorted.begin(), sorted.end());
  double s = 0.0;
  for (double x : sorted) s += x;
  e.mean = s / e.n;
  if (e.n > 1) {
    double ss = 0.0;
    for (double x : sorted) ss += (x - e.mean) * (x - e.mean);
    e.stderr_ = std::sqrt(ss / (e.n - 1) / e.n);
  }
  return e;
}

inline double log_mean_exp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s / static_cast<double>(v.size()));
}

namespace detail {

/// Equal-weight mixture of the z-laws of `budget` belief draws, built from a
/// shared set of standard normals so that mixtures for nearby beliefs vary
/// smoothly.
struct ZMixture {
  std::vector<GaussianLaw> laws;
  std::vector<Eigen::LLT<Matrix>> chol;

  ZMixture(const LinearPosterior& belief, const Query& q, double psi, const Matrix& normals) {
    const Design des = Design::single(q.intervention_node, psi);
    for (Eigen::Index k = 0; k < normals.rows(); ++k) {
      const Vector row = normals.row(k);
      Scm s = scm_from_normals(belief, std::span<const double>(row.data(), row.size()));
      laws.push_back(interventional_law(s, &des, q.targets));
      chol.emplace_back(laws.back().cov);
    }
  }

  double log_density(const Vector& z) const {
    std::vector<double> terms(laws.size());
    for (std::size_t k = 0; k < laws.size(); ++k) terms[k] = laws[k].log_density(z, chol[k]);
    return log_mean_exp(terms);
  }
};

}  // namespace detail

/// Monte Carlo estimate of the stage incremental EIG on z for `design` given
/// the current belief: E[log p(z | h_t) - log p(z | h_{t-1})] with outer draws
/// (theta, x_t, psi, z) and both densities evaluated as mixtures over `budget`
/// belief draws.
inline McEstimate incremental_eig(const LinearPosterior& belief, const Design& design, int n_int, const Query& q,
                                  int budget, Rng& rng) {
  if (budget < 2) throw ModelError("incremental_eig needs an MC budget of at least 2");
  if (q.kind != Query::Kind::Effect) throw ModelError("incremental_eig supports effect queries");
  q.validate(belief.dag.size());
  design.validate(belief.dag.size());
  const int k = coefficient_count(belief);
  const Matrix normals = standard_normal_matrix(budget, k, rng);
  const bool fixed_psi = q.psi_std == 0.0;
  std::optional<detail::ZMixture> before_fixed;
  if (fixed_psi) before_fixed.emplace(belief, q, q.psi_mean, normals);
  std::vector<double> gains;
  gains.reserve(budget);
  for (int outer = 0; outer < budget; ++outer) {
    const Scm truth = sample_scm(belief, rng);
    const Matrix x = simulate(truth, &design, n_int, rng);
    const double psi = sample_psi(q, rng);
    const Vector z = sample_query_value(truth, q, psi, rng);
    const LinearPosterior after = update_posterior(belief, design, x);
    const double log_after = detail::ZMixture(after, q, psi, normals).log_density(z);
    const double log_before = fixed_psi ? before_fixed->log_density(z)
                                        : detail::ZMixture(belief, q, psi, normals).log_density(z);
    gains.push_back(log_after - log_before);
  }
  return summarize(gains);
}

}  // namespace gocbed
