#pragma once

// Fixed-graph linear-Gaussian models with closed-form posteriors.

#include <cmath>
#include <utility>
#include <vector>

#include "gocbed/gaussian_oracle.hpp"

namespace gocbed::toy {

namespace detail {
inline NodePosterior diag_node(std::vector<int> parents, std::vector<double> mean, std::vector<double> sd,
                               double noise_std) {
  NodePosterior n;
  n.parents = std::move(parents);
  n.has_bias = false;
  n.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  n.cov = Matrix::Zero(n.dim(), n.dim());
  for (int k = 0; k < n.dim(); ++k) n.cov(k, k) = sd[k] * sd[k];
  n.noise_std = noise_std;
  return n;
}
}  // namespace detail

/// Six nodes, 0-indexed: 0->1, 0->2, 0->3, 1->2, 1->3, 2->4, 2->5, 3->4, 4->5.
inline Dag six_node_dag() {
  return Dag::from_edges(6, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 4}, {2, 5}, {3, 4}, {4, 5}});
}

/// Gaussian weight prior of the six-node model with `noise` holding each
/// node's noise stddev. No biases.
inline LinearPosterior six_node_prior(const std::vector<double>& noise = {0.2, 0.2, 0.2, 0.2, 0.3, 0.3}) {
  using detail::diag_node;
  LinearPosterior p;
  p.dag = six_node_dag();
  p.nodes.push_back(diag_node({}, {}, {}, noise[0]));
  p.nodes.push_back(diag_node({0}, {0.1}, {1.0}, noise[1]));
  p.nodes.push_back(diag_node({0, 1}, {-0.2, 1.0}, {0.5, 0.2}, noise[2]));
  p.nodes.push_back(diag_node({0, 1}, {-0.5, 0.3}, {0.3, 0.3}, noise[3]));
  p.nodes.push_back(diag_node({2, 3}, {0.2, -0.5}, {0.5, 0.5}, noise[4]));
  p.nodes.push_back(diag_node({2, 4}, {0.0, 0.0}, {0.5, 0.5}, noise[5]));
  p.validate();
  return p;
}

/// z = (X4, X5) under do(X2 = 10).
inline Query six_node_effect_query() { return Query::effect({4, 5}, 2, 10.0, 0.0); }

/// Every weight except those into the intervened node 2.
inline Query six_node_parameter_query() {
  return Query::parameters({{0, 1}, {0, 3}, {1, 3}, {2, 4}, {2, 5}, {3, 4}, {4, 5}});
}

/// X0 -> X1 -> X2 and X0 -> X2; z = X2 under do(X1 = 2).
inline LinearPosterior three_node_prior() {
  using detail::diag_node;
  LinearPosterior p;
  p.dag = Dag::from_edges(3, {{0, 1}, {1, 2}, {0, 2}});
  const double sd = std::sqrt(0.1);
  p.nodes.push_back(diag_node({}, {}, {}, sd));
  p.nodes.push_back(diag_node({0}, {0.0}, {1.0}, sd));
  p.nodes.push_back(diag_node({0, 1}, {0.0, 0.5}, {1.0, 1.0}, sd));
  p.validate();
  return p;
}

inline Query three_node_query() { return Query::effect({2}, 1, 2.0, 0.0); }

/// X0 -> X1 with theta ~ N(0, 1) and noise variance `noise_var` on both nodes.
inline LinearPosterior one_edge_prior(double noise_var = 0.1) {
  using detail::diag_node;
  LinearPosterior p;
  p.dag = Dag::from_edges(2, {{0, 1}});
  const double sd = std::sqrt(noise_var);
  p.nodes.push_back(diag_node({}, {}, {}, sd));
  p.nodes.push_back(diag_node({0}, {0.0}, {1.0}, sd));
  p.validate();
  return p;
}

/// z = X1 under do(X0 = psi).
inline Query one_edge_query(double psi = 1.0) { return Query::effect({1}, 0, psi, 0.0); }

/// Closed-form prior-omitted EIG E[log p(z | h_T)] on the one-edge model
/// after designs do(X0 = s_t), each with n_int rows.
inline double one_edge_prior_omitted_eig(const std::vector<double>& values, int n_int, double psi,
                                         double noise_var = 0.1) {
  double prec = 1.0;
  for (double s : values) prec += n_int * s * s / noise_var;
  const double var_z = psi * psi / prec + noise_var;
  return -0.5 * std::log(2.0 * M_PI * M_E * var_z);
}

/// Closed-form EIG on z for the same setting.
inline double one_edge_eig(const std::vector<double>& values, int n_int, double psi, double noise_var = 0.1) {
  return one_edge_prior_omitted_eig(values, n_int, psi, noise_var) -
         one_edge_prior_omitted_eig({}, n_int, psi, noise_var);
}

}  // namespace gocbed::toy
