#pragma once

// Structural causal models: graphs, graph priors, mechanisms, hard
// interventions, causal queries, and ancestral sampling.
//
// Edge convention everywhere: adjacency(i, j) == 1 means i -> j.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "gocbed/random.hpp"

namespace gocbed {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Graphs

/// Returns an edge (u, v) closing a directed cycle, if any.
inline std::optional<std::pair<int, int>> find_back_edge(int d, const std::vector<std::uint8_t>& adj) {
  std::vector<int> color(d, 0);  // 0 new, 1 on stack, 2 done
  for (int root = 0; root < d; ++root) {
    if (color[root]) continue;
    std::vector<std::pair<int, int>> stack{{root, 0}};
    color[root] = 1;
    while (!stack.empty()) {
      auto& [u, next] = stack.back();
      if (next < d) {
        const int v = next++;
        if (!adj[static_cast<std::size_t>(u) * d + v]) continue;
        if (color[v] == 1) return std::make_pair(u, v);
        if (color[v] == 0) {
          color[v] = 1;
          stack.push_back({v, 0});
        }
      } else {
        color[u] = 2;
        stack.pop_back();
      }
    }
  }
  return std::nullopt;
}

inline bool is_acyclic(int d, const std::vector<std::uint8_t>& adj) { return !find_back_edge(d, adj).has_value(); }

class Dag {
 public:
  Dag() = default;

  static Dag empty(int d) { return from_adjacency(d, std::vector<std::uint8_t>(static_cast<std::size_t>(d) * d, 0)); }

  static Dag from_edges(int d, const std::vector<std::pair<int, int>>& edges) {
    std::vector<std::uint8_t> adj(static_cast<std::size_t>(d) * d, 0);
    for (auto [i, j] : edges) {
      if (i < 0 || j < 0 || i >= d || j >= d)
        throw GraphError("edge " + std::to_string(i) + " -> " + std::to_string(j) + " out of range for d=" +
                         std::to_string(d));
      adj[static_cast<std::size_t>(i) * d + j] = 1;
    }
    return from_adjacency(d, std::move(adj));
  }

  static Dag from_adjacency(int d, std::vector<std::uint8_t> adj) {
    if (d < 1) throw GraphError("graph needs at least one node");
    if (adj.size() != static_cast<std::size_t>(d) * d)
      throw GraphError("adjacency has " + std::to_string(adj.size()) + " entries, expected " + std::to_string(d * d));
    for (auto& a : adj) a = a ? 1 : 0;
    for (int i = 0; i < d; ++i)
      if (adj[static_cast<std::size_t>(i) * d + i]) throw GraphError("self-loop on node " + std::to_string(i));
    if (auto back = find_back_edge(d, adj))
      throw GraphError("graph is cyclic: back edge " + std::to_string(back->first) + " -> " +
                       std::to_string(back->second));
    Dag g;
    g.d_ = d;
    g.adj_ = std::move(adj);
    g.parents_.assign(d, {});
    g.children_.assign(d, {});
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (g.edge(i, j)) {
          g.parents_[j].push_back(i);
          g.children_[i].push_back(j);
        }
    // Kahn's algorithm, lowest index first.
    std::vector<int> indeg(d);
    for (int j = 0; j < d; ++j) indeg[j] = static_cast<int>(g.parents_[j].size());
    std::vector<int> ready;
    for (int j = d - 1; j >= 0; --j)
      if (!indeg[j]) ready.push_back(j);
    while (!ready.empty()) {
      std::sort(ready.begin(), ready.end(), std::greater<>());
      const int u = ready.back();
      ready.pop_back();
      g.topo_.push_back(u);
      for (int v : g.children_[u])
        if (--indeg[v] == 0) ready.push_back(v);
    }
    return g;
  }

  int size() const { return d_; }
  bool edge(int from, int to) const { return adj_[static_cast<std::size_t>(from) * d_ + to] != 0; }
  const std::vector<std::uint8_t>& adjacency() const { return adj_; }
  const std::vector<int>& topo_order() const { return topo_; }
  const std::vector<int>& parents(int i) const { return parents_.at(i); }
  const std::vector<int>& children(int i) const { return children_.at(i); }
  int edge_count() const { return static_cast<int>(std::count(adj_.begin(), adj_.end(), 1)); }

  std::vector<std::pair<int, int>> edges() const {
    std::vector<std::pair<int, int>> out;
    for (int i = 0; i < d_; ++i)
      for (int j = 0; j < d_; ++j)
        if (edge(i, j)) out.emplace_back(i, j);
    return out;
  }

  /// Nodes reachable from any node of `sources` (sources included).
  std::vector<bool> descendants(const std::vector<int>& sources) const {
    std::vector<bool> seen(d_, false);
    std::vector<int> stack(sources.begin(), sources.end());
    for (int s : sources) seen[s] = true;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v : children_[u])
        if (!seen[v]) {
          seen[v] = true;
          stack.push_back(v);
        }
    }
    return seen;
  }

  bool operator==(const Dag& o) const { return d_ == o.d_ && adj_ == o.adj_; }

 private:
  int d_ = 0;
  std::vector<std::uint8_t> adj_;
  std::vector<int> topo_;
  std::vector<std::vector<int>> parents_, children_;
};

// ---------------------------------------------------------------------------
// Adjacency files

/// Parses either a comma-separated 0/1 matrix (d rows of d entries) or an
/// edge list with one "i j" pair per line (0-indexed). Lines starting with
/// '#' are comments; "# nodes N" fixes the node count of an edge list.
inline Dag parse_adjacency(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> lines;
  int declared_nodes = -1;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    if (line[first] == '#') {
      std::istringstream c(line.substr(first + 1));
      std::string word;
      int n = -1;
      if (c >> word >> n && word == "nodes") declared_nodes = n;
      continue;
    }
    lines.push_back(line);
  }
  const bool csv = std::any_of(lines.begin(), lines.end(), [](const std::string& l) {
    return l.find(',') != std::string::npos;
  });
  if (csv) {
    const int d = static_cast<int>(lines.size());
    std::vector<std::uint8_t> adj;
    for (int r = 0; r < d; ++r) {
      std::istringstream row(lines[r]);
      std::string cell;
      int count = 0;
      while (std::getline(row, cell, ',')) {
        auto b = cell.find_first_not_of(" \t");
        auto e = cell.find_last_not_of(" \t");
        cell = b == std::string::npos ? "" : cell.substr(b, e - b + 1);
        if (cell != "0" && cell != "1")
          throw GraphError("adjacency row " + std::to_string(r) + ": entry '" + cell + "' is not 0/1");
        adj.push_back(cell == "1");
        ++count;
      }
      if (count != d)
        throw GraphError("adjacency row " + std::to_string(r) + " has " + std::to_string(count) +
                         " entries, expected " + std::to_string(d));
    }
    return Dag::from_adjacency(d, std::move(adj));
  }
  std::vector<std::pair<int, int>> edges;
  int max_index = -1;
  for (std::size_t k = 0; k < lines.size(); ++k) {
    std::istringstream row(lines[k]);
    long i = -1, j = -1;
    std::string rest;
    if (!(row >> i >> j) || (row >> rest) || i < 0 || j < 0)
      throw GraphError("edge list line " + std::to_string(k + 1) + ": expected 'i j', got '" + lines[k] + "'");
    edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
    max_index = std::max<int>(max_index, static_cast<int>(std::max(i, j)));
  }
  const int d = declared_nodes > 0 ? declared_nodes : max_index + 1;
  if (d < 1) throw GraphError("adjacency file holds no nodes");
  return Dag::from_edges(d, edges);
}

inline Dag load_adjacency(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw GraphError("cannot open adjacency file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_adjacency(ss.str());
  } catch (const GraphError& e) {
    throw GraphError(path.string() + ": " + e.what());
  }
}

inline std::string adjacency_csv(const Dag& g) {
  std::ostringstream os;
  for (int i = 0; i < g.size(); ++i) {
    for (int j = 0; j < g.size(); ++j) os << (j ? "," : "") << (g.edge(i, j) ? 1 : 0);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Graph priors

struct ErdosRenyi {
  double expected_degree = 2.0;
};
struct ScaleFree {
  int m = 2;
};
struct FixedGraph {
  Dag dag;
};
struct GraphFile {
  std::string path;
};
using GraphPrior = std::variant<ErdosRenyi, ScaleFree, FixedGraph, GraphFile>;

/// Edge probability giving expected_degree * d / 2 expected edges, capped at 1.
inline double er_edge_probability(double expected_degree, int d) {
  const double pairs = 0.5 * d * (d - 1);
  return std::min(1.0, expected_degree * d / 2.0 / pairs);
}

inline std::vector<int> random_permutation(int d, Rng& rng) {
  std::vector<int> perm(d);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = d - 1; i > 0; --i) {
    const int j = static_cast<int>(std::uniform_int_distribution<int>(0, i)(rng));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

inline Dag permuted(int d, const std::vector<std::uint8_t>& adj, const std::vector<int>& perm) {
  std::vector<std::uint8_t> out(adj.size(), 0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (adj[static_cast<std::size_t>(i) * d + j]) out[static_cast<std::size_t>(perm[i]) * d + perm[j]] = 1;
  return Dag::from_adjacency(d, std::move(out));
}

inline Dag sample_dag(const GraphPrior& prior, int d, Rng& rng) {
  if (d < 2) throw ModelError("sample_dag needs d >= 2");
  return std::visit(
      [&](const auto& p) -> Dag {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ErdosRenyi>) {
          if (!(p.expected_degree > 0.0)) throw ModelError("ER expected degree must be positive");
          const double prob = er_edge_probability(p.expected_degree, d);
          std::vector<std::uint8_t> adj(static_cast<std::size_t>(d) * d, 0);
          // Lower-triangular part, i > j: edge i -> j.
          for (int i = 1; i < d; ++i)
            for (int j = 0; j < i; ++j) adj[static_cast<std::size_t>(i) * d + j] = uniform(rng) < prob;
          return permuted(d, adj, random_permutation(d, rng));
        } else if constexpr (std::is_same_v<P, ScaleFree>) {
          if (p.m < 1) throw ModelError("scale-free attachment m must be >= 1");
          const int m = std::min(p.m, d - 1);
          std::vector<std::uint8_t> adj(static_cast<std::size_t>(d) * d, 0);
          // Barabasi-Albert from a star on m + 1 nodes; edges point from the
          // earlier-attached node to the later one.
          std::vector<int> repeated;
          for (int v = 1; v <= m; ++v) {
            adj[static_cast<std::size_t>(0) * d + v] = 1;
            repeated.push_back(0);
            repeated.push_back(v);
          }
          for (int src = m + 1; src < d; ++src) {
            std::vector<int> targets;
            while (static_cast<int>(targets.size()) < m) {
              const int t = repeated[std::uniform_int_distribution<std::size_t>(0, repeated.size() - 1)(rng)];
              if (std::find(targets.begin(), targets.end(), t) == targets.end()) targets.push_back(t);
            }
            for (int t : targets) {
              adj[static_cast<std::size_t>(t) * d + src] = 1;
              repeated.push_back(t);
              repeated.push_back(src);
            }
          }
          return permuted(d, adj, random_permutation(d, rng));
        } else if constexpr (std::is_same_v<P, FixedGraph>) {
          if (p.dag.size() != d)
            throw ModelError("fixed graph has " + std::to_string(p.dag.size()) + " nodes, expected " + std::to_string(d));
          return p.dag;
        } else {
          Dag g = load_adjacency(p.path);
          if (g.size() != d)
            throw ModelError(p.path + " has " + std::to_string(g.size()) + " nodes, expected " + std::to_string(d));
          return g;
        }
      },
      prior);
}

// ---------------------------------------------------------------------------
// Mechanisms

enum class MechanismKind { LinearGaussian, MlpGaussian };

/// Feedforward net over the parent vector; weights[l] is (out, in).
struct NodeMlp {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  double forward(const Vector& input) const {
    Vector h = input;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      h = weights[l] * h + biases[l];
      if (l + 1 < weights.size()) h = h.cwiseMax(0.0);
    }
    return h(0);
  }

  /// d output / d input.
  Vector input_gradient(const Vector& input) const {
    std::vector<Vector> pre;
    Vector h = input;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      Vector z = weights[l] * h + biases[l];
      pre.push_back(z);
      h = l + 1 < weights.size() ? Vector(z.cwiseMax(0.0)) : z;
    }
    Vector g = Vector::Ones(1);
    for (std::size_t l = weights.size(); l-- > 0;) {
      if (l + 1 < weights.size()) g = g.cwiseProduct((pre[l].array() > 0.0).cast<double>().matrix());
      g = weights[l].transpose() * g;
    }
    return g;
  }
};

struct NodeMechanism {
  std::vector<int> parents;
  Vector weights;  // linear: one per parent, in `parents` order
  double bias = 0.0;
  NodeMlp mlp;
  double noise_std = 1.0;
};

struct Mechanism {
  MechanismKind kind = MechanismKind::LinearGaussian;
  std::vector<int> hidden_layout;  // MLP only
  std::vector<NodeMechanism> nodes;
};

struct MechanismPrior {
  double weight_variance = 2.0;
  double bias_low = -1.0, bias_high = 1.0;
  double noise_variance = 0.1;
  std::vector<int> hidden_layout{8, 8};
};

struct Scm {
  Dag dag;
  Mechanism mechanism;

  int size() const { return dag.size(); }

  /// f_i evaluated at the parent values found in the full row `x`.
  double node_mean(int i, std::span<const double> x) const {
    const auto& nm = mechanism.nodes[i];
    if (mechanism.kind == MechanismKind::LinearGaussian) {
      double v = nm.bias;
      for (std::size_t k = 0; k < nm.parents.size(); ++k) v += nm.weights(k) * x[nm.parents[k]];
      return v;
    }
    Vector in(static_cast<Eigen::Index>(nm.parents.size()));
    for (std::size_t k = 0; k < nm.parents.size(); ++k) in(k) = x[nm.parents[k]];
    return nm.mlp.forward(in);
  }

  /// d f_i / d x_parent, in `parents(i)` order.
  Vector node_input_gradient(int i, std::span<const double> x) const {
    const auto& nm = mechanism.nodes[i];
    if (mechanism.kind == MechanismKind::LinearGaussian) return nm.weights;
    Vector in(static_cast<Eigen::Index>(nm.parents.size()));
    for (std::size_t k = 0; k < nm.parents.size(); ++k) in(k) = x[nm.parents[k]];
    return nm.mlp.input_gradient(in);
  }

  void validate() const {
    const int d = dag.size();
    if (static_cast<int>(mechanism.nodes.size()) != d) throw ModelError("mechanism node count differs from graph");
    for (int i = 0; i < d; ++i) {
      const auto& nm = mechanism.nodes[i];
      if (nm.parents != dag.parents(i)) throw ModelError("mechanism parents differ from graph at node " + std::to_string(i));
      if (!(nm.noise_std > 0.0)) throw ModelError("noise stddev must be positive at node " + std::to_string(i));
      if (mechanism.kind == MechanismKind::LinearGaussian) {
        if (nm.weights.size() != static_cast<Eigen::Index>(nm.parents.size()))
          throw ModelError("weight count differs from parent count at node " + std::to_string(i));
      } else {
        const auto& layout = mechanism.hidden_layout;
        if (nm.mlp.weights.size() != layout.size() + 1) throw ModelError("MLP depth differs from layout");
        int prev = static_cast<int>(nm.parents.size());
        for (std::size_t l = 0; l < nm.mlp.weights.size(); ++l) {
          const int out = l < layout.size() ? layout[l] : 1;
          if (nm.mlp.weights[l].rows() != out || nm.mlp.weights[l].cols() != prev)
            throw ModelError("MLP layer shape mismatch at node " + std::to_string(i));
          prev = out;
        }
      }
    }
  }
};

inline Mechanism sample_mechanism(const Dag& dag, MechanismKind kind, Rng& rng, const MechanismPrior& prior = {}) {
  Mechanism m;
  m.kind = kind;
  const int d = dag.size();
  const double wsd = std::sqrt(prior.weight_variance);
  const double nsd = std::sqrt(prior.noise_variance);
  if (kind == MechanismKind::MlpGaussian) m.hidden_layout = prior.hidden_layout;
  for (int i = 0; i < d; ++i) {
    NodeMechanism nm;
    nm.parents = dag.parents(i);
    nm.noise_std = nsd;
    const int p = static_cast<int>(nm.parents.size());
    if (kind == MechanismKind::LinearGaussian) {
      nm.weights.resize(p);
      for (int k = 0; k < p; ++k) nm.weights(k) = wsd * std_normal(rng);
      nm.bias = uniform(rng, prior.bias_low, prior.bias_high);
    } else {
      int prev = p;
      std::vector<int> layers = prior.hidden_layout;
      layers.push_back(1);
      for (int out : layers) {
        Matrix w(out, prev);
        Vector b(out);
        for (Eigen::Index r = 0; r < w.size(); ++r) w.data()[r] = std_normal(rng);
        for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = std_normal(rng);
        nm.mlp.weights.push_back(std::move(w));
        nm.mlp.biases.push_back(std::move(b));
        prev = out;
      }
    }
    m.nodes.push_back(std::move(nm));
  }
  return m;
}

/// Evaluation-time noise shift: sigma_i^2 ~ InverseGamma(shape, scale).
inline Scm with_inverse_gamma_noise(Scm scm, Rng& rng, double shape = 10.0, double scale = 1.0) {
  std::gamma_distribution<double> gamma(shape, 1.0 / scale);
  for (auto& nm : scm.mechanism.nodes) nm.noise_std = std::sqrt(1.0 / gamma(rng));
  return scm;
}

// ---------------------------------------------------------------------------
// Designs, histories, queries

struct Design {
  std::vector<int> targets;
  std::vector<double> values;

  static Design single(int target, double value) { return Design{{target}, {value}}; }

  void validate(int d) const {
    if (targets.empty()) throw ModelError("design has no targets");
    if (targets.size() != values.size()) throw ModelError("design target/value count mismatch");
    for (std::size_t k = 0; k < targets.size(); ++k) {
      if (targets[k] < 0 || targets[k] >= d)
        throw ModelError("design target " + std::to_string(targets[k]) + " out of range for d=" + std::to_string(d));
      if (!std::isfinite(values[k])) throw ModelError("design value is not finite");
      for (std::size_t l = 0; l < k; ++l)
        if (targets[l] == targets[k]) throw ModelError("design repeats target " + std::to_string(targets[k]));
    }
  }

  /// Clamp value for node i, if intervened.
  std::optional<double> clamp_of(int i) const {
    for (std::size_t k = 0; k < targets.size(); ++k)
      if (targets[k] == i) return values[k];
    return std::nullopt;
  }
  bool operator==(const Design&) const = default;
};

struct HistoryStep {
  Design design;
  Matrix batch;  // n_int x d
};

class History {
 public:
  History() = default;
  History(int d, int n_int) : d_(d), n_int_(n_int) {
    if (d < 1 || n_int < 1) throw ModelError("history needs d >= 1 and n_int >= 1");
  }

  int d() const { return d_; }
  int n_int() const { return n_int_; }
  int size() const { return static_cast<int>(steps_.size()); }
  int total_rows() const { return size() * n_int_; }
  const std::vector<HistoryStep>& steps() const { return steps_; }
  const HistoryStep& operator[](int t) const { return steps_.at(t); }

  void append(Design design, Matrix batch) {
    design.validate(d_);
    if (batch.rows() != n_int_ || batch.cols() != d_)
      throw ModelError("outcome batch is " + std::to_string(batch.rows()) + "x" + std::to_string(batch.cols()) +
                       ", expected " + std::to_string(n_int_) + "x" + std::to_string(d_));
    if (!batch.allFinite()) throw ModelError("outcome batch holds non-finite values");
    for (std::size_t k = 0; k < design.targets.size(); ++k)
      for (int r = 0; r < n_int_; ++r)
        if (batch(r, design.targets[k]) != design.values[k])
          throw ModelError("row " + std::to_string(r) + " has x[" + std::to_string(design.targets[k]) +
                           "] != clamp value");
    steps_.push_back({std::move(design), std::move(batch)});
  }

  History prefix(int t) const {
    History h(d_, n_int_);
    h.steps_.assign(steps_.begin(), steps_.begin() + std::min(t, size()));
    return h;
  }

 private:
  int d_ = 0, n_int_ = 1;
  std::vector<HistoryStep> steps_;
};

struct Query {
  enum class Kind { Effect, Graph, Parameters };
  Kind kind = Kind::Graph;
  std::vector<int> targets;                // Effect
  int intervention_node = -1;              // Effect
  double psi_mean = 0.0, psi_std = 0.0;    // Effect: psi ~ N(mean, std^2)
  std::vector<std::pair<int, int>> edges;  // Parameters: weights of these edges

  static Query effect(std::vector<int> targets, int node, double mean, double stddev = 0.0) {
    Query q;
    q.kind = Kind::Effect;
    q.targets = std::move(targets);
    q.intervention_node = node;
    q.psi_mean = mean;
    q.psi_std = stddev;
    return q;
  }
  static Query graph() { return Query{}; }
  static Query parameters(std::vector<std::pair<int, int>> edges) {
    Query q;
    q.kind = Kind::Parameters;
    q.edges = std::move(edges);
    return q;
  }

  void validate(int d) const {
    if (kind == Kind::Effect) {
      if (targets.empty()) throw ModelError("effect query needs targets");
      if (intervention_node < 0 || intervention_node >= d) throw ModelError("query intervention node out of range");
      for (int t : targets) {
        if (t < 0 || t >= d) throw ModelError("query target out of range");
        if (t == intervention_node) throw ModelError("query targets must exclude the intervened node");
      }
      if (!(psi_std >= 0.0)) throw ModelError("query psi stddev must be >= 0");
    } else if (kind == Kind::Parameters) {
      if (edges.empty()) throw ModelError("parameter query needs edges");
      for (auto [i, j] : edges)
        if (i < 0 || j < 0 || i >= d || j >= d) throw ModelError("parameter query edge out of range");
    }
  }

  /// Dimension of z (d*d for graph queries).
  int dimension(int d) const {
    switch (kind) {
      case Kind::Effect: return static_cast<int>(targets.size());
      case Kind::Parameters: return static_cast<int>(edges.size());
      case Kind::Graph: return d * d;
    }
    return 0;
  }
};

inline double sample_psi(const Query& q, Rng& rng) {
  if (q.kind != Query::Kind::Effect) return 0.0;
  return q.psi_std > 0.0 ? q.psi_mean + q.psi_std * std_normal(rng) : q.psi_mean;
}

// ---------------------------------------------------------------------------
// Ancestral sampling

/// Ancestral sampling with the given standard-normal noise (n x d). Intervened
/// nodes take their clamp values exactly.
inline Matrix simulate_with_noise(const Scm& scm, const Design* design, const Matrix& noise) {
  const int d = scm.size();
  if (noise.cols() != d) throw ModelError("noise matrix has wrong column count");
  if (design) design->validate(d);
  std::vector<std::optional<double>> clamp(d);
  if (design)
    for (int i = 0; i < d; ++i) clamp[i] = design->clamp_of(i);
  const auto n = noise.rows();
  Matrix out(n, d);
  std::vector<double> row(d);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (int i : scm.dag.topo_order()) {
      row[i] = clamp[i] ? *clamp[i]
                        : scm.node_mean(i, row) + scm.mechanism.nodes[i].noise_std * noise(r, i);
    }
    for (int i = 0; i < d; ++i) out(r, i) = row[i];
  }
  return out;
}

inline Matrix standard_normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = nd(rng);
  return m;
}

inline Matrix simulate(const Scm& scm, const Design* design, int n, Rng& rng) {
  return simulate_with_noise(scm, design, standard_normal_matrix(n, scm.size(), rng));
}

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

/// log p(batch | scm, design): sum over rows and non-intervened nodes.
inline double log_likelihood(const Scm& scm, const Design& design, const Matrix& batch) {
  const int d = scm.size();
  double total = 0.0;
  std::vector<double> row(d);
  for (Eigen::Index r = 0; r < batch.rows(); ++r) {
    for (int i = 0; i < d; ++i) row[i] = batch(r, i);
    for (int i = 0; i < d; ++i) {
      if (design.clamp_of(i)) continue;
      const double sd = scm.mechanism.nodes[i].noise_std;
      const double e = (row[i] - scm.node_mean(i, row)) / sd;
      total += -0.5 * e * e - std::log(sd) - kLogSqrt2Pi;
    }
  }
  return total;
}

inline double log_likelihood(const Scm& scm, const History& h) {
  double total = 0.0;
  for (const auto& s : h.steps()) total += log_likelihood(scm, s.design, s.batch);
  return total;
}

/// One draw of z = X_targets under do(X_j = psi).
inline Vector sample_query_value(const Scm& scm, const Query& q, double psi, Rng& rng) {
  if (q.kind != Query::Kind::Effect) throw ModelError("sample_query_value requires an effect query");
  q.validate(scm.size());
  const Design des = Design::single(q.intervention_node, psi);
  Matrix x = simulate(scm, &des, 1, rng);
  Vector z(static_cast<Eigen::Index>(q.targets.size()));
  for (std::size_t k = 0; k < q.targets.size(); ++k) z(k) = x(0, q.targets[k]);
  return z;
}

/// Linear weights of the queried edges.
inline Vector parameter_query_value(const Scm& scm, const Query& q) {
  if (q.kind != Query::Kind::Parameters) throw ModelError("parameter_query_value requires a parameter query");
  if (scm.mechanism.kind != MechanismKind::LinearGaussian) throw ModelError("parameter queries need a linear mechanism");
  Vector z(static_cast<Eigen::Index>(q.edges.size()));
  for (std::size_t k = 0; k < q.edges.size(); ++k) {
    auto [i, j] = q.edges[k];
    const auto& par = scm.mechanism.nodes[j].parents;
    auto it = std::find(par.begin(), par.end(), i);
    if (it == par.end()) throw ModelError("queried edge is absent from the graph");
    z(k) = scm.mechanism.nodes[j].weights(it - par.begin());
  }
  return z;
}

}  // namespace gocbed
