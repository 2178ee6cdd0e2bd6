#pragma once

// Joint training of the policy, the posterior encoder, and the variational
// posterior by gradient ascent on the Monte Carlo bound estimate, with
// rollouts recorded on the autodiff tape so gradients reach every design.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gocbed/autodiff/checkpoint.hpp"
#include "gocbed/autodiff/optim.hpp"
#include "gocbed/config.hpp"
#include "gocbed/estimators.hpp"

namespace gocbed {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kCheckpointSchema = "gocbed.checkpoint/1";

// Stream tags for derive_seed.
namespace tag {
inline constexpr std::uint64_t env = 0x656e76, gumbel = 0x67756d, dropout = 0x64726f, random = 0x726e64,
                               init = 0x696e69, standardize = 0x737464;
}

// ---------------------------------------------------------------------------
// World: the prior over models

class World {
 public:
  World() = default;
  explicit World(const TrainConfig& c) : kind_(c.mechanism.kind), mprior_(c.mechanism.prior), ig_(c.mechanism.inverse_gamma_noise) {
    const auto& g = c.graph;
    if (g.kind == "toy") {
      if (g.toy == "six_node") conj_ = toy::six_node_prior();
      else if (g.toy == "three_node") conj_ = toy::three_node_prior();
      else conj_ = toy::one_edge_prior();
      exact_ = true;
      fixed_ = conj_->dag;
      d_ = fixed_->size();
    } else if (g.kind == "file") {
      fixed_ = load_adjacency(g.path);
      d_ = fixed_->size();
      if (kind_ == MechanismKind::LinearGaussian) {
        conj_ = LinearPosterior::from_mechanism_prior(*fixed_, mprior_);
        if (!g.observational.empty()) {
          Matrix obs = load_rows(g.observational, d_);
          conj_ = update_posterior(*conj_, Design{}, obs);
          sample_from_conj_ = true;
        }
      }
    } else {
      d_ = g.d;
      if (g.kind == "er") prior_ = ErdosRenyi{g.expected_degree};
      else prior_ = ScaleFree{g.m};
    }
    if (c.query.kind == Query::Kind::Parameters)
      for (auto [i, j] : c.query.edges)
        if (!fixed_->edge(i, j))
          throw ConfigError("query.edges", "edge " + std::to_string(i) + "->" + std::to_string(j) + " is not in the graph");
  }

  int d() const { return d_; }
  bool fixed_graph() const { return fixed_.has_value(); }
  /// Gaussian prior over the linear coefficients of a fixed graph. Exact for
  /// the toy models; for file graphs the uniform bias is moment-matched.
  const std::optional<LinearPosterior>& conjugate_prior() const { return conj_; }
  bool conjugate_exact() const { return exact_; }

  Scm sample(Rng& rng) const {
    Scm s;
    if (conj_ && (exact_ || sample_from_conj_)) {
      s = sample_scm(*conj_, rng);
    } else {
      s.dag = fixed_ ? *fixed_ : sample_dag(prior_, d_, rng);
      s.mechanism = sample_mechanism(s.dag, kind_, rng, mprior_);
    }
    if (ig_) s = with_inverse_gamma_noise(std::move(s), rng);
    return s;
  }

  /// Observational rows: CSV with d numeric columns, '#' comments allowed.
  static Matrix load_rows(const std::filesystem::path& path, int d) {
    std::ifstream is(path);
    if (!is) throw ConfigError("graph.observational", "cannot open " + path.string());
    std::vector<double> v;
    std::string line;
    int rows = 0;
    while (std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::stringstream ss(line);
      std::string cell;
      int cols = 0;
      while (std::getline(ss, cell, ',')) {
        try {
          v.push_back(std::stod(cell));
        } catch (const std::exception&) {
          throw ConfigError("graph.observational", "non-numeric cell in row " + std::to_string(rows + 1));
        }
        ++cols;
      }
      if (cols != d) throw ConfigError("graph.observational", "row " + std::to_string(rows + 1) + " has " + std::to_string(cols) + " columns, expected " + std::to_string(d));
      ++rows;
    }
    Matrix m(rows, d);
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < d; ++j) m(r, j) = v[static_cast<std::size_t>(r) * d + j];
    return m;
  }

 private:
  int d_ = 0;
  MechanismKind kind_ = MechanismKind::LinearGaussian;
  MechanismPrior mprior_;
  bool ig_ = false;
  std::optional<Dag> fixed_;
  GraphPrior prior_ = ErdosRenyi{};
  std::optional<LinearPosterior> conj_;
  bool exact_ = false, sample_from_conj_ = false;
};

// ---------------------------------------------------------------------------
// Networks

struct Networks {
  ad::ParamStore store;
  std::optional<Policy> policy;
  std::optional<EffectPosterior> effect;
  std::optional<ParameterPosterior> parameters;
  std::optional<EdgePosterior> edges;
  Query query;
  double min_value = -10.0, max_value = 10.0;

  static Networks build(const TrainConfig& c, const World& w) {
    Networks n;
    n.query = c.query;
    n.min_value = c.policy.net.min_value;
    n.max_value = c.policy.net.max_value;
    Rng rng = make_rng(c.seed, {tag::init});
    if (c.policy.kind == "learned") n.policy = Policy(n.store, "policy", c.policy.net, rng);
    const int d = w.d();
    switch (c.objective) {
      case Objective::GoalZ:
        n.effect = EffectPosterior(n.store, "posterior", d, c.query.dimension(d), c.posterior.encoder, c.posterior.flow, rng);
        break;
      case Objective::GoalTheta:
        n.parameters = ParameterPosterior(n.store, "posterior", d, c.query.dimension(d), c.posterior.encoder, c.posterior.flow, rng);
        break;
      case Objective::GoalGraph:
        n.edges = EdgePosterior(n.store, "posterior", c.posterior.encoder, c.posterior.edge, rng);
        break;
    }
    if (n.effect || n.parameters) {
      // Output standardization from prior draws of z.
      Rng srng = make_rng(c.seed, {tag::standardize});
      const int nz = c.query.dimension(d);
      Matrix zs(c.posterior.standardize_samples, nz);
      for (int r = 0; r < zs.rows(); ++r) {
        Scm m = w.sample(srng);
        const double psi = sample_psi(c.query, srng);
        zs.row(r) = query_value(m, c.query, psi, srng).transpose();
      }
      (n.effect ? n.effect->flow() : n.parameters->flow()).set_standardization(zs);
    }
    return n;
  }

  /// log q(z | h) for a batch whose history tensor may be on tape.
  Tensor log_q(const Tensor& history, const std::vector<const Rollout*>& rs, const ForwardContext& ctx) const {
    const int b = static_cast<int>(rs.size());
    if (edges) {
      const int d = history.dim(2);
      std::vector<double> adj;
      for (const Rollout* r : rs) adj.insert(adj.end(), r->z.data(), r->z.data() + r->z.size());
      return EdgePosterior::log_prob(edges->logits(history, ctx), Tensor::constant({b, d, d}, std::move(adj)));
    }
    const int nz = static_cast<int>(rs[0]->z.size());
    std::vector<double> z, psi;
    for (const Rollout* r : rs) {
      z.insert(z.end(), r->z.data(), r->z.data() + nz);
      psi.push_back(r->psi);
    }
    Tensor zt = Tensor::constant({b, nz}, std::move(z));
    if (effect) return effect->log_prob(zt, history, Tensor::constant({b}, std::move(psi)), ctx);
    return parameters->log_prob(zt, history, ctx);
  }

  /// Deployment log q at stage t (history prefixes) without a tape.
  std::vector<double> log_q_at(const std::vector<Rollout>& rs, int t, int batch = 128) const {
    ad::NoGradGuard guard;
    return detail::batched(rs, batch, [&](std::size_t a, std::size_t b) {
      std::vector<const Rollout*> ptrs;
      for (std::size_t i = a; i < b; ++i) ptrs.push_back(&rs[i]);
      Tensor lp = log_q(detail::stack_history(detail::prefixes(rs, a, b, t)), ptrs, ForwardContext{});
      return std::vector<double>(lp.data().begin(), lp.data().end());
    });
  }

  /// Deploy-mode design rule: argmax policy, or uniform random designs.
  BatchPolicy batch_policy() const {
    if (!policy) return random_policy(min_value, max_value);
    const Policy* p = &*policy;
    return [p](const std::vector<const History*>& hs, Rng&) {
      ad::NoGradGuard guard;
      return Policy::designs(p->act(history_tensor(hs), 1.0, nullptr, true, ForwardContext{}));
    };
  }
};

// ---------------------------------------------------------------------------
// On-tape simulation

/// Ancestral sampling of n_int rows per environment where the clamp target
/// and value come from the tape: x_i = s if target_i = 1, else
/// u_i = f_i(x_pa) + sigma_i * eps_i. The backward pass treats x_i as
/// t_i * s + (1 - t_i) * u_i, so straight-through target gradients see
/// d x_i / d t_i = s - u_i.
inline Tensor simulate_on_tape(const std::vector<const Scm*>& models, const Tensor& target, const Tensor& value,
                               const std::vector<Matrix>& noise) {
  const int b = static_cast<int>(models.size());
  const int d = target.dim(1);
  const int n = static_cast<int>(noise.at(0).rows());
  if (target.dim(0) != b || value.size() != static_cast<std::size_t>(b))
    throw ad::ShapeError("simulate_on_tape: batch mismatch");
  std::vector<double> x(static_cast<std::size_t>(b) * n * d), means(x.size());
  std::vector<double> row(d);
  for (int e = 0; e < b; ++e) {
    const Scm& s = *models[e];
    for (int r = 0; r < n; ++r) {
      for (int i : s.dag.topo_order()) {
        const double m = s.node_mean(i, row) + s.mechanism.nodes[i].noise_std * noise[e](r, i);
        const std::size_t at = (static_cast<std::size_t>(e) * n + r) * d + i;
        means[at] = m;
        row[i] = target[static_cast<std::size_t>(e) * d + i] == 1.0 ? value[e] : m;
        x[at] = row[i];
      }
    }
  }
  return ad::make_op({b, n, d}, x, {target, value}, [models, b, n, d, x, means](ad::Node& self) {
    const auto& tv = self.parents[0]->value;
    const auto& sv = self.parents[1]->value;
    auto& gt = self.parents[0]->ensure_grad();
    auto& gs = self.parents[1]->ensure_grad();
    std::vector<double> adj(d), xr(d);
    for (int e = 0; e < b; ++e) {
      const Scm& s = *models[e];
      const auto& order = s.dag.topo_order();
      for (int r = 0; r < n; ++r) {
        const std::size_t base = (static_cast<std::size_t>(e) * n + r) * d;
        for (int i = 0; i < d; ++i) {
          adj[i] = self.grad[base + i];
          xr[i] = x[base + i];
        }
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
          const int i = *it;
          const double t = tv[static_cast<std::size_t>(e) * d + i];
          gt[static_cast<std::size_t>(e) * d + i] += adj[i] * (sv[e] - means[base + i]);
          gs[e] += adj[i] * t;
          if (t == 1.0) continue;
          const auto& par = s.mechanism.nodes[i].parents;
          if (par.empty()) continue;
          const Vector grad = s.node_input_gradient(i, xr);
          for (std::size_t k = 0; k < par.size(); ++k) adj[par[k]] += (1.0 - t) * adj[i] * grad(static_cast<Eigen::Index>(k));
        }
      }
    }
  });
}

struct TapeBatch {
  std::vector<Rollout> envs;
  std::vector<Tensor> prefixes;  // history tensors after t = 0..T stages
  std::vector<std::uint64_t> env_seeds;
};

/// Samples n_env environments for training step `step` and rolls the policy
/// forward T stages on the tape.
inline TapeBatch rollout_envs(const TrainConfig& c, const World& w, const Networks& nets, long step, bool on_tape) {
  TapeBatch tb;
  const int b = c.n_env, d = w.d(), n = c.n_int;
  std::vector<Rng> rngs;
  for (int e = 0; e < b; ++e) {
    const std::uint64_t s = derive_seed(c.seed, {static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(e), tag::env});
    tb.env_seeds.push_back(s);
    rngs.emplace_back(s);
    Rollout r;
    try {
      r.model = w.sample(rngs[e]);
    } catch (const std::exception& ex) {
      throw TrainError("environment " + std::to_string(e) + " (seed " + std::to_string(s) + "): " + ex.what());
    }
    r.psi = sample_psi(c.query, rngs[e]);
    r.z = query_value(r.model, c.query, r.psi, rngs[e]);
    r.history = History(d, n);
    tb.envs.push_back(std::move(r));
  }
  std::vector<const Scm*> models;
  for (const auto& r : tb.envs) models.push_back(&r.model);
  Rng gumbel_rng = make_rng(c.seed, {static_cast<std::uint64_t>(step), tag::gumbel});
  Rng drop_rng = make_rng(c.seed, {static_cast<std::uint64_t>(step), tag::dropout});
  Rng random_rng = make_rng(c.seed, {static_cast<std::uint64_t>(step), tag::random});
  const ForwardContext ctx{on_tape, &drop_rng};
  const double tau = c.policy.tau(step - 1);

  tb.prefixes.push_back(Tensor::zeros({b, 1, d, 2}));
  for (int t = 0; t < c.T; ++t) {
    Tensor target, value;
    if (nets.policy) {
      PolicyOutput out = nets.policy->act(tb.prefixes.back(), tau, &gumbel_rng, !on_tape, ctx);
      target = out.target;
      value = out.value;
    } else {
      std::vector<double> oh(static_cast<std::size_t>(b) * d, 0.0), vals(b);
      for (int e = 0; e < b; ++e) {
        oh[static_cast<std::size_t>(e) * d + std::uniform_int_distribution<int>(0, d - 1)(random_rng)] = 1.0;
        vals[e] = uniform(random_rng, nets.min_value, nets.max_value);
      }
      target = Tensor::constant({b, d}, std::move(oh));
      value = Tensor::constant({b}, std::move(vals));
    }
    std::vector<Matrix> noise;
    for (int e = 0; e < b; ++e) noise.push_back(standard_normal_matrix(n, d, rngs[e]));
    Tensor x;
    try {
      x = simulate_on_tape(models, target, value, noise);
    } catch (const std::exception& ex) {
      throw TrainError(std::string("simulation failed: ") + ex.what());
    }
    for (int e = 0; e < b; ++e) {
      int node = 0;
      for (int j = 0; j < d; ++j)
        if (target[static_cast<std::size_t>(e) * d + j] == 1.0) node = j;
      const Design des = Design::single(node, value[e]);
      Matrix batch(n, d);
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < d; ++j) batch(r, j) = x[(static_cast<std::size_t>(e) * n + r) * d + j];
      tb.envs[e].step_log_lik.push_back(log_likelihood(tb.envs[e].model, des, batch));
      tb.envs[e].history.append(des, std::move(batch));
    }
    Tensor mask = ad::expand(target, 1, n);  // (B, n, d)
    Tensor stage = ad::concat({ad::reshape(x, {b, n, d, 1}), ad::reshape(mask, {b, n, d, 1})}, 3);
    tb.prefixes.push_back(t == 0 ? stage : ad::concat({tb.prefixes.back(), stage}, 1));
  }
  return tb;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricRecord {
  long step = 0;
  double wall_time = 0.0;
  std::string name;
  double value = 0.0;
  double stderr_ = 0.0;
  int n = 0;

  json to_json() const {
    return {{"step", step}, {"wall_time", wall_time}, {"name", name}, {"value", value}, {"stderr", stderr_}, {"n", n}};
  }
};

class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(std::filesystem::path path) : path_(std::move(path)) {}

  void append(const MetricRecord& r) const {
    if (path_.empty()) return;
    std::ofstream os(path_, std::ios::app);
    os << r.to_json().dump() << '\n';
    if (!os) throw TrainError("cannot append to " + path_.string());
  }

  /// Drops records after `step` (used when resuming from a checkpoint).
  void truncate_after(long step) const {
    if (path_.empty() || !std::filesystem::exists(path_)) return;
    std::ifstream is(path_);
    std::string line, kept;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (json::parse(line).at("step").get<long>() <= step) kept += line + "\n";
    }
    is.close();
    std::ofstream os(path_, std::ios::trunc);
    os << kept;
  }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Trainer

struct StepStats {
  double bound = 0.0;
  double stderr_ = 0.0;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)), world_(cfg_), nets_(Networks::build(cfg_, world_)) {
    if (!cfg_.policy.init_from.empty()) load_policy(cfg_.policy.init_from);
    std::vector<std::pair<std::string, Tensor>> pol, enc, post;
    for (const auto& [name, t] : nets_.store.items()) {
      if (name.rfind("policy/", 0) == 0) pol.emplace_back(name, t);
      else if (name.rfind("posterior/encoder/", 0) == 0) enc.emplace_back(name, t);
      else post.emplace_back(name, t);
    }
    const ad::ExponentialSchedule sched{cfg_.optim.gamma, cfg_.optim.interval};
    policy_opt_ = ad::Adam(pol, {cfg_.optim.policy_lr}, sched);
    encoder_opt_ = ad::Adam(enc, {cfg_.optim.encoder_lr}, sched);
    posterior_opt_ = ad::Adam(post, {cfg_.optim.posterior_lr}, sched);
  }

  const TrainConfig& config() const { return cfg_; }
  const World& world() const { return world_; }
  const Networks& networks() const { return nets_; }
  Networks& networks() { return nets_; }
  long step_count() const { return step_; }

  /// One ascent step on the bound estimate (training step `step_count()+1`).
  StepStats step() {
    const long k = step_ + 1;
    TapeBatch tb = rollout_envs(cfg_, world_, nets_, k, true);
    Rng drop_rng = make_rng(cfg_.seed, {static_cast<std::uint64_t>(k), tag::dropout, 1});
    const ForwardContext ctx{true, &drop_rng};
    std::vector<const Rollout*> ptrs;
    for (const auto& r : tb.envs) ptrs.push_back(&r);

    Tensor lp = nets_.log_q(tb.prefixes.back(), ptrs, ctx);
    check_finite(lp, tb, k);
    Tensor loss = ad::neg(ad::mean(lp));
    if (cfg_.posterior.all_stages) {
      // Earlier prefixes train the posterior only: their histories are
      // detached so the policy objective stays the final-stage bound.
      for (int t = 0; t < cfg_.T; ++t) {
        Tensor lpt = nets_.log_q(ad::detach(tb.prefixes[t]), ptrs, ctx);
        check_finite(lpt, tb, k);
        loss = ad::sub(loss, ad::mean(lpt));
      }
    }
    nets_.store.zero_grad();
    ad::backward(loss);
    const long clock = k - 1;
    if (nets_.policy && !cfg_.policy.freeze) policy_opt_.step(clock);
    encoder_opt_.step(clock);
    posterior_opt_.step(clock);
    step_ = k;
    McEstimate e = summarize(std::vector<double>(lp.data().begin(), lp.data().end()));
    return {e.mean, e.stderr_};
  }

  /// Deploy-mode bound estimate at stage t (default T) on the fixed eval seed.
  McEstimate evaluate(int n_rollouts = 0, int t = -1, std::uint64_t seed = 0) const {
    const int n = n_rollouts > 0 ? n_rollouts : cfg_.eval.n_rollouts;
    const auto rs = eval_rollouts(n, cfg_.T, seed ? seed : cfg_.eval.seed);
    return estimate_bound(nets_.log_q_at(rs, t < 0 ? cfg_.T : t));
  }

  std::vector<Rollout> eval_rollouts(int n, int T, std::uint64_t seed) const {
    const World* w = &world_;
    return generate_rollouts([w](Rng& rng) { return w->sample(rng); }, nets_.batch_policy(), T, cfg_.n_int, cfg_.query,
                             n, seed);
  }

  ad::Checkpoint checkpoint() const {
    ad::Checkpoint ck;
    ck.step = static_cast<std::uint64_t>(step_);
    ck.metadata = json{{"schema", kCheckpointSchema}, {"config", to_json(cfg_)}, {"d", world_.d()}}.dump();
    ck.arrays = ad::export_params(nets_.store);
    using Group = std::pair<const ad::Adam*, const char*>;
    for (const auto& [opt, prefix] :
         {Group{&policy_opt_, "optim/policy"}, Group{&encoder_opt_, "optim/encoder"}, Group{&posterior_opt_, "optim/posterior"}}) {
      auto st = opt->export_state(prefix);
      ck.arrays.insert(ck.arrays.end(), st.begin(), st.end());
    }
    return ck;
  }

  void restore(const ad::Checkpoint& ck) {
    ad::import_params(nets_.store, ck.arrays, {"optim/"});
    policy_opt_.import_state("optim/policy", ck.arrays);
    encoder_opt_.import_state("optim/encoder", ck.arrays);
    posterior_opt_.import_state("optim/posterior", ck.arrays);
    step_ = static_cast<long>(ck.step);
  }

  /// Full run into `out_dir`: metrics.jsonl, latest.ckpt at the checkpoint
  /// cadence, final.ckpt at the end. With `resume`, continues from
  /// latest.ckpt when present.
  void run(const std::filesystem::path& out_dir, bool resume = false) {
    std::filesystem::create_directories(out_dir);
    const auto latest = out_dir / "latest.ckpt";
    MetricsWriter metrics(out_dir / "metrics.jsonl");
    if (resume && std::filesystem::exists(latest)) {
      ad::Checkpoint ck = ad::load_checkpoint(latest);
      check_compatible(ck);
      restore(ck);
      metrics.truncate_after(step_);
    } else {
      std::filesystem::remove(out_dir / "metrics.jsonl");
    }
    const auto t0 = std::chrono::steady_clock::now();
    auto wall = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    while (step_ < cfg_.n_step) {
      StepStats s = step();
      if (step_ % cfg_.log_every == 0) metrics.append({step_, wall(), "train_bound", s.bound, s.stderr_, cfg_.n_env});
      if (cfg_.eval.every > 0 && step_ % cfg_.eval.every == 0 && step_ < cfg_.n_step) log_eval(metrics, wall());
      if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) ad::save_checkpoint(latest, checkpoint());
    }
    log_eval(metrics, wall());
    const auto ck = checkpoint();
    ad::save_checkpoint(latest, ck);
    ad::save_checkpoint(out_dir / "final.ckpt", ck);
  }

  void check_compatible(const ad::Checkpoint& ck) const {
    const json meta = json::parse(ck.metadata);
    if (meta.value("schema", "") != kCheckpointSchema)
      throw ad::CheckpointError("checkpoint schema " + meta.value("schema", std::string("<none>")) + " is not supported");
    if (meta.at("d").get<int>() != world_.d())
      throw ad::CheckpointError("checkpoint was trained for d=" + std::to_string(meta.at("d").get<int>()) +
                                ", config has d=" + std::to_string(world_.d()));
  }

 private:
  void log_eval(const MetricsWriter& metrics, double wall) const {
    McEstimate e = evaluate();
    metrics.append({step_, wall, "eval_bound", e.mean, e.stderr_, e.n});
  }

  void check_finite(const Tensor& lp, const TapeBatch& tb, long k) const {
    for (std::size_t i = 0; i < lp.size(); ++i)
      if (!std::isfinite(lp[i]))
        throw TrainError("non-finite log q at step " + std::to_string(k) + ", environment " + std::to_string(i) +
                         " (environment seed " + std::to_string(tb.env_seeds[i]) + ")");
  }

  void load_policy(const std::string& path) {
    ad::Checkpoint ck = ad::load_checkpoint(path);
    for (auto& [name, t] : nets_.store.items()) {
      if (name.rfind("policy/", 0) != 0) continue;
      const ad::NamedArray* a = ck.find(name);
      if (!a) throw ad::CheckpointError(path + " lacks policy parameter '" + name + "'");
      if (a->shape != t.shape()) throw ad::CheckpointError("policy parameter '" + name + "' has a different shape in " + path);
      Tensor h = t;
      std::copy(a->data.begin(), a->data.end(), h.mutable_data().begin());
    }
  }

  TrainConfig cfg_;
  World world_;
  Networks nets_;
  ad::Adam policy_opt_, encoder_opt_, posterior_opt_;
  long step_ = 0;
};

/// Rebuilds the trained networks stored in a checkpoint.
inline std::pair<TrainConfig, Trainer> load_trained(const std::filesystem::path& path) {
  ad::Checkpoint ck = ad::load_checkpoint(path);
  json meta;
  try {
    meta = json::parse(ck.metadata);
  } catch (const json::exception&) {
    throw ad::CheckpointError(path.string() + " has unreadable metadata");
  }
  if (meta.value("schema", "") != kCheckpointSchema)
    throw ad::CheckpointError(path.string() + ": unsupported checkpoint schema");
  TrainConfig cfg = parse_train_config(meta.at("config"));
  cfg.policy.init_from.clear();
  Trainer tr(cfg);
  tr.check_compatible(ck);
  tr.restore(ck);
  return {cfg, std::move(tr)};
}

}  // namespace gocbed
