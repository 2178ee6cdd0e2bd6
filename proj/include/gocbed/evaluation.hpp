#pragma once

// Discovery metrics (SHD, expected SHD, edge F1) and stage-sweep evaluation
// of a trained policy and posterior.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gocbed/trainer.hpp"

namespace gocbed {

inline constexpr const char* kEvalSchema = "gocbed.eval/1";

/// Structural Hamming distance: the number of unordered pairs {i, j} whose
/// edge state differs, so a reversed edge counts once.
inline int shd(int d, const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  const std::size_t n = static_cast<std::size_t>(d) * d;
  if (a.size() != n || b.size() != n) throw std::invalid_argument("shd: adjacency sizes differ from d*d");
  int s = 0;
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j)
      if (a[i * d + j] != b[i * d + j] || a[j * d + i] != b[j * d + i]) ++s;
  return s;
}

inline int shd(const Dag& a, const Dag& b) {
  if (a.size() != b.size()) throw std::invalid_argument("shd: graphs differ in size");
  return shd(a.size(), a.adjacency(), b.adjacency());
}

/// Mean SHD between acyclic posterior draws and the truth.
inline McEstimate expected_shd(const Matrix& probs, const Dag& truth, int n, Rng& rng, int max_tries = 1000) {
  if (n < 2) throw std::invalid_argument("expected_shd needs n >= 2");
  if (probs.rows() != truth.size()) throw std::invalid_argument("expected_shd: dimension mismatch");
  std::vector<double> v;
  v.reserve(n);
  for (int k = 0; k < n; ++k) v.push_back(shd(graph_sample(probs, rng, max_tries), truth));
  return summarize(v);
}

/// F1 of thresholded edge marginals against the true directed edges. Empty
/// prediction against an empty truth scores 1.
inline double f1_edges(const Matrix& probs, const Dag& truth, double threshold = 0.5) {
  const int d = truth.size();
  if (probs.rows() != d || probs.cols() != d) throw std::invalid_argument("f1_edges: dimension mismatch");
  int tp = 0, fp = 0, fn = 0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      if (i == j) continue;
      const bool pred = probs(i, j) > threshold, real = truth.edge(i, j);
      tp += pred && real;
      fp += pred && !real;
      fn += !pred && real;
    }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * tp / (2.0 * tp + fp + fn);
}

/// One uniformly random single-node design.
inline Design random_design(int d, double lo, double hi, Rng& rng) {
  if (d < 1 || !(lo <= hi)) throw std::invalid_argument("random_design: bad node count or range");
  const int node = std::uniform_int_distribution<int>(0, d - 1)(rng);
  return Design::single(node, uniform(rng, lo, hi));
}

// ---------------------------------------------------------------------------
// Stage sweep

struct StageRow {
  int stage = 0;
  McEstimate bound;
  std::optional<McEstimate> eshd, f1;
};

struct EvalReport {
  std::string config_hash;
  std::string policy = "trained";  // trained | random
  std::vector<std::uint64_t> seeds;
  int trained_T = 0;
  int n_rollouts = 0;
  int graph_samples = 0;
  bool beyond_trained_horizon = false;
  std::vector<StageRow> rows;  // stages 0..T

  json to_json() const {
    auto est = [](const McEstimate& e) { return json{{"mean", e.mean}, {"stderr", e.stderr_}, {"n", e.n}}; };
    json rs = json::array();
    for (const auto& r : rows) {
      json j = {{"stage", r.stage}, {"bound", est(r.bound)}};
      j["eshd"] = r.eshd ? est(*r.eshd) : json(nullptr);
      j["f1"] = r.f1 ? est(*r.f1) : json(nullptr);
      rs.push_back(j);
    }
    return {{"schema", kEvalSchema},       {"config_hash", config_hash},
            {"policy", policy},            {"seeds", seeds},
            {"trained_T", trained_T},      {"n_rollouts", n_rollouts},
            {"graph_samples", graph_samples}, {"beyond_trained_horizon", beyond_trained_horizon},
            {"rows", rs}};
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "# config_hash=" << config_hash << " policy=" << policy << "\n";
    os << "stage,bound_mean,bound_stderr,eshd_mean,eshd_stderr,f1_mean,f1_stderr\n";
    for (const auto& r : rows) {
      os << r.stage << ',' << r.bound.mean << ',' << r.bound.stderr_ << ',';
      if (r.eshd) os << r.eshd->mean << ',' << r.eshd->stderr_;
      else os << ',';
      os << ',';
      if (r.f1) os << r.f1->mean << ',' << r.f1->stderr_;
      else os << ',';
      os << '\n';
    }
    return os.str();
  }

  void write(const std::filesystem::path& stem) const {
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    std::ofstream(stem.string() + ".json") << to_json().dump(2) << '\n';
    std::ofstream(stem.string() + ".csv") << to_csv();
  }
};

struct SweepOptions {
  int stages = -1;        // -1: trained T
  int n_rollouts = 256;
  int graph_samples = 256;
  bool random_policy = false;  // replace the trained policy by uniform random designs
};

/// Evaluates one seed: fresh deploy-mode rollouts to the last stage, then the
/// bound (and discovery metrics for graph queries) on each stage's prefix.
inline EvalReport stage_sweep(const Trainer& tr, std::uint64_t seed, const SweepOptions& opt = {}) {
  const TrainConfig& c = tr.config();
  const int T = opt.stages < 0 ? c.T : opt.stages;
  if (T < 0) throw std::invalid_argument("stage count must be >= 0");
  // Parameter handles are shared, so the copy costs no tensor data.
  Networks random_view;
  if (opt.random_policy) {
    random_view = tr.networks();
    random_view.policy.reset();
  }
  const Networks& nets = opt.random_policy ? random_view : tr.networks();
  const World* w = &tr.world();
  const auto rs = generate_rollouts([w](Rng& rng) { return w->sample(rng); }, nets.batch_policy(), T, c.n_int,
                                    c.query, opt.n_rollouts, seed);
  EvalReport rep;
  rep.config_hash = config_hash(to_json(c));
  rep.policy = opt.random_policy ? "random" : "trained";
  rep.seeds = {seed};
  rep.trained_T = c.T;
  rep.n_rollouts = opt.n_rollouts;
  rep.beyond_trained_horizon = T > c.T;
  for (int t = 0; t <= T; ++t) {
    StageRow row;
    row.stage = t;
    row.bound = estimate_bound(nets.log_q_at(rs, t));
    if (nets.edges) {
      rep.graph_samples = opt.graph_samples;
      Rng grng = make_rng(seed, {0x736864ULL, static_cast<std::uint64_t>(t)});
      std::vector<double> eshd, f1;
      ad::NoGradGuard guard;
      for (std::size_t a = 0; a < rs.size(); a += 128) {
        const std::size_t b = std::min(rs.size(), a + 128);
        Tensor logits = nets.edges->logits(detail::stack_history(detail::prefixes(rs, a, b, t)), ForwardContext{});
        for (std::size_t i = a; i < b; ++i) {
          const Matrix p = edge_probabilities(logits, static_cast<int>(i - a));
          eshd.push_back(expected_shd(p, rs[i].model.dag, opt.graph_samples, grng).mean);
          f1.push_back(f1_edges(p, rs[i].model.dag));
        }
      }
      row.eshd = summarize(eshd);
      row.f1 = summarize(f1);
    }
    rep.rows.push_back(row);
  }
  return rep;
}

/// Mean over per-seed reports with the standard error across seeds.
inline EvalReport aggregate(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate needs at least one report");
  EvalReport out = reports[0];
  out.seeds.clear();
  for (const auto& r : reports) {
    if (r.rows.size() != out.rows.size()) throw std::invalid_argument("aggregate: reports differ in stage count");
    out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
  }
  auto across = [&](auto pick) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(pick(r));
    McEstimate e = summarize(v);
    if (v.size() == 1) e.stderr_ = 0.0;
    return e;
  };
  for (std::size_t s = 0; s < out.rows.size(); ++s) {
    out.rows[s].bound = across([&](const EvalReport& r) { return r.rows[s].bound.mean; });
    if (out.rows[s].eshd) out.rows[s].eshd = across([&](const EvalReport& r) { return r.rows[s].eshd->mean; });
    if (out.rows[s].f1) out.rows[s].f1 = across([&](const EvalReport& r) { return r.rows[s].f1->mean; });
  }
  return out;
}

}  // namespace gocbed
