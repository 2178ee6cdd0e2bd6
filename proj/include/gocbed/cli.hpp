#pragma once

// Operator commands: train, eval, estimate, ingest, serve.
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "gocbed/service.hpp"

#ifndef GOCBED_SOURCE_REVISION
#define GOCBED_SOURCE_REVISION "unknown"
#endif
#ifndef GOCBED_CONFIG_DIR
#define GOCBED_CONFIG_DIR "configs"
#endif

namespace gocbed::cli {

namespace fs = std::filesystem;

inline constexpr const char* kManifestSchema = "gocbed.manifest/1";
inline constexpr const char* kGraphSchema = "gocbed.graph/1";

/// Bad invocation or config: exit 2.
class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline fs::path output_root() {
  const char* v = std::getenv("GOCBED_OUT");
  return v && *v ? fs::path(v) : fs::path("runs");
}

/// A path, or the name of a bundled config ("toy_fixed_graph").
inline fs::path resolve_config(const std::string& name) {
  if (fs::exists(name)) return name;
  for (const fs::path& p : {fs::path(GOCBED_CONFIG_DIR) / name, fs::path(GOCBED_CONFIG_DIR) / (name + ".json")})
    if (fs::exists(p)) return p;
  throw UsageError("config '" + name + "' is neither a file nor a bundled config in " GOCBED_CONFIG_DIR);
}

/// Creates an empty output directory, refusing to clobber unless asked.
inline void prepare_dir(const fs::path& dir, bool overwrite) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!overwrite) throw UsageError(dir.string() + " exists and is not empty (pass --overwrite to replace it)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

inline void prepare_file(const fs::path& file, bool overwrite) {
  if (fs::exists(file) && !overwrite) throw UsageError(file.string() + " exists (pass --overwrite to replace it)");
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

inline std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("'" + tok + "' is not a non-negative integer");
    }
  }
  if (out.empty()) throw UsageError("empty seed list");
  return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool overwrite = false, resume = false;
};

inline json cmd_train(const TrainArgs& a, std::ostream& log) {
  const fs::path cpath = resolve_config(a.config);
  TrainConfig cfg = load_train_config(cpath);
  if (a.seed) cfg.seed = *a.seed;
  const std::string hash = config_hash(to_json(cfg));
  const std::string run_id = cpath.stem().string() + "-seed" + std::to_string(cfg.seed) + "-" + hash.substr(0, 8);
  const fs::path out = a.out.empty() ? output_root() / run_id : fs::path(a.out);
  if (a.resume) {
    if (fs::exists(out / "manifest.json")) throw UsageError(out.string() + " already holds a finished run");
    fs::create_directories(out);
  } else {
    prepare_dir(out, a.overwrite);
  }
  std::ofstream(out / "config.json") << to_json(cfg).dump(2) << '\n';
  log << "training " << run_id << " for " << cfg.n_step << " steps into " << out.string() << "\n";
  Trainer tr(cfg);
  tr.run(out, a.resume);
  json m = {{"schema", kManifestSchema},
            {"run_id", run_id},
            {"config", to_json(cfg)},
            {"config_hash", hash},
            {"source_revision", GOCBED_SOURCE_REVISION},
            {"seed", cfg.seed},
            {"artifacts",
             {{"config", "config.json"},
              {"final_checkpoint", "final.ckpt"},
              {"latest_checkpoint", "latest.ckpt"},
              {"metrics", "metrics.jsonl"}}}};
  for (const auto& [k, v] : m["artifacts"].items())
    if (!fs::exists(out / v.get<std::string>())) throw std::runtime_error("artifact " + v.get<std::string>() + " is missing");
  std::ofstream(out / "manifest.json") << m.dump(2) << '\n';
  log << "final eval bound " << tr.evaluate().mean << "\n";
  return m;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  int stages = -1;
  std::string seeds = "1,2,3,4";
  int n_rollouts = 256;
  int graph_samples = 256;
  std::string baseline;  // "" or "random"
  std::string out;
  bool overwrite = false;
};

inline void write_sweep(const Trainer& tr, const std::vector<std::uint64_t>& seeds, const SweepOptions& opt,
                        const fs::path& out, const std::string& prefix, std::ostream& log) {
  std::vector<EvalReport> reps;
  for (auto s : seeds) {
    reps.push_back(stage_sweep(tr, s, opt));
    reps.back().write(out / (prefix + "_seed" + std::to_string(s)));
  }
  const EvalReport agg = aggregate(reps);
  agg.write(out / (prefix + "_aggregate"));
  for (const auto& r : agg.rows) {
    log << prefix << " stage " << r.stage << ": bound " << r.bound.mean << " +- " << r.bound.stderr_;
    if (r.f1) log << ", F1 " << r.f1->mean << ", E-SHD " << r.eshd->mean;
    log << "\n";
  }
}

inline void cmd_eval(const EvalArgs& a, std::ostream& log) {
  if (!a.baseline.empty() && a.baseline != "random") throw UsageError("--baseline must be 'random'");
  const auto seeds = parse_seeds(a.seeds);
  if (a.n_rollouts < 2) throw UsageError("--n-rollouts must be >= 2");
  if (a.graph_samples < 2) throw UsageError("--graph-samples must be >= 2");
  auto [cfg, tr] = load_trained(a.checkpoint);
  const fs::path out = a.out.empty() ? output_root() / ("eval-" + config_hash(to_json(cfg)).substr(0, 8)) : fs::path(a.out);
  prepare_dir(out, a.overwrite);
  SweepOptions opt;
  opt.stages = a.stages;
  opt.n_rollouts = a.n_rollouts;
  opt.graph_samples = a.graph_samples;
  if (a.stages > cfg.T)
    log << "warning: evaluating " << a.stages << " stages past the trained horizon T=" << cfg.T << "\n";
  write_sweep(tr, seeds, opt, out, "eval", log);
  if (a.baseline == "random") {
    opt.random_policy = true;
    write_sweep(tr, seeds, opt, out, "random", log);
  }
}

// ---------------------------------------------------------------------------
// estimate

struct EstimateArgs {
  std::string setup = "toy";
  std::string estimator;
  std::string m = "100,3000,10000";
  int outer = 5000;
  std::uint64_t seed = 0;
  std::string checkpoint;  // design policy; random designs when empty
  std::string out;
  bool overwrite = false;
};

inline std::string estimate_csv(const EstimateArgs& a, const TrainConfig& cfg) {
  if (a.estimator != "nmc" && a.estimator != "bound") throw UsageError("--estimator must be nmc or bound");
  if (a.outer < 2) throw UsageError("--outer must be >= 2");
  const auto ms = parse_seeds(a.m);
  for (auto m : ms)
    if (m < 1) throw UsageError("inner sizes must be >= 1");
  World world(cfg);
  if (a.estimator == "nmc") {
    if (cfg.mechanism.kind != MechanismKind::LinearGaussian || !world.conjugate_exact() || cfg.query.kind != Query::Kind::Effect)
      throw UsageError("nmc needs a linear Gaussian toy model with an effect query");
    if (cfg.mechanism.inverse_gamma_noise) throw UsageError("nmc needs fixed noise variances");
  }
  std::optional<Trainer> design_source;
  if (!a.checkpoint.empty()) design_source.emplace(load_trained(a.checkpoint).second);
  std::ostringstream os;
  os << std::setprecision(17);
  os << "# config_hash=" << config_hash(to_json(cfg)) << " estimator=" << a.estimator
     << " policy=" << (a.checkpoint.empty() ? "random" : a.checkpoint) << "\n";
  os << "estimator,m,outer,mean,stderr,n\n";
  for (auto m : ms) {
    McEstimate e;
    if (a.estimator == "nmc") {
      const BatchPolicy pol = design_source ? design_source->networks().batch_policy()
                                            : random_policy(cfg.policy.net.min_value, cfg.policy.net.max_value);
      const auto rs = generate_rollouts([&world](Rng& r) { return world.sample(r); }, pol, cfg.T, cfg.n_int, cfg.query,
                                        a.outer, derive_seed(a.seed, {0x6f7574ULL}));
      Rng rng = make_rng(a.seed, {0x696e6eULL, m});
      e = estimate_nmc(rs, *world.conjugate_prior(), cfg.query, NmcOptions{static_cast<int>(m), static_cast<int>(m), false}, rng);
    } else {
      // Training budget of m sampled histories.
      TrainConfig c = cfg;
      c.seed = a.seed;
      c.n_step = static_cast<int>((m + c.n_env - 1) / c.n_env);
      if (a.checkpoint.empty()) {
        c.policy.kind = "random";
      } else {
        c.policy.init_from = a.checkpoint;
        c.policy.freeze = true;
      }
      Trainer tr(c);
      while (tr.step_count() < c.n_step) tr.step();
      const auto rs = tr.eval_rollouts(a.outer, c.T, derive_seed(a.seed, {0x6f7574ULL}));
      e = estimate_bound(tr.networks().log_q_at(rs, c.T));
    }
    os << a.estimator << ',' << m << ',' << a.outer << ',' << e.mean << ',' << e.stderr_ << ',' << e.n << '\n';
  }
  return os.str();
}

inline void cmd_estimate(const EstimateArgs& a, std::ostream& log) {
  const TrainConfig cfg = load_train_config(resolve_config(a.setup == "toy" ? "toy_fixed_graph" : a.setup));
  const fs::path out = a.out.empty() ? output_root() / ("estimate-" + a.estimator + ".csv") : fs::path(a.out);
  prepare_file(out, a.overwrite);
  const std::string csv = estimate_csv(a, cfg);
  std::ofstream(out) << csv;
  log << csv;
}

// ---------------------------------------------------------------------------
// ingest

inline json cmd_ingest(const std::string& adjacency, const std::string& out_arg, bool overwrite, std::ostream& log) {
  Dag g;
  try {
    g = load_adjacency(adjacency);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  const fs::path out = out_arg.empty() ? output_root() / ("graph-" + fs::path(adjacency).stem().string()) : fs::path(out_arg);
  prepare_dir(out, overwrite);
  std::ofstream(out / "graph.csv") << adjacency_csv(g);
  json edges = json::array();
  for (auto [i, j] : g.edges()) edges.push_back({i, j});
  json j = {{"schema", kGraphSchema}, {"source", adjacency},     {"d", g.size()},
            {"edges", edges},         {"topo_order", g.topo_order()}, {"adjacency", "graph.csv"}};
  std::ofstream(out / "graph.json") << j.dump(2) << '\n';
  log << "ingested " << g.size() << " nodes, " << edges.size() << " edges into " << out.string() << "\n";
  return j;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Goal-oriented causal experimental design"};
  app.require_subcommand(1);

  TrainArgs ta;
  std::uint64_t seed_value = 0;
  auto* train = app.add_subcommand("train", "Train a policy and posterior");
  train->add_option("--config", ta.config, "Config file or bundled config name")->required();
  auto* seed_opt = train->add_option("--seed", seed_value, "Overrides the config seed");
  train->add_option("--out", ta.out, "Run directory (default $GOCBED_OUT/<run id>)");
  train->add_flag("--overwrite", ta.overwrite, "Replace an existing run directory");
  train->add_flag("--resume", ta.resume, "Continue from latest.ckpt in the run directory");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Stage sweep of a trained checkpoint");
  eval->add_option("--checkpoint", ea.checkpoint)->required();
  eval->add_option("--stages", ea.stages, "Last stage to evaluate (default trained T)");
  eval->add_option("--seeds", ea.seeds, "Comma-separated evaluation seeds");
  eval->add_option("--n-rollouts", ea.n_rollouts);
  eval->add_option("--graph-samples", ea.graph_samples, "Graph draws per E-SHD value");
  eval->add_option("--baseline", ea.baseline, "Also report random designs on the same seeds")->check(CLI::IsMember({"random"}));
  eval->add_option("--out", ea.out);
  eval->add_flag("--overwrite", ea.overwrite);

  EstimateArgs sa;
  auto* est = app.add_subcommand("estimate", "NMC or variational-bound estimates over inner sizes");
  est->add_option("--setup", sa.setup, "'toy' or a config file");
  est->add_option("--estimator", sa.estimator)->required()->check(CLI::IsMember({"nmc", "bound"}));
  est->add_option("--m", sa.m, "Comma-separated inner sizes (training budgets for bound)");
  est->add_option("--outer", sa.outer, "Outer sample count");
  est->add_option("--seed", sa.seed);
  est->add_option("--checkpoint", sa.checkpoint, "Checkpoint whose policy picks the designs");
  est->add_option("--out", sa.out, "CSV path");
  est->add_flag("--overwrite", sa.overwrite);

  std::string adjacency, ingest_out;
  bool ingest_overwrite = false;
  auto* ingest = app.add_subcommand("ingest", "Validate and normalize an adjacency file");
  ingest->add_option("--adjacency", adjacency)->required();
  ingest->add_option("--out", ingest_out);
  ingest->add_flag("--overwrite", ingest_overwrite);

  std::string ck_root, session_dir, static_dir, host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Run the design service");
  serve->add_option("--checkpoints", ck_root, "Checkpoint root (default $GOCBED_OUT)");
  serve->add_option("--sessions", session_dir, "Session log directory (default <checkpoints>/sessions)");
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--static", static_dir, "Directory served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      if (seed_opt->count()) ta.seed = seed_value;
      cmd_train(ta, out);
    } else if (*eval) {
      cmd_eval(ea, out);
    } else if (*est) {
      cmd_estimate(sa, out);
    } else if (*ingest) {
      cmd_ingest(adjacency, ingest_out, ingest_overwrite, out);
    } else if (*serve) {
      const fs::path root = ck_root.empty() ? output_root() : fs::path(ck_root);
      service::DesignService svc(root, session_dir.empty() ? root / "sessions" : fs::path(session_dir));
      httplib::Server svr;
      service::mount(svr, svc, static_dir);
      out << "serving " << root.string() << " on http://" << host << ":" << port << std::endl;
      if (!svr.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    if (*train) err << "the last saved checkpoint, if any, is kept as latest.ckpt in the run directory\n";
    return 1;
  }
  return 0;
}

}  // namespace gocbed::cli
