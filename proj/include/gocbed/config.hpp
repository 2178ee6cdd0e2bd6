#pragma once

// Training configuration, schema "gocbed.train/1". Parsing is strict: unknown
// keys and missing required fields raise ConfigError naming the field path.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gocbed/encoder.hpp"
#include "gocbed/posteriors.hpp"
#include "gocbed/toy_models.hpp"

namespace gocbed {

using json = nlohmann::json;

inline constexpr const char* kTrainSchema = "gocbed.train/1";

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& msg)
      : std::runtime_error(field + ": " + msg), field(field) {}
  std::string field;
};

enum class Objective { GoalZ, GoalTheta, GoalGraph };

inline const char* objective_name(Objective o) {
  switch (o) {
    case Objective::GoalZ: return "goal_z";
    case Objective::GoalTheta: return "goal_theta";
    case Objective::GoalGraph: return "goal_graph";
  }
  return "";
}

struct GraphSpec {
  std::string kind = "toy";  // toy | er | sf | file
  std::string toy;           // six_node | three_node | one_edge
  int d = 0;                 // er, sf
  double expected_degree = 1.0;
  int m = 1;
  std::string path;          // file
  std::string observational; // file + linear: CSV of observational rows
};

struct MechanismSpec {
  MechanismKind kind = MechanismKind::LinearGaussian;
  MechanismPrior prior;
  bool inverse_gamma_noise = false;
};

struct PolicySpec {
  std::string kind = "learned";  // learned | random
  PolicyConfig net;
  TauSchedule tau;
  std::string init_from;  // checkpoint whose policy/ parameters seed this run
  bool freeze = false;
};

struct PosteriorSpec {
  EncoderConfig encoder{16, 8, 8, 16, 0.05};
  FlowConfig flow;
  EdgeConfig edge;
  bool all_stages = true;
  int standardize_samples = 2000;
};

struct OptimSpec {
  double policy_lr = 5e-4;
  double encoder_lr = 5e-4;
  double posterior_lr = 5e-4;
  double gamma = 0.8;
  long interval = 1000;
};

struct EvalSpec {
  int every = 0;  // 0: only at the end
  int n_rollouts = 256;
  std::uint64_t seed = 1000003;
};

struct TrainConfig {
  Objective objective = Objective::GoalZ;
  int T = 2;
  int n_step = 1000;
  int n_env = 10;
  int n_int = 1;
  GraphSpec graph;
  MechanismSpec mechanism;
  Query query;
  PolicySpec policy;
  PosteriorSpec posterior;
  OptimSpec optim;
  EvalSpec eval;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: only at the end
  int log_every = 1;

  /// Node count implied by the graph section (resolves files and toys).
  int dimension() const;
  void validate() const;
};

// ---------------------------------------------------------------------------
// Strict JSON reading

namespace detail {

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  T req(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(field(key), "required field is missing");
    return get<T>(key);
  }
  template <class T>
  T opt(const std::string& key, T fallback) {
    return j_.contains(key) ? get<T>(key) : fallback;
  }
  Reader child(const std::string& key, bool required) {
    used_.insert(key);
    if (!j_.contains(key)) {
      if (required) throw ConfigError(field(key), "required field is missing");
      static const json empty = json::object();
      return Reader(empty, field(key));
    }
    return Reader(j_.at(key), field(key));
  }
  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
  }

 private:
  template <class T>
  T get(const std::string& key) {
    used_.insert(key);
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key), "has the wrong type");
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline MechanismKind parse_mechanism_kind(const std::string& s, const std::string& field) {
  if (s == "linear") return MechanismKind::LinearGaussian;
  if (s == "mlp") return MechanismKind::MlpGaussian;
  throw ConfigError(field, "must be \"linear\" or \"mlp\", got \"" + s + "\"");
}

inline EncoderConfig read_encoder(Reader& r, EncoderConfig e) {
  e.embedding = r.opt("embedding", e.embedding);
  e.layers = r.opt("layers", e.layers);
  e.heads = r.opt("heads", e.heads);
  e.key_size = r.opt("key_size", e.key_size);
  e.dropout = r.opt("dropout", e.dropout);
  return e;
}

inline json encoder_json(const EncoderConfig& e) {
  return {{"embedding", e.embedding}, {"layers", e.layers}, {"heads", e.heads}, {"key_size", e.key_size},
          {"dropout", e.dropout}};
}

}  // namespace detail

inline Query parse_query(const json& j, const std::string& path = "query") {
  detail::Reader r(j, path);
  const auto kind = r.req<std::string>("kind");
  Query q;
  if (kind == "effect") {
    q = Query::effect(r.req<std::vector<int>>("targets"), r.req<int>("node"), r.opt("psi_mean", 0.0),
                      r.opt("psi_std", 0.0));
  } else if (kind == "graph") {
    q = Query::graph();
  } else if (kind == "parameters") {
    q = Query::parameters(r.req<std::vector<std::pair<int, int>>>("edges"));
  } else {
    throw ConfigError(r.field("kind"), "must be effect, graph, or parameters");
  }
  r.finish();
  return q;
}

inline json query_json(const Query& q) {
  switch (q.kind) {
    case Query::Kind::Effect:
      return {{"kind", "effect"}, {"targets", q.targets}, {"node", q.intervention_node},
              {"psi_mean", q.psi_mean}, {"psi_std", q.psi_std}};
    case Query::Kind::Graph: return {{"kind", "graph"}};
    case Query::Kind::Parameters: return {{"kind", "parameters"}, {"edges", q.edges}};
  }
  return {};
}

inline TrainConfig parse_train_config(const json& j) {
  detail::Reader r(j, "");
  const auto schema = r.req<std::string>("schema");
  if (schema != kTrainSchema) throw ConfigError("schema", "unsupported schema \"" + schema + "\" (expected " + kTrainSchema + ")");
  TrainConfig c;
  const auto obj = r.req<std::string>("objective");
  if (obj == "goal_z") c.objective = Objective::GoalZ;
  else if (obj == "goal_theta") c.objective = Objective::GoalTheta;
  else if (obj == "goal_graph") c.objective = Objective::GoalGraph;
  else throw ConfigError("objective", "must be goal_z, goal_theta, or goal_graph");
  c.T = r.req<int>("T");
  c.n_step = r.req<int>("n_step");
  c.n_env = r.opt("n_env", c.n_env);
  c.n_int = r.opt("n_int", c.n_int);
  c.seed = r.opt<std::uint64_t>("seed", 0);
  c.checkpoint_every = r.opt("checkpoint_every", 0);
  c.log_every = r.opt("log_every", 1);

  {
    auto g = r.child("graph", true);
    c.graph.kind = g.req<std::string>("kind");
    if (c.graph.kind == "toy") {
      c.graph.toy = g.req<std::string>("name");
      if (c.graph.toy != "six_node" && c.graph.toy != "three_node" && c.graph.toy != "one_edge")
        throw ConfigError(g.field("name"), "unknown toy \"" + c.graph.toy + "\"");
    } else if (c.graph.kind == "er") {
      c.graph.d = g.req<int>("d");
      c.graph.expected_degree = g.opt("expected_degree", 1.0);
    } else if (c.graph.kind == "sf") {
      c.graph.d = g.req<int>("d");
      c.graph.m = g.opt("m", 1);
    } else if (c.graph.kind == "file") {
      c.graph.path = g.req<std::string>("path");
      c.graph.observational = g.opt<std::string>("observational", "");
    } else {
      throw ConfigError(g.field("kind"), "must be toy, er, sf, or file");
    }
    g.finish();
  }
  {
    auto m = r.child("mechanism", true);
    c.mechanism.kind = detail::parse_mechanism_kind(m.req<std::string>("kind"), m.field("kind"));
    c.mechanism.prior.weight_variance = m.opt("weight_variance", 2.0);
    c.mechanism.prior.bias_low = m.opt("bias_low", -1.0);
    c.mechanism.prior.bias_high = m.opt("bias_high", 1.0);
    c.mechanism.prior.noise_variance = m.opt("noise_variance", 0.1);
    c.mechanism.prior.hidden_layout = m.opt("hidden", std::vector<int>{8, 8});
    const auto noise = m.opt<std::string>("noise", "fixed");
    if (noise != "fixed" && noise != "inverse_gamma") throw ConfigError(m.field("noise"), "must be fixed or inverse_gamma");
    c.mechanism.inverse_gamma_noise = noise == "inverse_gamma";
    m.finish();
  }
  c.query = parse_query(r.raw("query"));
  {
    auto p = r.child("policy", false);
    c.policy.kind = p.opt<std::string>("kind", "learned");
    if (c.policy.kind != "learned" && c.policy.kind != "random") throw ConfigError(p.field("kind"), "must be learned or random");
    c.policy.net.encoder = detail::read_encoder(p, c.policy.net.encoder);
    c.policy.net.min_value = p.opt("min_value", -10.0);
    c.policy.net.max_value = p.opt("max_value", 10.0);
    c.policy.init_from = p.opt<std::string>("init_from", "");
    c.policy.freeze = p.opt("freeze", false);
    if (p.has("tau")) {
      auto t = p.child("tau", true);
      c.policy.tau.initial = t.opt("initial", c.policy.tau.initial);
      c.policy.tau.decay = t.opt("decay", c.policy.tau.decay);
      c.policy.tau.floor = t.opt("floor", c.policy.tau.floor);
      t.finish();
    }
    p.finish();
  }
  {
    auto p = r.child("posterior", false);
    c.posterior.encoder = detail::read_encoder(p, c.posterior.encoder);
    c.posterior.flow.n_trans = p.opt("n_trans", c.posterior.flow.n_trans);
    c.posterior.flow.hidden = p.opt("hidden", c.posterior.flow.hidden);
    c.posterior.edge.n_out = p.opt("n_out", c.posterior.edge.n_out);
    c.posterior.edge.init_temp = p.opt("init_temp", c.posterior.edge.init_temp);
    c.posterior.edge.init_bias = p.opt("init_bias", c.posterior.edge.init_bias);
    c.posterior.all_stages = p.opt("all_stages", c.posterior.all_stages);
    c.posterior.standardize_samples = p.opt("standardize_samples", c.posterior.standardize_samples);
    p.finish();
  }
  {
    auto o = r.child("optim", false);
    c.optim.policy_lr = o.opt("policy_lr", c.optim.policy_lr);
    c.optim.encoder_lr = o.opt("encoder_lr", c.optim.encoder_lr);
    c.optim.posterior_lr = o.opt("posterior_lr", c.optim.posterior_lr);
    c.optim.gamma = o.opt("gamma", c.optim.gamma);
    c.optim.interval = o.opt("interval", c.optim.interval);
    o.finish();
  }
  {
    auto e = r.child("eval", false);
    c.eval.every = e.opt("every", c.eval.every);
    c.eval.n_rollouts = e.opt("n_rollouts", c.eval.n_rollouts);
    c.eval.seed = e.opt<std::uint64_t>("seed", c.eval.seed);
    e.finish();
  }
  r.finish();
  c.validate();
  return c;
}

inline json to_json(const TrainConfig& c) {
  json g = {{"kind", c.graph.kind}};
  if (c.graph.kind == "toy") g["name"] = c.graph.toy;
  if (c.graph.kind == "er") g.update({{"d", c.graph.d}, {"expected_degree", c.graph.expected_degree}});
  if (c.graph.kind == "sf") g.update({{"d", c.graph.d}, {"m", c.graph.m}});
  if (c.graph.kind == "file") {
    g["path"] = c.graph.path;
    if (!c.graph.observational.empty()) g["observational"] = c.graph.observational;
  }
  const auto& mp = c.mechanism.prior;
  json mech = {{"kind", c.mechanism.kind == MechanismKind::LinearGaussian ? "linear" : "mlp"},
               {"weight_variance", mp.weight_variance},
               {"bias_low", mp.bias_low},
               {"bias_high", mp.bias_high},
               {"noise_variance", mp.noise_variance},
               {"hidden", mp.hidden_layout},
               {"noise", c.mechanism.inverse_gamma_noise ? "inverse_gamma" : "fixed"}};
  json pol = detail::encoder_json(c.policy.net.encoder);
  pol.update({{"kind", c.policy.kind},
              {"min_value", c.policy.net.min_value},
              {"max_value", c.policy.net.max_value},
              {"freeze", c.policy.freeze},
              {"tau", {{"initial", c.policy.tau.initial}, {"decay", c.policy.tau.decay}, {"floor", c.policy.tau.floor}}}});
  if (!c.policy.init_from.empty()) pol["init_from"] = c.policy.init_from;
  json post = detail::encoder_json(c.posterior.encoder);
  post.update({{"n_trans", c.posterior.flow.n_trans},
               {"hidden", c.posterior.flow.hidden},
               {"n_out", c.posterior.edge.n_out},
               {"init_temp", c.posterior.edge.init_temp},
               {"init_bias", c.posterior.edge.init_bias},
               {"all_stages", c.posterior.all_stages},
               {"standardize_samples", c.posterior.standardize_samples}});
  return {{"schema", kTrainSchema},
          {"objective", objective_name(c.objective)},
          {"T", c.T},
          {"n_step", c.n_step},
          {"n_env", c.n_env},
          {"n_int", c.n_int},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"log_every", c.log_every},
          {"graph", g},
          {"mechanism", mech},
          {"query", query_json(c.query)},
          {"policy", pol},
          {"posterior", post},
          {"optim",
           {{"policy_lr", c.optim.policy_lr},
            {"encoder_lr", c.optim.encoder_lr},
            {"posterior_lr", c.optim.posterior_lr},
            {"gamma", c.optim.gamma},
            {"interval", c.optim.interval}}},
          {"eval", {{"every", c.eval.every}, {"n_rollouts", c.eval.n_rollouts}, {"seed", c.eval.seed}}}};
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path.string(), "cannot open file");
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
}

/// Relative graph and observational paths resolve against the config's directory.
inline TrainConfig load_train_config(const std::filesystem::path& path) {
  json j = read_json_file(path);
  if (j.contains("graph") && j["graph"].is_object())
    for (const char* key : {"path", "observational"})
      if (j["graph"].contains(key) && j["graph"][key].is_string()) {
        const std::filesystem::path p = j["graph"][key].get<std::string>();
        if (p.is_relative() && !p.empty()) j["graph"][key] = (path.parent_path() / p).lexically_normal().string();
      }
  return parse_train_config(j);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// FNV-1a over the canonical JSON dump.
inline std::string config_hash(const json& j) {
  std::ostringstream os;
  os << std::hex << fnv1a(j.dump());
  std::string s = os.str();
  return std::string(16 - s.size(), '0') + s;
}

// ---------------------------------------------------------------------------

inline int TrainConfig::dimension() const {
  if (graph.kind == "toy") {
    if (graph.toy == "six_node") return 6;
    if (graph.toy == "three_node") return 3;
    return 2;
  }
  if (graph.kind == "file") return load_adjacency(graph.path).size();
  return graph.d;
}

inline void TrainConfig::validate() const {
  if (T < 1) throw ConfigError("T", "must be >= 1");
  if (n_step < 0) throw ConfigError("n_step", "must be >= 0");
  if (n_env < 1) throw ConfigError("n_env", "must be >= 1");
  if (n_int < 1) throw ConfigError("n_int", "must be >= 1");
  if (log_every < 1) throw ConfigError("log_every", "must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every", "must be >= 0");
  if (eval.every < 0) throw ConfigError("eval.every", "must be >= 0");
  if (eval.n_rollouts < 2) throw ConfigError("eval.n_rollouts", "must be >= 2");
  if ((graph.kind == "er" || graph.kind == "sf") && graph.d < 2) throw ConfigError("graph.d", "must be >= 2");
  if (graph.kind == "er" && !(graph.expected_degree >= 0.0)) throw ConfigError("graph.expected_degree", "must be >= 0");
  if (graph.kind == "sf" && graph.m < 1) throw ConfigError("graph.m", "must be >= 1");
  if (graph.kind == "toy" && mechanism.kind != MechanismKind::LinearGaussian)
    throw ConfigError("mechanism.kind", "toy graphs are linear");
  if (!graph.observational.empty() && mechanism.kind != MechanismKind::LinearGaussian)
    throw ConfigError("graph.observational", "warm start needs a linear mechanism");
  if (!(mechanism.prior.weight_variance > 0.0)) throw ConfigError("mechanism.weight_variance", "must be > 0");
  if (!(mechanism.prior.noise_variance > 0.0)) throw ConfigError("mechanism.noise_variance", "must be > 0");
  if (!(mechanism.prior.bias_low <= mechanism.prior.bias_high)) throw ConfigError("mechanism.bias_low", "must be <= bias_high");

  const Query::Kind want = objective == Objective::GoalZ       ? Query::Kind::Effect
                           : objective == Objective::GoalTheta ? Query::Kind::Parameters
                                                               : Query::Kind::Graph;
  if (query.kind != want)
    throw ConfigError("query.kind", std::string("does not match objective ") + objective_name(objective));
  const bool fixed_graph = graph.kind == "toy" || graph.kind == "file";
  if (objective == Objective::GoalTheta && !(fixed_graph && mechanism.kind == MechanismKind::LinearGaussian))
    throw ConfigError("objective", "goal_theta needs a fixed linear graph");
  const int d = dimension();
  try {
    query.validate(d);
  } catch (const ModelError& e) {
    throw ConfigError("query", e.what());
  }

  try {
    policy.net.validate();
    policy.tau.validate();
    posterior.encoder.validate();
    posterior.flow.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("policy/posterior", e.what());
  }
  if (posterior.standardize_samples < 2) throw ConfigError("posterior.standardize_samples", "must be >= 2");
  for (double lr : {optim.policy_lr, optim.encoder_lr, optim.posterior_lr})
    if (!(lr >= 0.0)) throw ConfigError("optim", "learning rates must be >= 0");
  if (!(optim.gamma > 0.0 && optim.gamma <= 1.0)) throw ConfigError("optim.gamma", "must lie in (0, 1]");
  if (optim.interval < 1) throw ConfigError("optim.interval", "must be >= 1");
  if (policy.kind == "random" && !policy.init_from.empty())
    throw ConfigError("policy.init_from", "a random policy has no parameters");
}

}  // namespace gocbed
