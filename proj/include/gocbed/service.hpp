#pragma once

// Live adaptive-design sessions over trained checkpoints, exposed as HTTP/JSON.
// Sessions persist as append-only JSON-lines logs, one file per session.

#include <fcntl.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "gocbed/evaluation.hpp"

// After Eigen: <resolv.h> (via httplib) defines a _res macro that breaks Eigen headers.
#include <httplib.h>

namespace gocbed::service {

namespace fs = std::filesystem;

inline constexpr const char* kServiceSchema = "gocbed.service/1";
inline constexpr const char* kSessionLogSchema = "gocbed.session/1";
inline constexpr int kBeliefSamples = 1024;

/// Request failure with an HTTP status and a machine-readable code.
class ApiError : public std::runtime_error {
 public:
  ApiError(int status, std::string code, const std::string& msg)
      : std::runtime_error(msg), status(status), code(std::move(code)) {}
  int status;
  std::string code;
};

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

/// Linear-interpolated quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& s, double p) {
  if (s.empty()) throw std::invalid_argument("quantile of empty sample");
  const double h = p * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline json design_json(const Design& d) { return {{"targets", d.targets}, {"values", d.values}}; }

inline Design parse_design(const json& j) {
  try {
    Design d;
    d.targets = j.at("targets").get<std::vector<int>>();
    d.values = j.at("values").get<std::vector<double>>();
    return d;
  } catch (const json::exception& e) {
    throw ApiError(400, "malformed_request", std::string("design must hold integer targets and numeric values: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

struct LoadedModel {
  std::string name;
  TrainConfig cfg;
  std::unique_ptr<Trainer> trainer;

  const Networks& nets() const { return trainer->networks(); }
  int d() const { return trainer->world().d(); }
};

/// *.ckpt files under a root directory, each loaded at most once and then
/// shared read-only.
class CheckpointRegistry {
 public:
  explicit CheckpointRegistry(fs::path root) : root_(std::move(root)) {}

  json list() const {
    json out = json::array();
    if (!fs::exists(root_)) return out;
    std::vector<std::string> names;
    for (const auto& e : fs::recursive_directory_iterator(root_))
      if (e.is_regular_file() && e.path().extension() == ".ckpt") names.push_back(fs::relative(e.path(), root_).generic_string());
    std::sort(names.begin(), names.end());
    for (const auto& n : names) {
      json j = {{"name", n}};
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(n); it != cache_.end()) {
        j["d"] = it->second->d();
        j["T"] = it->second->cfg.T;
        j["objective"] = to_json(it->second->cfg)["objective"];
      }
      out.push_back(j);
    }
    return out;
  }

  std::shared_ptr<const LoadedModel> get(const std::string& name) const {
    const fs::path rel(name);
    if (name.empty() || rel.is_absolute() || std::any_of(rel.begin(), rel.end(), [](const fs::path& p) { return p == ".."; }))
      throw ApiError(400, "bad_checkpoint_name", "checkpoint name must be a relative path inside the checkpoint root");
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(name); it != cache_.end()) return it->second;
    const fs::path p = root_ / rel;
    if (!fs::is_regular_file(p)) throw ApiError(404, "checkpoint_not_found", "no checkpoint named " + name);
    auto m = std::make_shared<LoadedModel>();
    m->name = name;
    try {
      auto [cfg, tr] = load_trained(p);
      m->cfg = std::move(cfg);
      m->trainer = std::make_unique<Trainer>(std::move(tr));
    } catch (const std::exception& e) {
      throw ApiError(422, "checkpoint_invalid", name + ": " + e.what());
    }
    cache_[name] = m;
    return m;
  }

 private:
  fs::path root_;
  mutable std::mutex mu_;
  mutable std::map<std::string, std::shared_ptr<const LoadedModel>> cache_;
};

// ---------------------------------------------------------------------------
// Sessions

struct Session {
  std::string id;
  std::shared_ptr<const LoadedModel> model;
  Query query;
  int horizon = 0;
  History history;
  std::string created, updated;
  std::mutex mu;

  bool complete() const { return history.size() >= horizon; }
  std::string status() const { return complete() ? "complete" : "active"; }
};

/// Appends one line with a single write and fsyncs it, so a crash leaves
/// either the whole event or a torn tail that replay discards.
inline void append_line(const fs::path& p, const std::string& line) {
  const std::string s = line + "\n";
  const int fd = ::open(p.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
  if (fd < 0) throw std::runtime_error("cannot open session log " + p.string());
  const ssize_t w = ::write(fd, s.data(), s.size());
  const int synced = ::fsync(fd);
  ::close(fd);
  if (w != static_cast<ssize_t>(s.size()) || synced != 0) throw std::runtime_error("short write to session log " + p.string());
}

class DesignService {
 public:
  DesignService(fs::path checkpoint_root, fs::path session_dir)
      : registry_(std::move(checkpoint_root)), session_dir_(std::move(session_dir)) {
    fs::create_directories(session_dir_);
    replay_all();
  }

  const CheckpointRegistry& registry() const { return registry_; }

  json checkpoints() const { return {{"schema", kServiceSchema}, {"checkpoints", registry_.list()}}; }

  /// {checkpoint, query?, d?, horizon?}. The query must be the trained one,
  /// except that an effect query may change psi.
  json create(const json& body) {
    check_schema(body);
    if (!body.contains("checkpoint") || !body["checkpoint"].is_string())
      throw ApiError(400, "malformed_request", "field 'checkpoint' (string) is required");
    auto model = registry_.get(body["checkpoint"].get<std::string>());
    const int d = model->d();
    if (body.contains("d") && (!body["d"].is_number_integer() || body["d"].get<int>() != d))
      throw ApiError(422, "d_mismatch", "request d=" + body["d"].dump() + " but checkpoint has d=" + std::to_string(d));
    Query q = model->cfg.query;
    if (body.contains("query")) {
      Query req;
      try {
        req = parse_query(body["query"]);
        req.validate(d);
      } catch (const std::exception& e) {
        throw ApiError(422, "invalid_query", e.what());
      }
      if (!same_query_except_psi(req, q))
        throw ApiError(422, "query_mismatch", "checkpoint was trained for " + query_json(q).dump());
      q = req;
    }
    int horizon = model->cfg.T;
    if (body.contains("horizon")) {
      if (!body["horizon"].is_number_integer() || body["horizon"].get<int>() < 1)
        throw ApiError(400, "malformed_request", "horizon must be a positive integer");
      horizon = body["horizon"].get<int>();
    }
    auto s = std::make_shared<Session>();
    s->model = model;
    s->query = q;
    s->horizon = horizon;
    s->history = History(d, model->cfg.n_int);
    s->created = s->updated = utc_now();
    {
      std::unique_lock lock(map_mu_);
      do s->id = fresh_id();
      while (sessions_.count(s->id));
      json ev = {{"schema", kSessionLogSchema}, {"event", "created"}, {"id", s->id},
                 {"checkpoint", model->name}, {"query", query_json(q)}, {"horizon", horizon},
                 {"d", d}, {"n_int", model->cfg.n_int}, {"time", s->created}};
      // Created atomically: the file appears only with its header line.
      const fs::path tmp = session_dir_ / (s->id + ".jsonl.tmp");
      fs::remove(tmp);
      append_line(tmp, ev.dump());
      fs::rename(tmp, log_path(s->id));
      sessions_[s->id] = s;
    }
    std::lock_guard lock(s->mu);
    return view(*s, 0, kBeliefSamples);
  }

  json get(const std::string& id, std::uint64_t seed = 0, int samples = kBeliefSamples) {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    return view(*s, seed, samples);
  }

  json recommend(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    if (s->complete()) throw ApiError(409, "session_complete", "session " + id + " has recorded all " + std::to_string(s->horizon) + " steps");
    return recommendation(*s);
  }

  /// {design, outcomes (n_int rows of d numbers), belief_seed?}.
  json submit(const std::string& id, const json& body) {
    check_schema(body);
    auto s = find(id);
    std::lock_guard lock(s->mu);
    if (s->complete()) throw ApiError(409, "session_complete", "session " + id + " already holds " + std::to_string(s->history.size()) + " steps");
    if (!body.contains("design") || !body.contains("outcomes"))
      throw ApiError(400, "malformed_request", "fields 'design' and 'outcomes' are required");
    Design des = parse_design(body["design"]);
    const json& rows = body["outcomes"];
    if (!rows.is_array() || rows.empty()) throw ApiError(400, "malformed_request", "outcomes must be a non-empty array of rows");
    const int d = s->history.d();
    Matrix batch(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (!rows[r].is_array()) throw ApiError(400, "malformed_request", "outcome row " + std::to_string(r) + " is not an array");
      if (static_cast<int>(rows[r].size()) != d)
        throw ApiError(422, "bad_row_length", "outcome row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) + " values, expected d=" + std::to_string(d));
      for (int i = 0; i < d; ++i) {
        if (!rows[r][i].is_number()) throw ApiError(400, "malformed_request", "outcome row " + std::to_string(r) + " holds a non-number");
        batch(static_cast<Eigen::Index>(r), i) = rows[r][i].get<double>();
      }
    }
    History next = s->history;
    try {
      next.append(des, batch);
    } catch (const ModelError& e) {
      throw ApiError(422, "validation_failed", e.what());
    }
    const std::string now = utc_now();
    json ev = {{"schema", kSessionLogSchema}, {"event", "outcome"}, {"step", next.size()},
               {"design", design_json(des)}, {"outcomes", rows}, {"time", now}};
    append_line(log_path(id), ev.dump());
    s->history = std::move(next);
    s->updated = now;
    return view(*s, body.value("belief_seed", std::uint64_t{0}), kBeliefSamples);
  }

  /// {design, budget?, seed?}: predictive mean and spread of every node under
  /// the candidate, from posterior draws where the model has them.
  json whatif(const std::string& id, const json& body) {
    check_schema(body);
    auto s = find(id);
    std::lock_guard lock(s->mu);
    if (s->complete()) throw ApiError(409, "session_complete", "what-if needs an active session");
    if (!body.contains("design")) throw ApiError(400, "malformed_request", "field 'design' is required");
    Design des = parse_design(body["design"]);
    const int d = s->history.d();
    try {
      des.validate(d);
    } catch (const ModelError& e) {
      throw ApiError(422, "validation_failed", e.what());
    }
    const json jb = body.value("budget", json(1000));
    if (!jb.is_number_integer() || jb.get<long>() <= 0) throw ApiError(400, "bad_budget", "budget must be a positive integer");
    const int budget = jb.get<int>();
    const std::uint64_t seed = body.value("seed", std::uint64_t{0});
    Rng rng = make_rng(seed, {0x776966ULL});
    const auto& m = *s->model;
    const World& w = m.trainer->world();
    std::string source = "prior";
    std::function<Scm(Rng&)> draw = [&w](Rng& r) { return w.sample(r); };
    std::optional<LinearPosterior> post;
    Matrix probs;
    if (w.conjugate_exact() && !m.cfg.mechanism.inverse_gamma_noise) {
      post = update_posterior(*w.conjugate_prior(), s->history);
      source = "conjugate_posterior";
      draw = [&post](Rng& r) { return sample_scm(*post, r); };
    } else if (m.nets().edges) {
      probs = edge_marginals(m, s->history);
      source = "edge_posterior";
      draw = [&m, &probs](Rng& r) {
        Scm sc;
        sc.dag = graph_sample(probs, r);
        sc.mechanism = sample_mechanism(sc.dag, m.cfg.mechanism.kind, r, m.cfg.mechanism.prior);
        if (m.cfg.mechanism.inverse_gamma_noise) sc = with_inverse_gamma_noise(std::move(sc), r);
        return sc;
      };
    }
    std::vector<std::vector<double>> cols(d);
    for (int k = 0; k < budget; ++k) {
      Scm sc = draw(rng);
      Matrix x = simulate(sc, &des, 1, rng);
      for (int i = 0; i < d; ++i) cols[i].push_back(x(0, i));
    }
    json mean = json::array(), sd = json::array(), se = json::array();
    for (int i = 0; i < d; ++i) {
      if (auto c = des.clamp_of(i)) {
        mean.push_back(*c);
        sd.push_back(0.0);
        se.push_back(0.0);
        continue;
      }
      const McEstimate e = summarize(cols[i]);
      mean.push_back(e.mean);
      sd.push_back(budget > 1 ? e.stderr_ * std::sqrt(static_cast<double>(budget)) : 0.0);
      se.push_back(e.stderr_);
    }
    return {{"schema", kServiceSchema}, {"session_id", id}, {"label", "model-based prediction"},
            {"source", source}, {"design", design_json(des)}, {"budget", budget}, {"seed", seed},
            {"mean", mean}, {"std", sd}, {"mc_stderr", se}};
  }

 private:
  static void check_schema(const json& body) {
    if (!body.is_object()) throw ApiError(400, "malformed_request", "request body must be a JSON object");
    if (body.contains("schema") && body["schema"] != kServiceSchema)
      throw ApiError(400, "unsupported_schema", "expected schema " + std::string(kServiceSchema));
  }

  static bool same_query_except_psi(const Query& a, const Query& b) {
    if (a.kind != b.kind) return false;
    if (a.kind == Query::Kind::Effect) return a.targets == b.targets && a.intervention_node == b.intervention_node;
    if (a.kind == Query::Kind::Parameters) return a.edges == b.edges;
    return true;
  }

  std::string fresh_id() {
    std::random_device rd;
    std::ostringstream os;
    os << 's' << std::hex << std::setw(8) << std::setfill('0') << rd() << std::setw(8) << rd();
    return os.str();
  }

  fs::path log_path(const std::string& id) const { return session_dir_ / (id + ".jsonl"); }

  std::shared_ptr<Session> find(const std::string& id) {
    std::shared_lock lock(map_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ApiError(404, "session_not_found", "no session " + id);
    return it->second;
  }

  static Matrix edge_marginals(const LoadedModel& m, const History& h) {
    ad::NoGradGuard guard;
    return edge_probabilities(m.nets().edges->logits(history_tensor(h), ForwardContext{}));
  }

  json recommendation(const Session& s) const {
    const auto& m = *s.model;
    const int d = s.history.d();
    const int step = s.history.size() + 1;
    json out = {{"schema", kServiceSchema}, {"session_id", s.id}, {"step", step},
                {"past_trained_horizon", step > m.cfg.T}};
    if (!m.nets().policy) {
      // Random-design checkpoints: a fixed stream per (session, step).
      Rng rng = make_rng(fnv1a(s.id), {static_cast<std::uint64_t>(step)});
      out["design"] = design_json(random_design(d, m.nets().min_value, m.nets().max_value, rng));
      out["target_scores"] = std::vector<double>(d, 1.0 / d);
      out["policy"] = "random";
      return out;
    }
    ad::NoGradGuard guard;
    PolicyOutput act = m.nets().policy->act(history_tensor(s.history), 1.0, nullptr, true, ForwardContext{});
    std::vector<double> scores(d);
    double mx = act.logits[0], z = 0.0;
    for (int j = 1; j < d; ++j) mx = std::max(mx, act.logits[j]);
    for (int j = 0; j < d; ++j) z += scores[j] = std::exp(act.logits[j] - mx);
    for (auto& v : scores) v /= z;
    out["design"] = design_json(Policy::designs(act)[0]);
    out["target_scores"] = scores;
    out["policy"] = "learned";
    return out;
  }

  json beliefs(const Session& s, std::uint64_t seed, int samples) const {
    const auto& m = *s.model;
    json b = {{"stage", s.history.size()}, {"seed", seed}};
    if (m.nets().edges) {
      const Matrix p = edge_marginals(m, s.history);
      json rows = json::array();
      for (int i = 0; i < p.rows(); ++i) {
        std::vector<double> r(p.cols());
        for (int j = 0; j < p.cols(); ++j) r[j] = p(i, j);
        rows.push_back(r);
      }
      b["kind"] = "graph";
      b["edge_marginals"] = rows;
      b["n_samples"] = 0;
      return b;
    }
    if (samples < 2) throw ApiError(400, "bad_budget", "belief samples must be >= 2");
    Matrix z;
    {
      ad::NoGradGuard guard;
      Rng rng = make_rng(seed, {0x62656cULL});
      Tensor h = history_tensor(s.history);
      if (m.nets().effect) {
        Tensor cond = m.nets().effect->condition(h, Tensor::constant({1}, {s.query.psi_mean}), ForwardContext{});
        z = m.nets().effect->flow().sample(cond, samples, rng);
      } else {
        Tensor cond = m.nets().parameters->condition(h, ForwardContext{});
        z = m.nets().parameters->flow().sample(cond, samples, rng);
      }
    }
    static constexpr double kLevels[] = {0.05, 0.25, 0.5, 0.75, 0.95};
    json comps = json::array();
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      std::vector<double> v(z.col(c).data(), z.col(c).data() + z.rows());
      const McEstimate e = summarize(v);
      std::sort(v.begin(), v.end());
      json qs = json::object();
      for (double p : kLevels) qs[std::to_string(static_cast<int>(p * 100 + 0.5))] = quantile_sorted(v, p);
      json comp = {{"mean", e.mean}, {"std", e.stderr_ * std::sqrt(static_cast<double>(e.n))}, {"quantiles", qs}};
      if (m.nets().effect) comp["node"] = s.query.targets[c];
      else comp["edge"] = {s.query.edges[c].first, s.query.edges[c].second};
      comps.push_back(comp);
    }
    b["kind"] = m.nets().effect ? "effect" : "parameters";
    if (m.nets().effect) b["psi"] = s.query.psi_mean;
    b["components"] = comps;
    b["n_samples"] = samples;
    return b;
  }

  json view(const Session& s, std::uint64_t seed, int samples) const {
    json hist = json::array();
    for (const auto& st : s.history.steps()) {
      json rows = json::array();
      for (Eigen::Index r = 0; r < st.batch.rows(); ++r) {
        std::vector<double> row(st.batch.cols());
        for (Eigen::Index i = 0; i < st.batch.cols(); ++i) row[i] = st.batch(r, i);
        rows.push_back(row);
      }
      hist.push_back({{"design", design_json(st.design)}, {"outcomes", rows}});
    }
    json out = {{"schema", kServiceSchema},
                {"id", s.id},
                {"checkpoint", s.model->name},
                {"config_hash", config_hash(to_json(s.model->cfg))},
                {"query", query_json(s.query)},
                {"d", s.history.d()},
                {"n_int", s.history.n_int()},
                {"horizon", s.horizon},
                {"trained_T", s.model->cfg.T},
                {"status", s.status()},
                {"history_length", s.history.size()},
                {"history", hist},
                {"created", s.created},
                {"updated", s.updated},
                {"past_trained_horizon", s.history.size() > s.model->cfg.T},
                {"beliefs", beliefs(s, seed, samples)}};
    if (!s.complete()) out["recommendation"] = recommendation(s);
    return out;
  }

  /// Rebuilds sessions from their logs. A torn final line (no newline) is a
  /// write that never completed and is dropped.
  void replay_all() {
    for (const auto& e : fs::directory_iterator(session_dir_)) {
      if (e.path().extension() != ".jsonl") continue;
      std::ifstream is(e.path(), std::ios::binary);
      std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
      if (!text.empty() && text.back() != '\n') text.erase(text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1);
      std::istringstream lines(text);
      std::string line;
      std::shared_ptr<Session> s;
      try {
        while (std::getline(lines, line)) {
          json ev = json::parse(line);
          if (ev.at("schema") != kSessionLogSchema) throw std::runtime_error("unknown log schema");
          if (ev.at("event") == "created") {
            s = std::make_shared<Session>();
            s->id = ev.at("id");
            s->model = registry_.get(ev.at("checkpoint"));
            s->query = parse_query(ev.at("query"));
            s->horizon = ev.at("horizon");
            s->history = History(s->model->d(), s->model->cfg.n_int);
            s->created = s->updated = ev.at("time");
          } else if (s && ev.at("event") == "outcome") {
            const auto rows = ev.at("outcomes").get<std::vector<std::vector<double>>>();
            Matrix batch(static_cast<Eigen::Index>(rows.size()), s->history.d());
            for (std::size_t r = 0; r < rows.size(); ++r)
              for (int i = 0; i < s->history.d(); ++i) batch(static_cast<Eigen::Index>(r), i) = rows[r].at(i);
            s->history.append(parse_design(ev.at("design")), batch);
            s->updated = ev.at("time");
          }
        }
      } catch (const std::exception& ex) {
        std::cerr << "warning: skipping session log " << e.path() << ": " << ex.what() << "\n";
        continue;
      }
      if (s) sessions_[s->id] = s;
    }
  }

  CheckpointRegistry registry_;
  fs::path session_dir_;
  std::shared_mutex map_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

// ---------------------------------------------------------------------------
// HTTP binding

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline json error_body(const std::string& code, const std::string& msg) {
  return {{"schema", kServiceSchema}, {"error", {{"code", code}, {"message", msg}}}};
}

/// Registers the API routes on `svr`; `static_dir` (if non-empty) is served at /.
inline void mount(httplib::Server& svr, DesignService& svc, const fs::path& static_dir = {}) {
  auto wrap = [](auto fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const ApiError& e) {
        send_json(res, e.status, error_body(e.code, e.what()));
      } catch (const json::parse_error& e) {
        send_json(res, 400, error_body("invalid_json", e.what()));
      } catch (const std::exception& e) {
        send_json(res, 500, error_body("internal", e.what()));
      }
    };
  };
  auto body_of = [](const httplib::Request& req) { return req.body.empty() ? json::object() : json::parse(req.body); };
  auto uparam = [](const httplib::Request& req, const char* key, std::uint64_t dflt) -> std::uint64_t {
    if (!req.has_param(key)) return dflt;
    try {
      return std::stoull(req.get_param_value(key));
    } catch (const std::exception&) {
      throw ApiError(400, "malformed_request", std::string("query parameter ") + key + " must be a non-negative integer");
    }
  };

  svr.Get("/checkpoints", wrap([&svc](const httplib::Request&, httplib::Response& res) { send_json(res, 200, svc.checkpoints()); }));
  svr.Post("/sessions", wrap([&svc, body_of](const httplib::Request& req, httplib::Response& res) {
             send_json(res, 201, svc.create(body_of(req)));
           }));
  svr.Get(R"(/sessions/([A-Za-z0-9]+))", wrap([&svc, uparam](const httplib::Request& req, httplib::Response& res) {
            const auto samples = uparam(req, "samples", kBeliefSamples);
            send_json(res, 200, svc.get(req.matches[1], uparam(req, "seed", 0), static_cast<int>(std::min<std::uint64_t>(samples, 1 << 20))));
          }));
  svr.Get(R"(/sessions/([A-Za-z0-9]+)/recommendation)", wrap([&svc](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, svc.recommend(req.matches[1]));
          }));
  svr.Post(R"(/sessions/([A-Za-z0-9]+)/outcomes)", wrap([&svc, body_of](const httplib::Request& req, httplib::Response& res) {
             send_json(res, 200, svc.submit(req.matches[1], body_of(req)));
           }));
  svr.Post(R"(/sessions/([A-Za-z0-9]+)/whatif)", wrap([&svc, body_of](const httplib::Request& req, httplib::Response& res) {
             send_json(res, 200, svc.whatif(req.matches[1], body_of(req)));
           }));
  if (!static_dir.empty() && !svr.set_mount_point("/", static_dir.string()))
    throw std::runtime_error("static directory " + static_dir.string() + " does not exist");
}

}  // namespace gocbed::service
