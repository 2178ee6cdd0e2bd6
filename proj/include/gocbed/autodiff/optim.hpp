#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gocbed/autodiff/tensor.hpp"

namespace gocbed::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// lr(clock) = lr0 * gamma^floor(clock / interval).
struct ExponentialSchedule {
  double gamma = 1.0;
  long interval = 1000;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("schedule gamma must lie in (0, 1]");
    if (interval < 1) throw std::invalid_argument("schedule interval must be >= 1");
  }
  double factor(long clock) const { return std::pow(gamma, static_cast<double>(clock / interval)); }
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg, ExponentialSchedule sched)
      : params_(std::move(params)), cfg_(cfg), sched_(sched) {
    if (!(cfg_.lr >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
    sched_.validate();
    for (const auto& [name, t] : params_) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    }
  }

  double learning_rate(long clock) const { return cfg_.lr * sched_.factor(clock); }
  long steps_taken() const { return t_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }

  /// One Adam update using the gradients currently held by the parameters.
  void step(long clock) {
    ++t_;
    const double lr = learning_rate(clock);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = params_[k].second;
      if (!p.has_grad()) continue;
      auto w = p.mutable_data();
      auto g = p.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      }
    }
  }

  std::vector<NamedArray> export_state(const std::string& prefix) const {
    std::vector<NamedArray> out;
    out.push_back({prefix + "/t", {1}, {static_cast<double>(t_)}});
    for (std::size_t k = 0; k < params_.size(); ++k) {
      out.push_back({prefix + "/m/" + params_[k].first, params_[k].second.shape(), m_[k]});
      out.push_back({prefix + "/v/" + params_[k].first, params_[k].second.shape(), v_[k]});
    }
    return out;
  }

  void import_state(const std::string& prefix, const std::vector<NamedArray>& arrays) {
    auto find = [&](const std::string& name) -> const NamedArray& {
      for (const auto& a : arrays)
        if (a.name == name) return a;
      throw std::runtime_error("checkpoint lacks optimizer state " + name);
    };
    t_ = static_cast<long>(find(prefix + "/t").data.at(0));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      const auto& m = find(prefix + "/m/" + params_[k].first);
      const auto& v = find(prefix + "/v/" + params_[k].first);
      if (m.data.size() != m_[k].size() || v.data.size() != v_[k].size())
        throw std::runtime_error("optimizer state size mismatch for " + params_[k].first);
      m_[k] = m.data;
      v_[k] = v.data;
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  AdamConfig cfg_;
  ExponentialSchedule sched_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace gocbed::ad
