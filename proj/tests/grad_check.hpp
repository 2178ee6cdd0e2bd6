#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gocbed/autodiff/tensor.hpp"

namespace gocbed::testing {

/// Largest relative error between autodiff and central differences over all
/// entries of `params` for the scalar function f.
inline double max_grad_error(std::vector<ad::Tensor> params, const std::function<ad::Tensor()>& f,
                             double h = 1e-6) {
  for (auto& p : params) p.zero_grad();
  ad::backward(f());
  double worst = 0.0;
  for (auto& p : params) {
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p.mutable_data()[i];
      p.mutable_data()[i] = keep + h;
      double up, down;
      {
        ad::NoGradGuard g;
        up = f().item();
      }
      p.mutable_data()[i] = keep - h;
      {
        ad::NoGradGuard g;
        down = f().item();
      }
      p.mutable_data()[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double err = std::abs(numeric - analytic[i]) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace gocbed::testing
