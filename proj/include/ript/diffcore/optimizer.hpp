// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ript/diffcore/tensor.hpp"

namespace ript::diffcore {

enum class OptimizerKind { sgd, adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static OptimizerState sgd(double lr) {
    OptimizerState s;
    s.kind = OptimizerKind::sgd;
    s.lr = lr;
    return s;
  }
  static OptimizerState adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    OptimizerState s;
    s.kind = OptimizerKind::adam;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    return s;
  }
};

// One update over `params`, then zero their gradients. Adam skips elements
// whose gradient is exactly zero (their moments are left untouched too), so a
// zero-gradient apply only advances the step counter.
inline void optimizer_apply(OptimizerState& state, std::span<Tensor* const> params) {
  for (std::size_t k = 0; k < params.size(); ++k)
    if (!params[k]->has_grad())
      throw std::invalid_argument("optimizer_apply: parameter " + std::to_string(k) + " has no gradient");

  if (state.kind == OptimizerKind::adam) {
    if (state.m.empty()) {
      for (Tensor* p : params) {
        state.m.emplace_back(p->size(), 0.0);
        state.v.emplace_back(p->size(), 0.0);
      }
    }
    if (state.m.size() != params.size())
      throw std::invalid_argument("optimizer_apply: parameter count changed between applies");
    for (std::size_t k = 0; k < params.size(); ++k)
      if (state.m[k].size() != params[k]->size())
        throw ShapeError("optimizer_apply: moment buffer " + std::to_string(k) + " does not match parameter shape " +
                         shape_str(params[k]->shape));
  }

  ++state.step;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      double g = p.grad[i];
      if (g == 0.0) continue;
      if (state.kind == OptimizerKind::sgd) {
        p.values[i] -= state.lr * g;
      } else {
        double& m = state.m[k][i];
        double& v = state.v[k][i];
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g * g;
        double mhat = m / bc1;
        double vhat = v / bc2;
        p.values[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
      }
    }
    p.zero_grad();
  }
}

}  // namespace ript::diffcore
