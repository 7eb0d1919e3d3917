// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ript/diffcore/graph.hpp"

namespace ript::diffcore {

struct GradCheckEntry {
  std::size_t param_index = 0;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  bool ok = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = true;
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / denom;
}

// Compares reverse-mode gradients of the graph's final (scalar) node against
// central finite differences. Parameter values and gradient buffers are left
// as they were found.
inline GradCheckReport grad_check(Graph& graph, double tolerance, double h = 1e-5) {
  GradCheckReport report;
  auto params = graph.parameters();

  std::vector<std::vector<double>> saved;
  for (Tensor* p : params) {
    saved.push_back(p->grad);
    p->grad.assign(p->size(), 0.0);
  }
  graph.forward();
  graph.backward();

  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    std::vector<double> analytic = p.grad;
    GradCheckEntry entry{k, p.size(), 0.0, true};
    for (std::size_t i = 0; i < p.size(); ++i) {
      double v = p.values[i];
      p.values[i] = v + h;
      double up = graph.forward().item();
      p.values[i] = v - h;
      double down = graph.forward().item();
      p.values[i] = v;
      double numeric = (up - down) / (2.0 * h);
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic[i], numeric));
    }
    entry.ok = entry.max_rel_error < tolerance;
    report.passed = report.passed && entry.ok;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(entry);
  }
  graph.forward();
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->grad = std::move(saved[k]);
  return report;
}

}  // namespace ript::diffcore
