// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <utility>

#include "ript/envsuite/suite.hpp"
#include "ript/random.hpp"

namespace ript::rl {

// Environment suite as a rollout world. The goal slot is the task id. With
// noise_scale > 0 every group member starts from its own perturbation of the
// sampled context, using the per-(task, scenario) position spread in `base`.
struct SuiteWorld {
  const envsuite::Suite* suite = nullptr;
  double noise_scale = 0.0;
  std::map<std::pair<int, int>, envsuite::PositionStd> base = {};

  int goal_of(const envsuite::Context& c) const { return c.task_id; }
  envsuite::EnvInstance make_env(const envsuite::Context& c) const { return envsuite::EnvInstance(suite->task_of(c)); }
  envsuite::Context member_context(const envsuite::Context& c, Rng& rng) const {
    if (noise_scale == 0.0) return c;
    auto it = base.find({c.task_id, c.scenario_id});
    envsuite::PositionStd sd = it == base.end() ? envsuite::PositionStd{} : it->second;
    return envsuite::perturb_context(suite->task_of(c), c, noise_scale, sd, rng);
  }
};

}  // namespace ript::rl
