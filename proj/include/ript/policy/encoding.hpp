// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ript/envsuite/types.hpp"

namespace ript::policy {

using envsuite::Action;
using envsuite::Observation;

enum class HeadFamily { tokenized, gaussian, laplace };

inline const char* head_name(HeadFamily h) {
  switch (h) {
    case HeadFamily::tokenized: return "tokenized";
    case HeadFamily::gaussian: return "gaussian";
    case HeadFamily::laplace: return "laplace";
  }
  return "?";
}

inline HeadFamily parse_head(const std::string& s) {
  if (s == "tokenized") return HeadFamily::tokenized;
  if (s == "gaussian") return HeadFamily::gaussian;
  if (s == "laplace") return HeadFamily::laplace;
  throw std::invalid_argument("unknown head family '" + s + "'");
}

// Policy input: [observation | goal one-hot | previous `window` actions].
// A tokenized action slot is a one-hot over V tokens plus a "none" slot; a
// continuous slot holds the D action values plus a "none" flag.
struct Encoder {
  HeadFamily head = HeadFamily::tokenized;
  std::size_t obs_dim = 0;
  std::size_t n_goals = 1;
  std::size_t action_dim = 4;  // V for tokenized heads, D for regression heads
  std::size_t window = 1;

  std::size_t slot_size() const { return action_dim + 1; }
  std::size_t size() const { return obs_dim + n_goals + window * slot_size(); }

  // `history` holds previous actions, oldest first; only the last `window`
  // are used.
  std::vector<double> encode(const Observation& obs, int goal, std::span<const Action> history) const {
    if (obs.size() != obs_dim)
      throw std::invalid_argument("encode: observation has " + std::to_string(obs.size()) + " features, expected " +
                                  std::to_string(obs_dim));
    if (goal < 0 || static_cast<std::size_t>(goal) >= n_goals)
      throw std::invalid_argument("encode: goal " + std::to_string(goal) + " outside [0, " + std::to_string(n_goals) +
                                  ")");
    std::vector<double> x(size(), 0.0);
    std::copy(obs.begin(), obs.end(), x.begin());
    x[obs_dim + static_cast<std::size_t>(goal)] = 1.0;
    std::size_t base = obs_dim + n_goals;
    for (std::size_t j = 0; j < window; ++j) {
      std::size_t off = base + j * slot_size();
      // slot j holds a_{t-1-j}
      if (j >= history.size()) {
        x[off + action_dim] = 1.0;
        continue;
      }
      const Action& a = history[history.size() - 1 - j];
      if (head == HeadFamily::tokenized) {
        if (a.token < 0 || static_cast<std::size_t>(a.token) >= action_dim)
          throw std::invalid_argument("encode: token " + std::to_string(a.token) + " out of vocabulary");
        x[off + static_cast<std::size_t>(a.token)] = 1.0;
      } else {
        if (a.values.size() != action_dim) throw std::invalid_argument("encode: action dimension mismatch");
        std::copy(a.values.begin(), a.values.end(), x.begin() + static_cast<std::ptrdiff_t>(off));
      }
    }
    return x;
  }
};

}  // namespace ript::policy
