// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ript/envsuite/types.hpp"

namespace ript::envsuite {

inline constexpr std::array<Cell, kGridActions> kMoves{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

inline std::size_t grid_observation_size(int n) {
  auto un = static_cast<std::size_t>(n);
  return (2 * un + 2)                 // agent row/col one-hot + normalized coords
         + kLandmarks * 2 * un        // landmark row/col one-hot
         + (2 * un + 1)               // key row/col one-hot + on-floor flag
         + 2                          // has_key, door_open
         + 2 * un                     // door row/col one-hot
         + (kLandmarks + 1)           // progress one-hot
         + un * un                    // wall occupancy
         + (kLandmarks + 2) * 2       // landmark, key and door offsets from the agent
         + kGridActions;              // move blocked, per action
}

inline constexpr std::size_t kPointObservationSize = 4;

inline std::size_t observation_size(const SuiteConfig& cfg) {
  bool discrete = cfg.families.empty() || is_discrete(cfg.families.front());
  return discrete ? grid_observation_size(cfg.grid_size) : kPointObservationSize;
}

namespace detail {
inline void put_cell(std::vector<double>& obs, std::size_t& off, Cell c, int n) {
  if (c.row >= 0 && c.col >= 0) {
    obs[off + static_cast<std::size_t>(c.row)] = 1.0;
    obs[off + static_cast<std::size_t>(n + c.col)] = 1.0;
  }
  off += 2 * static_cast<std::size_t>(n);
}
}  // namespace detail

// Symbolic observation of the full state.
inline Observation observe(const TaskSpec& task, const State& s) {
  if (task.family == Family::pointreach) return {s.point[0], s.point[1], s.target[0], s.target[1]};
  int n = task.layout.size;
  Observation obs(grid_observation_size(n), 0.0);
  std::size_t off = 0;
  detail::put_cell(obs, off, s.agent, n);
  obs[off++] = static_cast<double>(s.agent.row) / (n - 1);
  obs[off++] = static_cast<double>(s.agent.col) / (n - 1);
  for (const auto& lm : s.landmarks) detail::put_cell(obs, off, lm, n);
  detail::put_cell(obs, off, s.key, n);
  obs[off++] = s.key.row >= 0 ? 1.0 : 0.0;
  obs[off++] = s.has_key ? 1.0 : 0.0;
  obs[off++] = s.door_open ? 1.0 : 0.0;
  detail::put_cell(obs, off, task.layout.door.value_or(kNoCell), n);
  obs[off + static_cast<std::size_t>(std::clamp(s.progress, 0, kLandmarks))] = 1.0;
  off += kLandmarks + 1;
  for (const auto& w : task.layout.walls) obs[off + static_cast<std::size_t>(w.row * n + w.col)] = 1.0;
  off += static_cast<std::size_t>(n * n);
  auto offset = [&](Cell c) {
    bool present = c.row >= 0;
    obs[off++] = present ? static_cast<double>(c.row - s.agent.row) / (n - 1) : 0.0;
    obs[off++] = present ? static_cast<double>(c.col - s.agent.col) / (n - 1) : 0.0;
  };
  for (const auto& lm : s.landmarks) offset(lm);
  offset(s.has_key ? kNoCell : s.key);
  offset(task.layout.door.value_or(kNoCell));
  for (const auto& m : kMoves) {
    Cell next{s.agent.row + m.row, s.agent.col + m.col};
    bool blocked = !task.layout.in_bounds(next) || task.layout.is_wall(next) ||
                   (task.layout.door && next == *task.layout.door && !s.door_open && !s.has_key);
    obs[off++] = blocked ? 1.0 : 0.0;
  }
  return obs;
}

inline bool goal_reached(const TaskSpec& task, const State& s) {
  switch (task.family) {
    case Family::reach:
      return s.agent == s.landmarks[static_cast<std::size_t>(task.goal.at(0))];
    case Family::keydoor:
      return s.has_key && s.door_open && s.agent == s.landmarks[static_cast<std::size_t>(task.goal.at(0))];
    case Family::sort:
      return s.progress >= static_cast<int>(task.goal.size());
    case Family::pointreach:
      return std::hypot(s.point[0] - s.target[0], s.point[1] - s.target[1]) <= task.radius;
  }
  return false;
}

// Deterministic transition; no reward or termination logic here.
inline State transition(const TaskSpec& task, State s, const Action& a) {
  if (task.family == Family::pointreach) {
    if (a.values.size() != kPointDims) throw std::invalid_argument("pointreach: action must have 2 dimensions");
    for (std::size_t d = 0; d < kPointDims; ++d) {
      if (!std::isfinite(a.values[d])) throw std::invalid_argument("pointreach: non-finite action");
      s.point[d] = std::clamp(s.point[d] + task.max_step * std::clamp(a.values[d], -1.0, 1.0), 0.0, 1.0);
    }
    return s;
  }
  if (a.token < 0 || a.token >= kGridActions)
    throw std::invalid_argument("grid: action token " + std::to_string(a.token) + " out of range");
  Cell next{s.agent.row + kMoves[static_cast<std::size_t>(a.token)].row,
            s.agent.col + kMoves[static_cast<std::size_t>(a.token)].col};
  const auto& layout = task.layout;
  if (!layout.in_bounds(next) || layout.is_wall(next)) return s;
  if (layout.door && next == *layout.door && !s.door_open) {
    if (!s.has_key) return s;
    s.door_open = true;
  }
  s.agent = next;
  if (s.key.row >= 0 && s.agent == s.key) {
    s.has_key = true;
    s.key = kNoCell;
  }
  if (task.family == Family::sort && s.progress < static_cast<int>(task.goal.size()) &&
      s.agent == s.landmarks[static_cast<std::size_t>(task.goal[static_cast<std::size_t>(s.progress)])])
    ++s.progress;
  return s;
}

// Shortest action sequence reaching the goal predicate (BFS over the
// reachable state graph; actions expanded in token order). nullopt when the
// goal is unreachable or needs more than `max_len` steps.
inline std::optional<std::vector<int>> shortest_solution(const TaskSpec& task, const State& start,
                                                         int max_len = 1 << 20) {
  if (!is_discrete(task.family)) throw std::invalid_argument("shortest_solution: grid families only");
  if (goal_reached(task, start)) return std::vector<int>{};
  int n = task.layout.size;
  // Landmarks never move and the key only disappears, so (agent, has_key,
  // door_open, progress) identifies a state.
  auto index = [&](const State& s) {
    return (((s.agent.row * n + s.agent.col) * 2 + (s.has_key ? 1 : 0)) * 2 + (s.door_open ? 1 : 0)) *
               (kLandmarks + 1) +
           std::clamp(s.progress, 0, kLandmarks);
  };
  std::size_t total = static_cast<std::size_t>(n * n * 4 * (kLandmarks + 1));
  std::vector<int> parent(total, -1), via(total, -1), depth(total, -1);
  std::vector<State> states(total);
  std::deque<int> queue;
  int s0 = index(start);
  depth[static_cast<std::size_t>(s0)] = 0;
  states[static_cast<std::size_t>(s0)] = start;
  queue.push_back(s0);
  while (!queue.empty()) {
    int cur = queue.front();
    queue.pop_front();
    if (depth[static_cast<std::size_t>(cur)] >= max_len) continue;
    for (int a = 0; a < kGridActions; ++a) {
      State nxt = transition(task, states[static_cast<std::size_t>(cur)], Action::discrete(a));
      int id = index(nxt);
      auto uid = static_cast<std::size_t>(id);
      if (depth[uid] >= 0) continue;
      depth[uid] = depth[static_cast<std::size_t>(cur)] + 1;
      parent[uid] = cur;
      via[uid] = a;
      states[uid] = nxt;
      if (goal_reached(task, nxt)) {
        std::vector<int> path;
        for (int v = id; v != s0; v = parent[static_cast<std::size_t>(v)]) path.push_back(via[static_cast<std::size_t>(v)]);
        std::reverse(path.begin(), path.end());
        return path;
      }
      queue.push_back(id);
    }
  }
  return std::nullopt;
}

// Proportional controller for POINTREACH; saturates at the action bound.
inline Action point_controller(const TaskSpec& task, const State& s) {
  std::vector<double> a(kPointDims);
  for (std::size_t d = 0; d < kPointDims; ++d)
    a[d] = std::clamp((s.target[d] - s.point[d]) / task.max_step, -1.0, 1.0);
  return Action::continuous(std::move(a));
}

}  // namespace ript::envsuite
