// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ript::envsuite {

enum class Family { reach, keydoor, sort, pointreach };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::reach: return "reach";
    case Family::keydoor: return "keydoor";
    case Family::sort: return "sort";
    case Family::pointreach: return "pointreach";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "reach") return Family::reach;
  if (s == "keydoor") return Family::keydoor;
  if (s == "sort") return Family::sort;
  if (s == "pointreach") return Family::pointreach;
  throw std::invalid_argument("unknown task family '" + s + "'");
}

inline bool is_discrete(Family f) { return f != Family::pointreach; }

// How tasks of a suite relate to each other.
//   none            independent tasks, one layout each (per scenario)
//   cross_goal      tasks (2i, 2i+1) share every layout but differ in goal
enum class Pairing { none, cross_goal };

inline constexpr int kLandmarks = 3;
inline constexpr int kGridActions = 4;  // up, down, left, right
inline constexpr int kPointDims = 2;

struct Cell {
  int row = 0;
  int col = 0;
  auto operator<=>(const Cell&) const = default;
};

inline constexpr Cell kNoCell{-1, -1};

// Discrete tokens or a continuous vector, depending on the task family.
struct Action {
  int token = -1;
  std::vector<double> values;

  static Action discrete(int t) { return Action{t, {}}; }
  static Action continuous(std::vector<double> v) { return Action{-1, std::move(v)}; }
  bool is_discrete() const { return token >= 0; }
  bool operator==(const Action&) const = default;
};

// Full environment state. Grid families use the cell fields, POINTREACH the
// coordinate fields.
struct State {
  Cell agent;
  std::array<Cell, kLandmarks> landmarks{};
  Cell key = kNoCell;  // kNoCell once held or when absent
  bool has_key = false;
  bool door_open = false;
  int progress = 0;  // SORT: landmarks visited in order so far
  std::array<double, kPointDims> point{};
  std::array<double, kPointDims> target{};
  bool operator==(const State&) const = default;
  auto operator<=>(const State&) const = default;
};

struct GridLayout {
  int size = 0;
  std::vector<Cell> walls;  // sorted
  std::optional<Cell> door;

  bool in_bounds(Cell c) const { return c.row >= 0 && c.col >= 0 && c.row < size && c.col < size; }
  bool is_wall(Cell c) const;
  bool operator==(const GridLayout&) const = default;
};

struct TaskSpec {
  int suite_id = 0;
  int task_id = 0;
  int scenario_id = 0;
  Family family = Family::reach;
  // REACH/KEYDOOR: {target landmark}. SORT: landmarks in visiting order.
  std::vector<int> goal;
  int horizon = 40;
  GridLayout layout;
  // Canonical initial state; contexts jitter around it.
  State home;
  int agent_jitter = 2;
  int object_jitter = 1;
  // POINTREACH
  double radius = 0.05;
  double max_step = 0.1;
  double start_spread = 0.1;
  double target_spread = 0.03;

  bool operator==(const TaskSpec&) const = default;
};

struct Context {
  std::uint64_t id = 0;
  int task_id = 0;
  int scenario_id = 0;
  State initial;
  bool operator==(const Context&) const = default;
};

using Observation = std::vector<double>;

struct Demonstration {
  Context context;
  std::vector<Observation> observations;  // |actions| + 1
  std::vector<Action> actions;
  bool success = false;
};

struct SuiteConfig {
  std::uint64_t seed = 0;
  int n_tasks = 4;
  int grid_size = 7;
  int horizon = 40;
  int scenario_count = 1;
  std::vector<Family> families{Family::reach};
  Pairing pairing = Pairing::none;
  int agent_jitter = 2;
  int object_jitter = 1;
  double wall_density = 0.1;
  double point_radius = 0.05;
  double point_max_step = 0.1;
  bool operator==(const SuiteConfig&) const = default;
};

struct Suite {
  SuiteConfig config;
  std::vector<TaskSpec> tasks;  // task-major, then scenario

  const TaskSpec& task(int task_id, int scenario_id) const {
    for (const auto& t : tasks)
      if (t.task_id == task_id && t.scenario_id == scenario_id) return t;
    throw std::out_of_range("suite: no task " + std::to_string(task_id) + " scenario " +
                            std::to_string(scenario_id));
  }
  const TaskSpec& task_of(const Context& c) const { return task(c.task_id, c.scenario_id); }
  bool discrete() const { return config.families.empty() || is_discrete(config.families.front()); }
  int n_goals() const { return config.n_tasks; }
};

inline bool GridLayout::is_wall(Cell c) const {
  return std::binary_search(walls.begin(), walls.end(), c);
}

}  // namespace ript::envsuite
