// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ript/envsuite/dynamics.hpp"
#include "ript/envsuite/types.hpp"
#include "ript/random.hpp"

namespace ript::envsuite {

struct SuiteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EnvError : std::logic_error {
  using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Episode runner

struct StepResult {
  Observation observation;
  bool done = false;
  double reward = 0.0;  // meaningful only when done
};

class EnvInstance {
 public:
  explicit EnvInstance(const TaskSpec& task) : task_(&task) {}

  Observation reset(const Context& context) {
    if (context.task_id != task_->task_id || context.scenario_id != task_->scenario_id)
      throw EnvError("reset: context " + std::to_string(context.id) + " belongs to task " +
                     std::to_string(context.task_id) + "/" + std::to_string(context.scenario_id) +
                     ", instance runs " + std::to_string(task_->task_id) + "/" +
                     std::to_string(task_->scenario_id));
    state_ = context.initial;
    steps_ = 0;
    terminal_ = false;
    return observe(*task_, state_);
  }

  StepResult step(const Action& action) {
    if (terminal_) throw EnvError("step: episode already terminated");
    state_ = transition(*task_, state_, action);
    ++steps_;
    StepResult r;
    r.observation = observe(*task_, state_);
    if (goal_reached(*task_, state_)) {
      r.done = true;
      r.reward = 1.0;
    } else if (steps_ >= task_->horizon) {
      r.done = true;
      r.reward = 0.0;
    }
    terminal_ = r.done;
    return r;
  }

  const State& state() const { return state_; }
  const TaskSpec& task() const { return *task_; }
  int steps() const { return steps_; }
  bool terminal() const { return terminal_; }

 private:
  const TaskSpec* task_;
  State state_;
  int steps_ = 0;
  bool terminal_ = true;
};

// ---------------------------------------------------------------------------
// Validity and certification

inline bool grid_state_valid(const TaskSpec& task, const State& s) {
  const auto& L = task.layout;
  std::vector<Cell> occupied{s.agent};
  for (const auto& lm : s.landmarks) occupied.push_back(lm);
  if (s.key.row >= 0) occupied.push_back(s.key);
  for (const auto& c : occupied) {
    if (!L.in_bounds(c) || L.is_wall(c) || (L.door && c == *L.door)) return false;
  }
  std::sort(occupied.begin(), occupied.end());
  return std::adjacent_find(occupied.begin(), occupied.end()) == occupied.end();
}

inline bool state_valid(const TaskSpec& task, const State& s) {
  if (task.family == Family::pointreach) {
    for (std::size_t d = 0; d < kPointDims; ++d)
      if (!(s.point[d] >= 0.0 && s.point[d] <= 1.0 && s.target[d] >= 0.0 && s.target[d] <= 1.0)) return false;
    return true;
  }
  return grid_state_valid(task, s);
}

// Steps the proportional controller needs (nullopt if it cannot finish).
inline std::optional<int> point_solution_length(const TaskSpec& task, State s) {
  for (int t = 0; t <= task.horizon; ++t) {
    if (goal_reached(task, s)) return t;
    s = transition(task, s, point_controller(task, s));
  }
  return std::nullopt;
}

inline std::optional<int> solution_length(const TaskSpec& task, const State& s) {
  if (task.family == Family::pointreach) return point_solution_length(task, s);
  auto path = shortest_solution(task, s, task.horizon);
  if (!path) return std::nullopt;
  return static_cast<int>(path->size());
}

// Solvable within the horizon and not already solved.
inline bool certified(const TaskSpec& task, const State& s) {
  if (!state_valid(task, s) || goal_reached(task, s)) return false;
  auto len = solution_length(task, s);
  return len && *len >= 1 && *len <= task.horizon;
}

// ---------------------------------------------------------------------------
// Suite generation

namespace detail {

inline Cell random_free_cell(Rng& rng, const GridLayout& L, const std::vector<Cell>& taken, int col_lo, int col_hi) {
  for (int tries = 0; tries < 1000; ++tries) {
    Cell c{rng.range(0, L.size - 1), rng.range(col_lo, col_hi)};
    if (L.is_wall(c) || (L.door && c == *L.door)) continue;
    if (std::find(taken.begin(), taken.end(), c) != taken.end()) continue;
    return c;
  }
  throw SuiteError("suite: no free cell available");
}

inline std::vector<std::vector<int>> goals_for(Family family, Rng& rng, int count) {
  std::vector<std::vector<int>> out;
  if (family == Family::sort) {
    std::vector<int> perm{0, 1, 2};
    rng.shuffle(perm.begin(), perm.end());
    out.push_back(perm);
    if (count > 1) out.push_back({perm[2], perm[1], perm[0]});
  } else if (family == Family::pointreach) {
    out.assign(static_cast<std::size_t>(count), std::vector<int>{});
  } else {
    int g0 = static_cast<int>(rng.below(kLandmarks));
    out.push_back({g0});
    if (count > 1) out.push_back({(g0 + 1 + static_cast<int>(rng.below(kLandmarks - 1))) % kLandmarks});
  }
  return out;
}

// Draws a layout and canonical state for every task sharing it.
inline void draw_layout(const SuiteConfig& cfg, Rng& rng, std::vector<TaskSpec>& group) {
  Family family = group.front().family;
  if (family == Family::pointreach) {
    State home;
    for (;;) {
      for (std::size_t d = 0; d < kPointDims; ++d) {
        home.point[d] = rng.uniform(0.15, 0.85);
        home.target[d] = rng.uniform(0.15, 0.85);
      }
      if (std::hypot(home.point[0] - home.target[0], home.point[1] - home.target[1]) >= 0.4) break;
    }
    for (auto& t : group) t.home = home;
    return;
  }
  int n = cfg.grid_size;
  GridLayout L;
  L.size = n;
  int wall_col = -1;
  if (family == Family::keydoor) {
    wall_col = rng.range(2, n - 3);
    int door_row = rng.range(1, n - 2);
    for (int r = 0; r < n; ++r)
      if (r != door_row) L.walls.push_back({r, wall_col});
    L.door = Cell{door_row, wall_col};
  } else {
    int count = static_cast<int>(std::lround(cfg.wall_density * n * n));
    std::set<Cell> walls;
    while (static_cast<int>(walls.size()) < count) walls.insert({rng.range(0, n - 1), rng.range(0, n - 1)});
    L.walls.assign(walls.begin(), walls.end());
  }
  std::sort(L.walls.begin(), L.walls.end());

  State home;
  std::vector<Cell> taken;
  const auto& goal = group.front().goal;
  for (int l = 0; l < kLandmarks; ++l) {
    bool is_goal = family == Family::keydoor && l == goal.at(0);
    Cell c = is_goal ? random_free_cell(rng, L, taken, wall_col + 1, n - 1) : random_free_cell(rng, L, taken, 0, n - 1);
    home.landmarks[static_cast<std::size_t>(l)] = c;
    taken.push_back(c);
  }
  if (family == Family::keydoor) {
    home.key = random_free_cell(rng, L, taken, 0, std::max(0, wall_col - 2));
    taken.push_back(home.key);
    home.agent = random_free_cell(rng, L, taken, 0, wall_col - 1);
  } else {
    home.agent = random_free_cell(rng, L, taken, 0, n - 1);
  }
  for (auto& t : group) {
    t.layout = L;
    t.home = home;
  }
}

}  // namespace detail

inline void validate(const SuiteConfig& cfg) {
  if (cfg.n_tasks < 1) throw std::invalid_argument("suite: n_tasks must be >= 1");
  if (cfg.grid_size < 4) throw std::invalid_argument("suite: grid_size must be >= 4");
  if (cfg.horizon < 1) throw std::invalid_argument("suite: horizon must be >= 1");
  if (cfg.scenario_count < 1) throw std::invalid_argument("suite: scenario_count must be >= 1");
  if (cfg.families.empty()) throw std::invalid_argument("suite: no task families selected");
  bool d0 = is_discrete(cfg.families.front());
  for (auto f : cfg.families)
    if (is_discrete(f) != d0)
      throw std::invalid_argument("suite: grid and continuous families cannot share a suite");
  if (cfg.pairing == Pairing::cross_goal && cfg.n_tasks % 2 != 0)
    throw std::invalid_argument("suite: cross_goal pairing needs an even task count");
}

// Generates n_tasks x scenario_count task specs. Each (task, scenario) has its
// own layout; all scenarios of a task share its goal predicate. Under
// cross_goal pairing, tasks 2i and 2i+1 share layouts and differ in goal.
inline Suite make_suite(const SuiteConfig& cfg) {
  validate(cfg);
  Suite suite;
  suite.config = cfg;
  bool paired = cfg.pairing == Pairing::cross_goal;
  int groups = paired ? cfg.n_tasks / 2 : cfg.n_tasks;
  int per_group = paired ? 2 : 1;
  for (int g = 0; g < groups; ++g) {
    Family family = cfg.families[static_cast<std::size_t>(g) % cfg.families.size()];
    Rng goal_rng(cfg.seed, {1, static_cast<std::uint64_t>(g)});
    auto goals = detail::goals_for(family, goal_rng, per_group);
    std::vector<std::vector<TaskSpec>> by_scenario;
    for (int s = 0; s < cfg.scenario_count; ++s) {
      std::vector<TaskSpec> group;
      for (int k = 0; k < per_group; ++k) {
        TaskSpec t;
        t.task_id = g * per_group + k;
        t.scenario_id = s;
        t.family = family;
        t.goal = goals[static_cast<std::size_t>(k)];
        t.horizon = cfg.horizon;
        t.agent_jitter = cfg.agent_jitter;
        t.object_jitter = cfg.object_jitter;
        t.radius = cfg.point_radius;
        t.max_step = cfg.point_max_step;
        group.push_back(std::move(t));
      }
      bool ok = false;
      for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
        Rng rng(cfg.seed, {2, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(s),
                           static_cast<std::uint64_t>(attempt)});
        detail::draw_layout(cfg, rng, group);
        ok = std::all_of(group.begin(), group.end(), [](const TaskSpec& t) { return certified(t, t.home); });
      }
      if (!ok)
        throw SuiteError("suite: could not generate a solvable layout for task group " + std::to_string(g) +
                         " scenario " + std::to_string(s) + " after 100 attempts");
      by_scenario.push_back(std::move(group));
    }
    for (int k = 0; k < per_group; ++k)
      for (auto& group : by_scenario) suite.tasks.push_back(group[static_cast<std::size_t>(k)]);
  }
  return suite;
}

// ---------------------------------------------------------------------------
// Contexts

enum class ContextStream : std::uint64_t { train = 0, test = 1 };

inline std::uint64_t context_id(const TaskSpec& t, std::uint64_t stream, std::uint64_t index) {
  return (static_cast<std::uint64_t>(t.task_id) << 40) | (static_cast<std::uint64_t>(t.scenario_id) << 32) |
         (stream << 24) | index;
}

inline State jitter_state(const TaskSpec& task, Rng& rng) {
  State s = task.home;
  if (task.family == Family::pointreach) {
    for (std::size_t d = 0; d < kPointDims; ++d) {
      s.point[d] = std::clamp(s.point[d] + rng.uniform(-task.start_spread, task.start_spread), 0.0, 1.0);
      s.target[d] = std::clamp(s.target[d] + rng.uniform(-task.target_spread, task.target_spread), 0.0, 1.0);
    }
    return s;
  }
  auto shift = [&](Cell c, int r) { return Cell{c.row + rng.range(-r, r), c.col + rng.range(-r, r)}; };
  s.agent = shift(s.agent, task.agent_jitter);
  for (auto& lm : s.landmarks) lm = shift(lm, task.object_jitter);
  if (s.key.row >= 0) s.key = shift(s.key, task.object_jitter);
  return s;
}

// `count` distinct certified contexts for one task from the given stream,
// skipping any state in `exclude`.
inline std::vector<Context> sample_contexts(const Suite& suite, const TaskSpec& task, int count,
                                            ContextStream stream, const std::vector<Context>& exclude = {}) {
  std::set<State> seen;
  for (const auto& c : exclude)
    if (c.task_id == task.task_id && c.scenario_id == task.scenario_id) seen.insert(c.initial);
  Rng rng(suite.config.seed, {3, static_cast<std::uint64_t>(task.task_id), static_cast<std::uint64_t>(task.scenario_id),
                              static_cast<std::uint64_t>(stream)});
  std::vector<Context> out;
  long budget = 2000L * std::max(count, 1);
  while (static_cast<int>(out.size()) < count && budget-- > 0) {
    State s = jitter_state(task, rng);
    if (seen.count(s) || !certified(task, s)) continue;
    seen.insert(s);
    out.push_back(Context{context_id(task, static_cast<std::uint64_t>(stream), out.size()), task.task_id,
                          task.scenario_id, s});
  }
  if (static_cast<int>(out.size()) < count)
    throw SuiteError("contexts: only " + std::to_string(out.size()) + " of " + std::to_string(count) +
                     " distinct contexts available for task " + std::to_string(task.task_id));
  return out;
}

// One context dataset entry per demo, in order, dropping exact duplicates.
inline std::vector<Context> extract_contexts(const std::vector<Demonstration>& demos) {
  std::vector<Context> out;
  for (const auto& d : demos) {
    bool dup = std::any_of(out.begin(), out.end(), [&](const Context& c) {
      return c.task_id == d.context.task_id && c.scenario_id == d.context.scenario_id &&
             c.initial == d.context.initial;
    });
    if (!dup) out.push_back(d.context);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scripted expert

struct ExpertOptions {
  double detour_prob = 0.0;   // grid suites: chance of a random move
  double action_noise = 0.0;  // POINTREACH: Gaussian std added to each action dimension
  std::uint64_t seed = 0;
};

namespace detail {
inline Demonstration expert_attempt(const TaskSpec& task, const Context& context, const ExpertOptions& opt,
                                    std::uint64_t attempt);
}

// A noisy POINTREACH demo can miss the target; it is redrawn from the next
// stream, up to 20 times.
inline Demonstration scripted_expert(const TaskSpec& task, const Context& context, const ExpertOptions& opt = {}) {
  int tries = task.family == Family::pointreach && opt.action_noise > 0.0 ? 20 : 1;
  for (int a = 0; a + 1 < tries; ++a) {
    auto d = detail::expert_attempt(task, context, opt, static_cast<std::uint64_t>(a));
    if (d.success) return d;
  }
  auto demo = detail::expert_attempt(task, context, opt, static_cast<std::uint64_t>(tries - 1));
  if (!demo.success) throw EnvError("expert: failed on context " + std::to_string(context.id));
  return demo;
}

inline Demonstration detail::expert_attempt(const TaskSpec& task, const Context& context, const ExpertOptions& opt,
                                            std::uint64_t attempt) {
  EnvInstance env(task);
  Demonstration demo;
  demo.context = context;
  demo.observations.push_back(env.reset(context));
  Rng rng = attempt == 0 ? Rng(opt.seed, {4, context.id}) : Rng(opt.seed, {4, context.id, attempt});
  StepResult r;
  std::vector<int> plan;
  std::size_t cursor = 0;
  if (task.family != Family::pointreach) {
    auto path = shortest_solution(task, context.initial, task.horizon);
    if (!path) throw EnvError("expert: context " + std::to_string(context.id) + " is not solvable");
    plan = *path;
  }
  while (!env.terminal()) {
    Action a;
    if (task.family == Family::pointreach) {
      a = point_controller(task, env.state());
      if (opt.action_noise > 0.0)
        for (auto& v : a.values) v += opt.action_noise * rng.normal();
    } else if (opt.detour_prob > 0.0 && rng.uniform() < opt.detour_prob) {
      a = Action::discrete(static_cast<int>(rng.below(kGridActions)));
      plan.clear();
    } else {
      if (cursor >= plan.size()) {
        auto path = shortest_solution(task, env.state(), task.horizon - env.steps());
        if (!path) throw EnvError("expert: lost track of a solution for context " + std::to_string(context.id));
        plan = *path;
        cursor = 0;
      }
      a = Action::discrete(plan[cursor++]);
    }
    if (plan.empty()) cursor = 0;
    r = env.step(a);
    demo.actions.push_back(a);
    demo.observations.push_back(r.observation);
  }
  demo.success = r.reward == 1.0;
  return demo;
}

// ---------------------------------------------------------------------------
// Initial-state perturbation

// Per-axis standard deviation of every movable entity across a context set.
struct PositionStd {
  std::array<double, 2> agent{};
  std::array<std::array<double, 2>, kLandmarks> landmarks{};
  std::array<double, 2> key{};
  std::array<double, kPointDims> point{};
  std::array<double, kPointDims> target{};
};

namespace detail {
inline double population_std(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return std::sqrt(v / static_cast<double>(xs.size()));
}
}  // namespace detail

inline PositionStd position_std(const std::vector<Context>& contexts) {
  PositionStd out;
  auto axis_std = [&](auto getter) {
    std::vector<double> xs;
    for (const auto& c : contexts)
      if (auto v = getter(c.initial)) xs.push_back(*v);
    return detail::population_std(xs);
  };
  for (int ax = 0; ax < 2; ++ax) {
    auto a = static_cast<std::size_t>(ax);
    auto pick = [ax](Cell c) -> std::optional<double> {
      if (c.row < 0) return std::nullopt;
      return ax == 0 ? c.row : c.col;
    };
    out.agent[a] = axis_std([&](const State& s) { return pick(s.agent); });
    out.key[a] = axis_std([&](const State& s) { return pick(s.key); });
    for (std::size_t l = 0; l < kLandmarks; ++l)
      out.landmarks[l][a] = axis_std([&](const State& s) { return pick(s.landmarks[l]); });
    out.point[a] = axis_std([&](const State& s) { return std::optional<double>(s.point[a]); });
    out.target[a] = axis_std([&](const State& s) { return std::optional<double>(s.target[a]); });
  }
  return out;
}

// Nearest cell (Manhattan distance, ties in row-major order) that is inside
// the grid, not a wall or door, and not in `taken`.
inline Cell nearest_free_cell(const GridLayout& L, Cell c, const std::vector<Cell>& taken) {
  auto free = [&](Cell x) {
    return L.in_bounds(x) && !L.is_wall(x) && !(L.door && x == *L.door) &&
           std::find(taken.begin(), taken.end(), x) == taken.end();
  };
  if (free(c)) return c;
  for (int d = 1; d <= 2 * L.size; ++d)
    for (int r = c.row - d; r <= c.row + d; ++r) {
      int rem = d - std::abs(r - c.row);
      for (int col : {c.col - rem, c.col + rem}) {
        if (free({r, col})) return {r, col};
        if (rem == 0) break;
      }
    }
  throw EnvError("perturb: grid has no free cell");
}

// Gaussian perturbation of movable positions with per-axis std
// scale * base. Grid positions are rounded to cells, clamped and repaired.
inline Context perturb_context(const TaskSpec& task, const Context& context, double scale, const PositionStd& base,
                               Rng& rng) {
  if (scale < 0.0) throw std::invalid_argument("perturb: scale must be >= 0");
  Context out = context;
  if (scale == 0.0) return out;
  State& s = out.initial;
  if (task.family == Family::pointreach) {
    for (std::size_t d = 0; d < kPointDims; ++d) {
      s.point[d] = std::clamp(s.point[d] + scale * base.point[d] * rng.normal(), 0.0, 1.0);
      s.target[d] = std::clamp(s.target[d] + scale * base.target[d] * rng.normal(), 0.0, 1.0);
    }
    return out;
  }
  int n = task.layout.size;
  auto jitter = [&](Cell c, const std::array<double, 2>& sd) {
    double r = c.row + scale * sd[0] * rng.normal();
    double k = c.col + scale * sd[1] * rng.normal();
    return Cell{std::clamp(static_cast<int>(std::lround(r)), 0, n - 1),
                std::clamp(static_cast<int>(std::lround(k)), 0, n - 1)};
  };
  std::vector<Cell> taken;
  s.agent = nearest_free_cell(task.layout, jitter(s.agent, base.agent), taken);
  taken.push_back(s.agent);
  if (s.key.row >= 0) {
    s.key = nearest_free_cell(task.layout, jitter(s.key, base.key), taken);
    taken.push_back(s.key);
  }
  for (std::size_t l = 0; l < kLandmarks; ++l) {
    s.landmarks[l] = nearest_free_cell(task.layout, jitter(s.landmarks[l], base.landmarks[l]), taken);
    taken.push_back(s.landmarks[l]);
  }
  return out;
}

}  // namespace ript::envsuite
