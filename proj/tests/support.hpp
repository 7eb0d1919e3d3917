// Shared fixtures for the unit and acceptance tests: small policies with
// hand-set heads, constructed one-step worlds and scratch directories.
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "ript/envsuite/suite.hpp"
#include "ript/policy/queries.hpp"
#include "ript/random.hpp"
#include "ript/rl/ript.hpp"

namespace ript::fixtures {

namespace fs = std::filesystem;
using envsuite::Action;
using envsuite::Context;
using envsuite::Observation;
using envsuite::StepResult;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("ript_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline policy::Policy make_policy(policy::HeadFamily head, std::size_t obs_dim, std::size_t action_dim,
                                  std::vector<std::size_t> hidden, std::uint64_t seed, std::size_t n_goals = 1,
                                  std::size_t window = 1) {
  policy::PolicyConfig pc;
  pc.head = head;
  pc.obs_dim = obs_dim;
  pc.n_goals = n_goals;
  pc.action_dim = action_dim;
  pc.window = window;
  pc.hidden = std::move(hidden);
  pc.seed = seed;
  return policy::Policy(pc);
}

// With no hidden layers the head is a single affine map; zeroing the weight
// makes the logits (or the mean) equal to the bias for every input.
inline void set_constant_head(policy::Policy& p, const std::vector<double>& bias) {
  auto head = p.head_parameters();
  std::fill(head[0]->values.begin(), head[0]->values.end(), 0.0);
  head[1]->values = bias;
}

// Same for the scale head: sigma = softplus(raw) + floor for every input.
inline void set_constant_sigma(policy::Policy& p, const std::vector<double>& sigma) {
  auto scale = p.scale_parameters();
  std::fill(scale[0]->values.begin(), scale[0]->values.end(), 0.0);
  for (std::size_t k = 0; k < sigma.size(); ++k)
    scale[1]->values[k] = std::log(std::expm1(sigma[k] - p.config().scale_floor));
}

// Perturbs every parameter with N(0, sd) noise.
inline void jiggle(policy::Policy& p, std::uint64_t seed, double sd) {
  Rng rng(seed, {0x71});
  for (auto* t : p.parameters())
    for (auto& v : t->values) v += sd * rng.normal();
}

// One-step task: the observation is a constant 1 and the episode ends after
// the first action. `winner` decides success from the action.
struct OneStepEnv {
  int mode = 0;  // 0: token 0 wins, 1: always win, 2: always lose, 3: value > 0.5 wins
  Observation reset(const Context&) { return {1.0}; }
  StepResult step(const Action& a) {
    StepResult r;
    r.done = true;
    r.observation = {1.0};
    bool win = mode == 0 ? a.token == 0 : mode == 1 ? true : mode == 2 ? false : a.values.at(0) > 0.5;
    r.reward = win ? 1.0 : 0.0;
    return r;
  }
};

// Context id selects the env mode; ids past the table use the last one.
struct OneStepWorld {
  std::vector<int> modes{0};
  int goal_of(const Context&) const { return 0; }
  OneStepEnv make_env(const Context& c) const {
    return OneStepEnv{c.id < modes.size() ? modes[c.id] : modes.back()};
  }
};

inline std::vector<Context> contexts_with_ids(std::initializer_list<std::uint64_t> ids) {
  std::vector<Context> out;
  for (auto id : ids) {
    Context c;
    c.id = id;
    out.push_back(c);
  }
  return out;
}

// Short multi-step episodes for ratio and gradient checks: the observation is
// a fixed random vector per step and the episode lasts `length` steps.
struct WalkEnv {
  int length = 3;
  std::size_t dim = 3;
  std::uint64_t seed = 0;
  int t = 0;
  Observation obs() const {
    Rng rng(seed, {static_cast<std::uint64_t>(t)});
    Observation o(dim);
    for (auto& v : o) v = rng.uniform(-1.0, 1.0);
    return o;
  }
  Observation reset(const Context&) {
    t = 0;
    return obs();
  }
  StepResult step(const Action& a) {
    ++t;
    StepResult r;
    r.observation = obs();
    r.done = t >= length;
    r.reward = r.done && (a.token == 0 || (!a.values.empty() && a.values[0] > 0.0)) ? 1.0 : 0.0;
    return r;
  }
};

struct WalkWorld {
  int length = 3;
  std::size_t dim = 3;
  int goal_of(const Context&) const { return 0; }
  WalkEnv make_env(const Context& c) const { return WalkEnv{length, dim, c.id, 0}; }
};

}  // namespace ript::fixtures
