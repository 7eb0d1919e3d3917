// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ript/policy/queries.hpp"
#include "ript/rl/ript.hpp"

namespace ript::harness {

using envsuite::Context;
using policy::Policy;

struct EpisodeRecord {
  std::uint64_t context_id = 0;
  int task_id = 0;
  int scenario_id = 0;
  int episode = 0;
  bool success = false;
  int length = 0;
};

struct EvalReport {
  std::map<int, double> task_sr;      // task id -> success rate
  std::map<int, int> task_episodes;   // task id -> episodes run
  double mean_sr = 0.0;               // unweighted over tasks
  int episodes = 0;
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::vector<EpisodeRecord> log;
};

// One greedy episode; returns (success, length).
template <rl::World W>
std::pair<bool, int> greedy_episode(const Policy& p, const W& world, const Context& c) {
  auto env = world.make_env(c);
  auto obs = env.reset(c);
  int goal = world.goal_of(c);
  policy::Encoder enc = p.encoder();
  std::vector<envsuite::Action> actions;
  while (true) {
    auto a = policy::greedy_action(p, enc.encode(obs, goal, actions));
    auto r = env.step(a);
    actions.push_back(std::move(a));
    obs = std::move(r.observation);
    if (r.done) return {r.reward > 0.5, static_cast<int>(actions.size())};
  }
}

// Greedy rollouts, `episodes` per context. SR per task is successes over
// episodes; the suite mean weights tasks equally.
template <rl::World W>
EvalReport evaluate(const Policy& p, const W& world, std::span<const Context> contexts, int episodes = 1,
                    std::string checkpoint = {}, std::uint64_t seed = 0) {
  EvalReport rep;
  rep.checkpoint = std::move(checkpoint);
  rep.seed = seed;
  std::map<int, int> wins;
  for (const auto& c : contexts) {
    for (int e = 0; e < episodes; ++e) {
      auto [ok, len] = greedy_episode(p, world, c);
      rep.log.push_back({c.id, c.task_id, c.scenario_id, e, ok, len});
      wins[c.task_id] += ok ? 1 : 0;
      rep.task_episodes[c.task_id] += 1;
      ++rep.episodes;
    }
  }
  double total = 0.0;
  for (const auto& [t, n] : rep.task_episodes) {
    rep.task_sr[t] = static_cast<double>(wins[t]) / n;
    total += rep.task_sr[t];
  }
  if (!rep.task_sr.empty()) rep.mean_sr = total / static_cast<double>(rep.task_sr.size());
  return rep;
}

inline nlohmann::ordered_json episode_json(const EpisodeRecord& r) {
  nlohmann::ordered_json j;
  j["context_id"] = r.context_id;
  j["task_id"] = r.task_id;
  j["scenario_id"] = r.scenario_id;
  j["episode"] = r.episode;
  j["success"] = r.success;
  j["length"] = r.length;
  return j;
}

inline nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["checkpoint"] = r.checkpoint;
  j["seed"] = r.seed;
  j["mean_sr"] = r.mean_sr;
  j["episodes"] = r.episodes;
  j["task_sr"] = nlohmann::ordered_json::object();
  for (const auto& [t, v] : r.task_sr) j["task_sr"][std::to_string(t)] = v;
  return j;
}

// One JSON line per episode.
inline void write_episode_log(const std::filesystem::path& path, const EvalReport& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  for (const auto& e : r.log) os << episode_json(e).dump() << '\n';
}

// Rebuilds the suite mean SR from per-episode records.
inline double mean_sr_from_log(const std::vector<EpisodeRecord>& log) {
  std::map<int, std::pair<int, int>> per;  // task -> (wins, episodes)
  for (const auto& e : log) {
    per[e.task_id].first += e.success ? 1 : 0;
    per[e.task_id].second += 1;
  }
  double total = 0.0;
  for (const auto& [t, wn] : per) total += static_cast<double>(wn.first) / wn.second;
  return per.empty() ? 0.0 : total / static_cast<double>(per.size());
}

inline std::vector<EpisodeRecord> read_episode_log(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("eval: cannot read " + path.string());
  std::vector<EpisodeRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    out.push_back({j.at("context_id").get<std::uint64_t>(), j.at("task_id").get<int>(), j.at("scenario_id").get<int>(),
                   j.at("episode").get<int>(), j.at("success").get<bool>(), j.at("length").get<int>()});
  }
  return out;
}

}  // namespace ript::harness
