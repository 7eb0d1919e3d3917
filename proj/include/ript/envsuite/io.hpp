// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ript/envsuite/types.hpp"

namespace ript::envsuite {

using ordered_json = nlohmann::ordered_json;

inline ordered_json cell_json(Cell c) { return ordered_json::array({c.row, c.col}); }
inline Cell cell_from(const ordered_json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

inline ordered_json state_json(const State& s, bool discrete) {
  ordered_json j;
  if (discrete) {
    j["agent"] = cell_json(s.agent);
    j["landmarks"] = ordered_json::array();
    for (const auto& lm : s.landmarks) j["landmarks"].push_back(cell_json(lm));
    j["key"] = cell_json(s.key);
    j["has_key"] = s.has_key;
    j["door_open"] = s.door_open;
    j["progress"] = s.progress;
  } else {
    j["point"] = {s.point[0], s.point[1]};
    j["target"] = {s.target[0], s.target[1]};
  }
  return j;
}

inline State state_from(const ordered_json& j) {
  State s;
  if (j.contains("agent")) {
    s.agent = cell_from(j.at("agent"));
    for (std::size_t l = 0; l < kLandmarks; ++l) s.landmarks[l] = cell_from(j.at("landmarks").at(l));
    s.key = cell_from(j.at("key"));
    s.has_key = j.at("has_key").get<bool>();
    s.door_open = j.at("door_open").get<bool>();
    s.progress = j.at("progress").get<int>();
  } else {
    for (std::size_t d = 0; d < kPointDims; ++d) {
      s.point[d] = j.at("point").at(d).get<double>();
      s.target[d] = j.at("target").at(d).get<double>();
    }
  }
  return s;
}

inline ordered_json action_json(const Action& a) {
  if (a.is_discrete()) return a.token;
  return a.values;
}

inline Action action_from(const ordered_json& j) {
  if (j.is_number_integer()) return Action::discrete(j.get<int>());
  return Action::continuous(j.get<std::vector<double>>());
}

// One JSON-lines record per demonstration:
// {context_id, task_id, scenario_id, initial_state, observations, actions, success}
inline ordered_json demo_json(const Demonstration& d) {
  bool discrete = d.actions.empty() || d.actions.front().is_discrete();
  ordered_json j;
  j["context_id"] = d.context.id;
  j["task_id"] = d.context.task_id;
  j["scenario_id"] = d.context.scenario_id;
  j["initial_state"] = state_json(d.context.initial, discrete);
  j["observations"] = d.observations;
  j["actions"] = ordered_json::array();
  for (const auto& a : d.actions) j["actions"].push_back(action_json(a));
  j["success"] = d.success;
  return j;
}

inline Demonstration demo_from(const ordered_json& j) {
  Demonstration d;
  d.context.id = j.at("context_id").get<std::uint64_t>();
  d.context.task_id = j.at("task_id").get<int>();
  d.context.scenario_id = j.at("scenario_id").get<int>();
  d.context.initial = state_from(j.at("initial_state"));
  d.observations = j.at("observations").get<std::vector<Observation>>();
  for (const auto& a : j.at("actions")) d.actions.push_back(action_from(a));
  d.success = j.at("success").get<bool>();
  return d;
}

inline void write_demos(const std::filesystem::path& path, const std::vector<Demonstration>& demos) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("demos: cannot write " + path.string());
  for (const auto& d : demos) os << demo_json(d).dump() << '\n';
}

inline std::vector<Demonstration> read_demos(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("demos: cannot read " + path.string());
  std::vector<Demonstration> out;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) out.push_back(demo_from(ordered_json::parse(line)));
  return out;
}

// ---------------------------------------------------------------------------
// Suite definition file (INI). Generation is deterministic in these
// parameters, so the file regenerates an identical suite.

inline std::string families_str(const std::vector<Family>& fs) {
  std::string s;
  for (std::size_t i = 0; i < fs.size(); ++i) s += (i ? "," : "") + std::string(family_name(fs[i]));
  return s;
}

inline std::vector<Family> parse_families(const std::string& s) {
  std::vector<Family> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(0, tok.find_first_not_of(" \t"));
    tok.erase(tok.find_last_not_of(" \t") + 1);
    if (!tok.empty()) out.push_back(parse_family(tok));
  }
  return out;
}

inline Pairing parse_pairing(const std::string& s) {
  if (s == "none") return Pairing::none;
  if (s == "cross_goal") return Pairing::cross_goal;
  throw std::invalid_argument("unknown pairing '" + s + "'");
}

inline const char* pairing_name(Pairing p) { return p == Pairing::none ? "none" : "cross_goal"; }

// Reads suite keys from `tree` (the [suite] section), defaulting to `base`.
inline SuiteConfig suite_config_from(const boost::property_tree::ptree& tree, SuiteConfig base = {}) {
  SuiteConfig c = base;
  c.seed = tree.get("seed", c.seed);
  c.n_tasks = tree.get("n_tasks", c.n_tasks);
  c.grid_size = tree.get("grid_size", c.grid_size);
  c.horizon = tree.get("horizon", c.horizon);
  c.scenario_count = tree.get("scenario_count", c.scenario_count);
  if (auto f = tree.get_optional<std::string>("families")) c.families = parse_families(*f);
  if (auto p = tree.get_optional<std::string>("pairing")) c.pairing = parse_pairing(*p);
  c.agent_jitter = tree.get("agent_jitter", c.agent_jitter);
  c.object_jitter = tree.get("object_jitter", c.object_jitter);
  c.wall_density = tree.get("wall_density", c.wall_density);
  c.point_radius = tree.get("point_radius", c.point_radius);
  c.point_max_step = tree.get("point_max_step", c.point_max_step);
  return c;
}

inline void write_suite_file(const std::filesystem::path& path, const SuiteConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("suite: cannot write " + path.string());
  os.precision(17);
  os << "[suite]\n"
     << "seed = " << c.seed << '\n'
     << "n_tasks = " << c.n_tasks << '\n'
     << "grid_size = " << c.grid_size << '\n'
     << "horizon = " << c.horizon << '\n'
     << "scenario_count = " << c.scenario_count << '\n'
     << "families = " << families_str(c.families) << '\n'
     << "pairing = " << pairing_name(c.pairing) << '\n'
     << "agent_jitter = " << c.agent_jitter << '\n'
     << "object_jitter = " << c.object_jitter << '\n'
     << "wall_density = " << c.wall_density << '\n'
     << "point_radius = " << c.point_radius << '\n'
     << "point_max_step = " << c.point_max_step << '\n';
}

inline SuiteConfig read_suite_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("suite: file not found: " + path.string());
  boost::property_tree::ptree tree;
  boost::property_tree::read_ini(path.string(), tree);
  return suite_config_from(tree.get_child("suite", boost::property_tree::ptree{}));
}

}  // namespace ript::envsuite
