// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ript/envsuite/io.hpp"
#include "ript/policy/encoding.hpp"
#include "ript/policy/queries.hpp"
#include "ript/rl/ript.hpp"
#include "ript/supervised/supervised.hpp"

namespace ript::harness {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Which tasks of which scenario a stage draws from.
struct Variant {
  enum class Tasks { all, even, odd } tasks = Tasks::all;
  int scenario = 0;

  bool contains(int task_id, int scenario_id) const {
    if (scenario_id != scenario) return false;
    if (tasks == Tasks::even) return task_id % 2 == 0;
    if (tasks == Tasks::odd) return task_id % 2 == 1;
    return true;
  }
  bool operator==(const Variant&) const = default;
};

inline Variant::Tasks parse_task_set(const std::string& s) {
  if (s == "all") return Variant::Tasks::all;
  if (s == "even") return Variant::Tasks::even;
  if (s == "odd") return Variant::Tasks::odd;
  throw ConfigError("unknown task set '" + s + "' (all, even, odd)");
}

inline const char* task_set_name(Variant::Tasks t) {
  return t == Variant::Tasks::all ? "all" : t == Variant::Tasks::even ? "even" : "odd";
}

struct PolicySettings {
  policy::HeadFamily head = policy::HeadFamily::tokenized;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t window = 1;
  double init_scale = 0.3;
};

struct ExperimentConfig {
  envsuite::SuiteConfig suite;
  PolicySettings policy;

  int demos_per_task = 50;       // expert demos generated per task and variant
  int train_pool_per_task = 50;  // train-stream contexts per task; demos use the first ones
  double expert_detour = 0.0;
  double expert_action_noise = 0.0;
  int eval_contexts_per_task = 50;
  int eval_episodes = 1;

  Variant source;  // pretraining data
  Variant target;  // SFT data, RIPT contexts, evaluation

  supervised::SupervisedConfig pretrain{0, 64, 1e-3, supervised::LossKind::nll, 0};
  supervised::SupervisedConfig sft{500, 64, 1e-3, supervised::LossKind::nll, 0};
  int sft_shots = 0;  // 0: every target demo
  bool fit_scale = true;
  policy::FitScaleOptions fit_scale_opts;
  rl::RiptConfig ript;
  int ript_contexts_per_task = 0;  // 0: only the SFT demo contexts

  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<int> shots{1, 5};
  std::vector<int> context_sizes{1, 5, 25};
  std::vector<double> noise_scales{0.0, 1.0, 3.0};
  bool dynamic_sampling = true;
  bool log_wall_time = true;  // false writes wall_ms = 0 so logs compare byte for byte
  std::string transfer_mode = "cross_scenario";
  std::filesystem::path out_dir = "out";

  void validate() const {
    if (seeds.empty()) throw ConfigError("config: seeds must be non-empty");
    if (eval_episodes < 1) throw ConfigError("config: eval episodes must be >= 1");
    if (eval_contexts_per_task < 1) throw ConfigError("config: eval contexts per task must be >= 1");
    if (demos_per_task < 1) throw ConfigError("config: demos_per_task must be >= 1");
    if (train_pool_per_task < demos_per_task) throw ConfigError("config: train_pool_per_task < demos_per_task");
    if (sft_shots < 0 || sft_shots > demos_per_task) throw ConfigError("config: sft shots outside [0, demos_per_task]");
    if (expert_detour < 0.0 || expert_detour > 1.0) throw ConfigError("config: expert_detour outside [0, 1]");
    if (expert_action_noise < 0.0) throw ConfigError("config: expert_action_noise must be >= 0");
    if (ript_contexts_per_task > train_pool_per_task)
      throw ConfigError("config: ript contexts per task exceed the train pool");
    if (envsuite::is_discrete(suite.families.front()) != (policy.head == policy::HeadFamily::tokenized))
      throw ConfigError("config: grid families need a tokenized head, pointreach a regression head");
    if (transfer_mode != "cross_scenario" && transfer_mode != "cross_goal")
      throw ConfigError("config: unknown transfer mode '" + transfer_mode + "'");
    try {
      envsuite::validate(suite);
      ript.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
};

namespace detail {

template <typename T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::stringstream one(tok);
    T v;
    if (!(one >> v)) throw ConfigError("config: bad list entry '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

template <typename T>
std::string list_str(const std::vector<T>& xs) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

inline supervised::SupervisedConfig stage_from(const boost::property_tree::ptree& t,
                                               supervised::SupervisedConfig c) {
  c.steps = t.get("steps", c.steps);
  c.batch_size = t.get("batch", c.batch_size);
  c.lr = t.get("lr", c.lr);
  if (auto l = t.get_optional<std::string>("loss")) c.loss = supervised::parse_loss(*l);
  return c;
}

inline const boost::property_tree::ptree& section(const boost::property_tree::ptree& root, const char* name) {
  static const boost::property_tree::ptree empty;
  auto it = root.find(name);
  return it == root.not_found() ? empty : it->second;
}

}  // namespace detail

// `base_dir` resolves a relative suite file path.
inline ExperimentConfig config_from(const boost::property_tree::ptree& root, ExperimentConfig c = {},
                                    const std::filesystem::path& base_dir = {}) {
  using detail::section;
  try {
    if (auto f = section(root, "suite").get_optional<std::string>("file")) {
      std::filesystem::path sf = *f;
      if (sf.is_relative()) sf = base_dir / sf;
      if (!std::filesystem::exists(sf)) throw ConfigError("config: suite file not found: " + sf.string());
      c.suite = envsuite::read_suite_file(sf);
    }
    c.suite = envsuite::suite_config_from(section(root, "suite"), c.suite);

    const auto& pol = section(root, "policy");
    if (auto h = pol.get_optional<std::string>("head")) c.policy.head = policy::parse_head(*h);
    if (auto h = pol.get_optional<std::string>("hidden")) c.policy.hidden = detail::parse_list<std::size_t>(*h);
    c.policy.window = pol.get("window", c.policy.window);
    c.policy.init_scale = pol.get("init_scale", c.policy.init_scale);

    const auto& data = section(root, "data");
    c.demos_per_task = data.get("demos_per_task", c.demos_per_task);
    c.train_pool_per_task = data.get("train_pool_per_task", std::max(c.train_pool_per_task, c.demos_per_task));
    c.expert_detour = data.get("expert_detour", c.expert_detour);
    c.expert_action_noise = data.get("expert_action_noise", c.expert_action_noise);
    if (auto s = data.get_optional<std::string>("source_tasks")) c.source.tasks = parse_task_set(*s);
    c.source.scenario = data.get("source_scenario", c.source.scenario);
    if (auto s = data.get_optional<std::string>("target_tasks")) c.target.tasks = parse_task_set(*s);
    c.target.scenario = data.get("target_scenario", c.target.scenario);

    c.pretrain = detail::stage_from(section(root, "pretrain"), c.pretrain);
    c.sft = detail::stage_from(section(root, "sft"), c.sft);
    c.sft_shots = section(root, "sft").get("shots", c.sft_shots);

    const auto& fs = section(root, "fit_scale");
    c.fit_scale = fs.get("enabled", c.fit_scale);
    c.fit_scale_opts.steps = fs.get("steps", c.fit_scale_opts.steps);
    c.fit_scale_opts.lr = fs.get("lr", c.fit_scale_opts.lr);

    const auto& r = section(root, "ript");
    auto& rc = c.ript;
    rc.K = r.get("K", rc.K);
    rc.B = r.get("B", rc.B);
    rc.N = r.get("N", rc.N);
    rc.M = r.get("M", rc.M);
    rc.epsilon = r.get("epsilon", rc.epsilon);
    rc.minibatch = r.get("minibatch", rc.minibatch);
    rc.lr_trunk = r.get("lr_trunk", rc.lr_trunk);
    rc.lr_head = r.get("lr_head", rc.lr_head);
    rc.attempt_cap = r.get("attempt_cap", rc.attempt_cap);
    if (auto m = r.get_optional<std::string>("ratio")) rc.ratio = rl::parse_ratio_mode(*m);
    rc.workers = r.get("workers", rc.workers);
    rc.eval_interval = r.get("eval_interval", rc.eval_interval);
    rc.checkpoint_interval = r.get("checkpoint_interval", rc.checkpoint_interval);
    rc.freeze_scale = r.get("freeze_scale", rc.freeze_scale);
    c.ript_contexts_per_task = r.get("contexts_per_task", c.ript_contexts_per_task);

    const auto& ev = section(root, "eval");
    c.eval_contexts_per_task = ev.get("contexts_per_task", c.eval_contexts_per_task);
    c.eval_episodes = ev.get("episodes", c.eval_episodes);

    const auto& ex = section(root, "experiment");
    if (auto s = ex.get_optional<std::string>("seeds")) c.seeds = detail::parse_list<std::uint64_t>(*s);
    if (auto s = ex.get_optional<std::string>("shots")) c.shots = detail::parse_list<int>(*s);
    if (auto s = ex.get_optional<std::string>("context_sizes")) c.context_sizes = detail::parse_list<int>(*s);
    if (auto s = ex.get_optional<std::string>("noise_scales")) c.noise_scales = detail::parse_list<double>(*s);
    c.dynamic_sampling = ex.get("dynamic_sampling", c.dynamic_sampling);
    c.log_wall_time = ex.get("log_wall_time", c.log_wall_time);
    c.transfer_mode = ex.get("transfer_mode", c.transfer_mode);
    if (auto o = ex.get_optional<std::string>("out")) c.out_dir = *o;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.ript.rejection = c.dynamic_sampling;
  c.ript.log_wall_time = c.log_wall_time;
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config: file not found: " + path.string());
  boost::property_tree::ptree root;
  try {
    boost::property_tree::read_ini(path.string(), root);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return config_from(root, {}, path.parent_path());
}

// Writes every field back out; load_config(written) reproduces the config.
inline void write_config(const std::filesystem::path& path, const ExperimentConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw ConfigError("config: cannot write " + path.string());
  os.precision(17);
  const auto& s = c.suite;
  os << "[suite]\nseed = " << s.seed << "\nn_tasks = " << s.n_tasks << "\ngrid_size = " << s.grid_size
     << "\nhorizon = " << s.horizon << "\nscenario_count = " << s.scenario_count
     << "\nfamilies = " << envsuite::families_str(s.families) << "\npairing = " << envsuite::pairing_name(s.pairing)
     << "\nagent_jitter = " << s.agent_jitter << "\nobject_jitter = " << s.object_jitter
     << "\nwall_density = " << s.wall_density << "\npoint_radius = " << s.point_radius
     << "\npoint_max_step = " << s.point_max_step << "\n\n";
  os << "[policy]\nhead = " << policy::head_name(c.policy.head) << "\nhidden = " << detail::list_str(c.policy.hidden)
     << "\nwindow = " << c.policy.window << "\ninit_scale = " << c.policy.init_scale << "\n\n";
  os << "[data]\ndemos_per_task = " << c.demos_per_task << "\ntrain_pool_per_task = " << c.train_pool_per_task
     << "\nexpert_detour = " << c.expert_detour << "\nexpert_action_noise = " << c.expert_action_noise
     << "\nsource_tasks = " << task_set_name(c.source.tasks)
     << "\nsource_scenario = " << c.source.scenario << "\ntarget_tasks = " << task_set_name(c.target.tasks)
     << "\ntarget_scenario = " << c.target.scenario << "\n\n";
  auto stage = [&](const char* name, const supervised::SupervisedConfig& sc) {
    os << "[" << name << "]\nsteps = " << sc.steps << "\nbatch = " << sc.batch_size << "\nlr = " << sc.lr
       << "\nloss = " << supervised::loss_name(sc.loss) << "\n";
  };
  stage("pretrain", c.pretrain);
  os << "\n";
  stage("sft", c.sft);
  os << "shots = " << c.sft_shots << "\n\n";
  os << "[fit_scale]\nenabled = " << c.fit_scale << "\nsteps = " << c.fit_scale_opts.steps
     << "\nlr = " << c.fit_scale_opts.lr << "\n\n";
  const auto& r = c.ript;
  os << "[ript]\nK = " << r.K << "\nB = " << r.B << "\nN = " << r.N << "\nM = " << r.M << "\nepsilon = " << r.epsilon
     << "\nminibatch = " << r.minibatch << "\nlr_trunk = " << r.lr_trunk << "\nlr_head = " << r.lr_head
     << "\nattempt_cap = " << r.attempt_cap << "\nratio = " << rl::ratio_mode_name(r.ratio)
     << "\nworkers = " << r.workers << "\neval_interval = " << r.eval_interval
     << "\ncheckpoint_interval = " << r.checkpoint_interval << "\nfreeze_scale = " << r.freeze_scale
     << "\ncontexts_per_task = " << c.ript_contexts_per_task << "\n\n";
  os << "[eval]\ncontexts_per_task = " << c.eval_contexts_per_task << "\nepisodes = " << c.eval_episodes << "\n\n";
  os << "[experiment]\nseeds = " << detail::list_str(c.seeds) << "\nshots = " << detail::list_str(c.shots)
     << "\ncontext_sizes = " << detail::list_str(c.context_sizes)
     << "\nnoise_scales = " << detail::list_str(c.noise_scales) << "\ndynamic_sampling = " << c.dynamic_sampling
     << "\nlog_wall_time = " << c.log_wall_time
     << "\ntransfer_mode = " << c.transfer_mode << "\nout = " << c.out_dir.string() << "\n";
}

}  // namespace ript::harness
