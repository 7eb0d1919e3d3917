// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ript/diffcore/checkpoint.hpp"
#include "ript/envsuite/dynamics.hpp"
#include "ript/envsuite/io.hpp"
#include "ript/envsuite/suite.hpp"
#include "ript/harness/config.hpp"
#include "ript/harness/evaluate.hpp"
#include "ript/rl/ript.hpp"
#include "ript/rl/suite_world.hpp"
#include "ript/supervised/supervised.hpp"

namespace ript::harness {

namespace fs = std::filesystem;
using envsuite::Demonstration;
using ordered_json = nlohmann::ordered_json;

// Per-seed stream keys.
enum SeedKey : std::uint64_t { kPolicyInit = 11, kPretrain = 12, kFewShot = 13, kSft = 14, kRipt = 15 };

inline std::uint64_t stage_seed(std::uint64_t seed, SeedKey key) { return derive_seed(seed, {key}); }

inline void write_training_log(const fs::path& path, const supervised::TrainingLog& log, bool wall_time) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  for (const auto& e : log.entries) {
    ordered_json j;
    j["step"] = e.step;
    j["loss"] = e.loss;
    j["wall_ms"] = wall_time ? e.wall_ms : 0.0;
    os << j.dump() << '\n';
  }
}

inline void write_fit_scale_log(const fs::path& path, const policy::FitScaleResult& r) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  for (std::size_t i = 0; i < r.nll.size(); ++i) {
    ordered_json j;
    j["step"] = i;
    j["nll"] = r.nll[i];
    os << j.dump() << '\n';
  }
}

inline void save_policy(const fs::path& path, const policy::Policy& p, const std::string& stage, std::uint64_t seed) {
  auto c = p.to_checkpoint();
  c.meta["stage"] = stage;
  c.meta["seed"] = std::to_string(seed);
  diffcore::save_checkpoint(path, c);
}

inline policy::Policy load_policy(const fs::path& path) {
  return policy::Policy::from_checkpoint(diffcore::load_checkpoint(path));
}

// Suite, contexts and expert data for one experiment configuration.
// Everything here depends only on the suite config, never on the run seed.
class Bench {
 public:
  explicit Bench(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    suite_ = envsuite::make_suite(cfg_.suite);
    if (cfg_.source.scenario >= cfg_.suite.scenario_count || cfg_.target.scenario >= cfg_.suite.scenario_count)
      throw ConfigError("config: variant scenario outside the suite's scenario count");
  }

  const ExperimentConfig& config() const { return cfg_; }
  const envsuite::Suite& suite() const { return suite_; }

  std::vector<const envsuite::TaskSpec*> tasks(const Variant& v) const {
    std::vector<const envsuite::TaskSpec*> out;
    for (const auto& t : suite_.tasks)
      if (v.contains(t.task_id, t.scenario_id)) out.push_back(&t);
    if (out.empty()) throw ConfigError("config: variant selects no tasks");
    return out;
  }

  const std::vector<Context>& train_pool(const envsuite::TaskSpec& t) {
    auto key = std::make_pair(t.task_id, t.scenario_id);
    auto it = pool_.find(key);
    if (it == pool_.end())
      it = pool_.emplace(key, envsuite::sample_contexts(suite_, t, cfg_.train_pool_per_task,
                                                        envsuite::ContextStream::train))
               .first;
    return it->second;
  }

  // Held-out contexts: test stream, with every train-pool state excluded.
  std::vector<Context> test_contexts(const Variant& v) {
    std::vector<Context> out;
    for (const auto* t : tasks(v)) {
      auto cs = envsuite::sample_contexts(suite_, *t, cfg_.eval_contexts_per_task, envsuite::ContextStream::test,
                                          train_pool(*t));
      out.insert(out.end(), cs.begin(), cs.end());
    }
    return out;
  }

  // Expert demonstrations on the first demos_per_task pool contexts of each task.
  std::vector<Demonstration> demos(const Variant& v) {
    std::vector<Demonstration> out;
    envsuite::ExpertOptions opt{cfg_.expert_detour, cfg_.expert_action_noise, cfg_.suite.seed};
    for (const auto* t : tasks(v)) {
      const auto& pool = train_pool(*t);
      for (int i = 0; i < cfg_.demos_per_task; ++i) out.push_back(envsuite::scripted_expert(*t, pool[i], opt));
    }
    return out;
  }

  // Demos for both variants, source first, without duplicates.
  std::vector<Demonstration> all_demos() {
    auto out = demos(cfg_.source);
    if (!(cfg_.target == cfg_.source)) {
      auto more = demos(cfg_.target);
      out.insert(out.end(), more.begin(), more.end());
    }
    return out;
  }

  policy::Policy fresh_policy(std::uint64_t seed) const {
    policy::PolicyConfig pc;
    pc.head = cfg_.policy.head;
    pc.obs_dim = envsuite::observation_size(cfg_.suite);
    pc.n_goals = static_cast<std::size_t>(suite_.n_goals());
    pc.action_dim = suite_.discrete() ? envsuite::kGridActions : envsuite::kPointDims;
    pc.window = cfg_.policy.window;
    pc.hidden = cfg_.policy.hidden;
    pc.init_scale = cfg_.policy.init_scale;
    pc.seed = stage_seed(seed, kPolicyInit);
    return policy::Policy(pc);
  }

  rl::SuiteWorld world(double noise_scale = 0.0) {
    rl::SuiteWorld w{&suite_, noise_scale, {}};
    if (noise_scale > 0.0)
      for (const auto& t : suite_.tasks) w.base[{t.task_id, t.scenario_id}] = envsuite::position_std(train_pool(t));
    return w;
  }

  // Demos of one variant out of a mixed list, in order.
  static std::vector<Demonstration> select(const std::vector<Demonstration>& demos, const Variant& v) {
    std::vector<Demonstration> out;
    for (const auto& d : demos)
      if (v.contains(d.context.task_id, d.context.scenario_id)) out.push_back(d);
    return out;
  }

  supervised::TrainingLog pretrain(policy::Policy& p, const std::vector<Demonstration>& demos, std::uint64_t seed) const {
    auto data = supervised::DemoDataset::make(select(demos, cfg_.source), supervised::Provenance::pretrain);
    if (cfg_.pretrain.steps == 0) return {};
    auto sc = cfg_.pretrain;
    sc.seed = stage_seed(seed, kPretrain);
    return supervised::train_supervised(p, data, sc);
  }

  // Target demos, cut to `shots` per task when 0 < shots < demos_per_task.
  supervised::DemoDataset sft_dataset(const std::vector<Demonstration>& demos, int shots, std::uint64_t seed) const {
    auto data = supervised::DemoDataset::make(select(demos, cfg_.target), supervised::Provenance::sft);
    if (data.demos.empty()) throw ConfigError("sft: no demonstrations for the target variant");
    if (shots > 0 && shots < cfg_.demos_per_task) return supervised::few_shot_subset(data, shots, stage_seed(seed, kFewShot));
    return data;
  }

  struct SftOutcome {
    supervised::TrainingLog log;
    std::optional<policy::FitScaleResult> scale;
  };

  // SFT, then the scale-head fit for regression heads.
  SftOutcome sft(policy::Policy& p, const supervised::DemoDataset& data, std::uint64_t seed) const {
    SftOutcome out;
    auto sc = cfg_.sft;
    sc.seed = stage_seed(seed, kSft);
    out.log = supervised::train_supervised(p, data, sc);
    if (p.regression() && cfg_.fit_scale) out.scale = fit_scale(p, data);
    return out;
  }

  policy::FitScaleResult fit_scale(policy::Policy& p, const supervised::DemoDataset& data) const {
    auto pairs = supervised::flatten(p, data.demos);
    std::vector<std::vector<double>> enc;
    std::vector<envsuite::Action> act;
    for (auto& pr : pairs) {
      enc.push_back(std::move(pr.encoding));
      act.push_back(std::move(pr.action));
    }
    return policy::fit_scale_head(p, enc, act, cfg_.fit_scale_opts);
  }

  // Rollout contexts: the SFT demo contexts, topped up (or cut) to
  // `per_task` per task from the train pool. Added contexts carry no actions.
  std::vector<Context> ript_contexts(const supervised::DemoDataset& data, int per_task) {
    auto base = envsuite::extract_contexts(data.demos);
    if (per_task <= 0) return base;
    std::vector<Context> out;
    for (const auto* t : tasks(cfg_.target)) {
      std::vector<Context> mine;
      for (const auto& c : base)
        if (c.task_id == t->task_id && c.scenario_id == t->scenario_id && static_cast<int>(mine.size()) < per_task)
          mine.push_back(c);
      for (const auto& c : train_pool(*t)) {
        if (static_cast<int>(mine.size()) >= per_task) break;
        bool have = false;
        for (const auto& m : mine) have = have || m.initial == c.initial;
        if (!have) mine.push_back(c);
      }
      out.insert(out.end(), mine.begin(), mine.end());
    }
    return out;
  }

  // Stage 3. Metrics go to `metrics_path` one line per outer step; with a
  // checkpoint interval, snapshots land in `ckpt_dir`.
  rl::TrainResult ript(policy::Policy& p, const std::vector<Context>& contexts, std::uint64_t seed,
                       const fs::path& metrics_path, const fs::path& ckpt_dir = {}, double noise_scale = 0.0,
                       std::optional<bool> rejection = std::nullopt) {
    auto rc = cfg_.ript;
    rc.seed = stage_seed(seed, kRipt);
    if (rejection) rc.rejection = *rejection;
    auto w = world(noise_scale);
    if (metrics_path.has_parent_path()) fs::create_directories(metrics_path.parent_path());
    std::ofstream metrics(metrics_path);
    rl::TrainHooks hooks;
    std::vector<Context> held_out;
    if (rc.eval_interval > 0) {
      held_out = test_contexts(cfg_.target);
      auto plain = world();
      hooks.evaluate = [&, plain](const policy::Policy& cur, int) {
        return evaluate(cur, plain, held_out, cfg_.eval_episodes).mean_sr;
      };
    }
    hooks.on_step = [&](const policy::Policy& cur, const rl::StepMetrics& m) {
      metrics << rl::metrics_json(m).dump() << '\n';
      metrics.flush();
      if (rc.checkpoint_interval > 0 && !ckpt_dir.empty() && (m.step + 1) % rc.checkpoint_interval == 0)
        save_policy(ckpt_dir / ("ript_step_" + std::to_string(m.step + 1) + ".ckpt"), cur, "ript", seed);
    };
    return rl::ript_train(p, w, contexts, rc, hooks);
  }

  EvalReport eval(const policy::Policy& p, const std::string& label, std::uint64_t seed) {
    auto held_out = test_contexts(cfg_.target);
    return evaluate(p, world(), held_out, cfg_.eval_episodes, label, seed);
  }

 private:
  ExperimentConfig cfg_;
  envsuite::Suite suite_;
  std::map<std::pair<int, int>, std::vector<Context>> pool_;
};

struct RunSummary {
  std::uint64_t seed = 0;
  double sr_pretrain = 0.0;
  double sr_sft = 0.0;
  double sr_ript = 0.0;
  std::string ript_status;
  int ript_steps = 0;
};

inline ordered_json summary_json(const RunSummary& s) {
  ordered_json j;
  j["seed"] = s.seed;
  j["sr_pretrain"] = s.sr_pretrain;
  j["sr_sft"] = s.sr_sft;
  j["sr_ript"] = s.sr_ript;
  j["ript_status"] = s.ript_status;
  j["ript_steps"] = s.ript_steps;
  return j;
}

inline void write_eval(const fs::path& dir, const std::string& stage, const EvalReport& r) {
  write_episode_log(dir / ("eval_" + stage + ".jsonl"), r);
  std::ofstream(dir / ("eval_" + stage + ".json")) << report_json(r).dump(2) << '\n';
}

// Stages 1 -> 2 -> 3 for one seed, evaluating at every stage boundary.
// Artifacts land in `dir`; a failing stage leaves the earlier ones in place.
inline RunSummary run_seed(Bench& bench, std::uint64_t seed, const fs::path& dir,
                           const std::vector<Demonstration>& demos) {
  const auto& cfg = bench.config();
  fs::create_directories(dir / "checkpoints");
  RunSummary s;
  s.seed = seed;
  auto p = bench.fresh_policy(seed);
  write_training_log(dir / "pretrain_log.jsonl", bench.pretrain(p, demos, seed), cfg.log_wall_time);
  save_policy(dir / "checkpoints" / "pretrain.ckpt", p, "pretrain", seed);
  auto rep = bench.eval(p, "pretrain", seed);
  write_eval(dir, "pretrain", rep);
  s.sr_pretrain = rep.mean_sr;

  auto data = bench.sft_dataset(demos, cfg.sft_shots, seed);
  auto sft = bench.sft(p, data, seed);
  write_training_log(dir / "sft_log.jsonl", sft.log, cfg.log_wall_time);
  if (sft.scale) write_fit_scale_log(dir / "fit_scale_log.jsonl", *sft.scale);
  save_policy(dir / "checkpoints" / "sft.ckpt", p, "sft", seed);
  rep = bench.eval(p, "sft", seed);
  write_eval(dir, "sft", rep);
  s.sr_sft = rep.mean_sr;

  auto contexts = bench.ript_contexts(data, cfg.ript_contexts_per_task);
  auto res = bench.ript(p, contexts, seed, dir / "ript_metrics.jsonl", dir / "checkpoints");
  save_policy(dir / "checkpoints" / "ript.ckpt", p, "ript", seed);
  rep = bench.eval(p, "ript", seed);
  write_eval(dir, "ript", rep);
  s.sr_ript = rep.mean_sr;
  s.ript_status = rl::train_status_name(res.status);
  s.ript_steps = static_cast<int>(res.metrics.size());
  std::ofstream(dir / "summary.json") << summary_json(s).dump() << '\n';
  return s;
}

// Full pipeline for every configured seed. Writes the config, the suite
// file, the demos, per-seed artifacts and summary.jsonl under `out`.
inline std::vector<RunSummary> run_pipeline(const ExperimentConfig& cfg, const fs::path& out) {
  Bench bench(cfg);
  fs::create_directories(out);
  write_config(out / "config.ini", cfg);
  envsuite::write_suite_file(out / "suite.ini", cfg.suite);
  auto demos = bench.all_demos();
  envsuite::write_demos(out / "demos.jsonl", demos);
  std::vector<RunSummary> all;
  std::ofstream summary(out / "summary.jsonl");
  for (auto seed : cfg.seeds) {
    all.push_back(run_seed(bench, seed, out / ("seed_" + std::to_string(seed)), demos));
    summary << summary_json(all.back()).dump() << '\n';
    summary.flush();
  }
  return all;
}

}  // namespace ript::harness
