// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ript/harness/pipeline.hpp"

namespace ript::harness {

inline double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// Sample standard deviation over seeds; 0 for a single seed.
inline double std_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double m = mean_of(xs), v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return std::sqrt(v / static_cast<double>(xs.size() - 1));
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// SFT and RIPT results for one cell of a study, one entry per seed.
struct StudyCell {
  std::vector<double> sft;
  std::vector<double> ript;
  std::map<int, std::vector<double>> sft_task;
  std::map<int, std::vector<double>> ript_task;
  std::vector<int> zero_adv;  // zero-advantage samples admitted, summed over steps
};

namespace detail {

inline void record(StudyCell& c, const EvalReport& sft, const EvalReport& ript, const rl::TrainResult& tr) {
  c.sft.push_back(sft.mean_sr);
  c.ript.push_back(ript.mean_sr);
  for (const auto& [t, v] : sft.task_sr) c.sft_task[t].push_back(v);
  for (const auto& [t, v] : ript.task_sr) c.ript_task[t].push_back(v);
  int z = 0;
  for (const auto& m : tr.metrics) z += m.zero_advantage_samples;
  c.zero_adv.push_back(z);
}

inline std::ofstream open_csv(const fs::path& path, const std::string& header) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  os << header << '\n';
  return os;
}

struct SftStart {
  policy::Policy policy;
  supervised::DemoDataset data;
  EvalReport report;
};

// Pretrained policy -> SFT on `shots` per task -> evaluated.
inline SftStart sft_start(Bench& bench, const policy::Policy& pretrained, const std::vector<Demonstration>& demos,
                          int shots, std::uint64_t seed, const fs::path& dir) {
  SftStart s{pretrained, bench.sft_dataset(demos, shots, seed), {}};
  auto out = bench.sft(s.policy, s.data, seed);
  write_training_log(dir / "sft_log.jsonl", out.log, bench.config().log_wall_time);
  if (out.scale) write_fit_scale_log(dir / "fit_scale_log.jsonl", *out.scale);
  save_policy(dir / "sft.ckpt", s.policy, "sft", seed);
  s.report = bench.eval(s.policy, "sft", seed);
  write_eval(dir, "sft", s.report);
  return s;
}

inline policy::Policy pretrained(Bench& bench, const std::vector<Demonstration>& demos, std::uint64_t seed,
                                 const fs::path& dir) {
  auto p = bench.fresh_policy(seed);
  write_training_log(dir / "pretrain_log.jsonl", bench.pretrain(p, demos, seed), bench.config().log_wall_time);
  save_policy(dir / "pretrain.ckpt", p, "pretrain", seed);
  return p;
}

// RIPT from an SFT start; returns the evaluated result.
inline EvalReport ript_from(Bench& bench, const SftStart& start, const std::vector<Context>& contexts,
                            std::uint64_t seed, const fs::path& dir, double noise = 0.0,
                            std::optional<bool> rejection = std::nullopt, rl::TrainResult* result = nullptr) {
  policy::Policy p = start.policy;
  auto tr = bench.ript(p, contexts, seed, dir / "ript_metrics.jsonl", {}, noise, rejection);
  save_policy(dir / "ript.ckpt", p, "ript", seed);
  auto rep = bench.eval(p, "ript", seed);
  write_eval(dir, "ript", rep);
  if (result) *result = std::move(tr);
  return rep;
}

}  // namespace detail

// Shots x seeds: one pretraining per seed, then SFT and SFT+RIPT per shots
// value from that shared start.
inline std::map<int, StudyCell> shots_study(Bench& bench, const std::vector<int>& shots, const fs::path& out) {
  const auto& cfg = bench.config();
  for (int k : shots)
    if (k < 1 || k > cfg.demos_per_task)
      throw ConfigError("sweep: shots " + std::to_string(k) + " outside [1, " + std::to_string(cfg.demos_per_task) + "]");
  auto demos = bench.all_demos();
  std::map<int, StudyCell> cells;
  for (auto seed : cfg.seeds) {
    fs::path sdir = out / ("seed_" + std::to_string(seed));
    auto base = detail::pretrained(bench, demos, seed, sdir);
    for (int k : shots) {
      fs::path dir = sdir / ("shots_" + std::to_string(k));
      auto start = detail::sft_start(bench, base, demos, k, seed, dir);
      rl::TrainResult tr;
      auto rep = detail::ript_from(bench, start, bench.ript_contexts(start.data, cfg.ript_contexts_per_task), seed,
                                   dir, 0.0, std::nullopt, &tr);
      detail::record(cells[k], start.report, rep, tr);
    }
  }
  return cells;
}

// CSV: shots,sft_sr_mean,sft_sr_std,ript_sr_mean,ript_sr_std
inline std::map<int, StudyCell> few_shot_sweep(const ExperimentConfig& cfg, const std::vector<int>& shots,
                                          const fs::path& out) {
  Bench bench(cfg);
  auto cells = shots_study(bench, shots, out);
  auto csv = detail::open_csv(out / "few_shot.csv", "shots,sft_sr_mean,sft_sr_std,ript_sr_mean,ript_sr_std");
  for (const auto& [k, c] : cells)
    csv << k << ',' << fmt(mean_of(c.sft)) << ',' << fmt(std_of(c.sft)) << ',' << fmt(mean_of(c.ript)) << ','
        << fmt(std_of(c.ript)) << '\n';
  return cells;
}

// Source and target variants for a transfer study: cross_scenario pretrains
// on scenario 0 and adapts every task to scenario 1; cross_goal pretrains on
// even tasks and adapts to the odd partner sharing each layout.
inline ExperimentConfig transfer_config(ExperimentConfig cfg, const std::string& mode) {
  if (mode == "cross_scenario") {
    cfg.suite.scenario_count = std::max(cfg.suite.scenario_count, 2);
    cfg.suite.pairing = envsuite::Pairing::none;
    cfg.source = {Variant::Tasks::all, 0};
    cfg.target = {Variant::Tasks::all, 1};
  } else if (mode == "cross_goal") {
    cfg.suite.pairing = envsuite::Pairing::cross_goal;
    cfg.source = {Variant::Tasks::even, 0};
    cfg.target = {Variant::Tasks::odd, 0};
  } else {
    throw ConfigError("transfer: unknown mode '" + mode + "'");
  }
  cfg.transfer_mode = mode;
  return cfg;
}

// CSV: shots,pair,sft_sr_mean,sft_sr_std,ript_sr_mean,ript_sr_std with one
// row per target task followed by a "mean" row per shots value.
inline std::map<int, StudyCell> transfer_experiment(const ExperimentConfig& base, const std::string& mode,
                                               const std::vector<int>& shots, const fs::path& out) {
  Bench bench(transfer_config(base, mode));
  auto cells = shots_study(bench, shots, out);
  auto csv = detail::open_csv(out / ("transfer_" + mode + ".csv"),
                              "shots,pair,sft_sr_mean,sft_sr_std,ript_sr_mean,ript_sr_std");
  for (const auto& [k, c] : cells) {
    for (const auto& [t, v] : c.sft_task)
      csv << k << ',' << t << ',' << fmt(mean_of(v)) << ',' << fmt(std_of(v)) << ','
          << fmt(mean_of(c.ript_task.at(t))) << ',' << fmt(std_of(c.ript_task.at(t))) << '\n';
    csv << k << ",mean," << fmt(mean_of(c.sft)) << ',' << fmt(std_of(c.sft)) << ',' << fmt(mean_of(c.ript)) << ','
        << fmt(std_of(c.ript)) << '\n';
  }
  return cells;
}

// Keys of an ablation table: "on"/"off", a context count, or a noise scale.
using AblationTable = std::map<std::string, StudyCell>;

// Rejection on vs off from the same SFT checkpoint, same seeds and budget.
// CSV: variant,sft_sr_mean,ript_sr_mean,ript_sr_std,zero_adv_samples
inline AblationTable ablation_dynamic_sampling(const ExperimentConfig& cfg, const fs::path& out) {
  Bench bench(cfg);
  auto demos = bench.all_demos();
  AblationTable table;
  for (auto seed : cfg.seeds) {
    fs::path sdir = out / ("seed_" + std::to_string(seed));
    auto start = detail::sft_start(bench, detail::pretrained(bench, demos, seed, sdir), demos, 1, seed, sdir);
    auto contexts = bench.ript_contexts(start.data, cfg.ript_contexts_per_task);
    for (bool on : {true, false}) {
      std::string key = on ? "on" : "off";
      rl::TrainResult tr;
      auto rep = detail::ript_from(bench, start, contexts, seed, sdir / ("rejection_" + key), 0.0, on, &tr);
      detail::record(table[key], start.report, rep, tr);
    }
  }
  auto csv = detail::open_csv(out / "dynamic_sampling.csv", "variant,sft_sr_mean,ript_sr_mean,ript_sr_std,zero_adv_samples");
  for (const char* key : {"on", "off"}) {
    const auto& c = table[key];
    int z = 0;
    for (int v : c.zero_adv) z += v;
    csv << key << ',' << fmt(mean_of(c.sft)) << ',' << fmt(mean_of(c.ript)) << ',' << fmt(std_of(c.ript)) << ',' << z
        << '\n';
  }
  return table;
}

// Fixed 1-shot SFT start per seed; RIPT with |D_context| = size per task.
// CSV: contexts_per_task,sft_sr_mean,ript_sr_mean,ript_sr_std
inline AblationTable ablation_context_size(const ExperimentConfig& cfg, const std::vector<int>& sizes,
                                           const fs::path& out) {
  Bench bench(cfg);
  auto demos = bench.all_demos();
  AblationTable table;
  for (auto seed : cfg.seeds) {
    fs::path sdir = out / ("seed_" + std::to_string(seed));
    auto start = detail::sft_start(bench, detail::pretrained(bench, demos, seed, sdir), demos, 1, seed, sdir);
    for (int size : sizes) {
      if (size < 1) throw ConfigError("ablation: context size must be >= 1");
      rl::TrainResult tr;
      auto rep = detail::ript_from(bench, start, bench.ript_contexts(start.data, size), seed,
                                   sdir / ("contexts_" + std::to_string(size)), 0.0, std::nullopt, &tr);
      detail::record(table[std::to_string(size)], start.report, rep, tr);
    }
  }
  auto csv = detail::open_csv(out / "context_size.csv", "contexts_per_task,sft_sr_mean,ript_sr_mean,ript_sr_std");
  for (int size : sizes) {
    const auto& c = table[std::to_string(size)];
    csv << size << ',' << fmt(mean_of(c.sft)) << ',' << fmt(mean_of(c.ript)) << ',' << fmt(std_of(c.ript)) << '\n';
  }
  return table;
}

inline std::string scale_key(double s) {
  std::ostringstream os;
  os << s;
  return os.str();
}

// Setup noise: each group member starts from its own perturbation of the
// sampled context, with per-axis std = scale * the train pool's spread.
// Starts from 1-shot SFT like the context-size study.
// CSV: scale,sft_sr_mean,ript_sr_mean,ript_sr_std
inline AblationTable ablation_noise(const ExperimentConfig& cfg, const std::vector<double>& scales,
                                    const fs::path& out) {
  Bench bench(cfg);
  auto demos = bench.all_demos();
  AblationTable table;
  for (auto seed : cfg.seeds) {
    fs::path sdir = out / ("seed_" + std::to_string(seed));
    auto start = detail::sft_start(bench, detail::pretrained(bench, demos, seed, sdir), demos, 1, seed, sdir);
    auto contexts = bench.ript_contexts(start.data, cfg.ript_contexts_per_task);
    for (double s : scales) {
      if (s < 0.0) throw ConfigError("ablation: noise scale must be >= 0");
      rl::TrainResult tr;
      auto rep = detail::ript_from(bench, start, contexts, seed, sdir / ("noise_" + scale_key(s)), s, std::nullopt, &tr);
      detail::record(table[scale_key(s)], start.report, rep, tr);
    }
  }
  auto csv = detail::open_csv(out / "noise.csv", "scale,sft_sr_mean,ript_sr_mean,ript_sr_std");
  for (double s : scales) {
    const auto& c = table[scale_key(s)];
    csv << scale_key(s) << ',' << fmt(mean_of(c.sft)) << ',' << fmt(mean_of(c.ript)) << ',' << fmt(std_of(c.ript))
        << '\n';
  }
  return table;
}

}  // namespace ript::harness
