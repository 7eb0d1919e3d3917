// SPDX-License-Identifier: Apache-2.0
// ript: demo generation, the three training stages, evaluation and the
// experiment sweeps.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ript/harness/experiments.hpp"

namespace fs = std::filesystem;
using namespace ript;
using namespace ript::harness;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ExperimentConfig load(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.seed) cfg.seeds = {*g.seed};
  if (!g.out.empty()) cfg.out_dir = g.out;
  cfg.validate();
  return cfg;
}

std::vector<Demonstration> demos_for(Bench& bench, const std::string& path) {
  if (path.empty()) return bench.all_demos();
  return envsuite::read_demos(path);
}

void print_summary(const std::vector<RunSummary>& runs) {
  for (const auto& r : runs) std::cout << summary_json(r).dump() << '\n';
}

template <typename Table>
void print_cells(const Table& t) {
  for (const auto& [key, c] : t)
    std::cout << key << ": sft " << fmt(mean_of(c.sft)) << " ript " << fmt(mean_of(c.ript)) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ript: imitation pretraining, fine-tuning and interactive RL post-training on toy suites"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "experiment config (INI)");
  app.add_option("--seed", g.seed, "run a single seed instead of the config's list");
  app.add_option("--out", g.out, "output directory");

  std::string demos_path, ckpt_path, mode = "few_shot", kind;
  std::optional<int> shots;
  std::vector<int> shot_list;

  auto* gen = app.add_subcommand("gen-demos", "generate the suite file and expert demonstrations");
  auto* pre = app.add_subcommand("pretrain", "stage 1: imitation on source-variant demos");
  auto* fit = app.add_subcommand("fit-scale", "fit the regression scale head with trunk and mean frozen");
  auto* sft = app.add_subcommand("sft", "stage 2: imitation on k-shot target-variant demos");
  auto* rip = app.add_subcommand("ript", "stage 3: interactive post-training");
  auto* ev = app.add_subcommand("eval", "greedy evaluation on held-out target contexts");
  auto* sweep = app.add_subcommand("sweep", "few-shot or transfer sweep over shots");
  auto* abl = app.add_subcommand("ablate", "dynamic sampling, context size or noise ablation");
  auto* pipe = app.add_subcommand("pipeline", "all stages for every seed");

  for (auto* sc : {pre, fit, sft, rip})
    sc->add_option("--demos", demos_path, "demonstration JSONL (default: regenerate)");
  for (auto* sc : {fit, sft, rip, ev}) sc->add_option("--checkpoint", ckpt_path, "input policy checkpoint");
  fit->get_option("--checkpoint")->required();
  rip->get_option("--checkpoint")->required();
  ev->get_option("--checkpoint")->required();
  for (auto* sc : {fit, sft, rip}) sc->add_option("--shots", shots, "demos per task (default: config)");
  sweep->add_option("--mode", mode, "few_shot, cross_scenario or cross_goal")
      ->check(CLI::IsMember({"few_shot", "cross_scenario", "cross_goal"}));
  sweep->add_option("--shots", shot_list, "shots values (default: config)");
  abl->add_option("--kind", kind, "dynamic_sampling, context_size or noise")
      ->required()
      ->check(CLI::IsMember({"dynamic_sampling", "context_size", "noise"}));

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = load(g);
    fs::path out = cfg.out_dir;
    std::uint64_t seed = cfg.seeds.front();
    fs::create_directories(out);

    if (*gen) {
      Bench bench(cfg);
      envsuite::write_suite_file(out / "suite.ini", cfg.suite);
      auto demos = bench.all_demos();
      envsuite::write_demos(out / "demos.jsonl", demos);
      std::cout << "wrote " << demos.size() << " demos to " << (out / "demos.jsonl").string() << '\n';
    } else if (*pre) {
      Bench bench(cfg);
      auto p = bench.fresh_policy(seed);
      auto log = bench.pretrain(p, demos_for(bench, demos_path), seed);
      write_training_log(out / "pretrain_log.jsonl", log, cfg.log_wall_time);
      save_policy(out / "pretrain.ckpt", p, "pretrain", seed);
      std::cout << "pretrain: loss " << log.initial_loss << " -> " << log.final_loss << '\n';
    } else if (*fit) {
      Bench bench(cfg);
      auto p = load_policy(ckpt_path);
      auto data = bench.sft_dataset(demos_for(bench, demos_path), shots.value_or(cfg.sft_shots), seed);
      auto r = bench.fit_scale(p, data);
      write_fit_scale_log(out / "fit_scale_log.jsonl", r);
      save_policy(out / "fit_scale.ckpt", p, "fit_scale", seed);
      std::cout << "fit-scale: nll " << r.initial_nll << " -> " << r.final_nll << '\n';
    } else if (*sft) {
      Bench bench(cfg);
      auto p = ckpt_path.empty() ? bench.fresh_policy(seed) : load_policy(ckpt_path);
      auto data = bench.sft_dataset(demos_for(bench, demos_path), shots.value_or(cfg.sft_shots), seed);
      auto res = bench.sft(p, data, seed);
      write_training_log(out / "sft_log.jsonl", res.log, cfg.log_wall_time);
      if (res.scale) write_fit_scale_log(out / "fit_scale_log.jsonl", *res.scale);
      save_policy(out / "sft.ckpt", p, "sft", seed);
      std::cout << "sft: loss " << res.log.initial_loss << " -> " << res.log.final_loss << '\n';
    } else if (*rip) {
      Bench bench(cfg);
      auto p = load_policy(ckpt_path);
      auto data = bench.sft_dataset(demos_for(bench, demos_path), shots.value_or(cfg.sft_shots), seed);
      auto res = bench.ript(p, bench.ript_contexts(data, cfg.ript_contexts_per_task), seed,
                            out / "ript_metrics.jsonl", out);
      save_policy(out / "ript.ckpt", p, "ript", seed);
      std::cout << "ript: " << res.metrics.size() << " steps, " << rl::train_status_name(res.status) << '\n';
    } else if (*ev) {
      Bench bench(cfg);
      auto rep = bench.eval(load_policy(ckpt_path), ckpt_path, seed);
      write_eval(out, "checkpoint", rep);
      std::cout << report_json(rep).dump() << '\n';
    } else if (*sweep) {
      auto list = shot_list.empty() ? cfg.shots : shot_list;
      if (mode == "few_shot")
        print_cells(few_shot_sweep(cfg, list, out));
      else
        print_cells(transfer_experiment(cfg, mode, list, out));
    } else if (*abl) {
      if (kind == "dynamic_sampling") print_cells(ablation_dynamic_sampling(cfg, out));
      if (kind == "context_size") print_cells(ablation_context_size(cfg, cfg.context_sizes, out));
      if (kind == "noise") print_cells(ablation_noise(cfg, cfg.noise_scales, out));
    } else if (*pipe) {
      print_summary(run_pipeline(cfg, out));
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
