// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ript/diffcore/optimizer.hpp"
#include "ript/envsuite/types.hpp"
#include "ript/policy/queries.hpp"
#include "ript/random.hpp"

namespace ript::supervised {

using envsuite::Action;
using envsuite::Demonstration;
using diffcore::Var;
using policy::Policy;

enum class Provenance { pretrain, sft };
enum class LossKind { nll, l1, mse };

inline const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::nll: return "nll";
    case LossKind::l1: return "l1";
    case LossKind::mse: return "mse";
  }
  return "?";
}

inline LossKind parse_loss(const std::string& s) {
  if (s == "nll") return LossKind::nll;
  if (s == "l1") return LossKind::l1;
  if (s == "mse") return LossKind::mse;
  throw std::invalid_argument("unknown loss kind '" + s + "'");
}

struct DemoDataset {
  std::vector<Demonstration> demos;
  Provenance provenance = Provenance::sft;
  std::optional<int> shots_per_task;

  // Demonstrations grouped by task id, original order kept within a task.
  std::map<int, std::vector<std::size_t>> by_task() const {
    std::map<int, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < demos.size(); ++i) out[demos[i].context.task_id].push_back(i);
    return out;
  }

  static DemoDataset make(std::vector<Demonstration> demos, Provenance prov, std::optional<int> shots = std::nullopt) {
    DemoDataset d{std::move(demos), prov, shots};
    if (shots) {
      for (const auto& [task, idx] : d.by_task())
        if (static_cast<int>(idx.size()) != *shots)
          throw std::invalid_argument("dataset: task " + std::to_string(task) + " has " + std::to_string(idx.size()) +
                                      " demos, expected " + std::to_string(*shots));
    }
    return d;
  }
};

struct SupervisedConfig {
  int steps = 500;
  int batch_size = 64;
  double lr = 1e-3;
  LossKind loss = LossKind::nll;
  std::uint64_t seed = 0;
};

// One (encoding, action) training pair.
struct Pair {
  std::vector<double> encoding;
  Action action;
};

inline void check_compatible(const Policy& p, LossKind kind) {
  if (kind != LossKind::nll && !p.regression())
    throw std::invalid_argument(std::string("imitation: loss '") + loss_name(kind) +
                                "' needs a regression head, policy is tokenized");
}

// Flattens demonstrations into per-step pairs; the goal slot is the task id.
inline std::vector<Pair> flatten(const Policy& p, std::span<const Demonstration> demos) {
  std::vector<Pair> out;
  for (const auto& d : demos) {
    auto encs = policy::episode_encodings(p, d.context.task_id, d.observations, d.actions);
    for (std::size_t t = 0; t < encs.size(); ++t) out.push_back({std::move(encs[t]), d.actions[t]});
  }
  return out;
}

namespace detail {
template <typename P>
Var loss_graph(diffcore::Graph& g, P& p, std::span<const Pair> batch, LossKind kind) {
  if (batch.empty()) throw std::invalid_argument("imitation: empty batch");
  check_compatible(p, kind);
  std::size_t w = p.encoder().size();
  diffcore::Tensor x = diffcore::Tensor::zeros({batch.size(), w});
  std::vector<Action> actions;
  actions.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].encoding.size() != w) throw std::invalid_argument("imitation: encoding width mismatch");
    std::copy(batch[i].encoding.begin(), batch[i].encoding.end(),
              x.values.begin() + static_cast<std::ptrdiff_t>(i * w));
    actions.push_back(batch[i].action);
  }
  Var xv = g.input(std::move(x));
  if (kind == LossKind::nll) return g.neg(g.mean(p.log_probs(g, xv, actions)));
  std::size_t d = p.config().action_dim;
  diffcore::Tensor target = diffcore::Tensor::zeros({batch.size(), d});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (actions[i].values.size() != d) throw std::invalid_argument("imitation: action dimension mismatch");
    std::copy(actions[i].values.begin(), actions[i].values.end(),
              target.values.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  Var diff = g.sub(g.input(std::move(target)), p.build(g, xv).mean);
  return g.mean(kind == LossKind::l1 ? g.abs(diff) : g.square(diff));
}
}  // namespace detail

// nll: mean of -log pi(a|x). l1 / mse: mean over pairs and action dims of
// |a - mu| or (a - mu)^2. Trainable graph; call g.backward() for gradients.
inline Var imitation_loss(diffcore::Graph& g, Policy& p, std::span<const Pair> batch, LossKind kind) {
  return detail::loss_graph(g, p, batch, kind);
}

inline double imitation_loss_value(const Policy& p, std::span<const Pair> batch, LossKind kind) {
  diffcore::Graph g;
  return g.value(detail::loss_graph(g, p, batch, kind)).item();
}

struct LogEntry {
  int step = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainingLog {
  std::vector<LogEntry> entries;
  double initial_loss = 0.0;  // full training set, before the first update
  double final_loss = 0.0;    // full training set, after the last update
};

// Minibatch Adam on flattened pairs, reshuffled each epoch; fixed step budget.
inline TrainingLog train_supervised(Policy& p, const DemoDataset& data, const SupervisedConfig& cfg) {
  if (data.demos.empty()) throw std::invalid_argument("train_supervised: empty dataset");
  if (cfg.batch_size < 1 || cfg.steps < 0 || !(cfg.lr > 0.0))
    throw std::invalid_argument("train_supervised: invalid config");
  check_compatible(p, cfg.loss);
  auto pairs = flatten(p, data.demos);
  if (pairs.empty()) throw std::invalid_argument("train_supervised: demonstrations contain no steps");

  std::vector<diffcore::Tensor*> params = p.trunk_parameters();
  for (auto* t : p.head_parameters()) params.push_back(t);
  if (cfg.loss == LossKind::nll)
    for (auto* t : p.scale_parameters()) params.push_back(t);
  auto opt = diffcore::OptimizerState::adam(cfg.lr);

  TrainingLog log;
  log.initial_loss = imitation_loss_value(p, pairs, cfg.loss);
  std::vector<std::size_t> order(pairs.size());
  std::size_t cursor = order.size();
  int epoch = 0;
  auto start = std::chrono::steady_clock::now();
  std::vector<Pair> batch;
  for (int step = 0; step < cfg.steps; ++step) {
    batch.clear();
    while (static_cast<int>(batch.size()) < cfg.batch_size) {
      if (cursor >= order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(cfg.seed, {0x5f7, static_cast<std::uint64_t>(epoch++)});
        rng.shuffle(order.begin(), order.end());
        cursor = 0;
        if (!batch.empty() && order.size() <= batch.size()) break;
      }
      batch.push_back(pairs[order[cursor++]]);
      if (batch.size() == pairs.size()) break;
    }
    diffcore::Graph g;
    Var loss = imitation_loss(g, p, batch, cfg.loss);
    double v = g.value(loss).item();
    if (!std::isfinite(v)) throw policy::NumericError("train_supervised: loss diverged at step " + std::to_string(step));
    for (auto* t : params) t->ensure_grad();
    g.backward(loss);
    diffcore::optimizer_apply(opt, params);
    auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    log.entries.push_back({step, v, ms});
  }
  log.final_loss = imitation_loss_value(p, pairs, cfg.loss);
  for (auto* t : p.parameters()) t->grad.clear();
  return log;
}

// Per task, a seeded uniform sample of `shots` demos without replacement.
// Selected demos keep their original relative order.
inline DemoDataset few_shot_subset(const DemoDataset& data, int shots, std::uint64_t seed) {
  if (shots < 1) throw std::invalid_argument("few_shot_subset: shots must be >= 1");
  std::vector<std::size_t> keep;
  for (const auto& [task, idx] : data.by_task()) {
    if (static_cast<int>(idx.size()) < shots)
      throw std::invalid_argument("few_shot_subset: task " + std::to_string(task) + " has only " +
                                  std::to_string(idx.size()) + " demos, " + std::to_string(shots) + " requested");
    auto pick = idx;
    Rng rng(seed, {0x5e7, static_cast<std::uint64_t>(task)});
    rng.shuffle(pick.begin(), pick.end());
    keep.insert(keep.end(), pick.begin(), pick.begin() + shots);
  }
  std::sort(keep.begin(), keep.end());
  std::vector<Demonstration> out;
  for (auto i : keep) out.push_back(data.demos[i]);
  return DemoDataset::make(std::move(out), data.provenance, shots);
}

}  // namespace ript::supervised
