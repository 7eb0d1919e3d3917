// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "ript/diffcore/optimizer.hpp"
#include "ript/envsuite/types.hpp"
#include "ript/policy/queries.hpp"
#include "ript/random.hpp"

namespace ript::rl {

using diffcore::Graph;
using diffcore::Tensor;
using diffcore::Var;
using envsuite::Action;
using envsuite::Context;
using envsuite::Observation;
using policy::Policy;
using policy::PolicySnapshot;

// A world hands out goal indices and fresh environment instances per context.
// Environments expose reset(context) -> Observation and step(action) -> {observation, done, reward}.
template <typename W>
concept World = requires(const W& w, const Context& c) {
  { w.goal_of(c) } -> std::convertible_to<int>;
  w.make_env(c);
};

struct Rollout {
  Context context;  // the context the episode actually started from
  int goal = 0;
  std::vector<Observation> observations;  // o_t observed before a_t
  std::vector<Action> actions;
  std::vector<double> logprobs;  // log pi_psi(a_t | encoding_t) at sampling time
  double logprob_sum = 0.0;      // accumulated in step order
  double reward = 0.0;
  int length() const { return static_cast<int>(actions.size()); }
};

struct Advantages {
  std::vector<double> baselines;
  std::vector<double> advantages;
};

// b_k = (sum_{j != k} R_j) / (K - 1), A_k = R_k - b_k.
inline Advantages rloo_advantages(std::span<const double> rewards) {
  std::size_t k = rewards.size();
  if (k < 2) throw std::invalid_argument("rloo: group size " + std::to_string(k) + " < 2");
  Advantages out;
  out.baselines.resize(k);
  out.advantages.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      if (j != i) s += rewards[j];
    out.baselines[i] = s / static_cast<double>(k - 1);
    out.advantages[i] = rewards[i] - out.baselines[i];
  }
  return out;
}

enum class RatioMode { sequence, per_step };

inline const char* ratio_mode_name(RatioMode m) { return m == RatioMode::sequence ? "sequence" : "per_step"; }
inline RatioMode parse_ratio_mode(const std::string& s) {
  if (s == "sequence") return RatioMode::sequence;
  if (s == "per_step") return RatioMode::per_step;
  throw std::invalid_argument("unknown ratio mode '" + s + "'");
}

struct RiptConfig {
  int K = 8;
  int B = 64;
  int N = 1;
  int M = 20;
  double epsilon = 0.2;
  int minibatch = 8;
  double lr_trunk = 1e-3;
  double lr_head = 1e-3;
  int attempt_cap = 0;  // group attempts per step; 0 means 20 * B / K
  RatioMode ratio = RatioMode::sequence;
  bool rejection = true;
  int workers = 1;
  std::uint64_t seed = 0;
  int eval_interval = 0;  // 0: no held-out evaluation during training
  int checkpoint_interval = 0;
  bool freeze_scale = false;
  bool log_wall_time = true;

  int cap() const { return attempt_cap > 0 ? attempt_cap : 20 * (B / K); }

  void validate() const {
    if (K < 2) throw std::invalid_argument("ript: K must be >= 2, got " + std::to_string(K));
    if (B < K || B % K != 0) throw std::invalid_argument("ript: B must be a positive multiple of K");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("ript: epsilon must lie in (0, 1)");
    if (N < 0 || M < 0) throw std::invalid_argument("ript: N and M must be >= 0");
    if (minibatch < 1) throw std::invalid_argument("ript: minibatch must be >= 1");
    if (workers < 1) throw std::invalid_argument("ript: workers must be >= 1");
    if (!(lr_trunk > 0.0) || !(lr_head > 0.0)) throw std::invalid_argument("ript: learning rates must be positive");
  }
};

// ---------------------------------------------------------------------------
// Rollout collection

template <World W>
Rollout run_episode(const Policy& snapshot, const W& world, const Context& context, Rng& rng) {
  Rollout r;
  r.context = context;
  r.goal = world.goal_of(context);
  auto env = world.make_env(context);
  Observation obs = env.reset(context);
  policy::Encoder enc = snapshot.encoder();
  while (true) {
    auto x = enc.encode(obs, r.goal, r.actions);
    auto s = policy::sample_action(snapshot, x, rng);
    auto res = env.step(s.action);
    r.observations.push_back(std::move(obs));
    r.actions.push_back(std::move(s.action));
    r.logprobs.push_back(s.logprob);
    r.logprob_sum += s.logprob;
    obs = std::move(res.observation);
    if (res.done) {
      r.reward = res.reward;
      break;
    }
  }
  return r;
}

// K episodes from one context. Member k draws from its own stream
// (stream_seed, k); a world may also move the member's start state
// (setup noise) through member_context before the episode.
template <World W>
std::vector<Rollout> collect_group(const Policy& snapshot, const W& world, const Context& context, int K,
                                   std::uint64_t stream_seed) {
  if (K < 2) throw std::invalid_argument("collect_group: K must be >= 2");
  std::vector<Rollout> out;
  out.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    Rng rng(stream_seed, {static_cast<std::uint64_t>(k)});
    if constexpr (requires { world.member_context(context, rng); }) {
      Context c = world.member_context(context, rng);
      out.push_back(run_episode(snapshot, world, c, rng));
    } else {
      out.push_back(run_episode(snapshot, world, context, rng));
    }
  }
  return out;
}

struct Sample {
  Rollout rollout;
  double baseline = 0.0;
  double advantage = 0.0;
  int group = 0;
};

enum class FillStatus { filled, underfull, stalled_or_converged };

inline const char* fill_status_name(FillStatus s) {
  switch (s) {
    case FillStatus::filled: return "filled";
    case FillStatus::underfull: return "underfull";
    case FillStatus::stalled_or_converged: return "stalled_or_converged";
  }
  return "?";
}

struct FillStats {
  int attempts = 0;
  int groups_accepted = 0;
  int rejected_success = 0;  // all K rollouts succeeded
  int rejected_fail = 0;     // all K rollouts failed
  int zero_advantage_samples = 0;
  double reward_sum = 0.0;  // over every collected rollout, rejected groups included
  int rollouts = 0;
  FillStatus status = FillStatus::filled;
};

struct FillResult {
  std::vector<Sample> dataset;
  FillStats stats;
};

// Samples contexts uniformly, collects K-groups, drops groups whose rewards
// are all equal (when rejection is on) and stops at B samples or the attempt
// cap. Attempt a uses context stream (step_seed, a); groups are computed in
// waves of `workers` threads but consumed in attempt order, so the result
// does not depend on the worker count.
template <World W>
FillResult dynamic_fill(const Policy& snapshot, const W& world, std::span<const Context> contexts,
                        const RiptConfig& cfg, std::uint64_t step_seed) {
  if (contexts.empty()) throw std::invalid_argument("dynamic_fill: empty context set");
  cfg.validate();
  FillResult out;
  int cap = cfg.cap();
  int attempt = 0;
  auto full = [&] { return static_cast<int>(out.dataset.size()) >= cfg.B; };
  while (!full() && attempt < cap) {
    int wave = std::min(cfg.workers, cap - attempt);
    std::vector<std::vector<Rollout>> groups(static_cast<std::size_t>(wave));
    auto work = [&](int i) {
      int a = attempt + i;
      Rng pick(step_seed, {0xc0, static_cast<std::uint64_t>(a)});
      const Context& c = contexts[pick.below(contexts.size())];
      groups[static_cast<std::size_t>(i)] =
          collect_group(snapshot, world, c, cfg.K, derive_seed(step_seed, {0x9a, static_cast<std::uint64_t>(a)}));
    };
    if (wave == 1) {
      work(0);
    } else {
      std::vector<std::exception_ptr> errors(static_cast<std::size_t>(wave));
      std::vector<std::thread> threads;
      for (int i = 0; i < wave; ++i)
        threads.emplace_back([&, i] {
          try {
            work(i);
          } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
          }
        });
      for (auto& t : threads) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    for (auto& g : groups) {
      if (full()) break;
      ++attempt;
      ++out.stats.attempts;
      std::vector<double> rewards;
      for (const auto& r : g) rewards.push_back(r.reward);
      for (double v : rewards) out.stats.reward_sum += v;
      out.stats.rollouts += static_cast<int>(rewards.size());
      bool all_equal = std::all_of(rewards.begin(), rewards.end(), [&](double v) { return v == rewards.front(); });
      if (all_equal && cfg.rejection) {
        (rewards.front() > 0.5 ? out.stats.rejected_success : out.stats.rejected_fail)++;
        continue;
      }
      auto adv = rloo_advantages(rewards);
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (adv.advantages[k] == 0.0) ++out.stats.zero_advantage_samples;
        out.dataset.push_back({std::move(g[k]), adv.baselines[k], adv.advantages[k], out.stats.groups_accepted});
      }
      ++out.stats.groups_accepted;
    }
  }
  out.stats.status = full() ? FillStatus::filled
                     : out.dataset.empty() ? FillStatus::stalled_or_converged
                                           : FillStatus::underfull;
  return out;
}

// ---------------------------------------------------------------------------
// Clipped surrogate

// -min(r A, clip(r, 1 - eps, 1 + eps) A) on plain numbers.
inline double clipped_loss(double r, double a, double eps) {
  return -std::min(r * a, std::clamp(r, 1.0 - eps, 1.0 + eps) * a);
}

inline constexpr double kLogRatioClamp = 20.0;

struct PpoTerms {
  Var loss;    // scalar, mean over samples
  Var ratios;  // one per sample (sequence mode) or per step (per_step mode)
};

namespace detail {

inline void stack_rows(std::vector<double>& dst, const std::vector<double>& row) {
  dst.insert(dst.end(), row.begin(), row.end());
}

template <typename P>
PpoTerms ppo_terms(Graph& g, P& p, std::span<const Sample* const> batch, double eps, RatioMode mode) {
  if (batch.empty()) throw std::invalid_argument("ppo_loss: empty minibatch");
  policy::Encoder enc = p.encoder();
  std::size_t w = enc.size();
  std::vector<double> x;
  std::vector<Action> actions;
  std::vector<double> stored_steps, stored_seq, adv_steps, adv_seq, lengths;
  std::vector<std::size_t> offsets{0};
  for (const Sample* s : batch) {
    const Rollout& r = s->rollout;
    if (r.logprobs.size() != r.actions.size() || r.observations.size() < r.actions.size())
      throw std::invalid_argument("ppo_loss: rollout is missing stored log-probabilities");
    if (r.actions.empty()) throw std::invalid_argument("ppo_loss: empty rollout");
    for (std::size_t t = 0; t < r.actions.size(); ++t) {
      stack_rows(x, enc.encode(r.observations[t], r.goal, std::span<const Action>(r.actions).first(t)));
      actions.push_back(r.actions[t]);
      stored_steps.push_back(r.logprobs[t]);
      adv_steps.push_back(s->advantage);
    }
    offsets.push_back(actions.size());
    stored_seq.push_back(r.logprob_sum);
    adv_seq.push_back(s->advantage);
    lengths.push_back(static_cast<double>(r.actions.size()));
  }
  std::size_t rows = actions.size(), m = batch.size();
  Var xv = g.input(Tensor({rows, w}, std::move(x)));
  Var lp = p.log_probs(g, xv, actions);
  Var log_ratio, adv;
  if (mode == RatioMode::sequence) {
    Var seq = g.segment_sum(lp, offsets);
    log_ratio = g.sub(seq, g.input(Tensor({m}, std::move(stored_seq))));
    adv = g.input(Tensor({m}, std::move(adv_seq)));
  } else {
    log_ratio = g.sub(lp, g.input(Tensor({rows}, std::move(stored_steps))));
    adv = g.input(Tensor({rows}, std::move(adv_steps)));
  }
  for (double v : g.value(log_ratio).values)
    if (std::isnan(v)) throw policy::NumericError("ppo_loss: NaN importance ratio");
  Var r = g.exp(g.clamp(log_ratio, -kLogRatioClamp, kLogRatioClamp));
  Var objective = g.minimum(g.mul(r, adv), g.mul(g.clamp(r, 1.0 - eps, 1.0 + eps), adv));
  Var per_sample = objective;
  if (mode == RatioMode::per_step)
    per_sample = g.div(g.segment_sum(objective, offsets), g.input(Tensor({m}, std::move(lengths))));
  return {g.neg(g.mean(per_sample)), r};
}

}  // namespace detail

// Minibatch PPO loss with parameters as trainable leaves.
inline PpoTerms ppo_minibatch(Graph& g, Policy& p, std::span<const Sample* const> batch, double eps,
                              RatioMode mode) {
  return detail::ppo_terms(g, p, batch, eps, mode);
}

// Single-sample loss L = -min(r A, clip(r) A). The sampling policy enters
// only through the log-probabilities stored on the rollout.
inline Var ppo_loss(Graph& g, Policy& p, const Rollout& rollout, double advantage, double eps, RatioMode mode) {
  Sample s{rollout, 0.0, advantage, 0};
  const Sample* ptr = &s;
  return detail::ppo_terms(g, p, std::span<const Sample* const>(&ptr, 1), eps, mode).loss;
}

inline double ppo_loss_value(const Policy& p, const Rollout& rollout, double advantage, double eps, RatioMode mode) {
  Sample s{rollout, 0.0, advantage, 0};
  const Sample* ptr = &s;
  Graph g;
  return g.value(detail::ppo_terms(g, p, std::span<const Sample* const>(&ptr, 1), eps, mode).loss).item();
}

// Sequence ratio exp(seq_theta - stored) of one rollout.
inline double sequence_ratio(const Policy& p, const Rollout& r) {
  double lp = policy::sequence_logprob(p, r.goal, r.observations, r.actions);
  return std::exp(std::clamp(lp - r.logprob_sum, -kLogRatioClamp, kLogRatioClamp));
}

// ---------------------------------------------------------------------------
// Training loop

struct StepMetrics {
  int step = 0;
  int groups_collected = 0;  // accepted groups
  int groups_rejected_success = 0;
  int groups_rejected_fail = 0;
  double mean_reward = 0.0;  // over all sampled rollouts this step
  double mean_abs_adv = 0.0;
  double ratio_mean = 0.0;
  double ratio_max = 0.0;
  double ppo_loss = 0.0;  // mean over minibatch updates
  std::optional<double> eval_sr;
  double wall_ms = 0.0;
  // Not part of the JSONL record.
  int attempts = 0;
  int zero_advantage_samples = 0;
  int dataset_size = 0;
  FillStatus fill = FillStatus::filled;
};

inline nlohmann::ordered_json metrics_json(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["groups_collected"] = m.groups_collected;
  j["groups_rejected_success"] = m.groups_rejected_success;
  j["groups_rejected_fail"] = m.groups_rejected_fail;
  j["mean_reward"] = m.mean_reward;
  j["mean_abs_adv"] = m.mean_abs_adv;
  j["ratio_mean"] = m.ratio_mean;
  j["ratio_max"] = m.ratio_max;
  j["ppo_loss"] = m.ppo_loss;
  j["eval_sr"] = m.eval_sr ? nlohmann::ordered_json(*m.eval_sr) : nlohmann::ordered_json(nullptr);
  j["wall_ms"] = m.wall_ms;
  return j;
}

enum class TrainStatus { completed, converged };

inline const char* train_status_name(TrainStatus s) { return s == TrainStatus::completed ? "completed" : "converged"; }

struct TrainHooks {
  // Held-out success rate, called when eval_interval divides step + 1.
  std::function<double(const Policy&, int step)> evaluate;
  // After each outer step (checkpointing, logging).
  std::function<void(const Policy&, const StepMetrics&)> on_step;
  // Ratios of each minibatch before its update: (step, pass, minibatch index, ratios).
  std::function<void(int, int, int, const std::vector<double>&)> on_minibatch;
};

struct TrainResult {
  TrainStatus status = TrainStatus::completed;
  std::vector<StepMetrics> metrics;
};

// M outer steps of: snapshot, dynamic fill, N shuffled passes of minibatch
// PPO updates. A step with no usable groups is skipped; when those groups
// were mostly all-success the run stops as converged.
template <World W>
TrainResult ript_train(Policy& p, const W& world, std::span<const Context> contexts, const RiptConfig& cfg,
                       const TrainHooks& hooks = {}) {
  cfg.validate();
  if (contexts.empty()) throw std::invalid_argument("ript_train: empty context set");
  std::vector<Tensor*> trunk = p.trunk_parameters();
  std::vector<Tensor*> head = p.head_parameters();
  if (!cfg.freeze_scale)
    for (auto* t : p.scale_parameters()) head.push_back(t);
  auto opt_trunk = diffcore::OptimizerState::adam(cfg.lr_trunk);
  auto opt_head = diffcore::OptimizerState::adam(cfg.lr_head);
  TrainResult result;
  auto t0 = std::chrono::steady_clock::now();

  for (int step = 0; step < cfg.M; ++step) {
    std::uint64_t step_seed = derive_seed(cfg.seed, {0x7195, static_cast<std::uint64_t>(step)});
    PolicySnapshot snapshot(p);
    FillResult fill = dynamic_fill(snapshot.policy(), world, contexts, cfg, step_seed);
    StepMetrics m;
    m.step = step;
    m.groups_collected = fill.stats.groups_accepted;
    m.groups_rejected_success = fill.stats.rejected_success;
    m.groups_rejected_fail = fill.stats.rejected_fail;
    m.mean_reward = fill.stats.rollouts ? fill.stats.reward_sum / fill.stats.rollouts : 0.0;
    m.attempts = fill.stats.attempts;
    m.zero_advantage_samples = fill.stats.zero_advantage_samples;
    m.dataset_size = static_cast<int>(fill.dataset.size());
    m.fill = fill.stats.status;
    double abs_adv = 0.0;
    for (const auto& s : fill.dataset) abs_adv += std::fabs(s.advantage);
    if (!fill.dataset.empty()) m.mean_abs_adv = abs_adv / static_cast<double>(fill.dataset.size());

    bool converged = fill.stats.status == FillStatus::stalled_or_converged &&
                     fill.stats.rejected_success >= fill.stats.rejected_fail;
    double ratio_sum = 0.0, loss_sum = 0.0;
    std::size_t ratio_count = 0, updates = 0;
    std::vector<const Sample*> order;
    for (const auto& s : fill.dataset) order.push_back(&s);
    for (int pass = 0; pass < cfg.N && !order.empty(); ++pass) {
      Rng shuffle_rng(step_seed, {0x5ff, static_cast<std::uint64_t>(pass)});
      shuffle_rng.shuffle(order.begin(), order.end());
      int mb_index = 0;
      for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.minibatch), ++mb_index) {
        std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.minibatch));
        std::span<const Sample* const> mb(order.data() + lo, hi - lo);
        Graph g;
        PpoTerms terms = ppo_minibatch(g, p, mb, cfg.epsilon, cfg.ratio);
        double loss = g.value(terms.loss).item();
        const auto& ratios = g.value(terms.ratios).values;
        if (!std::isfinite(loss)) {
          p = snapshot.policy();
          throw policy::NumericError("ript_train: non-finite PPO loss at step " + std::to_string(step));
        }
        if (hooks.on_minibatch) hooks.on_minibatch(step, pass, mb_index, ratios);
        for (double r : ratios) {
          ratio_sum += r;
          m.ratio_max = std::max(m.ratio_max, r);
        }
        ratio_count += ratios.size();
        loss_sum += loss;
        ++updates;
        for (auto* t : p.parameters()) t->ensure_grad();
        g.backward(terms.loss);
        for (auto* t : p.parameters())
          for (double v : t->grad)
            if (!std::isfinite(v)) {
              p = snapshot.policy();
              throw policy::NumericError("ript_train: non-finite gradient at step " + std::to_string(step));
            }
        diffcore::optimizer_apply(opt_trunk, trunk);
        diffcore::optimizer_apply(opt_head, head);
        for (auto* t : p.scale_parameters()) t->zero_grad();
      }
    }
    if (ratio_count) m.ratio_mean = ratio_sum / static_cast<double>(ratio_count);
    if (updates) m.ppo_loss = loss_sum / static_cast<double>(updates);
    if (hooks.evaluate && cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0)
      m.eval_sr = hooks.evaluate(p, step);
    if (cfg.log_wall_time)
      m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(m);
    if (hooks.on_step) hooks.on_step(p, m);
    if (converged) {
      result.status = TrainStatus::converged;
      break;
    }
  }
  for (auto* t : p.parameters()) t->grad.clear();
  return result;
}

}  // namespace ript::rl
