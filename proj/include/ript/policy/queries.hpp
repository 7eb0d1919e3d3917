// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ript/diffcore/optimizer.hpp"
#include "ript/policy/policy.hpp"
#include "ript/random.hpp"

namespace ript::policy {

struct SampledAction {
  Action action;
  double logprob = 0.0;
};

namespace detail {

inline void check_finite(std::span<const double> xs, const char* what) {
  for (double v : xs)
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite policy output");
}

inline void check_encoding(const Policy& p, std::span<const double> enc) {
  if (enc.size() != p.encoder().size())
    throw std::invalid_argument("policy: encoding has " + std::to_string(enc.size()) + " features, expected " +
                                std::to_string(p.encoder().size()));
}

inline Tensor rows(std::span<const std::vector<double>> encodings, std::size_t width) {
  Tensor x = Tensor::zeros({encodings.size(), width});
  for (std::size_t i = 0; i < encodings.size(); ++i) {
    if (encodings[i].size() != width) throw std::invalid_argument("policy: ragged encoding batch");
    std::copy(encodings[i].begin(), encodings[i].end(), x.values.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  return x;
}

}  // namespace detail

// Draws an action from the policy's distribution and returns it with its
// exact log-probability (log-mass for tokens, log-density otherwise).
inline SampledAction sample_action(const Policy& p, std::span<const double> enc, Rng& rng) {
  detail::check_encoding(p, enc);
  Graph g;
  Var x = g.input(Tensor::row({enc.begin(), enc.end()}));
  auto heads = p.build(g, x);
  SampledAction out;
  if (!p.regression()) {
    Var lsm = g.log_softmax(heads.logits);
    const auto& logp = g.value(lsm).values;
    detail::check_finite(logp, "sample_action");
    double u = rng.uniform();
    std::size_t choice = logp.size() - 1;
    double acc = 0.0;
    for (std::size_t j = 0; j < logp.size(); ++j) {
      acc += std::exp(logp[j]);
      if (u < acc) {
        choice = j;
        break;
      }
    }
    out.action = Action::discrete(static_cast<int>(choice));
    out.logprob = logp[choice];
    return out;
  }
  const auto& mu = g.value(heads.mean).values;
  const auto& sigma = g.value(heads.sigma).values;
  detail::check_finite(mu, "sample_action");
  detail::check_finite(sigma, "sample_action");
  std::vector<double> a(mu.size());
  for (std::size_t k = 0; k < mu.size(); ++k)
    a[k] = mu[k] + sigma[k] * (p.head() == HeadFamily::laplace ? rng.laplace() : rng.normal());
  out.action = Action::continuous(std::move(a));
  Var lp = p.log_probs_from(g, heads, std::span<const Action>(&out.action, 1));
  out.logprob = g.value(lp).values[0];
  if (!std::isfinite(out.logprob)) throw NumericError("sample_action: non-finite log-probability");
  return out;
}

inline double action_logprob(const Policy& p, std::span<const double> enc, const Action& a) {
  detail::check_encoding(p, enc);
  Graph g;
  Var x = g.input(Tensor::row({enc.begin(), enc.end()}));
  Var lp = p.log_probs(g, x, std::span<const Action>(&a, 1));
  return g.value(lp).values[0];
}

inline double action_logprob(const PolicySnapshot& s, std::span<const double> enc, const Action& a) {
  return action_logprob(s.policy(), enc, a);
}

// Encodings of a recorded episode, rebuilt from its stored observations.
inline std::vector<std::vector<double>> episode_encodings(const Policy& p, int goal,
                                                          std::span<const Observation> observations,
                                                          std::span<const Action> actions) {
  if (observations.size() != actions.size() && observations.size() != actions.size() + 1)
    throw std::invalid_argument("sequence_logprob: " + std::to_string(actions.size()) + " actions but " +
                                std::to_string(observations.size()) + " observations");
  Encoder enc = p.encoder();
  std::vector<std::vector<double>> out;
  out.reserve(actions.size());
  for (std::size_t t = 0; t < actions.size(); ++t) out.push_back(enc.encode(observations[t], goal, actions.first(t)));
  return out;
}

// Sum over steps of log pi(a_t | encoding_t), accumulated in step order.
inline double sequence_logprob(const Policy& p, int goal, std::span<const Observation> observations,
                               std::span<const Action> actions) {
  auto encs = episode_encodings(p, goal, observations, actions);
  if (encs.empty()) return 0.0;
  Graph g;
  Var x = g.input(detail::rows(encs, p.encoder().size()));
  const auto& lp = g.value(p.log_probs(g, x, actions)).values;
  double total = 0.0;
  for (double v : lp) total += v;
  return total;
}

inline double sequence_logprob(const PolicySnapshot& s, int goal, std::span<const Observation> observations,
                               std::span<const Action> actions) {
  return sequence_logprob(s.policy(), goal, observations, actions);
}

// Argmax token (lowest index on ties) or the regression mean.
inline Action greedy_action(const Policy& p, std::span<const double> enc) {
  detail::check_encoding(p, enc);
  Graph g;
  Var x = g.input(Tensor::row({enc.begin(), enc.end()}));
  auto heads = p.build(g, x);
  if (!p.regression()) {
    const auto& logits = g.value(heads.logits).values;
    detail::check_finite(logits, "greedy_action");
    auto it = std::max_element(logits.begin(), logits.end());  // first maximum
    return Action::discrete(static_cast<int>(it - logits.begin()));
  }
  const auto& mu = g.value(heads.mean).values;
  detail::check_finite(mu, "greedy_action");
  return Action::continuous(mu);
}

struct FitScaleOptions {
  int steps = 500;
  double lr = 0.05;
};

struct FitScaleResult {
  double initial_nll = 0.0;
  double final_nll = 0.0;
  std::vector<double> nll;  // per step, before the update
};

// Fits only the scale head by full-batch NLL on demonstration pairs; trunk
// and mean head stay frozen.
inline FitScaleResult fit_scale_head(Policy& p, std::span<const std::vector<double>> encodings,
                                     std::span<const Action> actions, const FitScaleOptions& opt = {}) {
  if (!p.regression()) throw std::invalid_argument("fit_scale_head: policy has no regression head");
  if (encodings.empty()) throw std::invalid_argument("fit_scale_head: empty demonstration set");
  if (encodings.size() != actions.size()) throw std::invalid_argument("fit_scale_head: encodings/actions mismatch");

  Tensor features, means;
  {
    Graph g;
    Var x = g.input(detail::rows(encodings, p.encoder().size()));
    Var h = p.trunk_features(g, x);
    features = g.value(h);
    means = g.value(p.build(g, x).mean);
  }
  auto scale = p.scale_parameters();
  auto state = diffcore::OptimizerState::adam(opt.lr);
  FitScaleResult result;
  auto nll_graph = [&](Graph& g) {
    Var h = g.input(features);
    Var raw = g.add(g.matmul(h, g.param(*scale[0])), g.param(*scale[1]));
    Policy::Heads heads;
    heads.mean = g.input(means);
    heads.sigma = g.add_scalar(g.softplus(raw), p.config().scale_floor);
    return g.neg(g.mean(p.log_probs_from(g, heads, actions)));
  };
  for (int step = 0; step < opt.steps; ++step) {
    Graph g;
    Var loss = nll_graph(g);
    double v = g.value(loss).item();
    if (!std::isfinite(v)) throw NumericError("fit_scale_head: non-finite NLL");
    result.nll.push_back(v);
    g.backward(loss);
    diffcore::optimizer_apply(state, scale);
  }
  Graph g;
  result.final_nll = g.value(nll_graph(g)).item();
  result.initial_nll = result.nll.empty() ? result.final_nll : result.nll.front();
  for (auto* t : p.parameters()) t->grad.clear();
  return result;
}

}  // namespace ript::policy
