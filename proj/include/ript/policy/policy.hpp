// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ript/diffcore/checkpoint.hpp"
#include "ript/diffcore/graph.hpp"
#include "ript/diffcore/tensor.hpp"
#include "ript/policy/encoding.hpp"
#include "ript/random.hpp"

namespace ript::policy {

using diffcore::Graph;
using diffcore::Tensor;
using diffcore::Var;

struct PolicyConfig {
  HeadFamily head = HeadFamily::tokenized;
  std::size_t obs_dim = 0;
  std::size_t n_goals = 1;
  std::size_t action_dim = 4;
  std::size_t window = 1;
  std::vector<std::size_t> hidden{64, 64};
  double scale_floor = 1e-3;
  double init_scale = 0.3;
  std::uint64_t seed = 0;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// MLP trunk (tanh) with a tokenized head (logits over V tokens) or a
// regression head (mean, plus a separate linear scale head through softplus
// with a floor).
class Policy {
 public:
  struct Heads {
    Var logits;  // tokenized
    Var mean;    // regression
    Var sigma;   // regression
  };

  Policy() = default;

  explicit Policy(PolicyConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.action_dim == 0) throw std::invalid_argument("policy: action_dim must be positive");
    if (cfg_.scale_floor <= 0.0) throw std::invalid_argument("policy: scale floor must be positive");
    Rng rng(cfg_.seed, {0x706f6c});
    std::size_t in = encoder().size();
    for (std::size_t h : cfg_.hidden) {
      trunk_.push_back(dense(rng, in, h, 1.0));
      trunk_.push_back(Tensor::zeros({1, h}));
      in = h;
    }
    head_.push_back(dense(rng, in, cfg_.action_dim, 0.1));
    head_.push_back(Tensor::zeros({1, cfg_.action_dim}));
    if (regression()) {
      scale_.push_back(dense(rng, in, cfg_.action_dim, 0.01));
      double raw = std::log(std::expm1(std::max(cfg_.init_scale - cfg_.scale_floor, 1e-6)));
      scale_.push_back(Tensor({1, cfg_.action_dim}, std::vector<double>(cfg_.action_dim, raw)));
    }
  }

  const PolicyConfig& config() const { return cfg_; }
  HeadFamily head() const { return cfg_.head; }
  bool regression() const { return cfg_.head != HeadFamily::tokenized; }
  Encoder encoder() const { return Encoder{cfg_.head, cfg_.obs_dim, cfg_.n_goals, cfg_.action_dim, cfg_.window}; }

  std::vector<Tensor*> trunk_parameters() { return ptrs(trunk_); }
  // Token logits or regression mean.
  std::vector<Tensor*> head_parameters() { return ptrs(head_); }
  std::vector<Tensor*> scale_parameters() { return ptrs(scale_); }
  std::vector<Tensor*> parameters() {
    auto out = trunk_parameters();
    for (auto* p : head_parameters()) out.push_back(p);
    for (auto* p : scale_parameters()) out.push_back(p);
    return out;
  }
  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  // Builds the heads on a [m, encoder().size()] input. Parameters enter the
  // graph as trainable leaves.
  Heads build(Graph& g, Var x) {
    return build_impl(g, x, [&](Tensor& t) { return g.param(t); });
  }
  // Same computation with parameters as read-only constants.
  Heads build(Graph& g, Var x) const {
    return build_impl(g, x, [&](const Tensor& t) { return g.constant(t); });
  }

  // Per-row log-probability of `actions` under the policy, shape [m].
  Var log_probs(Graph& g, Var x, std::span<const Action> actions) {
    return log_probs_impl(g, build(g, x), actions);
  }
  Var log_probs(Graph& g, Var x, std::span<const Action> actions) const {
    return log_probs_impl(g, build(g, x), actions);
  }

  diffcore::Checkpoint to_checkpoint() const {
    diffcore::Checkpoint c;
    c.meta["head"] = head_name(cfg_.head);
    c.meta["obs_dim"] = std::to_string(cfg_.obs_dim);
    c.meta["n_goals"] = std::to_string(cfg_.n_goals);
    c.meta["action_dim"] = std::to_string(cfg_.action_dim);
    c.meta["window"] = std::to_string(cfg_.window);
    std::string hidden;
    for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) hidden += (i ? "," : "") + std::to_string(cfg_.hidden[i]);
    c.meta["hidden"] = hidden.empty() ? "-" : hidden;
    c.meta["scale_floor"] = diffcore::hexfloat(cfg_.scale_floor);
    auto add = [&](const std::string& prefix, const std::vector<Tensor>& ts) {
      for (std::size_t i = 0; i < ts.size(); ++i) c.tensors.emplace_back(prefix + std::to_string(i), ts[i]);
    };
    add("trunk.", trunk_);
    add("head.", head_);
    add("scale.", scale_);
    for (auto& [n, t] : c.tensors) t.grad.clear();
    return c;
  }

  static Policy from_checkpoint(const diffcore::Checkpoint& c) {
    PolicyConfig cfg;
    cfg.head = parse_head(c.meta.at("head"));
    cfg.obs_dim = std::stoul(c.meta.at("obs_dim"));
    cfg.n_goals = std::stoul(c.meta.at("n_goals"));
    cfg.action_dim = std::stoul(c.meta.at("action_dim"));
    cfg.window = std::stoul(c.meta.at("window"));
    cfg.hidden.clear();
    const std::string& hs = c.meta.at("hidden");
    if (hs != "-") {
      std::size_t pos = 0;
      while (pos <= hs.size()) {
        auto next = hs.find(',', pos);
        cfg.hidden.push_back(std::stoul(hs.substr(pos, next - pos)));
        if (next == std::string::npos) break;
        pos = next + 1;
      }
    }
    cfg.scale_floor = std::strtod(c.meta.at("scale_floor").c_str(), nullptr);
    Policy p(cfg);
    auto load = [&](const std::string& prefix, std::vector<Tensor>& ts) {
      for (std::size_t i = 0; i < ts.size(); ++i) {
        const Tensor& src = c.get(prefix + std::to_string(i));
        if (src.shape != ts[i].shape)
          throw diffcore::ShapeError("checkpoint: tensor " + prefix + std::to_string(i) + " has shape " +
                                     diffcore::shape_str(src.shape) + ", expected " +
                                     diffcore::shape_str(ts[i].shape));
        ts[i].values = src.values;
      }
    };
    load("trunk.", p.trunk_);
    load("head.", p.head_);
    load("scale.", p.scale_);
    return p;
  }

  bool same_parameters(const Policy& o) const {
    auto eq = [](const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].values != b[i].values) return false;
      return true;
    };
    return eq(trunk_, o.trunk_) && eq(head_, o.head_) && eq(scale_, o.scale_);
  }

 private:
  PolicyConfig cfg_;
  std::vector<Tensor> trunk_;  // W0, b0, W1, b1, ...
  std::vector<Tensor> head_;   // W, b
  std::vector<Tensor> scale_;  // W, b (regression only)

  static Tensor dense(Rng& rng, std::size_t in, std::size_t out, double gain) {
    Tensor w = Tensor::zeros({in, out});
    double sd = gain / std::sqrt(static_cast<double>(in));
    for (auto& v : w.values) v = sd * rng.normal();
    return w;
  }

  static std::vector<Tensor*> ptrs(std::vector<Tensor>& ts) {
    std::vector<Tensor*> out;
    for (auto& t : ts) out.push_back(&t);
    return out;
  }

  template <typename Self, typename Leaf>
  static Var trunk_with(Self& self, Graph& g, Var x, Leaf leaf) {
    Var h = x;
    for (std::size_t i = 0; i + 1 < self.trunk_.size(); i += 2)
      h = g.tanh(g.add(g.matmul(h, leaf(self.trunk_[i])), leaf(self.trunk_[i + 1])));
    return h;
  }

  template <typename Self, typename Leaf>
  static Heads build_with(Self& self, Graph& g, Var x, Leaf leaf) {
    Var h = trunk_with(self, g, x, leaf);
    Heads out;
    Var y = g.add(g.matmul(h, leaf(self.head_[0])), leaf(self.head_[1]));
    if (!self.regression()) {
      out.logits = y;
      return out;
    }
    out.mean = y;
    Var raw = g.add(g.matmul(h, leaf(self.scale_[0])), leaf(self.scale_[1]));
    out.sigma = g.add_scalar(g.softplus(raw), self.cfg_.scale_floor);
    return out;
  }

  template <typename Leaf>
  Heads build_impl(Graph& g, Var x, Leaf leaf) {
    return build_with(*this, g, x, leaf);
  }
  template <typename Leaf>
  Heads build_impl(Graph& g, Var x, Leaf leaf) const {
    return build_with(*this, g, x, leaf);
  }

  Var log_probs_impl(Graph& g, const Heads& heads, std::span<const Action> actions) const {
    return log_probs_from(g, heads, actions);
  }

 public:
  // Trunk output (last hidden layer) with parameters as constants.
  Var trunk_features(Graph& g, Var x) const {
    return trunk_with(*this, g, x, [&](const Tensor& t) { return g.constant(t); });
  }

  // Per-row log-probability given already-built heads.
  Var log_probs_from(Graph& g, const Heads& heads, std::span<const Action> actions) const {
    if (!regression()) {
      std::vector<std::size_t> idx(actions.size());
      for (std::size_t i = 0; i < actions.size(); ++i) {
        int t = actions[i].token;
        if (t < 0 || static_cast<std::size_t>(t) >= cfg_.action_dim)
          throw std::out_of_range("log_prob: token " + std::to_string(t) + " outside vocabulary of size " +
                                  std::to_string(cfg_.action_dim));
        idx[i] = static_cast<std::size_t>(t);
      }
      return g.gather(g.log_softmax(heads.logits), std::move(idx));
    }
    std::size_t d = cfg_.action_dim;
    Tensor a = Tensor::zeros({actions.size(), d});
    for (std::size_t i = 0; i < actions.size(); ++i) {
      if (actions[i].values.size() != d)
        throw std::out_of_range("log_prob: action has " + std::to_string(actions[i].values.size()) +
                                " dimensions, expected " + std::to_string(d));
      for (std::size_t k = 0; k < d; ++k) a.values[i * d + k] = actions[i].values[k];
    }
    Var diff = g.sub(g.input(std::move(a)), heads.mean);
    Var log_sigma = g.log(heads.sigma);
    Var per_dim;
    if (cfg_.head == HeadFamily::laplace) {
      // -log(2 sigma) - |a - mu| / sigma
      Var t = g.add(log_sigma, g.div(g.abs(diff), heads.sigma));
      per_dim = g.add_scalar(g.neg(t), -std::numbers::ln2);
    } else {
      // -z^2 / 2 - log sigma - log(2 pi) / 2
      Var z = g.div(diff, heads.sigma);
      Var t = g.add(g.scale(g.square(z), 0.5), log_sigma);
      per_dim = g.add_scalar(g.neg(t), -0.5 * std::log(2.0 * std::numbers::pi));
    }
    return g.row_sum(per_dim);
  }
};

// Immutable deep copy used as the sampling policy.
class PolicySnapshot {
 public:
  PolicySnapshot() = default;
  explicit PolicySnapshot(const Policy& p) : policy_(std::make_shared<const Policy>(p)) {}
  const Policy& policy() const { return *policy_; }
  const Policy* operator->() const { return policy_.get(); }

 private:
  std::shared_ptr<const Policy> policy_;
};

}  // namespace ript::policy
