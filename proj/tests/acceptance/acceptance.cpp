// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Criteria 7-12 train on the shipped configs and take minutes.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "ript/diffcore/grad_check.hpp"
#include "ript/harness/experiments.hpp"
#include "ript/supervised/supervised.hpp"
#include "support.hpp"

using namespace ript;
using fixtures::contexts_with_ids;
using fixtures::make_policy;
using fixtures::OneStepWorld;
using fixtures::WalkWorld;
using policy::HeadFamily;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && first_.empty()) first_ = what;
    ok_ = ok_ && ok;
  }
  Outcome done(std::string detail) const {
    if (!ok_) detail = "failed: " + first_ + "; " + detail;
    return {ok_, std::move(detail)};
  }

 private:
  bool ok_ = true;
  std::string first_;
};

std::string num(double v, int prec = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

harness::ExperimentConfig load(const std::string& name) {
  return harness::load_config(fs::path(RIPT_CONFIG_DIR) / name);
}

double mean_field(const std::vector<harness::RunSummary>& runs, double harness::RunSummary::*f) {
  double s = 0.0;
  for (const auto& r : runs) s += r.*f;
  return s / static_cast<double>(runs.size());
}

std::vector<rl::Rollout> walk_rollouts(const policy::Policy& p, int n, int length, std::uint64_t seed) {
  WalkWorld w{length, 3};
  std::vector<rl::Rollout> out;
  for (int i = 0; i < n; ++i) {
    envsuite::Context c;
    c.id = seed * 1000 + static_cast<std::uint64_t>(i);
    Rng rng(seed, {static_cast<std::uint64_t>(i)});
    out.push_back(rl::run_episode(p, w, c, rng));
  }
  return out;
}

std::vector<double> grads_of(policy::Policy& p) {
  std::vector<double> out;
  for (auto* t : p.parameters()) out.insert(out.end(), t->grad.begin(), t->grad.end());
  return out;
}

void reset_grads(policy::Policy& p) {
  for (auto* t : p.parameters()) {
    t->ensure_grad();
    t->zero_grad();
  }
}

// ---------------------------------------------------------------------------

Outcome rloo_oracle() {
  auto t0 = std::chrono::steady_clock::now();
  Check c;
  int vectors = 0;
  for (int K = 2; K <= 6; ++K)
    for (int mask = 0; mask < (1 << K); ++mask, ++vectors) {
      std::vector<double> r;
      for (int k = 0; k < K; ++k) r.push_back((mask >> k) & 1);
      auto a = rl::rloo_advantages(r);
      double sum = 0.0;
      for (int k = 0; k < K; ++k) {
        double others = 0.0;
        for (int j = 0; j < K; ++j)
          if (j != k) others += r[static_cast<std::size_t>(j)];
        double want = r[static_cast<std::size_t>(k)] - others / (K - 1);
        c.expect(a.advantages[static_cast<std::size_t>(k)] == want, "advantage differs from direct evaluation");
        sum += a.advantages[static_cast<std::size_t>(k)];
      }
      c.expect(std::fabs(sum) <= 1e-12, "advantages do not sum to zero");
      if (mask == 0 || mask == (1 << K) - 1)
        for (double v : a.advantages) c.expect(v == 0.0, "all-equal group has a nonzero advantage");
    }
  double secs = seconds_since(t0);
  c.expect(secs < 1.0, "runtime over 1 s");
  return c.done(std::to_string(vectors) + " reward vectors, " + num(secs, 4) + " s");
}

// Random small policies and batches; both losses checked every trial.
Outcome gradient_fidelity() {
  auto t0 = std::chrono::steady_clock::now();
  Check c;
  double worst = 0.0;
  const HeadFamily heads[] = {HeadFamily::tokenized, HeadFamily::gaussian, HeadFamily::laplace};
  for (int trial = 0; trial < 100; ++trial) {
    Rng gen(2024, {static_cast<std::uint64_t>(trial)});
    HeadFamily head = heads[gen.below(3)];
    std::size_t adim = head == HeadFamily::tokenized ? 2 + gen.below(3) : 1 + gen.below(2);
    std::vector<std::size_t> hidden;
    for (std::size_t l = gen.below(3); l > 0; --l) hidden.push_back(2 + gen.below(5));
    auto sampler = make_policy(head, 3, adim, hidden, gen.next());
    auto rollouts = walk_rollouts(sampler, 2 + static_cast<int>(gen.below(4)), 1 + static_cast<int>(gen.below(3)),
                                  gen.next());
    auto p = sampler;
    fixtures::jiggle(p, gen.next(), 0.05);

    std::vector<rl::Sample> samples;
    for (const auto& r : rollouts) samples.push_back({r, 0.0, gen.uniform(-1.5, 1.5), 0});
    std::vector<const rl::Sample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    auto mode = gen.below(2) ? rl::RatioMode::sequence : rl::RatioMode::per_step;
    {
      diffcore::Graph g;
      rl::ppo_minibatch(g, p, ptrs, 0.2, mode);
      auto res = diffcore::grad_check(g, 1e-4);
      worst = std::max(worst, res.max_rel_error);
      c.expect(res.passed, "ppo_loss trial " + std::to_string(trial));
    }
    std::vector<supervised::Pair> pairs;
    for (const auto& r : rollouts) {
      auto enc = policy::episode_encodings(p, r.goal, r.observations, r.actions);
      for (std::size_t t = 0; t < enc.size(); ++t) pairs.push_back({enc[t], r.actions[t]});
    }
    auto kind = supervised::LossKind::nll;
    if (head != HeadFamily::tokenized && gen.below(2)) kind = gen.below(2) ? supervised::LossKind::l1 : supervised::LossKind::mse;
    {
      diffcore::Graph g;
      supervised::imitation_loss(g, p, pairs, kind);
      auto res = diffcore::grad_check(g, 1e-4);
      worst = std::max(worst, res.max_rel_error);
      c.expect(res.passed, "imitation_loss trial " + std::to_string(trial));
    }
  }
  double secs = seconds_since(t0);
  c.expect(secs < 60.0, "runtime over 1 min");
  return c.done("100 trials, max rel error " + [&] {
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << worst;
    return os.str();
  }() + ", " + num(secs, 2) + " s");
}

// A real fill from a fresh snapshot: ratios are exactly 1 and the minibatch
// gradient equals -mean_i A_i grad log pi(tau_i).
Outcome on_policy_identity() {
  Check c;
  double worst = 0.0;
  int samples_checked = 0;
  for (auto head : {HeadFamily::tokenized, HeadFamily::gaussian, HeadFamily::laplace}) {
    auto p = make_policy(head, 3, head == HeadFamily::tokenized ? 4 : 2, {8, 8}, 31);
    rl::RiptConfig cfg;
    cfg.K = 4;
    cfg.B = 16;
    cfg.minibatch = 8;
    auto ctx = contexts_with_ids({0, 1, 2, 3, 4, 5});
    policy::PolicySnapshot snap(p);
    auto fill = rl::dynamic_fill(snap.policy(), WalkWorld{3, 3}, std::span<const envsuite::Context>(ctx), cfg, 5);
    c.expect(!fill.dataset.empty(), "empty fill");
    for (const auto& s : fill.dataset) {
      c.expect(rl::sequence_ratio(p, s.rollout) == 1.0, "sequence ratio != 1");
      ++samples_checked;
    }
    std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(cfg.minibatch), fill.dataset.size());
    std::vector<const rl::Sample*> mb;
    for (std::size_t i = 0; i < m; ++i) mb.push_back(&fill.dataset[i]);

    reset_grads(p);
    diffcore::Graph g;
    auto terms = rl::ppo_minibatch(g, p, mb, cfg.epsilon, rl::RatioMode::sequence);
    for (double r : g.value(terms.ratios).values) c.expect(r == 1.0, "minibatch ratio != 1");
    g.backward(terms.loss);
    auto got = grads_of(p);

    reset_grads(p);
    policy::Encoder enc = p.encoder();
    for (const auto* s : mb) {
      const auto& r = s->rollout;
      diffcore::Graph h;
      std::vector<double> x;
      for (std::size_t t = 0; t < r.actions.size(); ++t) {
        auto row = enc.encode(r.observations[t], r.goal, std::span<const envsuite::Action>(r.actions).first(t));
        x.insert(x.end(), row.begin(), row.end());
      }
      auto xv = h.input(diffcore::Tensor({r.actions.size(), enc.size()}, x));
      h.backward(h.scale(h.sum(p.log_probs(h, xv, r.actions)), -s->advantage / static_cast<double>(m)));
    }
    auto want = grads_of(p);
    double scale = 0.0, diff = 0.0;
    for (std::size_t i = 0; i < want.size(); ++i) {
      scale = std::max(scale, std::fabs(want[i]));
      diff = std::max(diff, std::fabs(got[i] - want[i]));
    }
    c.expect(scale > 0.0, "zero reference gradient");
    double rel = scale > 0.0 ? diff / scale : 1.0;
    worst = std::max(worst, rel);
    c.expect(rel < 1e-6, std::string(policy::head_name(head)) + " gradient rel error " + std::to_string(rel));
  }
  std::ostringstream os;
  os << samples_checked << " samples with ratio 1, gradient rel error " << std::scientific << std::setprecision(2)
     << worst;
  return c.done(os.str());
}

Outcome clip_deadzone() {
  Check c;
  int cases = 0;
  for (auto head : {HeadFamily::tokenized, HeadFamily::gaussian, HeadFamily::laplace}) {
    auto p = make_policy(head, 3, head == HeadFamily::tokenized ? 4 : 2, {6}, 41);
    for (const auto& base : walk_rollouts(p, 4, 3, 9))
      for (auto [shift, A] : {std::pair{0.4, 1.0}, {-0.4, -1.0}, {3.0, 0.5}, {-3.0, -2.0}}) {
        rl::Rollout r = base;
        r.logprob_sum -= shift;  // ratio = e^shift, outside [0.8, 1.2]
        reset_grads(p);
        diffcore::Graph g;
        g.backward(rl::ppo_loss(g, p, r, A, 0.2, rl::RatioMode::sequence));
        for (double v : grads_of(p)) c.expect(v == 0.0, "nonzero gradient in the clip region");
        ++cases;
      }
  }
  return c.done(std::to_string(cases) + " clipped samples, all gradients exactly 0");
}

Outcome rejection_invariants() {
  Check c;
  int fills = 0, underfull = 0;
  for (int K : {2, 4, 8}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      // Context 0: coin-flip rewards, 1: always succeed, 2: always fail.
      auto p = make_policy(HeadFamily::tokenized, 1, 4, {}, seed);
      fixtures::set_constant_head(p, {0.0, 0.0, 0.0, 0.0});
      rl::RiptConfig cfg;
      cfg.K = K;
      cfg.B = 4 * K;
      cfg.attempt_cap = seed % 2 ? 6 : 0;
      auto ctx = contexts_with_ids({0, 1, 2});
      auto f = rl::dynamic_fill(p, OneStepWorld{{0, 1, 2}}, std::span<const envsuite::Context>(ctx), cfg, seed);
      ++fills;
      std::map<int, std::set<double>> rewards;
      for (const auto& s : f.dataset) {
        rewards[s.group].insert(s.rollout.reward);
        c.expect(std::fabs(s.advantage) >= 1.0 / (K - 1) - 1e-12, "|A| below 1/(K-1)");
      }
      for (const auto& [g, rs] : rewards) c.expect(rs.size() == 2, "accepted group with uniform rewards");
      bool full = static_cast<int>(f.dataset.size()) == cfg.B;
      c.expect(full == (f.stats.status == rl::FillStatus::filled), "size/status mismatch");
      c.expect(full || f.stats.status != rl::FillStatus::filled, "short batch not flagged");
      underfull += full ? 0 : 1;
    }
  }
  // Negative test: rejection off admits an all-success group.
  auto p = make_policy(HeadFamily::tokenized, 1, 4, {}, 1);
  rl::RiptConfig cfg;
  cfg.K = 4;
  cfg.B = 8;
  cfg.rejection = false;
  auto ctx = contexts_with_ids({1});
  auto f = rl::dynamic_fill(p, OneStepWorld{{0, 1}}, std::span<const envsuite::Context>(ctx), cfg, 3);
  int zero = 0;
  for (const auto& s : f.dataset) zero += s.advantage == 0.0;
  c.expect(zero == 8 && f.stats.zero_advantage_samples == 8, "rejection off should keep zero-advantage samples");
  return c.done(std::to_string(fills) + " fills (" + std::to_string(underfull) +
                " flagged short); rejection off kept " + std::to_string(zero) + " zero-advantage samples");
}

// Two arms, arm 0 wins; head starts at 50/50.
Outcome bandit_convergence() {
  auto t0 = std::chrono::steady_clock::now();
  Check c;
  std::string detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    auto p = make_policy(HeadFamily::tokenized, 1, 2, {}, seed);
    fixtures::set_constant_head(p, {0.0, 0.0});
    rl::RiptConfig cfg;
    cfg.K = 8;
    cfg.B = 32;
    cfg.N = 1;
    cfg.M = 30;
    cfg.lr_trunk = cfg.lr_head = 0.05;
    cfg.seed = seed;
    auto enc = p.encoder().encode({1.0}, 0, {});
    int reached = -1;
    rl::TrainHooks hooks;
    hooks.on_step = [&](const policy::Policy& cur, const rl::StepMetrics& m) {
      if (reached < 0 && std::exp(policy::action_logprob(cur, enc, envsuite::Action::discrete(0))) > 0.99)
        reached = m.step + 1;
    };
    auto ctx = contexts_with_ids({0});
    rl::ript_train(p, OneStepWorld{{0}}, std::span<const envsuite::Context>(ctx), cfg, hooks);
    double pw = std::exp(policy::action_logprob(p, enc, envsuite::Action::discrete(0)));
    c.expect(pw > 0.99 && reached > 0, "seed " + std::to_string(seed) + " p = " + num(pw, 4));
    detail += "seed " + std::to_string(seed) + ": p=" + num(pw, 4) + " at step " + std::to_string(reached) + "; ";
  }
  double secs = seconds_since(t0);
  c.expect(secs < 60.0, "runtime over 1 min");
  return c.done(detail + num(secs, 2) + " s");
}

Outcome pipeline_keydoor(const fs::path& work) {
  auto t0 = std::chrono::steady_clock::now();
  Check c;
  auto runs = harness::run_pipeline(load("keydoor.ini"), work / "keydoor");
  double sft = mean_field(runs, &harness::RunSummary::sr_sft);
  double ript = mean_field(runs, &harness::RunSummary::sr_ript);
  double secs = seconds_since(t0);
  c.expect(runs.size() == 3, "expected 3 seeds");
  c.expect(100.0 * (ript - sft) >= 10.0, "gain below 10 points");
  c.expect(secs < 15 * 60.0, "runtime over 15 min");
  return c.done("sft " + num(sft) + " -> ript " + num(ript) + " (+" + num(100.0 * (ript - sft), 1) + " points), " +
                num(secs, 0) + " s");
}

Outcome few_shot_transfer(const fs::path& work) {
  auto t0 = std::chrono::steady_clock::now();
  Check c;
  auto cfg = load("cross_scenario.ini");
  c.expect(cfg.ript.M <= 50, "more than 50 outer steps configured");
  c.expect(cfg.seeds.size() == 3, "expected 3 seeds");
  auto cells = harness::transfer_experiment(cfg, "cross_scenario", {1}, work / "cross_scenario");
  const auto& cell = cells.at(1);
  double sft = harness::mean_of(cell.sft), ript = harness::mean_of(cell.ript);
  double secs = seconds_since(t0);
  c.expect(sft <= 0.30, "1-shot SFT above 30%");
  c.expect(ript >= 0.80, "RIPT below 80%");
  c.expect(secs < 10 * 60.0, "runtime over 10 min");
  return c.done("1-shot sft " + num(sft) + " -> ript " + num(ript) + " in <= " + std::to_string(cfg.ript.M) +
                " steps, " + num(secs, 0) + " s");
}

Outcome dynamic_sampling(const fs::path& work) {
  Check c;
  auto cfg = load("keydoor.ini");
  c.expect(cfg.suite.n_tasks == 8 && cfg.seeds.size() == 3, "expected the 8-task suite and 3 seeds");
  auto t = harness::ablation_dynamic_sampling(cfg, work / "dynamic_sampling");
  double on = harness::mean_of(t.at("on").ript), off = harness::mean_of(t.at("off").ript);
  c.expect(on >= off, "rejection on scored below rejection off");
  return c.done("on " + num(on) + " vs off " + num(off) + " (sft " + num(harness::mean_of(t.at("on").sft)) + ")");
}

Outcome context_size(const fs::path& work) {
  Check c;
  auto cfg = load("keydoor.ini");
  std::vector<int> sizes{1, 5, 25};
  auto t = harness::ablation_context_size(cfg, sizes, work / "context_size");
  std::vector<double> sr;
  for (int s : sizes) sr.push_back(harness::mean_of(t.at(std::to_string(s)).ript));
  int inversions = 0;
  for (std::size_t i = 1; i < sr.size(); ++i)
    if (sr[i] < sr[i - 1]) {
      ++inversions;
      c.expect(100.0 * (sr[i - 1] - sr[i]) <= 2.0, "inversion larger than 2 points");
    }
  c.expect(inversions <= 1, "more than one inversion");
  return c.done("sizes 1/5/25: " + num(sr[0]) + " / " + num(sr[1]) + " / " + num(sr[2]) + " (sft " +
                num(harness::mean_of(t.at("1").sft)) + ")");
}

Outcome noise(const fs::path& work) {
  Check c;
  auto cfg = load("noise.ini");
  std::vector<double> scales = cfg.noise_scales;
  c.expect(scales.size() >= 2 && scales.front() == 0.0, "scales must start at 0");
  c.expect(std::find(scales.begin(), scales.end(), 1.0) != scales.end(), "scale 1.0 missing");
  auto t = harness::ablation_noise(cfg, scales, work / "noise");
  double zero = harness::mean_of(t.at(harness::scale_key(0.0)).ript);
  double one = harness::mean_of(t.at(harness::scale_key(1.0)).ript);
  double top = harness::mean_of(t.at(harness::scale_key(scales.back())).ript);
  double sft = harness::mean_of(t.at(harness::scale_key(0.0)).sft);
  c.expect(std::fabs(one - zero) * 100.0 <= 5.0, "scale 1.0 more than 5 points from scale 0");
  c.expect(top > sft, "largest scale not above SFT");
  return c.done("scale 0 " + num(zero) + ", 1.0 " + num(one) + ", " + harness::scale_key(scales.back()) + " " +
                num(top) + " (sft " + num(sft) + ")");
}

Outcome regression_head(const fs::path& work) {
  Check c;
  // Synthetic Laplace residuals around a fixed mean.
  std::string fits;
  for (double b : {0.1, 0.2, 0.4}) {
    auto p = make_policy(HeadFamily::laplace, 2, 2, {8}, 77);
    Rng rng(13, {static_cast<std::uint64_t>(b * 1000)});
    std::vector<std::vector<double>> encs;
    std::vector<envsuite::Action> acts;
    for (int i = 0; i < 2000; ++i) {
      auto x = p.encoder().encode({rng.uniform(0, 1), rng.uniform(0, 1)}, 0, {});
      diffcore::Graph g;
      auto mean = g.value(p.build(g, g.input(diffcore::Tensor({1, x.size()}, x))).mean).values;
      acts.push_back(envsuite::Action::continuous({mean[0] + b * rng.laplace(), mean[1] + b * rng.laplace()}));
      encs.push_back(std::move(x));
    }
    policy::fit_scale_head(p, encs, acts, {});
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < encs.size(); i += 100) {
      diffcore::Graph g;
      for (double s : g.value(p.build(g, g.input(diffcore::Tensor({1, encs[i].size()}, encs[i]))).sigma).values) {
        sum += s;
        ++n;
      }
    }
    double got = sum / n;
    c.expect(std::fabs(got / b - 1.0) <= 0.10, "scale " + num(b, 2) + " fitted as " + num(got, 4));
    fits += num(b, 2) + "->" + num(got, 3) + " ";
  }
  auto runs = harness::run_pipeline(load("pointreach.ini"), work / "pointreach");
  double sft = mean_field(runs, &harness::RunSummary::sr_sft);
  double ript = mean_field(runs, &harness::RunSummary::sr_ript);
  c.expect(runs.size() == 3, "expected 3 seeds");
  c.expect(100.0 * (ript - sft) >= 10.0, "RIPT gain below 10 points");
  return c.done("scale fits " + fits + "; sft " + num(sft) + " -> ript " + num(ript) + " (+" +
                num(100.0 * (ript - sft), 1) + " points)");
}

Outcome determinism(const fs::path& work) {
  Check c;
  auto cfg = load("keydoor.ini");
  cfg.seeds = {4};
  cfg.ript.M = 6;
  cfg.eval_contexts_per_task = 10;
  cfg.log_wall_time = false;
  cfg.ript.log_wall_time = false;
  std::size_t bytes = 0;
  for (int workers : {1, 2}) {
    cfg.ript.workers = workers;
    std::string tag = "determinism_w" + std::to_string(workers);
    harness::run_pipeline(cfg, work / (tag + "_a"));
    harness::run_pipeline(cfg, work / (tag + "_b"));
    for (const char* f : {"ript_metrics.jsonl", "sft_log.jsonl", "eval_ript.jsonl"}) {
      auto a = fixtures::slurp(work / (tag + "_a") / "seed_4" / f);
      auto b = fixtures::slurp(work / (tag + "_b") / "seed_4" / f);
      c.expect(!a.empty() && a == b, std::string(f) + " differs with " + std::to_string(workers) + " workers");
      bytes += a.size();
    }
  }
  return c.done("repeat runs byte-identical for 1 and 2 workers (" + std::to_string(bytes) + " bytes compared)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  fs::path work = fs::temp_directory_path() / "ript_acceptance";
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory for training runs");
  app.add_option("--only", only, "run just these criteria");
  CLI11_PARSE(app, argc, argv);
  fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"RLOO oracle equivalence", rloo_oracle},
      {"gradient fidelity", gradient_fidelity},
      {"on-policy identity", on_policy_identity},
      {"clip deadzone", clip_deadzone},
      {"rejection invariants", rejection_invariants},
      {"bandit convergence", bandit_convergence},
      {"KEYDOOR pipeline gain", [&] { return pipeline_keydoor(work); }},
      {"few-shot cross-scenario", [&] { return few_shot_transfer(work); }},
      {"dynamic-sampling ablation", [&] { return dynamic_sampling(work); }},
      {"context-size ablation", [&] { return context_size(work); }},
      {"noise ablation", [&] { return noise(work); }},
      {"regression head", [&] { return regression_head(work); }},
      {"determinism", [&] { return determinism(work); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
