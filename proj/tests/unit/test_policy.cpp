#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "ript/diffcore/grad_check.hpp"
#include "ript/policy/queries.hpp"
#include "support.hpp"

using namespace ript;
using namespace ript::policy;
using ript::fixtures::make_policy;
using ript::fixtures::set_constant_head;
using ript::fixtures::set_constant_sigma;
using envsuite::Action;

namespace {

std::vector<double> random_encoding(const Policy& p, Rng& rng) {
  std::vector<double> x(p.encoder().size());
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  return x;
}

std::vector<double> sigma_of(const Policy& p, const std::vector<double>& x) {
  Graph g;
  auto heads = p.build(g, g.input(Tensor::row(x)));
  return g.value(heads.sigma).values;
}

std::vector<double> logits_of(const Policy& p, const std::vector<double>& x) {
  Graph g;
  return g.value(p.build(g, g.input(Tensor::row(x))).logits).values;
}

}  // namespace

TEST(Sample, UniformLogitsGiveMinusLnFour) {
  auto p = make_policy(HeadFamily::tokenized, 3, 4, {}, 1);
  set_constant_head(p, {0, 0, 0, 0});
  Rng rng(2);
  std::vector<double> x(p.encoder().size(), 0.5);
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(sample_action(p, x, rng).logprob, -std::log(4.0), 1e-15);
}

TEST(Sample, LaplaceDensityPeak) {
  auto p = make_policy(HeadFamily::laplace, 2, 2, {}, 1);
  set_constant_head(p, {0.3, -0.4});
  set_constant_sigma(p, {0.5, 0.5});
  std::vector<double> x(p.encoder().size(), 0.1);
  // -ln(2 * 0.5) = 0 per dimension
  EXPECT_NEAR(action_logprob(p, x, Action::continuous({0.3, -0.4})), 0.0, 1e-12);
}

TEST(Sample, CategoricalFrequenciesMatchSoftmax) {
  auto p = make_policy(HeadFamily::tokenized, 3, 4, {}, 1);
  set_constant_head(p, {0.5, -0.2, 1.0, 0.0});
  std::vector<double> x(p.encoder().size(), 0.0);
  Graph g;
  auto probs = g.value(g.softmax(g.input(Tensor::row({0.5, -0.2, 1.0, 0.0})))).values;
  Rng rng(123);
  const int n = 100000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(sample_action(p, x, rng).action.token)]++;
  for (std::size_t k = 0; k < 4; ++k) {
    double sd = std::sqrt(n * probs[k] * (1 - probs[k]));
    EXPECT_NEAR(counts[k], n * probs[k], 3 * sd) << "token " << k;
  }
}

TEST(Logprob, HandEvaluatedSoftmax) {
  auto p = make_policy(HeadFamily::tokenized, 2, 3, {}, 1);
  set_constant_head(p, {std::log(2.0), 0.0, 0.0});
  std::vector<double> x(p.encoder().size(), 0.3);
  EXPECT_NEAR(action_logprob(p, x, Action::discrete(0)), std::log(0.5), 1e-15);
  EXPECT_NEAR(action_logprob(p, x, Action::discrete(1)), std::log(0.25), 1e-15);
}

TEST(Logprob, GaussianAtOneSigma) {
  auto p = make_policy(HeadFamily::gaussian, 2, 2, {}, 1);
  set_constant_head(p, {0.2, -0.1});
  set_constant_sigma(p, {0.4, 0.7});
  std::vector<double> x(p.encoder().size(), -0.2);
  double expected = 0.0;
  for (double s : {0.4, 0.7}) expected += -0.5 - 0.5 * std::log(2 * std::numbers::pi) - std::log(s);
  EXPECT_NEAR(action_logprob(p, x, Action::continuous({0.6, 0.6})), expected, 1e-12);
}

TEST(Logprob, MatchesSampledLogprobExactly) {
  Rng rng(5);
  for (auto head : {HeadFamily::tokenized, HeadFamily::gaussian, HeadFamily::laplace}) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      auto p = make_policy(head, 4, head == HeadFamily::tokenized ? 5 : 2, {8, 8}, s, 3, 2);
      for (int i = 0; i < 20; ++i) {
        auto x = random_encoding(p, rng);
        auto drawn = sample_action(p, x, rng);
        EXPECT_EQ(drawn.logprob, action_logprob(p, x, drawn.action));
      }
    }
  }
}

TEST(Logprob, OutOfVocabularyThrows) {
  auto p = make_policy(HeadFamily::tokenized, 2, 3, {4}, 1);
  std::vector<double> x(p.encoder().size(), 0.0);
  EXPECT_THROW(action_logprob(p, x, Action::discrete(3)), std::out_of_range);
  auto q = make_policy(HeadFamily::gaussian, 2, 2, {4}, 1);
  std::vector<double> y(q.encoder().size(), 0.0);
  EXPECT_THROW(action_logprob(q, y, Action::continuous({1.0})), std::out_of_range);
}

TEST(SequenceLogprob, AddsPerStepTerms) {
  // p(token 0) = 1 / (1 + (e - 1)) = 1/e, so each step contributes -1.
  auto p = make_policy(HeadFamily::tokenized, 1, 2, {}, 1);
  set_constant_head(p, {0.0, std::log(std::numbers::e - 1.0)});
  std::vector<envsuite::Observation> obs{{0.0}, {0.5}, {1.0}};
  std::vector<Action> acts{Action::discrete(0), Action::discrete(0)};
  EXPECT_NEAR(sequence_logprob(p, 0, obs, acts), -2.0, 1e-12);
  EXPECT_EQ(sequence_logprob(p, 0, std::span(obs).first(1), std::span<const Action>{}), 0.0);
}

TEST(SequenceLogprob, EqualsStepByStepReplay) {
  Rng rng(8);
  for (auto head : {HeadFamily::tokenized, HeadFamily::gaussian, HeadFamily::laplace}) {
    for (std::uint64_t s = 0; s < 10; ++s) {
      std::size_t ad = head == HeadFamily::tokenized ? 4 : 2;
      auto p = make_policy(head, 3, ad, {16, 16}, s, 2, 2);
      int goal = static_cast<int>(s % 2);
      std::size_t T = 1 + rng.below(12);
      std::vector<envsuite::Observation> obs;
      std::vector<Action> acts;
      for (std::size_t t = 0; t <= T; ++t) obs.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
      for (std::size_t t = 0; t < T; ++t) {
        auto x = p.encoder().encode(obs[t], goal, acts);
        acts.push_back(sample_action(p, x, rng).action);
      }
      double replay = 0.0;
      for (std::size_t t = 0; t < T; ++t)
        replay += action_logprob(p, p.encoder().encode(obs[t], goal, std::span(acts).first(t)), acts[t]);
      EXPECT_EQ(sequence_logprob(p, goal, obs, acts), replay);
    }
  }
}

TEST(Greedy, LowestIndexTieBreak) {
  auto p = make_policy(HeadFamily::tokenized, 2, 3, {}, 1);
  set_constant_head(p, {0.1, 0.9, 0.9});
  std::vector<double> x(p.encoder().size(), 0.0);
  EXPECT_EQ(greedy_action(p, x).token, 1);
}

TEST(Greedy, RegressionReturnsMean) {
  auto p = make_policy(HeadFamily::laplace, 2, 2, {}, 1);
  set_constant_head(p, {0.25, -0.75});
  set_constant_sigma(p, {2.0, 3.0});
  std::vector<double> x(p.encoder().size(), 0.4);
  EXPECT_EQ(greedy_action(p, x).values, (std::vector<double>{0.25, -0.75}));
}

TEST(Greedy, ShiftInvariantAndSeedIndependent) {
  Rng rng(3);
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto p = make_policy(HeadFamily::tokenized, 5, 4, {8}, s);
    auto x = random_encoding(p, rng);
    int before = greedy_action(p, x).token;
    auto q = p;
    for (auto& b : q.head_parameters()[1]->values) b += 3.7;
    EXPECT_EQ(greedy_action(q, x).token, before);
    auto l = logits_of(p, x);
    EXPECT_EQ(before, static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin()));
  }
}

TEST(Properties, SoftmaxSumsToOne) {
  Rng rng(4);
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto p = make_policy(HeadFamily::tokenized, 6, 1 + rng.below(8), {12}, s);
    fixtures::jiggle(p, s, 3.0);
    auto x = random_encoding(p, rng);
    for (auto& v : x) v *= 10;
    Graph g;
    auto probs = g.value(g.softmax(p.build(g, g.input(Tensor::row(x))).logits)).values;
    double total = 0.0;
    for (double v : probs) total += v;
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Properties, SigmaAboveFloor) {
  Rng rng(6);
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto p = make_policy(HeadFamily::gaussian, 3, 2, {8}, s);
    fixtures::jiggle(p, s, 20.0);
    for (double v : sigma_of(p, random_encoding(p, rng))) EXPECT_GE(v, 1e-3);
  }
}

// 1-D densities integrated by the trapezoid rule on [mu - 40 sigma, mu + 40 sigma].
TEST(Properties, DensitiesIntegrateToOne) {
  for (auto head : {HeadFamily::gaussian, HeadFamily::laplace}) {
    for (double sigma : {0.05, 0.3, 1.7}) {
      auto p = make_policy(head, 1, 1, {}, 1);
      set_constant_head(p, {0.2});
      set_constant_sigma(p, {sigma});
      std::vector<double> x(p.encoder().size(), 0.0);
      double s = sigma_of(p, x)[0];
      const int n = 80000;
      double lo = 0.2 - 40 * s, h = 80 * s / n, total = 0.0;
      for (int i = 0; i <= n; ++i) {
        double w = (i == 0 || i == n) ? 0.5 : 1.0;
        total += w * std::exp(action_logprob(p, x, Action::continuous({lo + i * h})));
      }
      EXPECT_NEAR(total * h, 1.0, 1e-4) << head_name(head) << " sigma " << sigma;
    }
  }
}

TEST(Encoder, LayoutAndGoalOneHot) {
  Encoder e{HeadFamily::tokenized, 2, 3, 4, 2};
  EXPECT_EQ(e.size(), 2u + 3u + 2u * 5u);
  std::vector<Action> hist{Action::discrete(1), Action::discrete(3)};
  auto x = e.encode({0.5, -0.5}, 2, hist);
  double goal_sum = x[2] + x[3] + x[4];
  EXPECT_EQ(goal_sum, 1.0);
  EXPECT_EQ(x[4], 1.0);
  EXPECT_EQ(x[5 + 3], 1.0);      // most recent action first
  EXPECT_EQ(x[5 + 5 + 1], 1.0);  // then the one before
  auto empty = e.encode({0, 0}, 0, {});
  EXPECT_EQ(empty[5 + 4], 1.0);  // "none" flags
  EXPECT_EQ(empty[5 + 5 + 4], 1.0);
  EXPECT_THROW(e.encode({0}, 0, {}), std::invalid_argument);
  EXPECT_THROW(e.encode({0, 0}, 3, {}), std::invalid_argument);
}

TEST(Checkpoint, PolicyRoundTrip) {
  Rng rng(1);
  for (auto head : {HeadFamily::tokenized, HeadFamily::laplace}) {
    auto p = make_policy(head, 3, head == HeadFamily::tokenized ? 4 : 2, {8, 5}, 7, 2, 1);
    fixtures::jiggle(p, 3, 0.5);
    auto q = Policy::from_checkpoint(p.to_checkpoint());
    EXPECT_TRUE(p.same_parameters(q));
    auto x = random_encoding(p, rng);
    Rng a(9), b(9);
    EXPECT_EQ(sample_action(p, x, a).logprob, sample_action(q, x, b).logprob);
  }
}

TEST(Gradients, LogProbsMatchFiniteDifferences) {
  Rng rng(12);
  for (auto head : {HeadFamily::tokenized, HeadFamily::gaussian, HeadFamily::laplace}) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      auto p = make_policy(head, 3, head == HeadFamily::tokenized ? 4 : 2, {5}, s);
      std::vector<double> xs;
      std::vector<Action> acts;
      for (int i = 0; i < 4; ++i) {
        auto x = random_encoding(p, rng);
        xs.insert(xs.end(), x.begin(), x.end());
        acts.push_back(sample_action(p, x, rng).action);
      }
      Graph g;
      g.sum(p.log_probs(g, g.input(Tensor({4, p.encoder().size()}, xs)), acts));
      auto rep = diffcore::grad_check(g, 1e-4);
      EXPECT_TRUE(rep.passed) << head_name(head) << " " << rep.max_rel_error;
    }
  }
}

namespace {

struct ScaleFixture {
  Policy p;
  std::vector<std::vector<double>> enc;
  std::vector<Action> act;
  double mean_abs_residual = 0.0;
};

ScaleFixture laplace_fixture(double b, std::uint64_t seed, int n = 4000) {
  ScaleFixture f{make_policy(HeadFamily::laplace, 3, 2, {16}, seed), {}, {}, 0.0};
  Rng rng(seed, {0xfeed});
  for (int i = 0; i < n; ++i) {
    auto x = random_encoding(f.p, rng);
    auto mu = greedy_action(f.p, x).values;
    for (auto& v : mu) {
      double r = b * rng.laplace();
      f.mean_abs_residual += std::fabs(r);
      v += r;
    }
    f.enc.push_back(std::move(x));
    f.act.push_back(Action::continuous(std::move(mu)));
  }
  f.mean_abs_residual /= 2.0 * n;
  return f;
}

double mean_sigma(const Policy& p, const std::vector<std::vector<double>>& enc) {
  double total = 0.0;
  for (const auto& x : enc)
    for (double s : sigma_of(p, x)) total += s;
  return total / (2.0 * static_cast<double>(enc.size()));
}

}  // namespace

// Maximum-likelihood Laplace scale is the mean absolute residual.
TEST(FitScale, RecoversSyntheticLaplaceScale) {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto f = laplace_fixture(0.2, seed);
    auto before_trunk = f.p.trunk_parameters()[0]->values;
    auto before_mean = f.p.head_parameters()[0]->values;
    auto r = fit_scale_head(f.p, f.enc, f.act);
    double fitted = mean_sigma(f.p, f.enc);
    EXPECT_NEAR(fitted, 0.2, 0.02) << "seed " << seed;
    EXPECT_NEAR(fitted, f.mean_abs_residual, 0.01);
    EXPECT_LE(r.final_nll, r.initial_nll);
    EXPECT_EQ(f.p.trunk_parameters()[0]->values, before_trunk);
    EXPECT_EQ(f.p.head_parameters()[0]->values, before_mean);
  }
}

TEST(FitScale, ZeroResidualsDriveSigmaToFloor) {
  auto f = laplace_fixture(0.0, 4, 200);
  auto r = fit_scale_head(f.p, f.enc, f.act, {2000, 0.05});
  EXPECT_LE(r.final_nll, r.initial_nll);
  for (const auto& x : f.enc)
    for (double s : sigma_of(f.p, x)) {
      EXPECT_GE(s, 1e-3);
      EXPECT_LT(s, 1e-3 + 1e-5);
    }
}

TEST(FitScale, RejectsTokenizedPolicy) {
  auto p = make_policy(HeadFamily::tokenized, 2, 3, {4}, 1);
  std::vector<std::vector<double>> enc{std::vector<double>(p.encoder().size(), 0.0)};
  std::vector<Action> act{Action::discrete(0)};
  EXPECT_THROW(fit_scale_head(p, enc, act), std::invalid_argument);
}

TEST(Snapshot, IsIndependentCopy) {
  auto p = make_policy(HeadFamily::tokenized, 2, 3, {4}, 1);
  PolicySnapshot snap(p);
  fixtures::jiggle(p, 1, 1.0);
  EXPECT_FALSE(snap.policy().same_parameters(p));
  auto q = make_policy(HeadFamily::tokenized, 2, 3, {4}, 1);
  EXPECT_TRUE(snap.policy().same_parameters(q));
}
