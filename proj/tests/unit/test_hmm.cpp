#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dtmdp/error.hpp"
#include "dtmdp/hmm.hpp"
#include "oracles.hpp"

using namespace dtmdp;

TEST(Hmm, SingleStateFitIsPooledMoments) {
  oracle::Rng rng(1);
  std::normal_distribution<double> nd(2.0, 1.5);
  std::vector<ObservationSequence> seqs(4);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (auto& s : seqs)
    for (int t = 0; t < 25; ++t) {
      const double x = nd(rng);
      s.push_back({x});
      sum += x;
      sq += x * x;
      ++n;
    }
  const double mean = sum / n, var = sq / n - mean * mean;
  const auto fit = fit_hmm(seqs, 1, {});
  EXPECT_NEAR(fit.model.means[0][0], mean, 1e-9);
  EXPECT_NEAR(fit.model.variances[0][0], var, 1e-9);
  EXPECT_NEAR(fit.model.transition[0][0], 1.0, 1e-12);
  EXPECT_NEAR(fit.model.initial[0], 1.0, 1e-12);
}

TEST(Hmm, LogLikelihoodMonotoneOverIterations) {
  oracle::Rng rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    const auto truth = oracle::random_hmm(3, 2, rng);
    std::vector<ObservationSequence> seqs;
    for (int i = 0; i < 6; ++i) seqs.push_back(oracle::sample_hmm(truth, 30, rng));
    HmmFitConfig cfg;
    cfg.max_iter = 50;
    cfg.tol = 0.0;
    cfg.seed = static_cast<std::uint64_t>(rep);
    const auto fit = fit_hmm(seqs, 3, cfg);
    for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i)
      EXPECT_GE(fit.log_likelihood[i], fit.log_likelihood[i - 1] - 1e-9 * std::abs(fit.log_likelihood[i - 1]));
    EXPECT_NO_THROW(fit.model.validate());
    // Reported final value is the model's own likelihood.
    double total = 0.0;
    for (const auto& s : seqs) total += fit.model.log_likelihood(s);
    EXPECT_NEAR(fit.log_likelihood.back(), total, 1e-6 * std::abs(total));
  }
}

TEST(Hmm, RecoversWellSeparatedMeans) {
  oracle::Rng rng(3);
  Hmm truth;
  truth.initial = {0.5, 0.5};
  truth.transition = {{0.8, 0.2}, {0.3, 0.7}};
  truth.means = {{-3.0}, {3.0}};
  truth.variances = {{0.25}, {0.25}};  // separation 12 sigma
  std::vector<ObservationSequence> seqs;
  for (int i = 0; i < 200; ++i) seqs.push_back(oracle::sample_hmm(truth, 20, rng));
  HmmFitConfig cfg;
  cfg.seed = 11;
  const auto fit = fit_hmm(seqs, 2, cfg);
  std::vector<double> got{fit.model.means[0][0], fit.model.means[1][0]};
  std::sort(got.begin(), got.end());
  EXPECT_NEAR(got[0], -3.0, 0.1);
  EXPECT_NEAR(got[1], 3.0, 0.1);
}

TEST(Hmm, DeterministicGivenSeed) {
  oracle::Rng rng(4);
  const auto truth = oracle::random_hmm(2, 2, rng);
  std::vector<ObservationSequence> seqs;
  for (int i = 0; i < 5; ++i) seqs.push_back(oracle::sample_hmm(truth, 15, rng));
  HmmFitConfig cfg;
  cfg.seed = 9;
  const auto a = fit_hmm(seqs, 2, cfg), b = fit_hmm(seqs, 2, cfg);
  EXPECT_EQ(a.model.means, b.model.means);
  EXPECT_EQ(a.log_likelihood, b.log_likelihood);
}

TEST(Hmm, ErrorsOnRaggedOrDegenerateData) {
  std::vector<ObservationSequence> ragged{{{1.0}, {2.0, 3.0}}};
  try {
    fit_hmm(ragged, 2, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
  std::vector<ObservationSequence> flat{{{1.0}, {1.0}, {1.0}}};
  try {
    fit_hmm(flat, 2, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateData);
  }
  EXPECT_NO_THROW(fit_hmm(flat, 1, {}));
}

TEST(Hmm, ViterbiSingleStateIsAllZeros) {
  oracle::Rng rng(5);
  const auto h = oracle::random_hmm(1, 2, rng);
  const auto obs = oracle::sample_hmm(h, 7, rng);
  EXPECT_EQ(viterbi_decode(h, obs), std::vector<std::size_t>(7, 0));
}

TEST(Hmm, ViterbiMatchesEnumeration) {
  oracle::Rng rng(6);
  for (std::size_t k : {2u, 3u})
    for (int rep = 0; rep < 40; ++rep) {
      const std::size_t t = k == 2 ? 6 : 8;
      const auto h = oracle::random_hmm(k, 1 + rep % 2, rng);
      const auto obs = oracle::sample_hmm(h, t, rng);
      EXPECT_EQ(viterbi_decode(h, obs), oracle::brute_force_viterbi(h, obs));
    }
}

TEST(Hmm, ViterbiTiesGoToLowerIndex) {
  Hmm h;
  h.initial = {0.5, 0.5};
  h.transition = {{0.5, 0.5}, {0.5, 0.5}};
  h.means = {{0.0}, {0.0}};
  h.variances = {{1.0}, {1.0}};
  EXPECT_EQ(viterbi_decode(h, {{0.3}, {-1.0}, {2.0}}), (std::vector<std::size_t>{0, 0, 0}));
}

TEST(Hmm, ViterbiDimensionMismatch) {
  oracle::Rng rng(7);
  const auto h = oracle::random_hmm(2, 2, rng);
  EXPECT_THROW(viterbi_decode(h, {{1.0}}), Error);
  EXPECT_THROW(viterbi_decode(h, {}), Error);
}

namespace {

AbstractTrajectory topo_traj(std::size_t steps, oracle::Rng& rng) {
  std::normal_distribution<double> nd(0.0, 2.0);
  AbstractTrajectory t;
  t.scheme = SchemeKind::Topology;
  for (std::size_t i = 0; i < steps; ++i) {
    AbstractStep s;
    s.state = {nd(rng), nd(rng)};
    s.action = ActionRepr::features({nd(rng), nd(rng), nd(rng), nd(rng)});
    t.steps.push_back(s);
  }
  return t;
}

}  // namespace

TEST(Hmm, ObservationsConcatenateStateAndAction) {
  oracle::Rng rng(8);
  const auto t = topo_traj(3, rng);
  const auto obs = hmm_observations(t);
  ASSERT_EQ(obs.size(), 3u);
  EXPECT_EQ(obs[1].size(), 6u);
  EXPECT_EQ(obs[1][0], t.steps[1].state[0]);
  EXPECT_EQ(obs[1][5], t.steps[1].action.as_features()[3]);
  AbstractTrajectory idx;
  idx.steps.push_back({{0.0}, ActionRepr::index(0), {}, 0.0});
  try {
    hmm_observations(idx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SchemeMismatch);
  }
}

TEST(Hmm, AugmentAppendsViterbiOneHot) {
  oracle::Rng rng(9);
  std::vector<AbstractTrajectory> trajs;
  std::vector<ObservationSequence> obs;
  for (int i = 0; i < 10; ++i) {
    trajs.push_back(topo_traj(6, rng));
    obs.push_back(hmm_observations(trajs.back()));
  }
  HmmFitConfig cfg;
  cfg.seed = 1;
  const auto h = fit_hmm(obs, 2, cfg).model;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto aug = augment_with_hmm(trajs[i], h);
    const auto path = viterbi_decode(h, obs[i]);
    for (std::size_t t = 0; t < path.size(); ++t) {
      const auto& s = aug.steps[t].state;
      ASSERT_EQ(s.size(), 4u);
      EXPECT_EQ(s[2], path[t] == 0 ? 1.0 : 0.0);
      EXPECT_EQ(s[3], path[t] == 1 ? 1.0 : 0.0);
      EXPECT_EQ(aug.steps[t].action, trajs[i].steps[t].action);
    }
  }
}

TEST(Hmm, AugmentWithSingleStateAppendsOne) {
  oracle::Rng rng(10);
  const auto t = topo_traj(4, rng);
  const auto h = fit_hmm(std::vector<ObservationSequence>{hmm_observations(t)}, 1, {}).model;
  for (const auto& s : augment_with_hmm(t, h).steps) EXPECT_EQ(s.state.back(), 1.0);
}

TEST(Hmm, StateSelectionPrefersTrueCount) {
  oracle::Rng rng(11);
  Hmm truth;
  truth.initial = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  truth.transition = {{0.8, 0.1, 0.1}, {0.1, 0.8, 0.1}, {0.1, 0.1, 0.8}};
  truth.means = {{-6.0}, {0.0}, {6.0}};
  truth.variances = {{0.5}, {0.5}, {0.5}};
  std::vector<ObservationSequence> train, val;
  for (int i = 0; i < 60; ++i) train.push_back(oracle::sample_hmm(truth, 20, rng));
  for (int i = 0; i < 30; ++i) val.push_back(oracle::sample_hmm(truth, 20, rng));
  const std::vector<std::size_t> cands{1, 2, 3};
  HmmFitConfig cfg;
  cfg.seed = 3;
  EXPECT_EQ(select_hmm_states(train, val, cands, cfg), 3u);
}

TEST(Hmm, JsonRoundTrip) {
  oracle::Rng rng(12);
  const auto h = oracle::random_hmm(3, 2, rng);
  const auto back = hmm_from_json(hmm_to_json(h));
  EXPECT_EQ(back.means, h.means);
  EXPECT_EQ(back.transition, h.transition);
}
