#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include <gtest/gtest.h>

#include "dtmdp/error.hpp"
#include "dtmdp/irl.hpp"
#include "oracles.hpp"

using namespace dtmdp;

namespace {

// r(s, a) = s[0]: a single linear unit reading the first state feature.
RewardNet identity_reward() {
  Mlp m({2, 1}, 0);
  auto p = m.params();
  p[0] = 1.0;
  p[1] = 0.0;
  p[2] = 0.0;
  return RewardNet(FeatureLayout{1, 1}, m);
}

AbstractTrajectory with_states(std::vector<double> xs) {
  AbstractTrajectory t;
  for (double x : xs) t.steps.push_back({{x}, ActionRepr::features({0.0}), {}, 0.0});
  return t;
}

}  // namespace

TEST(Irl, EqualScoresGiveNoPairs) {
  const std::vector<double> s(10, 42.0);
  EXPECT_TRUE(build_pairs(s, 5.0, 100, 0).empty());
}

TEST(Irl, ThreeScoresThreePairs) {
  const std::vector<double> s{10, 50, 90};
  const auto p = build_pairs(s, 5.0, 100, 0);
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p[0], (PreferencePair{0, 1, 40}));
  EXPECT_EQ(p[1], (PreferencePair{0, 2, 80}));
  EXPECT_EQ(p[2], (PreferencePair{1, 2, 40}));
}

TEST(Irl, PairCountMatchesDoubleLoop) {
  oracle::Rng rng(1);
  std::uniform_real_distribution<double> u(0, 100);
  std::vector<double> s(100);
  for (auto& x : s) x = u(rng);
  std::size_t count = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s[j] - s[i] > 5.0) ++count;
  const auto pairs = build_pairs(s, 5.0, 1000000, 0);
  EXPECT_EQ(pairs.size(), count);
  for (const auto& p : pairs) {
    EXPECT_NE(p.lower, p.higher);
    EXPECT_GT(p.score_gap, 0.0);
  }
}

TEST(Irl, SubsampleIsSeededOrderedSubset) {
  oracle::Rng rng(2);
  std::uniform_real_distribution<double> u(0, 100);
  std::vector<double> s(60);
  for (auto& x : s) x = u(rng);
  const auto all = build_pairs(s, 5.0, 1000000, 0);
  const auto a = build_pairs(s, 5.0, 100, 7), b = build_pairs(s, 5.0, 100, 7), c = build_pairs(s, 5.0, 100, 8);
  ASSERT_EQ(a.size(), 100u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end(), [](auto& x, auto& y) {
    return std::pair(x.lower, x.higher) < std::pair(y.lower, y.higher);
  }));
  for (const auto& p : a) EXPECT_NE(std::find(all.begin(), all.end(), p), all.end());
}

TEST(Irl, RankingSignals) {
  EXPECT_EQ(ranking_score({60, 100}, RankingSignal::FpcOnly), 60);
  EXPECT_EQ(ranking_score({60, 100}, RankingSignal::MeanFpcRce), 80);
}

TEST(Irl, LossClosedFormValues) {
  const auto net = identity_reward();
  const std::vector<AbstractTrajectory> t{with_states({0.5}), with_states({0.2, 0.3}), with_states({std::log(3.0)}),
                                          with_states({0.0})};
  EXPECT_NEAR(trex_loss(net, {0, 1, 1}, t), std::numbers::ln2, 1e-12);
  EXPECT_NEAR(trex_loss(net, {3, 2, 1}, t), std::log(4.0 / 3.0), 1e-12);
}

TEST(Irl, LossStableForLargeReturnGaps) {
  const auto net = identity_reward();
  const std::vector<AbstractTrajectory> t{with_states({0.0}), with_states({800.0})};
  EXPECT_NEAR(trex_loss(net, {0, 1, 1}, t), 0.0, 1e-12);
  EXPECT_NEAR(trex_loss(net, {1, 0, 1}, t), 800.0, 1e-9);
}

TEST(Irl, LossAntisymmetryAndMonotonicity) {
  const auto net = identity_reward();
  double prev = std::numeric_limits<double>::infinity();
  for (double gap = -3.0; gap <= 3.0; gap += 0.5) {
    const std::vector<AbstractTrajectory> t{with_states({0.0}), with_states({gap})};
    const double fwd = trex_loss(net, {0, 1, 1}, t), back = trex_loss(net, {1, 0, 1}, t);
    EXPECT_GE(fwd + back, 2 * std::numbers::ln2 - 1e-12);
    if (gap == 0.0) {
      EXPECT_NEAR(fwd + back, 2 * std::numbers::ln2, 1e-12);
    }
    EXPECT_LT(fwd, prev);
    prev = fwd;
  }
}

TEST(Irl, DiscountWeightsLaterSteps) {
  Mlp m({2, 1}, 0);
  m.params()[0] = 1.0;
  m.params()[1] = 0.0;
  m.params()[2] = 0.0;
  const RewardNet net(FeatureLayout{1, 1}, m, 0.5);
  EXPECT_NEAR(net.trajectory_return(with_states({1.0, 1.0, 1.0})), 1.75, 1e-12);
}

TEST(Irl, GradientZeroForIdenticalTrajectories) {
  oracle::Rng rng(3);
  const FeatureLayout layout{3, 2};
  const auto net = RewardNet::create(layout, 6, 1);
  auto trajs = oracle::random_feature_trajs(1, layout, 4, rng);
  trajs.push_back(trajs[0]);
  const std::vector<PreferencePair> batch{{0, 1, 1}};
  for (double g : trex_grad(net, batch, trajs)) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Irl, GradientMatchesFiniteDifferencesAndIsBatchMean) {
  oracle::Rng rng(4);
  const FeatureLayout layout{2, 3};
  const auto net = RewardNet::create(layout, 5, 2);
  const auto trajs = oracle::random_feature_trajs(5, layout, 4, rng);
  const std::vector<PreferencePair> batch{{0, 1, 1}, {2, 3, 1}, {4, 0, 1}};
  const auto grad = trex_grad(net, batch, trajs);
  std::vector<double> p(net.net().params().begin(), net.net().params().end());
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double orig = p[k], h = 1e-5;
    p[k] = orig + h;
    const auto up = oracle::mean_trex_loss(net.net().layer_dims(), p, layout, batch, trajs, 1.0L);
    p[k] = orig - h;
    const auto dn = oracle::mean_trex_loss(net.net().layer_dims(), p, layout, batch, trajs, 1.0L);
    p[k] = orig;
    const double fd = static_cast<double>((up - dn) / (2.0L * h));
    EXPECT_LE(std::abs(grad[k] - fd), 1e-4 * std::max({std::abs(fd), std::abs(grad[k]), 1e-9}));
  }
  auto doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  const auto g2 = trex_grad(net, doubled, trajs);
  for (std::size_t k = 0; k < grad.size(); ++k) EXPECT_NEAR(g2[k], grad[k], 1e-12);
}

TEST(Irl, TrainRequiresPairs) {
  const std::vector<AbstractTrajectory> t{with_states({1.0})};
  try {
    train_reward({}, t, FeatureLayout{1, 1}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyPairSet);
  }
}

TEST(Irl, TrainingRecoversRankingAndIsDeterministic) {
  oracle::Rng rng(5);
  const auto world = oracle::random_reward_world(rng);
  auto [trajs, returns] = oracle::sample_reward_world(world, 120, rng);
  const auto [lo, hi] = std::minmax_element(returns.begin(), returns.end());
  const auto scores = oracle::to_scores(returns, *lo, *hi);
  const auto pairs = build_pairs(scores, 5.0, 3000, 1);
  RewardTrainConfig cfg;
  cfg.hidden_units = 16;
  cfg.epochs = 30;
  cfg.step_size = 3e-3;
  cfg.seed = 3;
  RewardTrainReport report;
  const FeatureLayout layout{world.n_states, world.n_actions};
  const auto net = train_reward(pairs, trajs, layout, cfg, &report);
  EXPECT_EQ(report.holdout_accuracy.size(), 30u);
  EXPECT_GE(pairwise_accuracy(net, pairs, trajs), 0.9);
  const auto again = train_reward(pairs, trajs, layout, cfg);
  EXPECT_EQ(again.net(), net.net());
}

TEST(Irl, RelabelModes) {
  const auto net = identity_reward();
  const auto t = with_states({0.1, 0.2, 0.3, 0.4});
  const auto sparse = relabel(t, nullptr, {RewardMode::SparseFinal, 100.0});
  std::vector<double> r;
  for (const auto& s : sparse.steps) r.push_back(s.reward);
  EXPECT_EQ(r, (std::vector<double>{0, 0, 0, 1}));

  const auto irl = relabel(t, &net, {RewardMode::IrlPerTurn});
  const auto comb0 = relabel(t, &net, {RewardMode::Combined, 100.0, 0.0});
  EXPECT_EQ(irl, comb0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(irl.steps[i].reward, t.steps[i].state[0], 1e-15);

  const auto comb = relabel(t, &net, {RewardMode::Combined, 50.0, 2.0});
  EXPECT_NEAR(comb.steps[3].reward, 0.4 + 2.0 * 0.5, 1e-12);
  EXPECT_NEAR(comb.steps[0].reward, 0.1, 1e-12);

  const auto scaled = relabel(t, &net, {RewardMode::IrlPerTurn, 0.0, 1.0, 0.25, 0.5});
  EXPECT_NEAR(scaled.steps[0].reward, (0.1 - 0.25) / 0.5, 1e-12);
  EXPECT_THROW(relabel(t, &net, {RewardMode::IrlPerTurn, 0.0, 1.0, 0.0, 0.0}), Error);
}

TEST(Irl, RelabelMatchesForwardOracle) {
  oracle::Rng rng(6);
  const FeatureLayout layout{3, 2};
  const auto net = RewardNet::create(layout, 8, 4);
  const auto t = oracle::random_feature_trajs(1, layout, 6, rng)[0];
  const auto out = relabel(t, &net, {RewardMode::IrlPerTurn});
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    std::vector<long double> x(t.steps[i].state.begin(), t.steps[i].state.end());
    for (double f : t.steps[i].action.as_features()) x.push_back(f);
    EXPECT_NEAR(out.steps[i].reward, static_cast<double>(oracle::mlp_forward(net.net().layer_dims(), net.net().params(), x)),
                1e-12);
  }
}

TEST(Irl, RewardScalingIsZScore) {
  const auto net = identity_reward();
  const std::vector<AbstractTrajectory> t{with_states({1.0, 3.0}), with_states({5.0, 7.0})};
  const auto sc = fit_reward_scaling(t, net);
  EXPECT_NEAR(sc.shift, 4.0, 1e-12);
  EXPECT_NEAR(sc.scale, std::sqrt(5.0), 1e-12);
  const std::vector<AbstractTrajectory> flat{with_states({2.0, 2.0})};
  EXPECT_EQ(fit_reward_scaling(flat, net).scale, 1.0);
  EXPECT_THROW(fit_reward_scaling(std::vector<AbstractTrajectory>{}, net), Error);
}

TEST(Irl, RewardNetFileRoundTrip) {
  const auto net = RewardNet::create(FeatureLayout{2, 3}, 4, 9, 0.9);
  const auto path = std::filesystem::temp_directory_path() / "dtmdp_reward_net.json";
  save_reward_net(net, path);
  const auto back = load_reward_net(path);
  EXPECT_EQ(back.net(), net.net());
  EXPECT_EQ(back.layout(), net.layout());
  EXPECT_EQ(back.discount(), 0.9);
  std::filesystem::remove(path);
}
