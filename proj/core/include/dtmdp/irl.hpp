#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dtmdp/abstraction.hpp"
#include "dtmdp/mlp.hpp"

namespace dtmdp {

/// Which judge score orders trajectories.
enum class RankingSignal { FpcOnly, MeanFpcRce };

std::string_view to_string(RankingSignal s) noexcept;
RankingSignal parse_ranking_signal(std::string_view text);
double ranking_score(const JudgeScores& scores, RankingSignal signal);

/// trajectory[lower] is preferred less than trajectory[higher].
struct PreferencePair {
  std::size_t lower = 0;
  std::size_t higher = 0;
  double score_gap = 0.0;

  bool operator==(const PreferencePair&) const = default;
};

/// All pairs (i, j) with score[j] - score[i] > margin, ordered by (i, j).
/// More than `max_pairs` are thinned to a seeded uniform subsample (order kept).
std::vector<PreferencePair> build_pairs(std::span<const double> scores, double margin,
                                        std::size_t max_pairs, std::uint64_t seed);
std::vector<PreferencePair> build_pairs(std::span<const AbstractTrajectory> trajs,
                                        RankingSignal signal, double margin,
                                        std::size_t max_pairs, std::uint64_t seed);

/// Learned per-step reward r(s, a) and the (optionally discounted) return.
class RewardNet {
 public:
  RewardNet() = default;
  RewardNet(FeatureLayout layout, Mlp net, double discount = 1.0);
  static RewardNet create(FeatureLayout layout, std::size_t hidden_units, std::uint64_t seed,
                          double discount = 1.0);

  const FeatureLayout& layout() const noexcept { return layout_; }
  const Mlp& net() const noexcept { return net_; }
  Mlp& net() noexcept { return net_; }
  double discount() const noexcept { return discount_; }

  double reward(std::span<const double> state, const ActionRepr& action) const;
  double trajectory_return(const AbstractTrajectory& traj) const;

 private:
  FeatureLayout layout_;
  Mlp net_;
  double discount_ = 1.0;
};

/// -log( e^{G_j} / (e^{G_i} + e^{G_j}) ) for pair (i = lower, j = higher).
double trex_loss(const RewardNet& net, const PreferencePair& pair,
                 std::span<const AbstractTrajectory> trajs);

/// Gradient of the mean batch loss with respect to net.params().
std::vector<double> trex_grad(const RewardNet& net, std::span<const PreferencePair> batch,
                              std::span<const AbstractTrajectory> trajs);

/// Fraction of pairs whose predicted returns order them correctly (strictly).
double pairwise_accuracy(const RewardNet& net, std::span<const PreferencePair> pairs,
                         std::span<const AbstractTrajectory> trajs);

struct RewardTrainConfig {
  std::size_t hidden_units = 256;
  int epochs = 100;
  double step_size = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double holdout_fraction = 0.1;
  double discount = 1.0;
};

struct RewardTrainReport {
  std::vector<double> holdout_accuracy;  // per epoch
  int best_epoch = -1;
  double best_accuracy = 0.0;
};

/// Mini-batch Adam on the mean T-REX loss; returns the snapshot with the best
/// accuracy on a seeded holdout of the pairs. Throws Error(EmptyPairSet).
RewardNet train_reward(std::span<const PreferencePair> pairs,
                       std::span<const AbstractTrajectory> trajs, FeatureLayout layout,
                       const RewardTrainConfig& cfg, RewardTrainReport* report = nullptr);

enum class RewardMode { IrlPerTurn, SparseFinal, Combined };

std::string_view to_string(RewardMode m) noexcept;
RewardMode parse_reward_mode(std::string_view text);

struct RelabelSpec {
  RewardMode mode = RewardMode::IrlPerTurn;
  /// Outcome on the 0..100 judge scale (SparseFinal / Combined).
  double outcome = 0.0;
  double lambda = 1.0;
  /// Affine map applied to r-hat before use: (r - shift) / scale.
  double irl_shift = 0.0;
  double irl_scale = 1.0;
};

struct RewardScaling {
  double shift = 0.0;
  double scale = 1.0;
};

/// Mean and population std of r-hat over every step of `trajs`; scale falls
/// back to 1 when the rewards are constant. Throws EmptyData.
RewardScaling fit_reward_scaling(std::span<const AbstractTrajectory> trajs, const RewardNet& net);

/// Rewrites per-step rewards. `net` may be null for SparseFinal.
AbstractTrajectory relabel(const AbstractTrajectory& traj, const RewardNet* net,
                           const RelabelSpec& spec);

void save_reward_net(const RewardNet& net, const std::filesystem::path& path);
RewardNet load_reward_net(const std::filesystem::path& path);

}  // namespace dtmdp
