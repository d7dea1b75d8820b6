#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dtmdp/offline_rl.hpp"

namespace dtmdp {

struct FqeOptions {
  double tol = 1e-5;
  int max_rounds = 500;
};

struct FqeEstimate {
  QFunction qhat;
  std::string target_policy_id;
  double initial_value = 0.0;
  int rounds = 0;
  bool converged = false;
};

/// Fitted Q-evaluation of `policy` on held-out trajectories:
/// Q(s_t, a_t) <- r_t + gamma * sum_a' pi(a'|s_{t+1}) Q(s_{t+1}, a'), with 0
/// after the last step. Tabular policies get an exact per-(s, a) mean update;
/// network policies refit a fresh-seeded net each round with
/// `cfg.target_update_interval` Adam steps (at most cfg.iterations in total).
/// Throws Error(EmptyData).
FqeEstimate fqe(const QPolicy& policy, std::span<const AbstractTrajectory> eval_trajs,
                const TrainConfig& cfg, const FqeOptions& opts = {},
                std::string target_policy_id = {});

double initial_value_score(const FqeEstimate& est) noexcept;

/// Mean over trajectories of sum_a pi(a|s_0) Q(s_0, a).
double initial_value(const QPolicy& policy, const QFunction& qhat,
                     std::span<const AbstractTrajectory> trajs);

struct PolicyCandidate {
  std::string id;
  std::string scheme;
  std::string reward_mode;
  std::string learner;
  QPolicy policy;
};

struct RankedPolicy {
  std::string id;
  std::string scheme;
  std::string reward_mode;
  std::string learner;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based
};

/// Scores every candidate with FQE and returns the best min(k, n), sorted by
/// score descending with ties broken by id. Throws NoCandidates /
/// InvalidArgument (k == 0).
std::vector<RankedPolicy> rank_policies(std::span<const PolicyCandidate> candidates,
                                        std::span<const AbstractTrajectory> eval_trajs,
                                        const TrainConfig& cfg, std::size_t k,
                                        const FqeOptions& opts = {});

nlohmann::json ranking_to_json(std::span<const RankedPolicy> ranking);
std::string ranking_to_csv(std::span<const RankedPolicy> ranking);

}  // namespace dtmdp
