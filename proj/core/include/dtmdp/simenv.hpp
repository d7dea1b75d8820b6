#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtmdp/abstraction.hpp"
#include "dtmdp/context_engine.hpp"
#include "dtmdp/data_model.hpp"
#include "dtmdp/offline_rl.hpp"
#include "dtmdp/topology.hpp"

namespace dtmdp {

struct ScenarioConfig {
  std::size_t n_nodes = 12;
  double edge_density = 0.15;
  std::size_t chain_length = 4;
  double evidence_noise = 0.1;

  /// Throws Error(InfeasibleConfig).
  void validate() const;
};

struct SimScenario {
  std::string scenario_id;
  std::shared_ptr<const TopologyGraph> graph;
  Entity root_cause;
  /// Root cause first, symptom last; consecutive entries are graph edges.
  std::vector<Entity> chain;
  Entity symptom;
  double evidence_noise = 0.0;
  std::uint64_t seed = 0;
};

/// Seeded random connected graph with an embedded propagation chain. Extra
/// edges never join two chain entities, so n_nodes == chain_length yields
/// exactly the chain.
SimScenario generate_scenario(const ScenarioConfig& cfg, std::uint64_t seed,
                              std::string scenario_id = {});

struct EpisodeConfig {
  int max_turns = 10;
  double epsilon = 0.3;
  /// Probability that Strategy I suggestions jump ahead of the heuristic.
  double suggestion_uptake = 0.8;

  /// Throws Error(InvalidArgument).
  void validate() const;
};

/// Policy-driven context engineering for an episode. `scheme` is rebound to
/// each scenario's graph; HMM-augmented schemes are not supported here.
struct CeSetup {
  std::shared_ptr<const QPolicy> policy;
  CeConfig ce;
  SchemeSpec scheme;
};

struct EpisodeResult {
  RawTrajectory trajectory;
  std::optional<Entity> identified_root;
  int turns_used = 0;
  int entities_explored = 0;
  JudgeScores scores;
  /// Per-turn CE audit records (empty without CE).
  std::vector<nlohmann::json> audit;
};

/// One diagnosis episode of the scripted exploration-queue agent.
EpisodeResult run_episode(const SimScenario& scn, const CeSetup* ce, const EpisodeConfig& cfg,
                          std::uint64_t seed, std::string trajectory_id = {});

/// Ground-truth scores: rce 100 iff identified == root; fpc = 100 * F1 of the
/// primary-or-cascading entities against the chain entities.
JudgeScores judge(const Assessments& assessments, const std::optional<Entity>& identified,
                  const SimScenario& scn);

nlohmann::json scenario_to_json(const SimScenario& scn);
SimScenario scenario_from_json(const nlohmann::json& j);

}  // namespace dtmdp
