#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dtmdp/data_model.hpp"
#include "dtmdp/offline_rl.hpp"

namespace dtmdp {

/// Which interventions are active.
struct StrategySet {
  bool suggest = false;     // I
  bool prune = false;       // II
  bool prioritize = false;  // III

  bool any() const noexcept { return suggest || prune || prioritize; }
  bool operator==(const StrategySet&) const = default;
};

/// Parses "I", "II", "III" tokens (also "1".."3"), e.g. ["I", "III"].
StrategySet parse_strategies(std::span<const std::string> tokens);
std::vector<std::string> strategy_tokens(const StrategySet& s);

struct CeConfig {
  StrategySet strategies;
  double suggest_percentile = 95.0;
  double prune_percentile = 85.0;
  double temperature = 1.0;

  /// Throws Error(InvalidArgument).
  void validate() const;
};

struct CeCandidate {
  Entity entity;
  ActionRepr action;
};

struct Intervention {
  std::vector<Entity> suggestions;
  std::vector<Entity> retained;
  std::vector<Entity> ordering;
  std::map<Entity, double> probs;
};

/// Threshold at the ⌈p/100 · n⌉-th smallest value (rank clamped to 1..n).
double nearest_rank_percentile(std::span<const double> values, double percentile);

/// The strategies applied to precomputed probabilities (aligned with
/// `candidates`). Throws EmptyCandidates / DimensionMismatch.
Intervention intervene_with_probs(std::span<const double> probs, std::span<const Entity> candidates,
                                  const CeConfig& cfg);

/// pi(.|state) from the policy (at cfg.temperature), then the strategies.
Intervention intervene(const QPolicy& policy, std::span<const double> state,
                       std::span<const CeCandidate> candidates, const CeConfig& cfg);

/// ReAct view of Strategy II: should the proposed action be skipped?
bool react_should_skip(const Intervention& iv, const Entity& proposed);
/// ReAct view of Strategy III: the candidate to execute.
const Entity& react_pick(const Intervention& iv);

/// Suggestion prompt text; "" for no suggestions.
std::string render_suggestion_text(std::span<const Entity> suggestions);

/// One line of the per-turn audit log.
nlohmann::json audit_record(int turn, std::span<const Entity> candidates, const Intervention& iv);

}  // namespace dtmdp
