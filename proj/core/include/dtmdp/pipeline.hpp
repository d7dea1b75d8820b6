#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtmdp/abstraction.hpp"
#include "dtmdp/context_engine.hpp"
#include "dtmdp/irl.hpp"
#include "dtmdp/offline_rl.hpp"
#include "dtmdp/ope.hpp"
#include "dtmdp/simenv.hpp"

namespace dtmdp {

/// One closed-loop arm: the agent alone (empty policy) or with a policy
/// from the grid driving the listed strategies.
struct ArmSpec {
  std::string id;
  std::string policy;
  StrategySet strategies;
};

struct PipelineConfig {
  std::uint64_t master_seed = 7;

  struct Paths {
    /// Optional external corpus; when empty the collect stage simulates one.
    std::string corpus;
    /// Optional single graph for an external corpus.
    std::string graph;
    std::string artifacts = "artifacts";
  } paths;

  struct Scheme {
    SchemeKind kind = SchemeKind::Topology;
    bool with_hubs = true;
    bool with_hmm = false;
    std::vector<std::size_t> hmm_states{2, 3, 4, 6};
    /// "candidate_set" or "full_vocabulary" (Name/NameType only).
    std::string action_space = "candidate_set";
    /// Distance used when none exists. Unset: the node count for simulated
    /// corpora, else the per-graph default.
    std::optional<double> unreachable_sentinel;
  } scheme;

  struct Irl {
    RankingSignal signal = RankingSignal::MeanFpcRce;
    double margin = 5.0;
    std::size_t max_pairs = 4000;
    /// "standardize" (z-score r-hat over the training split) or "none".
    std::string reward_scaling = "standardize";
    RewardTrainConfig train;
  } irl;

  struct Rl {
    std::vector<Learner> learners{Learner::Cql, Learner::Bc};
    std::vector<RewardMode> reward_modes{RewardMode::IrlPerTurn, RewardMode::SparseFinal,
                                         RewardMode::Combined};
    TrainConfig train;
    double temperature = 1.0;
    double lambda = 1.0;
    /// Clone only trajectories with a correct root cause.
    bool bc_successful_only = true;
  } rl;

  struct Ope {
    double holdout_fraction = 0.25;
    std::size_t k = 3;
    TrainConfig train;
    FqeOptions options;
  } ope;

  CeConfig ce;

  struct Sim {
    ScenarioConfig scenario;
    EpisodeConfig episode;
    std::size_t train_scenarios = 120;
    std::size_t train_trials = 20;
    std::size_t test_scenarios = 40;
    std::size_t trials = 15;
    bool write_audit = false;
    std::vector<ArmSpec> arms;
  } sim;

  struct Eval {
    int n_boot = 200;
    double alpha = 0.05;
  } eval;

  struct Robustness {
    bool enabled = true;
    std::vector<std::size_t> expert_counts{100, 200, 300, 400};
  } robustness;

  PipelineConfig();

  /// Parses and validates; every problem is reported with its field path in
  /// a single Error(ConfigInvalid).
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

/// Id of a grid policy, e.g. "cql-irl" or "bc".
std::string policy_id(Learner learner, RewardMode mode);

/// The workflow stages over one artifacts directory. Every stage writes
/// manifests/<stage>.json with input, config and artifact hashes.
class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, std::filesystem::path out_dir);

  const PipelineConfig& config() const noexcept { return cfg_; }
  const std::filesystem::path& out_dir() const noexcept { return out_; }

  void collect();
  void abstract();
  void train_reward();
  void relabel();
  void train_policy();
  void rank();
  void simulate();
  void evaluate();
  void robustness();
  /// All stages in order; returns (and writes) the arm summary.
  nlohmann::json reproduce();

  /// Stage names in execution order.
  static const std::vector<std::string>& stages();
  void run_stage(const std::string& name);

 private:
  template <class Body>
  void stage(const std::string& name, Body&& body);

  std::filesystem::path path(const std::string& rel) const { return out_ / rel; }
  std::filesystem::path corpus_path() const;
  std::uint64_t seed_for(const std::string& stage) const;
  void write_manifest(const std::string& stage, const std::vector<std::string>& inputs,
                      const std::vector<std::string>& artifacts) const;
  SchemeSpec load_scheme_spec(bool for_live_episodes) const;

  PipelineConfig cfg_;
  std::filesystem::path out_;
};

/// Writes `text` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace dtmdp
