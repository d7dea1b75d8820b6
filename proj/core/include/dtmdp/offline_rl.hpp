#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dtmdp/abstraction.hpp"
#include "dtmdp/mlp.hpp"

namespace dtmdp {

enum class QForm { Tabular, Network };

std::string_view to_string(QForm f) noexcept;
QForm parse_q_form(std::string_view text);

/// Where the Bellman max / CQL log-sum-exp / policy softmax range:
/// every vocabulary index, or the candidate set recorded on each turn.
struct ActionSpace {
  enum class Kind { FullVocabulary, CandidateSet };
  Kind kind = Kind::CandidateSet;
  /// Vocabulary size for FullVocabulary; unused for CandidateSet.
  std::size_t size = 0;

  static ActionSpace full_vocabulary(std::size_t n) { return {Kind::FullVocabulary, n}; }
  static ActionSpace candidate_set() { return {Kind::CandidateSet, 0}; }
  bool operator==(const ActionSpace&) const = default;
};

/// The actions a policy ranges over at `step`. Throws MissingCandidateSets
/// when the space is CandidateSet and the step recorded none.
std::vector<ActionRepr> action_choices(const AbstractStep& step, const ActionSpace& space);

/// Tabular rows: exact state vector -> value per vocabulary index.
using QTable = std::map<std::vector<double>, std::vector<double>>;

/// Q(s, a) over abstract states and actions. Tabular needs index actions;
/// unseen states read as 0 for every action.
class QFunction {
 public:
  QFunction() = default;
  static QFunction tabular(FeatureLayout layout, ActionSpace space, double gamma, QTable table = {});
  static QFunction network(FeatureLayout layout, ActionSpace space, double gamma, Mlp net);

  QForm form() const noexcept { return form_; }
  double gamma() const noexcept { return gamma_; }
  const ActionSpace& action_space() const noexcept { return space_; }
  const FeatureLayout& layout() const noexcept { return layout_; }
  const QTable& table() const noexcept { return table_; }
  QTable& table() noexcept { return table_; }
  const Mlp& net() const noexcept { return net_; }
  Mlp& net() noexcept { return net_; }

  /// Throws Error(DimensionMismatch) when the state or action does not fit.
  double value(std::span<const double> state, const ActionRepr& action) const;
  std::vector<double> values(std::span<const double> state, std::span<const ActionRepr> actions) const;

  bool operator==(const QFunction&) const = default;

 private:
  QForm form_ = QForm::Tabular;
  FeatureLayout layout_;
  ActionSpace space_;
  double gamma_ = 0.99;
  QTable table_;
  Mlp net_;
};

/// Index of the highest value; ties go to the lower vocabulary index (index
/// actions) or the earlier candidate (feature actions).
std::size_t greedy_choice(const QFunction& q, std::span<const double> state,
                          std::span<const ActionRepr> candidates);

enum class Learner { Cql, Bc };
std::string_view to_string(Learner l) noexcept;
Learner parse_learner(std::string_view text);

/// Q-function plus the softmax rule pi(a|s) = softmax(Q(s, a) / temperature).
struct QPolicy {
  QFunction q;
  double temperature = 1.0;
  Learner learner = Learner::Cql;
  SchemeKind scheme = SchemeKind::Name;

  bool operator==(const QPolicy&) const = default;
};

/// Softmax of `scores / temperature`. Entries equal to -inf get probability
/// 0; if all are -inf the result is uniform.
std::vector<double> softmax(std::span<const double> scores, double temperature);

/// pi(.|state) over `candidates`. Throws EmptyCandidates / DimensionMismatch.
std::vector<double> policy_probs(const QPolicy& policy, std::span<const double> state,
                                 std::span<const ActionRepr> candidates);

struct TrainConfig {
  double alpha = 1.0;
  double gamma = 0.99;
  int iterations = 5000;
  double step_size = 1e-3;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::size_t hidden_units = 256;
  int target_update_interval = 200;
  QForm form = QForm::Network;

  /// Throws Error(InvalidArgument).
  void validate() const;
};

/// Conservative Q-learning on relabelled trajectories. Minimises the mean of
/// (Q(s,a) - (r + gamma * max_a' Q_target(s',a')))^2
///   + alpha * (logsumexp_a Q(s,a) - Q(s,a_t)),
/// with the target refreshed every `target_update_interval` updates and the
/// last step of a trajectory bootstrapping with 0. alpha = 0 is plain
/// (deep) Q-learning. Tabular updates use a diagonal majorise-minimise step,
/// which is exact fitted Q-iteration when alpha = 0.
QFunction cql_train(std::span<const AbstractTrajectory> trajs, const TrainConfig& cfg,
                    const ActionSpace& space, const FeatureLayout& layout);

/// Logit assigned to actions never taken at a seen state by tabular BC.
inline constexpr double kBcUnseenLogit = -1000.0;

/// Behaviour cloning: maximum likelihood of the taken actions under a
/// softmax over the action choices. Tabular logits are log counts.
QPolicy bc_train(std::span<const AbstractTrajectory> trajs, const TrainConfig& cfg,
                 const ActionSpace& space, const FeatureLayout& layout);

void save_policy(const QPolicy& policy, const std::filesystem::path& path);
QPolicy load_policy(const std::filesystem::path& path);
nlohmann::json policy_to_json(const QPolicy& policy);
QPolicy policy_from_json(const nlohmann::json& j);

}  // namespace dtmdp
