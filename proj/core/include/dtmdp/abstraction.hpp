#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dtmdp/data_model.hpp"
#include "dtmdp/topology.hpp"

namespace dtmdp {

enum class SchemeKind { Name, NameType, Topology };

std::string_view to_string(SchemeKind kind) noexcept;
SchemeKind parse_scheme_kind(std::string_view text);

/// Abstract action: a vocabulary index (Name/NameType, one-hot when fed to a
/// network) or a real feature vector (Topology).
class ActionRepr {
 public:
  ActionRepr() = default;
  static ActionRepr index(std::size_t i) { return ActionRepr(Storage{i}); }
  static ActionRepr features(std::vector<double> f) { return ActionRepr(Storage{std::move(f)}); }

  bool is_index() const noexcept { return std::holds_alternative<std::size_t>(value_); }
  std::size_t as_index() const { return std::get<std::size_t>(value_); }
  const std::vector<double>& as_features() const { return std::get<std::vector<double>>(value_); }

  bool operator==(const ActionRepr&) const = default;

 private:
  using Storage = std::variant<std::size_t, std::vector<double>>;
  explicit ActionRepr(Storage s) : value_(std::move(s)) {}
  Storage value_{std::size_t{0}};
};

/// Appends the network encoding of `a` to `out`: one-hot of width
/// `action_dim` for indices, the raw features otherwise.
/// Throws Error(DimensionMismatch) if `a` does not fit `action_dim`.
void append_action_encoding(const ActionRepr& a, std::size_t action_dim, std::vector<double>& out);

/// Widths of the network input: state features followed by the action
/// encoding (one-hot width for index actions).
struct FeatureLayout {
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;

  std::size_t input_dim() const noexcept { return state_dim + action_dim; }
  bool operator==(const FeatureLayout&) const = default;
};

/// state ++ encoding(action). Throws Error(DimensionMismatch).
std::vector<double> encode_state_action(const FeatureLayout& layout, std::span<const double> state,
                                        const ActionRepr& action);

struct AbstractStep {
  std::vector<double> state;
  ActionRepr action;
  /// Abstract candidate actions of the turn (the recorded candidate set).
  std::vector<ActionRepr> candidates;
  double reward = 0.0;

  bool operator==(const AbstractStep&) const = default;
};

struct AbstractTrajectory {
  std::string trajectory_id;
  std::string scenario_id;
  SchemeKind scheme = SchemeKind::Name;
  std::vector<AbstractStep> steps;
  JudgeScores scores;

  std::size_t state_dim() const { return steps.empty() ? 0 : steps.front().state.size(); }
  bool operator==(const AbstractTrajectory&) const = default;
};

struct SchemeSpec {
  SchemeKind kind = SchemeKind::Name;
  bool with_hubs = false;
  bool with_hmm = false;
  /// Name: only `name` is significant and names are unique.
  /// NameType: (name, etype) pairs, unique.
  std::vector<Entity> vocabulary;
  /// Topology only.
  std::shared_ptr<const TopologyGraph> graph;
  /// Defaults to graph diameter + 1 when unset; must exceed the diameter.
  std::optional<double> unreachable_sentinel;

  /// Throws Error(InvalidArgument) on a malformed spec.
  void validate() const;
  /// Returns a copy bound to another graph (Topology scenarios differ per graph).
  SchemeSpec with_graph(std::shared_ptr<const TopologyGraph> g) const;
};

/// Sorted unique vocabulary over every entity mentioned in the corpus.
std::vector<Entity> build_vocabulary(std::span<const RawTrajectory> corpus, SchemeKind kind);
/// Same, also covering `extra` entities (e.g. every node of the graphs).
std::vector<Entity> build_vocabulary(std::span<const RawTrajectory> corpus, SchemeKind kind,
                                     std::span<const Entity> extra);

/// Precomputed view of a SchemeSpec: vocabulary index, distance table, hub
/// scores and the effective sentinel. All query methods are const and pure.
class Abstractor {
 public:
  explicit Abstractor(SchemeSpec spec);

  const SchemeSpec& spec() const noexcept { return spec_; }
  std::size_t state_dim() const noexcept;
  std::size_t action_dim() const noexcept;
  FeatureLayout layout() const noexcept { return {state_dim(), action_dim()}; }
  double sentinel() const noexcept { return sentinel_; }

  /// State vector for the judgments currently in force.
  std::vector<double> state(const Assessments& assessments, const Entity& symptom) const;
  /// Abstract action for exploring `target` next. `previous` is the last
  /// explored entity (absent on the first turn).
  ActionRepr action(const Entity& target, const std::optional<Entity>& previous,
                    const Assessments& assessments, const Entity& symptom) const;

  AbstractTrajectory abstract(const RawTrajectory& raw) const;

 private:
  std::size_t vocab_index(const Entity& e) const;
  NodeId node_of(const Entity& e) const;
  double distance_or_sentinel(NodeId from, NodeId to) const;
  double min_distance(NodeId from, const std::vector<NodeId>& targets) const;

  SchemeSpec spec_;
  std::map<std::string, std::size_t> name_index_;
  std::map<Entity, std::size_t> pair_index_;
  std::optional<DistanceTable> distances_;
  std::vector<double> hubs_;
  double sentinel_ = 0.0;
};

/// Abstracts one trajectory. The state and label-derived action features of
/// step t come from the assessments recorded on step t-1 (none at t = 0):
/// the judgments the agent held when it chose step t's entity.
/// Rewards are initialised to 0.
AbstractTrajectory abstract(const RawTrajectory& raw, const SchemeSpec& spec);

// Line-delimited abstract-trajectory file.
nlohmann::json abstract_to_json(const AbstractTrajectory& t);
AbstractTrajectory abstract_from_json(const nlohmann::json& j);
std::vector<AbstractTrajectory> load_abstract_corpus(const std::filesystem::path& path);
void save_abstract_corpus(std::span<const AbstractTrajectory> trajs,
                          const std::filesystem::path& path);

}  // namespace dtmdp
