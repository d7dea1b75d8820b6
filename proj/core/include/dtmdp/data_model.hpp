#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace dtmdp {

/// A typed topology entity, e.g. {"frontend", "Service"}.
struct Entity {
  std::string name;
  std::string etype;

  auto operator<=>(const Entity&) const = default;
  bool operator==(const Entity&) const = default;
};

std::string to_display(const Entity& e);

/// The agent's judgment of an entity. Codes used by the abstraction are
/// normal = 0, cascading = 1, primary = 2.
enum class Label { Normal = 0, Cascading = 1, Primary = 2 };

std::string_view to_string(Label label) noexcept;
std::optional<Label> parse_label(std::string_view text) noexcept;
constexpr int label_code(Label label) noexcept { return static_cast<int>(label); }

using Assessments = std::map<Entity, Label>;

struct RawStep {
  int turn_index = 0;
  Entity chosen_entity;
  std::vector<Entity> candidate_entities;
  /// Cumulative judgments after this turn.
  Assessments assessments;
  std::optional<double> intermediate_reward;

  bool operator==(const RawStep&) const = default;
};

/// Judge scores on the 0..100 scale. rce_identification is all-or-nothing.
struct JudgeScores {
  double fpc_accuracy = 0.0;
  double rce_identification = 0.0;

  bool operator==(const JudgeScores&) const = default;
};

struct RawTrajectory {
  std::string trajectory_id;
  std::string scenario_id;
  Entity symptom_entity;
  std::vector<RawStep> steps;
  JudgeScores scores;
  std::optional<Entity> final_root_cause;

  bool operator==(const RawTrajectory&) const = default;
};

/// Throws Error(ScoreOutOfRange) unless fpc in [0,100] and rce in {0,100}.
void validate_scores(const JudgeScores& scores);

/// Full record validation (steps non-empty, turn indices 0..n-1, chosen in
/// candidates, non-empty entity fields, score ranges). `line` is attached to
/// the thrown error.
void validate_trajectory(const RawTrajectory& traj,
                         std::optional<std::size_t> line = std::nullopt);

// JSON encoding. Unknown fields are rejected on decode.
nlohmann::json entity_to_json(const Entity& e);
Entity entity_from_json(const nlohmann::json& j);
nlohmann::json trajectory_to_json(const RawTrajectory& traj);
RawTrajectory trajectory_from_json(const nlohmann::json& j);

/// Reads a line-delimited corpus. Blank lines are skipped but still counted
/// for error line numbers.
std::vector<RawTrajectory> read_corpus(std::istream& in);
void write_corpus(std::span<const RawTrajectory> trajs, std::ostream& out);

std::vector<RawTrajectory> load_corpus(const std::filesystem::path& path);
void save_corpus(std::span<const RawTrajectory> trajs,
                 const std::filesystem::path& path);

/// Trajectory ids that occur more than once, in first-seen order. Duplicates
/// are legal; loaders only warn about them.
std::vector<std::string> duplicate_trajectory_ids(std::span<const RawTrajectory> trajs);

}  // namespace dtmdp
