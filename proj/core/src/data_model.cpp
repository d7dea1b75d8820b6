#include "dtmdp/data_model.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <istream>
#include <ostream>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dtmdp/error.hpp"

namespace dtmdp {

using nlohmann::json;

std::string to_display(const Entity& e) { return e.name + " (" + e.etype + ")"; }

std::string_view to_string(Label label) noexcept {
  switch (label) {
    case Label::Primary: return "primary";
    case Label::Cascading: return "cascading";
    case Label::Normal: return "normal";
  }
  return "normal";
}

std::optional<Label> parse_label(std::string_view text) noexcept {
  if (text == "primary") return Label::Primary;
  if (text == "cascading") return Label::Cascading;
  if (text == "normal") return Label::Normal;
  return std::nullopt;
}

void validate_scores(const JudgeScores& scores) {
  if (!(scores.fpc_accuracy >= 0.0 && scores.fpc_accuracy <= 100.0)) {
    throw Error(ErrorCode::ScoreOutOfRange,
                "fpc_accuracy must lie in [0,100], got " + std::to_string(scores.fpc_accuracy));
  }
  if (scores.rce_identification != 0.0 && scores.rce_identification != 100.0) {
    throw Error(ErrorCode::ScoreOutOfRange,
                "rce_identification must be 0 or 100, got " +
                    std::to_string(scores.rce_identification));
  }
}

namespace {

void require_entity_fields(const Entity& e, std::optional<std::size_t> line) {
  if (e.name.empty() || e.etype.empty()) {
    throw Error(ErrorCode::MalformedRecord, "entity name and etype must be non-empty", line);
  }
}

}  // namespace

void validate_trajectory(const RawTrajectory& traj, std::optional<std::size_t> line) {
  if (traj.steps.empty()) {
    throw Error(ErrorCode::MalformedRecord,
                "trajectory '" + traj.trajectory_id + "' has no steps", line);
  }
  require_entity_fields(traj.symptom_entity, line);
  if (traj.final_root_cause) require_entity_fields(*traj.final_root_cause, line);
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const RawStep& step = traj.steps[i];
    if (step.turn_index != static_cast<int>(i)) {
      throw Error(ErrorCode::NonMonotoneTurnIndex,
                  "expected turn_index " + std::to_string(i) + ", got " +
                      std::to_string(step.turn_index),
                  line);
    }
    require_entity_fields(step.chosen_entity, line);
    for (const Entity& c : step.candidate_entities) require_entity_fields(c, line);
    for (const auto& [e, label] : step.assessments) require_entity_fields(e, line);
    if (std::find(step.candidate_entities.begin(), step.candidate_entities.end(),
                  step.chosen_entity) == step.candidate_entities.end()) {
      throw Error(ErrorCode::ChosenEntityNotInCandidates,
                  "turn " + std::to_string(i) + ": " + to_display(step.chosen_entity) +
                      " is not among the candidates",
                  line);
    }
  }
  try {
    validate_scores(traj.scores);
  } catch (const Error& e) {
    throw Error(e.code(), e.what(), line);
  }
}

namespace {

void reject_unknown_fields(const json& j, std::initializer_list<std::string_view> allowed,
                           std::string_view what) {
  if (!j.is_object()) {
    throw Error(ErrorCode::MalformedRecord, std::string(what) + " must be an object");
  }
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw Error(ErrorCode::MalformedRecord,
                  "unknown field '" + item.key() + "' in " + std::string(what));
    }
  }
}

const json& require(const json& j, const char* key, std::string_view what) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw Error(ErrorCode::MalformedRecord,
                "missing field '" + std::string(key) + "' in " + std::string(what));
  }
  return *it;
}

}  // namespace

json entity_to_json(const Entity& e) { return json{{"name", e.name}, {"etype", e.etype}}; }

Entity entity_from_json(const json& j) {
  reject_unknown_fields(j, {"name", "etype"}, "entity");
  return Entity{require(j, "name", "entity").get<std::string>(),
                require(j, "etype", "entity").get<std::string>()};
}

json trajectory_to_json(const RawTrajectory& traj) {
  json steps = json::array();
  for (const RawStep& s : traj.steps) {
    json candidates = json::array();
    for (const Entity& c : s.candidate_entities) candidates.push_back(entity_to_json(c));
    json assessments = json::array();
    for (const auto& [e, label] : s.assessments) {
      assessments.push_back(
          json{{"name", e.name}, {"etype", e.etype}, {"label", std::string(to_string(label))}});
    }
    steps.push_back(json{
        {"turn_index", s.turn_index},
        {"chosen_entity", entity_to_json(s.chosen_entity)},
        {"candidate_entities", std::move(candidates)},
        {"assessments", std::move(assessments)},
        {"intermediate_reward",
         s.intermediate_reward ? json(*s.intermediate_reward) : json(nullptr)},
    });
  }
  return json{
      {"trajectory_id", traj.trajectory_id},
      {"scenario_id", traj.scenario_id},
      {"symptom_entity", entity_to_json(traj.symptom_entity)},
      {"steps", std::move(steps)},
      {"scores",
       json{{"fpc_accuracy", traj.scores.fpc_accuracy},
            {"rce_identification", traj.scores.rce_identification}}},
      {"final_root_cause",
       traj.final_root_cause ? entity_to_json(*traj.final_root_cause) : json(nullptr)},
  };
}

RawTrajectory trajectory_from_json(const json& j) {
  constexpr std::string_view kRecord = "trajectory record";
  reject_unknown_fields(j, {"trajectory_id", "scenario_id", "symptom_entity", "steps", "scores",
                            "final_root_cause"},
                        kRecord);
  RawTrajectory traj;
  traj.trajectory_id = require(j, "trajectory_id", kRecord).get<std::string>();
  traj.scenario_id = require(j, "scenario_id", kRecord).get<std::string>();
  traj.symptom_entity = entity_from_json(require(j, "symptom_entity", kRecord));

  const json& steps = require(j, "steps", kRecord);
  if (!steps.is_array()) throw Error(ErrorCode::MalformedRecord, "steps must be an array");
  for (const json& sj : steps) {
    reject_unknown_fields(sj, {"turn_index", "chosen_entity", "candidate_entities", "assessments",
                               "intermediate_reward"},
                          "step");
    RawStep step;
    const json& turn = require(sj, "turn_index", "step");
    if (!turn.is_number_integer() || turn.get<long long>() < 0) {
      throw Error(ErrorCode::MalformedRecord, "turn_index must be a nonnegative integer");
    }
    step.turn_index = turn.get<int>();
    step.chosen_entity = entity_from_json(require(sj, "chosen_entity", "step"));
    for (const json& c : require(sj, "candidate_entities", "step")) {
      step.candidate_entities.push_back(entity_from_json(c));
    }
    for (const json& a : require(sj, "assessments", "step")) {
      reject_unknown_fields(a, {"name", "etype", "label"}, "assessment");
      Entity e{require(a, "name", "assessment").get<std::string>(),
               require(a, "etype", "assessment").get<std::string>()};
      auto label = parse_label(require(a, "label", "assessment").get<std::string>());
      if (!label) throw Error(ErrorCode::MalformedRecord, "unknown assessment label");
      step.assessments[e] = *label;
    }
    if (auto it = sj.find("intermediate_reward"); it != sj.end() && !it->is_null()) {
      step.intermediate_reward = it->get<double>();
    }
    traj.steps.push_back(std::move(step));
  }

  const json& scores = require(j, "scores", kRecord);
  reject_unknown_fields(scores, {"fpc_accuracy", "rce_identification"}, "scores");
  traj.scores.fpc_accuracy = require(scores, "fpc_accuracy", "scores").get<double>();
  traj.scores.rce_identification = require(scores, "rce_identification", "scores").get<double>();

  if (auto it = j.find("final_root_cause"); it != j.end() && !it->is_null()) {
    traj.final_root_cause = entity_from_json(*it);
  }
  return traj;
}

std::vector<RawTrajectory> read_corpus(std::istream& in) {
  std::vector<RawTrajectory> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    RawTrajectory traj;
    try {
      traj = trajectory_from_json(json::parse(line));
    } catch (const Error& e) {
      throw Error(e.code(), e.what(), line_no);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, e.what(), line_no);
    }
    validate_trajectory(traj, line_no);
    out.push_back(std::move(traj));
  }
  if (in.bad()) throw Error(ErrorCode::IoFailure, "read error");
  for (const std::string& id : duplicate_trajectory_ids(out)) {
    spdlog::warn("duplicate trajectory_id '{}' in corpus", id);
  }
  return out;
}

void write_corpus(std::span<const RawTrajectory> trajs, std::ostream& out) {
  for (const RawTrajectory& t : trajs) out << trajectory_to_json(t).dump() << '\n';
}

std::vector<RawTrajectory> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in && !std::filesystem::exists(path)) throw Error(ErrorCode::MissingArtifact, "missing " + path.string());
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open corpus " + path.string());
  return read_corpus(in);
}

void save_corpus(std::span<const RawTrajectory> trajs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write corpus " + path.string());
  write_corpus(trajs, out);
  out.flush();
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

std::vector<std::string> duplicate_trajectory_ids(std::span<const RawTrajectory> trajs) {
  std::unordered_map<std::string, int> seen;
  std::vector<std::string> dups;
  for (const RawTrajectory& t : trajs) {
    if (++seen[t.trajectory_id] == 2) dups.push_back(t.trajectory_id);
  }
  return dups;
}

}  // namespace dtmdp
