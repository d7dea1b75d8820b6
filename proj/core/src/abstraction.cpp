#include "dtmdp/abstraction.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>

#include "dtmdp/error.hpp"

namespace dtmdp {

using nlohmann::json;

std::string_view to_string(SchemeKind kind) noexcept {
  switch (kind) {
    case SchemeKind::Name: return "name";
    case SchemeKind::NameType: return "name_type";
    case SchemeKind::Topology: return "topology";
  }
  return "name";
}

SchemeKind parse_scheme_kind(std::string_view text) {
  if (text == "name") return SchemeKind::Name;
  if (text == "name_type") return SchemeKind::NameType;
  if (text == "topology") return SchemeKind::Topology;
  throw Error(ErrorCode::InvalidArgument, "unknown scheme '" + std::string(text) + "'");
}

void append_action_encoding(const ActionRepr& a, std::size_t action_dim, std::vector<double>& out) {
  if (a.is_index()) {
    if (a.as_index() >= action_dim) {
      throw Error(ErrorCode::DimensionMismatch, "action index " + std::to_string(a.as_index()) +
                                                    " out of range for width " +
                                                    std::to_string(action_dim));
    }
    const std::size_t base = out.size();
    out.resize(base + action_dim, 0.0);
    out[base + a.as_index()] = 1.0;
  } else {
    const auto& f = a.as_features();
    if (f.size() != action_dim) {
      throw Error(ErrorCode::DimensionMismatch, "action feature width " + std::to_string(f.size()) +
                                                    " != " + std::to_string(action_dim));
    }
    out.insert(out.end(), f.begin(), f.end());
  }
}

std::vector<double> encode_state_action(const FeatureLayout& layout, std::span<const double> state,
                                        const ActionRepr& action) {
  if (state.size() != layout.state_dim) {
    throw Error(ErrorCode::DimensionMismatch, "state width " + std::to_string(state.size()) +
                                                  " != " + std::to_string(layout.state_dim));
  }
  std::vector<double> x;
  x.reserve(layout.input_dim());
  x.assign(state.begin(), state.end());
  append_action_encoding(action, layout.action_dim, x);
  return x;
}

void SchemeSpec::validate() const {
  if (kind != SchemeKind::Topology) {
    if (with_hubs || with_hmm) {
      throw Error(ErrorCode::InvalidArgument, "with_hubs/with_hmm require the topology scheme");
    }
    if (vocabulary.empty()) throw Error(ErrorCode::InvalidArgument, "empty vocabulary");
    if (kind == SchemeKind::Name) {
      std::set<std::string> names;
      for (const Entity& e : vocabulary) {
        if (!names.insert(e.name).second) {
          throw Error(ErrorCode::InvalidArgument, "duplicate vocabulary name '" + e.name + "'");
        }
      }
    } else {
      std::set<Entity> pairs(vocabulary.begin(), vocabulary.end());
      if (pairs.size() != vocabulary.size()) {
        throw Error(ErrorCode::InvalidArgument, "duplicate vocabulary (name, etype) pair");
      }
    }
    return;
  }
  if (!graph) throw Error(ErrorCode::InvalidArgument, "topology scheme requires a graph");
  if (unreachable_sentinel) {
    const DistanceTable table(*graph);
    if (!(*unreachable_sentinel > table.diameter())) {
      throw Error(ErrorCode::InvalidArgument, "unreachable_sentinel must exceed the graph diameter " +
                                                  std::to_string(table.diameter()));
    }
  }
}

SchemeSpec SchemeSpec::with_graph(std::shared_ptr<const TopologyGraph> g) const {
  SchemeSpec copy = *this;
  copy.graph = std::move(g);
  return copy;
}

std::vector<Entity> build_vocabulary(std::span<const RawTrajectory> corpus, SchemeKind kind) {
  return build_vocabulary(corpus, kind, {});
}

std::vector<Entity> build_vocabulary(std::span<const RawTrajectory> corpus, SchemeKind kind,
                                     std::span<const Entity> extra) {
  std::set<Entity> all(extra.begin(), extra.end());
  for (const RawTrajectory& t : corpus) {
    all.insert(t.symptom_entity);
    for (const RawStep& s : t.steps) {
      all.insert(s.chosen_entity);
      all.insert(s.candidate_entities.begin(), s.candidate_entities.end());
      for (const auto& [e, label] : s.assessments) all.insert(e);
    }
  }
  std::vector<Entity> vocab;
  if (kind == SchemeKind::Name) {
    // std::set order keeps the lexicographically smallest etype per name.
    std::set<std::string> names;
    for (const Entity& e : all) {
      if (names.insert(e.name).second) vocab.push_back(e);
    }
  } else {
    vocab.assign(all.begin(), all.end());
  }
  return vocab;
}

Abstractor::Abstractor(SchemeSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.kind == SchemeKind::Name) {
    for (std::size_t i = 0; i < spec_.vocabulary.size(); ++i) name_index_[spec_.vocabulary[i].name] = i;
  } else if (spec_.kind == SchemeKind::NameType) {
    for (std::size_t i = 0; i < spec_.vocabulary.size(); ++i) pair_index_[spec_.vocabulary[i]] = i;
  } else {
    distances_.emplace(*spec_.graph);
    sentinel_ = spec_.unreachable_sentinel.value_or(distances_->diameter() + 1.0);
    if (spec_.with_hubs) hubs_ = hubs_scores(*spec_.graph);
  }
}

std::size_t Abstractor::state_dim() const noexcept {
  return spec_.kind == SchemeKind::Topology ? 2 : spec_.vocabulary.size();
}

std::size_t Abstractor::action_dim() const noexcept {
  if (spec_.kind != SchemeKind::Topology) return spec_.vocabulary.size();
  return spec_.with_hubs ? 5 : 4;
}

std::size_t Abstractor::vocab_index(const Entity& e) const {
  if (spec_.kind == SchemeKind::Name) {
    if (auto it = name_index_.find(e.name); it != name_index_.end()) return it->second;
  } else {
    if (auto it = pair_index_.find(e); it != pair_index_.end()) return it->second;
  }
  throw Error(ErrorCode::EntityNotInVocabulary, to_display(e) + " is not in the scheme vocabulary");
}

NodeId Abstractor::node_of(const Entity& e) const {
  if (auto id = spec_.graph->find(e)) return *id;
  throw Error(ErrorCode::EntityNotInGraph, to_display(e) + " is not a node of the topology graph");
}

double Abstractor::distance_or_sentinel(NodeId from, NodeId to) const {
  const auto d = distances_->at(from, to);
  return d ? static_cast<double>(*d) : sentinel_;
}

double Abstractor::min_distance(NodeId from, const std::vector<NodeId>& targets) const {
  double best = std::numeric_limits<double>::infinity();
  for (NodeId t : targets) {
    if (auto d = distances_->at(from, t)) best = std::min(best, static_cast<double>(*d));
  }
  return std::isfinite(best) ? best : sentinel_;
}

std::vector<double> Abstractor::state(const Assessments& assessments, const Entity& symptom) const {
  if (spec_.kind != SchemeKind::Topology) {
    std::vector<double> s(spec_.vocabulary.size(), 0.0);
    for (const auto& [e, label] : assessments) {
      double& slot = s[vocab_index(e)];
      slot = std::max(slot, static_cast<double>(label_code(label)));
    }
    return s;
  }
  std::vector<NodeId> primary;
  std::vector<NodeId> cascading;
  for (const auto& [e, label] : assessments) {
    const NodeId id = node_of(e);
    if (label == Label::Primary) primary.push_back(id);
    if (label == Label::Cascading) cascading.push_back(id);
  }
  const NodeId s = node_of(symptom);
  return {min_distance(s, primary), min_distance(s, cascading)};
}

ActionRepr Abstractor::action(const Entity& target, const std::optional<Entity>& previous,
                              const Assessments& assessments, const Entity& symptom) const {
  if (spec_.kind != SchemeKind::Topology) return ActionRepr::index(vocab_index(target));

  std::vector<NodeId> primary;
  std::vector<NodeId> cascading;
  for (const auto& [e, label] : assessments) {
    const NodeId id = node_of(e);
    if (label == Label::Primary) primary.push_back(id);
    if (label == Label::Cascading) cascading.push_back(id);
  }
  const NodeId a = node_of(target);
  std::vector<double> f;
  f.reserve(action_dim());
  f.push_back(previous ? distance_or_sentinel(a, node_of(*previous)) : sentinel_);
  f.push_back(distance_or_sentinel(a, node_of(symptom)));
  f.push_back(min_distance(a, primary));
  f.push_back(min_distance(a, cascading));
  if (spec_.with_hubs) f.push_back(hubs_[a]);
  return ActionRepr::features(std::move(f));
}

AbstractTrajectory Abstractor::abstract(const RawTrajectory& raw) const {
  AbstractTrajectory out;
  out.trajectory_id = raw.trajectory_id;
  out.scenario_id = raw.scenario_id;
  out.scheme = spec_.kind;
  out.scores = raw.scores;
  static const Assessments kNone;
  for (std::size_t t = 0; t < raw.steps.size(); ++t) {
    const RawStep& step = raw.steps[t];
    const Assessments& known = t == 0 ? kNone : raw.steps[t - 1].assessments;
    const std::optional<Entity> previous =
        t == 0 ? std::nullopt : std::optional<Entity>(raw.steps[t - 1].chosen_entity);
    AbstractStep as;
    as.state = state(known, raw.symptom_entity);
    as.action = action(step.chosen_entity, previous, known, raw.symptom_entity);
    as.candidates.reserve(step.candidate_entities.size());
    for (const Entity& c : step.candidate_entities) {
      as.candidates.push_back(action(c, previous, known, raw.symptom_entity));
    }
    out.steps.push_back(std::move(as));
  }
  // Every referenced entity must be known, including the last turn's labels.
  if (spec_.kind == SchemeKind::Topology) {
    for (const auto& [e, label] : raw.steps.back().assessments) node_of(e);
  } else {
    for (const auto& [e, label] : raw.steps.back().assessments) vocab_index(e);
  }
  return out;
}

AbstractTrajectory abstract(const RawTrajectory& raw, const SchemeSpec& spec) {
  return Abstractor(spec).abstract(raw);
}

namespace {

json action_to_json(const ActionRepr& a) {
  if (a.is_index()) return json{{"index", a.as_index()}};
  return json{{"features", a.as_features()}};
}

ActionRepr action_from_json(const json& j) {
  if (j.contains("index")) return ActionRepr::index(j.at("index").get<std::size_t>());
  return ActionRepr::features(j.at("features").get<std::vector<double>>());
}

}  // namespace

json abstract_to_json(const AbstractTrajectory& t) {
  json steps = json::array();
  for (const AbstractStep& s : t.steps) {
    json candidates = json::array();
    for (const ActionRepr& c : s.candidates) candidates.push_back(action_to_json(c));
    steps.push_back(json{{"state", s.state},
                         {"action", action_to_json(s.action)},
                         {"candidates", std::move(candidates)},
                         {"reward", s.reward}});
  }
  return json{{"trajectory_id", t.trajectory_id},
              {"scenario_id", t.scenario_id},
              {"scheme", std::string(to_string(t.scheme))},
              {"scores",
               json{{"fpc_accuracy", t.scores.fpc_accuracy},
                    {"rce_identification", t.scores.rce_identification}}},
              {"steps", std::move(steps)}};
}

AbstractTrajectory abstract_from_json(const json& j) {
  AbstractTrajectory t;
  t.trajectory_id = j.at("trajectory_id").get<std::string>();
  t.scenario_id = j.at("scenario_id").get<std::string>();
  t.scheme = parse_scheme_kind(j.at("scheme").get<std::string>());
  t.scores.fpc_accuracy = j.at("scores").at("fpc_accuracy").get<double>();
  t.scores.rce_identification = j.at("scores").at("rce_identification").get<double>();
  for (const json& sj : j.at("steps")) {
    AbstractStep s;
    s.state = sj.at("state").get<std::vector<double>>();
    s.action = action_from_json(sj.at("action"));
    for (const json& c : sj.at("candidates")) s.candidates.push_back(action_from_json(c));
    s.reward = sj.at("reward").get<double>();
    t.steps.push_back(std::move(s));
  }
  return t;
}

std::vector<AbstractTrajectory> load_abstract_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in && !std::filesystem::exists(path)) throw Error(ErrorCode::MissingArtifact, "missing " + path.string());
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<AbstractTrajectory> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(abstract_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, e.what(), line_no);
    }
  }
  return out;
}

void save_abstract_corpus(std::span<const AbstractTrajectory> trajs,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  for (const AbstractTrajectory& t : trajs) out << abstract_to_json(t).dump() << '\n';
}

}  // namespace dtmdp
