#include "dtmdp/simenv.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "dtmdp/error.hpp"

namespace dtmdp {

namespace {

constexpr std::array<const char*, 3> kEntityTypes{"Service", "Pod", "Deployment"};

std::string node_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "svc-%02zu", i);
  return buf;
}

bool is_anomalous(Label l) { return l != Label::Normal; }

}  // namespace

void ScenarioConfig::validate() const {
  if (chain_length < 2) throw Error(ErrorCode::InfeasibleConfig, "chain_length must be >= 2");
  if (n_nodes < chain_length) throw Error(ErrorCode::InfeasibleConfig, "n_nodes must be >= chain_length");
  if (!(edge_density >= 0.0 && edge_density <= 1.0)) {
    throw Error(ErrorCode::InfeasibleConfig, "edge_density must lie in [0, 1]");
  }
  if (!(evidence_noise >= 0.0 && evidence_noise < 1.0)) {
    throw Error(ErrorCode::InfeasibleConfig, "evidence_noise must lie in [0, 1)");
  }
}

void EpisodeConfig::validate() const {
  if (max_turns < 1) throw Error(ErrorCode::InvalidArgument, "max_turns must be >= 1");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must lie in [0, 1]");
  if (!(suggestion_uptake >= 0.0 && suggestion_uptake <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "suggestion_uptake must lie in [0, 1]");
  }
}

SimScenario generate_scenario(const ScenarioConfig& cfg, std::uint64_t seed, std::string scenario_id) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n = cfg.n_nodes;

  std::vector<Entity> nodes;
  nodes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) nodes.push_back({node_name(i), kEntityTypes[i % kEntityTypes.size()]});

  std::vector<NodeId> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t len = cfg.chain_length;

  std::set<Edge> edges;
  auto linked = [&](NodeId a, NodeId b) { return edges.contains({a, b}) || edges.contains({b, a}); };
  for (std::size_t i = 0; i + 1 < len; ++i) edges.insert({perm[i], perm[i + 1]});
  // Spanning attachment of the remaining nodes.
  for (std::size_t k = len; k < n; ++k) {
    std::uniform_int_distribution<std::size_t> pick(0, k - 1);
    const NodeId other = perm[pick(rng)];
    if (unit(rng) < 0.5) {
      edges.insert({other, perm[k]});
    } else {
      edges.insert({perm[k], other});
    }
  }
  std::vector<bool> on_chain(n, false);
  for (std::size_t i = 0; i < len; ++i) on_chain[perm[i]] = true;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = 0; v < n; ++v) {
      if (u == v || (on_chain[u] && on_chain[v])) continue;
      const double draw = unit(rng);
      if (!linked(u, v) && draw < cfg.edge_density) edges.insert({u, v});
    }
  }

  SimScenario scn;
  scn.scenario_id = scenario_id.empty() ? "scn-" + std::to_string(seed) : std::move(scenario_id);
  scn.graph = std::make_shared<const TopologyGraph>(nodes, std::vector<Edge>(edges.begin(), edges.end()));
  for (std::size_t i = 0; i < len; ++i) scn.chain.push_back(nodes[perm[i]]);
  scn.root_cause = scn.chain.front();
  scn.symptom = scn.chain.back();
  scn.evidence_noise = cfg.evidence_noise;
  scn.seed = seed;
  return scn;
}

JudgeScores judge(const Assessments& assessments, const std::optional<Entity>& identified,
                  const SimScenario& scn) {
  JudgeScores s;
  s.rce_identification = identified && *identified == scn.root_cause ? 100.0 : 0.0;
  const std::set<Entity> truth(scn.chain.begin(), scn.chain.end());
  std::size_t predicted = 0;
  std::size_t hits = 0;
  for (const auto& [e, l] : assessments) {
    if (!is_anomalous(l)) continue;
    ++predicted;
    if (truth.contains(e)) ++hits;
  }
  if (predicted > 0 && hits > 0) {
    const double precision = static_cast<double>(hits) / static_cast<double>(predicted);
    const double recall = static_cast<double>(hits) / static_cast<double>(truth.size());
    s.fpc_accuracy = 100.0 * 2.0 * precision * recall / (precision + recall);
  }
  return s;
}

EpisodeResult run_episode(const SimScenario& scn, const CeSetup* ce, const EpisodeConfig& cfg,
                          std::uint64_t seed, std::string trajectory_id) {
  cfg.validate();
  if (!scn.graph) throw Error(ErrorCode::InvalidArgument, "scenario has no graph");
  const TopologyGraph& g = *scn.graph;
  const std::size_t n = g.node_count();

  std::optional<Abstractor> abstractor;
  if (ce) {
    ce->ce.validate();
    if (!ce->policy) throw Error(ErrorCode::InvalidArgument, "context engineering needs a policy");
    if (ce->scheme.with_hmm) {
      throw Error(ErrorCode::InvalidArgument, "HMM-augmented schemes cannot drive live episodes");
    }
    SchemeSpec spec = ce->scheme;
    if (spec.kind == SchemeKind::Topology) spec = spec.with_graph(scn.graph);
    abstractor.emplace(std::move(spec));
  }

  // Separate streams: evidence depends only on the seed and the entity, so
  // paired runs see the same observations for the same entity.
  std::mt19937_64 evidence_rng(seed);
  std::mt19937_64 agent_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<bool> flipped(n);
  for (std::size_t i = 0; i < n; ++i) flipped[i] = unit(evidence_rng) < scn.evidence_noise;

  std::vector<bool> on_chain(n, false);
  for (const auto& e : scn.chain) on_chain[g.id_of(e)] = true;
  const NodeId root = g.id_of(scn.root_cause);
  const NodeId symptom = g.id_of(scn.symptom);

  EpisodeResult res;
  res.trajectory.trajectory_id = trajectory_id.empty() ? scn.scenario_id + "-" + std::to_string(seed)
                                                       : std::move(trajectory_id);
  res.trajectory.scenario_id = scn.scenario_id;
  res.trajectory.symptom_entity = scn.symptom;

  Assessments assessments;
  std::vector<NodeId> queue{symptom};
  std::vector<bool> explored(n, false);
  std::vector<bool> dropped(n, false);
  std::vector<NodeId> explore_order;
  std::optional<NodeId> previous;
  std::optional<NodeId> last_first_primary;
  std::optional<Entity> identified;
  bool asserted = false;

  auto first_primary = [&]() -> std::optional<NodeId> {
    for (NodeId id : explore_order) {
      if (assessments.at(g.node(id)) == Label::Primary) return id;
    }
    return std::nullopt;
  };

  for (int turn = 0; turn < cfg.max_turns && !queue.empty(); ++turn) {
    // Base heuristic: anomalous explored neighbours, random tie-break.
    std::vector<std::pair<int, double>> key(n, {0, 0.0});
    for (NodeId c : queue) {
      int score = 0;
      for (NodeId p : g.predecessors(c)) score += explored[p] && is_anomalous(assessments.at(g.node(p)));
      for (NodeId s : g.successors(c)) score += explored[s] && is_anomalous(assessments.at(g.node(s)));
      key[c] = {score, unit(agent_rng)};
    }
    const bool random_turn = unit(agent_rng) < cfg.epsilon;
    const double uptake_draw = unit(agent_rng);

    std::vector<NodeId> candidates = queue;
    std::vector<bool> suggested(n, false);
    std::optional<std::vector<NodeId>> forced_order;
    if (ce) {
      std::vector<CeCandidate> cands;
      const Entity sym = g.node(symptom);
      const std::optional<Entity> prev =
          previous ? std::optional<Entity>(g.node(*previous)) : std::nullopt;
      for (NodeId c : candidates) {
        cands.push_back({g.node(c), abstractor->action(g.node(c), prev, assessments, sym)});
      }
      const auto state = abstractor->state(assessments, sym);
      const Intervention iv = intervene(*ce->policy, state, cands, ce->ce);
      std::vector<Entity> cand_entities;
      for (const auto& c : cands) cand_entities.push_back(c.entity);
      res.audit.push_back(audit_record(turn, cand_entities, iv));
      for (const auto& e : iv.suggestions) suggested[g.id_of(e)] = true;
      if (ce->ce.strategies.prune) {
        std::vector<bool> keep(n, false);
        for (const auto& e : iv.retained) keep[g.id_of(e)] = true;
        std::vector<NodeId> kept;
        for (NodeId c : candidates) {
          if (keep[c]) {
            kept.push_back(c);
          } else {
            dropped[c] = true;
          }
        }
        candidates = std::move(kept);
      }
      if (ce->ce.strategies.prioritize) {
        std::vector<NodeId> order;
        for (const auto& e : iv.ordering) order.push_back(g.id_of(e));
        forced_order = std::move(order);
      }
    }

    std::vector<NodeId> order = candidates;
    if (forced_order) {
      order = *forced_order;
    } else if (random_turn) {
      std::shuffle(order.begin(), order.end(), agent_rng);
    } else {
      std::sort(order.begin(), order.end(), [&](NodeId a, NodeId b) {
        if (key[a].first != key[b].first) return key[a].first > key[b].first;
        if (suggested[a] != suggested[b]) return static_cast<bool>(suggested[a]);
        return key[a].second < key[b].second;
      });
    }
    if (!forced_order && uptake_draw < cfg.suggestion_uptake) {
      std::stable_partition(order.begin(), order.end(), [&](NodeId c) { return static_cast<bool>(suggested[c]); });
    }

    const NodeId chosen = order.front();
    queue = candidates;
    queue.erase(std::find(queue.begin(), queue.end(), chosen));

    // Evidence and assessment.
    const bool anomalous = on_chain[chosen] != flipped[chosen];
    Label label = Label::Normal;
    if (anomalous) {
      if (on_chain[chosen]) {
        label = chosen == root ? Label::Primary : Label::Cascading;
      } else {
        bool upstream_anomaly = false;
        for (NodeId p : g.predecessors(chosen)) {
          upstream_anomaly = upstream_anomaly || (explored[p] && is_anomalous(assessments.at(g.node(p))));
        }
        label = upstream_anomaly ? Label::Cascading : Label::Primary;
      }
    }
    explored[chosen] = true;
    explore_order.push_back(chosen);
    assessments[g.node(chosen)] = label;

    auto push = [&](NodeId v) {
      if (explored[v] || dropped[v] || std::find(queue.begin(), queue.end(), v) != queue.end()) return;
      queue.push_back(v);
    };
    for (NodeId p : g.predecessors(chosen)) push(p);
    for (NodeId s : g.successors(chosen)) push(s);

    RawStep step;
    step.turn_index = turn;
    step.chosen_entity = g.node(chosen);
    for (NodeId c : candidates) step.candidate_entities.push_back(g.node(c));
    step.assessments = assessments;
    res.trajectory.steps.push_back(std::move(step));
    previous = chosen;

    const auto fp = first_primary();
    if (fp && last_first_primary == fp) {
      identified = g.node(*fp);
      asserted = true;
      break;
    }
    last_first_primary = fp;
  }

  if (!asserted && queue.empty()) {
    const auto fp = first_primary();
    if (fp) identified = g.node(*fp);
  }
  res.identified_root = identified;
  res.turns_used = static_cast<int>(res.trajectory.steps.size());
  res.entities_explored = static_cast<int>(explore_order.size());
  res.scores = judge(assessments, identified, scn);
  res.trajectory.scores = res.scores;
  res.trajectory.final_root_cause = identified;
  return res;
}

nlohmann::json scenario_to_json(const SimScenario& scn) {
  auto chain = nlohmann::json::array();
  for (const auto& e : scn.chain) chain.push_back(entity_to_json(e));
  return {{"scenario_id", scn.scenario_id},
          {"graph", graph_to_json(*scn.graph)},
          {"root_cause", entity_to_json(scn.root_cause)},
          {"chain", std::move(chain)},
          {"symptom", entity_to_json(scn.symptom)},
          {"evidence_noise", scn.evidence_noise},
          {"seed", scn.seed}};
}

SimScenario scenario_from_json(const nlohmann::json& j) {
  try {
    SimScenario scn;
    scn.scenario_id = j.at("scenario_id").get<std::string>();
    scn.graph = std::make_shared<const TopologyGraph>(graph_from_json(j.at("graph")));
    scn.root_cause = entity_from_json(j.at("root_cause"));
    for (const auto& e : j.at("chain")) scn.chain.push_back(entity_from_json(e));
    scn.symptom = entity_from_json(j.at("symptom"));
    scn.evidence_noise = j.at("evidence_noise").get<double>();
    scn.seed = j.at("seed").get<std::uint64_t>();
    if (scn.chain.size() < 2 || scn.chain.front() != scn.root_cause || scn.chain.back() != scn.symptom) {
      throw Error(ErrorCode::MalformedRecord, "chain must run from root_cause to symptom");
    }
    for (std::size_t i = 0; i + 1 < scn.chain.size(); ++i) {
      if (!scn.graph->has_edge(scn.graph->id_of(scn.chain[i]), scn.graph->id_of(scn.chain[i + 1]))) {
        throw Error(ErrorCode::MalformedRecord, "chain is not a directed path in the graph");
      }
    }
    return scn;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, e.what());
  }
}

}  // namespace dtmdp
