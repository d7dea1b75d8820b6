#include "dtmdp/offline_rl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "dtmdp/error.hpp"

namespace dtmdp {

namespace {

constexpr int kPolicyFormatVersion = 1;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// One logged transition with its action choices at s_t and s_{t+1}.
struct Transition {
  const std::vector<double>* state = nullptr;
  ActionRepr action;
  std::vector<ActionRepr> choices;
  double reward = 0.0;
  const std::vector<double>* next_state = nullptr;  // null when terminal
  std::vector<ActionRepr> next_choices;
};

std::vector<Transition> collect_transitions(std::span<const AbstractTrajectory> trajs,
                                            const ActionSpace& space, bool need_next) {
  std::vector<Transition> out;
  for (const auto& traj : trajs) {
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      const AbstractStep& s = traj.steps[t];
      Transition tr;
      tr.state = &s.state;
      tr.action = s.action;
      tr.choices = action_choices(s, space);
      tr.reward = s.reward;
      if (need_next && t + 1 < traj.steps.size()) {
        tr.next_state = &traj.steps[t + 1].state;
        tr.next_choices = action_choices(traj.steps[t + 1], space);
      }
      out.push_back(std::move(tr));
    }
  }
  if (out.empty()) throw Error(ErrorCode::EmptyData, "no transitions to train on");
  return out;
}

void require_tabular_actions(const Transition& tr, std::size_t action_dim) {
  auto check = [&](const ActionRepr& a) {
    if (!a.is_index()) {
      throw Error(ErrorCode::SchemeMismatch, "tabular Q needs index actions (Name/NameType schemes)");
    }
    if (a.as_index() >= action_dim) {
      throw Error(ErrorCode::DimensionMismatch, "action index outside the vocabulary");
    }
  };
  check(tr.action);
  for (const auto& c : tr.choices) check(c);
  for (const auto& c : tr.next_choices) check(c);
}

std::size_t position_of(const std::vector<ActionRepr>& choices, const ActionRepr& a) {
  const auto it = std::find(choices.begin(), choices.end(), a);
  return static_cast<std::size_t>(it - choices.begin());
}

std::vector<std::vector<double>> encode_all(const FeatureLayout& layout,
                                            std::span<const double> state,
                                            const std::vector<ActionRepr>& actions) {
  std::vector<std::vector<double>> out;
  out.reserve(actions.size());
  for (const auto& a : actions) out.push_back(encode_state_action(layout, state, a));
  return out;
}

double max_value(const QFunction& q, std::span<const double> state,
                 const std::vector<ActionRepr>& choices) {
  double best = kNegInf;
  for (double v : q.values(state, choices)) best = std::max(best, v);
  return best;
}

QFunction cql_tabular(const std::vector<Transition>& trans, const TrainConfig& cfg,
                      const ActionSpace& space, const FeatureLayout& layout) {
  const std::size_t na = layout.action_dim;
  for (const auto& tr : trans) require_tabular_actions(tr, na);

  struct Group {
    std::vector<std::size_t> members;
    std::vector<double> taken;     // n_{s,a}
    std::vector<double> offered;   // transitions at s whose choice set holds a
  };
  std::map<std::vector<double>, Group> groups;
  for (std::size_t i = 0; i < trans.size(); ++i) {
    Group& g = groups[*trans[i].state];
    if (g.taken.empty()) {
      g.taken.assign(na, 0.0);
      g.offered.assign(na, 0.0);
    }
    g.members.push_back(i);
    g.taken[trans[i].action.as_index()] += 1.0;
    for (const auto& c : trans[i].choices) g.offered[c.as_index()] += 1.0;
  }

  QFunction q = QFunction::tabular(layout, space, cfg.gamma);
  for (const auto& [s, g] : groups) q.table()[s].assign(na, 0.0);

  std::vector<double> y(trans.size(), 0.0);
  QTable previous_target;
  std::vector<double> sum_y(na);
  std::vector<double> lse_grad(na);
  std::vector<double> probs;
  const int interval = cfg.target_update_interval;

  for (int update = 0; update < cfg.iterations;) {
    // Target refresh.
    if (!previous_target.empty()) {
      double delta = 0.0;
      for (const auto& [s, row] : q.table()) {
        const auto& old = previous_target.at(s);
        for (std::size_t a = 0; a < na; ++a) delta = std::max(delta, std::abs(row[a] - old[a]));
      }
      if (delta < 1e-12) break;
    }
    previous_target = q.table();
    const QFunction target = q;
    for (std::size_t i = 0; i < trans.size(); ++i) {
      const auto& tr = trans[i];
      y[i] = tr.reward + (tr.next_state ? cfg.gamma * max_value(target, *tr.next_state, tr.next_choices) : 0.0);
    }

    // Majorise-minimise steps against the frozen target until the next refresh.
    const int stop = std::min(cfg.iterations, update + interval);
    for (; update < stop; ++update) {
      double change = 0.0;
      for (auto& [s, g] : groups) {
        std::vector<double>& row = q.table()[s];
        const double n = static_cast<double>(g.members.size());
        std::fill(sum_y.begin(), sum_y.end(), 0.0);
        std::fill(lse_grad.begin(), lse_grad.end(), 0.0);
        for (std::size_t i : g.members) {
          const auto& tr = trans[i];
          sum_y[tr.action.as_index()] += y[i];
          if (cfg.alpha > 0.0) {
            std::vector<double> scores;
            scores.reserve(tr.choices.size());
            for (const auto& c : tr.choices) scores.push_back(row[c.as_index()]);
            probs = softmax(scores, 1.0);
            for (std::size_t k = 0; k < tr.choices.size(); ++k) lse_grad[tr.choices[k].as_index()] += probs[k];
          }
        }
        for (std::size_t a = 0; a < na; ++a) {
          const double curvature = (2.0 * g.taken[a] + cfg.alpha * g.offered[a]) / n;
          if (curvature <= 0.0) continue;
          const double grad = 2.0 / n * (g.taken[a] * row[a] - sum_y[a]) +
                              cfg.alpha / n * (lse_grad[a] - g.taken[a]);
          const double step = grad / curvature;
          row[a] -= step;
          change = std::max(change, std::abs(step));
        }
      }
      if (change < 1e-12) {
        update = stop;
        break;
      }
    }
  }
  return q;
}

QFunction cql_network(const std::vector<Transition>& trans, const TrainConfig& cfg,
                      const ActionSpace& space, const FeatureLayout& layout) {
  std::mt19937_64 rng(cfg.seed);
  QFunction q = QFunction::network(layout, space, cfg.gamma,
                                   Mlp::three_layer(layout.input_dim(), cfg.hidden_units, rng()));

  struct Encoded {
    std::vector<std::vector<double>> choices;
    std::size_t taken = 0;  // position in choices, or choices.size() if absent
    std::vector<double> taken_enc;
    std::vector<std::vector<double>> next;
  };
  std::vector<Encoded> enc(trans.size());
  for (std::size_t i = 0; i < trans.size(); ++i) {
    const auto& tr = trans[i];
    enc[i].choices = encode_all(layout, *tr.state, tr.choices);
    enc[i].taken = position_of(tr.choices, tr.action);
    if (enc[i].taken == tr.choices.size()) enc[i].taken_enc = encode_state_action(layout, *tr.state, tr.action);
    if (tr.next_state) enc[i].next = encode_all(layout, *tr.next_state, tr.next_choices);
  }

  Adam adam(q.net().param_count(), cfg.step_size);
  std::vector<double> y(trans.size(), 0.0);
  std::vector<double> grad(q.net().param_count());
  std::uniform_int_distribution<std::size_t> pick(0, trans.size() - 1);
  std::vector<Mlp::Tape> tapes;
  Mlp::Tape taken_tape;
  std::vector<double> scores;

  for (int update = 0; update < cfg.iterations; ++update) {
    if (update % cfg.target_update_interval == 0) {
      const Mlp target = q.net();
      for (std::size_t i = 0; i < trans.size(); ++i) {
        double best = 0.0;
        if (!enc[i].next.empty()) {
          best = kNegInf;
          for (const auto& x : enc[i].next) best = std::max(best, target.forward(x));
        }
        y[i] = trans[i].reward + cfg.gamma * best;
      }
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::size_t i = pick(rng);
      const Encoded& e = enc[i];
      tapes.resize(e.choices.size());
      scores.resize(e.choices.size());
      for (std::size_t k = 0; k < e.choices.size(); ++k) scores[k] = q.net().forward(e.choices[k], tapes[k]);
      double q_taken;
      const Mlp::Tape* tape_taken;
      if (e.taken < e.choices.size()) {
        q_taken = scores[e.taken];
        tape_taken = &tapes[e.taken];
      } else {
        q_taken = q.net().forward(e.taken_enc, taken_tape);
        tape_taken = &taken_tape;
      }
      q.net().backward(*tape_taken, (2.0 * (q_taken - y[i]) - cfg.alpha) * inv_b, grad);
      if (cfg.alpha > 0.0) {
        const auto p = softmax(scores, 1.0);
        for (std::size_t k = 0; k < e.choices.size(); ++k) {
          q.net().backward(tapes[k], cfg.alpha * p[k] * inv_b, grad);
        }
      }
    }
    adam.step(q.net().params(), grad);
  }
  return q;
}

QPolicy bc_tabular(const std::vector<Transition>& trans, const ActionSpace& space,
                   const FeatureLayout& layout) {
  const std::size_t na = layout.action_dim;
  std::map<std::vector<double>, std::vector<double>> counts;
  for (const auto& tr : trans) {
    require_tabular_actions(tr, na);
    auto& row = counts[*tr.state];
    if (row.empty()) row.assign(na, 0.0);
    row[tr.action.as_index()] += 1.0;
  }
  QTable table;
  for (auto& [s, row] : counts) {
    std::vector<double> logits(na);
    for (std::size_t a = 0; a < na; ++a) logits[a] = row[a] > 0.0 ? std::log(row[a]) : kBcUnseenLogit;
    table.emplace(s, std::move(logits));
  }
  QPolicy p;
  p.q = QFunction::tabular(layout, space, 0.0, std::move(table));
  p.learner = Learner::Bc;
  return p;
}

QPolicy bc_network(const std::vector<Transition>& trans, const TrainConfig& cfg,
                   const ActionSpace& space, const FeatureLayout& layout) {
  std::mt19937_64 rng(cfg.seed);
  QPolicy p;
  p.learner = Learner::Bc;
  p.q = QFunction::network(layout, space, 0.0,
                           Mlp::three_layer(layout.input_dim(), cfg.hidden_units, rng()));
  // The taken action always joins the softmax set.
  std::vector<std::vector<std::vector<double>>> enc(trans.size());
  std::vector<std::size_t> taken(trans.size());
  for (std::size_t i = 0; i < trans.size(); ++i) {
    std::vector<ActionRepr> set = trans[i].choices;
    taken[i] = position_of(set, trans[i].action);
    if (taken[i] == set.size()) set.push_back(trans[i].action);
    enc[i] = encode_all(layout, *trans[i].state, set);
  }
  Mlp& net = p.q.net();
  Adam adam(net.param_count(), cfg.step_size);
  std::vector<double> grad(net.param_count());
  std::uniform_int_distribution<std::size_t> pick(0, trans.size() - 1);
  std::vector<Mlp::Tape> tapes;
  std::vector<double> scores;
  const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
  for (int update = 0; update < cfg.iterations; ++update) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::size_t i = pick(rng);
      tapes.resize(enc[i].size());
      scores.resize(enc[i].size());
      for (std::size_t k = 0; k < enc[i].size(); ++k) scores[k] = net.forward(enc[i][k], tapes[k]);
      const auto prob = softmax(scores, 1.0);
      for (std::size_t k = 0; k < enc[i].size(); ++k) {
        const double d = prob[k] - (k == taken[i] ? 1.0 : 0.0);
        net.backward(tapes[k], d * inv_b, grad);
      }
    }
    adam.step(net.params(), grad);
  }
  return p;
}

nlohmann::json space_to_json(const ActionSpace& s) {
  return {{"kind", s.kind == ActionSpace::Kind::FullVocabulary ? "full_vocabulary" : "candidate_set"},
          {"size", s.size}};
}

ActionSpace space_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "full_vocabulary") return ActionSpace::full_vocabulary(j.at("size").get<std::size_t>());
  if (kind == "candidate_set") return ActionSpace::candidate_set();
  throw Error(ErrorCode::MalformedRecord, "unknown action space '" + kind + "'");
}

}  // namespace

std::string_view to_string(QForm f) noexcept { return f == QForm::Tabular ? "tabular" : "network"; }

QForm parse_q_form(std::string_view text) {
  if (text == "tabular") return QForm::Tabular;
  if (text == "network") return QForm::Network;
  throw Error(ErrorCode::InvalidArgument, "unknown Q form '" + std::string(text) + "'");
}

std::string_view to_string(Learner l) noexcept { return l == Learner::Cql ? "cql" : "bc"; }

Learner parse_learner(std::string_view text) {
  if (text == "cql") return Learner::Cql;
  if (text == "bc") return Learner::Bc;
  throw Error(ErrorCode::InvalidArgument, "unknown learner '" + std::string(text) + "'");
}

std::vector<ActionRepr> action_choices(const AbstractStep& step, const ActionSpace& space) {
  if (space.kind == ActionSpace::Kind::FullVocabulary) {
    std::vector<ActionRepr> all;
    all.reserve(space.size);
    for (std::size_t i = 0; i < space.size; ++i) all.push_back(ActionRepr::index(i));
    return all;
  }
  if (step.candidates.empty()) {
    throw Error(ErrorCode::MissingCandidateSets, "step has no recorded candidate actions");
  }
  return step.candidates;
}

QFunction QFunction::tabular(FeatureLayout layout, ActionSpace space, double gamma, QTable table) {
  QFunction q;
  q.form_ = QForm::Tabular;
  q.layout_ = layout;
  q.space_ = space;
  q.gamma_ = gamma;
  q.table_ = std::move(table);
  for (const auto& [s, row] : q.table_) {
    if (s.size() != layout.state_dim || row.size() != layout.action_dim) {
      throw Error(ErrorCode::DimensionMismatch, "Q table row does not match the layout");
    }
  }
  return q;
}

QFunction QFunction::network(FeatureLayout layout, ActionSpace space, double gamma, Mlp net) {
  if (net.input_dim() != layout.input_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "Q network input does not match the layout");
  }
  QFunction q;
  q.form_ = QForm::Network;
  q.layout_ = layout;
  q.space_ = space;
  q.gamma_ = gamma;
  q.net_ = std::move(net);
  return q;
}

double QFunction::value(std::span<const double> state, const ActionRepr& action) const {
  if (form_ == QForm::Network) return net_.forward(encode_state_action(layout_, state, action));
  if (state.size() != layout_.state_dim) {
    throw Error(ErrorCode::DimensionMismatch, "state width " + std::to_string(state.size()) +
                                                  " != " + std::to_string(layout_.state_dim));
  }
  if (!action.is_index() || action.as_index() >= layout_.action_dim) {
    throw Error(ErrorCode::DimensionMismatch, "action does not index the tabular Q row");
  }
  const auto it = table_.find(std::vector<double>(state.begin(), state.end()));
  return it == table_.end() ? 0.0 : it->second[action.as_index()];
}

std::vector<double> QFunction::values(std::span<const double> state,
                                      std::span<const ActionRepr> actions) const {
  std::vector<double> out;
  out.reserve(actions.size());
  for (const auto& a : actions) out.push_back(value(state, a));
  return out;
}

std::size_t greedy_choice(const QFunction& q, std::span<const double> state,
                          std::span<const ActionRepr> candidates) {
  if (candidates.empty()) throw Error(ErrorCode::EmptyCandidates, "no candidates to choose from");
  const auto v = q.values(state, candidates);
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (v[k] > v[best]) {
      best = k;
    } else if (v[k] == v[best] && candidates[k].is_index() && candidates[best].is_index() &&
               candidates[k].as_index() < candidates[best].as_index()) {
      best = k;
    }
  }
  return best;
}

std::vector<double> softmax(std::span<const double> scores, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be positive");
  std::vector<double> p(scores.size(), 0.0);
  if (scores.empty()) return p;
  const double top = *std::max_element(scores.begin(), scores.end());
  if (top == kNegInf) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(p.size()));
    return p;
  }
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = scores[i] == kNegInf ? 0.0 : std::exp((scores[i] - top) / temperature);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

std::vector<double> policy_probs(const QPolicy& policy, std::span<const double> state,
                                 std::span<const ActionRepr> candidates) {
  if (candidates.empty()) throw Error(ErrorCode::EmptyCandidates, "policy needs at least one candidate");
  return softmax(policy.q.values(state, candidates), policy.temperature);
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0)) throw Error(ErrorCode::InvalidArgument, "alpha must be >= 0");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error(ErrorCode::InvalidArgument, "gamma must lie in [0, 1)");
  if (iterations < 0) throw Error(ErrorCode::InvalidArgument, "iterations must be >= 0");
  if (!(step_size > 0.0)) throw Error(ErrorCode::InvalidArgument, "step_size must be positive");
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be positive");
  if (hidden_units == 0) throw Error(ErrorCode::InvalidArgument, "hidden_units must be positive");
  if (target_update_interval <= 0) {
    throw Error(ErrorCode::InvalidArgument, "target_update_interval must be positive");
  }
}

QFunction cql_train(std::span<const AbstractTrajectory> trajs, const TrainConfig& cfg,
                    const ActionSpace& space, const FeatureLayout& layout) {
  cfg.validate();
  const auto trans = collect_transitions(trajs, space, true);
  return cfg.form == QForm::Tabular ? cql_tabular(trans, cfg, space, layout)
                                    : cql_network(trans, cfg, space, layout);
}

QPolicy bc_train(std::span<const AbstractTrajectory> trajs, const TrainConfig& cfg,
                 const ActionSpace& space, const FeatureLayout& layout) {
  cfg.validate();
  const auto trans = collect_transitions(trajs, space, false);
  return cfg.form == QForm::Tabular ? bc_tabular(trans, space, layout)
                                    : bc_network(trans, cfg, space, layout);
}

nlohmann::json policy_to_json(const QPolicy& policy) {
  const QFunction& q = policy.q;
  nlohmann::json j{{"format_version", kPolicyFormatVersion},
                   {"scheme", to_string(policy.scheme)},
                   {"learner", to_string(policy.learner)},
                   {"form", to_string(q.form())},
                   {"action_space", space_to_json(q.action_space())},
                   {"state_dim", q.layout().state_dim},
                   {"action_dim", q.layout().action_dim},
                   {"gamma", q.gamma()},
                   {"temperature", policy.temperature}};
  if (q.form() == QForm::Network) {
    j["params"] = mlp_to_json(q.net());
  } else {
    auto rows = nlohmann::json::array();
    for (const auto& [s, v] : q.table()) rows.push_back({{"state", s}, {"q", v}});
    j["params"] = std::move(rows);
  }
  return j;
}

QPolicy policy_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kPolicyFormatVersion) {
      throw Error(ErrorCode::MalformedRecord, "unsupported policy format version");
    }
    QPolicy p;
    p.scheme = parse_scheme_kind(j.at("scheme").get<std::string>());
    p.learner = parse_learner(j.at("learner").get<std::string>());
    p.temperature = j.at("temperature").get<double>();
    const FeatureLayout layout{j.at("state_dim").get<std::size_t>(), j.at("action_dim").get<std::size_t>()};
    const ActionSpace space = space_from_json(j.at("action_space"));
    const double gamma = j.at("gamma").get<double>();
    if (parse_q_form(j.at("form").get<std::string>()) == QForm::Network) {
      p.q = QFunction::network(layout, space, gamma, mlp_from_json(j.at("params")));
    } else {
      QTable table;
      for (const auto& row : j.at("params")) {
        table.emplace(row.at("state").get<std::vector<double>>(), row.at("q").get<std::vector<double>>());
      }
      p.q = QFunction::tabular(layout, space, gamma, std::move(table));
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, e.what());
  }
}

void save_policy(const QPolicy& policy, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << policy_to_json(policy).dump() << '\n';
}

QPolicy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in && !std::filesystem::exists(path)) throw Error(ErrorCode::MissingArtifact, "missing " + path.string());
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, e.what());
  }
  return policy_from_json(j);
}

}  // namespace dtmdp
