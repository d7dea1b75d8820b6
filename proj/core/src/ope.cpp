#include "dtmdp/ope.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dtmdp/error.hpp"

namespace dtmdp {

namespace {

struct EvalTransition {
  const std::vector<double>* state = nullptr;
  ActionRepr action;
  double reward = 0.0;
  const std::vector<double>* next_state = nullptr;
  std::vector<ActionRepr> next_choices;
  std::vector<double> next_probs;
};

std::vector<EvalTransition> eval_transitions(const QPolicy& policy,
                                             std::span<const AbstractTrajectory> trajs) {
  const ActionSpace& space = policy.q.action_space();
  std::vector<EvalTransition> out;
  for (const auto& traj : trajs) {
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      const AbstractStep& s = traj.steps[t];
      EvalTransition tr;
      tr.state = &s.state;
      tr.action = s.action;
      tr.reward = s.reward;
      if (t + 1 < traj.steps.size()) {
        const AbstractStep& next = traj.steps[t + 1];
        tr.next_state = &next.state;
        tr.next_choices = action_choices(next, space);
        tr.next_probs = policy_probs(policy, next.state, tr.next_choices);
      }
      out.push_back(std::move(tr));
    }
  }
  if (out.empty()) throw Error(ErrorCode::EmptyData, "no evaluation transitions");
  return out;
}

double next_value(const QFunction& q, const EvalTransition& tr) {
  if (!tr.next_state) return 0.0;
  const auto v = q.values(*tr.next_state, tr.next_choices);
  double acc = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) acc += tr.next_probs[k] * v[k];
  return acc;
}

FqeEstimate fqe_tabular(const QPolicy& policy, const std::vector<EvalTransition>& trans,
                        const TrainConfig& cfg, const FqeOptions& opts) {
  const FeatureLayout& layout = policy.q.layout();
  struct Cell {
    std::vector<std::size_t> members;
  };
  std::map<std::pair<std::vector<double>, std::size_t>, Cell> cells;
  QTable table;
  for (std::size_t i = 0; i < trans.size(); ++i) {
    const auto& tr = trans[i];
    if (!tr.action.is_index() || tr.action.as_index() >= layout.action_dim) {
      throw Error(ErrorCode::SchemeMismatch, "tabular FQE needs index actions");
    }
    cells[{*tr.state, tr.action.as_index()}].members.push_back(i);
    table.try_emplace(*tr.state, std::vector<double>(layout.action_dim, 0.0));
  }
  FqeEstimate est;
  est.qhat = QFunction::tabular(layout, policy.q.action_space(), cfg.gamma, std::move(table));
  std::vector<double> updated(cells.size());
  while (est.rounds < opts.max_rounds) {
    std::size_t c = 0;
    for (const auto& [key, cell] : cells) {
      double acc = 0.0;
      for (std::size_t i : cell.members) acc += trans[i].reward + cfg.gamma * next_value(est.qhat, trans[i]);
      updated[c++] = acc / static_cast<double>(cell.members.size());
    }
    double change = 0.0;
    c = 0;
    for (const auto& [key, cell] : cells) {
      double& q = est.qhat.table()[key.first][key.second];
      change = std::max(change, std::abs(updated[c] - q));
      q = updated[c++];
    }
    ++est.rounds;
    if (change < opts.tol) {
      est.converged = true;
      break;
    }
  }
  return est;
}

FqeEstimate fqe_network(const QPolicy& policy, const std::vector<EvalTransition>& trans,
                        const TrainConfig& cfg, const FqeOptions& opts) {
  const FeatureLayout& layout = policy.q.layout();
  std::mt19937_64 rng(cfg.seed);
  FqeEstimate est;
  est.qhat = QFunction::network(layout, policy.q.action_space(), cfg.gamma,
                                Mlp::three_layer(layout.input_dim(), cfg.hidden_units, rng()));
  std::vector<std::vector<double>> inputs;
  inputs.reserve(trans.size());
  for (const auto& tr : trans) inputs.push_back(encode_state_action(layout, *tr.state, tr.action));

  const int steps_per_round = cfg.target_update_interval;
  const int rounds = std::min(opts.max_rounds, std::max(1, cfg.iterations / steps_per_round));
  std::vector<double> y(trans.size());
  std::vector<double> before(trans.size());
  std::vector<double> grad(est.qhat.net().param_count());
  std::uniform_int_distribution<std::size_t> pick(0, trans.size() - 1);
  Mlp::Tape tape;
  Adam adam(est.qhat.net().param_count(), cfg.step_size);
  const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);

  for (int r = 0; r < rounds; ++r) {
    for (std::size_t i = 0; i < trans.size(); ++i) {
      y[i] = trans[i].reward + cfg.gamma * next_value(est.qhat, trans[i]);
      before[i] = est.qhat.net().forward(inputs[i]);
    }
    Mlp& net = est.qhat.net();
    for (int s = 0; s < steps_per_round; ++s) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const std::size_t i = pick(rng);
        const double q = net.forward(inputs[i], tape);
        net.backward(tape, 2.0 * (q - y[i]) * inv_b, grad);
      }
      adam.step(net.params(), grad);
    }
    double change = 0.0;
    for (std::size_t i = 0; i < trans.size(); ++i) {
      change = std::max(change, std::abs(net.forward(inputs[i]) - before[i]));
    }
    ++est.rounds;
    if (change < opts.tol) {
      est.converged = true;
      break;
    }
  }
  return est;
}

}  // namespace

double initial_value(const QPolicy& policy, const QFunction& qhat,
                     std::span<const AbstractTrajectory> trajs) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& traj : trajs) {
    if (traj.steps.empty()) continue;
    const AbstractStep& s0 = traj.steps.front();
    const auto choices = action_choices(s0, policy.q.action_space());
    const auto p = policy_probs(policy, s0.state, choices);
    const auto q = qhat.values(s0.state, choices);
    for (std::size_t k = 0; k < p.size(); ++k) total += p[k] * q[k];
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::EmptyData, "no initial states");
  return total / static_cast<double>(n);
}

FqeEstimate fqe(const QPolicy& policy, std::span<const AbstractTrajectory> eval_trajs,
                const TrainConfig& cfg, const FqeOptions& opts, std::string target_policy_id) {
  cfg.validate();
  const auto trans = eval_transitions(policy, eval_trajs);
  FqeEstimate est = policy.q.form() == QForm::Tabular ? fqe_tabular(policy, trans, cfg, opts)
                                                      : fqe_network(policy, trans, cfg, opts);
  est.target_policy_id = std::move(target_policy_id);
  est.initial_value = initial_value(policy, est.qhat, eval_trajs);
  return est;
}

double initial_value_score(const FqeEstimate& est) noexcept { return est.initial_value; }

std::vector<RankedPolicy> rank_policies(std::span<const PolicyCandidate> candidates,
                                        std::span<const AbstractTrajectory> eval_trajs,
                                        const TrainConfig& cfg, std::size_t k,
                                        const FqeOptions& opts) {
  if (candidates.empty()) throw Error(ErrorCode::NoCandidates, "no candidate policies to rank");
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  std::vector<RankedPolicy> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) {
    const auto est = fqe(c.policy, eval_trajs, cfg, opts, c.id);
    out.push_back({c.id, c.scheme, c.reward_mode, c.learner, est.initial_value, 0});
  }
  std::stable_sort(out.begin(), out.end(), [](const RankedPolicy& a, const RankedPolicy& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  out.resize(std::min(k, out.size()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = i + 1;
  return out;
}

nlohmann::json ranking_to_json(std::span<const RankedPolicy> ranking) {
  auto arr = nlohmann::json::array();
  for (const auto& r : ranking) {
    arr.push_back({{"rank", r.rank},
                   {"id", r.id},
                   {"scheme", r.scheme},
                   {"reward_mode", r.reward_mode},
                   {"learner", r.learner},
                   {"initial_value", r.score}});
  }
  return arr;
}

std::string ranking_to_csv(std::span<const RankedPolicy> ranking) {
  std::ostringstream out;
  out.precision(17);
  out << "rank,id,scheme,reward_mode,learner,initial_value\n";
  for (const auto& r : ranking) {
    out << r.rank << ',' << r.id << ',' << r.scheme << ',' << r.reward_mode << ',' << r.learner << ','
        << r.score << '\n';
  }
  return out.str();
}

}  // namespace dtmdp
