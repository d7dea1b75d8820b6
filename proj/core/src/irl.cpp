#include "dtmdp/irl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "dtmdp/error.hpp"

namespace dtmdp {

namespace {

constexpr int kRewardNetFormatVersion = 1;

/// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

const AbstractTrajectory& at(std::span<const AbstractTrajectory> trajs, std::size_t i) {
  if (i >= trajs.size()) throw Error(ErrorCode::InvalidArgument, "pair index out of range");
  return trajs[i];
}

}  // namespace

std::string_view to_string(RankingSignal s) noexcept {
  return s == RankingSignal::FpcOnly ? "fpc_only" : "mean_fpc_rce";
}

RankingSignal parse_ranking_signal(std::string_view text) {
  if (text == "fpc_only") return RankingSignal::FpcOnly;
  if (text == "mean_fpc_rce") return RankingSignal::MeanFpcRce;
  throw Error(ErrorCode::InvalidArgument, "unknown ranking signal '" + std::string(text) + "'");
}

double ranking_score(const JudgeScores& scores, RankingSignal signal) {
  if (signal == RankingSignal::FpcOnly) return scores.fpc_accuracy;
  return 0.5 * (scores.fpc_accuracy + scores.rce_identification);
}

std::vector<PreferencePair> build_pairs(std::span<const double> scores, double margin,
                                        std::size_t max_pairs, std::uint64_t seed) {
  if (!(margin >= 0.0)) throw Error(ErrorCode::InvalidArgument, "margin must be >= 0");
  std::vector<PreferencePair> pairs;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (std::size_t j = 0; j < scores.size(); ++j) {
      const double gap = scores[j] - scores[i];
      if (i != j && gap > margin) pairs.push_back({i, j, gap});
    }
  }
  if (pairs.size() > max_pairs) {
    std::vector<std::size_t> idx(pairs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(max_pairs);
    std::sort(idx.begin(), idx.end());
    std::vector<PreferencePair> kept;
    kept.reserve(max_pairs);
    for (std::size_t k : idx) kept.push_back(pairs[k]);
    pairs.swap(kept);
  }
  return pairs;
}

std::vector<PreferencePair> build_pairs(std::span<const AbstractTrajectory> trajs,
                                        RankingSignal signal, double margin,
                                        std::size_t max_pairs, std::uint64_t seed) {
  std::vector<double> scores;
  scores.reserve(trajs.size());
  for (const auto& t : trajs) scores.push_back(ranking_score(t.scores, signal));
  return build_pairs(scores, margin, max_pairs, seed);
}

RewardNet::RewardNet(FeatureLayout layout, Mlp net, double discount)
    : layout_(layout), net_(std::move(net)), discount_(discount) {
  if (net_.input_dim() != layout_.input_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "reward network input does not match the layout");
  }
}

RewardNet RewardNet::create(FeatureLayout layout, std::size_t hidden_units, std::uint64_t seed,
                            double discount) {
  return RewardNet(layout, Mlp::three_layer(layout.input_dim(), hidden_units, seed), discount);
}

double RewardNet::reward(std::span<const double> state, const ActionRepr& action) const {
  return net_.forward(encode_state_action(layout_, state, action));
}

double RewardNet::trajectory_return(const AbstractTrajectory& traj) const {
  double g = 0.0;
  double w = 1.0;
  for (const AbstractStep& s : traj.steps) {
    g += w * reward(s.state, s.action);
    w *= discount_;
  }
  return g;
}

double trex_loss(const RewardNet& net, const PreferencePair& pair,
                 std::span<const AbstractTrajectory> trajs) {
  const double g_lower = net.trajectory_return(at(trajs, pair.lower));
  const double g_higher = net.trajectory_return(at(trajs, pair.higher));
  // log(e^{G_i} + e^{G_j}) - G_j
  return softplus(g_lower - g_higher);
}

std::vector<double> trex_grad(const RewardNet& net, std::span<const PreferencePair> batch,
                              std::span<const AbstractTrajectory> trajs) {
  if (batch.empty()) throw Error(ErrorCode::InvalidArgument, "empty batch");
  std::map<std::size_t, double> returns;
  for (const auto& p : batch) {
    for (std::size_t k : {p.lower, p.higher}) {
      if (!returns.contains(k)) returns[k] = net.trajectory_return(at(trajs, k));
    }
  }
  // dL/dG per trajectory, averaged over the batch.
  std::map<std::size_t, double> coef;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& p : batch) {
    const double s = sigmoid(returns[p.lower] - returns[p.higher]);
    coef[p.lower] += s * inv;
    coef[p.higher] -= s * inv;
  }
  std::vector<double> grad(net.net().param_count(), 0.0);
  Mlp::Tape tape;
  for (const auto& [k, c] : coef) {
    if (c == 0.0) continue;
    double w = 1.0;
    for (const AbstractStep& s : trajs[k].steps) {
      net.net().forward(encode_state_action(net.layout(), s.state, s.action), tape);
      net.net().backward(tape, c * w, grad);
      w *= net.discount();
    }
  }
  return grad;
}

double pairwise_accuracy(const RewardNet& net, std::span<const PreferencePair> pairs,
                         std::span<const AbstractTrajectory> trajs) {
  if (pairs.empty()) return 0.0;
  std::map<std::size_t, double> returns;
  auto ret = [&](std::size_t k) {
    auto it = returns.find(k);
    if (it != returns.end()) return it->second;
    return returns[k] = net.trajectory_return(at(trajs, k));
  };
  std::size_t correct = 0;
  for (const auto& p : pairs) {
    if (ret(p.higher) > ret(p.lower)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

RewardNet train_reward(std::span<const PreferencePair> pairs,
                       std::span<const AbstractTrajectory> trajs, FeatureLayout layout,
                       const RewardTrainConfig& cfg, RewardTrainReport* report) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyPairSet, "no preference pairs to train on");
  if (cfg.batch_size == 0 || cfg.epochs <= 0) {
    throw Error(ErrorCode::InvalidArgument, "batch_size and epochs must be positive");
  }
  std::mt19937_64 rng(cfg.seed);
  std::vector<PreferencePair> shuffled(pairs.begin(), pairs.end());
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto n_holdout = static_cast<std::size_t>(
      std::floor(cfg.holdout_fraction * static_cast<double>(shuffled.size())));
  std::vector<PreferencePair> holdout(shuffled.begin(),
                                      shuffled.begin() + static_cast<std::ptrdiff_t>(n_holdout));
  std::vector<PreferencePair> train(shuffled.begin() + static_cast<std::ptrdiff_t>(n_holdout),
                                    shuffled.end());
  // Too few pairs for a holdout: select on the training pairs instead.
  const std::vector<PreferencePair>& selection = holdout.empty() ? train : holdout;

  RewardNet net = RewardNet::create(layout, cfg.hidden_units, rng(), cfg.discount);
  Adam adam(net.net().param_count(), cfg.step_size);
  RewardNet best = net;
  double best_acc = -1.0;
  RewardTrainReport local;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(train.size(), start + cfg.batch_size);
      const auto grad = trex_grad(
          net, std::span<const PreferencePair>(train.data() + start, end - start), trajs);
      adam.step(net.net().params(), grad);
    }
    const double acc = pairwise_accuracy(net, selection, trajs);
    local.holdout_accuracy.push_back(acc);
    if (acc > best_acc) {
      best_acc = acc;
      best = net;
      local.best_epoch = epoch;
    }
  }
  local.best_accuracy = best_acc;
  if (report) *report = std::move(local);
  return best;
}

std::string_view to_string(RewardMode m) noexcept {
  switch (m) {
    case RewardMode::IrlPerTurn: return "irl";
    case RewardMode::SparseFinal: return "sparse";
    case RewardMode::Combined: return "combined";
  }
  return "irl";
}

RewardMode parse_reward_mode(std::string_view text) {
  if (text == "irl") return RewardMode::IrlPerTurn;
  if (text == "sparse") return RewardMode::SparseFinal;
  if (text == "combined") return RewardMode::Combined;
  throw Error(ErrorCode::InvalidArgument, "unknown reward mode '" + std::string(text) + "'");
}

AbstractTrajectory relabel(const AbstractTrajectory& traj, const RewardNet* net,
                           const RelabelSpec& spec) {
  AbstractTrajectory out = traj;
  if (out.steps.empty()) return out;
  const double outcome = spec.outcome / 100.0;
  if (spec.mode != RewardMode::SparseFinal && net == nullptr) {
    throw Error(ErrorCode::InvalidArgument, "IRL reward modes need a reward network");
  }
  if (!(spec.irl_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "irl_scale must be positive");
  auto r_hat = [&](const AbstractStep& s) { return (net->reward(s.state, s.action) - spec.irl_shift) / spec.irl_scale; };
  for (std::size_t t = 0; t < out.steps.size(); ++t) {
    AbstractStep& s = out.steps[t];
    const bool last = t + 1 == out.steps.size();
    switch (spec.mode) {
      case RewardMode::IrlPerTurn:
        s.reward = r_hat(s);
        break;
      case RewardMode::SparseFinal:
        s.reward = last ? outcome : 0.0;
        break;
      case RewardMode::Combined:
        s.reward = r_hat(s) + (last ? spec.lambda * outcome : 0.0);
        break;
    }
  }
  return out;
}

RewardScaling fit_reward_scaling(std::span<const AbstractTrajectory> trajs, const RewardNet& net) {
  double sum = 0.0;
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& t : trajs) {
    for (const auto& s : t.steps) {
      const double r = net.reward(s.state, s.action);
      sum += r;
      sq += r * r;
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorCode::EmptyData, "no steps to fit the reward scaling");
  RewardScaling out;
  out.shift = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - out.shift * out.shift);
  out.scale = var > 1e-24 ? std::sqrt(var) : 1.0;
  return out;
}

void save_reward_net(const RewardNet& net, const std::filesystem::path& path) {
  nlohmann::json j = mlp_to_json(net.net());
  j["format_version"] = kRewardNetFormatVersion;
  j["state_dim"] = net.layout().state_dim;
  j["action_dim"] = net.layout().action_dim;
  j["discount"] = net.discount();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << j.dump() << '\n';
}

RewardNet load_reward_net(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in && !std::filesystem::exists(path)) throw Error(ErrorCode::MissingArtifact, "missing " + path.string());
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    if (j.at("format_version").get<int>() != kRewardNetFormatVersion) {
      throw Error(ErrorCode::MalformedRecord, "unsupported reward-net format version");
    }
    FeatureLayout layout{j.at("state_dim").get<std::size_t>(), j.at("action_dim").get<std::size_t>()};
    return RewardNet(layout, mlp_from_json(j), j.at("discount").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, e.what());
  }
}

}  // namespace dtmdp
