#include "dtmdp/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "dtmdp/error.hpp"

namespace dtmdp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

void check_row(const std::vector<double>& row, const char* what) {
  double sum = 0.0;
  for (double p : row) {
    if (p < 0.0) throw Error(ErrorCode::InvalidArgument, std::string(what) + " has a negative entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidArgument, std::string(what) + " does not sum to 1");
  }
}

std::size_t check_dims(std::span<const ObservationSequence> sequences) {
  if (sequences.empty()) throw Error(ErrorCode::DimensionMismatch, "no sequences");
  std::size_t dim = 0;
  bool first = true;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw Error(ErrorCode::DimensionMismatch, "empty observation sequence");
    for (const auto& x : seq) {
      if (first) {
        dim = x.size();
        first = false;
      } else if (x.size() != dim) {
        throw Error(ErrorCode::DimensionMismatch, "observation dimensions differ");
      }
    }
  }
  if (dim == 0) throw Error(ErrorCode::DimensionMismatch, "zero-dimensional observations");
  return dim;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

/// Seeded k-means++ followed by Lloyd iterations.
std::vector<std::vector<double>> kmeans(const std::vector<const std::vector<double>*>& points,
                                        std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> centers;
  std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
  centers.push_back(*points[pick(rng)]);
  std::vector<double> d2(points.size());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, squared_distance(*points[i], c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(*points[pick(rng)]);
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double r = u(rng);
    std::size_t chosen = points.size() - 1;
    for (std::size_t i = 0; i < points.size(); ++i) {
      r -= d2[i];
      if (r <= 0.0 && d2[i] > 0.0) {
        chosen = i;
        break;
      }
    }
    centers.push_back(*points[chosen]);
  }

  const std::size_t dim = centers.front().size();
  std::vector<std::size_t> assign(points.size(), k);
  for (int iter = 0; iter < 50; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_distance(*points[i], centers[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      ++counts[assign[i]];
      for (std::size_t d = 0; d < dim; ++d) sums[assign[i]][d] += (*points[i])[d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) centers[c][d] = sums[c][d] / static_cast<double>(counts[c]);
    }
  }
  return centers;
}

struct SequenceStats {
  double log_likelihood = 0.0;
  std::vector<std::vector<double>> gamma;            // T x K
  std::vector<std::vector<double>> xi_sum;           // K x K
};

/// Scaled forward-backward for one sequence.
SequenceStats forward_backward(const Hmm& hmm, const ObservationSequence& seq) {
  const std::size_t T = seq.size();
  const std::size_t K = hmm.n_states();
  std::vector<std::vector<double>> b(T, std::vector<double>(K));
  std::vector<double> shift(T);
  for (std::size_t t = 0; t < T; ++t) {
    double m = kNegInf;
    for (std::size_t k = 0; k < K; ++k) {
      b[t][k] = hmm.log_emission(k, seq[t]);
      m = std::max(m, b[t][k]);
    }
    shift[t] = m;
    for (std::size_t k = 0; k < K; ++k) b[t][k] = std::exp(b[t][k] - m);
  }

  std::vector<std::vector<double>> alpha(T, std::vector<double>(K));
  std::vector<double> scale(T);
  SequenceStats out;
  for (std::size_t t = 0; t < T; ++t) {
    double c = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      double prior = 0.0;
      if (t == 0) {
        prior = hmm.initial[j];
      } else {
        for (std::size_t i = 0; i < K; ++i) prior += alpha[t - 1][i] * hmm.transition[i][j];
      }
      alpha[t][j] = prior * b[t][j];
      c += alpha[t][j];
    }
    scale[t] = c;
    if (c > 0.0) {
      for (double& a : alpha[t]) a /= c;
    }
    out.log_likelihood += safe_log(c) + shift[t];
  }

  std::vector<std::vector<double>> beta(T, std::vector<double>(K, 1.0));
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t i = 0; i < K; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < K; ++j) acc += hmm.transition[i][j] * b[t + 1][j] * beta[t + 1][j];
      beta[t][i] = scale[t + 1] > 0.0 ? acc / scale[t + 1] : 0.0;
    }
  }

  out.gamma.assign(T, std::vector<double>(K));
  for (std::size_t t = 0; t < T; ++t) {
    double norm = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      out.gamma[t][k] = alpha[t][k] * beta[t][k];
      norm += out.gamma[t][k];
    }
    if (norm > 0.0) {
      for (double& g : out.gamma[t]) g /= norm;
    }
  }
  out.xi_sum.assign(K, std::vector<double>(K, 0.0));
  for (std::size_t t = 0; t + 1 < T; ++t) {
    if (!(scale[t + 1] > 0.0)) continue;
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t j = 0; j < K; ++j) {
        out.xi_sum[i][j] +=
            alpha[t][i] * hmm.transition[i][j] * b[t + 1][j] * beta[t + 1][j] / scale[t + 1];
      }
    }
  }
  return out;
}

}  // namespace

void Hmm::validate(double variance_floor) const {
  const std::size_t K = n_states();
  if (K == 0) throw Error(ErrorCode::InvalidArgument, "HMM has no states");
  if (transition.size() != K || means.size() != K || variances.size() != K) {
    throw Error(ErrorCode::InvalidArgument, "HMM parameter shapes disagree");
  }
  check_row(initial, "initial distribution");
  for (const auto& row : transition) {
    if (row.size() != K) throw Error(ErrorCode::InvalidArgument, "transition matrix is not square");
    check_row(row, "transition row");
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (means[k].size() != dim() || variances[k].size() != dim()) {
      throw Error(ErrorCode::InvalidArgument, "emission dimensions disagree");
    }
    for (double v : variances[k]) {
      if (!(v >= variance_floor)) throw Error(ErrorCode::InvalidArgument, "variance below floor");
    }
  }
}

double Hmm::log_emission(std::size_t state, std::span<const double> x) const {
  const auto& mu = means[state];
  const auto& var = variances[state];
  double lp = 0.0;
  for (std::size_t d = 0; d < mu.size(); ++d) {
    const double diff = x[d] - mu[d];
    lp += -0.5 * (std::log(2.0 * std::numbers::pi * var[d]) + diff * diff / var[d]);
  }
  return lp;
}

double Hmm::log_likelihood(const ObservationSequence& seq) const {
  return forward_backward(*this, seq).log_likelihood;
}

HmmFit fit_hmm(std::span<const ObservationSequence> sequences, std::size_t K,
               const HmmFitConfig& cfg) {
  if (K == 0) throw Error(ErrorCode::InvalidArgument, "HMM needs at least one state");
  const std::size_t D = check_dims(sequences);

  std::vector<const std::vector<double>*> points;
  for (const auto& seq : sequences) {
    for (const auto& x : seq) points.push_back(&x);
  }
  if (K > 1) {
    const bool all_same = std::all_of(points.begin(), points.end(),
                                      [&](const auto* p) { return *p == *points.front(); });
    if (all_same) throw Error(ErrorCode::DegenerateData, "all observations identical");
  }

  // Pooled mean/variance.
  std::vector<double> mean(D, 0.0);
  for (const auto* p : points) {
    for (std::size_t d = 0; d < D; ++d) mean[d] += (*p)[d];
  }
  for (double& m : mean) m /= static_cast<double>(points.size());
  std::vector<double> var(D, 0.0);
  for (const auto* p : points) {
    for (std::size_t d = 0; d < D; ++d) var[d] += ((*p)[d] - mean[d]) * ((*p)[d] - mean[d]);
  }
  for (double& v : var) v = std::max(v / static_cast<double>(points.size()), cfg.variance_floor);

  Hmm hmm;
  hmm.initial.assign(K, 1.0 / static_cast<double>(K));
  hmm.transition.assign(K, std::vector<double>(K, 1.0 / static_cast<double>(K)));
  hmm.means = K == 1 ? std::vector<std::vector<double>>{mean} : kmeans(points, K, cfg.seed);
  hmm.variances.assign(K, var);

  HmmFit fit;
  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    // E-step
    double total_ll = 0.0;
    std::vector<double> init_acc(K, 0.0);
    std::vector<std::vector<double>> trans_acc(K, std::vector<double>(K, 0.0));
    std::vector<double> weight(K, 0.0);
    std::vector<std::vector<double>> mean_acc(K, std::vector<double>(D, 0.0));
    std::vector<SequenceStats> stats;
    stats.reserve(sequences.size());
    for (const auto& seq : sequences) {
      stats.push_back(forward_backward(hmm, seq));
      const SequenceStats& s = stats.back();
      total_ll += s.log_likelihood;
      for (std::size_t k = 0; k < K; ++k) init_acc[k] += s.gamma[0][k];
      for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t j = 0; j < K; ++j) trans_acc[i][j] += s.xi_sum[i][j];
      }
      for (std::size_t t = 0; t < seq.size(); ++t) {
        for (std::size_t k = 0; k < K; ++k) {
          weight[k] += s.gamma[t][k];
          for (std::size_t d = 0; d < D; ++d) mean_acc[k][d] += s.gamma[t][k] * seq[t][d];
        }
      }
    }
    const bool converged =
        !fit.log_likelihood.empty() && total_ll - fit.log_likelihood.back() < cfg.tol;
    fit.log_likelihood.push_back(total_ll);
    if (converged) break;

    // M-step
    for (std::size_t k = 0; k < K; ++k) {
      hmm.initial[k] = init_acc[k] / static_cast<double>(sequences.size());
    }
    for (std::size_t i = 0; i < K; ++i) {
      double row = 0.0;
      for (double x : trans_acc[i]) row += x;
      if (row > 0.0) {
        for (std::size_t j = 0; j < K; ++j) hmm.transition[i][j] = trans_acc[i][j] / row;
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (!(weight[k] > 1e-300)) continue;
      for (std::size_t d = 0; d < D; ++d) hmm.means[k][d] = mean_acc[k][d] / weight[k];
    }
    std::vector<std::vector<double>> var_acc(K, std::vector<double>(D, 0.0));
    for (std::size_t n = 0; n < sequences.size(); ++n) {
      const auto& seq = sequences[n];
      for (std::size_t t = 0; t < seq.size(); ++t) {
        for (std::size_t k = 0; k < K; ++k) {
          for (std::size_t d = 0; d < D; ++d) {
            const double diff = seq[t][d] - hmm.means[k][d];
            var_acc[k][d] += stats[n].gamma[t][k] * diff * diff;
          }
        }
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (!(weight[k] > 1e-300)) continue;
      for (std::size_t d = 0; d < D; ++d) {
        hmm.variances[k][d] = std::max(var_acc[k][d] / weight[k], cfg.variance_floor);
      }
    }
    if (iter + 1 == cfg.max_iter) {
      double final_ll = 0.0;
      for (const auto& seq : sequences) final_ll += hmm.log_likelihood(seq);
      fit.log_likelihood.push_back(final_ll);
    }
  }
  fit.model = std::move(hmm);
  return fit;
}

std::vector<std::size_t> viterbi_decode(const Hmm& hmm, const ObservationSequence& seq) {
  if (seq.empty()) throw Error(ErrorCode::DimensionMismatch, "empty sequence");
  for (const auto& x : seq) {
    if (x.size() != hmm.dim()) throw Error(ErrorCode::DimensionMismatch, "observation width mismatch");
  }
  const std::size_t T = seq.size();
  const std::size_t K = hmm.n_states();
  std::vector<std::vector<double>> log_a(K, std::vector<double>(K));
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = 0; j < K; ++j) log_a[i][j] = safe_log(hmm.transition[i][j]);
  }
  std::vector<double> delta(K);
  for (std::size_t k = 0; k < K; ++k) delta[k] = safe_log(hmm.initial[k]) + hmm.log_emission(k, seq[0]);
  std::vector<std::vector<std::size_t>> back(T, std::vector<std::size_t>(K, 0));
  std::vector<double> next(K);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t j = 0; j < K; ++j) {
      double best = kNegInf;
      std::size_t arg = 0;
      for (std::size_t i = 0; i < K; ++i) {
        const double v = delta[i] + log_a[i][j];
        if (v > best) {
          best = v;
          arg = i;
        }
      }
      next[j] = best + hmm.log_emission(j, seq[t]);
      back[t][j] = arg;
    }
    delta.swap(next);
  }
  std::size_t last = 0;
  for (std::size_t k = 1; k < K; ++k) {
    if (delta[k] > delta[last]) last = k;
  }
  std::vector<std::size_t> path(T);
  path[T - 1] = last;
  for (std::size_t t = T - 1; t > 0; --t) path[t - 1] = back[t][path[t]];
  return path;
}

ObservationSequence hmm_observations(const AbstractTrajectory& traj) {
  ObservationSequence obs;
  obs.reserve(traj.steps.size());
  for (const AbstractStep& s : traj.steps) {
    if (s.action.is_index()) {
      throw Error(ErrorCode::SchemeMismatch, "HMM features need topology (feature) actions");
    }
    std::vector<double> x = s.state;
    const auto& f = s.action.as_features();
    x.insert(x.end(), f.begin(), f.end());
    obs.push_back(std::move(x));
  }
  return obs;
}

AbstractTrajectory augment_with_hmm(const AbstractTrajectory& traj, const Hmm& hmm) {
  if (traj.scheme != SchemeKind::Topology) {
    throw Error(ErrorCode::SchemeMismatch, "HMM augmentation applies to topology trajectories");
  }
  const auto path = viterbi_decode(hmm, hmm_observations(traj));
  AbstractTrajectory out = traj;
  for (std::size_t t = 0; t < out.steps.size(); ++t) {
    auto& state = out.steps[t].state;
    const std::size_t base = state.size();
    state.resize(base + hmm.n_states(), 0.0);
    state[base + path[t]] = 1.0;
  }
  return out;
}

std::size_t select_hmm_states(std::span<const ObservationSequence> train,
                              std::span<const ObservationSequence> validation,
                              std::span<const std::size_t> candidates, const HmmFitConfig& cfg) {
  if (candidates.empty()) throw Error(ErrorCode::InvalidArgument, "no candidate state counts");
  std::size_t best_k = 0;
  double best_ll = kNegInf;
  std::vector<std::size_t> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t k : sorted) {
    const Hmm hmm = fit_hmm(train, k, cfg).model;
    double ll = 0.0;
    for (const auto& seq : validation) ll += hmm.log_likelihood(seq);
    if (best_k == 0 || ll > best_ll) {
      best_ll = ll;
      best_k = k;
    }
  }
  return best_k;
}

nlohmann::json hmm_to_json(const Hmm& hmm) {
  return nlohmann::json{{"initial", hmm.initial},
                        {"transition", hmm.transition},
                        {"means", hmm.means},
                        {"variances", hmm.variances}};
}

Hmm hmm_from_json(const nlohmann::json& j) {
  Hmm hmm;
  hmm.initial = j.at("initial").get<std::vector<double>>();
  hmm.transition = j.at("transition").get<std::vector<std::vector<double>>>();
  hmm.means = j.at("means").get<std::vector<std::vector<double>>>();
  hmm.variances = j.at("variances").get<std::vector<std::vector<double>>>();
  hmm.validate();
  return hmm;
}

}  // namespace dtmdp
