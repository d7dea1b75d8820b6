#include "dtmdp/evalstats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "dtmdp/error.hpp"

namespace dtmdp {

namespace {

// Two-tailed Nemenyi critical values q_alpha for k = 2..10 (studentized range / sqrt 2).
constexpr std::array<double, 9> kQ05{1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164};
constexpr std::array<double, 9> kQ10{1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920};

void mean_std(std::span<const double> xs, double& mean, double& sd) {
  mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(xs.size()));
}

}  // namespace

PassAt3Estimate pass_at_3_bootstrap(std::span<const std::vector<TrialRecord>> scenarios, int n_boot,
                                    std::uint64_t seed) {
  if (scenarios.empty()) throw Error(ErrorCode::EmptyData, "no scenarios");
  if (n_boot < 1) throw Error(ErrorCode::InvalidArgument, "n_boot must be >= 1");
  for (const auto& s : scenarios) {
    if (s.size() < 3) throw Error(ErrorCode::TooFewTrials, "Pass@3 needs at least 3 trials per scenario");
  }
  std::mt19937_64 rng(seed);
  const std::size_t ns = scenarios.size();
  std::vector<double> recall(static_cast<std::size_t>(n_boot));
  std::vector<double> f1(static_cast<std::size_t>(n_boot));
  PassAt3Estimate est;
  est.scenario_recall.assign(ns, 0.0);
  est.scenario_f1.assign(ns, 0.0);
  for (int b = 0; b < n_boot; ++b) {
    double r_sum = 0.0;
    double f_sum = 0.0;
    for (std::size_t s = 0; s < ns; ++s) {
      std::uniform_int_distribution<std::size_t> pick(0, scenarios[s].size() - 1);
      double best_r = 0.0;
      double best_f = 0.0;
      for (int k = 0; k < 3; ++k) {
        const TrialRecord& t = scenarios[s][pick(rng)];
        best_r = std::max(best_r, t.success);
        best_f = std::max(best_f, t.f1);
      }
      r_sum += best_r;
      f_sum += best_f;
      est.scenario_recall[s] += best_r;
      est.scenario_f1[s] += best_f;
    }
    recall[static_cast<std::size_t>(b)] = r_sum / static_cast<double>(ns);
    f1[static_cast<std::size_t>(b)] = f_sum / static_cast<double>(ns);
  }
  for (std::size_t s = 0; s < ns; ++s) {
    est.scenario_recall[s] /= n_boot;
    est.scenario_f1[s] /= n_boot;
  }
  mean_std(recall, est.recall_mean, est.recall_std);
  mean_std(f1, est.f1_mean, est.f1_std);
  return est;
}

std::vector<TTestResult> paired_t_bonferroni(std::span<const double> baseline,
                                             std::span<const std::vector<double>> methods,
                                             double alpha) {
  const std::size_t n = baseline.size();
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "paired t-test needs at least 2 scenarios");
  const double m = static_cast<double>(methods.size());
  std::vector<TTestResult> out;
  out.reserve(methods.size());
  for (const auto& method : methods) {
    if (method.size() != n) throw Error(ErrorCode::LengthMismatch, "method not aligned with baseline");
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = method[i] - baseline[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    TTestResult r;
    const bool all_zero = std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; });
    if (all_zero) {
      r.t_stat = 0.0;
      r.p_raw = 1.0;
    } else if (sd == 0.0) {
      r.t_stat = std::copysign(std::numeric_limits<double>::infinity(), mean);
      r.p_raw = 0.0;
    } else {
      r.t_stat = mean / (sd / std::sqrt(static_cast<double>(n)));
      const boost::math::students_t dist(static_cast<double>(n - 1));
      r.p_raw = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t_stat))));
    }
    r.p_adjusted = std::min(1.0, m * r.p_raw);
    r.significant = r.p_adjusted < alpha;
    out.push_back(r);
  }
  return out;
}

double nemenyi_q(std::size_t k, double alpha) {
  if (k < 2 || k > 10) throw Error(ErrorCode::UnsupportedK, "Nemenyi table covers 2..10 methods");
  if (alpha == 0.05) return kQ05[k - 2];
  if (alpha == 0.10) return kQ10[k - 2];
  throw Error(ErrorCode::InvalidArgument, "alpha must be 0.05 or 0.10");
}

std::vector<std::vector<double>> rank_scores(std::span<const std::vector<double>> scores,
                                             bool higher_is_better) {
  const std::size_t k = scores.size();
  if (k == 0) return {};
  const std::size_t n = scores.front().size();
  for (const auto& row : scores) {
    if (row.size() != n) throw Error(ErrorCode::LengthMismatch, "ragged score matrix");
  }
  std::vector<std::vector<double>> ranks(k, std::vector<double>(n));
  std::vector<std::size_t> idx(k);
  for (std::size_t s = 0; s < n; ++s) {
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return higher_is_better ? scores[a][s] > scores[b][s] : scores[a][s] < scores[b][s];
    });
    for (std::size_t i = 0; i < k;) {
      std::size_t j = i + 1;
      while (j < k && scores[idx[j]][s] == scores[idx[i]][s]) ++j;
      const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
      for (std::size_t t = i; t < j; ++t) ranks[idx[t]][s] = mid;
      i = j;
    }
  }
  return ranks;
}

NemenyiResult nemenyi_cd(std::span<const std::vector<double>> ranks, double alpha) {
  const std::size_t k = ranks.size();
  const double q = nemenyi_q(k, alpha);
  const std::size_t n = ranks.front().size();
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "Nemenyi needs at least 2 scenarios");
  const double kd = static_cast<double>(k);
  for (std::size_t s = 0; s < n; ++s) {
    double sum = 0.0;
    for (const auto& row : ranks) {
      if (row.size() != n) throw Error(ErrorCode::BadRanks, "ragged rank matrix");
      if (!(row[s] >= 1.0 && row[s] <= kd)) throw Error(ErrorCode::BadRanks, "rank outside 1..k");
      sum += row[s];
    }
    if (std::abs(sum - kd * (kd + 1.0) / 2.0) > 1e-9) {
      throw Error(ErrorCode::BadRanks, "ranks of scenario " + std::to_string(s) + " do not sum to k(k+1)/2");
    }
  }
  NemenyiResult res;
  for (const auto& row : ranks) {
    res.avg_ranks.push_back(std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(n));
  }
  res.cd = q * std::sqrt(kd * (kd + 1.0) / (6.0 * static_cast<double>(n)));

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return res.avg_ranks[a] < res.avg_ranks[b]; });
  std::size_t last_end = 0;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i;
    while (j + 1 < k && res.avg_ranks[order[j + 1]] - res.avg_ranks[order[i]] < res.cd) ++j;
    if (j + 1 > last_end) {
      res.groups.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                              order.begin() + static_cast<std::ptrdiff_t>(j + 1));
      last_end = j + 1;
    }
  }
  return res;
}

std::string render_cd_diagram(const NemenyiResult& result, std::span<const std::string> names) {
  const std::size_t k = result.avg_ranks.size();
  if (names.size() != k) throw Error(ErrorCode::LengthMismatch, "one name per method");
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return result.avg_ranks[a] < result.avg_ranks[b]; });
  std::size_t width = 0;
  for (const auto& nm : names) width = std::max(width, nm.size());

  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  out << "CD = " << result.cd << " (lower rank is better)\n";
  for (std::size_t pos = 0; pos < k; ++pos) {
    const std::size_t m = order[pos];
    out << std::left << std::setw(static_cast<int>(width)) << names[m] << "  " << result.avg_ranks[m] << "  ";
    for (const auto& g : result.groups) {
      const bool in = std::find(g.begin(), g.end(), m) != g.end();
      out << (in && g.size() > 1 ? '|' : ' ');
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace dtmdp
