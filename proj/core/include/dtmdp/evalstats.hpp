#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dtmdp {

/// One diagnosis trial: success in {0, 1} and chain F1 in [0, 1].
struct TrialRecord {
  double success = 0.0;
  double f1 = 0.0;
};

struct PassAt3Estimate {
  double recall_mean = 0.0;
  double recall_std = 0.0;
  double f1_mean = 0.0;
  double f1_std = 0.0;
  /// Bootstrap mean per scenario (input order), for paired tests.
  std::vector<double> scenario_recall;
  std::vector<double> scenario_f1;
};

/// Each replicate draws 3 trials with replacement per scenario and scores a
/// scenario by the max over them; reports mean and (population) std over
/// replicates. Throws TooFewTrials (< 3 trials in a scenario) / EmptyData.
PassAt3Estimate pass_at_3_bootstrap(std::span<const std::vector<TrialRecord>> scenarios,
                                    int n_boot = 200, std::uint64_t seed = 0);

struct TTestResult {
  double t_stat = 0.0;
  double p_raw = 1.0;
  double p_adjusted = 1.0;
  bool significant = false;
};

/// Two-sided paired t-test of each method against the baseline with
/// Bonferroni adjustment over the methods. Zero differences give p = 1; a
/// constant nonzero difference gives p = 0.
/// Throws LengthMismatch / InvalidArgument (n < 2).
std::vector<TTestResult> paired_t_bonferroni(std::span<const double> baseline,
                                             std::span<const std::vector<double>> methods,
                                             double alpha = 0.05);

/// Two-tailed Nemenyi critical value (studentized range / sqrt 2) for
/// k = 2..10 methods at alpha 0.05 or 0.10. Throws UnsupportedK / InvalidArgument.
double nemenyi_q(std::size_t k, double alpha);

/// Ranks per scenario (column), 1 = best, mid-ranks on ties.
/// `scores[m][s]` is method m on scenario s.
std::vector<std::vector<double>> rank_scores(std::span<const std::vector<double>> scores,
                                             bool higher_is_better = true);

struct NemenyiResult {
  std::vector<double> avg_ranks;
  double cd = 0.0;
  /// Maximal runs of methods (by ascending average rank) whose pairwise
  /// differences are all below cd. Indices refer to the input rows.
  std::vector<std::vector<std::size_t>> groups;
};

/// `ranks[m][s]`: rank of method m on scenario s. Throws UnsupportedK /
/// BadRanks / InvalidArgument.
NemenyiResult nemenyi_cd(std::span<const std::vector<double>> ranks, double alpha = 0.05);

/// Plain-text critical-difference diagram.
std::string render_cd_diagram(const NemenyiResult& result, std::span<const std::string> names);

}  // namespace dtmdp
