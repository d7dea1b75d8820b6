#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dtmdp/abstraction.hpp"

namespace dtmdp {

using ObservationSequence = std::vector<std::vector<double>>;

inline constexpr double kHmmVarianceFloor = 1e-6;

/// Discrete-state HMM with diagonal-Gaussian emissions.
struct Hmm {
  std::vector<double> initial;                  // K
  std::vector<std::vector<double>> transition;  // K x K, row-stochastic
  std::vector<std::vector<double>> means;       // K x D
  std::vector<std::vector<double>> variances;   // K x D

  std::size_t n_states() const noexcept { return initial.size(); }
  std::size_t dim() const noexcept { return means.empty() ? 0 : means.front().size(); }

  /// Throws Error(InvalidArgument) unless rows sum to 1 within 1e-9 and every
  /// variance is at least the floor.
  void validate(double variance_floor = kHmmVarianceFloor) const;

  double log_emission(std::size_t state, std::span<const double> x) const;
  /// Total log-likelihood via the scaled forward pass.
  double log_likelihood(const ObservationSequence& seq) const;
};

struct HmmFitConfig {
  int max_iter = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  double variance_floor = kHmmVarianceFloor;
};

struct HmmFit {
  Hmm model;
  /// Total log-likelihood of the data under the parameters of each EM
  /// iteration, ending with the returned model.
  std::vector<double> log_likelihood;
};

/// Baum-Welch from a seeded k-means initialisation (pooled variances,
/// uniform initial and transition probabilities).
/// Throws DimensionMismatch on ragged/empty input and DegenerateData when
/// every observation is identical and K > 1.
HmmFit fit_hmm(std::span<const ObservationSequence> sequences, std::size_t n_states,
               const HmmFitConfig& cfg);

/// Maximum a-posteriori state path; ties resolve to the lower state index.
std::vector<std::size_t> viterbi_decode(const Hmm& hmm, const ObservationSequence& seq);

/// Per-step HMM observation of a Topology trajectory: state features
/// followed by action features. Throws SchemeMismatch for index actions.
ObservationSequence hmm_observations(const AbstractTrajectory& traj);

/// Appends the one-hot Viterbi state of each step to that step's state.
AbstractTrajectory augment_with_hmm(const AbstractTrajectory& traj, const Hmm& hmm);

/// Picks the state count with the best validation log-likelihood (ties to
/// the smaller count).
std::size_t select_hmm_states(std::span<const ObservationSequence> train,
                              std::span<const ObservationSequence> validation,
                              std::span<const std::size_t> candidates, const HmmFitConfig& cfg);

nlohmann::json hmm_to_json(const Hmm& hmm);
Hmm hmm_from_json(const nlohmann::json& j);

}  // namespace dtmdp
