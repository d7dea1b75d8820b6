#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dtmdp {

enum class ErrorCode {
  // data-model
  MalformedRecord,
  ScoreOutOfRange,
  ChosenEntityNotInCandidates,
  NonMonotoneTurnIndex,
  IoFailure,
  // topology
  UnknownEntity,
  InvalidGraph,
  EmptyGraphNoEdges,
  // abstraction
  EntityNotInVocabulary,
  EntityNotInGraph,
  DimensionMismatch,
  DegenerateData,
  SchemeMismatch,
  // irl / offline-rl / ope
  EmptyPairSet,
  EmptyData,
  MissingCandidateSets,
  NoCandidates,
  // context-engine
  EmptyCandidates,
  // simenv
  InfeasibleConfig,
  // evalstats
  TooFewTrials,
  LengthMismatch,
  UnsupportedK,
  BadRanks,
  // pipeline
  MissingArtifact,
  ConfigInvalid,
  StageFailed,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Single exception type for the library. The code is the typed error;
/// `line()` is set for record-level corpus errors (1-based).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<std::size_t> line = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> line() const noexcept { return line_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> line_;
};

}  // namespace dtmdp
