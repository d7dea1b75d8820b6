#include "dtmdp/error.hpp"

namespace dtmdp {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::ScoreOutOfRange: return "ScoreOutOfRange";
    case ErrorCode::ChosenEntityNotInCandidates: return "ChosenEntityNotInCandidates";
    case ErrorCode::NonMonotoneTurnIndex: return "NonMonotoneTurnIndex";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::UnknownEntity: return "UnknownEntity";
    case ErrorCode::InvalidGraph: return "InvalidGraph";
    case ErrorCode::EmptyGraphNoEdges: return "EmptyGraphNoEdges";
    case ErrorCode::EntityNotInVocabulary: return "EntityNotInVocabulary";
    case ErrorCode::EntityNotInGraph: return "EntityNotInGraph";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::SchemeMismatch: return "SchemeMismatch";
    case ErrorCode::EmptyPairSet: return "EmptyPairSet";
    case ErrorCode::EmptyData: return "EmptyData";
    case ErrorCode::MissingCandidateSets: return "MissingCandidateSets";
    case ErrorCode::NoCandidates: return "NoCandidates";
    case ErrorCode::EmptyCandidates: return "EmptyCandidates";
    case ErrorCode::InfeasibleConfig: return "InfeasibleConfig";
    case ErrorCode::TooFewTrials: return "TooFewTrials";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::UnsupportedK: return "UnsupportedK";
    case ErrorCode::BadRanks: return "BadRanks";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::StageFailed: return "StageFailed";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

namespace {

std::string decorate(ErrorCode code, const std::string& message,
                     std::optional<std::size_t> line) {
  std::string out{to_string(code)};
  if (line) out += " (line " + std::to_string(*line) + ")";
  out += ": ";
  out += message;
  return out;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& message,
             std::optional<std::size_t> line)
    : std::runtime_error(decorate(code, message, line)), code_(code), line_(line) {}

}  // namespace dtmdp
