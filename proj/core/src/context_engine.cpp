#include "dtmdp/context_engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "dtmdp/error.hpp"

namespace dtmdp {

namespace {

constexpr std::string_view kSuggestionPrefix = "The actions related to ";
constexpr std::string_view kSuggestionSuffix =
    " are often relevant in this scenario, so lean toward exploring them if they show up in the "
    "above observed evidence";

/// Higher probability first, then (name, etype).
bool before(double pa, const Entity& a, double pb, const Entity& b) {
  if (pa != pb) return pa > pb;
  return a < b;
}

}  // namespace

StrategySet parse_strategies(std::span<const std::string> tokens) {
  StrategySet s;
  for (const auto& t : tokens) {
    if (t == "I" || t == "1") {
      s.suggest = true;
    } else if (t == "II" || t == "2") {
      s.prune = true;
    } else if (t == "III" || t == "3") {
      s.prioritize = true;
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown strategy '" + t + "'");
    }
  }
  return s;
}

std::vector<std::string> strategy_tokens(const StrategySet& s) {
  std::vector<std::string> out;
  if (s.suggest) out.emplace_back("I");
  if (s.prune) out.emplace_back("II");
  if (s.prioritize) out.emplace_back("III");
  return out;
}

void CeConfig::validate() const {
  if (!strategies.any()) throw Error(ErrorCode::InvalidArgument, "context engineering needs a strategy");
  if (!(suggest_percentile > 0.0 && suggest_percentile <= 100.0)) {
    throw Error(ErrorCode::InvalidArgument, "suggest_percentile must lie in (0, 100]");
  }
  if (!(prune_percentile >= 0.0 && prune_percentile < 100.0)) {
    throw Error(ErrorCode::InvalidArgument, "prune_percentile must lie in [0, 100)");
  }
  if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be positive");
}

double nearest_rank_percentile(std::span<const double> values, double percentile) {
  if (values.empty()) throw Error(ErrorCode::EmptyCandidates, "percentile of an empty set");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

Intervention intervene_with_probs(std::span<const double> probs, std::span<const Entity> candidates,
                                  const CeConfig& cfg) {
  if (candidates.empty()) throw Error(ErrorCode::EmptyCandidates, "no candidates to intervene on");
  if (probs.size() != candidates.size()) {
    throw Error(ErrorCode::DimensionMismatch, "probabilities do not align with candidates");
  }
  Intervention iv;
  for (std::size_t i = 0; i < candidates.size(); ++i) iv.probs[candidates[i]] = probs[i];

  if (cfg.strategies.suggest) {
    const double threshold = nearest_rank_percentile(probs, cfg.suggest_percentile);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (probs[i] >= threshold) iv.suggestions.push_back(candidates[i]);
    }
  }

  std::vector<std::size_t> kept;
  if (cfg.strategies.prune) {
    const double threshold = nearest_rank_percentile(probs, cfg.prune_percentile);
    std::size_t top = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i) {
      if (before(probs[i], candidates[i], probs[top], candidates[top])) top = i;
    }
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (probs[i] >= threshold || i == top) kept.push_back(i);
    }
  } else {
    kept.resize(candidates.size());
    std::iota(kept.begin(), kept.end(), 0);
  }
  for (std::size_t i : kept) iv.retained.push_back(candidates[i]);

  if (cfg.strategies.prioritize) {
    std::sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
      return before(probs[a], candidates[a], probs[b], candidates[b]);
    });
  }
  for (std::size_t i : kept) iv.ordering.push_back(candidates[i]);
  return iv;
}

Intervention intervene(const QPolicy& policy, std::span<const double> state,
                       std::span<const CeCandidate> candidates, const CeConfig& cfg) {
  if (candidates.empty()) throw Error(ErrorCode::EmptyCandidates, "no candidates to intervene on");
  std::vector<ActionRepr> actions;
  std::vector<Entity> entities;
  actions.reserve(candidates.size());
  entities.reserve(candidates.size());
  for (const auto& c : candidates) {
    actions.push_back(c.action);
    entities.push_back(c.entity);
  }
  const auto probs = softmax(policy.q.values(state, actions), cfg.temperature);
  return intervene_with_probs(probs, entities, cfg);
}

bool react_should_skip(const Intervention& iv, const Entity& proposed) {
  return std::find(iv.retained.begin(), iv.retained.end(), proposed) == iv.retained.end();
}

const Entity& react_pick(const Intervention& iv) {
  if (iv.ordering.empty()) throw Error(ErrorCode::EmptyCandidates, "empty ordering");
  return iv.ordering.front();
}

std::string render_suggestion_text(std::span<const Entity> suggestions) {
  if (suggestions.empty()) return {};
  std::string list;
  for (std::size_t i = 0; i < suggestions.size(); ++i) {
    if (i > 0) list += ", ";
    list += to_display(suggestions[i]);
  }
  return std::string(kSuggestionPrefix) + list + std::string(kSuggestionSuffix);
}

nlohmann::json audit_record(int turn, std::span<const Entity> candidates, const Intervention& iv) {
  auto list = [](std::span<const Entity> es) {
    auto arr = nlohmann::json::array();
    for (const auto& e : es) arr.push_back(entity_to_json(e));
    return arr;
  };
  auto probs = nlohmann::json::array();
  for (const auto& c : candidates) {
    auto it = iv.probs.find(c);
    probs.push_back(it == iv.probs.end() ? 0.0 : it->second);
  }
  return {{"turn", turn},
          {"candidates", list(candidates)},
          {"probs", std::move(probs)},
          {"suggestions", list(iv.suggestions)},
          {"retained", list(iv.retained)},
          {"ordering", list(iv.ordering)}};
}

}  // namespace dtmdp
