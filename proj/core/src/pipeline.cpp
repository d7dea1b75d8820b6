#include "dtmdp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "dtmdp/error.hpp"
#include "dtmdp/evalstats.hpp"
#include "dtmdp/hashing.hpp"
#include "dtmdp/hmm.hpp"

namespace dtmdp {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kScenariosTrain = "scenarios_train.jsonl";
constexpr const char* kScenariosTest = "scenarios_test.jsonl";
constexpr const char* kCorpus = "corpus.jsonl";
constexpr const char* kAbstract = "abstract.jsonl";
constexpr const char* kScheme = "scheme.json";
constexpr const char* kSplit = "split.json";
constexpr const char* kRewardNet = "reward_net.json";
constexpr const char* kRewardReport = "reward_report.json";
constexpr const char* kRewardScaling = "reward_scaling.json";
constexpr const char* kEvalSparse = "eval_sparse.jsonl";
constexpr const char* kPolicyIndex = "policies/index.json";
constexpr const char* kRankingCsv = "ranking.csv";
constexpr const char* kRankingJson = "ranking.json";
constexpr const char* kSimCorpus = "sim_corpus.jsonl";
constexpr const char* kResults = "results.csv";
constexpr const char* kAudit = "audit.jsonl";
constexpr const char* kReportJson = "report.json";
constexpr const char* kReportTxt = "report.txt";
constexpr const char* kRobustness = "robustness.json";
constexpr const char* kSummaryJson = "summary.json";
constexpr const char* kSummaryCsv = "summary.csv";

std::string relabeled_name(RewardMode m) { return "relabeled_" + std::string(to_string(m)) + ".jsonl"; }
std::string policy_file(const std::string& id) { return "policies/" + id + ".json"; }

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

/// Reads config fields leniently and records every problem with its path.
class ConfigReader {
 public:
  explicit ConfigReader(std::vector<std::string>& errors) : errors_(errors) {}

  void error(const std::string& path, const std::string& msg) { errors_.push_back(path + ": " + msg); }

  const json& object(const json& parent, const std::string& path, const char* key) {
    static const json kEmpty = json::object();
    if (!parent.contains(key)) return kEmpty;
    const json& j = parent.at(key);
    if (!j.is_object()) {
      error(join(path, key), "expected an object");
      return kEmpty;
    }
    return j;
  }

  template <class T>
  void read(const json& obj, const std::string& path, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
      out = obj.at(key).get<T>();
    } catch (const json::exception&) {
      error(join(path, key), "has the wrong type");
    }
  }

  template <class T, class Parse>
  void read_enum(const json& obj, const std::string& path, const char* key, T& out, Parse parse) {
    if (!obj.contains(key)) return;
    try {
      out = parse(obj.at(key).get<std::string>());
    } catch (const std::exception& e) {
      error(join(path, key), e.what());
    }
  }

  void known(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
    for (const auto& [k, v] : obj.items()) {
      if (std::find_if(keys.begin(), keys.end(), [&](const char* x) { return k == x; }) == keys.end()) {
        error(join(path, k), "unknown field");
      }
    }
  }

  template <class F>
  void check(const std::string& path, F&& validate) {
    try {
      validate();
    } catch (const Error& e) {
      error(path, e.what());
    }
  }

 private:
  std::vector<std::string>& errors_;
};

void read_train(ConfigReader& r, const json& parent, const std::string& path, const char* key,
                TrainConfig& t) {
  const json& o = r.object(parent, path, key);
  const std::string p = join(path, key);
  r.known(o, p, {"alpha", "gamma", "iterations", "step_size", "batch_size", "hidden_units",
                 "target_update_interval", "form"});
  r.read(o, p, "alpha", t.alpha);
  r.read(o, p, "gamma", t.gamma);
  r.read(o, p, "iterations", t.iterations);
  r.read(o, p, "step_size", t.step_size);
  r.read(o, p, "batch_size", t.batch_size);
  r.read(o, p, "hidden_units", t.hidden_units);
  r.read(o, p, "target_update_interval", t.target_update_interval);
  r.read_enum(o, p, "form", t.form, parse_q_form);
}

json train_to_json(const TrainConfig& t) {
  return {{"alpha", t.alpha},
          {"gamma", t.gamma},
          {"iterations", t.iterations},
          {"step_size", t.step_size},
          {"batch_size", t.batch_size},
          {"hidden_units", t.hidden_units},
          {"target_update_interval", t.target_update_interval},
          {"form", to_string(t.form)}};
}

std::vector<ArmSpec> default_arms() {
  auto arm = [](std::string id, std::string policy, std::vector<std::string> tokens) {
    return ArmSpec{std::move(id), std::move(policy), parse_strategies(tokens)};
  };
  return {arm("baseline", "", {}),
          arm("rl-irl-I", "cql-irl", {"I"}),
          arm("rl-irl-II", "cql-irl", {"II"}),
          arm("rl-irl-III", "cql-irl", {"III"}),
          arm("rl-sparse-III", "cql-sparse", {"III"}),
          arm("bc-III", "bc", {"III"})};
}

std::vector<std::string> grid_ids(const PipelineConfig& cfg) {
  std::vector<std::string> ids;
  for (Learner l : cfg.rl.learners) {
    if (l == Learner::Bc) {
      ids.push_back(policy_id(l, RewardMode::SparseFinal));
    } else {
      for (RewardMode m : cfg.rl.reward_modes) ids.push_back(policy_id(l, m));
    }
  }
  return ids;
}

// ---- small file helpers -------------------------------------------------

std::vector<SimScenario> load_scenarios(const fs::path& p) {
  std::vector<SimScenario> out;
  std::istringstream in(read_text(p));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(scenario_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedRecord, p.string() + ": " + e.what());
    }
  }
  return out;
}

void save_scenarios(std::span<const SimScenario> scns, const fs::path& p) {
  std::string text;
  for (const auto& s : scns) text += scenario_to_json(s).dump() + "\n";
  write_text(p, text);
}

json load_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, p.string() + ": " + e.what());
  }
}

void save_json(const json& j, const fs::path& p) { write_text(p, j.dump(2) + "\n"); }

std::string fmt_double(double x) {
  std::ostringstream s;
  s.precision(10);
  s << x;
  return s.str();
}

struct ResultRow {
  std::string arm;
  std::string scenario_id;
  int trial = 0;
  double fpc = 0.0;
  double rce = 0.0;
  int turns = 0;
  int explored = 0;
};

std::vector<ResultRow> load_results(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::string line;
  std::getline(in, line);  // header
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw Error(ErrorCode::MalformedRecord, "bad results row: " + line);
    rows.push_back({f[0], f[1], std::stoi(f[2]), std::stod(f[3]), std::stod(f[4]), std::stoi(f[5]),
                    std::stoi(f[6])});
  }
  return rows;
}

double range_of(const std::vector<double>& xs) {
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  return *hi - *lo;
}

}  // namespace

// ---- config ---------------------------------------------------------------

PipelineConfig::PipelineConfig() {
  irl.train.hidden_units = 16;
  irl.train.epochs = 30;
  rl.train.hidden_units = 16;
  rl.train.iterations = 3000;
  rl.train.form = QForm::Network;
  ope.train = rl.train;
  ope.train.iterations = 4000;
  ce.strategies.prioritize = true;
  sim.arms = default_arms();
}

std::string policy_id(Learner learner, RewardMode mode) {
  if (learner == Learner::Bc) return "bc";
  return "cql-" + std::string(to_string(mode));
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  PipelineConfig c;
  std::vector<std::string> errors;
  ConfigReader r(errors);
  if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "config must be a JSON object");
  r.known(j, "", {"master_seed", "paths", "scheme", "irl", "rl", "ope", "ce", "sim", "eval", "robustness"});
  r.read(j, "", "master_seed", c.master_seed);

  {
    const json& o = r.object(j, "", "paths");
    r.known(o, "paths", {"corpus", "graph", "artifacts"});
    r.read(o, "paths", "corpus", c.paths.corpus);
    r.read(o, "paths", "graph", c.paths.graph);
    r.read(o, "paths", "artifacts", c.paths.artifacts);
  }
  {
    const json& o = r.object(j, "", "scheme");
    r.known(o, "scheme", {"kind", "with_hubs", "with_hmm", "hmm_states", "action_space", "unreachable_sentinel"});
    if (o.contains("unreachable_sentinel") && !o.at("unreachable_sentinel").is_null()) {
      double v = 0.0;
      r.read(o, "scheme", "unreachable_sentinel", v);
      c.scheme.unreachable_sentinel = v;
    }
    r.read_enum(o, "scheme", "kind", c.scheme.kind, parse_scheme_kind);
    r.read(o, "scheme", "with_hubs", c.scheme.with_hubs);
    r.read(o, "scheme", "with_hmm", c.scheme.with_hmm);
    r.read(o, "scheme", "hmm_states", c.scheme.hmm_states);
    r.read(o, "scheme", "action_space", c.scheme.action_space);
  }
  {
    const json& o = r.object(j, "", "irl");
    r.known(o, "irl", {"signal", "margin", "max_pairs", "reward_scaling", "hidden_units", "epochs", "step_size",
                       "batch_size", "holdout_fraction", "discount"});
    r.read_enum(o, "irl", "signal", c.irl.signal, parse_ranking_signal);
    r.read(o, "irl", "margin", c.irl.margin);
    r.read(o, "irl", "max_pairs", c.irl.max_pairs);
    r.read(o, "irl", "reward_scaling", c.irl.reward_scaling);
    r.read(o, "irl", "hidden_units", c.irl.train.hidden_units);
    r.read(o, "irl", "epochs", c.irl.train.epochs);
    r.read(o, "irl", "step_size", c.irl.train.step_size);
    r.read(o, "irl", "batch_size", c.irl.train.batch_size);
    r.read(o, "irl", "holdout_fraction", c.irl.train.holdout_fraction);
    r.read(o, "irl", "discount", c.irl.train.discount);
  }
  {
    const json& o = r.object(j, "", "rl");
    r.known(o, "rl", {"learners", "reward_modes", "train", "temperature", "lambda", "bc_successful_only"});
    if (o.contains("learners")) {
      c.rl.learners.clear();
      std::vector<std::string> names;
      r.read(o, "rl", "learners", names);
      for (const auto& n : names) {
        try {
          c.rl.learners.push_back(parse_learner(n));
        } catch (const Error& e) {
          r.error("rl.learners", e.what());
        }
      }
    }
    if (o.contains("reward_modes")) {
      c.rl.reward_modes.clear();
      std::vector<std::string> names;
      r.read(o, "rl", "reward_modes", names);
      for (const auto& n : names) {
        try {
          c.rl.reward_modes.push_back(parse_reward_mode(n));
        } catch (const Error& e) {
          r.error("rl.reward_modes", e.what());
        }
      }
    }
    read_train(r, o, "rl", "train", c.rl.train);
    r.read(o, "rl", "temperature", c.rl.temperature);
    r.read(o, "rl", "lambda", c.rl.lambda);
    r.read(o, "rl", "bc_successful_only", c.rl.bc_successful_only);
  }
  {
    const json& o = r.object(j, "", "ope");
    r.known(o, "ope", {"holdout_fraction", "k", "train", "tol", "max_rounds"});
    r.read(o, "ope", "holdout_fraction", c.ope.holdout_fraction);
    r.read(o, "ope", "k", c.ope.k);
    c.ope.train = c.rl.train;
    c.ope.train.iterations = 4000;
    read_train(r, o, "ope", "train", c.ope.train);
    r.read(o, "ope", "tol", c.ope.options.tol);
    r.read(o, "ope", "max_rounds", c.ope.options.max_rounds);
  }
  {
    const json& o = r.object(j, "", "ce");
    r.known(o, "ce", {"suggest_percentile", "prune_percentile", "temperature"});
    r.read(o, "ce", "suggest_percentile", c.ce.suggest_percentile);
    r.read(o, "ce", "prune_percentile", c.ce.prune_percentile);
    r.read(o, "ce", "temperature", c.ce.temperature);
  }
  {
    const json& o = r.object(j, "", "sim");
    r.known(o, "sim", {"scenario", "episode", "train_scenarios", "train_trials", "test_scenarios", "trials",
                       "write_audit", "arms"});
    const json& s = r.object(o, "sim", "scenario");
    r.known(s, "sim.scenario", {"n_nodes", "edge_density", "chain_length", "evidence_noise"});
    r.read(s, "sim.scenario", "n_nodes", c.sim.scenario.n_nodes);
    r.read(s, "sim.scenario", "edge_density", c.sim.scenario.edge_density);
    r.read(s, "sim.scenario", "chain_length", c.sim.scenario.chain_length);
    r.read(s, "sim.scenario", "evidence_noise", c.sim.scenario.evidence_noise);
    const json& e = r.object(o, "sim", "episode");
    r.known(e, "sim.episode", {"max_turns", "epsilon", "suggestion_uptake"});
    r.read(e, "sim.episode", "max_turns", c.sim.episode.max_turns);
    r.read(e, "sim.episode", "epsilon", c.sim.episode.epsilon);
    r.read(e, "sim.episode", "suggestion_uptake", c.sim.episode.suggestion_uptake);
    r.read(o, "sim", "train_scenarios", c.sim.train_scenarios);
    r.read(o, "sim", "train_trials", c.sim.train_trials);
    r.read(o, "sim", "test_scenarios", c.sim.test_scenarios);
    r.read(o, "sim", "trials", c.sim.trials);
    r.read(o, "sim", "write_audit", c.sim.write_audit);
    if (o.contains("arms")) {
      c.sim.arms.clear();
      if (!o.at("arms").is_array()) r.error("sim.arms", "expected an array");
      std::size_t i = 0;
      for (const auto& a : o.value("arms", json::array())) {
        const std::string p = "sim.arms[" + std::to_string(i++) + "]";
        if (!a.is_object()) {
          r.error(p, "expected an object");
          continue;
        }
        r.known(a, p, {"id", "policy", "strategies"});
        ArmSpec arm;
        r.read(a, p, "id", arm.id);
        r.read(a, p, "policy", arm.policy);
        std::vector<std::string> tokens;
        r.read(a, p, "strategies", tokens);
        r.check(join(p, "strategies"), [&] { arm.strategies = parse_strategies(tokens); });
        c.sim.arms.push_back(std::move(arm));
      }
    }
  }
  {
    const json& o = r.object(j, "", "eval");
    r.known(o, "eval", {"n_boot", "alpha"});
    r.read(o, "eval", "n_boot", c.eval.n_boot);
    r.read(o, "eval", "alpha", c.eval.alpha);
  }
  {
    const json& o = r.object(j, "", "robustness");
    r.known(o, "robustness", {"enabled", "expert_counts"});
    r.read(o, "robustness", "enabled", c.robustness.enabled);
    r.read(o, "robustness", "expert_counts", c.robustness.expert_counts);
  }

  // Cross-field validation.
  const bool topo = c.scheme.kind == SchemeKind::Topology;
  if (c.scheme.action_space != "candidate_set" && c.scheme.action_space != "full_vocabulary") {
    r.error("scheme.action_space", "must be candidate_set or full_vocabulary");
  }
  if (topo && c.scheme.action_space == "full_vocabulary") {
    r.error("scheme.action_space", "the topology scheme needs candidate_set");
  }
  if (c.scheme.unreachable_sentinel && !(*c.scheme.unreachable_sentinel > 0.0)) {
    r.error("scheme.unreachable_sentinel", "must be positive");
  }
  if (!topo && c.scheme.with_hubs) r.error("scheme.with_hubs", "only applies to the topology scheme");
  if (!topo && c.scheme.with_hmm) r.error("scheme.with_hmm", "only applies to the topology scheme");
  if (c.scheme.with_hmm &&
      (c.scheme.hmm_states.empty() ||
       std::any_of(c.scheme.hmm_states.begin(), c.scheme.hmm_states.end(), [](std::size_t k) { return k == 0; }))) {
    r.error("scheme.hmm_states", "must list positive state counts");
  }
  if (!(c.irl.margin >= 0.0)) r.error("irl.margin", "must be >= 0");
  if (c.irl.reward_scaling != "standardize" && c.irl.reward_scaling != "none") {
    r.error("irl.reward_scaling", "must be standardize or none");
  }
  if (c.irl.max_pairs == 0) r.error("irl.max_pairs", "must be positive");
  if (c.irl.train.hidden_units == 0) r.error("irl.hidden_units", "must be positive");
  if (c.irl.train.epochs <= 0) r.error("irl.epochs", "must be positive");
  if (!(c.irl.train.step_size > 0.0)) r.error("irl.step_size", "must be positive");
  if (c.irl.train.batch_size == 0) r.error("irl.batch_size", "must be positive");
  if (!(c.irl.train.holdout_fraction >= 0.0 && c.irl.train.holdout_fraction < 1.0)) {
    r.error("irl.holdout_fraction", "must lie in [0, 1)");
  }
  if (!(c.irl.train.discount > 0.0 && c.irl.train.discount <= 1.0)) r.error("irl.discount", "must lie in (0, 1]");
  if (c.rl.learners.empty()) r.error("rl.learners", "must not be empty");
  if (c.rl.reward_modes.empty()) r.error("rl.reward_modes", "must not be empty");
  r.check("rl.train", [&] { c.rl.train.validate(); });
  if (topo && c.rl.train.form == QForm::Tabular) r.error("rl.train.form", "the topology scheme needs the network form");
  if (!(c.rl.temperature > 0.0)) r.error("rl.temperature", "must be positive");
  if (!(c.rl.lambda >= 0.0)) r.error("rl.lambda", "must be >= 0");
  if (!(c.ope.holdout_fraction > 0.0 && c.ope.holdout_fraction < 1.0)) {
    r.error("ope.holdout_fraction", "must lie in (0, 1)");
  }
  if (c.ope.k == 0) r.error("ope.k", "must be >= 1");
  c.ope.train.form = c.rl.train.form;
  r.check("ope.train", [&] { c.ope.train.validate(); });
  if (!(c.ope.options.tol > 0.0)) r.error("ope.tol", "must be positive");
  if (c.ope.options.max_rounds < 1) r.error("ope.max_rounds", "must be >= 1");
  r.check("ce", [&] {
    CeConfig probe = c.ce;
    probe.strategies.prioritize = true;
    probe.validate();
  });
  r.check("sim.scenario", [&] { c.sim.scenario.validate(); });
  r.check("sim.episode", [&] { c.sim.episode.validate(); });
  if (c.paths.corpus.empty()) {
    if (c.sim.train_scenarios < 2) r.error("sim.train_scenarios", "must be >= 2");
    if (c.sim.train_trials == 0) r.error("sim.train_trials", "must be positive");
  }
  if (c.sim.test_scenarios < 2) r.error("sim.test_scenarios", "must be >= 2");
  if (c.sim.trials < 3) r.error("sim.trials", "Pass@3 needs at least 3 trials");
  {
    const auto ids = grid_ids(c);
    std::set<std::string> seen;
    bool has_baseline = false;
    for (std::size_t i = 0; i < c.sim.arms.size(); ++i) {
      const auto& a = c.sim.arms[i];
      const std::string p = "sim.arms[" + std::to_string(i) + "]";
      if (a.id.empty()) r.error(join(p, "id"), "must not be empty");
      if (!seen.insert(a.id).second) r.error(join(p, "id"), "duplicate arm id '" + a.id + "'");
      if (a.policy.empty()) {
        has_baseline = true;
        if (a.strategies.any()) r.error(join(p, "strategies"), "an arm without a policy cannot intervene");
      } else {
        if (std::find(ids.begin(), ids.end(), a.policy) == ids.end()) {
          r.error(join(p, "policy"), "'" + a.policy + "' is not in the policy grid");
        }
        if (!a.strategies.any()) r.error(join(p, "strategies"), "must name at least one strategy");
        if (c.scheme.with_hmm) r.error(join(p, "policy"), "HMM-augmented policies cannot drive live episodes");
      }
    }
    if (!has_baseline) r.error("sim.arms", "needs one arm without a policy (the baseline)");
    if (c.sim.arms.size() > 10) r.error("sim.arms", "at most 10 arms are supported by the rank analysis");
  }
  if (c.eval.n_boot < 1) r.error("eval.n_boot", "must be >= 1");
  if (c.eval.alpha != 0.05 && c.eval.alpha != 0.10) r.error("eval.alpha", "must be 0.05 or 0.10");
  if (c.robustness.enabled) {
    if (c.robustness.expert_counts.empty()) r.error("robustness.expert_counts", "must not be empty");
    for (std::size_t n : c.robustness.expert_counts) {
      if (n == 0) r.error("robustness.expert_counts", "counts must be positive");
    }
  }

  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw Error(ErrorCode::ConfigInvalid, msg);
  }
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::ConfigInvalid, "config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
  }
  return from_json(j);
}

json PipelineConfig::to_json() const {
  json arms = json::array();
  for (const auto& a : sim.arms) {
    arms.push_back({{"id", a.id}, {"policy", a.policy}, {"strategies", strategy_tokens(a.strategies)}});
  }
  std::vector<std::string> learners;
  for (Learner l : rl.learners) learners.emplace_back(dtmdp::to_string(l));
  std::vector<std::string> modes;
  for (RewardMode m : rl.reward_modes) modes.emplace_back(dtmdp::to_string(m));
  return {
      {"master_seed", master_seed},
      {"paths", {{"corpus", paths.corpus}, {"graph", paths.graph}, {"artifacts", paths.artifacts}}},
      {"scheme",
       {{"kind", dtmdp::to_string(scheme.kind)},
        {"with_hubs", scheme.with_hubs},
        {"with_hmm", scheme.with_hmm},
        {"hmm_states", scheme.hmm_states},
        {"action_space", scheme.action_space},
        {"unreachable_sentinel", scheme.unreachable_sentinel ? json(*scheme.unreachable_sentinel) : json(nullptr)}}},
      {"irl",
       {{"signal", dtmdp::to_string(irl.signal)},
        {"margin", irl.margin},
        {"max_pairs", irl.max_pairs},
        {"reward_scaling", irl.reward_scaling},
        {"hidden_units", irl.train.hidden_units},
        {"epochs", irl.train.epochs},
        {"step_size", irl.train.step_size},
        {"batch_size", irl.train.batch_size},
        {"holdout_fraction", irl.train.holdout_fraction},
        {"discount", irl.train.discount}}},
      {"rl",
       {{"learners", learners},
        {"reward_modes", modes},
        {"train", train_to_json(rl.train)},
        {"temperature", rl.temperature},
        {"lambda", rl.lambda},
        {"bc_successful_only", rl.bc_successful_only}}},
      {"ope",
       {{"holdout_fraction", ope.holdout_fraction},
        {"k", ope.k},
        {"train", train_to_json(ope.train)},
        {"tol", ope.options.tol},
        {"max_rounds", ope.options.max_rounds}}},
      {"ce",
       {{"suggest_percentile", ce.suggest_percentile},
        {"prune_percentile", ce.prune_percentile},
        {"temperature", ce.temperature}}},
      {"sim",
       {{"scenario",
         {{"n_nodes", sim.scenario.n_nodes},
          {"edge_density", sim.scenario.edge_density},
          {"chain_length", sim.scenario.chain_length},
          {"evidence_noise", sim.scenario.evidence_noise}}},
        {"episode",
         {{"max_turns", sim.episode.max_turns},
          {"epsilon", sim.episode.epsilon},
          {"suggestion_uptake", sim.episode.suggestion_uptake}}},
        {"train_scenarios", sim.train_scenarios},
        {"train_trials", sim.train_trials},
        {"test_scenarios", sim.test_scenarios},
        {"trials", sim.trials},
        {"write_audit", sim.write_audit},
        {"arms", arms}}},
      {"eval", {{"n_boot", eval.n_boot}, {"alpha", eval.alpha}}},
      {"robustness", {{"enabled", robustness.enabled}, {"expert_counts", robustness.expert_counts}}}};
}

// ---- files ------------------------------------------------------------------

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingArtifact, "missing " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// ---- pipeline ---------------------------------------------------------------

Pipeline::Pipeline(PipelineConfig cfg, fs::path out_dir) : cfg_(std::move(cfg)), out_(std::move(out_dir)) {}

const std::vector<std::string>& Pipeline::stages() {
  static const std::vector<std::string> kStages{"collect", "abstract", "train-reward", "relabel", "train-policy",
                                                "rank",    "simulate", "evaluate",     "robustness"};
  return kStages;
}

void Pipeline::run_stage(const std::string& name) {
  if (name == "collect") return collect();
  if (name == "abstract") return abstract();
  if (name == "train-reward") return train_reward();
  if (name == "relabel") return relabel();
  if (name == "train-policy") return train_policy();
  if (name == "rank") return rank();
  if (name == "simulate") return simulate();
  if (name == "evaluate") return evaluate();
  if (name == "robustness") return robustness();
  throw Error(ErrorCode::InvalidArgument, "unknown stage '" + name + "'");
}

template <class Body>
void Pipeline::stage(const std::string& name, Body&& body) {
  spdlog::info("stage {}", name);
  try {
    fs::create_directories(out_);
    body();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MissingArtifact || e.code() == ErrorCode::ConfigInvalid ||
        e.code() == ErrorCode::StageFailed) {
      throw;
    }
    throw Error(ErrorCode::StageFailed, name + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorCode::StageFailed, name + ": " + e.what());
  }
}

fs::path Pipeline::corpus_path() const {
  return cfg_.paths.corpus.empty() ? path(kCorpus) : fs::path(cfg_.paths.corpus);
}

std::uint64_t Pipeline::seed_for(const std::string& stage) const { return derive_seed(cfg_.master_seed, stage); }

void Pipeline::write_manifest(const std::string& stage, const std::vector<std::string>& inputs,
                              const std::vector<std::string>& artifacts) const {
  json in = json::object();
  for (const auto& rel : inputs) {
    const fs::path p = rel == "@corpus" ? corpus_path() : path(rel);
    const bool external = rel == "@corpus" && !cfg_.paths.corpus.empty();
    in[rel == "@corpus" ? (external ? cfg_.paths.corpus : std::string(kCorpus)) : rel] = sha256_file(p);
  }
  json out = json::object();
  for (const auto& rel : artifacts) out[rel] = sha256_file(path(rel));
  const json manifest{{"stage", stage},
                      {"seed", seed_for(stage)},
                      {"master_seed", cfg_.master_seed},
                      {"config_hash", sha256_hex(cfg_.to_json().dump())},
                      {"inputs", in},
                      {"artifacts", out}};
  save_json(manifest, path("manifests/" + stage + ".json"));
}

SchemeSpec Pipeline::load_scheme_spec(bool for_live_episodes) const {
  const json s = load_json(path(kScheme));
  SchemeSpec spec;
  spec.kind = parse_scheme_kind(s.at("kind").get<std::string>());
  spec.with_hubs = s.at("with_hubs").get<bool>();
  spec.with_hmm = for_live_episodes ? false : s.at("with_hmm").get<bool>();
  for (const auto& e : s.at("vocabulary")) spec.vocabulary.push_back(entity_from_json(e));
  if (s.contains("unreachable_sentinel") && !s.at("unreachable_sentinel").is_null()) {
    spec.unreachable_sentinel = s.at("unreachable_sentinel").get<double>();
  }
  return spec;
}

void Pipeline::collect() {
  stage("collect", [&] {
    const std::uint64_t seed = seed_for("collect");
    std::vector<SimScenario> scns;
    std::vector<RawTrajectory> corpus;
    char id[32];
    for (std::size_t i = 0; i < cfg_.sim.train_scenarios; ++i) {
      std::snprintf(id, sizeof id, "train-%03zu", i);
      scns.push_back(generate_scenario(cfg_.sim.scenario, derive_seed(seed, std::string("scenario:") + id), id));
      for (std::size_t t = 0; t < cfg_.sim.train_trials; ++t) {
        const std::string tid = std::string(id) + "-t" + std::to_string(t);
        corpus.push_back(
            run_episode(scns.back(), nullptr, cfg_.sim.episode, derive_seed(seed, "episode:" + tid), tid).trajectory);
      }
    }
    save_scenarios(scns, path(kScenariosTrain));
    save_corpus(corpus, path(kCorpus));
    write_manifest("collect", {}, {kScenariosTrain, kCorpus});
  });
}

void Pipeline::abstract() {
  stage("abstract", [&] {
    const auto corpus = load_corpus(corpus_path());
    if (corpus.empty()) throw Error(ErrorCode::EmptyData, "corpus is empty");
    std::vector<std::string> inputs{"@corpus"};

    // Graph per scenario: one shared graph for an external corpus, else the
    // simulator's scenario graphs.
    std::map<std::string, std::shared_ptr<const TopologyGraph>> graphs;
    std::shared_ptr<const TopologyGraph> shared_graph;
    std::vector<Entity> extra;
    if (!cfg_.paths.graph.empty()) {
      shared_graph = std::make_shared<const TopologyGraph>(load_graph(cfg_.paths.graph));
      extra = shared_graph->nodes();
    } else if (cfg_.paths.corpus.empty()) {
      for (auto& s : load_scenarios(path(kScenariosTrain))) {
        extra.insert(extra.end(), s.graph->nodes().begin(), s.graph->nodes().end());
        graphs[s.scenario_id] = s.graph;
      }
      inputs.push_back(kScenariosTrain);
    }
    if (cfg_.scheme.kind == SchemeKind::Topology && !shared_graph && graphs.empty()) {
      throw Error(ErrorCode::MissingArtifact, "the topology scheme needs paths.graph or simulator scenarios");
    }

    SchemeSpec base;
    base.kind = cfg_.scheme.kind;
    base.with_hubs = cfg_.scheme.with_hubs;
    base.unreachable_sentinel = cfg_.scheme.unreachable_sentinel;
    if (!base.unreachable_sentinel && !graphs.empty()) {
      base.unreachable_sentinel = static_cast<double>(cfg_.sim.scenario.n_nodes);
    }
    if (base.kind != SchemeKind::Topology) base.vocabulary = build_vocabulary(corpus, base.kind, extra);

    // Scenario-level split for off-policy evaluation.
    std::set<std::string> ids;
    for (const auto& t : corpus) ids.insert(t.scenario_id);
    std::vector<std::string> order(ids.begin(), ids.end());
    std::mt19937_64 rng(seed_for("abstract"));
    std::shuffle(order.begin(), order.end(), rng);
    auto n_eval = static_cast<std::size_t>(std::ceil(cfg_.ope.holdout_fraction * static_cast<double>(order.size())));
    n_eval = std::clamp<std::size_t>(n_eval, order.size() > 1 ? 1 : 0, order.size() > 1 ? order.size() - 1 : 0);
    std::set<std::string> eval_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_eval));
    std::set<std::string> train_ids(order.begin() + static_cast<std::ptrdiff_t>(n_eval), order.end());

    std::map<std::string, Abstractor> abstractors;
    auto abstractor_for = [&](const std::string& scenario) -> const Abstractor& {
      const std::string key = shared_graph || base.kind != SchemeKind::Topology ? std::string() : scenario;
      auto it = abstractors.find(key);
      if (it != abstractors.end()) return it->second;
      SchemeSpec spec = base;
      if (base.kind == SchemeKind::Topology) {
        auto g = shared_graph;
        if (!g) {
          auto gi = graphs.find(scenario);
          if (gi == graphs.end()) throw Error(ErrorCode::MissingArtifact, "no graph for scenario " + scenario);
          g = gi->second;
        }
        spec = spec.with_graph(g);
      }
      return abstractors.emplace(key, Abstractor(std::move(spec))).first->second;
    };

    std::vector<AbstractTrajectory> abs;
    abs.reserve(corpus.size());
    for (const auto& raw : corpus) abs.push_back(abstractor_for(raw.scenario_id).abstract(raw));
    const Abstractor& any = abstractor_for(corpus.front().scenario_id);

    json scheme{{"kind", to_string(base.kind)},
                {"with_hubs", base.with_hubs},
                {"with_hmm", cfg_.scheme.with_hmm},
                {"action_space", cfg_.scheme.action_space},
                {"vocabulary", json::array()},
                {"action_dim", any.action_dim()},
                {"unreachable_sentinel",
                 base.unreachable_sentinel ? json(*base.unreachable_sentinel) : json(nullptr)}};
    for (const auto& e : base.vocabulary) scheme["vocabulary"].push_back(entity_to_json(e));

    if (cfg_.scheme.with_hmm) {
      std::vector<ObservationSequence> train_obs;
      std::vector<ObservationSequence> valid_obs;
      for (const auto& t : abs) {
        if (t.steps.empty()) continue;
        (eval_ids.contains(t.scenario_id) ? valid_obs : train_obs).push_back(hmm_observations(t));
      }
      HmmFitConfig hcfg;
      hcfg.seed = seed_for("abstract:hmm");
      const std::size_t k = select_hmm_states(train_obs, valid_obs, cfg_.scheme.hmm_states, hcfg);
      const Hmm hmm = fit_hmm(train_obs, k, hcfg).model;
      for (auto& t : abs) t = augment_with_hmm(t, hmm);
      scheme["hmm"] = hmm_to_json(hmm);
      scheme["hmm_states"] = k;
    }
    scheme["state_dim"] = abs.front().state_dim();
    save_json(scheme, path(kScheme));
    save_abstract_corpus(abs, path(kAbstract));
    save_json({{"train", std::vector<std::string>(train_ids.begin(), train_ids.end())},
               {"eval", std::vector<std::string>(eval_ids.begin(), eval_ids.end())}},
              path(kSplit));
    write_manifest("abstract", inputs, {kScheme, kAbstract, kSplit});
  });
}

namespace {

struct SplitCorpus {
  std::vector<AbstractTrajectory> train;
  std::vector<AbstractTrajectory> eval;
  FeatureLayout layout;
  ActionSpace space;
  SchemeKind kind = SchemeKind::Topology;
};

SplitCorpus load_split(const fs::path& dir) {
  const auto all = load_abstract_corpus(dir / kAbstract);
  const json split = load_json(dir / kSplit);
  const json scheme = load_json(dir / kScheme);
  const auto eval_ids = split.at("eval").get<std::set<std::string>>();
  SplitCorpus s;
  for (const auto& t : all) (eval_ids.contains(t.scenario_id) ? s.eval : s.train).push_back(t);
  s.layout = {scheme.at("state_dim").get<std::size_t>(), scheme.at("action_dim").get<std::size_t>()};
  s.kind = parse_scheme_kind(scheme.at("kind").get<std::string>());
  s.space = scheme.at("action_space").get<std::string>() == "full_vocabulary"
                ? ActionSpace::full_vocabulary(s.layout.action_dim)
                : ActionSpace::candidate_set();
  if (s.train.empty()) throw Error(ErrorCode::EmptyData, "training split is empty");
  return s;
}

std::vector<AbstractTrajectory> relabel_all(std::span<const AbstractTrajectory> trajs, const RewardNet* net,
                                            RewardMode mode, RankingSignal signal, double lambda,
                                            RewardScaling scaling = {}) {
  std::vector<AbstractTrajectory> out;
  out.reserve(trajs.size());
  for (const auto& t : trajs) {
    out.push_back(relabel(t, net, {mode, ranking_score(t.scores, signal), lambda, scaling.shift, scaling.scale}));
  }
  return out;
}

RewardScaling load_scaling(const fs::path& p) {
  const json j = load_json(p);
  return {j.at("shift").get<double>(), j.at("scale").get<double>()};
}

std::vector<AbstractTrajectory> successful(std::span<const AbstractTrajectory> trajs) {
  std::vector<AbstractTrajectory> out;
  for (const auto& t : trajs) {
    if (t.scores.rce_identification == 100.0) out.push_back(t);
  }
  return out;
}

}  // namespace

void Pipeline::train_reward() {
  stage("train-reward", [&] {
    const SplitCorpus data = load_split(out_);
    const std::uint64_t seed = seed_for("train-reward");
    const auto pairs = build_pairs(data.train, cfg_.irl.signal, cfg_.irl.margin, cfg_.irl.max_pairs, seed);
    RewardTrainConfig rc = cfg_.irl.train;
    rc.seed = derive_seed(seed, "net");
    RewardTrainReport report;
    const RewardNet net = dtmdp::train_reward(pairs, data.train, data.layout, rc, &report);
    save_reward_net(net, path(kRewardNet));
    save_json({{"pairs", pairs.size()},
               {"best_epoch", report.best_epoch},
               {"best_accuracy", report.best_accuracy},
               {"holdout_accuracy", report.holdout_accuracy}},
              path(kRewardReport));
    write_manifest("train-reward", {kAbstract, kSplit, kScheme}, {kRewardNet, kRewardReport});
  });
}

void Pipeline::relabel() {
  stage("relabel", [&] {
    const SplitCorpus data = load_split(out_);
    const RewardNet net = load_reward_net(path(kRewardNet));
    const RewardScaling scaling =
        cfg_.irl.reward_scaling == "standardize" ? fit_reward_scaling(data.train, net) : RewardScaling{};
    save_json({{"method", cfg_.irl.reward_scaling}, {"shift", scaling.shift}, {"scale", scaling.scale}},
              path(kRewardScaling));
    std::vector<std::string> artifacts{kRewardScaling};
    std::set<RewardMode> modes(cfg_.rl.reward_modes.begin(), cfg_.rl.reward_modes.end());
    modes.insert(RewardMode::SparseFinal);
    for (RewardMode m : modes) {
      save_abstract_corpus(relabel_all(data.train, &net, m, cfg_.irl.signal, cfg_.rl.lambda, scaling),
                           path(relabeled_name(m)));
      artifacts.push_back(relabeled_name(m));
    }
    save_abstract_corpus(relabel_all(data.eval, nullptr, RewardMode::SparseFinal, cfg_.irl.signal, 0.0),
                         path(kEvalSparse));
    artifacts.emplace_back(kEvalSparse);
    write_manifest("relabel", {kAbstract, kSplit, kRewardNet}, artifacts);
  });
}

void Pipeline::train_policy() {
  stage("train-policy", [&] {
    const SplitCorpus data = load_split(out_);
    fs::create_directories(path("policies"));
    std::vector<std::string> artifacts;
    std::vector<std::string> inputs{kScheme};
    json index = json::array();
    for (Learner l : cfg_.rl.learners) {
      const std::vector<RewardMode> modes =
          l == Learner::Bc ? std::vector<RewardMode>{RewardMode::SparseFinal} : cfg_.rl.reward_modes;
      for (RewardMode m : modes) {
        const std::string id = policy_id(l, m);
        TrainConfig tc = cfg_.rl.train;
        tc.seed = seed_for("train-policy:" + id);
        QPolicy p;
        if (l == Learner::Bc) {
          auto trajs = load_abstract_corpus(path(relabeled_name(RewardMode::SparseFinal)));
          if (cfg_.rl.bc_successful_only) trajs = successful(trajs);
          p = bc_train(trajs, tc, data.space, data.layout);
          inputs.push_back(relabeled_name(RewardMode::SparseFinal));
        } else {
          const auto trajs = load_abstract_corpus(path(relabeled_name(m)));
          p.q = cql_train(trajs, tc, data.space, data.layout);
          inputs.push_back(relabeled_name(m));
        }
        p.learner = l;
        p.scheme = data.kind;
        p.temperature = cfg_.rl.temperature;
        save_policy(p, path(policy_file(id)));
        artifacts.push_back(policy_file(id));
        index.push_back({{"id", id},
                         {"learner", to_string(l)},
                         {"reward_mode", l == Learner::Bc ? "none" : std::string(to_string(m))},
                         {"scheme", to_string(data.kind)}});
      }
    }
    save_json(index, path(kPolicyIndex));
    artifacts.emplace_back(kPolicyIndex);
    std::sort(inputs.begin(), inputs.end());
    inputs.erase(std::unique(inputs.begin(), inputs.end()), inputs.end());
    write_manifest("train-policy", inputs, artifacts);
  });
}

void Pipeline::rank() {
  stage("rank", [&] {
    const json index = load_json(path(kPolicyIndex));
    const auto eval = load_abstract_corpus(path(kEvalSparse));
    std::vector<PolicyCandidate> cands;
    std::vector<std::string> inputs{kPolicyIndex, kEvalSparse};
    for (const auto& e : index) {
      const std::string id = e.at("id").get<std::string>();
      cands.push_back({id, e.at("scheme").get<std::string>(), e.at("reward_mode").get<std::string>(),
                       e.at("learner").get<std::string>(), load_policy(path(policy_file(id)))});
      inputs.push_back(policy_file(id));
    }
    TrainConfig tc = cfg_.ope.train;
    tc.seed = seed_for("rank");
    const auto ranking = rank_policies(cands, eval, tc, cfg_.ope.k, cfg_.ope.options);
    write_text(path(kRankingCsv), ranking_to_csv(ranking));
    const bool hit = std::any_of(ranking.begin(), ranking.end(), [](const RankedPolicy& r) { return r.id == "cql-irl"; });
    save_json({{"k", cfg_.ope.k},
               {"candidates", cands.size()},
               {"ranking", ranking_to_json(ranking)},
               {"rl_irl_in_top_k", hit}},
              path(kRankingJson));
    write_manifest("rank", inputs, {kRankingCsv, kRankingJson});
  });
}

void Pipeline::simulate() {
  stage("simulate", [&] {
    const std::uint64_t seed = seed_for("simulate");
    std::vector<SimScenario> scns;
    char id[32];
    for (std::size_t i = 0; i < cfg_.sim.test_scenarios; ++i) {
      std::snprintf(id, sizeof id, "test-%03zu", i);
      scns.push_back(generate_scenario(cfg_.sim.scenario, derive_seed(seed, std::string("scenario:") + id), id));
    }
    std::vector<std::string> inputs;
    std::optional<SchemeSpec> spec;
    std::map<std::string, std::shared_ptr<const QPolicy>> policies;
    for (const auto& arm : cfg_.sim.arms) {
      if (arm.policy.empty() || policies.contains(arm.policy)) continue;
      if (!spec) {
        spec = load_scheme_spec(true);
        inputs.emplace_back(kScheme);
      }
      policies[arm.policy] = std::make_shared<const QPolicy>(load_policy(path(policy_file(arm.policy))));
      inputs.push_back(policy_file(arm.policy));
    }

    std::ostringstream results;
    results << "arm,scenario_id,trial,fpc_accuracy,rce_identification,turns_used,entities_explored\n";
    std::vector<RawTrajectory> corpus;
    std::string audit;
    for (const auto& arm : cfg_.sim.arms) {
      std::optional<CeSetup> ce;
      if (!arm.policy.empty()) {
        CeConfig cc = cfg_.ce;
        cc.strategies = arm.strategies;
        ce = CeSetup{policies.at(arm.policy), cc, *spec};
      }
      for (const auto& scn : scns) {
        for (std::size_t t = 0; t < cfg_.sim.trials; ++t) {
          // Paired seeds: the same (scenario, trial) seed in every arm.
          const std::uint64_t ep_seed = derive_seed(seed, "episode:" + scn.scenario_id + ":" + std::to_string(t));
          const std::string tid = arm.id + "/" + scn.scenario_id + "-t" + std::to_string(t);
          auto res = run_episode(scn, ce ? &*ce : nullptr, cfg_.sim.episode, ep_seed, tid);
          results << arm.id << ',' << scn.scenario_id << ',' << t << ',' << fmt_double(res.scores.fpc_accuracy) << ','
                  << res.scores.rce_identification << ',' << res.turns_used << ',' << res.entities_explored << '\n';
          if (cfg_.sim.write_audit && !res.audit.empty()) {
            audit += json{{"trajectory_id", tid}, {"turns", res.audit}}.dump() + "\n";
          }
          corpus.push_back(std::move(res.trajectory));
        }
      }
    }
    save_scenarios(scns, path(kScenariosTest));
    save_corpus(corpus, path(kSimCorpus));
    write_text(path(kResults), results.str());
    std::vector<std::string> artifacts{kScenariosTest, kSimCorpus, kResults};
    if (cfg_.sim.write_audit) {
      write_text(path(kAudit), audit);
      artifacts.emplace_back(kAudit);
    }
    write_manifest("simulate", inputs, artifacts);
  });
}

void Pipeline::evaluate() {
  stage("evaluate", [&] {
    const auto rows = load_results(path(kResults));
    std::vector<std::string> arms;
    std::vector<std::string> scenarios;
    std::map<std::string, std::map<std::string, std::vector<TrialRecord>>> cells;
    std::map<std::string, std::vector<double>> explored;
    for (const auto& r : rows) {
      if (std::find(arms.begin(), arms.end(), r.arm) == arms.end()) arms.push_back(r.arm);
      if (std::find(scenarios.begin(), scenarios.end(), r.scenario_id) == scenarios.end()) {
        scenarios.push_back(r.scenario_id);
      }
      cells[r.arm][r.scenario_id].push_back({r.rce / 100.0, r.fpc / 100.0});
      explored[r.arm].push_back(r.explored);
    }
    if (arms.empty()) throw Error(ErrorCode::EmptyData, "no results");
    std::string baseline;
    for (const auto& a : cfg_.sim.arms) {
      if (a.policy.empty()) baseline = a.id;
    }
    if (!cells.contains(baseline)) baseline = arms.front();

    const std::uint64_t seed = seed_for("evaluate");
    std::map<std::string, PassAt3Estimate> est;
    for (const auto& a : arms) {
      std::vector<std::vector<TrialRecord>> per;
      for (const auto& s : scenarios) per.push_back(cells[a][s]);
      est[a] = pass_at_3_bootstrap(per, cfg_.eval.n_boot, seed);
    }
    std::vector<std::string> others;
    std::vector<std::vector<double>> other_means;
    for (const auto& a : arms) {
      if (a == baseline) continue;
      others.push_back(a);
      other_means.push_back(est[a].scenario_recall);
    }
    const auto tests = paired_t_bonferroni(est[baseline].scenario_recall, other_means, cfg_.eval.alpha);

    std::vector<std::vector<double>> scores;
    for (const auto& a : arms) scores.push_back(est[a].scenario_recall);
    const auto ranks = rank_scores(scores, true);
    std::optional<NemenyiResult> cd;
    if (arms.size() >= 2 && arms.size() <= 10) cd = nemenyi_cd(ranks, cfg_.eval.alpha);

    json methods = json::array();
    std::ostringstream txt;
    txt << std::fixed;
    txt.precision(4);
    txt << "arm  recall_mean  recall_std  f1_mean  f1_std  mean_explored  p_adjusted  avg_rank\n";
    for (std::size_t i = 0; i < arms.size(); ++i) {
      const auto& a = arms[i];
      const auto& e = est[a];
      const double mexp = std::accumulate(explored[a].begin(), explored[a].end(), 0.0) /
                          static_cast<double>(explored[a].size());
      json m{{"arm", a},
             {"recall_mean", e.recall_mean},
             {"recall_std", e.recall_std},
             {"f1_mean", e.f1_mean},
             {"f1_std", e.f1_std},
             {"mean_entities_explored", mexp},
             {"scenario_recall", e.scenario_recall}};
      double p_adj = 1.0;
      const auto it = std::find(others.begin(), others.end(), a);
      if (it != others.end()) {
        const auto& t = tests[static_cast<std::size_t>(it - others.begin())];
        m["t_stat"] = std::isfinite(t.t_stat) ? json(t.t_stat) : json(t.t_stat > 0 ? "inf" : "-inf");
        m["p_raw"] = t.p_raw;
        m["p_adjusted"] = t.p_adjusted;
        m["significant"] = t.significant;
        p_adj = t.p_adjusted;
      }
      if (cd) m["avg_rank"] = cd->avg_ranks[i];
      methods.push_back(std::move(m));
      txt << a << "  " << e.recall_mean << "  " << e.recall_std << "  " << e.f1_mean << "  " << e.f1_std << "  "
          << mexp << "  " << (a == baseline ? std::string("-") : fmt_double(p_adj)) << "  "
          << (cd ? fmt_double(cd->avg_ranks[i]) : std::string("-")) << '\n';
    }
    json report{{"baseline", baseline},
                {"scenarios", scenarios.size()},
                {"n_boot", cfg_.eval.n_boot},
                {"alpha", cfg_.eval.alpha},
                {"methods", methods}};
    if (cd) {
      json groups = json::array();
      for (const auto& g : cd->groups) {
        json names = json::array();
        for (std::size_t k : g) names.push_back(arms[k]);
        groups.push_back(names);
      }
      report["critical_difference"] = cd->cd;
      report["groups"] = groups;
      txt << '\n' << render_cd_diagram(*cd, arms);
    }
    save_json(report, path(kReportJson));
    write_text(path(kReportTxt), txt.str());
    write_manifest("evaluate", {kResults}, {kReportJson, kReportTxt});
  });
}

void Pipeline::robustness() {
  stage("robustness", [&] {
    const SplitCorpus data = load_split(out_);
    const RewardNet net = load_reward_net(path(kRewardNet));
    const RewardScaling scaling = load_scaling(path(kRewardScaling));
    const auto eval = load_abstract_corpus(path(kEvalSparse));
    auto experts = successful(data.train);
    std::mt19937_64 rng(seed_for("robustness"));
    std::shuffle(experts.begin(), experts.end(), rng);

    json rows = json::array();
    std::vector<double> irl_values;
    std::vector<double> bc_values;
    for (std::size_t n : cfg_.robustness.expert_counts) {
      if (n > experts.size()) {
        spdlog::warn("robustness: only {} expert trajectories, skipping count {}", experts.size(), n);
        rows.push_back({{"count", n}, {"skipped", true}});
        continue;
      }
      std::span<const AbstractTrajectory> subset(experts.data(), n);
      TrainConfig tc = cfg_.rl.train;
      tc.seed = seed_for("robustness:" + std::to_string(n));
      QPolicy irl;
      irl.q = cql_train(relabel_all(subset, &net, RewardMode::IrlPerTurn, cfg_.irl.signal, cfg_.rl.lambda, scaling), tc,
                        data.space, data.layout);
      irl.temperature = cfg_.rl.temperature;
      QPolicy bc = bc_train(subset, tc, data.space, data.layout);
      bc.temperature = cfg_.rl.temperature;
      TrainConfig fc = cfg_.ope.train;
      fc.seed = seed_for("robustness:fqe:" + std::to_string(n));
      const double v_irl = fqe(irl, eval, fc, cfg_.ope.options).initial_value;
      const double v_bc = fqe(bc, eval, fc, cfg_.ope.options).initial_value;
      irl_values.push_back(v_irl);
      bc_values.push_back(v_bc);
      rows.push_back({{"count", n}, {"rl_irl", v_irl}, {"bc", v_bc}});
    }
    json out{{"rows", rows}, {"experts_available", experts.size()}};
    if (!irl_values.empty()) {
      out["rl_irl_range"] = range_of(irl_values);
      out["bc_range"] = range_of(bc_values);
      out["rl_irl_range_smaller"] = range_of(irl_values) < range_of(bc_values);
      if (!(range_of(irl_values) < range_of(bc_values))) {
        spdlog::warn("robustness: RL-IRL initial-value range {:.4f} is not below BC's {:.4f}", range_of(irl_values),
                     range_of(bc_values));
      }
    }
    save_json(out, path(kRobustness));
    write_manifest("robustness", {kAbstract, kSplit, kRewardNet, kRewardScaling, kEvalSparse}, {kRobustness});
  });
}

json Pipeline::reproduce() {
  for (const auto& s : stages()) {
    if (s == "collect" && !cfg_.paths.corpus.empty()) continue;
    if (s == "robustness" && !cfg_.robustness.enabled) continue;
    run_stage(s);
  }
  const json report = load_json(path(kReportJson));
  json rows = json::array();
  std::ostringstream csv;
  csv << "arm,strategies,policy,recall_mean,recall_std,f1_mean,f1_std,mean_entities_explored,p_adjusted,avg_rank\n";
  for (const auto& m : report.at("methods")) {
    const std::string arm = m.at("arm").get<std::string>();
    std::string strategies = "none";
    std::string policy = "none";
    for (const auto& a : cfg_.sim.arms) {
      if (a.id != arm) continue;
      const auto toks = strategy_tokens(a.strategies);
      if (!toks.empty()) {
        strategies.clear();
        for (std::size_t i = 0; i < toks.size(); ++i) strategies += (i ? "+" : "") + toks[i];
      }
      if (!a.policy.empty()) policy = a.policy;
    }
    json row{{"arm", arm},
             {"strategies", strategies},
             {"policy", policy},
             {"recall_mean", m.at("recall_mean")},
             {"recall_std", m.at("recall_std")},
             {"f1_mean", m.at("f1_mean")},
             {"f1_std", m.at("f1_std")},
             {"mean_entities_explored", m.at("mean_entities_explored")},
             {"p_adjusted", m.value("p_adjusted", json(nullptr))},
             {"avg_rank", m.value("avg_rank", json(nullptr))}};
    auto cell = [](const json& v) { return v.is_null() ? std::string("") : fmt_double(v.get<double>()); };
    csv << arm << ',' << strategies << ',' << policy << ',' << cell(row["recall_mean"]) << ','
        << cell(row["recall_std"]) << ',' << cell(row["f1_mean"]) << ',' << cell(row["f1_std"]) << ','
        << cell(row["mean_entities_explored"]) << ',' << cell(row["p_adjusted"]) << ',' << cell(row["avg_rank"])
        << '\n';
    rows.push_back(std::move(row));
  }
  json artifacts = json::object();
  for (const auto& entry : fs::recursive_directory_iterator(out_)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), out_).generic_string();
    if (rel == kSummaryJson || rel == kSummaryCsv || rel.starts_with("manifests/")) continue;
    artifacts[rel] = sha256_file(entry.path());
  }
  json summary{{"master_seed", cfg_.master_seed}, {"arms", rows}, {"artifact_hashes", artifacts}};
  save_json(summary, path(kSummaryJson));
  write_text(path(kSummaryCsv), csv.str());
  return summary;
}

}  // namespace dtmdp
