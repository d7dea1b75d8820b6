// dtmdp: command-line driver for the offline workflow and simulator runs.
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "dtmdp/error.hpp"
#include "dtmdp/pipeline.hpp"

namespace {

enum Exit : int {
  kOk = 0,
  kOther = 1,
  kConfigInvalid = 2,
  kMissingArtifact = 3,
  kStageFailed = 4,
  kDataError = 5,
  kUsage = 64,
};

int exit_code(dtmdp::ErrorCode c) {
  using dtmdp::ErrorCode;
  switch (c) {
    case ErrorCode::ConfigInvalid: return kConfigInvalid;
    case ErrorCode::MissingArtifact: return kMissingArtifact;
    case ErrorCode::StageFailed: return kStageFailed;
    case ErrorCode::MalformedRecord:
    case ErrorCode::ScoreOutOfRange:
    case ErrorCode::ChosenEntityNotInCandidates:
    case ErrorCode::NonMonotoneTurnIndex: return kDataError;
    default: return kOther;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline decision-making workflow for diagnosis agents"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool quiet = false;
  app.add_option("--config", config_path, "Pipeline config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Override master_seed");
  app.add_option("--out", out_dir, "Artifacts directory (overrides paths.artifacts)");
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"collect", "Simulate the training corpus"},
      {"abstract", "Map raw trajectories to state/action features"},
      {"train-reward", "Learn the per-turn reward from ranked trajectories"},
      {"relabel", "Write the reward-relabeled corpora"},
      {"train-policy", "Train the policy grid"},
      {"rank", "Rank policies by FQE initial value"},
      {"simulate", "Run baseline and guided arms on test scenarios"},
      {"evaluate", "Pass@3, paired t-tests and critical differences"},
      {"robustness", "Initial values across expert-trajectory counts"},
      {"reproduce", "Run every stage and write the summary"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  if (quiet) spdlog::set_level(spdlog::level::warn);

  try {
    dtmdp::PipelineConfig cfg = config_path.empty() ? dtmdp::PipelineConfig{}
                                                    : dtmdp::PipelineConfig::load(config_path);
    if (seed) cfg.master_seed = *seed;
    const std::filesystem::path out = out_dir.empty() ? std::filesystem::path(cfg.paths.artifacts) : std::filesystem::path(out_dir);
    dtmdp::Pipeline pipeline(cfg, out);

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "reproduce") {
      const auto summary = pipeline.reproduce();
      std::cout << dtmdp::read_text(out / "summary.csv");
      (void)summary;
    } else {
      pipeline.run_stage(cmd);
    }
    return kOk;
  } catch (const dtmdp::Error& e) {
    std::cerr << "error [" << dtmdp::to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
}
