#include <random>

#include <benchmark/benchmark.h>

#include "dtmdp/abstraction.hpp"
#include "dtmdp/offline_rl.hpp"
#include "dtmdp/simenv.hpp"
#include "dtmdp/topology.hpp"

using namespace dtmdp;

static void BM_Hubs(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::bernoulli_distribution edge(4.0 / static_cast<double>(n));
  std::vector<Entity> nodes;
  for (std::size_t i = 0; i < n; ++i) nodes.push_back({"n" + std::to_string(i), "Service"});
  std::vector<Edge> edges;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v)
      if (u != v && edge(rng)) edges.push_back({u, v});
  const TopologyGraph g(nodes, edges);
  for (auto _ : state) benchmark::DoNotOptimize(hubs_scores(g));
}
BENCHMARK(BM_Hubs)->Arg(16)->Arg(64)->Arg(256);

static void BM_CqlNetwork(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  const FeatureLayout layout{4, 3};
  std::vector<AbstractTrajectory> data(50);
  for (auto& t : data)
    for (int k = 0; k < 6; ++k) {
      std::vector<ActionRepr> cands;
      for (int c = 0; c < 3; ++c) cands.push_back(ActionRepr::features({nd(rng), nd(rng), nd(rng)}));
      t.steps.push_back({{nd(rng), nd(rng), nd(rng), nd(rng)}, cands[0], cands, nd(rng)});
    }
  TrainConfig cfg;
  cfg.iterations = static_cast<int>(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(cql_train(data, cfg, ActionSpace::candidate_set(), layout));
}
BENCHMARK(BM_CqlNetwork)->Arg(100)->Arg(500)->Unit(benchmark::kMillisecond);

static void BM_BaselineEpisode(benchmark::State& state) {
  ScenarioConfig cfg;
  cfg.n_nodes = static_cast<std::size_t>(state.range(0));
  const auto scn = generate_scenario(cfg, 3);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(run_episode(scn, nullptr, EpisodeConfig{}, ++seed));
}
BENCHMARK(BM_BaselineEpisode)->Arg(12)->Arg(48);

BENCHMARK_MAIN();
