#include <filesystem>

#include <gtest/gtest.h>

#include "dtmdp/abstraction.hpp"
#include "dtmdp/error.hpp"
#include "oracles.hpp"

using namespace dtmdp;

namespace {

Entity svc(const std::string& n) { return {n, "Service"}; }

RawTrajectory name_traj() {
  const Entity a = svc("A"), b = svc("B"), c = svc("C");
  RawTrajectory t;
  t.trajectory_id = "t";
  t.scenario_id = "s";
  t.symptom_entity = a;
  t.steps.push_back({0, a, {a, b}, {{a, Label::Primary}, {b, Label::Cascading}}, {}});
  t.steps.push_back({1, c, {c}, {{a, Label::Primary}, {b, Label::Cascading}, {c, Label::Normal}}, {}});
  t.scores = {50, 0};
  return t;
}

// n0 -> n1 -> n2 -> n3 -> n4, symptom n4, exploring backwards.
struct ChainFixture {
  std::shared_ptr<const TopologyGraph> g;
  RawTrajectory raw;
  ChainFixture() {
    std::vector<Entity> nodes;
    for (int i = 0; i < 5; ++i) nodes.push_back(svc("n" + std::to_string(i)));
    g = std::make_shared<TopologyGraph>(nodes, std::vector<Edge>{{0, 1}, {1, 2}, {2, 3}, {3, 4}});
    const auto& n = g->nodes();
    raw.trajectory_id = "chain";
    raw.scenario_id = "s";
    raw.symptom_entity = n[4];
    raw.steps.push_back({0, n[4], {n[4]}, {{n[4], Label::Cascading}}, {}});
    raw.steps.push_back({1, n[3], {n[3]}, {{n[4], Label::Cascading}, {n[3], Label::Cascading}}, {}});
    raw.steps.push_back(
        {2, n[2], {n[2]}, {{n[4], Label::Cascading}, {n[3], Label::Cascading}, {n[2], Label::Primary}}, {}});
    raw.scores = {100, 100};
  }
  SchemeSpec spec(bool hubs) const {
    SchemeSpec s;
    s.kind = SchemeKind::Topology;
    s.with_hubs = hubs;
    s.graph = g;
    return s;
  }
};

}  // namespace

TEST(Abstraction, NameStateUsesLabelCodes) {
  SchemeSpec spec;
  spec.kind = SchemeKind::Name;
  spec.vocabulary = {svc("A"), svc("B"), svc("C")};
  const Abstractor ab(spec);
  EXPECT_EQ(ab.state({{svc("A"), Label::Primary}, {svc("B"), Label::Cascading}}, svc("A")),
            (std::vector<double>{2, 1, 0}));
  const auto t = ab.abstract(name_traj());
  ASSERT_EQ(t.steps.size(), 2u);
  // Step 0 sees no judgments yet; step 1 sees those recorded after turn 0.
  EXPECT_EQ(t.steps[0].state, (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(t.steps[1].state, (std::vector<double>{2, 1, 0}));
  EXPECT_EQ(t.steps[0].action, ActionRepr::index(0));
  EXPECT_EQ(t.steps[1].action, ActionRepr::index(2));
  EXPECT_EQ(t.steps[0].candidates, (std::vector<ActionRepr>{ActionRepr::index(0), ActionRepr::index(1)}));
  for (const auto& s : t.steps) EXPECT_EQ(s.reward, 0.0);
}

TEST(Abstraction, NameTypeDistinguishesTypes) {
  RawTrajectory raw = name_traj();
  SchemeSpec spec;
  spec.kind = SchemeKind::NameType;
  spec.vocabulary = build_vocabulary(std::span<const RawTrajectory>(&raw, 1), SchemeKind::NameType);
  spec.vocabulary.push_back({"A", "Pod"});
  std::sort(spec.vocabulary.begin(), spec.vocabulary.end());
  const Abstractor ab(spec);
  EXPECT_EQ(ab.state_dim(), 4u);
  const auto t = ab.abstract(raw);
  for (const auto& s : t.steps)
    for (double v : s.state) EXPECT_TRUE(v == 0 || v == 1 || v == 2);
}

TEST(Abstraction, MissingVocabularyEntityThrows) {
  SchemeSpec spec;
  spec.kind = SchemeKind::Name;
  spec.vocabulary = {svc("A"), svc("B")};
  try {
    abstract(name_traj(), spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EntityNotInVocabulary);
  }
}

TEST(Abstraction, TopologyTurnZeroUsesSentinelEverywhereButSymptom) {
  ChainFixture f;
  const Abstractor ab(f.spec(false));
  const double s = ab.sentinel();
  EXPECT_EQ(s, 5.0);  // diameter 4 + 1
  const auto t = ab.abstract(f.raw);
  EXPECT_EQ(t.steps[0].action.as_features(), (std::vector<double>{s, 0.0, s, s}));
  EXPECT_EQ(t.steps[0].state, (std::vector<double>{s, s}));
}

TEST(Abstraction, TopologyFeaturesMatchDistanceOracle) {
  ChainFixture f;
  const Abstractor ab(f.spec(true));
  const auto fw = oracle::floyd_warshall(*f.g);
  const double sent = ab.sentinel();
  auto d = [&](const Entity& a, const Entity& b) {
    const int v = fw[f.g->id_of(a)][f.g->id_of(b)];
    return v < 0 ? sent : static_cast<double>(v);
  };
  auto dmin = [&](const Entity& a, const Assessments& as, Label want, bool from_a) {
    double best = sent;
    for (const auto& [e, l] : as)
      if (l == want) best = std::min(best, from_a ? d(a, e) : d(e, a));
    return best;
  };
  const auto hubs = hubs_scores(*f.g);
  const auto t = ab.abstract(f.raw);
  const Entity& sym = f.raw.symptom_entity;
  for (std::size_t i = 0; i < f.raw.steps.size(); ++i) {
    const Assessments prev = i ? f.raw.steps[i - 1].assessments : Assessments{};
    const Entity& c = f.raw.steps[i].chosen_entity;
    const std::vector<double> want_state{dmin(sym, prev, Label::Primary, true), dmin(sym, prev, Label::Cascading, true)};
    const std::vector<double> want_action{i ? d(c, f.raw.steps[i - 1].chosen_entity) : sent, d(c, sym),
                                          dmin(c, prev, Label::Primary, true), dmin(c, prev, Label::Cascading, true),
                                          hubs[f.g->id_of(c)]};
    EXPECT_EQ(t.steps[i].state, want_state) << "step " << i;
    const auto& got = t.steps[i].action.as_features();
    ASSERT_EQ(got.size(), want_action.size());
    for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got[k], want_action[k], 1e-12) << "step " << i;
  }
}

TEST(Abstraction, TopologyFeaturesNonNegativeAndSentinelExceedsDiameter) {
  ChainFixture f;
  const Abstractor ab(f.spec(true));
  EXPECT_GT(ab.sentinel(), DistanceTable(*f.g).diameter());
  for (const auto& s : ab.abstract(f.raw).steps) {
    for (double x : s.state) EXPECT_GE(x, 0.0);
    for (double x : s.action.as_features()) EXPECT_GE(x, 0.0);
  }
  auto bad = f.spec(false);
  bad.unreachable_sentinel = 3.0;
  EXPECT_THROW(Abstractor{bad}, Error);
}

TEST(Abstraction, LayoutDimensions) {
  ChainFixture f;
  EXPECT_EQ(Abstractor(f.spec(false)).layout(), (FeatureLayout{2, 4}));
  EXPECT_EQ(Abstractor(f.spec(true)).layout(), (FeatureLayout{2, 5}));
}

TEST(Abstraction, EntityOutsideGraphThrows) {
  ChainFixture f;
  f.raw.steps[1].chosen_entity = svc("ghost");
  f.raw.steps[1].candidate_entities = {svc("ghost")};
  try {
    abstract(f.raw, f.spec(false));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EntityNotInGraph);
  }
}

TEST(Abstraction, SchemeFlagsOnlyForTopology) {
  SchemeSpec spec;
  spec.kind = SchemeKind::Name;
  spec.vocabulary = {svc("A")};
  spec.with_hubs = true;
  EXPECT_THROW(spec.validate(), Error);
  spec.with_hubs = false;
  spec.vocabulary = {svc("A"), svc("A")};
  EXPECT_THROW(spec.validate(), Error);
}

TEST(Abstraction, Deterministic) {
  ChainFixture f;
  EXPECT_EQ(abstract(f.raw, f.spec(true)), abstract(f.raw, f.spec(true)));
}

TEST(Abstraction, EncodingAppendsOneHotOrFeatures) {
  const FeatureLayout idx{2, 3};
  EXPECT_EQ(encode_state_action(idx, std::vector<double>{1, 2}, ActionRepr::index(1)),
            (std::vector<double>{1, 2, 0, 1, 0}));
  const FeatureLayout feat{1, 2};
  EXPECT_EQ(encode_state_action(feat, std::vector<double>{7}, ActionRepr::features({3, 4})),
            (std::vector<double>{7, 3, 4}));
  EXPECT_THROW(encode_state_action(idx, std::vector<double>{1, 2}, ActionRepr::index(3)), Error);
  EXPECT_THROW(encode_state_action(feat, std::vector<double>{1, 2}, ActionRepr::features({1, 2})), Error);
}

TEST(Abstraction, AbstractCorpusRoundTrip) {
  ChainFixture f;
  const std::vector<AbstractTrajectory> v{abstract(f.raw, f.spec(true))};
  const auto path = std::filesystem::temp_directory_path() / "dtmdp_abs_rt.jsonl";
  save_abstract_corpus(v, path);
  EXPECT_EQ(load_abstract_corpus(path), v);
  std::filesystem::remove(path);
}
