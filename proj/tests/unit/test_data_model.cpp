#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dtmdp/data_model.hpp"
#include "dtmdp/error.hpp"

using namespace dtmdp;
namespace fs = std::filesystem;

namespace {

RawTrajectory three_turn(const std::string& id = "t0") {
  const Entity fe{"frontend", "Service"}, cart{"cart", "Service"}, pod{"cart-pod", "Pod"};
  RawTrajectory t;
  t.trajectory_id = id;
  t.scenario_id = "s0";
  t.symptom_entity = fe;
  t.steps.push_back({0, fe, {fe}, {{fe, Label::Cascading}}, std::nullopt});
  t.steps.push_back({1, cart, {cart, pod}, {{fe, Label::Cascading}, {cart, Label::Cascading}}, 0.5});
  t.steps.push_back({2, pod, {pod}, {{fe, Label::Cascading}, {cart, Label::Cascading}, {pod, Label::Primary}}, std::nullopt});
  t.scores = {80.0, 100.0};
  t.final_root_cause = pod;
  return t;
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("dtmdp_dm_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + name);
}

ErrorCode code_of(const std::string& text) {
  std::istringstream in(text);
  try {
    read_corpus(in);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(DataModel, EmptyFileGivesEmptyCorpus) {
  std::istringstream in("");
  EXPECT_TRUE(read_corpus(in).empty());
}

TEST(DataModel, RoundTripPreservesOrderAndSteps) {
  const std::vector<RawTrajectory> corpus{three_turn("a"), three_turn("b")};
  const auto path = temp_file("rt.jsonl");
  save_corpus(corpus, path);
  const auto back = load_corpus(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].steps.size(), 3u);
  EXPECT_EQ(back, corpus);
  fs::remove(path);
}

TEST(DataModel, SaveEmptyWritesZeroRecords) {
  const auto path = temp_file("empty.jsonl");
  save_corpus(std::vector<RawTrajectory>{}, path);
  EXPECT_EQ(fs::file_size(path), 0u);
  EXPECT_TRUE(load_corpus(path).empty());
  fs::remove(path);
}

TEST(DataModel, LargeCorpusOneLinePerTrajectory) {
  std::vector<RawTrajectory> corpus;
  for (int i = 0; i < 819; ++i) corpus.push_back(three_turn("t" + std::to_string(i)));
  std::ostringstream out;
  write_corpus(corpus, out);
  const std::string text = out.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 819);
}

TEST(DataModel, RceMustBeAllOrNothing) {
  auto t = three_turn();
  t.scores.rce_identification = 50;
  auto j = trajectory_to_json(t).dump();
  EXPECT_EQ(code_of(j + "\n"), ErrorCode::ScoreOutOfRange);
  EXPECT_THROW(validate_scores({101.0, 0.0}), Error);
  EXPECT_THROW(validate_scores({-1.0, 100.0}), Error);
  EXPECT_NO_THROW(validate_scores({0.0, 0.0}));
  EXPECT_NO_THROW(validate_scores({100.0, 100.0}));
}

TEST(DataModel, ChosenOutsideCandidatesRejected) {
  auto t = three_turn();
  t.steps[1].candidate_entities = {Entity{"other", "Pod"}};
  EXPECT_EQ(code_of(trajectory_to_json(t).dump() + "\n"), ErrorCode::ChosenEntityNotInCandidates);
}

TEST(DataModel, TurnIndicesMustBeContiguous) {
  auto t = three_turn();
  t.steps[2].turn_index = 3;
  EXPECT_EQ(code_of(trajectory_to_json(t).dump() + "\n"), ErrorCode::NonMonotoneTurnIndex);
}

TEST(DataModel, MalformedLineReportsLineNumber) {
  const std::string good = trajectory_to_json(three_turn()).dump();
  std::istringstream in(good + "\n\n{not json\n");
  try {
    read_corpus(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedRecord);
    ASSERT_TRUE(e.line().has_value());
    EXPECT_EQ(*e.line(), 3u);
  }
}

TEST(DataModel, UnknownFieldsRejected) {
  auto j = trajectory_to_json(three_turn());
  j["extra"] = 1;
  EXPECT_EQ(code_of(j.dump() + "\n"), ErrorCode::MalformedRecord);
}

TEST(DataModel, EmptyStepsRejected) {
  auto t = three_turn();
  t.steps.clear();
  EXPECT_THROW(validate_trajectory(t), Error);
}

TEST(DataModel, DuplicateIdsAcceptedAndReported) {
  const std::vector<RawTrajectory> corpus{three_turn("x"), three_turn("y"), three_turn("x")};
  std::ostringstream out;
  write_corpus(corpus, out);
  std::istringstream in(out.str());
  EXPECT_EQ(read_corpus(in).size(), 3u);
  EXPECT_EQ(duplicate_trajectory_ids(corpus), std::vector<std::string>{"x"});
}

TEST(DataModel, LabelsSerializeAsStrings) {
  const auto j = trajectory_to_json(three_turn());
  const std::string text = j.dump();
  EXPECT_NE(text.find("\"primary\""), std::string::npos);
  EXPECT_NE(text.find("\"cascading\""), std::string::npos);
  EXPECT_EQ(parse_label("normal"), Label::Normal);
  EXPECT_FALSE(parse_label("bogus").has_value());
  EXPECT_EQ(label_code(Label::Primary), 2);
  EXPECT_EQ(label_code(Label::Cascading), 1);
  EXPECT_EQ(label_code(Label::Normal), 0);
}

// Every mutated record either loads or fails with exactly one typed error.
TEST(DataModel, ValidationIsTotal) {
  const auto base = trajectory_to_json(three_turn());
  std::vector<nlohmann::json> variants;
  for (auto it = base.begin(); it != base.end(); ++it) {
    auto j = base;
    j.erase(it.key());
    variants.push_back(j);
    j = base;
    j[it.key()] = nullptr;
    variants.push_back(j);
    j = base;
    j[it.key()] = "text";
    variants.push_back(j);
  }
  for (const auto& j : variants) {
    std::istringstream in(j.dump() + "\n");
    try {
      read_corpus(in);
    } catch (const Error& e) {
      EXPECT_TRUE(e.line().has_value());
    } catch (...) {
      ADD_FAILURE() << "untyped error for " << j.dump();
    }
  }
}
