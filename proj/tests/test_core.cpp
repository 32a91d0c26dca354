#include <gtest/gtest.h>

#include "cft/core.hpp"
#include "cft/rng.hpp"
#include "support/files.hpp"

using namespace cft;
using cft::testing::TempDir;
using cft::testing::read_file;
using cft::testing::write_file;

namespace {

MaskedExample record(std::string id, std::vector<double> weights) {
  MaskedExample x;
  x.sample_id = std::move(id);
  x.question = "start with 3; add 4.";
  for (std::size_t i = 0; i < weights.size(); ++i) {
    x.token_texts.push_back(" t" + std::to_string(i));
    x.token_ids.push_back(static_cast<int>(10 + i));
  }
  x.weights = std::move(weights);
  x.policy = "strict3";
  x.backend_tag = "toy:model.ckpt";
  return x;
}

template <class F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(LoadSamples, MapsFieldsInFileOrder) {
  TempDir dir;
  write_file(dir.file("c.jsonl"),
             R"({"id":"q1","question":"2+2=?","answer":"4","task":"numeric"})"
             "\n\n"
             R"({"id":"q2","question":"Pick","answer":"B","task":"choice","choices":[{"label":"A","text":"x"},{"label":"B","text":"y"}]})"
             "\n");
  const auto s = load_samples(dir.file("c.jsonl"));
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].id, "q1");
  EXPECT_EQ(s[0].question, "2+2=?");
  EXPECT_EQ(s[0].gold_answer, "4");
  EXPECT_EQ(s[0].task_kind, TaskKind::numeric);
  EXPECT_TRUE(s[0].choices.empty());
  EXPECT_EQ(s[1].task_kind, TaskKind::choice);
  ASSERT_EQ(s[1].choices.size(), 2u);
  EXPECT_EQ(s[1].choices[1].label, "B");
  EXPECT_EQ(s[1].choices[1].text, "y");
}

TEST(LoadSamples, DuplicateIdNamesTheId) {
  TempDir dir;
  write_file(dir.file("c.jsonl"), R"({"id":"q1","question":"a","answer":"1","task":"numeric"})"
                                  "\n"
                                  R"({"id":"q1","question":"b","answer":"2","task":"numeric"})"
                                  "\n");
  const auto msg = error_of([&] { load_samples(dir.file("c.jsonl")); });
  EXPECT_NE(msg.find("q1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("duplicate"), std::string::npos) << msg;
}

TEST(LoadSamples, ChoiceRecordWithoutChoicesIsMalformed) {
  TempDir dir;
  write_file(dir.file("c.jsonl"), R"({"id":"q1","question":"a","answer":"B","task":"choice"})"
                                  "\n");
  EXPECT_THROW(load_samples(dir.file("c.jsonl")), DataError);
}

TEST(LoadSamples, EveryMalformedLineIsReportedWithItsNumber) {
  const std::vector<std::string> bad = {
      "{not json",
      R"(["an","array"])",
      R"({"question":"a","answer":"1","task":"numeric"})",
      R"({"id":"","question":"a","answer":"1","task":"numeric"})",
      R"({"id":"x","question":"a","answer":"","task":"numeric"})",
      R"({"id":"x","question":"a","answer":"1","task":"essay"})",
      R"({"id":"x","question":"a","answer":"1","task":"numeric","choices":[{"label":"A","text":"t"}]})",
      R"({"id":"x","question":7,"answer":"1","task":"numeric"})",
  };
  for (const auto& line : bad) {
    TempDir dir;
    write_file(dir.file("c.jsonl"), std::string(R"({"id":"ok","question":"a","answer":"1","task":"numeric"})") +
                                        "\n" + line + "\n");
    const auto msg = error_of([&] { load_samples(dir.file("c.jsonl")); });
    EXPECT_NE(msg.find("line 2"), std::string::npos) << line << " -> " << msg;
  }
}

TEST(LoadSamples, RoundTripsThroughWriteSamples) {
  TempDir dir;
  Sample a{"a", "q?", "3/2", TaskKind::numeric, {}, std::string("work #### 3/2")};
  Sample b{"b", "which?", "C", TaskKind::choice, {{"A", "one"}, {"C", "three"}}, std::nullopt};
  write_samples({a, b}, dir.file("s.jsonl"));
  const auto back = load_samples(dir.file("s.jsonl"));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], a);
  EXPECT_EQ(back[1], b);
}

TEST(PromptFor, ListsChoicesUnderTheQuestion) {
  Sample s{"c", "Which?", "A", TaskKind::choice, {{"A", "red"}, {"B", "blue"}}, std::nullopt};
  EXPECT_EQ(prompt_for(s), "Which?\n(A) red\n(B) blue\n");
  Sample n{"n", "2+2?", "4", TaskKind::numeric, {}, std::nullopt};
  EXPECT_EQ(prompt_for(n), "2+2?\n");
}

TEST(MaskedDataset, OneRecordWritesThreeElementArrays) {
  TempDir dir;
  write_masked_dataset({record("q1", {0, 1, 0})}, dir.file("d.jsonl"));
  const std::string text = read_file(dir.file("d.jsonl"));
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  const json j = json::parse(text);
  EXPECT_EQ(j["token_texts"].size(), 3u);
  EXPECT_EQ(j["token_ids"].size(), 3u);
  EXPECT_EQ(j["weights"], json::array({0.0, 1.0, 0.0}));
  for (const char* key : {"sample_id", "question", "token_texts", "token_ids", "weights", "policy", "backend_tag"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
}

TEST(MaskedDataset, EmptyListGivesEmptyFile) {
  TempDir dir;
  write_masked_dataset({}, dir.file("d.jsonl"));
  EXPECT_EQ(read_file(dir.file("d.jsonl")), "");
  EXPECT_TRUE(read_masked_dataset(dir.file("d.jsonl")).empty());
}

TEST(MaskedDataset, MismatchedLengthsFailBeforeAnyWrite) {
  TempDir dir;
  auto bad = record("q2", {0, 1, 0});
  bad.weights = {1, 0};
  EXPECT_THROW(write_masked_dataset({record("q1", {1, 1, 1}), bad}, dir.file("d.jsonl")), DataError);
  EXPECT_FALSE(std::filesystem::exists(dir.file("d.jsonl")));
}

TEST(MaskedDataset, RoundTripIsExactForRandomRecords) {
  TempDir dir;
  Rng rng(99);
  std::vector<MaskedExample> recs;
  for (int i = 0; i < 40; ++i) {
    std::vector<double> w(1 + rng.below(30));
    for (auto& x : w) x = rng.uniform() < 0.5 ? 0.0 : rng.uniform() * 3.0;
    w[rng.below(w.size())] = 0.1 + rng.uniform();
    auto r = record("r" + std::to_string(i), w);
    r.question = "q \"quoted\" \\ ünïcode\n" + std::to_string(rng.next());
    r.token_texts[0] = "\t\x01";
    recs.push_back(r);
  }
  write_masked_dataset(recs, dir.file("d.jsonl"));
  EXPECT_EQ(read_masked_dataset(dir.file("d.jsonl")), recs);
}

TEST(MaskedDataset, ReaderRejectsInvariantViolationsWithLineNumber) {
  const std::vector<std::string> bad = {
      R"({"sample_id":"z","question":"q","token_texts":["a","b"],"token_ids":[1,2],"weights":[0,0],"policy":"p","backend_tag":"t"})",
      R"({"sample_id":"z","question":"q","token_texts":["a","b"],"token_ids":[1,2],"weights":[1,-0.5],"policy":"p","backend_tag":"t"})",
      R"({"sample_id":"z","question":"q","token_texts":["a","b"],"token_ids":[1],"weights":[1,1],"policy":"p","backend_tag":"t"})",
      R"({"sample_id":"z","question":"q","token_texts":[],"token_ids":[],"weights":[],"policy":"p","backend_tag":"t"})",
      R"({"sample_id":"z","question":"q","token_texts":["a"],"token_ids":["1"],"weights":[1],"policy":"p","backend_tag":"t"})",
      R"({"sample_id":"z","question":"q","token_texts":["a"],"token_ids":[1],"weights":[1],"policy":"p"})",
  };
  for (const auto& line : bad) {
    TempDir dir;
    write_file(dir.file("d.jsonl"), masked_to_json(record("ok", {1})).dump() + "\n" + line + "\n");
    const auto msg = error_of([&] { read_masked_dataset(dir.file("d.jsonl")); });
    EXPECT_NE(msg.find("line 2"), std::string::npos) << line << " -> " << msg;
  }
}

TEST(RunConfig, DefaultsFollowTheMainSetting) {
  RunConfig c;
  EXPECT_EQ(c.k, 3);
  EXPECT_EQ(c.policy, PolicyKind::strict3);
  EXPECT_EQ(c.sampling_max_attempts, 100);
  EXPECT_EQ(c.sampling_temperature, 1.0);
  EXPECT_EQ(c.transfer_fraction, 0.15);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, PolicyDeterminesMinimumK) {
  RunConfig c;
  c.k = 2;
  c.policy = PolicyKind::strict2;
  EXPECT_NO_THROW(c.validate());
  for (auto p : {PolicyKind::strict3, PolicyKind::union3, PolicyKind::graded3}) {
    c.policy = p;
    EXPECT_THROW(c.validate(), UsageError);
  }
  c = RunConfig{};
  c.transfer_fraction = 0.0;
  EXPECT_THROW(c.validate(), UsageError);
  c.transfer_fraction = 1.0;
  EXPECT_NO_THROW(c.validate());
  c.parallelism = 0;
  EXPECT_THROW(c.validate(), UsageError);
}

TEST(RunConfig, ConfigTextAppliesKnownKeysAndReturnsTheRest) {
  const auto kv = parse_config_text("# comment\nk = 4\npolicy=graded3\nmax-continuation-tokens = 12\n"
                                    "fraction = 0.2\nseed=7\nbackend = toy  # trailing\n");
  RunConfig c;
  const auto rest = apply_config(c, kv);
  EXPECT_EQ(c.k, 4);
  EXPECT_EQ(c.policy, PolicyKind::graded3);
  EXPECT_EQ(c.max_continuation_tokens, 12);
  EXPECT_DOUBLE_EQ(c.transfer_fraction, 0.2);
  EXPECT_EQ(c.seed, 7u);
  ASSERT_EQ(rest.size(), 1u);
  EXPECT_EQ(rest.at("backend"), "toy");
  EXPECT_THROW(parse_config_text("just words\n"), UsageError);
  RunConfig d;
  EXPECT_THROW(apply_config(d, {{"k", "three"}}), UsageError);
  EXPECT_THROW(apply_config(d, {{"policy", "lenient"}}), UsageError);
}

TEST(Errors, ExitCodesByKind) {
  EXPECT_EQ(exit_code_for(ErrorKind::usage), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::backend), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::data), 4);
  EXPECT_EQ(CapabilityError("x").kind(), ErrorKind::backend);
}

TEST(Rng, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(1, "q1", 0), derive_seed(1, "q1", 0));
  EXPECT_NE(derive_seed(1, "q1", 0), derive_seed(1, "q1", 1));
  EXPECT_NE(derive_seed(1, "q1", 0), derive_seed(1, "q2", 0));
  EXPECT_NE(derive_seed(1, "q1", 0), derive_seed(2, "q1", 0));
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  Rng r(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(r.below(7), 7u);
  }
}
