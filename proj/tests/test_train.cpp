#include <gtest/gtest.h>

#include "cft/tinylm/checkpoint.hpp"
#include "cft/tinylm/synth.hpp"
#include "cft/tinylm/train.hpp"
#include "support/files.hpp"

using namespace cft;

namespace {

struct Setup {
  Vocab vocab;
  std::vector<TrainExample> examples;
};

Setup synth_setup(std::size_t n, std::uint64_t seed = 1) {
  const auto samples = synth_corpus(seed, n);
  std::vector<std::string> texts;
  for (const auto& s : samples) {
    texts.push_back(prompt_for(s));
    texts.push_back(*s.reference_solution);
  }
  Setup out{Vocab::build(texts), {}};
  for (const auto& s : samples) {
    TrainExample e;
    e.prompt_ids = out.vocab.encode(prompt_for(s));
    e.response_ids = out.vocab.encode(*s.reference_solution);
    e.response_ids.push_back(Vocab::eot_id);
    e.weights.assign(e.response_ids.size(), 1.0);
    out.examples.push_back(std::move(e));
  }
  return out;
}

ModelConfig config_for(const Vocab& v, int d = 16, int layers = 1, std::uint64_t seed = 3) {
  ModelConfig c;
  c.vocab_size = v.size();
  c.embed_dim = d;
  c.n_layers = layers;
  c.n_heads = 2;
  c.context_len = 48;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(MakeTrainBatch, PromptIsNeverATarget) {
  TrainExample a{{5, 6, 7}, {8, 9}, {1.0, 0.5}};
  TrainExample b{{5}, {8, 9, 10, 1}, {0.0, 1.0, 1.0, 2.0}};
  const auto batch = make_train_batch(std::vector<TrainExample>{a, b});
  ASSERT_EQ(batch.size(), 2u);
  EXPECT_EQ(batch.token_id_sequences[0], (std::vector<int>{5, 6, 7, 8}));
  EXPECT_EQ(batch.gold_indices[0], (std::vector<int>{6, 7, 8, 9}));
  EXPECT_EQ(batch.padding_mask[0], (std::vector<std::uint8_t>{1, 1, 0, 0}));
  EXPECT_EQ(batch.weight_matrix[0], (std::vector<double>{0, 0, 1.0, 0.5}));
  EXPECT_EQ(batch.token_id_sequences[1], (std::vector<int>{5, 8, 9, 10}));
  EXPECT_EQ(batch.gold_indices[1], (std::vector<int>{8, 9, 10, 1}));
  EXPECT_EQ(batch.padding_mask[1], (std::vector<std::uint8_t>{0, 0, 0, 0}));
  EXPECT_NO_THROW(batch.validate(11));
  EXPECT_THROW(batch.validate(10), DataError);
  TrainExample bad{{}, {1}, {1.0}};
  EXPECT_THROW(make_train_batch(std::vector<TrainExample>{bad}), DataError);
}

TEST(TrainStep, ZeroLearningRateLeavesParametersUnchanged) {
  auto s = synth_setup(4);
  Model m(config_for(s.vocab));
  const std::vector<double> before(m.params().begin(), m.params().end());
  AdamState st;
  AdamOptions o;
  o.learning_rate = 0.0;
  for (auto obj : {Objective::sft, Objective::cft, Objective::dft}) {
    train_step(m, make_train_batch(s.examples), obj, st, o);
  }
  EXPECT_TRUE(std::equal(before.begin(), before.end(), m.params().begin()));
}

TEST(TrainStep, CftWithAllZeroWeightsFailsAndLeavesModelUntouched) {
  auto s = synth_setup(3);
  for (auto& e : s.examples) std::fill(e.weights.begin(), e.weights.end(), 0.0);
  Model m(config_for(s.vocab));
  const std::vector<double> before(m.params().begin(), m.params().end());
  AdamState st;
  EXPECT_THROW(train_step(m, make_train_batch(s.examples), Objective::cft, st, AdamOptions{}), DataError);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), m.params().begin()));
  EXPECT_EQ(st.step, 0);
}

TEST(TrainStep, ReturnsThePreUpdateObjective) {
  auto s = synth_setup(3);
  Model m(config_for(s.vocab));
  const auto batch = make_train_batch(s.examples);
  const double want = compute_objective(m, batch, Objective::sft, false).loss;
  AdamState st;
  EXPECT_EQ(train_step(m, batch, Objective::sft, st, AdamOptions{}), want);
  EXPECT_LT(compute_objective(m, batch, Objective::sft, false).loss, want);
}

TEST(TrainModel, FiftyStepsMemorizeFiveExamples) {
  auto s = synth_setup(5, 11);
  Model m(config_for(s.vocab, 32, 2, 5));
  TrainOptions t;
  t.steps = 50;
  t.batch_size = 5;
  t.adam.learning_rate = 1e-2;
  t.adam.clip_norm = 1.0;
  train_model(m, s.examples, t);
  const double loss = compute_objective(m, make_train_batch(s.examples), Objective::sft, false).loss;
  EXPECT_LT(loss, 0.1);
}

TEST(TrainModel, IsBitDeterministic) {
  auto s = synth_setup(6);
  Model a(config_for(s.vocab)), b(config_for(s.vocab));
  TrainOptions t;
  t.steps = 8;
  t.batch_size = 3;
  t.seed = 9;
  const auto ca = train_model(a, s.examples, t);
  const auto cb = train_model(b, s.examples, t);
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  for (std::size_t i = 0; i < ca.size(); ++i) EXPECT_EQ(ca[i].loss, cb[i].loss);
}

TEST(ScheduledLr, WarmsUpThenDecaysToZero) {
  AdamOptions o;
  o.learning_rate = 1.0;
  o.total_steps = 100;
  o.warmup_ratio = 0.03;
  EXPECT_NEAR(scheduled_lr(o, 0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(scheduled_lr(o, 2), 1.0, 1e-15);
  EXPECT_NEAR(scheduled_lr(o, 3), 1.0, 1e-15);
  EXPECT_LT(scheduled_lr(o, 60), scheduled_lr(o, 30));
  EXPECT_NEAR(scheduled_lr(o, 100), 0.0, 1e-15);
}

TEST(GradCheck, SftObjectiveOnSmallModel) {
  auto s = synth_setup(2);
  const Model m(config_for(s.vocab, 8, 2));
  ASSERT_LE(m.num_params(), 20000u);
  const auto r = grad_check(m, make_train_batch(s.examples), Objective::sft);
  EXPECT_LE(r.max_relative_error, 1e-5) << r.worst_parameter_name;
  EXPECT_EQ(r.num_checked, m.num_params());
}

TEST(GradCheck, CftWithHalfZeroWeights) {
  auto s = synth_setup(2);
  for (auto& e : s.examples) {
    for (std::size_t i = 0; i < e.weights.size(); ++i) e.weights[i] = i % 2 ? 0.0 : 1.0;
  }
  const Model m(config_for(s.vocab, 8, 2));
  const auto r = grad_check(m, make_train_batch(s.examples), Objective::cft);
  EXPECT_LE(r.max_relative_error, 1e-5) << r.worst_parameter_name;
}

TEST(GradCheck, DftWithFrozenWeights) {
  auto s = synth_setup(2);
  const Model m(config_for(s.vocab, 8, 1));
  const auto r = grad_check(m, make_train_batch(s.examples), Objective::dft);
  EXPECT_LE(r.max_relative_error, 1e-5) << r.worst_parameter_name;
}

TEST(GradCheck, SubsampleAndRepeatability) {
  auto s = synth_setup(2);
  const Model m(config_for(s.vocab, 8, 1));
  GradCheckOptions o;
  o.full_limit = 100;
  o.sample_size = 500;
  o.seed = 4;
  const auto batch = make_train_batch(s.examples);
  const auto a = grad_check(m, batch, Objective::sft, o);
  const auto b = grad_check(m, batch, Objective::sft, o);
  EXPECT_EQ(a.num_checked, 500u);
  EXPECT_EQ(a.max_relative_error, b.max_relative_error);
  EXPECT_EQ(a.worst_parameter_name, b.worst_parameter_name);
}

TEST(ZeroMask, GradientIgnoresTargetsAtZeroWeightPositions) {
  auto s = synth_setup(3);
  Rng rng(7);
  for (auto& e : s.examples) {
    for (auto& w : e.weights) w = rng.uniform() < 0.5 ? 0.0 : 1.0;
    e.weights.back() = 1.0;
  }
  const Model m(config_for(s.vocab, 16, 2));
  const auto batch = make_train_batch(s.examples);
  const auto base = compute_objective(m, batch, Objective::cft);
  auto changed = batch;
  int edits = 0;
  for (std::size_t r = 0; r < changed.size(); ++r) {
    for (std::size_t t = 0; t < changed.gold_indices[r].size(); ++t) {
      if (changed.weight_matrix[r][t] == 0.0) {
        changed.gold_indices[r][t] = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.vocab.size())));
        ++edits;
      }
    }
  }
  ASSERT_GT(edits, 0);
  const auto after = compute_objective(m, changed, Objective::cft);
  EXPECT_EQ(after.loss, base.loss);
  EXPECT_EQ(after.grads, base.grads);
}

TEST(AllOnes, CftEqualsSftAtModelLevel) {
  auto s = synth_setup(3);
  const Model m(config_for(s.vocab, 16, 2));
  const auto batch = make_train_batch(s.examples);
  const auto a = compute_objective(m, batch, Objective::sft);
  const auto b = compute_objective(m, batch, Objective::cft);
  EXPECT_LE(std::abs(a.loss - b.loss), 1e-12 * a.loss);
  for (std::size_t i = 0; i < a.grads.size(); ++i) {
    EXPECT_LE(std::abs(a.grads[i] - b.grads[i]), 1e-12 * std::max(std::abs(a.grads[i]), 1e-300)) << i;
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  cft::testing::TempDir dir;
  auto s = synth_setup(4);
  Model m(config_for(s.vocab, 16, 2));
  TrainOptions t;
  t.steps = 3;
  t.batch_size = 2;
  train_model(m, s.examples, t);
  save_checkpoint(dir.file("m.ckpt"), m, s.vocab);
  const auto ck = load_checkpoint(dir.file("m.ckpt"));
  EXPECT_EQ(ck.model.config(), m.config());
  EXPECT_TRUE(std::equal(m.params().begin(), m.params().end(), ck.model.params().begin()));
  EXPECT_EQ(ck.vocab.entries(), s.vocab.entries());
  std::vector<int> ids = s.examples[0].prompt_ids;
  EXPECT_EQ(ck.model.forward(ids), m.forward(ids));
}

TEST(Checkpoint, RejectsDamagedFiles) {
  cft::testing::TempDir dir;
  auto s = synth_setup(2);
  Model m(config_for(s.vocab, 8, 1));
  save_checkpoint(dir.file("m.ckpt"), m, s.vocab);
  const std::string good = cft::testing::read_file(dir.file("m.ckpt"));
  cft::testing::write_file(dir.file("cut.ckpt"), good.substr(0, good.size() / 2));
  EXPECT_THROW(load_checkpoint(dir.file("cut.ckpt")), DataError);
  cft::testing::write_file(dir.file("junk.ckpt"), "hello\n");
  EXPECT_THROW(load_checkpoint(dir.file("junk.ckpt")), DataError);
  EXPECT_THROW(load_checkpoint(dir.file("missing.ckpt")), DataError);
}
