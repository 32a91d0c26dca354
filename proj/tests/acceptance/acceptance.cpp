// One PASS/FAIL line per acceptance criterion. Arguments, when given,
// restrict the run to the named criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "cft/annotate.hpp"
#include "cft/evalx.hpp"
#include "cft/select.hpp"
#include "cft/verifier.hpp"
#include "support/files.hpp"
#include "support/scripted_backend.hpp"
#include "support/toy_fixture.hpp"

using namespace cft;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// Central difference of -log p_gold along logit i with step h. The
// log-sum-exp difference is log(S+ / S-) = log1p(2 sinh(h) e^h p_i-), where
// p_i- is the softmax probability at z - h e_i; evaluating it this way keeps
// gradients far below the loss scale out of the cancellation noise.
double central_difference(std::vector<double> z, int gold, std::size_t i, double h) {
  z[i] -= h;
  const double p_minus = softmax_row(z)[i];
  const double lse_diff = std::log1p(2.0 * std::sinh(h) * std::exp(h) * p_minus);
  return (lse_diff - (static_cast<int>(i) == gold ? 2.0 * h : 0.0)) / (2.0 * h);
}

std::vector<TrainExample> examples_for(const std::vector<Sample>& samples, const Vocab& vocab) {
  return cft::testing::corpus_examples(samples, vocab);
}

std::vector<TrainExample> examples_for(const std::vector<MaskedExample>& records, const Vocab& vocab) {
  std::vector<TrainExample> out;
  for (const auto& r : records) out.push_back({vocab.encode(r.question + "\n"), r.token_ids, r.weights});
  return out;
}

// ---------------------------------------------------------------------------

Verdict g1() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int row = 0; row < 200; ++row) {
    const std::size_t v = 2 + rng.below(60);
    std::vector<double> z(v);
    const double spread = 0.5 + 4.0 * rng.uniform();
    for (double& x : z) x = spread * rng.normal();
    const int gold = static_cast<int>(rng.below(v));
    const auto g = token_ce_grad(softmax_row(z), gold);
    const double h = 1e-5;
    for (std::size_t i = 0; i < v; ++i) {
      const double numeric = central_difference(z, gold, i, h);
      worst = std::max(worst, rel_err(g[i], numeric));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 5.0, "max relative error " + fmt("%.2e", worst) + ", " + fmt("%.2f s", secs)};
}

Verdict g2() {
  const auto t0 = Clock::now();
  const auto samples = synth_corpus(0, 2);
  const Vocab vocab = cft::testing::synth_vocab();
  ModelConfig c;
  c.vocab_size = vocab.size();
  c.embed_dim = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.context_len = 48;
  const Model m(c);
  auto ex = examples_for(samples, vocab);
  for (auto& e : ex) {
    for (std::size_t i = 0; i < e.weights.size(); ++i) e.weights[i] = i % 2 ? 0.0 : 1.0;
  }
  const auto r = grad_check(m, make_train_batch(ex), Objective::cft);
  const double secs = seconds_since(t0);
  const bool ok = m.num_params() <= 20000 && r.num_checked == m.num_params() && r.max_relative_error <= 1e-5 &&
                  secs < 60.0;
  return {ok, std::to_string(m.num_params()) + " parameters, max relative error " +
                  fmt("%.2e", r.max_relative_error) + " at " + r.worst_parameter_name + ", " + fmt("%.1f s", secs)};
}

Verdict g3() {
  const auto samples = synth_corpus(3, 4);
  const Vocab vocab = cft::testing::synth_vocab();
  ModelConfig c;
  c.vocab_size = vocab.size();
  c.embed_dim = 16;
  c.n_layers = 2;
  c.seed = 5;
  const Model m(c);
  Rng rng(17);
  auto ex = examples_for(samples, vocab);
  for (auto& e : ex) {
    for (auto& w : e.weights) w = rng.uniform() < 0.4 ? 0.0 : 1.0 + rng.uniform();
    e.weights.front() = 1.0;
  }
  const auto batch = make_train_batch(ex);
  const auto base = compute_objective(m, batch, Objective::cft);

  // logit-gradient rows at zero-weight positions
  std::size_t zero_rows = 0, nonzero = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const std::vector<int>& seq = batch.token_id_sequences[s];
    const std::size_t len = cft::detail::active_length(batch, s);
    const Matrix logits = m.forward(std::vector<int>(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(len)));
    const auto lg = cft_loss_grad(logits, std::span(batch.gold_indices[s]).first(len),
                                  std::span(batch.weight_matrix[s]).first(len));
    for (std::size_t t = 0; t < len; ++t) {
      if (batch.weight_matrix[s][t] != 0.0) continue;
      ++zero_rows;
      for (double g : lg.grad.row(t)) nonzero += g != 0.0;
    }
  }

  // parameter gradient under arbitrary gold changes at those positions
  std::size_t differing = 0;
  for (int trial = 0; trial < 5; ++trial) {
    TrainBatch changed = batch;
    for (std::size_t s = 0; s < changed.size(); ++s) {
      for (std::size_t t = 0; t < changed.gold_indices[s].size(); ++t) {
        if (changed.weight_matrix[s][t] == 0.0) {
          changed.gold_indices[s][t] = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab.size())));
        }
      }
    }
    const auto r = compute_objective(m, changed, Objective::cft);
    differing += r.loss != base.loss;
    for (std::size_t i = 0; i < r.grads.size(); ++i) differing += r.grads[i] != base.grads[i];
  }
  return {zero_rows > 0 && nonzero == 0 && differing == 0,
          std::to_string(zero_rows) + " zero-weight rows, " + std::to_string(nonzero) + " nonzero entries, " +
              std::to_string(differing) + " gradient differences over 5 gold rewrites"};
}

Verdict g4() {
  Rng rng(23);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(30), v = 2 + rng.below(40);
    Matrix z(n, v);
    for (double& x : z.data) x = 3.0 * rng.normal();
    std::vector<int> gold(n);
    for (int& g : gold) g = static_cast<int>(rng.below(v));
    const std::vector<double> ones(n, 1.0);
    const std::vector<std::uint8_t> pad(n, 0);
    const auto a = cft_loss_grad(z, gold, ones);
    const auto b = sft_loss_grad(z, gold, pad);
    worst = std::max(worst, rel_err(a.loss, b.loss));
    for (std::size_t i = 0; i < a.grad.data.size(); ++i) worst = std::max(worst, rel_err(a.grad.data[i], b.grad.data[i]));
  }
  // and through the whole model
  const Vocab vocab = cft::testing::synth_vocab();
  ModelConfig c;
  c.vocab_size = vocab.size();
  c.embed_dim = 16;
  const Model m(c);
  const auto batch = make_train_batch(examples_for(synth_corpus(4, 5), vocab));
  const auto a = compute_objective(m, batch, Objective::cft);
  const auto b = compute_objective(m, batch, Objective::sft);
  worst = std::max(worst, rel_err(a.loss, b.loss));
  for (std::size_t i = 0; i < a.grads.size(); ++i) worst = std::max(worst, rel_err(a.grads[i], b.grads[i]));
  return {worst <= 1e-12, "max relative difference " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------------------

constexpr PolicyKind all_policies[] = {PolicyKind::strict2, PolicyKind::strict3, PolicyKind::union3,
                                       PolicyKind::graded3};

struct ScriptedSet {
  cft::testing::ScriptedBackend backend;
  std::vector<Sample> samples = cft::testing::scripted_samples(50);
  std::vector<Trajectory> trajectories;
  ScriptedSet() {
    for (const auto& s : samples) trajectories.push_back(greedy_decode(backend, prompt_for(s), 100, 3, s.id));
  }
};

Verdict a1() {
  ScriptedSet f;
  std::size_t compared = 0, mismatched = 0, positives = 0;
  for (int p : {1, 4}) {
    RunConfig cfg;
    cfg.parallelism = p;
    for (std::size_t i = 0; i < f.samples.size(); ++i) {
      for (auto kind : all_policies) {
        const CriticalityPolicy pol{kind, 3};
        const auto a = annotate_trajectory(f.samples[i], f.trajectories[i], f.backend, pol, cfg);
        const auto b = annotate_trajectory_reference(f.samples[i], f.trajectories[i], f.backend, pol, cfg);
        ++compared;
        mismatched += a.weights != b.weights;
        for (double w : a.weights) positives += w > 0.0;
      }
    }
  }
  return {mismatched == 0 && positives > 0, std::to_string(compared) + " masks compared, " +
                                                std::to_string(mismatched) + " differ, " +
                                                std::to_string(positives) + " positive weights"};
}

Verdict a2() {
  ScriptedSet f;
  RunConfig cfg;
  std::size_t violations = 0, positions = 0;
  for (std::size_t i = 0; i < f.samples.size(); ++i) {
    const auto m = rollout_outcomes(f.samples[i], f.trajectories[i], f.backend, 3, cfg);
    const auto s2 = apply_policy(m, {PolicyKind::strict2, 3}).weights;
    const auto s3 = apply_policy(m, {PolicyKind::strict3, 3}).weights;
    const auto u3 = apply_policy(m, {PolicyKind::union3, 3}).weights;
    const auto g3 = apply_policy(m, {PolicyKind::graded3, 3}).weights;
    for (std::size_t t = 0; t < s3.size(); ++t) {
      ++positions;
      violations += s3[t] > s2[t];
      violations += s2[t] > u3[t];
      violations += (g3[t] == 2.0) != (s3[t] == 1.0);
      violations += (g3[t] >= 1.0) != (u3[t] == 1.0);
    }
  }
  return {violations == 0 && positions > 0,
          std::to_string(positions) + " positions, " + std::to_string(violations) + " lattice violations"};
}

std::string dataset_bytes(const AnnotationResult& r) {
  cft::testing::TempDir dir;
  write_masked_dataset(r.records, dir.file("d.jsonl"));
  return cft::testing::read_file(dir.file("d.jsonl"));
}

Verdict a3() {
  const auto t0 = Clock::now();
  constexpr int length = 64;
  ToyBackend b(cft::testing::random_toy(7, 16, 1, 128));
  // An untrained model rarely reaches the synthetic gold answers, so each
  // question takes the final number of its own greedy response as gold.
  std::vector<Sample> samples;
  for (const auto& s : synth_corpus(500, 1000)) {
    const auto t = greedy_decode(b, prompt_for(s), length, 3);
    if (t.size() < length) continue;
    const auto a = extract_final_answer(t.response_text(), TaskKind::numeric);
    if (!a) continue;
    Sample x = s;
    x.gold_answer = a->raw_span;
    samples.push_back(std::move(x));
    if (samples.size() == 100) break;
  }
  if (samples.size() < 100) return {false, "only " + std::to_string(samples.size()) + " usable questions"};

  RunConfig cfg;
  cfg.max_new_tokens = length;
  cfg.max_continuation_tokens = 16;
  const CriticalityPolicy pol{PolicyKind::strict3, 3};
  std::vector<std::string> bytes;
  double batched_s = 0.0;
  for (int p : {1, 4, 8}) {
    cfg.parallelism = p;
    const auto start = Clock::now();
    const auto r = annotate_dataset(samples, b, pol, cfg);
    if (p == 1) batched_s = seconds_since(start);
    if (r.records.size() < 50) return {false, "only " + std::to_string(r.records.size()) + " records"};
    bytes.push_back(dataset_bytes(r));
  }
  cfg.parallelism = 1;
  const auto start = Clock::now();
  const auto ref = annotate_dataset(samples, b, pol, cfg, {true});
  const double sequential_s = seconds_since(start);
  bytes.push_back(dataset_bytes(ref));

  bool identical = true;
  for (const auto& x : bytes) identical = identical && x == bytes[0];
  const double ratio = batched_s / sequential_s;
  const double total = seconds_since(t0);
  return {identical && ratio <= 0.25 && total < 600.0,
          std::string(identical ? "byte-identical" : "DIFFERENT") + " datasets at p=1/4/8/sequential, batched " +
              fmt("%.2f s", batched_s) + " vs sequential " + fmt("%.2f s", sequential_s) + " (ratio " +
              fmt("%.3f", ratio) + "), " + fmt("%.0f s total", total)};
}

// ---------------------------------------------------------------------------

Verdict v1() {
  std::ifstream in(cft::testing::env_or("CFT_TEST_DATA", CFT_TEST_DATA_DIR) + "/verifier_fixtures.jsonl");
  std::size_t cases = 0, passed = 0;
  std::set<std::string> tags;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec = json::parse(line);
    ++cases;
    tags.insert(rec["case"].get<std::string>().substr(0, rec["case"].get<std::string>().find('_')));
    rec["id"] = "fx";
    rec["question"] = "q";
    const Sample s = sample_from_json(rec, 1);
    passed += verify(rec["response"].get<std::string>(), s) == rec["verify"].get<int>();
  }

  std::size_t props = 0, prop_fail = 0;
  auto check = [&](bool ok) {
    ++props;
    prop_fail += !ok;
  };
  Rng rng(31);
  for (int i = 0; i < 300; ++i) {
    const long long whole = static_cast<long long>(rng.below(2000000)) - 1000000;
    const long long den = 1 + static_cast<long long>(rng.below(40));
    const std::string frac = std::to_string(whole) + "/" + std::to_string(den);
    const std::string dec = std::to_string(whole) + "." + std::to_string(rng.below(1000));
    for (const auto& x : {frac, dec, std::to_string(whole)}) check(numeric_equivalent(x, x));
    const std::string other = std::to_string(whole + 1);
    check(numeric_equivalent(frac, dec) == numeric_equivalent(dec, frac));
    check(numeric_equivalent(frac, other) == numeric_equivalent(other, frac));
    check(numeric_equivalent(std::to_string(whole * den) + "/" + std::to_string(den), std::to_string(whole)));
    check(!numeric_equivalent(std::to_string(whole), other));
  }
  for (const auto& [a, b] : std::vector<std::pair<std::string, std::string>>{
           {"1,000", "1000"}, {"$5", "5.000"}, {"0.5", "1/2"}, {"2/4", "1/2"}, {"-0", "0"}, {"12,345.50", "12345.5"},
           {"0.3333333", "1/3"}, {"+7", "7"}, {"007", "7"}}) {
    check(numeric_equivalent(a, b));
    check(numeric_equivalent(b, a));
  }
  check(!numeric_equivalent("3.14", "22/7"));
  check(!numeric_equivalent("0.5", "1/3"));
  return {cases >= 20 && passed == cases && prop_fail == 0,
          std::to_string(passed) + "/" + std::to_string(cases) + " fixture cases, " +
              std::to_string(props - prop_fail) + "/" + std::to_string(props) + " property checks"};
}

Verdict p1() {
  Rng rng(2024);
  std::vector<CorrectnessRow> rows;
  for (int q = 0; q < 10; ++q) {
    CorrectnessRow row{"q" + std::to_string(q), {}};
    const double p = 0.04 + 0.09 * q;
    for (int i = 0; i < 20; ++i) row.bits.push_back(rng.uniform() < p ? 1 : 0);
    rows.push_back(row);
  }
  const auto r = pass_at_n(rows);
  std::size_t mismatches = 0, drops = 0;
  double prev = 0.0;
  for (int n = 1; n <= 20; ++n) {
    int solved = 0;
    for (const auto& row : rows) {
      solved += std::any_of(row.bits.begin(), row.bits.begin() + n, [](int b) { return b == 1; });
    }
    mismatches += r.pass_at.at(n) != solved / 10.0;
    drops += r.pass_at.at(n) < prev;
    prev = r.pass_at.at(n);
  }
  return {mismatches == 0 && drops == 0 && r.pass_at.size() == 20,
          "Pass@1 " + fmt("%.2f", r.pass_at.at(1)) + ", Pass@20 " + fmt("%.2f", r.pass_at.at(20)) + ", " +
              std::to_string(mismatches) + " mismatches, " + std::to_string(drops) + " decreases"};
}

int positives(const std::vector<double>& w) {
  return static_cast<int>(std::count_if(w.begin(), w.end(), [](double x) { return x > 0.0; }));
}

Verdict b1() {
  std::size_t checked = 0;
  int worst = 0;
  ScriptedSet f;
  RunConfig cfg;
  for (std::size_t i = 0; i < f.samples.size(); ++i) {
    const auto mask = annotate_trajectory(f.samples[i], f.trajectories[i], f.backend, {PolicyKind::strict3, 3}, cfg);
    const auto baseline = top_fraction_mask(entropy_scores(f.trajectories[i], f.backend), mask.fraction_positive);
    worst = std::max(worst, std::abs(positives(baseline) - positives(mask.weights)));
    ++checked;
  }
  ToyBackend toy(cft::testing::base_model());
  cfg.parallelism = 4;
  const auto r = annotate_dataset(synth_corpus(61, 40), toy, {PolicyKind::strict3, 3}, cfg);
  for (std::size_t i = 0; i < r.masks.size(); ++i) {
    const auto baseline = top_fraction_mask(entropy_scores(r.trajectories[i], toy), r.masks[i].fraction_positive);
    worst = std::max(worst, std::abs(positives(baseline) - positives(r.masks[i].weights)));
    ++checked;
  }
  return {worst <= 1 && checked > 50,
          std::to_string(checked) + " trajectories, max count difference " + std::to_string(worst)};
}

Verdict t1() {
  ToyBackend a(cft::testing::random_toy(1));
  ToyBackend b(cft::testing::random_toy(2));
  std::size_t positions = 0, asym = 0, nonzero_self = 0;
  for (const auto& s : synth_corpus(10, 10)) {
    const auto ab = transfer_scores(prompt_for(s), *s.reference_solution, a, b);
    const auto ba = transfer_scores(prompt_for(s), *s.reference_solution, b, a);
    const auto aa = transfer_scores(prompt_for(s), *s.reference_solution, a, a);
    for (std::size_t i = 0; i < ab.scores.size(); ++i) {
      ++positions;
      asym += ab.scores[i] != -ba.scores[i];
      nonzero_self += aa.scores[i] != 0.0;
    }
  }
  ScoreVector twenty;
  Rng rng(3);
  for (int i = 0; i < 20; ++i) twenty.scores.push_back(rng.uniform() - 0.5);
  const int selected = positives(top_fraction_mask(twenty, 0.15));
  return {positions > 0 && asym == 0 && nonzero_self == 0 && selected == 3,
          std::to_string(positions) + " positions, " + std::to_string(asym) + " antisymmetry breaks, " +
              std::to_string(nonzero_self) + " nonzero self-scores, 15% of 20 selects " + std::to_string(selected)};
}

// ---------------------------------------------------------------------------

struct HeldOut {
  std::vector<Sample> samples;
  std::vector<Trajectory> trajectories;  // base greedy responses that verify
  std::vector<std::vector<double>> masks;
};

double noncritical_entropy(const Model& model, const Vocab& vocab, const HeldOut& h, std::size_t& count) {
  ToyBackend b(std::make_shared<const Model>(model), vocab);
  double sum = 0.0;
  count = 0;
  for (std::size_t i = 0; i < h.trajectories.size(); ++i) {
    const auto& t = h.trajectories[i];
    const auto dists = b.full_distributions(t.prompt, t.token_ids);
    for (std::size_t p = 0; p < t.size(); ++p) {
      if (h.masks[i][p] != 0.0) continue;
      sum += entropy_of((*dists)[p]);
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

Verdict e2e() {
  const auto t0 = Clock::now();
  const ToyCheckpoint base = cft::testing::base_model();
  ToyBackend annotator(std::make_shared<const Model>(base.model), base.vocab);
  RunConfig cfg;
  cfg.parallelism = 4;
  const CriticalityPolicy pol{PolicyKind::strict3, 3};

  const auto train = annotate_dataset(synth_corpus(4242, 300), annotator, pol, cfg);
  const auto held = annotate_dataset(synth_corpus(9191, 120), annotator, pol, cfg);
  HeldOut h;
  h.samples = synth_corpus(9191, 120);
  h.trajectories = held.trajectories;
  for (const auto& m : held.masks) h.masks.push_back(m.weights);

  const auto cft_examples = examples_for(train.records, base.vocab);
  auto sft_examples = cft_examples;
  for (auto& e : sft_examples) std::fill(e.weights.begin(), e.weights.end(), 1.0);

  TrainOptions t;
  t.steps = 200;
  t.batch_size = 16;
  t.adam.learning_rate = 1e-3;
  t.adam.clip_norm = 1.0;
  t.seed = 11;
  Model sft = base.model, cft_model = base.model;
  t.objective = Objective::sft;
  train_model(sft, sft_examples, t);
  t.objective = Objective::cft;
  train_model(cft_model, cft_examples, t);

  std::size_t n_sft = 0, n_cft = 0;
  const double h_base = noncritical_entropy(base.model, base.vocab, h, n_sft);
  const double h_sft = noncritical_entropy(sft, base.vocab, h, n_sft);
  const double h_cft = noncritical_entropy(cft_model, base.vocab, h, n_cft);

  PassOptions po;
  po.parallelism = 4;
  po.temperature = 1.0;
  ToyBackend sft_b(std::make_shared<const Model>(sft), base.vocab);
  ToyBackend cft_b(std::make_shared<const Model>(cft_model), base.vocab);
  auto accuracy = [&](Backend& b) {
    std::vector<DecodeRequest> reqs;
    for (const auto& s : h.samples) {
      DecodeRequest r;
      r.key = r.sample_id = s.id;
      r.prompt = prompt_for(s);
      r.max_new_tokens = cfg.max_new_tokens;
      reqs.push_back(std::move(r));
    }
    const auto res = run_batch(b, reqs, 4);
    int ok = 0;
    for (const auto& s : h.samples) {
      const auto& r = res.at(s.id);
      ok += r.ok() && verify(r.trajectory->response_text(), s) == 1;
    }
    return 100.0 * ok / static_cast<double>(h.samples.size());
  };
  const double acc_sft = accuracy(sft_b), acc_cft = accuracy(cft_b);
  const double pass_sft = pass_at_n(collect_pass_data(h.samples, sft_b, 10, 77, po)).pass_at.at(10);
  const double pass_cft = pass_at_n(collect_pass_data(h.samples, cft_b, 10, 77, po)).pass_at.at(10);
  const double secs = seconds_since(t0);

  const bool ok = n_cft >= 200 && h_cft > h_sft && acc_cft >= acc_sft - 2.0 && pass_cft >= pass_sft && secs < 300.0;
  return {ok, std::to_string(train.records.size()) + " training records; non-critical entropy base " +
                  fmt("%.4f", h_base) + " / SFT " + fmt("%.4f", h_sft) + " / CFT " + fmt("%.4f", h_cft) + " over " +
                  std::to_string(n_cft) + " positions; greedy accuracy SFT " + fmt("%.1f", acc_sft) + " / CFT " +
                  fmt("%.1f", acc_cft) + "; Pass@10 SFT " + fmt("%.3f", pass_sft) + " / CFT " +
                  fmt("%.3f", pass_cft) + "; " + fmt("%.0f s", secs)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"G1", g1}, {"G2", g2}, {"G3", g3}, {"G4", g4}, {"A1", a1}, {"A2", a2}, {"A3", a3},
      {"V1", v1}, {"P1", p1}, {"B1", b1}, {"T1", t1}, {"E2E", e2e}};
  const std::set<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %s %s\n", v.pass ? "PASS" : "FAIL", id.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
