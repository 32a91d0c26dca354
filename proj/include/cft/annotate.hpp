#pragma once

// Counterfactual criticality annotation. Each position t of a verified
// trajectory is perturbed with its rank-j alternatives (j = 2..k), the rest
// of the response is regenerated greedily, and the continuation is verified.
// A policy turns the per-rank failures into a per-token weight.

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cft/core.hpp"
#include "cft/generator/backend.hpp"
#include "cft/generator/decode.hpp"
#include "cft/rng.hpp"
#include "cft/verifier.hpp"

namespace cft {

struct CriticalityPolicy {
  PolicyKind kind = PolicyKind::strict3;
  int k = 3;

  void validate() const {
    if (k < min_k_for(kind)) {
      throw UsageError(std::string("policy ") + to_string(kind) + " requires k >= " + std::to_string(min_k_for(kind)));
    }
  }
};

struct CriticalityMask {
  std::string sample_id;
  std::vector<double> weights;
  CriticalityPolicy policy;
  std::vector<int> failures_per_position;
  double fraction_positive = 0.0;
};

enum class RolloutOutcome : std::uint8_t { correct, incorrect, unevaluated };

// outcome[t][j - 2] for every position t and rank j = 2..k.
struct OutcomeMatrix {
  std::string sample_id;
  int k = 3;
  std::vector<std::vector<RolloutOutcome>> outcome;
  std::vector<std::string> log;

  bool operator==(const OutcomeMatrix& o) const { return sample_id == o.sample_id && k == o.k && outcome == o.outcome; }
};

inline CriticalityMask apply_policy(const OutcomeMatrix& m, const CriticalityPolicy& policy) {
  policy.validate();
  if (policy.k > m.k) throw UsageError("outcomes cover ranks up to " + std::to_string(m.k));
  CriticalityMask mask;
  mask.sample_id = m.sample_id;
  mask.policy = policy;
  const int last_rank = policy.kind == PolicyKind::strict2 ? 2 : policy.k;
  std::size_t positive = 0;
  for (const auto& row : m.outcome) {
    int failed = 0;
    bool missing = false;
    for (int j = 2; j <= last_rank; ++j) {
      const auto o = row[static_cast<std::size_t>(j - 2)];
      failed += o == RolloutOutcome::incorrect;
      missing = missing || o == RolloutOutcome::unevaluated;
    }
    const int considered = last_rank - 1;
    double w = 0.0;
    switch (policy.kind) {
      case PolicyKind::strict2:
      case PolicyKind::strict3:
        w = !missing && failed == considered ? 1.0 : 0.0;
        break;
      case PolicyKind::union3:
        w = failed >= 1 ? 1.0 : 0.0;
        break;
      case PolicyKind::graded3:
        w = failed;
        break;
    }
    mask.failures_per_position.push_back(failed);
    mask.weights.push_back(w);
    positive += w > 0.0;
  }
  mask.fraction_positive = mask.weights.empty() ? 0.0 : static_cast<double>(positive) / mask.weights.size();
  return mask;
}

inline std::string rollout_key(const std::string& sample_id, std::size_t t, int j) {
  return sample_id + "|" + std::to_string(t) + "|" + std::to_string(j);
}

inline int continuation_budget(const Trajectory& t, const RunConfig& config) {
  if (config.max_continuation_tokens > 0) return config.max_continuation_tokens;
  return std::max<int>(1, 2 * static_cast<int>(t.size()));
}

struct CounterfactualBatch {
  std::vector<DecodeRequest> requests;
  std::vector<std::size_t> positions;      // positions[i] is the t of requests[i]
  std::vector<std::size_t> non_evaluable;  // positions lacking a rank-j alternative
  std::vector<std::string> log;
};

// Requests whose forced prefix is (y_1..y_{t-1}, y_t^{(j)}), one per position.
inline CounterfactualBatch counterfactual_batch(const Trajectory& t, int j, const RunConfig& config = {}) {
  CounterfactualBatch b;
  const int budget = continuation_budget(t, config);
  for (std::size_t pos = 0; pos < t.size(); ++pos) {
    const auto alt = alternative_rank(t, pos, j);
    if (!alt) {
      b.non_evaluable.push_back(pos);
      b.log.push_back(t.sample_id + ": position " + std::to_string(pos) + " has no rank-" + std::to_string(j) +
                      " alternative");
      continue;
    }
    if (alt->text == t.token_texts[pos]) {
      b.log.push_back(t.sample_id + ": position " + std::to_string(pos) + " rank-" + std::to_string(j) +
                      " alternative renders as the chosen text (id " + std::to_string(alt->id) + " vs " +
                      std::to_string(t.token_ids[pos]) + ")");
    }
    DecodeRequest r;
    r.key = rollout_key(t.sample_id, pos, j);
    r.sample_id = t.sample_id;
    r.prompt = t.prompt;
    r.forced_ids = t.prefix_ids;
    r.forced_texts = t.prefix_texts;
    r.forced_ids.insert(r.forced_ids.end(), t.token_ids.begin(), t.token_ids.begin() + static_cast<std::ptrdiff_t>(pos));
    r.forced_texts.insert(r.forced_texts.end(), t.token_texts.begin(),
                          t.token_texts.begin() + static_cast<std::ptrdiff_t>(pos));
    r.forced_ids.push_back(alt->id);
    r.forced_texts.push_back(alt->text);
    r.max_new_tokens = budget;
    b.requests.push_back(std::move(r));
    b.positions.push_back(pos);
  }
  return b;
}

// Batched production path: all ranks of all positions go through one
// scheduler call.
inline OutcomeMatrix rollout_outcomes(const Sample& sample, const Trajectory& t, Backend& backend, int k,
                                      const RunConfig& config) {
  OutcomeMatrix m;
  m.sample_id = t.sample_id;
  m.k = k;
  m.outcome.assign(t.size(), std::vector<RolloutOutcome>(static_cast<std::size_t>(k - 1), RolloutOutcome::unevaluated));
  std::vector<DecodeRequest> all;
  std::vector<std::pair<std::size_t, int>> where;
  for (int j = 2; j <= k; ++j) {
    auto b = counterfactual_batch(t, j, config);
    m.log.insert(m.log.end(), b.log.begin(), b.log.end());
    for (std::size_t i = 0; i < b.requests.size(); ++i) {
      all.push_back(std::move(b.requests[i]));
      where.emplace_back(b.positions[i], j);
    }
  }
  const auto results = run_batch(backend, all, config.parallelism);
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& o = results.at(all[i].key);
    auto& cell = m.outcome[where[i].first][static_cast<std::size_t>(where[i].second - 2)];
    if (!o.ok()) {
      m.log.push_back(all[i].key + ": rollout failed: " + o.error);
      continue;
    }
    cell = verify(o.trajectory->response_text(), sample) ? RolloutOutcome::correct : RolloutOutcome::incorrect;
  }
  return m;
}

inline CriticalityMask annotate_trajectory(const Sample& sample, const Trajectory& t, Backend& backend,
                                           const CriticalityPolicy& policy, const RunConfig& config) {
  policy.validate();
  return apply_policy(rollout_outcomes(sample, t, backend, policy.k, config), policy);
}

// Straight-line reference: one rollout at a time through the backend's
// uncached decoding loop, with the policy rules written out per position.
inline CriticalityMask annotate_trajectory_reference(const Sample& sample, const Trajectory& t, Backend& backend,
                                                     const CriticalityPolicy& policy, const RunConfig& config,
                                                     std::vector<std::string>* log = nullptr) {
  policy.validate();
  CriticalityMask mask;
  mask.sample_id = t.sample_id;
  mask.policy = policy;
  const int budget = continuation_budget(t, config);
  const int last_rank = policy.kind == PolicyKind::strict2 ? 2 : policy.k;
  int positive = 0;
  for (std::size_t pos = 0; pos < t.size(); ++pos) {
    int failed = 0;
    int evaluated = 0;
    for (int j = 2; j <= last_rank; ++j) {
      std::optional<TopEntry> alt;
      int rank = 1;
      for (const auto& e : t.topk.at(pos)) {
        if (e.id == t.token_ids[pos]) continue;
        if (++rank == j) {
          alt = e;
          break;
        }
      }
      if (!alt) {
        if (log) log->push_back(t.sample_id + ": position " + std::to_string(pos) + " lacks rank " + std::to_string(j));
        continue;
      }
      DecodeRequest r;
      r.key = rollout_key(t.sample_id, pos, j);
      r.sample_id = t.sample_id;
      r.prompt = t.prompt;
      r.forced_ids = t.prefix_ids;
      r.forced_texts = t.prefix_texts;
      for (std::size_t i = 0; i < pos; ++i) {
        r.forced_ids.push_back(t.token_ids[i]);
        r.forced_texts.push_back(t.token_texts[i]);
      }
      r.forced_ids.push_back(alt->id);
      r.forced_texts.push_back(alt->text);
      r.max_new_tokens = budget;
      std::optional<Trajectory> cont;
      for (int attempt = 1; attempt <= 3 && !cont; ++attempt) {
        try {
          cont = backend.decode_uncached(r);
        } catch (const BackendError& e) {
          if (!e.transient || attempt == 3) {
            if (log) log->push_back(r.key + ": rollout failed: " + e.what());
            break;
          }
        } catch (const std::exception& e) {
          if (log) log->push_back(r.key + ": rollout failed: " + e.what());
          break;
        }
      }
      if (!cont) continue;
      ++evaluated;
      if (verify(cont->response_text(), sample) == 0) ++failed;
    }
    double w = 0.0;
    if (policy.kind == PolicyKind::strict2 || policy.kind == PolicyKind::strict3) {
      if (evaluated == last_rank - 1 && failed == evaluated) w = 1.0;
    } else if (policy.kind == PolicyKind::union3) {
      if (failed > 0) w = 1.0;
    } else {
      w = failed;
    }
    mask.weights.push_back(w);
    mask.failures_per_position.push_back(failed);
    if (w > 0.0) ++positive;
  }
  mask.fraction_positive = t.size() ? static_cast<double>(positive) / static_cast<double>(t.size()) : 0.0;
  return mask;
}

struct CorrectEntry {
  std::size_t sample_index = 0;
  Trajectory trajectory;
};

struct CorrectSet {
  std::vector<CorrectEntry> entries;
  std::vector<std::size_t> failed;  // samples whose greedy decode did not verify
  std::vector<std::string> log;
};

// Samples whose greedy trajectory verifies, in input order.
inline CorrectSet build_correct_set(const std::vector<Sample>& samples, Backend& backend, const RunConfig& config,
                                    bool sequential = false) {
  CorrectSet out;
  std::vector<DecodeRequest> requests;
  for (const auto& s : samples) {
    DecodeRequest r;
    r.key = s.id + "|greedy";
    r.sample_id = s.id;
    r.prompt = prompt_for(s);
    r.max_new_tokens = config.max_new_tokens;
    r.top_k = config.k;
    requests.push_back(std::move(r));
  }
  BatchResults results;
  if (sequential) {
    for (const auto& r : requests) {
      auto& o = results[r.key];
      o.attempts = 1;
      try {
        o.trajectory = backend.decode_uncached(r);
      } catch (const std::exception& e) {
        record_failure(o, e);
      }
    }
  } else {
    results = run_batch(backend, requests, config.parallelism);
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& o = results.at(requests[i].key);
    if (!o.ok()) {
      out.log.push_back(samples[i].id + ": greedy decode failed: " + o.error);
      out.failed.push_back(i);
      continue;
    }
    if (verify(o.trajectory->response_text(), samples[i]) == 1) {
      out.entries.push_back({i, std::move(*o.trajectory)});
    } else {
      out.log.push_back(samples[i].id + ": greedy answer incorrect");
      out.failed.push_back(i);
    }
  }
  return out;
}

// First verifying sampled trajectory within the attempt budget. Attempt i
// (1-based) uses the seed derived from (config.seed, sample.id, i).
inline std::optional<Trajectory> sample_until_correct(const Sample& sample, Backend& backend, const RunConfig& config,
                                                      std::vector<std::string>* log = nullptr) {
  for (int i = 1; i <= config.sampling_max_attempts; ++i) {
    DecodeRequest r;
    r.key = sample.id + "|sample|" + std::to_string(i);
    r.sample_id = sample.id;
    r.prompt = prompt_for(sample);
    r.max_new_tokens = config.max_new_tokens;
    r.sampling = SamplingMode{config.sampling_temperature, derive_seed(config.seed, sample.id, static_cast<std::uint64_t>(i))};
    // The sampled token may sit anywhere in the ranking, so keep one extra.
    r.top_k = config.k + 1;
    try {
      Trajectory t = decode_one(backend, r);
      if (verify(t.response_text(), sample) == 1) {
        t.attempt = i;
        return t;
      }
    } catch (const std::exception& e) {
      if (log) log->push_back(r.key + ": " + e.what());
    }
  }
  if (log) log->push_back(sample.id + ": no correct sample in " + std::to_string(config.sampling_max_attempts) + " attempts");
  return std::nullopt;
}

struct AnnotationStats {
  std::size_t num_samples = 0;
  std::size_t num_greedy_correct = 0;
  std::size_t num_sampled_correct = 0;
  std::size_t num_all_zero = 0;
  double mean_tokens = 0.0;
  double critical_ratio = 0.0;
  std::optional<double> wall_clock_sequential_s;
  std::optional<double> wall_clock_batched_s;
};

inline json stats_to_json(const AnnotationStats& s) {
  json j;
  j["num_samples"] = s.num_samples;
  j["num_greedy_correct"] = s.num_greedy_correct;
  j["num_sampled_correct"] = s.num_sampled_correct;
  j["num_all_zero_excluded"] = s.num_all_zero;
  j["mean_tokens"] = s.mean_tokens;
  j["critical_ratio"] = s.critical_ratio;
  j["wall_clock_batched_s"] = s.wall_clock_batched_s ? json(*s.wall_clock_batched_s) : json(nullptr);
  if (s.wall_clock_sequential_s) j["wall_clock_sequential_s"] = *s.wall_clock_sequential_s;
  return j;
}

struct AnnotationResult {
  std::vector<MaskedExample> records;
  std::vector<CriticalityMask> masks;  // one per annotated trajectory, including all-zero ones
  std::vector<Trajectory> trajectories;
  AnnotationStats stats;
  std::vector<std::string> log;
};

struct AnnotateOptions {
  bool sequential = false;  // reference annotator, one uncached rollout at a time
};

inline AnnotationResult annotate_dataset(const std::vector<Sample>& samples, Backend& backend,
                                         const CriticalityPolicy& policy, const RunConfig& config,
                                         const AnnotateOptions& opt = {}) {
  config.validate();
  policy.validate();
  const auto desc = backend.descriptor();
  validate_for_k(desc, policy.k);
  RunConfig cfg = config;
  cfg.k = policy.k;
  const auto start = std::chrono::steady_clock::now();

  AnnotationResult res;
  res.stats.num_samples = samples.size();
  auto correct = build_correct_set(samples, backend, cfg, opt.sequential);
  res.log = std::move(correct.log);
  res.stats.num_greedy_correct = correct.entries.size();
  std::vector<CorrectEntry> entries = std::move(correct.entries);
  if (cfg.sample_fallback) {
    for (std::size_t i : correct.failed) {
      if (auto t = sample_until_correct(samples[i], backend, cfg, &res.log)) {
        entries.push_back({i, std::move(*t)});
        ++res.stats.num_sampled_correct;
      }
    }
    std::stable_sort(entries.begin(), entries.end(),
                     [](const CorrectEntry& a, const CorrectEntry& b) { return a.sample_index < b.sample_index; });
  }

  std::size_t tokens = 0;
  std::size_t positive = 0;
  for (auto& e : entries) {
    const Sample& s = samples[e.sample_index];
    CriticalityMask mask;
    if (opt.sequential) {
      mask = annotate_trajectory_reference(s, e.trajectory, backend, policy, cfg, &res.log);
    } else {
      auto m = rollout_outcomes(s, e.trajectory, backend, policy.k, cfg);
      res.log.insert(res.log.end(), m.log.begin(), m.log.end());
      mask = apply_policy(m, policy);
    }
    tokens += mask.weights.size();
    for (double w : mask.weights) positive += w > 0.0;
    const bool any = std::any_of(mask.weights.begin(), mask.weights.end(), [](double w) { return w > 0.0; });
    if (any) {
      MaskedExample x;
      x.sample_id = s.id;
      x.question = s.question;
      x.token_texts = e.trajectory.token_texts;
      x.token_ids = e.trajectory.token_ids;
      x.weights = mask.weights;
      x.policy = to_string(policy.kind);
      x.backend_tag = desc.tag;
      res.records.push_back(std::move(x));
    } else {
      ++res.stats.num_all_zero;
      res.log.push_back(s.id + ": excluded, no position passed the " + std::string(to_string(policy.kind)) + " policy");
    }
    res.masks.push_back(std::move(mask));
    res.trajectories.push_back(std::move(e.trajectory));
  }
  res.stats.mean_tokens = entries.empty() ? 0.0 : static_cast<double>(tokens) / static_cast<double>(entries.size());
  res.stats.critical_ratio = tokens ? static_cast<double>(positive) / static_cast<double>(tokens) : 0.0;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (opt.sequential) res.stats.wall_clock_sequential_s = secs;
  else res.stats.wall_clock_batched_s = secs;
  return res;
}

}  // namespace cft
