#pragma once

// Scheduler and single-request helpers shared by every backend.

#include <chrono>
#include <map>
#include <span>
#include <thread>

#include "cft/generator/backend.hpp"

namespace cft {

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{50};
};

using BatchResults = std::map<std::string, DecodeOutcome>;

// Runs `requests` and keys the outcomes by request key. Transient failures
// are retried with exponential backoff; other failures are reported once.
inline BatchResults run_batch(Backend& backend, std::span<const DecodeRequest> requests, int parallelism,
                              const RetryPolicy& retry = {}) {
  if (parallelism < 1) throw UsageError("parallelism must be >= 1");
  BatchResults results;
  for (const auto& r : requests) {
    if (results.count(r.key)) throw UsageError("duplicate request key " + r.key);
    results[r.key];
  }
  std::vector<DecodeOutcome> outcomes = backend.decode_batch(requests, parallelism);
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (!outcomes[i].ok() && outcomes[i].transient) pending.push_back(i);
  }
  auto backoff = retry.initial_backoff;
  for (int attempt = 2; attempt <= retry.max_attempts && !pending.empty(); ++attempt) {
    std::this_thread::sleep_for(backoff);
    backoff *= 2;
    std::vector<DecodeRequest> again;
    for (std::size_t i : pending) again.push_back(requests[i]);
    auto redo = backend.decode_batch(again, parallelism);
    std::vector<std::size_t> still;
    for (std::size_t n = 0; n < pending.size(); ++n) {
      const std::size_t i = pending[n];
      redo[n].attempts = attempt;
      outcomes[i] = std::move(redo[n]);
      if (!outcomes[i].ok() && outcomes[i].transient) still.push_back(i);
    }
    pending = std::move(still);
  }
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (!outcomes[i].ok() && outcomes[i].error.empty()) outcomes[i].error = "no result";
    results[requests[i].key] = std::move(outcomes[i]);
  }
  return results;
}

// Decodes one request with retries; failures surface as BackendError or
// DataError naming the request key.
inline Trajectory decode_one(Backend& backend, const DecodeRequest& request, const RetryPolicy& retry = {}) {
  auto res = run_batch(backend, std::span<const DecodeRequest>(&request, 1), 1, retry);
  auto& o = res.at(request.key);
  if (o.ok()) return std::move(*o.trajectory);
  const std::string msg = "request " + request.key + ": " + o.error;
  switch (o.kind) {
    case ErrorKind::backend:
      throw BackendError(msg, o.transient);
    case ErrorKind::usage:
      throw UsageError(msg);
    default:
      throw DataError(msg);
  }
}

inline Trajectory greedy_decode(Backend& backend, const std::string& prompt, int max_new_tokens, int top_k,
                                const std::string& sample_id = {}) {
  if (max_new_tokens < 1) throw UsageError("max_new_tokens must be >= 1");
  DecodeRequest r;
  r.key = sample_id.empty() ? "greedy" : sample_id + "|greedy";
  r.sample_id = sample_id;
  r.prompt = prompt;
  r.max_new_tokens = max_new_tokens;
  r.top_k = top_k;
  return decode_one(backend, r);
}

inline Trajectory sample_decode(Backend& backend, const std::string& prompt, double temperature, std::uint64_t seed,
                                int max_new_tokens, int top_k = 0, const std::string& sample_id = {}) {
  if (!(temperature > 0.0)) throw UsageError("sample_decode needs temperature > 0; use greedy_decode");
  if (max_new_tokens < 1) throw UsageError("max_new_tokens must be >= 1");
  DecodeRequest r;
  r.key = (sample_id.empty() ? std::string("sample") : sample_id) + "|s" + std::to_string(seed);
  r.sample_id = sample_id;
  r.prompt = prompt;
  r.max_new_tokens = max_new_tokens;
  r.sampling = SamplingMode{temperature, seed};
  r.top_k = top_k;
  return decode_one(backend, r);
}

inline Trajectory force_score(Backend& backend, const std::string& prompt, const std::string& response, int top_k) {
  if (!backend.descriptor().supports_force_score) {
    throw CapabilityError("backend " + backend.descriptor().tag + " cannot force-score text");
  }
  return backend.force_score(prompt, response, top_k);
}

// The rank-`j` alternative at `position` (j >= 2), skipping the chosen
// token; empty when the stored list is too short.
inline std::optional<TopEntry> alternative_rank(const Trajectory& t, std::size_t position, int j) {
  if (position >= t.size()) throw UsageError("position " + std::to_string(position) + " out of range");
  if (j < 2) throw UsageError("alternative rank must be >= 2");
  if (t.topk.size() != t.size()) throw DataError("trajectory " + t.sample_id + " stores no top-k lists");
  int rank = 1;
  for (const auto& e : t.topk[position]) {
    if (e.id == t.token_ids[position]) continue;
    if (++rank == j) return e;
  }
  return std::nullopt;
}

// Ranks 2..k at `position`, excluding the chosen token.
inline std::vector<TopEntry> topk_alternatives(const Trajectory& t, std::size_t position, int k) {
  if (k < 2) throw UsageError("k must be >= 2");
  std::vector<TopEntry> out;
  for (int j = 2; j <= k; ++j) {
    auto e = alternative_rank(t, position, j);
    if (!e) {
      throw DataError("trajectory " + t.sample_id + " stores too few alternatives at position " +
                      std::to_string(position) + " for k = " + std::to_string(k));
    }
    out.push_back(std::move(*e));
  }
  return out;
}

}  // namespace cft
