#pragma once

// Backend-neutral decoding types: trajectories with per-position ranked
// alternatives, decode requests, and the abstract backend interface.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "cft/core.hpp"

namespace cft {

enum class DecodeMode { greedy, sampled, scored };

inline const char* to_string(DecodeMode m) {
  switch (m) {
    case DecodeMode::greedy:
      return "greedy";
    case DecodeMode::sampled:
      return "sampled";
    case DecodeMode::scored:
      return "scored";
  }
  return "?";
}

struct TopEntry {
  std::string text;
  int id = -1;
  double logprob = 0.0;
  bool operator==(const TopEntry&) const = default;
};

// Ranking used everywhere: higher logprob first, lower token id on ties.
inline bool ranks_before(const TopEntry& a, const TopEntry& b) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  return a.id < b.id;
}

// A decoded response. `prefix_*` hold a forced prefix (counterfactual
// rollouts); the per-position arrays cover only the decoded tokens.
struct Trajectory {
  std::string sample_id;
  std::string prompt;
  std::vector<int> prefix_ids;
  std::vector<std::string> prefix_texts;
  std::vector<std::string> token_texts;
  std::vector<int> token_ids;
  std::vector<double> chosen_logprob;
  std::vector<std::vector<TopEntry>> topk;
  DecodeMode decode_mode = DecodeMode::greedy;
  bool finished = false;
  int attempt = 0;  // 1-based attempt index for sampled rescues; 0 otherwise

  std::size_t size() const { return token_ids.size(); }

  std::string response_text() const {
    std::string out;
    for (const auto& t : prefix_texts) out += t;
    for (const auto& t : token_texts) out += t;
    return out;
  }

  bool operator==(const Trajectory&) const = default;
};

// Throws DataError when per-position arrays disagree or rankings are broken.
inline void validate(const Trajectory& t) {
  const std::size_t n = t.token_ids.size();
  if (t.token_texts.size() != n || t.chosen_logprob.size() != n || (!t.topk.empty() && t.topk.size() != n)) {
    throw DataError("trajectory " + t.sample_id + ": per-position arrays differ in length");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(t.chosen_logprob[i] <= 0.0)) throw DataError("trajectory " + t.sample_id + ": positive log-probability");
    if (t.topk.empty()) continue;
    const auto& row = t.topk[i];
    for (std::size_t r = 1; r < row.size(); ++r) {
      if (!ranks_before(row[r - 1], row[r])) {
        throw DataError("trajectory " + t.sample_id + ": top-k list not strictly ranked at position " +
                        std::to_string(i));
      }
    }
    if (t.decode_mode == DecodeMode::greedy && (row.empty() || row.front().id != t.token_ids[i])) {
      throw DataError("trajectory " + t.sample_id + ": greedy token is not rank 1 at position " + std::to_string(i));
    }
  }
}

struct BackendDescriptor {
  std::string tag;
  int max_topk = 2;
  bool supports_force_score = false;
  bool supports_attention = false;
  int max_context = 0;
};

inline void validate_for_k(const BackendDescriptor& d, int k) {
  if (d.max_topk < 2) throw CapabilityError("backend " + d.tag + " declares max_topk < 2");
  if (d.max_topk < k) {
    throw CapabilityError("backend " + d.tag + " provides top-" + std::to_string(d.max_topk) +
                          " alternatives but k = " + std::to_string(k));
  }
}

struct SamplingMode {
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct DecodeRequest {
  std::string key;
  std::string sample_id;
  std::string prompt;
  std::vector<int> forced_ids;
  std::vector<std::string> forced_texts;
  int max_new_tokens = 1;
  std::optional<SamplingMode> sampling;  // greedy when empty
  int top_k = 0;                         // alternatives to record per decoded position
};

struct DecodeOutcome {
  std::optional<Trajectory> trajectory;
  std::string error;
  ErrorKind kind = ErrorKind::data;
  bool transient = false;
  int attempts = 0;
  bool ok() const { return trajectory.has_value(); }
};

inline void record_failure(DecodeOutcome& o, const std::exception& e) {
  o.trajectory.reset();
  o.error = e.what();
  if (const auto* b = dynamic_cast<const BackendError*>(&e)) o.transient = b->transient;
  if (const auto* k = dynamic_cast<const Error*>(&e)) o.kind = k->kind();
}

// Decoding stops before a token that would extend the text past a complete
// "#### <number>" group. `text` is the response so far.
inline bool answer_complete(std::string_view text, std::string_view next_token) {
  const auto at = text.rfind("####");
  if (at == std::string_view::npos) return false;
  std::string_view rest = text.substr(at + 4);
  while (!rest.empty() && (rest.front() == ' ' || rest.front() == '#')) rest.remove_prefix(1);
  if (rest.empty()) return false;
  bool digit = false;
  for (char c : rest) {
    if (c >= '0' && c <= '9') {
      digit = true;
    } else if (!(c == ',' || c == '.' || c == '/' || c == '-' || c == '+' || c == '$')) {
      return false;
    }
  }
  if (!digit) return false;
  if (next_token.empty()) return false;
  const char c = next_token.front();
  const bool continues = (c >= '0' && c <= '9') || c == ',' || c == '.' || c == '/';
  return !continues;
}

class Backend {
 public:
  virtual ~Backend() = default;

  virtual BackendDescriptor descriptor() const = 0;

  // Decodes one request. Throws BackendError / DataError on failure.
  virtual Trajectory decode(const DecodeRequest& request) = 0;

  // Reference decoding loop with no state carried between steps.
  virtual Trajectory decode_uncached(const DecodeRequest& request) { return decode(request); }

  // Decodes a batch; outcome i answers request i. The default spreads
  // requests over `parallelism` worker threads.
  virtual std::vector<DecodeOutcome> decode_batch(std::span<const DecodeRequest> requests, int parallelism) {
    std::vector<DecodeOutcome> out(requests.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < requests.size(); i = next++) out[i] = decode_guarded(requests[i]);
    };
    const int workers = std::max(1, std::min<int>(parallelism, static_cast<int>(requests.size())));
    if (workers == 1) {
      worker();
      return out;
    }
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return out;
  }

  // Per-position log-probabilities of `response` under the backend's own
  // tokenization, with top-k alternatives.
  virtual Trajectory force_score(const std::string& prompt, const std::string& response, int top_k) {
    (void)prompt;
    (void)response;
    (void)top_k;
    throw CapabilityError("backend " + descriptor().tag + " cannot force-score text");
  }

  // Full next-token distributions at each response position, when the
  // backend can expose them.
  virtual std::optional<std::vector<std::vector<double>>> full_distributions(const std::string& prompt,
                                                                             std::span<const int> response_ids) {
    (void)prompt;
    (void)response_ids;
    return std::nullopt;
  }

  // Attention-received score per response position.
  virtual std::vector<double> attention_scores(const std::string& prompt, std::span<const int> response_ids) {
    (void)prompt;
    (void)response_ids;
    throw CapabilityError("backend " + descriptor().tag + " does not expose attention");
  }

 protected:
  DecodeOutcome decode_guarded(const DecodeRequest& r) {
    DecodeOutcome o;
    o.attempts = 1;
    try {
      o.trajectory = decode(r);
    } catch (const std::exception& e) {
      record_failure(o, e);
    }
    return o;
  }
};

}  // namespace cft
