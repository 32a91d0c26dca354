#pragma once

// Token-selection baselines and scores: entropy and attention selectors with
// fraction matching, DFT probability weights, the cross-model transfer score
// and the number-only mask.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>
#include <string>
#include <vector>

#include "cft/generator/backend.hpp"
#include "cft/generator/decode.hpp"

namespace cft {

enum class Category { number, op, punctuation, special, word, other };

inline const char* to_string(Category c) {
  switch (c) {
    case Category::number:
      return "number";
    case Category::op:
      return "operator";
    case Category::punctuation:
      return "punctuation";
    case Category::special:
      return "special";
    case Category::word:
      return "word";
    case Category::other:
      return "other";
  }
  return "?";
}

inline constexpr Category all_categories[] = {Category::number,  Category::op,   Category::punctuation,
                                              Category::special, Category::word, Category::other};

// Surrounding whitespace is ignored. Precedence: number, operator,
// punctuation, special, word, other.
inline Category token_category(std::string_view token) {
  const auto b = token.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return Category::other;
  const auto e = token.find_last_not_of(" \t\r\n");
  const std::string s(token.substr(b, e - b + 1));
  static const std::regex number(R"([+-]?(\d+|\d{1,3}(,\d{3})+)(\.\d+)?)");
  if (std::regex_match(s, number)) return Category::number;
  static const std::vector<std::string> ops = {"+", "-", "*", "/", "=", "<", ">", "^", "%",
                                               "\xE2\x88\x92" /* − */, "\xC3\x97" /* × */, "\xC3\xB7" /* ÷ */};
  auto all_from = [&](const std::vector<std::string>& set) {
    std::size_t i = 0;
    while (i < s.size()) {
      bool hit = false;
      for (const auto& o : set) {
        if (s.compare(i, o.size(), o) == 0) {
          i += o.size();
          hit = true;
          break;
        }
      }
      if (!hit) return false;
    }
    return true;
  };
  if (all_from(ops)) return Category::op;
  static const std::vector<std::string> punct = {".", ",", ";", ":", "!", "?", "'", "\"", "(", ")", "[", "]", "{", "}"};
  if (all_from(punct)) return Category::punctuation;
  bool alpha = false, digit = false, other = false;
  for (unsigned char c : s) {
    if (std::isalpha(c)) alpha = true;
    else if (std::isdigit(c)) digit = true;
    else if (c >= 0x80) alpha = true;  // non-ASCII letters count as word characters
    else other = true;
  }
  if (!alpha && !digit) return Category::special;
  if (alpha && !digit && !other) return Category::word;
  return Category::other;
}

enum class ScoreSource { entropy, attention, transfer, dft_prob };

inline const char* to_string(ScoreSource s) {
  switch (s) {
    case ScoreSource::entropy:
      return "entropy";
    case ScoreSource::attention:
      return "attention";
    case ScoreSource::transfer:
      return "transfer";
    case ScoreSource::dft_prob:
      return "dft_prob";
  }
  return "?";
}

struct ScoreVector {
  std::string sample_id;
  std::vector<double> scores;
  ScoreSource source = ScoreSource::entropy;
  bool truncated = false;  // entropy from top-k lists plus a residual bucket
};

inline double entropy_of(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

// Entropy of a top-k list renormalized to at most unit mass, with the
// leftover mass in one extra bucket.
inline double truncated_entropy(std::span<const TopEntry> top) {
  std::vector<double> p;
  double mass = 0.0;
  for (const auto& e : top) {
    if (!std::isfinite(e.logprob)) throw DataError("non-finite log-probability in top-k list");
    p.push_back(std::exp(e.logprob));
    mass += p.back();
  }
  if (mass > 1.0) {
    for (double& x : p) x /= mass;
    mass = 1.0;
  }
  p.push_back(1.0 - mass);
  return entropy_of(p);
}

namespace detail {

inline std::vector<int> full_ids(const Trajectory& t) {
  std::vector<int> ids = t.prefix_ids;
  ids.insert(ids.end(), t.token_ids.begin(), t.token_ids.end());
  return ids;
}

}  // namespace detail

inline ScoreVector entropy_scores(const Trajectory& t, Backend& backend) {
  ScoreVector v;
  v.sample_id = t.sample_id;
  v.source = ScoreSource::entropy;
  const auto ids = detail::full_ids(t);
  if (auto dist = backend.full_distributions(t.prompt, ids)) {
    for (std::size_t i = t.prefix_ids.size(); i < dist->size(); ++i) v.scores.push_back(entropy_of((*dist)[i]));
    return v;
  }
  if (t.topk.size() != t.size()) throw DataError("trajectory " + t.sample_id + " has no log-probabilities for entropy");
  v.truncated = true;
  for (const auto& row : t.topk) v.scores.push_back(truncated_entropy(row));
  return v;
}

// Marks round(fraction * T) positions (half rounds up) with the highest
// scores; equal scores go to the lower position.
inline std::vector<double> top_fraction_mask(const ScoreVector& s, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw UsageError("fraction must lie in [0, 1]");
  const std::size_t n = s.scores.size();
  const auto count = std::min(n, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
  std::vector<double> mask(n, 0.0);
  for (std::size_t i = 0; i < count; ++i) mask[idx[i]] = 1.0;
  return mask;
}

inline ScoreVector attention_scores(const Trajectory& t, Backend& backend) {
  if (!backend.descriptor().supports_attention) {
    throw CapabilityError("backend " + backend.descriptor().tag + " does not expose attention");
  }
  const auto ids = detail::full_ids(t);
  const auto all = backend.attention_scores(t.prompt, ids);
  ScoreVector v;
  v.sample_id = t.sample_id;
  v.source = ScoreSource::attention;
  v.scores.assign(all.begin() + static_cast<std::ptrdiff_t>(t.prefix_ids.size()), all.end());
  return v;
}

inline ScoreVector dft_prob_weights(const Trajectory& t) {
  ScoreVector v;
  v.sample_id = t.sample_id;
  v.source = ScoreSource::dft_prob;
  for (double lp : t.chosen_logprob) v.scores.push_back(std::exp(std::min(lp, 0.0)));
  return v;
}

// s_t = P_cft(y_t | .) - P_base(y_t | .) along `response`, scored under each
// backend's own tokenization (which must agree).
inline ScoreVector transfer_scores(const std::string& prompt, const std::string& response, Backend& cft_backend,
                                   Backend& base_backend) {
  const Trajectory a = force_score(cft_backend, prompt, response, 1);
  const Trajectory b = force_score(base_backend, prompt, response, 1);
  if (a.token_ids != b.token_ids) {
    throw DataError("backends " + cft_backend.descriptor().tag + " and " + base_backend.descriptor().tag +
                    " tokenize the response differently; force-score the text under the base model's tokenizer "
                    "and transfer scores onto its tokens");
  }
  ScoreVector v;
  v.source = ScoreSource::transfer;
  for (std::size_t i = 0; i < a.size(); ++i) v.scores.push_back(std::exp(a.chosen_logprob[i]) - std::exp(b.chosen_logprob[i]));
  return v;
}

inline std::vector<double> number_mask(const Trajectory& t) {
  std::vector<double> m;
  for (const auto& s : t.token_texts) m.push_back(token_category(s) == Category::number ? 1.0 : 0.0);
  return m;
}

}  // namespace cft
