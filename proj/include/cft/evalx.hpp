#pragma once

// Evaluation: Pass@N over seeded samples, mean output entropy, and token
// statistics split by criticality.

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "cft/core.hpp"
#include "cft/generator/decode.hpp"
#include "cft/rng.hpp"
#include "cft/select.hpp"
#include "cft/verifier.hpp"

namespace cft {

struct CorrectnessRow {
  std::string sample_id;
  std::vector<int> bits;
};

struct PassAtNReport {
  std::map<std::string, std::vector<int>> per_question;
  std::map<int, double> pass_at;  // n -> mean over questions
};

// Pass@n for n = 1..n_max; n_max = 0 takes the longest row.
inline PassAtNReport pass_at_n(const std::vector<CorrectnessRow>& rows, int n_max = 0) {
  PassAtNReport r;
  if (n_max == 0) {
    for (const auto& row : rows) n_max = std::max<int>(n_max, static_cast<int>(row.bits.size()));
  }
  for (const auto& row : rows) {
    if (row.bits.empty()) throw DataError("question " + row.sample_id + " has no samples");
    if (static_cast<int>(row.bits.size()) < n_max) {
      throw DataError("question " + row.sample_id + " has " + std::to_string(row.bits.size()) + " samples, fewer than " +
                      std::to_string(n_max));
    }
    r.per_question[row.sample_id] = row.bits;
  }
  if (rows.empty()) return r;
  for (int n = 1; n <= n_max; ++n) {
    std::size_t hit = 0;
    for (const auto& row : rows) {
      hit += std::any_of(row.bits.begin(), row.bits.begin() + n, [](int b) { return b != 0; });
    }
    r.pass_at[n] = static_cast<double>(hit) / static_cast<double>(rows.size());
  }
  return r;
}

inline json pass_report_to_json(const PassAtNReport& r) {
  json j;
  json pq = json::object();
  for (const auto& [id, bits] : r.per_question) pq[id] = bits;
  j["per_question"] = std::move(pq);
  json pa = json::object();
  for (const auto& [n, v] : r.pass_at) pa[std::to_string(n)] = v;
  j["pass_at"] = std::move(pa);
  return j;
}

struct PassOptions {
  double temperature = 1.0;
  int max_new_tokens = 128;
  int parallelism = 1;
};

// N seeded samples per question (sample i uses the seed derived from
// (seed, id, i)), each verified. Failed decodes count as incorrect.
inline std::vector<CorrectnessRow> collect_pass_data(const std::vector<Sample>& samples, Backend& backend, int n,
                                                     std::uint64_t seed, const PassOptions& opt = {},
                                                     std::vector<std::string>* log = nullptr) {
  if (n < 1) throw UsageError("N must be >= 1");
  if (!(opt.temperature > 0.0)) throw UsageError("sampling temperature must be > 0");
  std::vector<DecodeRequest> requests;
  for (const auto& s : samples) {
    for (int i = 0; i < n; ++i) {
      DecodeRequest r;
      r.key = s.id + "|pass|" + std::to_string(i);
      r.sample_id = s.id;
      r.prompt = prompt_for(s);
      r.max_new_tokens = opt.max_new_tokens;
      r.sampling = SamplingMode{opt.temperature, derive_seed(seed, s.id, static_cast<std::uint64_t>(i))};
      requests.push_back(std::move(r));
    }
  }
  const auto results = run_batch(backend, requests, opt.parallelism);
  std::vector<CorrectnessRow> rows;
  std::size_t k = 0;
  for (const auto& s : samples) {
    CorrectnessRow row{s.id, {}};
    for (int i = 0; i < n; ++i, ++k) {
      const auto& o = results.at(requests[k].key);
      if (!o.ok()) {
        if (log) log->push_back(requests[k].key + ": " + o.error);
        row.bits.push_back(0);
        continue;
      }
      row.bits.push_back(verify(o.trajectory->response_text(), s));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline double mean_output_entropy(const std::vector<Trajectory>& trajectories, Backend& backend) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& t : trajectories) {
    for (double h : entropy_scores(t, backend).scores) {
      total += h;
      ++count;
    }
  }
  if (count == 0) throw DataError("no positions to average entropy over");
  return total / static_cast<double>(count);
}

struct GroupStats {
  std::size_t count = 0;
  double mean_confidence = std::numeric_limits<double>::quiet_NaN();
  double perplexity = std::numeric_limits<double>::quiet_NaN();
  double mean_entropy = std::numeric_limits<double>::quiet_NaN();
  std::map<std::string, std::size_t> histogram;
};

struct TokenStatsReport {
  GroupStats critical;
  GroupStats normal;
};

inline TokenStatsReport token_stats(const std::vector<Trajectory>& trajectories,
                                    const std::vector<std::vector<double>>& masks, Backend& backend) {
  if (masks.size() != trajectories.size()) throw DataError("one mask per trajectory is required");
  struct Acc {
    double conf = 0.0, nll = 0.0, ent = 0.0;
    std::size_t n = 0;
    std::map<std::string, std::size_t> hist;
  } acc[2];
  for (auto& a : acc) {
    for (auto c : all_categories) a.hist[to_string(c)] = 0;
  }
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& t = trajectories[i];
    if (masks[i].size() != t.size()) {
      throw DataError("mask for " + t.sample_id + " has " + std::to_string(masks[i].size()) + " entries for " +
                      std::to_string(t.size()) + " tokens");
    }
    const auto ent = entropy_scores(t, backend).scores;
    for (std::size_t p = 0; p < t.size(); ++p) {
      Acc& a = acc[masks[i][p] > 0.0 ? 0 : 1];
      a.conf += std::exp(t.chosen_logprob[p]);
      a.nll -= t.chosen_logprob[p];
      a.ent += ent[p];
      ++a.n;
      ++a.hist[to_string(token_category(t.token_texts[p]))];
    }
  }
  auto finish = [](const Acc& a) {
    GroupStats g;
    g.count = a.n;
    g.histogram = a.hist;
    if (a.n) {
      const double n = static_cast<double>(a.n);
      g.mean_confidence = a.conf / n;
      g.perplexity = std::exp(a.nll / n);
      g.mean_entropy = a.ent / n;
    }
    return g;
  };
  return {finish(acc[0]), finish(acc[1])};
}

inline json token_stats_to_json(const TokenStatsReport& r) {
  auto group = [](const GroupStats& g) {
    auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
    json j;
    j["count"] = g.count;
    j["mean_confidence"] = num(g.mean_confidence);
    j["perplexity"] = num(g.perplexity);
    j["mean_entropy"] = num(g.mean_entropy);
    j["categories"] = g.histogram;
    return j;
  };
  json j;
  j["entropy_unit"] = "nats";
  j["critical"] = group(r.critical);
  j["normal"] = group(r.normal);
  return j;
}

inline std::string token_stats_table(const TokenStatsReport& r) {
  auto fmt = [](double v) {
    if (std::isnan(v)) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  std::string out = "group      tokens  confidence  perplexity  entropy\n";
  for (const auto* name : {"critical", "normal"}) {
    const GroupStats& g = std::string(name) == "critical" ? r.critical : r.normal;
    char line[160];
    std::snprintf(line, sizeof line, "%-9s %7zu  %10s  %10s  %7s\n", name, g.count, fmt(g.mean_confidence).c_str(),
                  fmt(g.perplexity).c_str(), fmt(g.mean_entropy).c_str());
    out += line;
  }
  out += "\ncategory     critical  normal\n";
  for (auto c : all_categories) {
    char line[96];
    std::snprintf(line, sizeof line, "%-11s %9zu %7zu\n", to_string(c), r.critical.histogram.at(to_string(c)),
                  r.normal.histogram.at(to_string(c)));
    out += line;
  }
  return out;
}

}  // namespace cft
