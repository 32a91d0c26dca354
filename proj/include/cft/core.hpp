#pragma once

// Shared data model: corpus samples, masked training records, run
// configuration and their line-delimited JSON encodings.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"

namespace cft {

using json = nlohmann::ordered_json;

inline constexpr const char* version = "0.1.0";

enum class ErrorKind { usage, backend, data };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

// Transport or capability failure of a decoding backend. `transient` marks
// failures worth retrying (timeouts, 5xx); capability errors are permanent.
struct BackendError : Error {
  explicit BackendError(const std::string& what, bool transient = false)
      : Error(ErrorKind::backend, what), transient(transient) {}
  bool transient;
};

struct CapabilityError : BackendError {
  explicit CapabilityError(const std::string& what) : BackendError(what, false) {}
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
      return 2;
    case ErrorKind::backend:
      return 3;
    case ErrorKind::data:
      return 4;
  }
  return 1;
}

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
      return "usage";
    case ErrorKind::backend:
      return "backend";
    case ErrorKind::data:
      return "data";
  }
  return "unknown";
}

// ----------------------------------------------------------------------------
// Samples

enum class TaskKind { numeric, choice };

inline const char* to_string(TaskKind kind) { return kind == TaskKind::numeric ? "numeric" : "choice"; }

struct Choice {
  std::string label;
  std::string text;
  bool operator==(const Choice&) const = default;
};

struct Sample {
  std::string id;
  std::string question;
  std::string gold_answer;
  TaskKind task_kind = TaskKind::numeric;
  std::vector<Choice> choices;  // nonempty iff task_kind == choice
  // Optional worked solution; present in synthetic corpora, used for
  // pretraining the toy model. Not part of the verification contract.
  std::optional<std::string> reference_solution;

  bool operator==(const Sample&) const = default;
};

namespace detail {

inline const json& require(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw DataError("line " + std::to_string(line) + ": missing field \"" + key + "\"");
  }
  return *it;
}

inline std::string require_string(const json& obj, const char* key, std::size_t line) {
  const json& v = require(obj, key, line);
  if (!v.is_string()) {
    throw DataError("line " + std::to_string(line) + ": field \"" + key + "\" must be a string");
  }
  return v.get<std::string>();
}

inline json parse_line(const std::string& text, std::size_t line) {
  try {
    json j = json::parse(text);
    if (!j.is_object()) {
      throw DataError("line " + std::to_string(line) + ": record is not a JSON object");
    }
    return j;
  } catch (const json::parse_error& e) {
    throw DataError("line " + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
  }
}

inline bool is_blank(const std::string& s) {
  return s.find_first_not_of(" \t\r\n") == std::string::npos;
}

// Calls fn(json, line_number) for each non-blank line.
template <class Fn>
void for_each_record(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open " + path);
  }
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (is_blank(text)) {
      continue;
    }
    fn(parse_line(text, line), line);
  }
}

}  // namespace detail

inline Sample sample_from_json(const json& j, std::size_t line) {
  Sample s;
  s.id = detail::require_string(j, "id", line);
  s.question = detail::require_string(j, "question", line);
  s.gold_answer = detail::require_string(j, "answer", line);
  const std::string task = detail::require_string(j, "task", line);
  const std::string where = "line " + std::to_string(line) + ": ";
  if (s.id.empty()) {
    throw DataError(where + "empty id");
  }
  if (s.gold_answer.empty()) {
    throw DataError(where + "empty answer");
  }
  if (task == "numeric") {
    s.task_kind = TaskKind::numeric;
  } else if (task == "choice") {
    s.task_kind = TaskKind::choice;
  } else {
    throw DataError(where + "unknown task \"" + task + "\"");
  }
  auto choices = j.find("choices");
  if (s.task_kind == TaskKind::choice) {
    if (choices == j.end() || !choices->is_array() || choices->empty()) {
      throw DataError(where + "choice task requires a nonempty \"choices\" array");
    }
    for (const auto& c : *choices) {
      if (!c.is_object()) {
        throw DataError(where + "choice entries must be objects");
      }
      s.choices.push_back({detail::require_string(c, "label", line), detail::require_string(c, "text", line)});
    }
  } else if (choices != j.end()) {
    throw DataError(where + "numeric task must not carry \"choices\"");
  }
  if (auto sol = j.find("solution"); sol != j.end()) {
    if (!sol->is_string()) {
      throw DataError(where + "field \"solution\" must be a string");
    }
    s.reference_solution = sol->get<std::string>();
  }
  return s;
}

inline json sample_to_json(const Sample& s) {
  json j;
  j["id"] = s.id;
  j["question"] = s.question;
  j["answer"] = s.gold_answer;
  j["task"] = to_string(s.task_kind);
  if (s.task_kind == TaskKind::choice) {
    json arr = json::array();
    for (const auto& c : s.choices) {
      arr.push_back({{"label", c.label}, {"text", c.text}});
    }
    j["choices"] = std::move(arr);
  }
  if (s.reference_solution) {
    j["solution"] = *s.reference_solution;
  }
  return j;
}

// Text handed to a backend for a sample: the question, then a newline.
inline std::string prompt_for(const Sample& s) {
  std::string p = s.question;
  if (s.task_kind == TaskKind::choice) {
    for (const auto& c : s.choices) p += "\n(" + c.label + ") " + c.text;
  }
  return p + "\n";
}

inline std::vector<Sample> load_samples(const std::string& path) {
  std::vector<Sample> out;
  std::unordered_set<std::string> seen;
  detail::for_each_record(path, [&](const json& j, std::size_t line) {
    Sample s = sample_from_json(j, line);
    if (!seen.insert(s.id).second) {
      throw DataError("line " + std::to_string(line) + ": duplicate id \"" + s.id + "\"");
    }
    out.push_back(std::move(s));
  });
  return out;
}

inline void write_samples(const std::vector<Sample>& samples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw DataError("cannot write " + path);
  }
  for (const auto& s : samples) {
    out << sample_to_json(s).dump() << '\n';
  }
}

// ----------------------------------------------------------------------------
// Masked training records

struct MaskedExample {
  std::string sample_id;
  std::string question;
  std::vector<std::string> token_texts;
  std::vector<int> token_ids;
  std::vector<double> weights;
  std::string policy;
  std::string backend_tag;

  bool operator==(const MaskedExample&) const = default;
};

// Throws DataError describing the first violated invariant.
inline void validate(const MaskedExample& x) {
  const std::string who = "record \"" + x.sample_id + "\": ";
  if (x.sample_id.empty()) {
    throw DataError("record with empty sample_id");
  }
  const std::size_t n = x.token_texts.size();
  if (n == 0) {
    throw DataError(who + "empty token list");
  }
  if (x.token_ids.size() != n || x.weights.size() != n) {
    throw DataError(who + "array lengths differ (texts " + std::to_string(n) + ", ids " +
                    std::to_string(x.token_ids.size()) + ", weights " + std::to_string(x.weights.size()) + ")");
  }
  bool any_positive = false;
  for (double w : x.weights) {
    if (!std::isfinite(w) || w < 0.0) {
      throw DataError(who + "weights must be finite and non-negative");
    }
    any_positive = any_positive || w > 0.0;
  }
  if (!any_positive) {
    throw DataError(who + "all weights are zero");
  }
}

inline json masked_to_json(const MaskedExample& x) {
  json j;
  j["sample_id"] = x.sample_id;
  j["question"] = x.question;
  j["token_texts"] = x.token_texts;
  j["token_ids"] = x.token_ids;
  j["weights"] = x.weights;
  j["policy"] = x.policy;
  j["backend_tag"] = x.backend_tag;
  return j;
}

inline MaskedExample masked_from_json(const json& j, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  MaskedExample x;
  try {
    x.sample_id = detail::require_string(j, "sample_id", line);
    x.question = detail::require_string(j, "question", line);
    x.policy = detail::require_string(j, "policy", line);
    x.backend_tag = detail::require_string(j, "backend_tag", line);
    const json& texts = detail::require(j, "token_texts", line);
    const json& ids = detail::require(j, "token_ids", line);
    const json& weights = detail::require(j, "weights", line);
    if (!texts.is_array() || !ids.is_array() || !weights.is_array()) {
      throw DataError(where + "token_texts, token_ids and weights must be arrays");
    }
    for (const auto& t : texts) {
      if (!t.is_string()) throw DataError(where + "token_texts entries must be strings");
      x.token_texts.push_back(t.get<std::string>());
    }
    for (const auto& t : ids) {
      if (!t.is_number_integer()) throw DataError(where + "token_ids entries must be integers");
      x.token_ids.push_back(t.get<int>());
    }
    for (const auto& t : weights) {
      if (!t.is_number()) throw DataError(where + "weights entries must be numbers");
      x.weights.push_back(t.get<double>());
    }
    validate(x);
  } catch (const DataError& e) {
    const std::string msg = e.what();
    if (msg.rfind("line ", 0) == 0) throw;
    throw DataError(where + msg);
  }
  return x;
}

inline void write_masked_dataset(const std::vector<MaskedExample>& records, const std::string& path) {
  for (const auto& r : records) {
    validate(r);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw DataError("cannot write " + path);
  }
  for (const auto& r : records) {
    out << masked_to_json(r).dump() << '\n';
  }
}

inline std::vector<MaskedExample> read_masked_dataset(const std::string& path) {
  std::vector<MaskedExample> out;
  detail::for_each_record(path, [&](const json& j, std::size_t line) { out.push_back(masked_from_json(j, line)); });
  return out;
}

// ----------------------------------------------------------------------------
// Run configuration

enum class PolicyKind { strict2, strict3, union3, graded3 };

inline const char* to_string(PolicyKind p) {
  switch (p) {
    case PolicyKind::strict2:
      return "strict2";
    case PolicyKind::strict3:
      return "strict3";
    case PolicyKind::union3:
      return "union3";
    case PolicyKind::graded3:
      return "graded3";
  }
  return "?";
}

inline PolicyKind parse_policy(const std::string& s) {
  if (s == "strict2") return PolicyKind::strict2;
  if (s == "strict3") return PolicyKind::strict3;
  if (s == "union3") return PolicyKind::union3;
  if (s == "graded3") return PolicyKind::graded3;
  throw UsageError("unknown policy \"" + s + "\" (expected strict2, strict3, union3 or graded3)");
}

inline int min_k_for(PolicyKind p) { return p == PolicyKind::strict2 ? 2 : 3; }

struct RunConfig {
  int k = 3;
  PolicyKind policy = PolicyKind::strict3;
  // 0 means twice the length of the trajectory being perturbed.
  int max_continuation_tokens = 0;
  int parallelism = 1;
  int sampling_max_attempts = 100;
  double sampling_temperature = 1.0;
  double transfer_fraction = 0.15;
  std::uint64_t seed = 0;
  // Rescue greedy failures by temperature sampling (counted in stats).
  bool sample_fallback = false;
  int max_new_tokens = 128;

  void validate() const {
    if (k < 2) throw UsageError("k must be at least 2");
    if (k < min_k_for(policy)) {
      throw UsageError(std::string("policy ") + to_string(policy) + " requires k >= " +
                       std::to_string(min_k_for(policy)));
    }
    if (parallelism < 1) throw UsageError("parallelism must be at least 1");
    if (max_continuation_tokens < 0) throw UsageError("max_continuation_tokens must be non-negative");
    if (max_new_tokens < 1) throw UsageError("max_new_tokens must be at least 1");
    if (sampling_max_attempts < 0) throw UsageError("sampling_max_attempts must be non-negative");
    if (!(sampling_temperature > 0.0)) throw UsageError("sampling_temperature must be positive");
    if (!(transfer_fraction > 0.0 && transfer_fraction <= 1.0)) {
      throw UsageError("transfer_fraction must lie in (0, 1]");
    }
  }
};

// Key/value config text: `key = value` per line, `#` starts a comment.
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(n) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    for (auto& c : key) {
      if (c == '-') c = '_';
    }
    if (key.empty()) throw UsageError("config line " + std::to_string(n) + ": empty key");
    out[key] = value;
  }
  return out;
}

inline std::map<std::string, std::string> load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// Applies recognised RunConfig keys; returns the keys it did not consume.
inline std::map<std::string, std::string> apply_config(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
  std::map<std::string, std::string> rest;
  auto to_int = [](const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      long long x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw UsageError("config key " + key + ": expected an integer, got \"" + v + "\"");
    }
  };
  auto to_real = [](const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw UsageError("config key " + key + ": expected a number, got \"" + v + "\"");
    }
  };
  for (const auto& [key, value] : kv) {
    if (key == "k") {
      cfg.k = static_cast<int>(to_int(key, value));
    } else if (key == "policy") {
      cfg.policy = parse_policy(value);
    } else if (key == "max_continuation_tokens") {
      cfg.max_continuation_tokens = static_cast<int>(to_int(key, value));
    } else if (key == "max_new_tokens") {
      cfg.max_new_tokens = static_cast<int>(to_int(key, value));
    } else if (key == "parallelism") {
      cfg.parallelism = static_cast<int>(to_int(key, value));
    } else if (key == "sampling_max_attempts") {
      cfg.sampling_max_attempts = static_cast<int>(to_int(key, value));
    } else if (key == "sampling_temperature" || key == "temperature") {
      cfg.sampling_temperature = to_real(key, value);
    } else if (key == "transfer_fraction" || key == "fraction") {
      cfg.transfer_fraction = to_real(key, value);
    } else if (key == "seed") {
      cfg.seed = static_cast<std::uint64_t>(to_int(key, value));
    } else if (key == "sample_fallback") {
      cfg.sample_fallback = value == "1" || value == "true" || value == "yes";
    } else {
      rest[key] = value;
    }
  }
  return rest;
}

inline json config_to_json(const RunConfig& c) {
  json j;
  j["k"] = c.k;
  j["policy"] = to_string(c.policy);
  j["max_continuation_tokens"] = c.max_continuation_tokens;
  j["max_new_tokens"] = c.max_new_tokens;
  j["parallelism"] = c.parallelism;
  j["sampling_max_attempts"] = c.sampling_max_attempts;
  j["sampling_temperature"] = c.sampling_temperature;
  j["transfer_fraction"] = c.transfer_fraction;
  j["seed"] = c.seed;
  j["sample_fallback"] = c.sample_fallback;
  return j;
}

}  // namespace cft
