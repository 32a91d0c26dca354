#pragma once

// Final-answer extraction and correctness checking for numeric and
// multiple-choice tasks.
//
// Numeric extraction priority: the last "#### <number>" marker, then the
// last \boxed{...}, then the last standalone number in the text. Numbers may
// carry a sign, a leading currency symbol, comma thousands groups, a
// decimal part, or be written as a fraction a/b (or \frac{a}{b} inside a
// box). Values compare as exact rationals; a decimal that renders a
// non-terminating fraction falls back to a 1e-6 relative tolerance.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "cft/core.hpp"

namespace cft {

using Rational = boost::multiprecision::cpp_rational;

struct Answer {
  enum class Kind { numeric, choice };
  Kind kind = Kind::numeric;
  Rational value;       // numeric answers
  bool decimal = false; // numeric text used a decimal point
  std::string label;    // choice answers
  std::string raw_span;
};

struct ParsedNumber {
  Rational value;
  bool decimal = false;
};

namespace detail {

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }
inline bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Length of a currency symbol at the start of `s`, or 0.
inline std::size_t currency_len(std::string_view s) {
  static const std::string_view symbols[] = {"$", "\xE2\x82\xAC" /* euro */, "\xC2\xA3" /* pound */,
                                             "\xC2\xA5" /* yen */};
  for (auto sym : symbols) {
    if (s.substr(0, sym.size()) == sym) return sym.size();
  }
  return 0;
}

inline Rational pow10(std::size_t n) {
  boost::multiprecision::cpp_int p = 1;
  for (std::size_t i = 0; i < n; ++i) p *= 10;
  return Rational(p);
}

// Decimal digit string to integer. Built digit by digit: the string
// constructor reads a leading 0 as an octal prefix.
inline boost::multiprecision::cpp_int decimal_int(std::string_view digits) {
  boost::multiprecision::cpp_int v = 0;
  for (char c : digits) v = v * 10 + (c - '0');
  return v;
}

// Scans an unsigned number (digits with optional comma groups and decimal
// part) starting exactly at s[0]. Returns consumed length, 0 when none.
inline std::size_t scan_unsigned(std::string_view s, Rational& value, bool& decimal) {
  std::size_t i = 0;
  std::string digits;
  while (i < s.size() && is_digit(s[i])) digits.push_back(s[i++]);
  // comma groups: only when the leading run has 1-3 digits and each group
  // has exactly three
  if (!digits.empty() && digits.size() <= 3) {
    std::size_t j = i;
    std::string grouped = digits;
    bool any = false;
    while (j + 3 < s.size() && s[j] == ',' && is_digit(s[j + 1]) && is_digit(s[j + 2]) && is_digit(s[j + 3]) &&
           (j + 4 >= s.size() || !is_digit(s[j + 4]))) {
      grouped.append(s.substr(j + 1, 3));
      j += 4;
      any = true;
    }
    if (any) {
      digits = grouped;
      i = j;
    }
  }
  std::string frac;
  if (i + 1 < s.size() && s[i] == '.' && is_digit(s[i + 1])) {
    std::size_t j = i + 1;
    while (j < s.size() && is_digit(s[j])) frac.push_back(s[j++]);
    i = j;
    decimal = true;
  } else {
    decimal = false;
  }
  if (digits.empty() && frac.empty()) return 0;
  boost::multiprecision::cpp_int whole = decimal_int(digits);
  if (frac.empty()) {
    value = Rational(whole);
  } else {
    const boost::multiprecision::cpp_int f = decimal_int(frac);
    value = Rational(whole) + Rational(f) / pow10(frac.size());
  }
  return i;
}

struct NumberSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  ParsedNumber number;
};

// Parses a number beginning at s[pos] (sign and currency allowed).
inline std::optional<NumberSpan> number_at(std::string_view s, std::size_t pos) {
  std::size_t i = pos;
  bool negative = false;
  if (i < s.size() && (s[i] == '-' || s[i] == '+')) {
    negative = s[i] == '-';
    ++i;
  }
  i += currency_len(s.substr(i));
  if (i < s.size() && (s[i] == '-') && !negative) {  // "$-5"
    negative = true;
    ++i;
  }
  Rational value;
  bool decimal = false;
  const std::size_t n = scan_unsigned(s.substr(i), value, decimal);
  if (n == 0) return std::nullopt;
  i += n;
  // fraction a/b over integers
  if (!decimal && i + 1 < s.size() && s[i] == '/' && is_digit(s[i + 1])) {
    std::size_t j = i + 1;
    std::string den;
    while (j < s.size() && is_digit(s[j])) den.push_back(s[j++]);
    const boost::multiprecision::cpp_int d = decimal_int(den);
    if (d != 0) {
      value /= Rational(d);
      i = j;
    }
  }
  if (negative) value = -value;
  return NumberSpan{pos, i, {value, decimal}};
}

// Standalone numbers of `text`, left to right. A number is standalone when
// no letter or digit touches it on either side.
inline std::vector<NumberSpan> find_numbers(std::string_view text) {
  std::vector<NumberSpan> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    const bool starts = is_digit(c) || ((c == '-' || c == '+' || c == '$' || c == '.' ||
                                         static_cast<unsigned char>(c) >= 0xC2) &&
                                        i + 1 < text.size());
    if (!starts) {
      ++i;
      continue;
    }
    if (i > 0 && is_alnum(text[i - 1])) {
      ++i;
      continue;
    }
    auto span = number_at(text, i);
    if (!span) {
      ++i;
      continue;
    }
    if (span->end < text.size() && is_alnum(text[span->end])) {
      i = span->end;
      continue;
    }
    out.push_back(*span);
    i = span->end;
  }
  return out;
}

// Content of the last \boxed{...}, honouring nested braces.
inline std::optional<std::string> last_boxed(std::string_view text) {
  const std::string_view tag = "\\boxed{";
  const auto at = text.rfind(tag);
  if (at == std::string_view::npos) return std::nullopt;
  std::size_t i = at + tag.size();
  int depth = 1;
  std::string out;
  for (; i < text.size(); ++i) {
    if (text[i] == '{') ++depth;
    if (text[i] == '}' && --depth == 0) return out;
    out.push_back(text[i]);
  }
  return std::nullopt;
}

inline std::optional<ParsedNumber> parse_boxed(std::string content) {
  // \frac{a}{b} and \dfrac{a}{b}
  for (std::string_view f : {"\\dfrac{", "\\frac{"}) {
    auto p = content.find(f);
    if (p != std::string::npos) {
      auto mid = content.find("}{", p);
      auto end = mid == std::string::npos ? std::string::npos : content.find('}', mid + 2);
      if (mid != std::string::npos && end != std::string::npos) {
        std::string sign = content.substr(0, p);
        content = std::string(trim(sign)) + content.substr(p + f.size(), mid - p - f.size()) + "/" +
                  content.substr(mid + 2, end - mid - 2);
      }
      break;
    }
  }
  std::string cleaned;
  for (std::size_t i = 0; i < content.size(); ++i) {
    if (content[i] == '\\' && i + 1 < content.size() && (content[i + 1] == '$' || content[i + 1] == '%')) continue;
    if (content[i] == ' ' || content[i] == '{' || content[i] == '}') continue;
    cleaned.push_back(content[i]);
  }
  if (!cleaned.empty() && cleaned.back() == '%') cleaned.pop_back();
  auto span = number_at(cleaned, 0);
  if (!span || span->end != cleaned.size()) return std::nullopt;
  return span->number;
}

inline std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

// Parses a whole string as one number (surrounding whitespace allowed).
inline std::optional<ParsedNumber> parse_number(std::string_view text) {
  const auto t = detail::trim(text);
  if (t.empty()) return std::nullopt;
  auto span = detail::number_at(t, 0);
  if (!span) return std::nullopt;
  std::string_view rest = t.substr(span->end);
  if (rest == "." || rest == "%") rest = {};
  if (!rest.empty()) return std::nullopt;
  return span->number;
}

namespace detail {

inline std::optional<Answer> extract_numeric(std::string_view text) {
  if (auto at = text.rfind("####"); at != std::string_view::npos) {
    std::size_t i = at + 4;
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '#')) ++i;
    if (auto span = number_at(text, i)) {
      return Answer{Answer::Kind::numeric, span->number.value, span->number.decimal, {},
                    std::string(text.substr(span->begin, span->end - span->begin))};
    }
  }
  if (auto boxed = last_boxed(text)) {
    if (auto n = parse_boxed(*boxed)) return Answer{Answer::Kind::numeric, n->value, n->decimal, {}, *boxed};
  }
  auto numbers = find_numbers(text);
  if (!numbers.empty()) {
    const auto& last = numbers.back();
    return Answer{Answer::Kind::numeric, last.number.value, last.number.decimal, {},
                  std::string(text.substr(last.begin, last.end - last.begin))};
  }
  return std::nullopt;
}

// Last position (end offset) at which `label` appears as an option marker.
inline std::optional<std::size_t> last_label_match(std::string_view text, const std::string& label) {
  std::optional<std::size_t> best;
  auto consider = [&](std::size_t end) {
    if (!best || end > *best) best = end;
  };
  const std::string paren = "(" + label + ")";
  for (auto p = text.find(paren); p != std::string_view::npos; p = text.find(paren, p + 1)) consider(p + paren.size());
  for (std::size_t p = text.find(label); p != std::string_view::npos; p = text.find(label, p + 1)) {
    const std::size_t e = p + label.size();
    const bool left_ok = p == 0 || !is_alnum(text[p - 1]);
    if (!left_ok || (p > 0 && text[p - 1] == '(')) continue;
    if (e < text.size() && (text[e] == '.' || text[e] == ')' || text[e] == ':') &&
        (e + 1 >= text.size() || !is_alnum(text[e + 1]))) {
      consider(e);
      continue;
    }
    const bool right_ok = e >= text.size() || !is_alnum(text[e]);
    if (!right_ok) continue;
    // bare label: whole response, or right after "answer is" / "answer:"
    const std::string before = upper(trim(text.substr(0, p)));
    const bool whole = trim(text) == label;
    const bool cued = before.ends_with("ANSWER IS") || before.ends_with("ANSWER:") || before.ends_with("ANSWER");
    if (whole || cued) consider(e);
  }
  return best;
}

inline std::optional<Answer> extract_choice(std::string_view text, const std::vector<Choice>& choices) {
  std::optional<std::size_t> best_end;
  const Choice* best = nullptr;
  for (const auto& c : choices) {
    if (c.label.empty()) continue;
    auto end = last_label_match(text, c.label);
    if (end && (!best_end || *end > *best_end)) {
      best_end = end;
      best = &c;
    }
  }
  if (best) return Answer{Answer::Kind::choice, 0, false, best->label, best->label};
  // option text, case-insensitive; latest occurrence wins, longer text on ties
  const std::string hay = upper(text);
  std::optional<std::size_t> best_pos;
  for (const auto& c : choices) {
    if (trim(c.text).empty()) continue;
    const std::string needle = upper(trim(c.text));
    const auto p = hay.rfind(needle);
    if (p == std::string::npos) continue;
    const std::size_t end = p + needle.size();
    if (!best_pos || end > *best_pos || (end == *best_pos && needle.size() > upper(trim(best->text)).size())) {
      best_pos = end;
      best = &c;
    }
  }
  if (best) return Answer{Answer::Kind::choice, 0, false, best->label, best->text};
  return std::nullopt;
}

}  // namespace detail

inline std::optional<Answer> extract_final_answer(std::string_view text, TaskKind kind,
                                                  const std::vector<Choice>& choices = {}) {
  return kind == TaskKind::numeric ? detail::extract_numeric(text) : detail::extract_choice(text, choices);
}

struct EquivalenceOptions {
  double relative_tolerance = 1e-6;
};

namespace detail {

// True when the reduced fraction has a finite decimal expansion.
inline bool terminates(const Rational& r) {
  boost::multiprecision::cpp_int d = boost::multiprecision::denominator(r);
  while (d % 2 == 0) d /= 2;
  while (d % 5 == 0) d /= 5;
  return d == 1;
}

inline bool equivalent(const ParsedNumber& a, const ParsedNumber& b, const EquivalenceOptions& opt) {
  if (a.value == b.value) return true;
  const bool fallback = (a.decimal && !terminates(b.value)) || (b.decimal && !terminates(a.value));
  if (!fallback) return false;
  const double x = a.value.convert_to<double>();
  const double y = b.value.convert_to<double>();
  return std::abs(x - y) <= opt.relative_tolerance * std::max(1.0, std::abs(y));
}

}  // namespace detail

inline bool numeric_equivalent(std::string_view a, std::string_view b, const EquivalenceOptions& opt = {}) {
  const auto pa = parse_number(a);
  const auto pb = parse_number(b);
  if (!pa) throw DataError("cannot parse number \"" + std::string(a) + "\"");
  if (!pb) throw DataError("cannot parse number \"" + std::string(b) + "\"");
  return detail::equivalent(*pa, *pb, opt);
}

// Gold label of a choice sample: the gold text may be a label ("B", "(B)")
// or the text of one option.
inline std::optional<std::string> gold_label(const Sample& sample) {
  std::string_view g = detail::trim(sample.gold_answer);
  if (g.size() >= 2 && g.front() == '(' && g.back() == ')') g = g.substr(1, g.size() - 2);
  if (!g.empty() && (g.back() == '.' || g.back() == ')')) g.remove_suffix(1);
  for (const auto& c : sample.choices) {
    if (detail::upper(c.label) == detail::upper(g)) return c.label;
  }
  for (const auto& c : sample.choices) {
    if (detail::upper(detail::trim(c.text)) == detail::upper(detail::trim(sample.gold_answer))) return c.label;
  }
  return std::nullopt;
}

// 1 when the response's final answer matches the sample's gold answer,
// otherwise 0. Never throws on response content.
inline int verify(std::string_view response, const Sample& sample, const EquivalenceOptions& opt = {}) {
  const auto answer = extract_final_answer(response, sample.task_kind, sample.choices);
  if (!answer) return 0;
  if (sample.task_kind == TaskKind::choice) {
    const auto gold = gold_label(sample);
    return gold && *gold == answer->label ? 1 : 0;
  }
  const auto gold = parse_number(sample.gold_answer);
  if (!gold) return 0;
  return detail::equivalent(ParsedNumber{answer->value, answer->decimal}, *gold, opt) ? 1 : 0;
}

}  // namespace cft
