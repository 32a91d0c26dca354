#pragma once

// Toy tokenizer: every digit is its own token, letter runs form words,
// every other symbol stands alone, and a single preceding space is glued
// onto the following token. Concatenating token texts reproduces the input.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cft/core.hpp"

namespace cft {

inline std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto is_alpha = [](unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); };
  auto utf8_len = [](unsigned char c) -> std::size_t {
    if (c < 0x80) return 1;
    if ((c >> 5) == 0x6) return 2;
    if ((c >> 4) == 0xe) return 3;
    if ((c >> 3) == 0x1e) return 4;
    return 1;
  };
  while (i < n) {
    std::string tok;
    // A lone space binds to the next non-space token; runs of spaces leave
    // all but the last as standalone " " tokens.
    if (text[i] == ' ') {
      if (i + 1 < n && text[i + 1] != ' ' && text[i + 1] != '\n') {
        tok.push_back(' ');
        ++i;
      } else {
        out.emplace_back(" ");
        ++i;
        continue;
      }
    }
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (is_alpha(c)) {
      while (i < n && is_alpha(static_cast<unsigned char>(text[i]))) tok.push_back(text[i++]);
    } else {
      const std::size_t len = std::min(utf8_len(c), n - i);
      tok.append(text.substr(i, len));
      i += len;
    }
    out.push_back(std::move(tok));
  }
  return out;
}

class Vocab {
 public:
  static constexpr int pad_id = 0;
  static constexpr int eot_id = 1;
  static constexpr int unk_id = 2;

  Vocab() : Vocab(std::vector<std::string>{}) {}

  // Token strings beyond the three specials, in id order starting at 3.
  explicit Vocab(const std::vector<std::string>& tokens) {
    texts_ = {"<pad>", "<eot>", "<unk>"};
    for (const auto& t : tokens) {
      if (index_.count(t) || t == "<pad>" || t == "<eot>" || t == "<unk>") {
        throw DataError("duplicate vocabulary entry \"" + t + "\"");
      }
      index_[t] = static_cast<int>(texts_.size());
      texts_.push_back(t);
    }
  }

  // Vocabulary covering every token of `texts` plus all digits in both
  // spaced and unspaced form, sorted for determinism.
  static Vocab build(const std::vector<std::string>& texts) {
    std::set<std::string> inventory;
    for (char d = '0'; d <= '9'; ++d) {
      inventory.insert(std::string(1, d));
      inventory.insert(std::string(" ") + d);
    }
    for (const auto& t : texts) {
      for (auto& tok : split_tokens(t)) inventory.insert(std::move(tok));
    }
    return Vocab(std::vector<std::string>(inventory.begin(), inventory.end()));
  }

  int size() const noexcept { return static_cast<int>(texts_.size()); }

  int id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? unk_id : it->second;
  }

  // Specials render as empty text.
  const std::string& text_of(int id) const {
    static const std::string empty;
    if (id < 0 || id >= size()) throw DataError("token id " + std::to_string(id) + " out of range");
    return id < 3 ? empty : texts_[static_cast<std::size_t>(id)];
  }

  const std::string& raw_text(int id) const { return texts_.at(static_cast<std::size_t>(id)); }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& t : split_tokens(text)) ids.push_back(id_of(t));
    return ids;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) out += text_of(id);
    return out;
  }

  // Tokens beyond the specials, in id order.
  std::vector<std::string> entries() const { return {texts_.begin() + 3, texts_.end()}; }

 private:
  std::vector<std::string> texts_;
  std::map<std::string, int> index_;
};

}  // namespace cft
