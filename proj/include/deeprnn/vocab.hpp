#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "deeprnn/errors.hpp"

namespace deeprnn {

inline constexpr int kEos = 0;
inline constexpr int kUnk = 1;
inline constexpr const char* kEosToken = "</s>";
inline constexpr const char* kUnkToken = "<unk>";

inline std::vector<std::string> split_whitespace(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

/// Token <-> id mapping. Ids 0 and 1 are reserved for end-of-sentence and
/// unknown.
class Vocabulary {
 public:
  Vocabulary() {
    add(kEosToken);
    add(kUnkToken);
  }

  /// Frequency-sorted vocabulary (ties broken lexicographically); max_size 0
  /// means unbounded and counts the reserved symbols.
  static Vocabulary build(const std::vector<std::string>& lines, std::size_t max_size = 0) {
    std::map<std::string, std::size_t> counts;
    for (const auto& line : lines)
      for (auto& tok : split_whitespace(line)) ++counts[tok];
    std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    for (const auto& [tok, count] : sorted) {
      if (max_size && v.size() >= max_size) break;
      if (tok == kEosToken || tok == kUnkToken) continue;
      v.add(tok);
    }
    return v;
  }

  int add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
  }

  std::size_t size() const { return tokens_.size(); }

  int id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw DataError("vocabulary id out of range: " + std::to_string(id));
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  /// Token ids of a whitespace-tokenized sentence (no end symbol).
  std::vector<int> encode(std::string_view line) const {
    std::vector<int> ids;
    for (const auto& tok : split_whitespace(line)) ids.push_back(id(tok));
    return ids;
  }

  /// Inverse of encode; stops at the first end symbol.
  std::string decode(const std::vector<int>& ids) const {
    std::vector<std::string> toks;
    for (int i : ids) {
      if (i == kEos) break;
      toks.push_back(token(i));
    }
    return join(toks);
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace deeprnn
