#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deeprnn/corpus.hpp"
#include "deeprnn/errors.hpp"
#include "deeprnn/vocab.hpp"

namespace deeprnn::subword {

inline constexpr std::string_view kEndOfWord = "</w>";
inline constexpr std::string_view kContinuation = "@@";
inline constexpr std::string_view kMergeTableTag = "#bpe v1";

/// Splits UTF-8 text into code points (invalid bytes are kept as single units).
inline std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    if (i + len > s.size()) len = 1;
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

using MergePair = std::pair<std::string, std::string>;

/// Ordered merge operations. Order is significant; pairs are unique.
class MergeTable {
 public:
  MergeTable() = default;
  explicit MergeTable(std::vector<MergePair> merges) {
    for (auto& m : merges) add(std::move(m.first), std::move(m.second));
  }

  void add(std::string left, std::string right) {
    MergePair p{std::move(left), std::move(right)};
    if (rank_.count(p)) throw DataError("duplicate merge '" + p.first + " " + p.second + "'");
    rank_.emplace(p, merges_.size());
    merges_.push_back(std::move(p));
  }

  const std::vector<MergePair>& merges() const { return merges_; }
  std::size_t size() const { return merges_.size(); }
  bool empty() const { return merges_.empty(); }
  std::string version() const { return std::string(kMergeTableTag); }

  std::optional<std::size_t> rank(const std::string& left, const std::string& right) const {
    auto it = rank_.find(MergePair{left, right});
    if (it == rank_.end()) return std::nullopt;
    return it->second;
  }

  /// The first n merges.
  MergeTable prefix(std::size_t n) const {
    n = std::min(n, merges_.size());
    return MergeTable(std::vector<MergePair>(merges_.begin(), merges_.begin() + static_cast<std::ptrdiff_t>(n)));
  }

  std::string to_text() const {
    std::string out = std::string(kMergeTableTag) + "\n";
    for (const auto& [l, r] : merges_) out += l + " " + r + "\n";
    return out;
  }

  static MergeTable from_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kMergeTableTag) {
      throw DataError("merge table: missing '" + std::string(kMergeTableTag) + "' header");
    }
    MergeTable t;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const std::size_t sp = line.find(' ');
      if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size() ||
          line.find(' ', sp + 1) != std::string::npos) {
        throw DataError("merge table line " + std::to_string(lineno) + ": expected 'left right'");
      }
      t.add(line.substr(0, sp), line.substr(sp + 1));
    }
    return t;
  }

  friend bool operator==(const MergeTable& a, const MergeTable& b) { return a.merges_ == b.merges_; }

 private:
  std::vector<MergePair> merges_;
  std::map<MergePair, std::size_t> rank_;
};

inline void save_merge_table(const MergeTable& t, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << t.to_text();
}

inline MergeTable load_merge_table(const std::filesystem::path& path) {
  return MergeTable::from_text(read_file(path));
}

enum class Side { source, target, joint };

inline Side parse_side(const std::string& s) {
  if (s == "source") return Side::source;
  if (s == "target") return Side::target;
  if (s == "joint") return Side::joint;
  throw UsageError("unknown vocabulary side '" + s + "'");
}

/// Unit frequencies with a minimum-count threshold; threshold 0 allows every
/// unit, including unseen ones.
class UnitVocabulary {
 public:
  UnitVocabulary() = default;
  UnitVocabulary(std::map<std::string, std::size_t> counts, std::size_t threshold, Side side = Side::joint)
      : counts_(std::move(counts)), threshold_(threshold), side_(side) {}

  bool allowed(const std::string& unit) const {
    if (threshold_ == 0) return true;
    auto it = counts_.find(unit);
    return it != counts_.end() && it->second >= threshold_;
  }

  std::size_t count(const std::string& unit) const {
    auto it = counts_.find(unit);
    return it == counts_.end() ? 0 : it->second;
  }

  std::size_t threshold() const { return threshold_; }
  Side side() const { return side_; }
  const std::map<std::string, std::size_t>& counts() const { return counts_; }

  std::set<std::string> allowed_units() const {
    std::set<std::string> out;
    for (const auto& [u, c] : counts_)
      if (c >= threshold_) out.insert(u);
    return out;
  }

  /// `unit<TAB>count` lines, most frequent first.
  std::string to_text() const {
    std::vector<std::pair<std::string, std::size_t>> rows(counts_.begin(), counts_.end());
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::string out;
    for (const auto& [u, c] : rows) out += u + "\t" + std::to_string(c) + "\n";
    return out;
  }

  static UnitVocabulary from_text(const std::string& text, std::size_t threshold, Side side = Side::joint) {
    std::map<std::string, std::size_t> counts;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const std::size_t tab = line.rfind('\t');
      if (tab == std::string::npos || tab == 0) {
        throw DataError("vocabulary line " + std::to_string(lineno) + ": expected 'unit<TAB>count'");
      }
      try {
        std::size_t used = 0;
        const std::string num = line.substr(tab + 1);
        const unsigned long long c = std::stoull(num, &used);
        if (used != num.size()) throw std::invalid_argument("trailing");
        counts[line.substr(0, tab)] += c;
      } catch (const std::exception&) {
        throw DataError("vocabulary line " + std::to_string(lineno) + ": bad count");
      }
    }
    return UnitVocabulary(std::move(counts), threshold, side);
  }

 private:
  std::map<std::string, std::size_t> counts_;
  std::size_t threshold_ = 0;
  Side side_ = Side::joint;
};

inline UnitVocabulary build_unit_vocabulary(const std::vector<std::string>& units, std::size_t threshold,
                                            Side side = Side::joint) {
  std::map<std::string, std::size_t> counts;
  for (const auto& u : units) ++counts[u];
  return UnitVocabulary(std::move(counts), threshold, side);
}

/// Counts the units of already-segmented lines.
inline UnitVocabulary count_units(const std::vector<std::string>& segmented_lines, std::size_t threshold,
                                  Side side = Side::joint) {
  std::map<std::string, std::size_t> counts;
  for (const auto& line : segmented_lines)
    for (auto& u : split_whitespace(line)) ++counts[u];
  return UnitVocabulary(std::move(counts), threshold, side);
}

/// Bijective character map between two scripts (e.g. Cyrillic -> Latin).
class TransliterationMap {
 public:
  TransliterationMap() = default;
  explicit TransliterationMap(std::map<std::string, std::string> pairs) {
    for (auto& [from, to] : pairs) add(from, to);
  }

  void add(const std::string& from, const std::string& to) {
    if (utf8_chars(from).size() != 1) throw DataError("transliteration source must be one character: '" + from + "'");
    if (to.empty()) throw DataError("transliteration target for '" + from + "' is empty");
    if (forward_.count(from)) throw DataError("duplicate transliteration source '" + from + "'");
    if (backward_.count(to)) throw DataError("transliteration is not bijective at '" + to + "'");
    forward_.emplace(from, to);
    backward_.emplace(to, from);
    longest_target_ = std::max(longest_target_, to.size());
  }

  bool empty() const { return forward_.empty(); }
  std::optional<std::string> lookup(const std::string& ch) const {
    auto it = forward_.find(ch);
    if (it == forward_.end()) return std::nullopt;
    return it->second;
  }
  const std::map<std::string, std::string>& pairs() const { return forward_; }

  /// Unmapped characters pass through; `unmapped` is set when any occur.
  std::string transliterate(std::string_view s, bool* unmapped = nullptr) const {
    std::string out;
    for (const auto& ch : utf8_chars(s)) {
      auto it = forward_.find(ch);
      if (it == forward_.end()) {
        if (unmapped) *unmapped = true;
        out += ch;
      } else {
        out += it->second;
      }
    }
    return out;
  }

  /// Greedy longest-match inverse of transliterate().
  std::string detransliterate(std::string_view s) const {
    std::string out;
    std::size_t i = 0;
    while (i < s.size()) {
      bool matched = false;
      for (std::size_t len = std::min(longest_target_, s.size() - i); len > 0; --len) {
        auto it = backward_.find(std::string(s.substr(i, len)));
        if (it != backward_.end()) {
          out += it->second;
          i += len;
          matched = true;
          break;
        }
      }
      if (!matched) {
        const std::string ch = utf8_chars(s.substr(i)).front();
        out += ch;
        i += ch.size();
      }
    }
    return out;
  }

  static TransliterationMap from_text(const std::string& text) {
    TransliterationMap m;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const std::size_t tab = line.find('\t');
      if (tab == std::string::npos) {
        throw DataError("transliteration map line " + std::to_string(lineno) + ": expected 'from<TAB>to'");
      }
      m.add(line.substr(0, tab), line.substr(tab + 1));
    }
    return m;
  }

 private:
  std::map<std::string, std::string> forward_;
  std::map<std::string, std::string> backward_;
  std::size_t longest_target_ = 0;
};

/// Word frequency table of whitespace-tokenized lines.
inline std::map<std::string, std::size_t> word_counts(const std::vector<std::string>& lines) {
  std::map<std::string, std::size_t> counts;
  for (const auto& line : lines)
    for (auto& w : split_whitespace(line)) ++counts[w];
  return counts;
}

inline std::vector<std::string> initial_symbols(std::string_view word) {
  std::vector<std::string> symbols = utf8_chars(word);
  if (!symbols.empty()) symbols.back() += kEndOfWord;
  return symbols;
}

/// Learns joint merges over the concatenated word frequencies of both
/// corpora. Each step merges the most frequent adjacent pair; ties go to the
/// lexicographically smallest (left, right).
inline MergeTable learn_bpe(const std::vector<std::string>& corpus_a, const std::vector<std::string>& corpus_b,
                            std::size_t num_ops, std::size_t min_frequency = 2) {
  auto counts = word_counts(corpus_a);
  for (const auto& [w, c] : word_counts(corpus_b)) counts[w] += c;
  if (counts.empty()) throw DataError("learn_bpe: corpora contain no words");

  struct Entry {
    std::vector<std::string> symbols;
    std::size_t count;
  };
  std::vector<Entry> words;
  words.reserve(counts.size());
  for (const auto& [w, c] : counts) words.push_back({initial_symbols(w), c});

  MergeTable table;
  while (table.size() < num_ops) {
    std::map<MergePair, std::size_t> pairs;
    for (const auto& e : words)
      for (std::size_t i = 0; i + 1 < e.symbols.size(); ++i) pairs[{e.symbols[i], e.symbols[i + 1]}] += e.count;
    const MergePair* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [p, c] : pairs) {
      if (c > best_count) {
        best = &p;
        best_count = c;
      }
    }
    if (!best || best_count < std::max<std::size_t>(min_frequency, 1)) break;
    const MergePair merge = *best;
    const std::string joined = merge.first + merge.second;
    for (auto& e : words) {
      std::vector<std::string> next;
      next.reserve(e.symbols.size());
      for (std::size_t i = 0; i < e.symbols.size(); ++i) {
        if (i + 1 < e.symbols.size() && e.symbols[i] == merge.first && e.symbols[i + 1] == merge.second) {
          next.push_back(joined);
          ++i;
        } else {
          next.push_back(e.symbols[i]);
        }
      }
      e.symbols = std::move(next);
    }
    table.add(merge.first, merge.second);
  }
  return table;
}

struct Segmentation {
  std::vector<std::string> units;
  std::vector<std::size_t> unknown;  // indices of fallback characters missing from the vocabulary
  bool unmapped_characters = false;  // transliteration passed characters through
};

/// Applies merges to words, optionally restricted to an allowed-unit
/// vocabulary (disallowed units are split by undoing their last merge until
/// every part is allowed or a single character), and optionally through a
/// transliteration map (merges match transliterated forms; units are emitted
/// in the original script).
class Segmenter {
 public:
  explicit Segmenter(MergeTable merges, std::optional<UnitVocabulary> allowed = std::nullopt,
                     std::optional<TransliterationMap> translit = std::nullopt)
      : merges_(std::move(merges)), allowed_(std::move(allowed)), translit_(std::move(translit)) {}

  const MergeTable& merges() const { return merges_; }

  std::vector<std::string> segment(std::string_view word) const { return segment_detailed(word).units; }

  Segmentation segment_detailed(std::string_view word) const {
    Segmentation out;
    if (word.empty()) return out;
    std::vector<Node> nodes;
    std::vector<std::size_t> seq;
    for (const auto& ch : utf8_chars(word)) {
      Node n;
      n.display = ch;
      if (translit_) {
        auto mapped = translit_->lookup(ch);
        if (!mapped) out.unmapped_characters = true;
        n.key = mapped ? *mapped : ch;
      } else {
        n.key = ch;
      }
      seq.push_back(nodes.size());
      nodes.push_back(std::move(n));
    }
    nodes[seq.back()].key += kEndOfWord;
    nodes[seq.back()].display += kEndOfWord;

    // Each merge in table order joins every adjacent occurrence, left to right.
    for (const auto& [left, right] : merges_.merges()) {
      if (seq.size() < 2) break;
      std::vector<std::size_t> next;
      next.reserve(seq.size());
      bool changed = false;
      for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i + 1 < seq.size() && nodes[seq[i]].key == left && nodes[seq[i + 1]].key == right) {
          Node merged;
          merged.key = left + right;
          merged.display = nodes[seq[i]].display + nodes[seq[i + 1]].display;
          merged.left = seq[i];
          merged.right = seq[i + 1];
          next.push_back(nodes.size());
          nodes.push_back(std::move(merged));
          changed = true;
          ++i;
        } else {
          next.push_back(seq[i]);
        }
      }
      if (changed) seq = std::move(next);
    }

    for (std::size_t i = 0; i < seq.size(); ++i) emit(nodes, seq[i], i + 1 == seq.size(), out);
    return out;
  }

  /// Segments every whitespace token of a line; units joined by spaces.
  std::string segment_line(std::string_view line, bool* unknown = nullptr, bool* unmapped = nullptr) const {
    std::vector<std::string> units;
    for (const auto& w : split_whitespace(line)) {
      Segmentation s = segment_detailed(w);
      if (unknown && !s.unknown.empty()) *unknown = true;
      if (unmapped && s.unmapped_characters) *unmapped = true;
      units.insert(units.end(), s.units.begin(), s.units.end());
    }
    return join(units);
  }

 private:
  struct Node {
    std::string key;
    std::string display;
    std::size_t left = npos;
    std::size_t right = npos;
    bool leaf() const { return left == npos; }
  };
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  static std::string surface(const Node& n, bool final) {
    std::string s = n.display;
    if (final) {
      if (ends_with(s, kEndOfWord)) s.resize(s.size() - kEndOfWord.size());
    } else {
      s += kContinuation;
    }
    return s;
  }

  void emit(const std::vector<Node>& nodes, std::size_t id, bool final, Segmentation& out) const {
    const Node& n = nodes[id];
    const std::string form = surface(n, final);
    if (!allowed_ || allowed_->allowed(form)) {
      out.units.push_back(form);
      return;
    }
    if (n.leaf()) {
      out.unknown.push_back(out.units.size());
      out.units.push_back(form);
      return;
    }
    emit(nodes, n.left, false, out);
    emit(nodes, n.right, final, out);
  }

  MergeTable merges_;
  std::optional<UnitVocabulary> allowed_;
  std::optional<TransliterationMap> translit_;
};

inline std::vector<std::string> apply_bpe(std::string_view word, const MergeTable& merges,
                                          const std::optional<UnitVocabulary>& allowed = std::nullopt) {
  return Segmenter(merges, allowed).segment(word);
}

inline Segmentation apply_bpe_transliterated(std::string_view word, const MergeTable& merges,
                                             const TransliterationMap& map,
                                             const std::optional<UnitVocabulary>& allowed = std::nullopt) {
  return Segmenter(merges, allowed, map).segment_detailed(word);
}

/// Joins units and strips continuation markers, restoring words.
inline std::string desegment(const std::vector<std::string>& units) {
  std::string out;
  bool at_word_start = true;
  for (const auto& u : units) {
    if (at_word_start && !out.empty()) out += ' ';
    at_word_start = !ends_with(u, kContinuation);
    out += at_word_start ? u : u.substr(0, u.size() - kContinuation.size());
  }
  return out;
}

inline std::string desegment_line(std::string_view line) { return desegment(split_whitespace(line)); }

}  // namespace deeprnn::subword
