#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "deeprnn/errors.hpp"

namespace deeprnn {

enum class Provenance { parallel, synthetic, copied };

inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::parallel: return "parallel";
    case Provenance::synthetic: return "synthetic";
    case Provenance::copied: return "copied";
  }
  return "?";
}

inline Provenance parse_provenance(const std::string& s) {
  if (s == "parallel") return Provenance::parallel;
  if (s == "synthetic") return Provenance::synthetic;
  if (s == "copied") return Provenance::copied;
  throw UsageError("unknown corpus tag '" + s + "'");
}

struct SentencePair {
  std::string source;
  std::string target;
  Provenance tag = Provenance::parallel;

  friend bool operator==(const SentencePair&, const SentencePair&) = default;
};

using ParallelCorpus = std::vector<SentencePair>;

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  for (const auto& l : lines) out << l << '\n';
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline ParallelCorpus read_parallel(const std::filesystem::path& source,
                                    const std::filesystem::path& target,
                                    Provenance tag = Provenance::parallel) {
  auto src = read_lines(source);
  auto tgt = read_lines(target);
  if (src.size() != tgt.size()) {
    throw DataError("parallel files differ in length: " + source.string() + " (" +
                    std::to_string(src.size()) + ") vs " + target.string() + " (" +
                    std::to_string(tgt.size()) + ")");
  }
  ParallelCorpus out;
  out.reserve(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out.push_back({src[i], tgt[i], tag});
  return out;
}

/// 64-bit FNV-1a, used for artifact and corpus fingerprints.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace deeprnn
