#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "deeprnn/errors.hpp"
#include "deeprnn/vocab.hpp"

namespace deeprnn {

/// Corpus-level BLEU with clipped n-gram counts, single reference, no smoothing.
struct BleuReport {
  double bleu = 0;
  std::vector<double> precisions;
  std::vector<std::size_t> matches;
  std::vector<std::size_t> totals;
  double brevity_penalty = 0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  std::string to_text() const {
    std::ostringstream os;
    auto line = [&](const std::string& key, const std::string& value) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%-18s", (key + ":").c_str());
      os << buf << value << "\n";
    };
    auto fmt = [](double v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", v);
      return std::string(buf);
    };
    line("bleu", fmt(bleu));
    for (std::size_t n = 0; n < precisions.size(); ++n) {
      line("p" + std::to_string(n + 1), fmt(precisions[n]) + " (" + std::to_string(matches[n]) +
                                            "/" + std::to_string(totals[n]) + ")");
    }
    line("brevity_penalty", fmt(brevity_penalty));
    line("hyp_length", std::to_string(hyp_length));
    line("ref_length", std::to_string(ref_length));
    return os.str();
  }
};

namespace detail {

using Ngrams = std::map<std::vector<std::string>, std::size_t>;

inline Ngrams count_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  Ngrams counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace detail

inline BleuReport corpus_bleu(const std::vector<std::vector<std::string>>& hypotheses,
                              const std::vector<std::vector<std::string>>& references,
                              std::size_t max_n = 4) {
  if (hypotheses.size() != references.size()) {
    throw DataError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                    std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw DataError("bleu: empty corpus");
  if (max_n == 0) throw UsageError("bleu: max_n must be positive");

  BleuReport r;
  r.matches.assign(max_n, 0);
  r.totals.assign(max_n, 0);
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    r.hyp_length += hyp.size();
    r.ref_length += ref.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      auto hc = detail::count_ngrams(hyp, n);
      auto rc = detail::count_ngrams(ref, n);
      for (const auto& [gram, count] : hc) {
        auto it = rc.find(gram);
        const std::size_t clip = it == rc.end() ? 0 : it->second;
        r.matches[n - 1] += std::min(count, clip);
        r.totals[n - 1] += count;
      }
    }
  }
  // Orders the hypotheses are too short to contain at all do not enter the
  // geometric mean; a defined precision of zero still zeroes the score.
  r.precisions.resize(max_n);
  double log_sum = 0;
  std::size_t orders = 0;
  bool zero = false;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (r.totals[n] == 0) continue;
    r.precisions[n] = static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]);
    ++orders;
    if (r.matches[n] == 0) {
      zero = true;
    } else {
      log_sum += std::log(r.precisions[n]);
    }
  }
  if (r.hyp_length == 0) {
    r.brevity_penalty = 0;
  } else if (r.hyp_length < r.ref_length) {
    r.brevity_penalty =
        std::exp(1.0 - static_cast<double>(r.ref_length) / static_cast<double>(r.hyp_length));
  } else {
    r.brevity_penalty = 1.0;
  }
  r.bleu = (zero || orders == 0) ? 0.0
                                 : r.brevity_penalty * std::exp(log_sum / static_cast<double>(orders));
  return r;
}

/// Whitespace-tokenizing convenience overload.
inline BleuReport corpus_bleu(const std::vector<std::string>& hypotheses,
                              const std::vector<std::string>& references, std::size_t max_n = 4) {
  std::vector<std::vector<std::string>> h, ref;
  h.reserve(hypotheses.size());
  ref.reserve(references.size());
  for (const auto& s : hypotheses) h.push_back(split_whitespace(s));
  for (const auto& s : references) ref.push_back(split_whitespace(s));
  return corpus_bleu(h, ref, max_n);
}

}  // namespace deeprnn
