#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "deeprnn/bleu.hpp"

using namespace deeprnn;

namespace {

// Straightforward corpus BLEU over joined n-gram strings, kept apart from
// the library so the two can disagree.
double reference_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  std::size_t match[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0}, hlen = 0, rlen = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto h = split_whitespace(hyps[s]);
    const auto r = split_whitespace(refs[s]);
    hlen += h.size();
    rlen += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::string, int> rc;
      for (std::size_t i = 0; i + n <= r.size(); ++i) rc[join({r.begin() + i, r.begin() + i + n}, "\t")]++;
      for (std::size_t i = 0; i + n <= h.size(); ++i) {
        ++total[n - 1];
        if (rc[join({h.begin() + i, h.begin() + i + n}, "\t")]-- > 0) ++match[n - 1];
      }
    }
  }
  double logsum = 0;
  int orders = 0;
  for (int n = 0; n < 4; ++n) {
    if (!total[n]) continue;
    if (!match[n]) return 0.0;
    logsum += std::log(static_cast<double>(match[n]) / total[n]);
    ++orders;
  }
  if (!orders || !hlen) return 0.0;
  const double bp = hlen < rlen ? std::exp(1.0 - static_cast<double>(rlen) / hlen) : 1.0;
  return bp * std::exp(logsum / orders);
}

std::vector<std::string> random_corpus(std::mt19937_64& rng, std::size_t n, int vocab) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    for (std::size_t k = 0, len = 1 + rng() % 12; k < len; ++k) s += (k ? " w" : "w") + std::to_string(rng() % vocab);
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(Bleu, IdentityIsExactlyOne) {
  const std::vector<std::string> c{"the cat sat on the mat", "a b c d e", "x"};
  EXPECT_EQ(corpus_bleu(c, c).bleu, 1.0);
}

TEST(Bleu, DisjointIsZero) {
  EXPECT_EQ(corpus_bleu({"a b c d"}, {"e f g h"}).bleu, 0.0);
}

TEST(Bleu, ShortHypothesisPaysOnlyTheBrevityPenalty) {
  const BleuReport r = corpus_bleu({"the cat sat"}, {"the cat sat on"});
  EXPECT_NEAR(r.bleu, std::exp(-1.0 / 3.0), 1e-15);
  EXPECT_NEAR(r.bleu, 0.716531, 1e-6);
  EXPECT_EQ(r.totals[3], 0u);
  EXPECT_EQ(r.hyp_length, 3u);
  EXPECT_EQ(r.ref_length, 4u);
}

TEST(Bleu, ClippedCountsAndHandComputedScore) {
  // "the" appears three times but the reference only licenses two
  const BleuReport r = corpus_bleu({"the the the cat sat down"}, {"the cat sat on the mat"});
  EXPECT_EQ(r.matches[0], 4u);  // the x2, cat, sat
  EXPECT_EQ(r.totals[0], 6u);
  EXPECT_EQ(r.matches[1], 2u);  // "the cat", "cat sat"
  EXPECT_EQ(r.matches[2], 1u);
  EXPECT_EQ(r.matches[3], 0u);
  EXPECT_EQ(r.bleu, 0.0);
  const BleuReport s = corpus_bleu({"the cat sat on a mat"}, {"the cat sat on the mat"});
  const double want = std::pow((5.0 / 6) * (3.0 / 5) * (2.0 / 4) * (1.0 / 3), 0.25);
  EXPECT_NEAR(s.bleu, want, 1e-15);
}

TEST(Bleu, MatchesIndependentOracleOnRandomCorpora) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto hyps = random_corpus(rng, 1 + rng() % 10, 6);
    const auto refs = random_corpus(rng, hyps.size(), 6);
    EXPECT_NEAR(corpus_bleu(hyps, refs).bleu, reference_bleu(hyps, refs), 1e-12);
  }
}

TEST(Bleu, InvariantUnderSentencePermutation) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto hyps = random_corpus(rng, 8, 5);
    auto refs = random_corpus(rng, 8, 5);
    const double before = corpus_bleu(hyps, refs).bleu;
    std::vector<std::size_t> order(8);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::string> h2, r2;
    for (std::size_t i : order) {
      h2.push_back(hyps[i]);
      r2.push_back(refs[i]);
    }
    EXPECT_NEAR(corpus_bleu(h2, r2).bleu, before, 1e-15);
  }
}

TEST(Bleu, InvariantUnderTokenRelabeling) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto hyps = random_corpus(rng, 6, 5);
    const auto refs = random_corpus(rng, 6, 5);
    auto relabel = [](const std::vector<std::string>& c) {
      std::vector<std::string> out;
      for (const auto& s : c) {
        std::vector<std::string> t;
        for (const auto& w : split_whitespace(s)) t.push_back("tok_" + w + "_x");
        out.push_back(join(t));
      }
      return out;
    };
    EXPECT_EQ(corpus_bleu(relabel(hyps), relabel(refs)).bleu, corpus_bleu(hyps, refs).bleu);
  }
}

TEST(Bleu, BoundedBetweenZeroAndOne) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto hyps = random_corpus(rng, 5, 3);
    const auto refs = random_corpus(rng, 5, 3);
    const double b = corpus_bleu(hyps, refs).bleu;
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, 1.0);
  }
}

TEST(Bleu, Errors) {
  EXPECT_THROW(corpus_bleu(std::vector<std::string>{"a"}, std::vector<std::string>{"a", "b"}), DataError);
  EXPECT_THROW(corpus_bleu(std::vector<std::string>{}, std::vector<std::string>{}), DataError);
  EXPECT_THROW(corpus_bleu(std::vector<std::string>{"a"}, std::vector<std::string>{"a"}, 0), UsageError);
}

TEST(Bleu, EmptyHypothesesScoreZero) {
  EXPECT_EQ(corpus_bleu({""}, {"a b"}).bleu, 0.0);
}

TEST(Bleu, ReportText) {
  const std::string text = corpus_bleu({"the cat sat"}, {"the cat sat on"}).to_text();
  EXPECT_NE(text.find("bleu:             0.716531"), std::string::npos) << text;
  EXPECT_NE(text.find("p4:               0.000000 (0/0)"), std::string::npos) << text;
}
