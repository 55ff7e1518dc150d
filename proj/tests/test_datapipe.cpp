#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "deeprnn/datapipe.hpp"

using namespace deeprnn;
using namespace deeprnn::datapipe;

namespace {

ParallelCorpus numbered(const std::string& prefix, std::size_t n) {
  ParallelCorpus c;
  for (std::size_t i = 0; i < n; ++i) c.push_back({prefix + std::to_string(i), "t" + prefix + std::to_string(i)});
  return c;
}

std::map<Provenance, std::size_t> tag_counts(const ParallelCorpus& c) {
  std::map<Provenance, std::size_t> out;
  for (const auto& p : c) ++out[p.tag];
  return out;
}

std::vector<std::string> random_lines(std::mt19937_64& rng, const std::vector<std::string>& words, std::size_t n,
                                      std::size_t min_len, std::size_t max_len) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    for (std::size_t k = 0, len = min_len + rng() % (max_len - min_len + 1); k < len; ++k) {
      if (k) s += " ";
      s += words[rng() % words.size()];
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(CopiedCorpus, PairsLinesWithThemselves) {
  const auto c = make_copied({"a b", "", "c"});
  ASSERT_EQ(c.size(), 3u);
  for (const auto& p : c) {
    EXPECT_EQ(p.source, p.target);
    EXPECT_EQ(p.tag, Provenance::copied);
  }
  EXPECT_TRUE(make_copied({}).empty());
}

TEST(BackTranslation, IdentityTranslatorAndSkips) {
  const std::vector<std::string> mono{"x y", "fail", "z", "none"};
  const auto bt = back_translate(mono, [](const std::string& line) -> std::optional<std::string> {
    if (line == "fail") throw DataError("boom");
    if (line == "none") return std::nullopt;
    return line;
  });
  EXPECT_EQ(bt.skipped, 2u);
  ASSERT_EQ(bt.corpus.size(), 2u);
  EXPECT_EQ(bt.corpus[0], (SentencePair{"x y", "x y", Provenance::synthetic}));
  EXPECT_EQ(bt.corpus[1].target, "z");
}

TEST(BackTranslation, SyntheticSourceComesFromTheReverseSystem) {
  const auto bt = back_translate({"a b c"}, [](const std::string& line) -> std::optional<std::string> {
    auto t = split_whitespace(line);
    std::reverse(t.begin(), t.end());
    return join(t);
  });
  EXPECT_EQ(bt.corpus.at(0).source, "c b a");
  EXPECT_EQ(bt.corpus.at(0).target, "a b c");
}

TEST(BackTranslation, ModelEnsembleProducesOneLinePerInput) {
  ModelSpec s;
  s.family = Family::deep_transition;
  s.enc_depth = 1;
  s.dec_depth = 2;
  s.embedding_dim = 4;
  s.hidden_dim = 5;
  const Vocabulary in = Vocabulary::build({"a b c"});
  const Vocabulary out = Vocabulary::build({"x y"});
  s.src_vocab = static_cast<int>(in.size());
  s.tgt_vocab = static_cast<int>(out.size());
  const Model m = Model::initialize(s, 3);
  const auto bt = back_translate({"a b", "c", ""}, {&m}, in, out, 2);
  EXPECT_EQ(bt.corpus.size(), 2u);
  EXPECT_EQ(bt.skipped, 1u);
  for (const auto& p : bt.corpus)
    for (const auto& w : split_whitespace(p.source)) EXPECT_TRUE(out.contains(w));
}

TEST(Mix, EqualRatioOversamplesTheSmallerComponent) {
  CorpusMix m{{numbered("p", 4), Provenance::parallel, 1, "p"}, {numbered("s", 2), Provenance::synthetic, 1, "s"}};
  EXPECT_EQ(mix_sizes(m), (std::vector<std::size_t>{4, 4}));
  const auto out = mix(m, 1);
  EXPECT_EQ(out.size(), 8u);
  const auto tags = tag_counts(out);
  EXPECT_EQ(tags.at(Provenance::parallel), 4u);
  EXPECT_EQ(tags.at(Provenance::synthetic), 4u);
}

TEST(Mix, RatiosOneTwoTwo) {
  CorpusMix m{{numbered("p", 3), Provenance::parallel, 1, "p"},
              {numbered("s", 2), Provenance::synthetic, 2, "s"},
              {numbered("c", 6), Provenance::copied, 2, "c"}};
  EXPECT_EQ(mix_sizes(m), (std::vector<std::size_t>{3, 6, 6}));
  const auto tags = tag_counts(mix(m, 4));
  EXPECT_EQ(tags.at(Provenance::parallel), 3u);
  EXPECT_EQ(tags.at(Provenance::synthetic), 6u);
  EXPECT_EQ(tags.at(Provenance::copied), 6u);
}

TEST(Mix, PartialCopiesHaveNoDuplicatesBeyondWholeRepeats) {
  CorpusMix m{{numbered("p", 10), Provenance::parallel, 1, "p"}, {numbered("s", 4), Provenance::synthetic, 1, "s"}};
  const auto out = mix(m, 9);
  std::map<std::string, std::size_t> seen;
  for (const auto& p : out)
    if (p.tag == Provenance::synthetic) ++seen[p.source];
  ASSERT_EQ(seen.size(), 4u);
  std::size_t threes = 0;
  for (const auto& [_, n] : seen) {
    EXPECT_TRUE(n == 2 || n == 3);
    threes += n == 3;
  }
  EXPECT_EQ(threes, 2u);  // 10 = 2 * 4 + 2
}

TEST(Mix, SeedDeterminesTheOrder) {
  CorpusMix m{{numbered("p", 20), Provenance::parallel, 1, "p"}, {numbered("s", 7), Provenance::synthetic, 1, "s"}};
  EXPECT_EQ(mix(m, 3), mix(m, 3));
  EXPECT_NE(mix(m, 3), mix(m, 4));
}

TEST(Mix, Errors) {
  EXPECT_THROW(mix_sizes({}), UsageError);
  EXPECT_THROW(mix_sizes({{numbered("p", 2), Provenance::parallel, 0, "p"}}), UsageError);
  EXPECT_THROW(mix_sizes({{ParallelCorpus{}, Provenance::parallel, 1, "p"}}), DataError);
}

TEST(MixManifest, ParsesLinesAndComments) {
  const auto e = parse_mix_manifest("# header\na.src a.tgt parallel 1\n\nb.src b.tgt synthetic 2  # bt\n", "/data");
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].source, std::filesystem::path("/data/a.src"));
  EXPECT_EQ(e[1].tag, Provenance::synthetic);
  EXPECT_EQ(e[1].ratio, 2u);
  EXPECT_THROW(parse_mix_manifest("a b parallel\n"), DataError);
  EXPECT_THROW(parse_mix_manifest("a b unknown 1\n"), DataError);
  EXPECT_THROW(parse_mix_manifest("a b parallel 0\n"), DataError);
  EXPECT_THROW(parse_mix_manifest("a b parallel 1x\n"), DataError);
}

TEST(NgramLM, BigramHandCounts) {
  // vocabulary {<unk>, </s>, a, b}; smoothing 0.1
  const NgramLM lm({"a b", "a"}, 2);
  EXPECT_EQ(lm.vocab_size(), 4u);
  EXPECT_NEAR(lm.probability({}, "a"), 2.1 / 2.4, 1e-15);
  EXPECT_NEAR(lm.probability({"a"}, "b"), 1.1 / 2.4, 1e-15);
  EXPECT_NEAR(lm.probability({"a"}, "</s>"), 1.1 / 2.4, 1e-15);
  EXPECT_NEAR(lm.probability({"b"}, "</s>"), 1.1 / 1.4, 1e-15);
  EXPECT_NEAR(lm.probability({"a"}, "zebra"), 0.1 / 2.4, 1e-15);
  EXPECT_NEAR(lm.probability({"zebra"}, "a"), 0.25, 1e-15);
  const Real h = -(std::log(2.1 / 2.4) + std::log(1.1 / 2.4) + std::log(1.1 / 1.4)) / 3;
  EXPECT_NEAR(lm.cross_entropy("a b"), h, 1e-13);
}

TEST(NgramLM, EveryContextIsADistribution) {
  std::mt19937_64 rng(2);
  const std::vector<std::string> words{"a", "b", "c", "d", "e"};
  for (std::size_t order : {1u, 2u, 3u}) {
    const NgramLM lm(random_lines(rng, words, 50, 1, 6), order);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<std::string> ctx;
      for (std::size_t k = 0, n = rng() % 4; k < n; ++k) ctx.push_back(trial % 5 == 0 ? "zzz" : words[rng() % 5]);
      Real total = 0;
      for (const auto& w : lm.vocabulary()) total += lm.probability(ctx, w);
      EXPECT_NEAR(total, 1.0, 1e-12) << "order " << order;
    }
  }
}

TEST(NgramLM, ClosedVocabularyCountsOtherTokensAsUnknown) {
  // vocabulary {<unk>, </s>, a}; b and c are trained as <unk>
  const NgramLM lm({"a b", "c"}, 2, 0.1, std::set<std::string>{"a"});
  EXPECT_EQ(lm.vocab_size(), 3u);
  EXPECT_NEAR(lm.probability({}, "a"), 1.1 / 2.3, 1e-15);
  EXPECT_NEAR(lm.probability({}, "zebra"), 1.1 / 2.3, 1e-15);
  EXPECT_NEAR(lm.probability({"a"}, "b"), 1.1 / 1.3, 1e-15);
  EXPECT_NEAR(lm.probability({"q"}, "</s>"), 2.1 / 2.3, 1e-15);
}

TEST(NgramLM, Errors) {
  EXPECT_THROW(NgramLM({"a"}, 0), UsageError);
  EXPECT_THROW(NgramLM({"a"}, 2, 0.0), UsageError);
  EXPECT_THROW(NgramLM({}, 2), DataError);
}

TEST(MooreLewis, IdenticalModelsScoreZero) {
  const std::vector<std::string> corpus{"a b c", "b c d", "a a a"};
  const NgramLM a(corpus, 2), b(corpus, 2);
  for (const auto& s : {"a b", "d d d", "q"}) EXPECT_EQ(moore_lewis_score(s, a, b), 0.0);
}

TEST(MooreLewis, SwappingModelsNegatesTheScore) {
  const NgramLM in({"a b c", "a b"}, 2), gen({"x y z", "a x"}, 2);
  for (const auto& s : {"a b", "x y", "a y z"}) EXPECT_EQ(moore_lewis_score(s, in, gen), -moore_lewis_score(s, gen, in));
  EXPECT_LT(moore_lewis_score("a b c", in, gen), moore_lewis_score("x y z", in, gen));
}

TEST(MooreLewis, SharedVocabularyRanksInDomainFirst) {
  // With separate vocabularies the in-domain model spreads its unknown mass
  // thinly and general-only words look cheap; a shared one puts them right.
  std::mt19937_64 rng(4);
  const std::vector<std::string> in_words{"a", "b", "c"};
  std::vector<std::string> gen_words;
  for (int i = 0; i < 200; ++i) gen_words.push_back("g" + std::to_string(i));
  const auto in_corpus = random_lines(rng, in_words, 100, 3, 8);
  auto general = random_lines(rng, gen_words, 90, 10, 12);
  for (const auto& s : random_lines(rng, in_words, 10, 10, 12)) general.push_back(s);
  const auto lms = moore_lewis_models(in_corpus, general, 2);
  EXPECT_EQ(lms.general.vocabulary(), lms.in_domain.vocabulary());
  const Selection sel = moore_lewis_select(general, lms.in_domain, lms.general, 10);
  for (std::size_t i : sel.indices) EXPECT_GE(i, 90u);
  const Selection naive = moore_lewis_select(general, NgramLM(in_corpus, 2), NgramLM(general, 2), 10);
  EXPECT_LT(*std::min_element(naive.indices.begin(), naive.indices.end()), 90u);
}

TEST(MooreLewis, SelectionRespectsLengthRangeAndOrder) {
  std::mt19937_64 rng(3);
  const std::vector<std::string> in_words{"alpha", "beta", "gamma"};
  const std::vector<std::string> gen_words{"alpha", "beta", "gamma", "delta", "eps", "zeta", "eta"};
  const NgramLM in(random_lines(rng, in_words, 200, 3, 12), 2);
  const auto general = random_lines(rng, gen_words, 300, 1, 20);
  const NgramLM gen(general, 2);
  const Selection sel = moore_lewis_select(general, in, gen, 50, 5, 15);
  ASSERT_EQ(sel.indices.size(), 50u);
  for (std::size_t k = 0; k < sel.indices.size(); ++k) {
    const auto len = split_whitespace(general[sel.indices[k]]).size();
    EXPECT_GE(len, 5u);
    EXPECT_LE(len, 15u);
    if (k) {
      EXPECT_LE(sel.scores[k - 1], sel.scores[k]);
    }
    EXPECT_EQ(sel.scores[k], moore_lewis_score(general[sel.indices[k]], in, gen));
  }
  std::size_t in_range = 0;
  for (const auto& s : general) {
    const auto len = split_whitespace(s).size();
    in_range += len >= 5 && len <= 15;
  }
  EXPECT_EQ(sel.candidates, in_range);
  EXPECT_FALSE(sel.truncated_request);
  EXPECT_TRUE(moore_lewis_select(general, in, gen, 10000, 5, 15).truncated_request);
  EXPECT_THROW(moore_lewis_select(general, in, gen, 5, 10, 4), UsageError);
}
