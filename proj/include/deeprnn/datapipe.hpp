#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "deeprnn/corpus.hpp"
#include "deeprnn/decode.hpp"
#include "deeprnn/errors.hpp"
#include "deeprnn/model.hpp"
#include "deeprnn/vocab.hpp"

namespace deeprnn::datapipe {

/// Monolingual lines paired with themselves.
inline ParallelCorpus make_copied(const std::vector<std::string>& mono) {
  ParallelCorpus out;
  out.reserve(mono.size());
  for (const auto& line : mono) out.push_back({line, line, Provenance::copied});
  return out;
}

struct BackTranslation {
  ParallelCorpus corpus;
  std::size_t skipped = 0;
};

/// Translates target-language lines with a reverse system; the output
/// becomes the synthetic source. A translator that throws or returns
/// nothing skips that sentence.
inline BackTranslation back_translate(const std::vector<std::string>& mono,
                                      const std::function<std::optional<std::string>(const std::string&)>& reverse) {
  BackTranslation out;
  for (const auto& line : mono) {
    std::optional<std::string> src;
    try {
      src = reverse(line);
    } catch (const Error&) {
      src.reset();
    }
    if (!src) {
      ++out.skipped;
      continue;
    }
    out.corpus.push_back({*src, line, Provenance::synthetic});
  }
  return out;
}

/// Back-translation with an ensemble of reverse models (target -> source).
inline BackTranslation back_translate(const std::vector<std::string>& mono, const std::vector<const Model*>& reverse,
                                      const Vocabulary& input_vocab, const Vocabulary& output_vocab,
                                      std::size_t beam) {
  decode::check_ensemble(reverse);
  decode::BeamConfig config;
  config.beam = beam;
  config.nbest = 1;
  return back_translate(mono, [&](const std::string& line) -> std::optional<std::string> {
    const auto ids = input_vocab.encode(line);
    if (ids.empty()) return std::nullopt;
    const auto results = decode::translate_ids(reverse, ids, config);
    if (results.empty()) return std::nullopt;
    return output_vocab.decode(results.front().tokens);
  });
}

struct MixComponent {
  ParallelCorpus corpus;
  Provenance tag = Provenance::parallel;
  std::size_t ratio = 1;
  std::string name;  // for reports
};

using CorpusMix = std::vector<MixComponent>;

/// Realized size of every component. The component with the most sentences
/// per ratio unit keeps its size; the others are scaled to
/// round(size_ref * ratio_i / ratio_ref), which only ever oversamples.
inline std::vector<std::size_t> mix_sizes(const CorpusMix& mix) {
  if (mix.empty()) throw UsageError("mix: no components");
  std::size_t ref = 0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    if (mix[i].ratio == 0) throw UsageError("mix: ratios must be positive");
    if (mix[i].corpus.empty()) throw DataError("mix: component '" + mix[i].name + "' is empty");
    // size_i / ratio_i > size_ref / ratio_ref
    if (mix[i].corpus.size() * mix[ref].ratio > mix[ref].corpus.size() * mix[i].ratio) ref = i;
  }
  const std::size_t base = mix[ref].corpus.size();
  const std::size_t base_ratio = mix[ref].ratio;
  std::vector<std::size_t> sizes;
  for (const auto& c : mix) sizes.push_back((2 * base * c.ratio + base_ratio) / (2 * base_ratio));
  return sizes;
}

/// Materializes a mix: whole repeats plus a seeded partial copy for the
/// remainder, then one seeded shuffle. Component tags replace pair tags.
inline ParallelCorpus mix(const CorpusMix& components, std::uint64_t seed) {
  const auto sizes = mix_sizes(components);
  std::mt19937_64 rng(seed);
  ParallelCorpus out;
  for (std::size_t i = 0; i < components.size(); ++i) {
    const auto& c = components[i];
    const std::size_t n = c.corpus.size();
    const std::size_t repeats = sizes[i] / n;
    const std::size_t rest = sizes[i] % n;
    for (std::size_t r = 0; r < repeats; ++r)
      for (const auto& p : c.corpus) out.push_back({p.source, p.target, c.tag});
    if (rest) {
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(rest);
      std::sort(idx.begin(), idx.end());
      for (std::size_t k : idx) out.push_back({c.corpus[k].source, c.corpus[k].target, c.tag});
    }
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

struct MixEntry {
  std::filesystem::path source;
  std::filesystem::path target;
  Provenance tag = Provenance::parallel;
  std::size_t ratio = 1;
};

/// Mix manifest: one component per line, `source-path target-path tag ratio`.
/// Relative paths resolve against `base`; `#` starts a comment.
inline std::vector<MixEntry> parse_mix_manifest(const std::string& text, const std::filesystem::path& base = {}) {
  std::vector<MixEntry> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto f = split_whitespace(line);
    if (f.empty()) continue;
    const std::string where = "mix manifest line " + std::to_string(lineno);
    if (f.size() != 4) throw DataError(where + ": expected 'source-path target-path tag ratio'");
    MixEntry e;
    e.source = base.empty() ? std::filesystem::path(f[0]) : base / f[0];
    e.target = base.empty() ? std::filesystem::path(f[1]) : base / f[1];
    try {
      e.tag = parse_provenance(f[2]);
    } catch (const UsageError& err) {
      throw DataError(where + ": " + err.what());
    }
    std::size_t used = 0;
    long long r = 0;
    try {
      r = std::stoll(f[3], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != f[3].size() || r <= 0) throw DataError(where + ": ratio must be a positive integer");
    e.ratio = static_cast<std::size_t>(r);
    out.push_back(std::move(e));
  }
  return out;
}

inline CorpusMix load_mix(const std::vector<MixEntry>& entries) {
  CorpusMix m;
  for (const auto& e : entries) {
    MixComponent c;
    c.corpus = read_parallel(e.source, e.target, e.tag);
    c.tag = e.tag;
    c.ratio = e.ratio;
    c.name = e.source.string();
    m.push_back(std::move(c));
  }
  return m;
}

inline constexpr Real kLmSmoothing = 0.1;
inline constexpr const char* kLmUnknown = "<unk>";
inline constexpr const char* kLmEnd = "</s>";
inline constexpr const char* kLmStart = "<s>";

/// Additively smoothed word n-gram model. Every context defines a proper
/// distribution over the vocabulary plus `<unk>` and `</s>`. The vocabulary
/// is the training words unless a closed one is given, in which case other
/// training tokens are counted as `<unk>`.
class NgramLM {
 public:
  NgramLM(const std::vector<std::string>& corpus, std::size_t order, Real smoothing = kLmSmoothing,
          std::optional<std::set<std::string>> closed_vocabulary = std::nullopt)
      : order_(order), smoothing_(smoothing), closed_(closed_vocabulary.has_value()) {
    if (order == 0) throw UsageError("n-gram order must be at least 1");
    if (!(smoothing > 0)) throw UsageError("smoothing constant must be positive");
    if (corpus.empty()) throw DataError("n-gram LM: empty corpus");
    if (closed_vocabulary) vocab_ = std::move(*closed_vocabulary);
    vocab_.insert(kLmUnknown);
    vocab_.insert(kLmEnd);
    for (const auto& line : corpus) {
      const auto seq = training_sequence(split_whitespace(line));
      for (std::size_t i = order_ - 1; i < seq.size(); ++i) {
        const std::string ctx = context_key(seq, i);
        ++ngrams_[ctx + kSep + seq[i]];
        ++contexts_[ctx];
      }
    }
  }

  std::size_t order() const { return order_; }
  Real smoothing() const { return smoothing_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  const std::set<std::string>& vocabulary() const { return vocab_; }

  /// P(word | context), context given as the preceding words (older first);
  /// only the last order-1 are used, padded with `<s>`.
  Real probability(const std::vector<std::string>& context, const std::string& word) const {
    std::vector<std::string> seq(order_ - 1, kLmStart);
    for (const auto& w : context) seq.push_back(map_word(w));
    seq.push_back(word == kLmEnd ? word : map_word(word));
    return probability_at(seq, seq.size() - 1);
  }

  /// Per-token cross-entropy in nats, `</s>` included.
  Real cross_entropy(const std::string& sentence) const {
    const auto seq = scoring_sequence(split_whitespace(sentence));
    Real nll = 0;
    std::size_t n = 0;
    for (std::size_t i = order_ - 1; i < seq.size(); ++i) {
      nll -= std::log(probability_at(seq, i));
      ++n;
    }
    return nll / static_cast<Real>(n);
  }

  Real perplexity(const std::vector<std::string>& corpus) const {
    Real nll = 0;
    std::size_t n = 0;
    for (const auto& s : corpus) {
      const std::size_t tokens = split_whitespace(s).size() + 1;
      nll += cross_entropy(s) * static_cast<Real>(tokens);
      n += tokens;
    }
    if (n == 0) throw DataError("perplexity: empty corpus");
    return std::exp(nll / static_cast<Real>(n));
  }

 private:
  static constexpr char kSep = '\x1f';

  std::string map_word(const std::string& w) const { return vocab_.count(w) ? w : kLmUnknown; }

  // `<s>`-padded sequences ending in `</s>`; an open vocabulary grows here.
  std::vector<std::string> training_sequence(const std::vector<std::string>& words) {
    std::vector<std::string> seq(order_ - 1, kLmStart);
    for (const auto& w : words) {
      if (closed_) {
        seq.push_back(map_word(w));
        continue;
      }
      vocab_.insert(w);
      seq.push_back(w);
    }
    seq.push_back(kLmEnd);
    return seq;
  }

  std::vector<std::string> scoring_sequence(const std::vector<std::string>& words) const {
    std::vector<std::string> seq(order_ - 1, kLmStart);
    for (const auto& w : words) seq.push_back(map_word(w));
    seq.push_back(kLmEnd);
    return seq;
  }

  std::string context_key(const std::vector<std::string>& seq, std::size_t i) const {
    std::string key;
    for (std::size_t k = i + 1 - order_; k < i; ++k) {
      key += seq[k];
      key += kSep;
    }
    return key;
  }

  Real probability_at(const std::vector<std::string>& seq, std::size_t i) const {
    const std::string ctx = context_key(seq, i);
    auto c = ngrams_.find(ctx + kSep + seq[i]);
    auto h = contexts_.find(ctx);
    const Real num = (c == ngrams_.end() ? 0.0 : static_cast<Real>(c->second)) + smoothing_;
    const Real den = (h == contexts_.end() ? 0.0 : static_cast<Real>(h->second)) +
                     smoothing_ * static_cast<Real>(vocab_.size());
    return num / den;
  }

  std::size_t order_;
  Real smoothing_;
  bool closed_;
  std::set<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> ngrams_;
  std::unordered_map<std::string, std::size_t> contexts_;
};

inline NgramLM train_ngram_lm(const std::vector<std::string>& corpus, std::size_t order) {
  return NgramLM(corpus, order);
}

/// In-domain and general models sharing the in-domain vocabulary, so an
/// out-of-domain word is `<unk>` in both and its cost cancels in the
/// difference instead of rewarding sentences the in-domain model never saw.
struct DomainModels {
  NgramLM in_domain;
  NgramLM general;
};

inline DomainModels moore_lewis_models(const std::vector<std::string>& in_domain_corpus,
                                       const std::vector<std::string>& general_corpus, std::size_t order,
                                       Real smoothing = kLmSmoothing) {
  std::set<std::string> vocab;
  for (const auto& line : in_domain_corpus)
    for (const auto& w : split_whitespace(line)) vocab.insert(w);
  return {NgramLM(in_domain_corpus, order, smoothing, vocab), NgramLM(general_corpus, order, smoothing, vocab)};
}

/// Cross-entropy difference H_in(s) - H_gen(s); lower is more in-domain.
inline Real moore_lewis_score(const std::string& sentence, const NgramLM& in_domain, const NgramLM& general) {
  return in_domain.cross_entropy(sentence) - general.cross_entropy(sentence);
}

struct Selection {
  std::vector<std::size_t> indices;  // into the general corpus, best first
  std::vector<Real> scores;          // aligned with indices
  std::size_t candidates = 0;        // sentences inside the length range
  bool truncated_request = false;    // top_k exceeded the candidates
};

/// Keeps the top_k lowest-scoring sentences among those whose token count
/// lies in [min_len, max_len]; ties keep corpus order.
inline Selection moore_lewis_select(const std::vector<std::string>& general_corpus, const NgramLM& in_domain,
                                    const NgramLM& general, std::size_t top_k, std::size_t min_len = 10,
                                    std::size_t max_len = 80) {
  if (min_len > max_len) throw UsageError("select: min length exceeds max length");
  std::vector<std::pair<Real, std::size_t>> scored;
  for (std::size_t i = 0; i < general_corpus.size(); ++i) {
    const std::size_t len = split_whitespace(general_corpus[i]).size();
    if (len < min_len || len > max_len) continue;
    scored.emplace_back(moore_lewis_score(general_corpus[i], in_domain, general), i);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  Selection sel;
  sel.candidates = scored.size();
  sel.truncated_request = top_k > scored.size();
  const std::size_t keep = std::min(top_k, scored.size());
  for (std::size_t k = 0; k < keep; ++k) {
    sel.indices.push_back(scored[k].second);
    sel.scores.push_back(scored[k].first);
  }
  return sel;
}

}  // namespace deeprnn::datapipe
