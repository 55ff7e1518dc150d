#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "deeprnn/autodiff.hpp"
#include "deeprnn/bleu.hpp"
#include "deeprnn/checkpoint.hpp"
#include "deeprnn/errors.hpp"
#include "deeprnn/model.hpp"
#include "deeprnn/subword.hpp"
#include "deeprnn/tensor.hpp"
#include "deeprnn/vocab.hpp"

namespace deeprnn::decode {

/// Incremental scorer driven by the search. Each call extends the rows kept
/// from the previous call: `parents[i]` is the previous row that row i
/// continues and `last[i]` the token it appended. The first call receives
/// parents {0} and last {-1}. Returns one row of log-probabilities per entry.
class Session {
 public:
  virtual ~Session() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual Tensor advance(const std::vector<std::size_t>& parents, const std::vector<int>& last) = 0;
};

/// Session over one Model and one source sentence.
class ModelSession : public Session {
 public:
  ModelSession(const Model& model, const std::vector<int>& source) : model_(model), graph_(false) {
    enc_ = model_.encode(graph_, {source});
  }

  std::size_t vocab_size() const override { return static_cast<std::size_t>(model_.spec().tgt_vocab); }

  Tensor advance(const std::vector<std::size_t>& parents, const std::vector<int>& last) override {
    if (parents.size() != last.size() || parents.empty()) throw ShapeError("session: bad row selection");
    if (!started_) {
      state_ = model_.initial_state(graph_, enc_);
      rows_ = 1;
      started_ = true;
    }
    for (std::size_t p : parents)
      if (p >= rows_) throw ShapeError("session: parent row out of range");
    DecoderState state = model_.select_rows(graph_, state_, parents);
    if (!expanded_ || expanded_->batch != parents.size()) {
      expanded_ = model_.select_rows(graph_, enc_, std::vector<std::size_t>(parents.size(), 0));
    }
    StepOutput out = model_.step(graph_, *expanded_, state, last);
    state_ = out.state;
    rows_ = parents.size();
    return log_softmax_rows(graph_.value(out.logits));
  }

 private:
  const Model& model_;
  ad::Graph graph_;
  Encoding enc_;
  std::optional<Encoding> expanded_;
  DecoderState state_;
  std::size_t rows_ = 0;
  bool started_ = false;
};

/// Arithmetic mean of member probability distributions.
inline std::vector<Real> ensemble_predict(const std::vector<std::vector<Real>>& distributions) {
  if (distributions.empty()) throw UsageError("ensemble_predict: no distributions");
  const std::size_t V = distributions.front().size();
  std::vector<Real> out(V, 0.0);
  for (const auto& d : distributions) {
    if (d.size() != V) throw ShapeError("ensemble_predict: dimension mismatch");
    for (std::size_t v = 0; v < V; ++v) out[v] += d[v];
  }
  for (Real& p : out) p /= static_cast<Real>(distributions.size());
  return out;
}

/// log(mean_i exp(x_i)) computed stably. Equal inputs return that value
/// unchanged, so ensembling identical members is exact.
inline Real log_mean_exp(const std::vector<Real>& xs) {
  if (xs.empty()) throw UsageError("log_mean_exp: empty input");
  if (std::all_of(xs.begin(), xs.end(), [&](Real x) { return x == xs.front(); })) return xs.front();
  const Real m = *std::max_element(xs.begin(), xs.end());
  if (m == -std::numeric_limits<Real>::infinity()) return m;
  Real s = 0;
  for (Real x : xs) s += std::exp(x - m);
  return m + std::log(s / static_cast<Real>(xs.size()));
}

/// Ensemble log-probabilities from member log-probability tables.
inline Tensor ensemble_log_probs(const std::vector<Tensor>& members) {
  if (members.empty()) throw UsageError("ensemble: no members");
  if (members.size() == 1) return members.front();
  Tensor out = members.front();
  std::vector<Real> xs(members.size());
  for (const auto& m : members)
    if (!m.same_shape(out)) throw ShapeError("ensemble: member shapes differ");
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < members.size(); ++k) xs[k] = members[k][i];
    out[i] = log_mean_exp(xs);
  }
  return out;
}

struct SearchResult {
  std::vector<int> tokens;  // decoder order, without the end symbol
  Real logprob = 0;
  std::vector<Real> member_logprobs;
  bool finished = false;  // ended with the end symbol (otherwise cut at max_length)
};

/// Length-synchronous beam search. Hypotheses that emit the end symbol
/// leave the beam and reduce its width; any still open after max_length
/// steps are finalized as they are. Results are sorted by log-probability.
inline std::vector<SearchResult> beam_search(const std::vector<Session*>& members, std::size_t beam,
                                             std::size_t nbest, std::size_t max_length) {
  if (members.empty()) throw UsageError("beam_search: no models");
  if (beam == 0 || nbest == 0 || nbest > beam) throw UsageError("beam_search: need beam >= nbest >= 1");
  if (max_length == 0) throw UsageError("beam_search: max_length must be positive");
  const std::size_t V = members.front()->vocab_size();
  for (Session* s : members)
    if (s->vocab_size() != V) throw UsageError("beam_search: models disagree on target vocabulary size");

  struct Candidate {
    Real score;
    std::size_t row;
    int token;
  };

  std::vector<SearchResult> live(1);
  live[0].member_logprobs.assign(members.size(), 0.0);
  std::vector<SearchResult> done;
  std::vector<std::size_t> parents{0};
  std::vector<int> last{-1};

  for (std::size_t t = 0; t < max_length && !live.empty(); ++t) {
    std::vector<Tensor> tables;
    tables.reserve(members.size());
    for (Session* s : members) {
      tables.push_back(s->advance(parents, last));
      if (tables.back().rows() != live.size() || tables.back().cols() != V) {
        throw ShapeError("beam_search: session returned " + shape_string(tables.back()));
      }
    }
    const Tensor combined = ensemble_log_probs(tables);

    std::vector<Candidate> cands;
    cands.reserve(live.size() * V);
    for (std::size_t r = 0; r < live.size(); ++r)
      for (std::size_t v = 0; v < V; ++v) cands.push_back({live[r].logprob + combined(r, v), r, static_cast<int>(v)});
    const std::size_t width = std::min(beam - done.size(), cands.size());
    auto better = [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.row != b.row) return a.row < b.row;
      return a.token < b.token;
    };
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(width), cands.end(), better);

    std::vector<SearchResult> next;
    parents.clear();
    last.clear();
    for (std::size_t i = 0; i < width; ++i) {
      const Candidate& c = cands[i];
      SearchResult h = live[c.row];
      h.logprob = c.score;
      for (std::size_t k = 0; k < members.size(); ++k) h.member_logprobs[k] += tables[k](c.row, static_cast<std::size_t>(c.token));
      if (c.token == kEos) {
        h.finished = true;
        done.push_back(std::move(h));
      } else {
        h.tokens.push_back(c.token);
        parents.push_back(c.row);
        last.push_back(c.token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  for (auto& h : live) done.push_back(std::move(h));
  std::stable_sort(done.begin(), done.end(),
                   [](const SearchResult& a, const SearchResult& b) { return a.logprob > b.logprob; });
  if (done.size() > nbest) done.resize(nbest);
  return done;
}

/// lp(length) = (5 + length)^alpha / 6^alpha.
inline Real length_penalty(std::size_t length, Real alpha) {
  return std::pow((5.0 + static_cast<Real>(length)) / 6.0, alpha);
}

inline Real length_normalize(Real logprob, std::size_t length, Real alpha) {
  if (length == 0) throw UsageError("length_normalize: length must be positive");
  return logprob / length_penalty(length, alpha);
}

using Feature = std::pair<std::string, Real>;

struct Hypothesis {
  std::vector<std::string> units;  // natural order, no end symbol
  Real logprob = 0;                // left-to-right ensemble log-probability
  std::vector<Feature> features;
  Real score = 0;  // current total used for ordering

  std::size_t length(bool count_eos = true) const { return units.size() + (count_eos ? 1 : 0); }

  std::optional<Real> feature(const std::string& name) const {
    for (const auto& [n, v] : features)
      if (n == name) return v;
    return std::nullopt;
  }

  void set_feature(const std::string& name, Real value) {
    for (auto& [n, v] : features) {
      if (n == name) {
        v = value;
        return;
      }
    }
    features.emplace_back(name, value);
  }
};

struct NBestList {
  std::size_t id = 0;
  std::vector<Hypothesis> hypotheses;

  std::vector<std::string> feature_names() const {
    std::vector<std::string> names;
    for (const auto& h : hypotheses)
      for (const auto& [n, _] : h.features)
        if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
    return names;
  }
};

inline constexpr const char* kL2rFeature = "l2r";
inline constexpr const char* kR2lFeature = "r2l";

using deeprnn::detail::format_real;  // shortest round-trip decimal form

inline Real parse_real(const std::string& s) {
  Real v = 0;
  const char* end = s.data() + s.size();
  auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw DataError("not a number: '" + s + "'");
  return v;
}

/// Moses-style lines: `id ||| units ||| name= value ... ||| total`.
inline std::string format_nbest(const std::vector<NBestList>& lists) {
  std::string out;
  for (const auto& list : lists) {
    for (const auto& h : list.hypotheses) {
      out += std::to_string(list.id) + " ||| " + join(h.units) + " |||";
      for (const auto& [n, v] : h.features) out += " " + n + "= " + format_real(v);
      out += " ||| " + format_real(h.score) + "\n";
    }
  }
  return out;
}

/// Parses n-best text; consecutive lines with the same id form one list.
inline std::vector<NBestList> parse_nbest(const std::string& text) {
  std::vector<NBestList> lists;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = "n-best line " + std::to_string(lineno);
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const std::size_t bar = line.find("|||", pos);
      if (bar == std::string::npos) {
        fields.push_back(line.substr(pos));
        break;
      }
      fields.push_back(line.substr(pos, bar - pos));
      pos = bar + 3;
    }
    if (fields.size() != 4) throw DataError(where + ": expected 4 '|||'-separated fields");
    const auto id_tok = split_whitespace(fields[0]);
    if (id_tok.size() != 1) throw DataError(where + ": bad sentence id");
    std::size_t id = 0;
    {
      const std::string& s = id_tok[0];
      auto res = std::from_chars(s.data(), s.data() + s.size(), id);
      if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw DataError(where + ": bad sentence id");
    }
    Hypothesis h;
    h.units = split_whitespace(fields[1]);
    const auto feats = split_whitespace(fields[2]);
    std::string name;
    for (const auto& tok : feats) {
      if (tok.size() > 1 && tok.back() == '=') {
        name = tok.substr(0, tok.size() - 1);
      } else {
        if (name.empty()) throw DataError(where + ": feature value without a name");
        try {
          h.features.emplace_back(name, parse_real(tok));
        } catch (const DataError& e) {
          throw DataError(where + ": " + e.what());
        }
        name.clear();
      }
    }
    if (!name.empty()) throw DataError(where + ": feature '" + name + "' has no value");
    const auto total = split_whitespace(fields[3]);
    if (total.size() != 1) throw DataError(where + ": bad total");
    try {
      h.score = parse_real(total[0]);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    h.logprob = h.feature(kL2rFeature).value_or(h.score);
    if (lists.empty() || lists.back().id != id) {
      for (const auto& l : lists)
        if (l.id == id) throw DataError(where + ": sentence " + std::to_string(id) + " is not contiguous");
      lists.push_back(NBestList{id, {}});
    }
    lists.back().hypotheses.push_back(std::move(h));
  }
  return lists;
}

/// Checks that an ensemble is usable together and returns its direction.
inline Direction check_ensemble(const std::vector<const Model*>& models) {
  if (models.empty()) throw UsageError("no models given");
  const ModelSpec& first = models.front()->spec();
  for (const Model* m : models) {
    if (m->spec().tgt_vocab != first.tgt_vocab || m->spec().src_vocab != first.src_vocab) {
      throw UsageError("ensemble members disagree on vocabulary sizes");
    }
    if (m->spec().direction != first.direction) throw UsageError("ensemble members disagree on direction");
  }
  return first.direction;
}

struct BeamConfig {
  std::size_t beam = 12;
  std::size_t nbest = 1;
  std::size_t max_length = 0;  // 0: 2 * source length + 5
};

/// Beam search with an ensemble over one source sentence. Tokens come back
/// in natural order even for right-to-left models.
inline std::vector<SearchResult> translate_ids(const std::vector<const Model*>& models,
                                               const std::vector<int>& source, const BeamConfig& config) {
  const Direction dir = check_ensemble(models);
  if (source.empty()) throw DataError("translate: empty source sentence");
  std::vector<std::unique_ptr<ModelSession>> sessions;
  std::vector<Session*> members;
  for (const Model* m : models) {
    sessions.push_back(std::make_unique<ModelSession>(*m, source));
    members.push_back(sessions.back().get());
  }
  const std::size_t max_length = config.max_length ? config.max_length : 2 * source.size() + 5;
  auto results = beam_search(members, config.beam, config.nbest, max_length);
  if (dir == Direction::right_to_left) {
    for (auto& r : results) std::reverse(r.tokens.begin(), r.tokens.end());
  }
  return results;
}

inline NBestList to_nbest(std::size_t id, const std::vector<SearchResult>& results, const Vocabulary& target) {
  NBestList list{id, {}};
  for (const auto& r : results) {
    Hypothesis h;
    for (int t : r.tokens) h.units.push_back(target.token(t));
    h.logprob = r.logprob;
    h.score = r.logprob;
    h.features.emplace_back(kL2rFeature, r.logprob);
    if (r.member_logprobs.size() > 1) {
      for (std::size_t k = 0; k < r.member_logprobs.size(); ++k) {
        h.features.emplace_back(std::string(kL2rFeature) + "_" + std::to_string(k), r.member_logprobs[k]);
      }
    }
    list.hypotheses.push_back(std::move(h));
  }
  return list;
}

// per_model[k][sentence][token] -> [sentence][token]
inline std::vector<std::vector<Real>> combine_token_logprobs(
    const std::vector<std::vector<std::vector<Real>>>& per_model) {
  std::vector<std::vector<Real>> out(per_model.front().size());
  std::vector<Real> xs(per_model.size());
  for (std::size_t b = 0; b < out.size(); ++b) {
    for (std::size_t j = 0; j < per_model[0][b].size(); ++j) {
      for (std::size_t k = 0; k < per_model.size(); ++k) xs[k] = per_model[k][b][j];
      out[b].push_back(log_mean_exp(xs));
    }
  }
  return out;
}

/// Per-token ensemble log-probabilities of reference targets (end symbol last).
inline std::vector<std::vector<Real>> ensemble_token_logprobs(const std::vector<const Model*>& models,
                                                              const Batch& batch) {
  check_ensemble(models);
  std::vector<std::vector<std::vector<Real>>> per_model;
  for (const Model* m : models) per_model.push_back(m->token_logprobs(batch));
  return combine_token_logprobs(per_model);
}

/// Corpus negative log-likelihood (nats, summed over tokens) of an ensemble.
inline Real ensemble_nll(const std::vector<const Model*>& models, const std::vector<std::vector<int>>& sources,
                         const std::vector<std::vector<int>>& targets, std::size_t batch_size = 32) {
  if (sources.size() != targets.size()) throw DataError("ensemble_nll: unaligned data");
  Real nll = 0;
  for (std::size_t start = 0; start < sources.size(); start += batch_size) {
    const std::size_t end = std::min(sources.size(), start + batch_size);
    Batch b;
    b.source.assign(sources.begin() + static_cast<std::ptrdiff_t>(start), sources.begin() + static_cast<std::ptrdiff_t>(end));
    b.target.assign(targets.begin() + static_cast<std::ptrdiff_t>(start), targets.begin() + static_cast<std::ptrdiff_t>(end));
    for (const auto& row : ensemble_token_logprobs(models, b))
      for (Real lp : row) nll -= lp;
  }
  return nll;
}

/// Indices of the n entries with the highest update counts, oldest first.
inline std::vector<std::size_t> latest_by_update(const std::vector<std::uint64_t>& updates, std::size_t n) {
  if (n == 0) throw UsageError("checkpoint ensemble size must be positive");
  if (updates.size() < n) {
    throw DataError("checkpoint ensemble: need " + std::to_string(n) + " checkpoints, run has " +
                    std::to_string(updates.size()));
  }
  std::vector<std::size_t> idx(updates.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return updates[a] < updates[b]; });
  return std::vector<std::size_t>(idx.end() - static_cast<std::ptrdiff_t>(n), idx.end());
}

/// The last n checkpoints of one run, chosen by iteration count (not by
/// validation score).
inline std::vector<Checkpoint> checkpoint_ensemble(const std::vector<Checkpoint>& run, std::size_t n) {
  std::vector<std::uint64_t> updates;
  for (const auto& c : run) updates.push_back(c.update_count);
  std::vector<Checkpoint> out;
  for (std::size_t i : latest_by_update(updates, n)) out.push_back(run[i]);
  return out;
}

/// Loads every `*.iter<N>.ckpt` file of a run directory and keeps the last n.
inline std::vector<Checkpoint> checkpoint_ensemble(const std::filesystem::path& run_dir, std::size_t n) {
  if (!std::filesystem::is_directory(run_dir)) throw DataError("not a directory: '" + run_dir.string() + "'");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.find(".iter") != std::string::npos && subword::ends_with(name, ".ckpt")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Checkpoint> run;
  for (const auto& f : files) run.push_back(load_checkpoint(f));
  return checkpoint_ensemble(run, n);
}

struct RerankConfig {
  Real alpha = 0;
  Real l2r_weight = 0.5;
  Real r2l_weight = 0.5;
  bool count_eos = true;
  bool normalize_l2r = true;  // divide the l2r score by the length penalty too
};

/// Weighted sum of length-normalized l2r and r2l scores; the r2l term is
/// left out for hypotheses without that feature.
inline Real rerank_score(const Hypothesis& h, const RerankConfig& config) {
  const Real lp = length_penalty(h.length(config.count_eos), config.alpha);
  const Real l2r = h.feature(kL2rFeature).value_or(h.logprob);
  Real score = config.l2r_weight * (config.normalize_l2r ? l2r / lp : l2r);
  if (auto r2l = h.feature(kR2lFeature)) score += config.r2l_weight * (*r2l / lp);
  return score;
}

/// Recomputes every total and stably re-sorts, best first.
inline NBestList rerank(NBestList list, const RerankConfig& config) {
  for (auto& h : list.hypotheses) h.score = rerank_score(h, config);
  std::stable_sort(list.hypotheses.begin(), list.hypotheses.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  return list;
}

/// Adds the r2l ensemble log-probability of each hypothesis (scored on its
/// reversed units) and re-sorts by the rerank score.
inline NBestList rescore_right_to_left(NBestList list, const std::vector<int>& source,
                                       const std::vector<const Model*>& r2l_models, const Vocabulary& target,
                                       const RerankConfig& config = {}) {
  if (check_ensemble(r2l_models) != Direction::right_to_left) {
    throw UsageError("rescore: models are not right-to-left");
  }
  if (static_cast<std::size_t>(r2l_models.front()->spec().tgt_vocab) != target.size()) {
    throw DataError("rescore: target vocabulary does not match the right-to-left models");
  }
  if (list.hypotheses.empty()) return list;
  Batch batch;
  for (const auto& h : list.hypotheses) {
    std::vector<int> ids;
    for (const auto& u : h.units) {
      if (!target.contains(u)) throw DataError("rescore: unit '" + u + "' is not in the target vocabulary");
      ids.push_back(target.id(u));
    }
    batch.source.push_back(source);
    batch.target.push_back(std::move(ids));
  }
  std::vector<std::vector<std::vector<Real>>> per_model;
  for (const Model* m : r2l_models) per_model.push_back(m->token_logprobs(batch));
  const auto combined = combine_token_logprobs(per_model);
  for (std::size_t i = 0; i < list.hypotheses.size(); ++i) {
    Real total = 0;
    for (Real lp : combined[i]) total += lp;
    list.hypotheses[i].set_feature(kR2lFeature, total);
    if (r2l_models.size() > 1) {
      for (std::size_t k = 0; k < r2l_models.size(); ++k) {
        Real member = 0;
        for (Real lp : per_model[k][i]) member += lp;
        list.hypotheses[i].set_feature(std::string(kR2lFeature) + "_" + std::to_string(k), member);
      }
    }
  }
  return rerank(std::move(list), config);
}

inline bool is_quote_unit(std::string_view unit) {
  if (subword::ends_with(unit, subword::kContinuation)) unit.remove_suffix(subword::kContinuation.size());
  if (unit.empty()) return false;
  if (unit == "&quot;" || unit == "&apos;" || unit == "&#39;" || unit == "&#34;") return true;
  static const std::vector<std::string> quotes = {"\"", "'", "`", "\xE2\x80\x9C", "\xE2\x80\x9D", "\xE2\x80\x9E",
                                                  "\xE2\x80\x98", "\xE2\x80\x99", "\xC2\xAB", "\xC2\xBB"};
  for (const auto& ch : subword::utf8_chars(unit))
    if (std::find(quotes.begin(), quotes.end(), ch) == quotes.end()) return false;
  return true;
}

inline constexpr Real kQuoteThreshold = 0.5;

/// Fraction of a hypothesis' units that are quote punctuation.
inline Real quote_fraction(const Hypothesis& h) {
  if (h.units.empty()) return 0;
  const auto quotes = std::count_if(h.units.begin(), h.units.end(), [](const std::string& u) { return is_quote_unit(u); });
  return static_cast<Real>(quotes) / static_cast<Real>(h.units.size());
}

/// Drops hypotheses whose quote fraction exceeds the threshold; if that
/// would empty the list, only the best-scored one is kept.
inline NBestList filter_repeated_quotes(NBestList list, Real threshold = kQuoteThreshold) {
  if (list.hypotheses.empty()) return list;
  std::vector<Hypothesis> kept;
  for (const auto& h : list.hypotheses)
    if (quote_fraction(h) <= threshold) kept.push_back(h);
  if (kept.empty()) {
    auto best = std::max_element(list.hypotheses.begin(), list.hypotheses.end(),
                                 [](const Hypothesis& a, const Hypothesis& b) { return a.score < b.score; });
    kept.push_back(*best);
  }
  list.hypotheses = std::move(kept);
  return list;
}

/// The default alpha grid 0, 0.1, ..., 1.5.
inline std::vector<Real> default_alpha_grid() {
  std::vector<Real> grid;
  for (int i = 0; i <= 15; ++i) grid.push_back(static_cast<Real>(i) / 10.0);
  return grid;
}

/// Best hypothesis text with continuation markers removed.
inline std::string one_best(const NBestList& list) {
  if (list.hypotheses.empty()) return "";
  return subword::desegment(list.hypotheses.front().units);
}

struct AlphaTuning {
  Real alpha = 0;
  Real bleu = 0;
  std::vector<std::pair<Real, Real>> curve;  // (alpha, bleu) per grid point
};

/// Grid search for the alpha whose reranked 1-best maximizes corpus BLEU;
/// ties go to the earliest grid value.
inline AlphaTuning tune_alpha(const std::vector<NBestList>& lists, const std::vector<std::string>& references,
                              const std::vector<Real>& grid, RerankConfig config = {}) {
  if (grid.empty()) throw UsageError("tune_alpha: empty alpha grid");
  if (lists.size() != references.size()) {
    throw DataError("tune_alpha: " + std::to_string(lists.size()) + " n-best lists vs " +
                    std::to_string(references.size()) + " references");
  }
  AlphaTuning best;
  bool first = true;
  for (Real alpha : grid) {
    if (alpha < 0) throw UsageError("tune_alpha: alpha must be non-negative");
    config.alpha = alpha;
    std::vector<std::string> hyps;
    for (const auto& l : lists) hyps.push_back(one_best(rerank(l, config)));
    const Real b = corpus_bleu(hyps, references).bleu;
    best.curve.emplace_back(alpha, b);
    if (first || b > best.bleu) {
      best.alpha = alpha;
      best.bleu = b;
      first = false;
    }
  }
  return best;
}

}  // namespace deeprnn::decode
