#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "deeprnn/adam.hpp"
#include "deeprnn/autodiff.hpp"
#include "deeprnn/bleu.hpp"
#include "deeprnn/checkpoint.hpp"
#include "deeprnn/corpus.hpp"
#include "deeprnn/errors.hpp"
#include "deeprnn/model.hpp"
#include "deeprnn/vocab.hpp"

namespace deeprnn {

enum class Regime { mixed, fine_tuned };
enum class SelectionMetric { bleu, cross_entropy };

inline Regime parse_regime(const std::string& s) {
  if (s == "mixed") return Regime::mixed;
  if (s == "fine_tuned" || s == "fine-tuned") return Regime::fine_tuned;
  throw UsageError("unknown regime '" + s + "'");
}

inline SelectionMetric parse_selection_metric(const std::string& s) {
  if (s == "bleu") return SelectionMetric::bleu;
  if (s == "cross_entropy" || s == "xent") return SelectionMetric::cross_entropy;
  throw UsageError("unknown selection metric '" + s + "'");
}

struct TrainConfig {
  Real learning_rate = 1e-4;
  std::size_t batch_size = 80;
  std::size_t max_len = 50;  // subword units, either side
  std::size_t save_every = 10000;
  std::size_t patience = 10;
  Regime regime = Regime::mixed;
  std::uint64_t seed = 1234;
  std::size_t max_updates = 0;  // per run() call; 0 = no limit
  std::size_t max_epochs = 0;   // per run() call; 0 = no limit
  Real clip_norm = 1.0;
  SelectionMetric selection = SelectionMetric::bleu;
  std::size_t keep_checkpoints = 10;  // most recent save-points kept in memory; 0 = all
  std::filesystem::path output_dir;   // when set, every save-point is written here

  void validate() const {
    if (!(learning_rate > 0)) throw UsageError("learning rate must be positive");
    if (batch_size == 0 || max_len == 0 || save_every == 0) {
      throw UsageError("batch size, max length and save interval must be positive");
    }
    if (patience < 1) throw UsageError("patience must be at least 1");
  }
};

/// Id-encoded parallel data (no end symbols).
struct IdCorpus {
  std::vector<std::vector<int>> source;
  std::vector<std::vector<int>> target;
  std::size_t size() const { return source.size(); }
};

inline IdCorpus encode_corpus(const ParallelCorpus& corpus, const Vocabulary& src, const Vocabulary& tgt) {
  IdCorpus out;
  for (const auto& p : corpus) {
    out.source.push_back(src.encode(p.source));
    out.target.push_back(tgt.encode(p.target));
  }
  return out;
}

inline std::uint64_t fingerprint(const IdCorpus& c) {
  std::uint64_t h = fnv1a("corpus");
  auto mix = [&](const std::vector<int>& ids) {
    for (int i : ids) h = fnv1a(std::to_string(i) + ",", h);
    h = fnv1a(";", h);
  };
  for (std::size_t i = 0; i < c.size(); ++i) {
    mix(c.source[i]);
    mix(c.target[i]);
  }
  return h;
}

struct ValidationSet {
  IdCorpus data;
  std::vector<std::string> references;  // target sentences as text
  std::string name;

  static ValidationSet from(const ParallelCorpus& corpus, const Vocabulary& src, const Vocabulary& tgt,
                            std::string name = "valid") {
    ValidationSet v;
    v.data = encode_corpus(corpus, src, tgt);
    for (const auto& p : corpus) v.references.push_back(p.target);
    v.name = std::move(name);
    return v;
  }
};

/// True once the most recent `patience` losses all fail to reach a new
/// (strict) minimum, i.e. the minimum lies at least `patience` entries back.
inline bool should_stop_early(const std::vector<Real>& losses, std::size_t patience) {
  if (losses.empty()) return false;
  const auto best = static_cast<std::size_t>(std::min_element(losses.begin(), losses.end()) - losses.begin());
  return losses.size() - 1 - best >= patience;
}

enum class StopReason { patience, max_updates, max_epochs, observer };

inline std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::patience: return "patience";
    case StopReason::max_updates: return "max_updates";
    case StopReason::max_epochs: return "max_epochs";
    case StopReason::observer: return "observer";
  }
  return "?";
}

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<Checkpoint> saved;  // most recent save-points, oldest first
  std::vector<ValidationRecord> history;
  StopReason reason = StopReason::max_updates;
  std::size_t filtered_out = 0;
};

/// Batch cross-entropy over a whole id corpus, in nats per target token.
inline Real corpus_cross_entropy(const Model& model, const IdCorpus& data, std::size_t batch_size) {
  Real total = 0;
  std::size_t tokens = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    Batch b;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) {
      b.source.push_back(data.source[i]);
      b.target.push_back(data.target[i]);
    }
    ad::Graph g(false);
    LossResult r = model.loss(g, b);
    total += g.scalar(r.total);
    tokens += r.tokens;
  }
  return tokens ? total / static_cast<Real>(tokens) : 0.0;
}

/// Greedy translations of an id corpus's source side, as target text.
inline std::vector<std::string> greedy_translate(const Model& model, const Vocabulary& tgt_vocab,
                                                 const std::vector<std::vector<int>>& sources,
                                                 std::size_t batch_size) {
  std::vector<std::string> out;
  for (std::size_t start = 0; start < sources.size(); start += batch_size) {
    std::vector<std::vector<int>> chunk(sources.begin() + static_cast<std::ptrdiff_t>(start),
                                        sources.begin() + static_cast<std::ptrdiff_t>(std::min(sources.size(), start + batch_size)));
    std::size_t longest = 0;
    for (const auto& s : chunk) longest = std::max(longest, s.size());
    for (const auto& ids : model.greedy(chunk, 2 * longest + 5)) out.push_back(tgt_vocab.decode(ids));
  }
  return out;
}

/// Adam training loop with length filtering, periodic validation,
/// checkpointing and patience-based early stopping.
class Trainer {
 public:
  /// Called at every save-point; returning true stops training.
  using Observer = std::function<bool(const Model&, const ValidationRecord&)>;

  Trainer(Model model, Vocabulary src_vocab, Vocabulary tgt_vocab, TrainConfig config)
      : model_(std::move(model)),
        src_vocab_(std::move(src_vocab)),
        tgt_vocab_(std::move(tgt_vocab)),
        config_(std::move(config)) {
    config_.validate();
    if (src_vocab_.size() != static_cast<std::size_t>(model_.spec().src_vocab) ||
        tgt_vocab_.size() != static_cast<std::size_t>(model_.spec().tgt_vocab)) {
      throw UsageError("vocabulary sizes do not match the model spec");
    }
    seed_ = config_.seed;
  }

  /// Continues from a checkpoint: parameters, optimizer moments, counters and
  /// data position are restored; the run seed is the checkpoint's.
  static Trainer resume(const Checkpoint& c, TrainConfig config) {
    Trainer t(c.model(), c.src_vocab, c.tgt_vocab, std::move(config));
    t.adam_ = c.adam;
    t.update_count_ = c.update_count;
    t.epoch_ = c.epoch;
    t.cursor_ = c.cursor;
    t.data_hash_ = c.data_hash;
    t.seed_ = c.seed;
    t.phase_ = c.phase;
    t.history_ = c.history;
    t.resumed_ = true;
    return t;
  }

  /// Resumes and checks the checkpoint against the expected architecture.
  static Trainer resume(const Checkpoint& c, const ModelSpec& expected, TrainConfig config) {
    if (!(c.spec == expected)) throw UsageError("checkpoint model spec does not match the requested spec");
    return resume(c, std::move(config));
  }

  void set_validation(ValidationSet v) {
    if (validation_ && validation_->name != v.name) {
      pending_note_ = "validation switched from " + validation_->name + " to " + v.name;
    } else if (!validation_ && resumed_) {
      pending_note_ = "validation set " + v.name + " at resume";
    }
    validation_ = std::move(v);
  }

  /// Starts a new early-stopping phase (e.g. the fine-tuning phase).
  void start_phase(const std::string& note) {
    ++phase_;
    pending_note_ = pending_note_.empty() ? note : pending_note_ + "; " + note;
  }

  void set_observer(Observer o) { observer_ = std::move(o); }

  const Model& model() const { return model_; }
  const Vocabulary& src_vocab() const { return src_vocab_; }
  const Vocabulary& tgt_vocab() const { return tgt_vocab_; }
  std::size_t update_count() const { return update_count_; }
  const std::vector<ValidationRecord>& history() const { return history_; }
  const TrainConfig& config() const { return config_; }

  Checkpoint snapshot() const {
    Checkpoint c;
    c.spec = model_.spec();
    c.params = model_.params();
    c.src_vocab = src_vocab_;
    c.tgt_vocab = tgt_vocab_;
    c.adam = adam_;
    c.update_count = update_count_;
    c.epoch = epoch_;
    c.cursor = cursor_;
    c.data_hash = data_hash_;
    c.seed = seed_;
    c.phase = phase_;
    c.history = history_;
    return c;
  }

  /// Pairs whose source or target exceeds max_len units, and pairs with an
  /// empty source, are dropped.
  IdCorpus filter(const IdCorpus& corpus, std::size_t* dropped = nullptr) const {
    IdCorpus out;
    std::size_t n = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& s = corpus.source[i];
      const auto& t = corpus.target[i];
      if (s.empty() || s.size() > config_.max_len || t.size() > config_.max_len) {
        ++n;
        continue;
      }
      out.source.push_back(s);
      out.target.push_back(t);
    }
    if (dropped) *dropped = n;
    return out;
  }

  /// One optimizer update on a batch; returns the mean token loss.
  Real update(const Batch& batch) {
    ad::Graph g;
    LossResult r = model_.loss(g, batch);
    g.backward(r.mean);
    GradientMap grads = g.parameter_gradients();
    clip_global_norm(grads, config_.clip_norm);
    apply_deltas(model_.params(), adam_step(grads, adam_, config_.learning_rate));
    ++update_count_;
    return g.scalar(r.mean);
  }

  TrainResult run(const IdCorpus& corpus) {
    TrainResult result;
    const IdCorpus data = filter(corpus, &result.filtered_out);
    if (data.size() == 0) throw DataError("no training pairs left after length filtering");
    const std::uint64_t hash = fingerprint(data);
    if (hash != data_hash_) {
      data_hash_ = hash;
      epoch_ = 0;
      cursor_ = 0;
    }
    if (!validation_) {
      fallback_validation_ = IdCorpus{};
      for (std::size_t i = 0; i < std::min<std::size_t>(200, data.size()); ++i) {
        fallback_validation_.source.push_back(data.source[i]);
        fallback_validation_.target.push_back(data.target[i]);
      }
    }
    const std::size_t start_updates = update_count_;
    std::size_t epochs_run = 0;
    std::optional<StopReason> stop;
    bool saved_last = false;
    while (!stop) {
      const std::vector<std::size_t> order = epoch_order(data.size());
      while (cursor_ < order.size() && !stop) {
        Batch batch;
        const std::size_t end = std::min(order.size(), cursor_ + config_.batch_size);
        for (std::size_t k = cursor_; k < end; ++k) {
          batch.source.push_back(data.source[order[k]]);
          batch.target.push_back(data.target[order[k]]);
        }
        cursor_ = end;
        update(batch);
        saved_last = false;
        if (update_count_ % config_.save_every == 0) {
          stop = save_point();
          saved_last = true;
        }
        if (!stop && config_.max_updates && update_count_ - start_updates >= config_.max_updates) {
          stop = StopReason::max_updates;
        }
      }
      if (cursor_ >= order.size()) {
        ++epoch_;
        cursor_ = 0;
        ++epochs_run;
        if (!stop && config_.max_epochs && epochs_run >= config_.max_epochs) stop = StopReason::max_epochs;
      }
    }
    if (!saved_last && update_count_ > start_updates) save_point();
    if (!best_) best_ = snapshot();
    result.reason = *stop;
    result.best = *best_;
    result.last = snapshot();
    result.history = history_;
    result.saved.assign(recent_.begin(), recent_.end());
    return result;
  }

  Real validation_cross_entropy() const {
    return corpus_cross_entropy(model_, validation_data(), config_.batch_size);
  }

  Real validation_bleu() const {
    if (!validation_) return 0.0;
    auto hyps = greedy_translate(model_, tgt_vocab_, validation_->data.source, config_.batch_size);
    return corpus_bleu(hyps, validation_->references).bleu;
  }

 private:
  // Without a validation set the first (up to) 200 training pairs stand in.
  const IdCorpus& validation_data() const {
    if (validation_) return validation_->data;
    return fallback_validation_;
  }

  std::vector<std::size_t> epoch_order(std::size_t n) const {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(epoch_)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  std::optional<StopReason> save_point() {
    ValidationRecord rec;
    rec.phase = phase_;
    rec.update = update_count_;
    rec.cross_entropy = validation_cross_entropy();
    rec.metric = config_.selection == SelectionMetric::bleu && validation_ ? validation_bleu()
                                                                            : -rec.cross_entropy;
    rec.note = std::move(pending_note_);
    pending_note_.clear();
    history_.push_back(rec);

    Checkpoint snap = snapshot();
    const bool improved = !best_ || phase_ != best_phase_ || rec.metric > best_metric_;
    if (improved) {
      best_ = snap;
      best_metric_ = rec.metric;
      best_phase_ = phase_;
    }
    recent_.push_back(snap);
    if (config_.keep_checkpoints && recent_.size() > config_.keep_checkpoints) recent_.erase(recent_.begin());
    if (!config_.output_dir.empty()) {
      save_checkpoint(snap, config_.output_dir / ("model.iter" + std::to_string(update_count_) + ".ckpt"));
      if (improved) save_checkpoint(snap, config_.output_dir / "model.best.ckpt");
    }

    if (observer_ && observer_(model_, rec)) return StopReason::observer;
    std::vector<Real> phase_losses;
    for (const auto& r : history_)
      if (r.phase == phase_) phase_losses.push_back(r.cross_entropy);
    if (should_stop_early(phase_losses, config_.patience)) return StopReason::patience;
    return std::nullopt;
  }

  Model model_;
  Vocabulary src_vocab_;
  Vocabulary tgt_vocab_;
  TrainConfig config_;
  AdamState adam_;
  std::size_t update_count_ = 0;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::uint64_t data_hash_ = 0;
  std::uint64_t seed_ = 0;
  std::size_t phase_ = 0;
  bool resumed_ = false;
  std::vector<ValidationRecord> history_;
  std::optional<ValidationSet> validation_;
  IdCorpus fallback_validation_;
  std::string pending_note_;
  Observer observer_;
  std::optional<Checkpoint> best_;
  Real best_metric_ = 0;
  std::size_t best_phase_ = 0;
  std::vector<Checkpoint> recent_;
};

/// Training data for one run. Under the mixed regime only `mixed` is used;
/// under fine_tuned, `parallel` trains the first phase.
struct TrainingData {
  IdCorpus parallel;
  IdCorpus mixed;
  std::optional<ValidationSet> validation;
  std::optional<ValidationSet> fine_tune_validation;  // replaces `validation` in phase 2
};

struct RegimeResult {
  TrainResult result;                     // final phase
  std::optional<TrainResult> first_phase;  // fine_tuned only
};

/// mixed: one run on the mixed corpus. fine_tuned: train on parallel data
/// until the patience rule fires, then resume from the best phase-1
/// checkpoint on the mixed corpus as a new early-stopping phase.
inline RegimeResult train(const ModelSpec& spec, const Vocabulary& src, const Vocabulary& tgt,
                          const TrainingData& data, const TrainConfig& config) {
  RegimeResult out;
  Trainer first(Model::initialize(spec, config.seed), src, tgt, config);
  if (data.validation) first.set_validation(*data.validation);
  if (config.regime == Regime::mixed) {
    out.result = first.run(data.mixed);
    return out;
  }
  out.first_phase = first.run(data.parallel);
  Trainer second = Trainer::resume(out.first_phase->best, spec, config);
  if (data.fine_tune_validation) {
    if (data.validation) second.set_validation(*data.validation);
    second.set_validation(*data.fine_tune_validation);
  } else if (data.validation) {
    second.set_validation(*data.validation);
  }
  second.start_phase("fine-tuning on mixed corpus");
  out.result = second.run(data.mixed);
  return out;
}

}  // namespace deeprnn
