#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "deeprnn/bleu.hpp"
#include "deeprnn/checkpoint.hpp"
#include "deeprnn/corpus.hpp"
#include "deeprnn/datapipe.hpp"
#include "deeprnn/decode.hpp"
#include "deeprnn/errors.hpp"
#include "deeprnn/experiment.hpp"
#include "deeprnn/model.hpp"
#include "deeprnn/subword.hpp"
#include "deeprnn/train.hpp"
#include "deeprnn/vocab.hpp"

namespace deeprnn::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kFailure = 3 };

inline constexpr std::uint64_t kDefaultSeed = 1234;
inline constexpr const char* kSeedVariable = "DEEPRNN_SEED";

/// Explicit flag, else DEEPRNN_SEED, else the default.
inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv(kSeedVariable); env && *env) {
    std::uint64_t v = 0;
    const std::string s(env);
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw UsageError(std::string(kSeedVariable) + " is not an unsigned integer: '" + s + "'");
    }
    return v;
  }
  return kDefaultSeed;
}

namespace detail {

inline std::vector<std::string> read_input(const std::string& path) {
  if (path == "-") {
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(std::cin, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
    return lines;
  }
  return read_lines(path);
}

inline void write_output(const std::string& path, const std::vector<std::string>& lines, std::ostream& out) {
  if (path.empty() || path == "-") {
    for (const auto& l : lines) out << l << '\n';
    return;
  }
  write_lines(path, lines);
}

inline void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write '" + path + "'");
  f << text;
}

struct LoadedModels {
  std::vector<Checkpoint> checkpoints;
  std::vector<Model> models;

  std::vector<const Model*> pointers() const {
    std::vector<const Model*> out;
    for (const auto& m : models) out.push_back(&m);
    return out;
  }
  const Vocabulary& src_vocab() const { return checkpoints.front().src_vocab; }
  const Vocabulary& tgt_vocab() const { return checkpoints.front().tgt_vocab; }
};

/// Loads an ensemble from explicit paths, or the last n checkpoints of a
/// run directory. All members must share both vocabularies.
inline LoadedModels load_models(const std::vector<std::string>& paths, const std::string& run_dir, std::size_t last) {
  LoadedModels out;
  if (!paths.empty() && !run_dir.empty()) throw UsageError("give either --models or --checkpoint-dir, not both");
  if (!paths.empty()) {
    for (const auto& p : paths) out.checkpoints.push_back(load_checkpoint(p));
  } else if (!run_dir.empty()) {
    out.checkpoints = decode::checkpoint_ensemble(std::filesystem::path(run_dir), last);
  } else {
    throw UsageError("no models given (--models or --checkpoint-dir)");
  }
  for (const auto& c : out.checkpoints) {
    if (!(c.src_vocab == out.checkpoints.front().src_vocab) || !(c.tgt_vocab == out.checkpoints.front().tgt_vocab)) {
      throw DataError("ensemble members use different vocabularies");
    }
    out.models.push_back(c.model());
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------- subcommands

struct LearnBpeArgs {
  std::vector<std::string> inputs;
  std::size_t ops = 0;
  std::size_t min_frequency = 2;
  std::string output = "-";
  std::vector<std::string> vocab_outputs;
  std::string translit_map;
};

inline int learn_bpe_command(const LearnBpeArgs& a, std::ostream& out, std::ostream& err) {
  if (a.inputs.empty() || a.inputs.size() > 2) throw UsageError("learn-bpe takes one or two --input files");
  if (!a.vocab_outputs.empty() && a.vocab_outputs.size() != a.inputs.size()) {
    throw UsageError("give one --vocab per --input");
  }
  std::optional<subword::TransliterationMap> translit;
  if (!a.translit_map.empty()) translit = subword::TransliterationMap::from_text(read_file(a.translit_map));
  std::vector<std::vector<std::string>> sides;
  for (std::size_t i = 0; i < a.inputs.size(); ++i) {
    auto lines = detail::read_input(a.inputs[i]);
    if (i == 0 && translit) {
      bool unmapped = false;
      for (auto& l : lines) l = translit->transliterate(l, &unmapped);
      if (unmapped) err << "warning: characters without a transliteration were kept as they are\n";
    }
    sides.push_back(std::move(lines));
  }
  const auto table = subword::learn_bpe(sides[0], sides.size() > 1 ? sides[1] : std::vector<std::string>{}, a.ops,
                                        a.min_frequency);
  detail::write_text(a.output, table.to_text(), out);
  err << "learned " << table.size() << " merges\n";
  for (std::size_t i = 0; i < a.vocab_outputs.size(); ++i) {
    std::optional<subword::TransliterationMap> m;
    if (i == 0) m = translit;
    subword::Segmenter seg(table, std::nullopt, m);
    std::vector<std::string> segmented;
    // sides[0] is transliterated already; segment the original text
    const auto lines = (i == 0 && translit) ? detail::read_input(a.inputs[0]) : sides[i];
    for (const auto& l : lines) segmented.push_back(seg.segment_line(l));
    detail::write_text(a.vocab_outputs[i], subword::count_units(segmented, 0).to_text(), out);
  }
  return kOk;
}

struct ApplyBpeArgs {
  std::string merges;
  std::string input = "-";
  std::string output = "-";
  std::string vocab;
  std::size_t threshold = 50;
  std::string translit_map;
};

inline int apply_bpe_command(const ApplyBpeArgs& a, std::ostream& out, std::ostream& err) {
  auto table = subword::load_merge_table(a.merges);
  std::optional<subword::UnitVocabulary> allowed;
  if (!a.vocab.empty()) allowed = subword::UnitVocabulary::from_text(read_file(a.vocab), a.threshold);
  std::optional<subword::TransliterationMap> translit;
  if (!a.translit_map.empty()) translit = subword::TransliterationMap::from_text(read_file(a.translit_map));
  const subword::Segmenter seg(std::move(table), std::move(allowed), std::move(translit));
  std::unordered_map<std::string, subword::Segmentation> cache;
  std::size_t unknown = 0;
  bool unmapped = false;
  std::vector<std::string> result;
  for (const auto& line : detail::read_input(a.input)) {
    std::vector<std::string> units;
    for (const auto& w : split_whitespace(line)) {
      auto it = cache.find(w);
      if (it == cache.end()) it = cache.emplace(w, seg.segment_detailed(w)).first;
      unknown += it->second.unknown.size();
      unmapped = unmapped || it->second.unmapped_characters;
      units.insert(units.end(), it->second.units.begin(), it->second.units.end());
    }
    result.push_back(join(units));
  }
  detail::write_output(a.output, result, out);
  if (unknown) err << "warning: " << unknown << " single characters are not in the vocabulary\n";
  if (unmapped) err << "warning: characters without a transliteration were kept as they are\n";
  return kOk;
}

struct TrainArgs {
  std::string src, tgt;
  std::string mixed_src, mixed_tgt, mix_manifest;
  std::string valid_src, valid_ref, finetune_valid_src, finetune_valid_ref;
  std::string family = "deep_transition";
  int enc_depth = 4, dec_depth = 8, emb = 512, hidden = 1024;
  bool no_tie = false, no_layer_norm = false;
  std::string direction = "left_to_right";
  std::size_t src_vocab_size = 0, tgt_vocab_size = 0;
  double lr = 1e-4;
  std::size_t batch = 80, max_len = 50, save_every = 10000, patience = 10;
  std::string regime = "mixed";
  std::optional<std::uint64_t> seed;
  std::size_t max_updates = 0, max_epochs = 0, keep = 10;
  double clip = 1.0;
  std::string selection = "bleu";
  std::string output_dir;
  std::string resume;
  bool architecture_given = false;
};

inline ModelSpec spec_from(const TrainArgs& a, std::size_t src_vocab, std::size_t tgt_vocab) {
  ModelSpec s;
  s.family = parse_family(a.family);
  s.enc_depth = a.enc_depth;
  s.dec_depth = a.dec_depth;
  s.embedding_dim = a.emb;
  s.hidden_dim = a.hidden;
  s.src_vocab = static_cast<int>(src_vocab);
  s.tgt_vocab = static_cast<int>(tgt_vocab);
  s.tie_output = !a.no_tie;
  s.layer_norm = !a.no_layer_norm;
  s.direction = parse_direction(a.direction);
  s.validate();
  return s;
}

inline std::string history_line(const ValidationRecord& r) {
  std::string s = "phase=" + std::to_string(r.phase) + " update=" + std::to_string(r.update) +
                  " xent=" + decode::format_real(r.cross_entropy) + " metric=" + decode::format_real(r.metric);
  if (!r.note.empty()) s += " note=\"" + r.note + "\"";
  return s;
}

inline int train_command(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig config;
  config.learning_rate = a.lr;
  config.batch_size = a.batch;
  config.max_len = a.max_len;
  config.save_every = a.save_every;
  config.patience = a.patience;
  config.regime = parse_regime(a.regime);
  config.seed = resolve_seed(a.seed);
  config.max_updates = a.max_updates;
  config.max_epochs = a.max_epochs;
  config.clip_norm = a.clip;
  config.selection = parse_selection_metric(a.selection);
  config.keep_checkpoints = a.keep;
  config.output_dir = a.output_dir;
  config.validate();

  const ParallelCorpus parallel = read_parallel(a.src, a.tgt);
  ParallelCorpus mixed;
  if (!a.mix_manifest.empty()) {
    if (!a.mixed_src.empty()) throw UsageError("give either --mix or --mixed-src/--mixed-tgt");
    const auto base = std::filesystem::path(a.mix_manifest).parent_path();
    mixed = datapipe::mix(datapipe::load_mix(datapipe::parse_mix_manifest(read_file(a.mix_manifest), base)), config.seed);
  } else if (!a.mixed_src.empty() || !a.mixed_tgt.empty()) {
    if (a.mixed_src.empty() || a.mixed_tgt.empty()) throw UsageError("--mixed-src and --mixed-tgt go together");
    mixed = read_parallel(a.mixed_src, a.mixed_tgt);
  }
  const bool has_mixed = !mixed.empty() || !a.mix_manifest.empty() || !a.mixed_src.empty();
  if (config.regime == Regime::fine_tuned && !has_mixed) {
    throw UsageError("the fine_tuned regime needs a mixed corpus (--mix or --mixed-src/--mixed-tgt)");
  }

  std::optional<Checkpoint> resumed;
  Vocabulary src_vocab, tgt_vocab;
  if (!a.resume.empty()) {
    resumed = load_checkpoint(a.resume);
    src_vocab = resumed->src_vocab;
    tgt_vocab = resumed->tgt_vocab;
  } else {
    std::vector<std::string> src_lines, tgt_lines;
    for (const ParallelCorpus* c : std::vector<const ParallelCorpus*>{&parallel, &mixed}) {
      for (const auto& p : *c) {
        src_lines.push_back(p.source);
        tgt_lines.push_back(p.target);
      }
    }
    src_vocab = Vocabulary::build(src_lines, a.src_vocab_size);
    tgt_vocab = Vocabulary::build(tgt_lines, a.tgt_vocab_size);
  }

  TrainingData data;
  data.parallel = encode_corpus(parallel, src_vocab, tgt_vocab);
  data.mixed = has_mixed ? encode_corpus(mixed, src_vocab, tgt_vocab) : data.parallel;
  auto load_valid = [&](const std::string& s, const std::string& r, const std::string& name) -> std::optional<ValidationSet> {
    if (s.empty() && r.empty()) return std::nullopt;
    if (s.empty() || r.empty()) throw UsageError("validation needs both source and reference files");
    return ValidationSet::from(read_parallel(s, r), src_vocab, tgt_vocab, name);
  };
  data.validation = load_valid(a.valid_src, a.valid_ref, a.valid_src);
  data.fine_tune_validation = load_valid(a.finetune_valid_src, a.finetune_valid_ref, a.finetune_valid_src);

  TrainResult result;
  std::vector<ValidationRecord> earlier;
  if (resumed) {
    Trainer t = a.architecture_given ? Trainer::resume(*resumed, spec_from(a, src_vocab.size(), tgt_vocab.size()), config)
                                     : Trainer::resume(*resumed, config);
    if (data.validation) t.set_validation(*data.validation);
    if (data.fine_tune_validation) t.set_validation(*data.fine_tune_validation);
    result = t.run(has_mixed ? data.mixed : data.parallel);
  } else {
    const ModelSpec spec = spec_from(a, src_vocab.size(), tgt_vocab.size());
    RegimeResult r = train(spec, src_vocab, tgt_vocab, data, config);
    if (r.first_phase) earlier = r.first_phase->history;
    result = std::move(r.result);
  }

  if (result.filtered_out) err << "filtered " << result.filtered_out << " pairs longer than " << config.max_len << "\n";
  std::vector<std::string> log;
  for (const auto& rec : earlier) log.push_back(history_line(rec));
  for (const auto& rec : result.history) {
    const bool seen = std::any_of(earlier.begin(), earlier.end(), [&](const ValidationRecord& e) {
      return e.phase == rec.phase && e.update == rec.update;
    });
    if (!seen) log.push_back(history_line(rec));
  }
  log.push_back("stop=" + to_string(result.reason) + " updates=" + std::to_string(result.last.update_count) +
                " best_update=" + std::to_string(result.best.update_count));
  if (!a.output_dir.empty()) {
    const std::filesystem::path dir(a.output_dir);
    save_checkpoint(result.best, dir / "model.best.ckpt");
    save_checkpoint(result.last, dir / "model.last.ckpt");
    write_lines(dir / "train.log", log);
  }
  for (const auto& l : log) out << l << '\n';
  return kOk;
}

struct TranslateArgs {
  std::vector<std::string> models;
  std::string checkpoint_dir;
  std::size_t last = 4;
  std::string input = "-";
  std::string output = "-";
  std::size_t beam = 12;
  std::size_t nbest = 1;
  std::size_t max_length = 0;
  bool nbest_format = false;
  bool remove_bpe = false;
};

inline int translate_command(const TranslateArgs& a, std::ostream& out, std::ostream&) {
  const auto loaded = detail::load_models(a.models, a.checkpoint_dir, a.last);
  const auto models = loaded.pointers();
  decode::BeamConfig cfg{a.beam, a.nbest, a.max_length};
  if (cfg.beam == 0 || cfg.nbest == 0 || cfg.nbest > cfg.beam) throw UsageError("need --beam >= --nbest >= 1");
  const bool as_nbest = a.nbest_format || a.nbest > 1;
  std::vector<decode::NBestList> lists;
  std::vector<std::string> plain;
  const auto lines = detail::read_input(a.input);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto ids = loaded.src_vocab().encode(lines[i]);
    decode::NBestList list{i, {}};
    if (ids.empty()) {
      decode::Hypothesis h;
      h.features.emplace_back(decode::kL2rFeature, 0.0);
      list.hypotheses.push_back(h);
    } else {
      list = decode::to_nbest(i, decode::translate_ids(models, ids, cfg), loaded.tgt_vocab());
    }
    if (as_nbest) {
      lists.push_back(std::move(list));
    } else {
      const auto& units = list.hypotheses.front().units;
      plain.push_back(a.remove_bpe ? subword::desegment(units) : join(units));
    }
  }
  if (as_nbest) {
    detail::write_text(a.output, decode::format_nbest(lists), out);
  } else {
    detail::write_output(a.output, plain, out);
  }
  return kOk;
}

struct RerankArgs {
  std::string nbest = "-";
  std::string output = "-";
  std::string nbest_output;
  double alpha = 0;
  double l2r_weight = 0.5;
  double r2l_weight = 0.5;
  bool count_eos = true;
  bool raw_l2r = false;
  bool quote_filter = false;
  double quote_threshold = decode::kQuoteThreshold;
  std::string tune_references;
  std::vector<double> grid;
  bool remove_bpe = false;
};

inline decode::RerankConfig rerank_config(const RerankArgs& a) {
  decode::RerankConfig c;
  c.alpha = a.alpha;
  c.l2r_weight = a.l2r_weight;
  c.r2l_weight = a.r2l_weight;
  c.count_eos = a.count_eos;
  c.normalize_l2r = !a.raw_l2r;
  if (c.alpha < 0) throw UsageError("--alpha must be non-negative");
  return c;
}

inline std::vector<decode::NBestList> read_nbest(const std::string& path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return decode::parse_nbest(ss.str());
  }
  return decode::parse_nbest(read_file(path));
}

struct RescoreArgs {
  std::string nbest = "-";
  std::string source;
  std::vector<std::string> models;
  std::string output = "-";
  RerankArgs rerank;
};

inline int rescore_command(const RescoreArgs& a, std::ostream& out, std::ostream&) {
  const auto loaded = detail::load_models(a.models, "", 0);
  const auto sources = read_lines(a.source);
  auto lists = read_nbest(a.nbest);
  const auto config = rerank_config(a.rerank);
  for (auto& list : lists) {
    if (list.id >= sources.size()) throw DataError("n-best id " + std::to_string(list.id) + " has no source line");
    const auto ids = loaded.src_vocab().encode(sources[list.id]);
    if (ids.empty()) continue;
    list = decode::rescore_right_to_left(std::move(list), ids, loaded.pointers(), loaded.tgt_vocab(), config);
  }
  detail::write_text(a.output, decode::format_nbest(lists), out);
  return kOk;
}

inline int rerank_command(const RerankArgs& a, std::ostream& out, std::ostream& err) {
  auto lists = read_nbest(a.nbest);
  auto config = rerank_config(a);
  if (a.quote_filter) {
    for (auto& l : lists) l = decode::filter_repeated_quotes(std::move(l), a.quote_threshold);
  }
  if (!a.tune_references.empty()) {
    const auto refs = read_lines(a.tune_references);
    const auto tuned = decode::tune_alpha(lists, refs, a.grid.empty() ? decode::default_alpha_grid() : a.grid, config);
    for (const auto& [alpha, bleu] : tuned.curve) {
      err << "alpha=" << decode::format_real(alpha) << " bleu=" << decode::format_real(bleu) << "\n";
    }
    err << "best_alpha=" << decode::format_real(tuned.alpha) << "\n";
    config.alpha = tuned.alpha;
  }
  std::vector<std::string> best;
  for (auto& l : lists) {
    l = decode::rerank(std::move(l), config);
    const auto& units = l.hypotheses.empty() ? std::vector<std::string>{} : l.hypotheses.front().units;
    best.push_back(a.remove_bpe ? subword::desegment(units) : join(units));
  }
  if (!a.nbest_output.empty()) detail::write_text(a.nbest_output, decode::format_nbest(lists), out);
  detail::write_output(a.output, best, out);
  return kOk;
}

struct BacktranslateArgs {
  std::vector<std::string> models;
  std::string input = "-";
  std::string out_src, out_tgt;
  std::size_t beam = 12;
};

inline int backtranslate_command(const BacktranslateArgs& a, std::ostream&, std::ostream& err) {
  const auto loaded = detail::load_models(a.models, "", 0);
  const auto mono = detail::read_input(a.input);
  const auto bt = datapipe::back_translate(mono, loaded.pointers(), loaded.src_vocab(), loaded.tgt_vocab(), a.beam);
  std::vector<std::string> src, tgt;
  for (const auto& p : bt.corpus) {
    src.push_back(p.source);
    tgt.push_back(p.target);
  }
  write_lines(a.out_src, src);
  write_lines(a.out_tgt, tgt);
  err << "back-translated " << bt.corpus.size() << " sentences, skipped " << bt.skipped << "\n";
  return kOk;
}

struct CopyArgs {
  std::string input = "-";
  std::string out_src, out_tgt;
};

inline int copy_command(const CopyArgs& a, std::ostream&, std::ostream&) {
  const auto copied = datapipe::make_copied(detail::read_input(a.input));
  std::vector<std::string> side;
  for (const auto& p : copied) side.push_back(p.source);
  write_lines(a.out_src, side);
  write_lines(a.out_tgt, side);
  return kOk;
}

struct MixArgs {
  std::string manifest;
  std::string out_src, out_tgt, out_tags;
  std::optional<std::uint64_t> seed;
};

inline int mix_command(const MixArgs& a, std::ostream&, std::ostream& err) {
  const auto base = std::filesystem::path(a.manifest).parent_path();
  const auto components = datapipe::load_mix(datapipe::parse_mix_manifest(read_file(a.manifest), base));
  const auto sizes = datapipe::mix_sizes(components);
  const auto mixed = datapipe::mix(components, resolve_seed(a.seed));
  std::vector<std::string> src, tgt, tags;
  for (const auto& p : mixed) {
    src.push_back(p.source);
    tgt.push_back(p.target);
    tags.push_back(to_string(p.tag));
  }
  write_lines(a.out_src, src);
  write_lines(a.out_tgt, tgt);
  if (!a.out_tags.empty()) write_lines(a.out_tags, tags);
  for (std::size_t i = 0; i < components.size(); ++i) {
    err << "component=" << components[i].name << " tag=" << to_string(components[i].tag)
        << " size=" << components[i].corpus.size() << " realized=" << sizes[i] << "\n";
  }
  return kOk;
}

struct SelectArgs {
  std::string general, in_domain, general_lm_data;
  std::size_t order = 3;
  std::size_t top_k = 0;
  std::size_t min_len = 10, max_len = 80;
  std::string output = "-";
  std::string scores;
};

inline int select_command(const SelectArgs& a, std::ostream& out, std::ostream& err) {
  const auto general = read_lines(a.general);
  const auto lms = datapipe::moore_lewis_models(
      read_lines(a.in_domain), a.general_lm_data.empty() ? general : read_lines(a.general_lm_data), a.order);
  const auto sel = datapipe::moore_lewis_select(general, lms.in_domain, lms.general, a.top_k, a.min_len, a.max_len);
  if (sel.truncated_request) {
    err << "warning: --top-k " << a.top_k << " exceeds the " << sel.candidates
        << " sentences in the length range; returning all of them\n";
  }
  std::vector<std::string> lines, scores;
  for (std::size_t k = 0; k < sel.indices.size(); ++k) {
    lines.push_back(general[sel.indices[k]]);
    scores.push_back(std::to_string(sel.indices[k]) + "\t" + decode::format_real(sel.scores[k]));
  }
  detail::write_output(a.output, lines, out);
  if (!a.scores.empty()) write_lines(a.scores, scores);
  return kOk;
}

struct BleuArgs {
  std::string hypotheses, references;
  std::size_t max_n = 4;
  std::string output;
  bool remove_bpe = false;
};

inline int bleu_command(const BleuArgs& a, std::ostream& out, std::ostream&) {
  auto hyps = read_lines(a.hypotheses);
  const auto refs = read_lines(a.references);
  if (a.remove_bpe) {
    for (auto& h : hyps) h = subword::desegment_line(h);
  }
  const std::string report = corpus_bleu(hyps, refs, a.max_n).to_text();
  if (!a.output.empty()) detail::write_text(a.output, report, out);
  out << report;
  return kOk;
}

// ------------------------------------------------------------------- dispatch

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return kUsage;
  if (dynamic_cast<const DataError*>(&e)) return kData;
  return kFailure;
}

/// Runs one invocation; `args` excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deep recurrent NMT toolkit: subword segmentation, training, decoding and data pipelines."};
  app.name("deeprnn");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  LearnBpeArgs lb;
  auto* learn = app.add_subcommand("learn-bpe", "Learn joint BPE merges from one or two corpora");
  learn->add_option("-i,--input", lb.inputs, "Tokenized corpus (repeat for the second side)")->required();
  learn->add_option("--ops", lb.ops, "Number of merge operations")->required();
  learn->add_option("--min-frequency", lb.min_frequency, "Stop when the best pair is rarer than this")->capture_default_str();
  learn->add_option("-o,--output", lb.output, "Merge table file")->capture_default_str();
  learn->add_option("--vocab", lb.vocab_outputs, "Unit vocabulary output, one per input");
  learn->add_option("--translit-map", lb.translit_map, "Transliterate the first input before learning");

  ApplyBpeArgs ab;
  auto* apply = app.add_subcommand("apply-bpe", "Segment text with a merge table");
  apply->add_option("--merges", ab.merges, "Merge table file")->required();
  apply->add_option("-i,--input", ab.input, "Input text")->capture_default_str();
  apply->add_option("-o,--output", ab.output, "Output text")->capture_default_str();
  apply->add_option("--vocab", ab.vocab, "Unit vocabulary (unit<TAB>count) restricting emitted units");
  apply->add_option("--threshold", ab.threshold, "Minimum count of an allowed unit (0 allows all)")->capture_default_str();
  apply->add_option("--translit-map", ab.translit_map, "Match merges on transliterated text");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--src", tr.src, "Parallel source side")->required();
  train_cmd->add_option("--tgt", tr.tgt, "Parallel target side")->required();
  train_cmd->add_option("--mix", tr.mix_manifest, "Mix manifest for the mixed corpus");
  train_cmd->add_option("--mixed-src", tr.mixed_src, "Mixed corpus source side");
  train_cmd->add_option("--mixed-tgt", tr.mixed_tgt, "Mixed corpus target side");
  train_cmd->add_option("--valid-src", tr.valid_src, "Validation source");
  train_cmd->add_option("--valid-ref", tr.valid_ref, "Validation reference");
  train_cmd->add_option("--finetune-valid-src", tr.finetune_valid_src, "Validation source for the fine-tuning phase");
  train_cmd->add_option("--finetune-valid-ref", tr.finetune_valid_ref, "Validation reference for the fine-tuning phase");
  std::vector<CLI::Option*> arch;
  arch.push_back(train_cmd->add_option("--family", tr.family, "shallow | deep_transition | stacked")->capture_default_str());
  arch.push_back(train_cmd->add_option("--enc-depth", tr.enc_depth, "Encoder depth")->capture_default_str());
  arch.push_back(train_cmd->add_option("--dec-depth", tr.dec_depth, "Decoder depth")->capture_default_str());
  arch.push_back(train_cmd->add_option("--emb", tr.emb, "Embedding width")->capture_default_str());
  arch.push_back(train_cmd->add_option("--hidden", tr.hidden, "Hidden width")->capture_default_str());
  arch.push_back(train_cmd->add_flag("--no-tie", tr.no_tie, "Separate output projection"));
  arch.push_back(train_cmd->add_flag("--no-layer-norm", tr.no_layer_norm, "Disable layer normalization"));
  arch.push_back(train_cmd->add_option("--direction", tr.direction, "left_to_right | right_to_left")->capture_default_str());
  train_cmd->add_option("--src-vocab-size", tr.src_vocab_size, "Source vocabulary cap (0: all)")->capture_default_str();
  train_cmd->add_option("--tgt-vocab-size", tr.tgt_vocab_size, "Target vocabulary cap (0: all)")->capture_default_str();
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--batch", tr.batch, "Sentences per batch")->capture_default_str();
  train_cmd->add_option("--max-len", tr.max_len, "Drop pairs longer than this")->capture_default_str();
  train_cmd->add_option("--save-every", tr.save_every, "Updates between save-points")->capture_default_str();
  train_cmd->add_option("--patience", tr.patience, "Save-points without a new best cross-entropy")->capture_default_str();
  train_cmd->add_option("--regime", tr.regime, "mixed | fine_tuned")->capture_default_str();
  train_cmd->add_option("--seed", tr.seed, "Random seed (default: $DEEPRNN_SEED or 1234)");
  train_cmd->add_option("--max-updates", tr.max_updates, "Update cap per phase (0: none)")->capture_default_str();
  train_cmd->add_option("--max-epochs", tr.max_epochs, "Epoch cap per phase (0: none)")->capture_default_str();
  train_cmd->add_option("--clip", tr.clip, "Global gradient norm limit")->capture_default_str();
  train_cmd->add_option("--selection", tr.selection, "bleu | xent")->capture_default_str();
  train_cmd->add_option("--keep", tr.keep, "Save-points kept in memory")->capture_default_str();
  train_cmd->add_option("--output-dir", tr.output_dir, "Checkpoint directory");
  train_cmd->add_option("--resume", tr.resume, "Continue from a checkpoint");

  TranslateArgs ts;
  auto* translate = app.add_subcommand("translate", "Beam-search translation with one model or an ensemble");
  translate->add_option("--models", ts.models, "Checkpoints (comma separated)")->delimiter(',');
  translate->add_option("--checkpoint-dir", ts.checkpoint_dir, "Ensemble the last --last checkpoints of a run");
  translate->add_option("--last", ts.last, "Checkpoint ensemble size")->capture_default_str();
  translate->add_option("-i,--input", ts.input, "Source text")->capture_default_str();
  translate->add_option("-o,--output", ts.output, "Output")->capture_default_str();
  translate->add_option("--beam", ts.beam, "Beam width")->capture_default_str();
  translate->add_option("--nbest", ts.nbest, "Hypotheses per sentence")->capture_default_str();
  translate->add_option("--max-length", ts.max_length, "Decoding steps (0: 2 x source + 5)")->capture_default_str();
  translate->add_flag("--nbest-format", ts.nbest_format, "Write n-best lines even for --nbest 1");
  translate->add_flag("--remove-bpe", ts.remove_bpe, "Join subword units in plain output");

  auto add_rerank_options = [](CLI::App* cmd, RerankArgs& r) {
    cmd->add_option("--alpha", r.alpha, "Length penalty exponent")->capture_default_str();
    cmd->add_option("--l2r-weight", r.l2r_weight, "Weight of the left-to-right score")->capture_default_str();
    cmd->add_option("--r2l-weight", r.r2l_weight, "Weight of the right-to-left score")->capture_default_str();
    cmd->add_flag("!--no-count-eos", r.count_eos, "Do not count the end symbol in the length");
    cmd->add_flag("--raw-l2r", r.raw_l2r, "Do not length-normalize the left-to-right score");
  };

  RescoreArgs rs;
  auto* rescore = app.add_subcommand("rescore", "Add right-to-left scores to an n-best list");
  rescore->add_option("--nbest", rs.nbest, "N-best input")->capture_default_str();
  rescore->add_option("--source", rs.source, "Source sentences the list was produced from")->required();
  rescore->add_option("--models", rs.models, "Right-to-left checkpoints (comma separated)")->required()->delimiter(',');
  rescore->add_option("-o,--output", rs.output, "N-best output")->capture_default_str();
  add_rerank_options(rescore, rs.rerank);

  RerankArgs rr;
  auto* rerank_cmd = app.add_subcommand("rerank", "Rerank n-best lists and print the 1-best");
  rerank_cmd->add_option("--nbest", rr.nbest, "N-best input")->capture_default_str();
  rerank_cmd->add_option("-o,--output", rr.output, "1-best output")->capture_default_str();
  rerank_cmd->add_option("--nbest-output", rr.nbest_output, "Also write the reranked lists");
  add_rerank_options(rerank_cmd, rr);
  rerank_cmd->add_flag("--quote-filter", rr.quote_filter, "Drop hypotheses made mostly of quotes");
  rerank_cmd->add_option("--quote-threshold", rr.quote_threshold, "Quote fraction above which to drop")->capture_default_str();
  rerank_cmd->add_option("--tune-alpha", rr.tune_references, "Pick alpha by BLEU against these references");
  rerank_cmd->add_option("--grid", rr.grid, "Alpha grid for tuning (default 0,0.1,...,1.5)")->delimiter(',');
  rerank_cmd->add_flag("--remove-bpe", rr.remove_bpe, "Join subword units in the output");

  BacktranslateArgs bt;
  auto* back = app.add_subcommand("backtranslate", "Create synthetic parallel data with a reverse model");
  back->add_option("--models", bt.models, "Reverse (target-to-source) checkpoints")->required()->delimiter(',');
  back->add_option("-i,--input", bt.input, "Target-language monolingual text")->capture_default_str();
  back->add_option("--out-src", bt.out_src, "Synthetic source output")->required();
  back->add_option("--out-tgt", bt.out_tgt, "Target output")->required();
  back->add_option("--beam", bt.beam, "Beam width")->capture_default_str();

  CopyArgs cp;
  auto* copy = app.add_subcommand("copy-corpus", "Turn monolingual text into a copied bitext");
  copy->add_option("-i,--input", cp.input, "Monolingual text")->capture_default_str();
  copy->add_option("--out-src", cp.out_src, "Source output")->required();
  copy->add_option("--out-tgt", cp.out_tgt, "Target output")->required();

  MixArgs mx;
  auto* mix_cmd = app.add_subcommand("mix", "Oversample and shuffle corpora by ratio");
  mix_cmd->add_option("--manifest", mx.manifest, "Lines of 'source-path target-path tag ratio'")->required();
  mix_cmd->add_option("--out-src", mx.out_src, "Source output")->required();
  mix_cmd->add_option("--out-tgt", mx.out_tgt, "Target output")->required();
  mix_cmd->add_option("--out-tags", mx.out_tags, "Provenance tag per line");
  mix_cmd->add_option("--seed", mx.seed, "Random seed (default: $DEEPRNN_SEED or 1234)");

  SelectArgs sl;
  auto* select = app.add_subcommand("select-data", "Moore-Lewis selection of in-domain sentences");
  select->add_option("--general", sl.general, "General-domain candidates")->required();
  select->add_option("--in-domain", sl.in_domain, "In-domain LM training text")->required();
  select->add_option("--general-lm-data", sl.general_lm_data, "General LM training text (default: --general)");
  select->add_option("--order", sl.order, "N-gram order")->capture_default_str();
  select->add_option("--top-k", sl.top_k, "Sentences to keep")->required();
  select->add_option("--min-len", sl.min_len, "Minimum tokens")->capture_default_str();
  select->add_option("--max-len", sl.max_len, "Maximum tokens")->capture_default_str();
  select->add_option("-o,--output", sl.output, "Selected sentences, best first")->capture_default_str();
  select->add_option("--scores", sl.scores, "index<TAB>score per selected sentence");

  BleuArgs bl;
  auto* bleu = app.add_subcommand("bleu", "Corpus BLEU of a hypothesis file against a reference file");
  bleu->add_option("hypotheses", bl.hypotheses, "Hypothesis file")->required();
  bleu->add_option("references", bl.references, "Reference file")->required();
  bleu->add_option("--max-n", bl.max_n, "Largest n-gram order")->capture_default_str();
  bleu->add_option("-o,--output", bl.output, "Also write the report here");
  bleu->add_flag("--remove-bpe", bl.remove_bpe, "Join subword units in the hypotheses first");

  experiment::RunArgs ra;
  auto* run = app.add_subcommand("run", "Run an experiment manifest");
  run->add_option("manifest", ra.manifest, "Experiment manifest")->required();
  run->add_option("--jobs", ra.jobs, "Worker threads for parallel stage groups")->capture_default_str();
  run->add_option("--seed", ra.seed, "Override the manifest seed");
  run->add_flag("--force", ra.force, "Rerun stages even when up to date");

  std::vector<std::string> argv_storage{"deeprnn"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_storage) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    tr.architecture_given = std::any_of(arch.begin(), arch.end(), [](CLI::Option* o) { return o->count() > 0; });
    if (*learn) return learn_bpe_command(lb, out, err);
    if (*apply) return apply_bpe_command(ab, out, err);
    if (*train_cmd) return train_command(tr, out, err);
    if (*translate) return translate_command(ts, out, err);
    if (*rescore) return rescore_command(rs, out, err);
    if (*rerank_cmd) return rerank_command(rr, out, err);
    if (*back) return backtranslate_command(bt, out, err);
    if (*copy) return copy_command(cp, out, err);
    if (*mix_cmd) return mix_command(mx, out, err);
    if (*select) return select_command(sl, out, err);
    if (*bleu) return bleu_command(bl, out, err);
    if (*run) {
      ra.seed_fallback = resolve_seed(std::nullopt);
      return experiment::run_experiment(ra, out, err, [](const std::vector<std::string>& a, std::ostream& o, std::ostream& e) {
        return run_cli(a, o, e);
      });
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kUsage;
}

}  // namespace deeprnn::cli
