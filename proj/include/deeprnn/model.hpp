#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "deeprnn/autodiff.hpp"
#include "deeprnn/errors.hpp"
#include "deeprnn/tensor.hpp"
#include "deeprnn/vocab.hpp"

namespace deeprnn {

enum class Family { shallow, deep_transition, stacked };
enum class Direction { left_to_right, right_to_left };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::shallow: return "shallow";
    case Family::deep_transition: return "deep_transition";
    case Family::stacked: return "stacked";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "shallow") return Family::shallow;
  if (s == "deep_transition" || s == "deep-transition") return Family::deep_transition;
  if (s == "stacked") return Family::stacked;
  throw UsageError("unknown model family '" + s + "'");
}

inline std::string to_string(Direction d) {
  return d == Direction::left_to_right ? "left_to_right" : "right_to_left";
}

inline Direction parse_direction(const std::string& s) {
  if (s == "left_to_right" || s == "l2r") return Direction::left_to_right;
  if (s == "right_to_left" || s == "r2l") return Direction::right_to_left;
  throw UsageError("unknown direction '" + s + "'");
}

/// Architecture configuration. For the deep-transition family enc_depth and
/// dec_depth are the transition depths (Ls, Lt); for the stacked family they
/// are the stack depths. The shallow baseline is a bidirectional GRU encoder
/// with a two-transition conditional GRU decoder.
struct ModelSpec {
  Family family = Family::deep_transition;
  int enc_depth = 4;
  int dec_depth = 8;
  int embedding_dim = 512;
  int hidden_dim = 1024;
  int src_vocab = 0;
  int tgt_vocab = 0;
  bool tie_output = true;
  bool layer_norm = true;
  Direction direction = Direction::left_to_right;

  void validate() const {
    if (embedding_dim <= 0 || hidden_dim <= 0) throw UsageError("model dims must be positive");
    if (src_vocab < 2 || tgt_vocab < 2) throw UsageError("vocabularies need at least 2 symbols");
    if (enc_depth < 1 || dec_depth < 1) throw UsageError("depths must be positive");
    switch (family) {
      case Family::shallow:
        if (enc_depth != 1 || dec_depth != 2) {
          throw UsageError("shallow model has encoder depth 1 and decoder depth 2");
        }
        break;
      case Family::deep_transition:
        if (dec_depth < 2) throw UsageError("deep transition decoder depth must be >= 2");
        break;
      case Family::stacked:
        break;
    }
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "family=" << to_string(family) << "\n"
       << "enc_depth=" << enc_depth << "\n"
       << "dec_depth=" << dec_depth << "\n"
       << "embedding_dim=" << embedding_dim << "\n"
       << "hidden_dim=" << hidden_dim << "\n"
       << "src_vocab=" << src_vocab << "\n"
       << "tgt_vocab=" << tgt_vocab << "\n"
       << "tie_output=" << (tie_output ? 1 : 0) << "\n"
       << "layer_norm=" << (layer_norm ? 1 : 0) << "\n"
       << "direction=" << to_string(direction) << "\n";
    return os.str();
  }

  /// Reads the keys written by to_text(); unknown keys are rejected.
  static ModelSpec from_pairs(const std::map<std::string, std::string>& kv) {
    ModelSpec s;
    auto integer = [&](const std::string& k) {
      try {
        return std::stoi(kv.at(k));
      } catch (const std::exception&) {
        throw DataError("model spec: bad or missing '" + k + "'");
      }
    };
    if (!kv.count("family")) throw DataError("model spec: missing family");
    s.family = parse_family(kv.at("family"));
    s.enc_depth = integer("enc_depth");
    s.dec_depth = integer("dec_depth");
    s.embedding_dim = integer("embedding_dim");
    s.hidden_dim = integer("hidden_dim");
    s.src_vocab = integer("src_vocab");
    s.tgt_vocab = integer("tgt_vocab");
    s.tie_output = integer("tie_output") != 0;
    s.layer_norm = integer("layer_norm") != 0;
    if (!kv.count("direction")) throw DataError("model spec: missing direction");
    s.direction = parse_direction(kv.at("direction"));
    for (const auto& [k, v] : kv) {
      static const char* known[] = {"family",    "enc_depth", "dec_depth",  "embedding_dim",
                                    "hidden_dim", "src_vocab", "tgt_vocab",  "tie_output",
                                    "layer_norm", "direction"};
      if (std::find(std::begin(known), std::end(known), k) == std::end(known)) {
        throw DataError("model spec: unknown key '" + k + "'");
      }
    }
    s.validate();
    return s;
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Named parameter tensors, ordered by name.
class ParamStore {
 public:
  void set(const std::string& name, Tensor value) { tensors_[name] = std::move(value); }
  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }

  const Tensor& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ShapeError("missing parameter '" + name + "'");
    return it->second;
  }
  Tensor& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ShapeError("missing parameter '" + name + "'");
    return it->second;
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  std::size_t size() const { return tensors_.size(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::map<std::string, Tensor> tensors_;
};

/// Aligned source/target id sequences, without end symbols.
struct Batch {
  std::vector<std::vector<int>> source;
  std::vector<std::vector<int>> target;
  std::size_t size() const { return source.size(); }
};

/// Encoder output for a batch: one bidirectional annotation per source
/// position (the end symbol included), plus the attention key projection.
struct Encoding {
  std::vector<ad::Var> annotations;
  std::vector<ad::Var> keys;
  Tensor mask;  // batch x positions, 1 for real positions
  std::size_t batch = 0;
  std::size_t positions() const { return annotations.size(); }
};

struct DecoderState {
  // deep transition / shallow: {s_j}; stacked: {base state, h_2, ..., h_D}
  std::vector<ad::Var> layers;
};

struct StepOutput {
  DecoderState state;
  ad::Var logits;
  ad::Var attention;
  ad::Var context;
  ad::Var output_state;  // final decoder word state fed to the output network
};

struct LossResult {
  ad::Var total;  // summed token negative log-likelihood
  ad::Var mean;   // per target token
  std::size_t tokens = 0;
};

namespace detail {

inline void fill_uniform(Tensor& t, Real scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<Real> dist(-scale, scale);
  for (Real& v : t.values()) v = dist(rng);
}

inline void fill_orthogonal(Tensor& t, std::mt19937_64& rng) {
  std::normal_distribution<Real> dist(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(t.rows());
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = dist(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) t(i, j) = q(i, j);
}

}  // namespace detail

/// Parameter inventory of a spec: name -> shape, with an init kind.
struct ParamShape {
  std::string name;
  std::size_t rows;
  std::size_t cols;
  enum Kind { embedding, recurrent, feedforward, zero, one } kind;
};

inline void append_gru_shapes(std::vector<ParamShape>& out, const std::string& prefix,
                              std::size_t input_dim, std::size_t hidden, bool layer_norm) {
  const char* gates[] = {"z", "r", "h"};
  for (const char* gate : gates) {
    const std::string g = gate;
    if (input_dim > 0) out.push_back({prefix + ".W" + g, input_dim, hidden, ParamShape::feedforward});
    out.push_back({prefix + ".U" + g, hidden, hidden, ParamShape::recurrent});
    out.push_back({prefix + ".b" + g, 1, hidden, ParamShape::zero});
    if (layer_norm) {
      if (input_dim > 0) {
        out.push_back({prefix + ".ln_W" + g + ".g", 1, hidden, ParamShape::one});
        out.push_back({prefix + ".ln_W" + g + ".b", 1, hidden, ParamShape::zero});
      }
      out.push_back({prefix + ".ln_U" + g + ".g", 1, hidden, ParamShape::one});
      out.push_back({prefix + ".ln_U" + g + ".b", 1, hidden, ParamShape::zero});
    }
  }
}

inline std::vector<ParamShape> parameter_shapes(const ModelSpec& spec) {
  spec.validate();
  const auto E = static_cast<std::size_t>(spec.embedding_dim);
  const auto H = static_cast<std::size_t>(spec.hidden_dim);
  const auto Vs = static_cast<std::size_t>(spec.src_vocab);
  const auto Vt = static_cast<std::size_t>(spec.tgt_vocab);
  const bool ln = spec.layer_norm;
  std::vector<ParamShape> out;
  auto add_ln = [&](const std::string& name, std::size_t dim) {
    if (!ln) return;
    out.push_back({name + ".g", 1, dim, ParamShape::one});
    out.push_back({name + ".b", 1, dim, ParamShape::zero});
  };

  out.push_back({"enc.emb", Vs, E, ParamShape::embedding});
  out.push_back({"dec.emb", Vt, E, ParamShape::embedding});

  for (const char* side : {"enc.fwd", "enc.bwd"}) {
    append_gru_shapes(out, std::string(side) + ".1", E, H, ln);
    for (int k = 2; k <= spec.enc_depth; ++k) {
      const std::size_t in = spec.family == Family::stacked ? H : 0;
      append_gru_shapes(out, std::string(side) + "." + std::to_string(k), in, H, ln);
    }
  }

  out.push_back({"dec.init.W", 2 * H, H, ParamShape::feedforward});
  out.push_back({"dec.init.b", 1, H, ParamShape::zero});
  add_ln("dec.init.ln", H);

  out.push_back({"att.Wc", 2 * H, H, ParamShape::feedforward});
  out.push_back({"att.b", 1, H, ParamShape::zero});
  out.push_back({"att.Ws", H, H, ParamShape::feedforward});
  out.push_back({"att.v", H, 1, ParamShape::feedforward});
  add_ln("att.ln_c", H);
  add_ln("att.ln_s", H);

  append_gru_shapes(out, "dec.1", E, H, ln);
  append_gru_shapes(out, "dec.2", 2 * H, H, ln);
  if (spec.family == Family::deep_transition) {
    for (int k = 3; k <= spec.dec_depth; ++k) {
      append_gru_shapes(out, "dec." + std::to_string(k), 0, H, ln);
    }
  } else if (spec.family == Family::stacked) {
    for (int k = 2; k <= spec.dec_depth; ++k) {
      append_gru_shapes(out, "dec.l" + std::to_string(k), 3 * H, H, ln);
    }
  }

  out.push_back({"out.Ws", H, E, ParamShape::feedforward});
  out.push_back({"out.Wy", E, E, ParamShape::feedforward});
  out.push_back({"out.Wc", 2 * H, E, ParamShape::feedforward});
  out.push_back({"out.b", 1, E, ParamShape::zero});
  add_ln("out.ln_s", E);
  add_ln("out.ln_y", E);
  add_ln("out.ln_c", E);
  if (!spec.tie_output) out.push_back({"out.W", Vt, E, ParamShape::embedding});
  out.push_back({"out.bias", 1, Vt, ParamShape::zero});
  return out;
}

/// Seeded initialization: uniform(+-0.05) embeddings, orthogonal recurrent
/// matrices, Glorot-uniform feed-forward matrices.
inline ParamStore initialize_parameters(const ModelSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore store;
  for (const auto& s : parameter_shapes(spec)) {
    Tensor t = Tensor::matrix(s.rows, s.cols);
    switch (s.kind) {
      case ParamShape::embedding: detail::fill_uniform(t, 0.05, rng); break;
      case ParamShape::recurrent: detail::fill_orthogonal(t, rng); break;
      case ParamShape::feedforward:
        detail::fill_uniform(t, std::sqrt(6.0 / static_cast<Real>(s.rows + s.cols)), rng);
        break;
      case ParamShape::zero: break;
      case ParamShape::one: t.fill(1.0); break;
    }
    store.set(s.name, std::move(t));
  }
  return store;
}

inline std::vector<int> reversed(std::vector<int> ids) {
  std::reverse(ids.begin(), ids.end());
  return ids;
}

/// Attentional encoder-decoder over a ParamStore. All computation goes
/// through an ad::Graph, so the same code path serves training (recording
/// graph) and decoding (non-recording graph).
class Model {
 public:
  Model() = default;
  Model(ModelSpec spec, ParamStore params) : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
    for (const auto& s : parameter_shapes(spec_)) {
      const Tensor& t = params_.at(s.name);
      if (t.rows() != s.rows || t.cols() != s.cols) {
        throw ShapeError("parameter '" + s.name + "' has shape " + shape_string(t));
      }
    }
  }

  static Model initialize(const ModelSpec& spec, std::uint64_t seed) {
    return Model(spec, initialize_parameters(spec, seed));
  }

  const ModelSpec& spec() const { return spec_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

  ad::Var param(ad::Graph& g, const std::string& name) const {
    return g.parameter(name, params_.at(name));
  }

  /// One GRU transition. Without an input only the hidden-to-hidden terms
  /// contribute.
  ad::Var gru(ad::Graph& g, const std::string& prefix, std::optional<ad::Var> input,
              ad::Var h) const {
    auto term = [&](ad::Var x, const std::string& w) {
      ad::Var y = g.matmul(x, param(g, prefix + "." + w));
      if (spec_.layer_norm) {
        y = g.layer_norm(y, param(g, prefix + ".ln_" + w + ".g"),
                         param(g, prefix + ".ln_" + w + ".b"));
      }
      return y;
    };
    auto gate_preact = [&](const std::string& gate) {
      ad::Var pre = term(h, "U" + gate);
      if (input) pre = g.add(term(*input, "W" + gate), pre);
      return g.add(pre, param(g, prefix + ".b" + gate));
    };
    ad::Var z = g.sigmoid(gate_preact("z"));
    ad::Var r = g.sigmoid(gate_preact("r"));
    ad::Var hidden_part = g.mul(r, term(h, "Uh"));
    ad::Var pre = input ? g.add(term(*input, "Wh"), hidden_part) : hidden_part;
    ad::Var candidate = g.tanh(g.add(pre, param(g, prefix + ".bh")));
    return g.interpolate(z, h, candidate);
  }

  Encoding encode(ad::Graph& g, const std::vector<std::vector<int>>& sources) const {
    if (sources.empty()) throw DataError("encode: empty batch");
    std::size_t longest = 0;
    for (const auto& s : sources) {
      if (s.empty()) throw DataError("encode: empty source sentence");
      longest = std::max(longest, s.size());
    }
    const std::size_t B = sources.size();
    const std::size_t N = longest + 1;  // end symbol appended
    Encoding enc;
    enc.batch = B;
    enc.mask = Tensor::matrix(B, N);
    std::vector<std::vector<int>> ids(N, std::vector<int>(B, -1));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = 0; i <= sources[b].size(); ++i) {
        ids[i][b] = i < sources[b].size() ? sources[b][i] : kEos;
        if (ids[i][b] < 0 || ids[i][b] >= spec_.src_vocab) {
          throw ShapeError("encode: source id out of range");
        }
        enc.mask(b, i) = 1.0;
      }
    }
    std::vector<ad::Var> embedded;
    ad::Var table = param(g, "enc.emb");
    for (std::size_t i = 0; i < N; ++i) embedded.push_back(g.embedding(table, ids[i]));

    std::vector<ad::Var> fwd, bwd;
    switch (spec_.family) {
      case Family::shallow:
        fwd = run_shallow(g, "enc.fwd", embedded, enc.mask, true);
        bwd = run_shallow(g, "enc.bwd", embedded, enc.mask, false);
        break;
      case Family::deep_transition:
        fwd = run_deep_transition(g, "enc.fwd", embedded, enc.mask, true);
        bwd = run_deep_transition(g, "enc.bwd", embedded, enc.mask, false);
        break;
      case Family::stacked:
        fwd = run_stack(g, "enc.fwd", embedded, enc.mask, true);
        bwd = run_stack(g, "enc.bwd", embedded, enc.mask, false);
        break;
    }
    for (std::size_t i = 0; i < N; ++i) {
      ad::Var c = g.concat_cols({fwd[i], bwd[i]});
      enc.annotations.push_back(c);
      enc.keys.push_back(project_key(g, c));
    }
    return enc;
  }

  /// Selects batch rows of an encoding (used to expand one sentence to a beam).
  Encoding select_rows(ad::Graph& g, const Encoding& enc, const std::vector<std::size_t>& rows) const {
    Encoding out;
    out.batch = rows.size();
    out.mask = Tensor::matrix(rows.size(), enc.positions());
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t i = 0; i < enc.positions(); ++i) out.mask(r, i) = enc.mask(rows[r], i);
    for (std::size_t i = 0; i < enc.positions(); ++i) {
      out.annotations.push_back(g.gather_rows(enc.annotations[i], rows));
      out.keys.push_back(g.gather_rows(enc.keys[i], rows));
    }
    return out;
  }

  DecoderState select_rows(ad::Graph& g, const DecoderState& s, const std::vector<std::size_t>& rows) const {
    DecoderState out;
    for (ad::Var v : s.layers) out.layers.push_back(g.gather_rows(v, rows));
    return out;
  }

  DecoderState initial_state(ad::Graph& g, const Encoding& enc) const {
    Tensor weights = Tensor::matrix(enc.batch, enc.positions());
    for (std::size_t b = 0; b < enc.batch; ++b) {
      Real len = 0;
      for (std::size_t i = 0; i < enc.positions(); ++i) len += enc.mask(b, i);
      for (std::size_t i = 0; i < enc.positions(); ++i) weights(b, i) = enc.mask(b, i) / len;
    }
    ad::Var mean = g.weighted_sum(g.constant(std::move(weights)), enc.annotations);
    ad::Var pre = g.matmul(mean, param(g, "dec.init.W"));
    if (spec_.layer_norm) pre = g.layer_norm(pre, param(g, "dec.init.ln.g"), param(g, "dec.init.ln.b"));
    DecoderState s;
    s.layers.push_back(g.tanh(g.add(pre, param(g, "dec.init.b"))));
    if (spec_.family == Family::stacked) {
      const auto H = static_cast<std::size_t>(spec_.hidden_dim);
      for (int k = 2; k <= spec_.dec_depth; ++k) {
        s.layers.push_back(g.constant(Tensor::matrix(enc.batch, H)));
      }
    }
    return s;
  }

  /// Attention: additive scoring of every source key against `query`,
  /// softmax over real positions, context = weighted sum of annotations.
  std::pair<ad::Var, ad::Var> attend(ad::Graph& g, const Encoding& enc, ad::Var query) const {
    ad::Var q = g.matmul(query, param(g, "att.Ws"));
    if (spec_.layer_norm) q = g.layer_norm(q, param(g, "att.ln_s.g"), param(g, "att.ln_s.b"));
    ad::Var v = param(g, "att.v");
    std::vector<ad::Var> scores;
    scores.reserve(enc.positions());
    for (ad::Var key : enc.keys) scores.push_back(g.matmul(g.tanh(g.add(key, q)), v));
    ad::Var alpha = g.masked_softmax(g.concat_cols(scores), enc.mask);
    ad::Var context = g.weighted_sum(alpha, enc.annotations);
    return {alpha, context};
  }

  /// One decoder step. `prev` holds the previous target ids per row (-1 for
  /// the first step, which uses a zero embedding).
  StepOutput step(ad::Graph& g, const Encoding& enc, const DecoderState& state,
                  const std::vector<int>& prev) const {
    if (prev.size() != enc.batch) throw ShapeError("step: previous-token count != batch");
    ad::Var y = g.embedding(param(g, "dec.emb"), prev);
    StepOutput out;
    switch (spec_.family) {
      case Family::shallow: {
        ad::Var s1 = gru(g, "dec.1", y, state.layers.at(0));
        auto [alpha, ctx] = attend(g, enc, s1);
        ad::Var s2 = gru(g, "dec.2", ctx, s1);
        out.state.layers = {s2};
        out.attention = alpha;
        out.context = ctx;
        out.output_state = s2;
        break;
      }
      case Family::deep_transition: {
        ad::Var s = gru(g, "dec.1", y, state.layers.at(0));
        auto [alpha, ctx] = attend(g, enc, s);
        s = gru(g, "dec.2", ctx, s);
        for (int k = 3; k <= spec_.dec_depth; ++k) s = gru(g, "dec." + std::to_string(k), std::nullopt, s);
        out.state.layers = {s};
        out.attention = alpha;
        out.context = ctx;
        out.output_state = s;
        break;
      }
      case Family::stacked: {
        ad::Var s1 = gru(g, "dec.1", y, state.layers.at(0));
        auto [alpha, ctx] = attend(g, enc, s1);
        ad::Var below = gru(g, "dec.2", ctx, s1);
        out.state.layers = {below};
        for (int k = 2; k <= spec_.dec_depth; ++k) {
          ad::Var input = g.concat_cols({below, ctx});
          ad::Var h = gru(g, "dec.l" + std::to_string(k), input,
                          state.layers.at(static_cast<std::size_t>(k - 1)));
          out.state.layers.push_back(h);
          below = g.add(h, below);
        }
        out.attention = alpha;
        out.context = ctx;
        out.output_state = below;
        break;
      }
    }
    out.logits = output_layer(g, out.output_state, y, out.context);
    return out;
  }

  /// Target ids as the decoder consumes them (reversed for right-to-left).
  std::vector<int> oriented(const std::vector<int>& target) const {
    return spec_.direction == Direction::right_to_left ? reversed(target) : target;
  }

  /// Teacher-forced cross-entropy; the end symbol is a prediction target.
  LossResult loss(ad::Graph& g, const Batch& batch) const {
    if (batch.size() == 0) throw DataError("loss: empty batch");
    if (batch.source.size() != batch.target.size()) throw DataError("loss: unaligned batch");
    Encoding enc = encode(g, batch.source);
    const std::size_t B = batch.size();
    std::vector<std::vector<int>> targets;
    std::size_t T = 0;
    for (const auto& t : batch.target) {
      targets.push_back(oriented(t));
      targets.back().push_back(kEos);
      T = std::max(T, targets.back().size());
    }
    DecoderState state = initial_state(g, enc);
    std::vector<int> prev(B, -1);
    LossResult result;
    for (std::size_t j = 0; j < T; ++j) {
      StepOutput out = step(g, enc, state, prev);
      std::vector<int> tgt(B, 0);
      std::vector<Real> w(B, 0.0);
      for (std::size_t b = 0; b < B; ++b) {
        if (j < targets[b].size()) {
          tgt[b] = targets[b][j];
          w[b] = 1.0;
          ++result.tokens;
        }
        prev[b] = j < targets[b].size() ? targets[b][j] : -1;
      }
      ad::Var term = g.cross_entropy(out.logits, tgt, w);
      result.total = result.total.valid() ? g.add(result.total, term) : term;
      state = out.state;
    }
    result.mean = g.scale(result.total, 1.0 / static_cast<Real>(result.tokens));
    return result;
  }

  /// Per-sentence log-probabilities of every reference token (end symbol last).
  std::vector<std::vector<Real>> token_logprobs(const Batch& batch) const {
    ad::Graph g(false);
    Encoding enc = encode(g, batch.source);
    const std::size_t B = batch.size();
    std::vector<std::vector<int>> targets;
    std::size_t T = 0;
    for (const auto& t : batch.target) {
      targets.push_back(oriented(t));
      targets.back().push_back(kEos);
      T = std::max(T, targets.back().size());
    }
    std::vector<std::vector<Real>> out(B);
    DecoderState state = initial_state(g, enc);
    std::vector<int> prev(B, -1);
    for (std::size_t j = 0; j < T; ++j) {
      StepOutput step_out = step(g, enc, state, prev);
      const Tensor& logits = g.value(step_out.logits);
      for (std::size_t b = 0; b < B; ++b) {
        if (j < targets[b].size()) {
          auto lp = log_softmax(logits.row_span(b));
          out[b].push_back(lp[static_cast<std::size_t>(targets[b][j])]);
          prev[b] = targets[b][j];
        } else {
          prev[b] = -1;
        }
      }
      state = step_out.state;
    }
    return out;
  }

  /// Batched greedy decoding; returns target ids in natural order, without
  /// the end symbol.
  std::vector<std::vector<int>> greedy(const std::vector<std::vector<int>>& sources,
                                       std::size_t max_length) const {
    ad::Graph g(false);
    Encoding enc = encode(g, sources);
    const std::size_t B = sources.size();
    DecoderState state = initial_state(g, enc);
    std::vector<int> prev(B, -1);
    std::vector<std::vector<int>> out(B);
    std::vector<bool> done(B, false);
    for (std::size_t t = 0; t < max_length; ++t) {
      StepOutput s = step(g, enc, state, prev);
      const Tensor& logits = g.value(s.logits);
      bool all_done = true;
      for (std::size_t b = 0; b < B; ++b) {
        auto row = logits.row_span(b);
        const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        prev[b] = best;
        if (done[b]) continue;
        if (best == kEos) {
          done[b] = true;
        } else {
          out[b].push_back(best);
        }
        all_done = all_done && done[b];
      }
      state = s.state;
      if (all_done) break;
    }
    if (spec_.direction == Direction::right_to_left) {
      for (auto& o : out) o = reversed(o);
    }
    return out;
  }

 private:
  ad::Var project_key(ad::Graph& g, ad::Var annotation) const {
    ad::Var k = g.matmul(annotation, param(g, "att.Wc"));
    if (spec_.layer_norm) k = g.layer_norm(k, param(g, "att.ln_c.g"), param(g, "att.ln_c.b"));
    return g.add(k, param(g, "att.b"));
  }

  ad::Var output_layer(ad::Graph& g, ad::Var state, ad::Var prev_embedding, ad::Var context) const {
    auto term = [&](ad::Var x, const std::string& w, const std::string& ln) {
      ad::Var y = g.matmul(x, param(g, "out." + w));
      if (spec_.layer_norm) y = g.layer_norm(y, param(g, "out." + ln + ".g"), param(g, "out." + ln + ".b"));
      return y;
    };
    ad::Var hidden = g.add(g.add(term(state, "Ws", "ln_s"), term(prev_embedding, "Wy", "ln_y")),
                           term(context, "Wc", "ln_c"));
    hidden = g.tanh(g.add(hidden, param(g, "out.b")));
    // no normalization on the layer feeding the softmax
    ad::Var projection = param(g, spec_.tie_output ? "dec.emb" : "out.W");
    return g.add(g.matmul_nt(hidden, projection), param(g, "out.bias"));
  }

  static bool has_padding(const Tensor& mask, std::size_t position) {
    for (std::size_t b = 0; b < mask.rows(); ++b)
      if (mask(b, position) == 0) return true;
    return false;
  }

  static std::vector<Real> mask_column(const Tensor& mask, std::size_t position) {
    std::vector<Real> m(mask.rows());
    for (std::size_t b = 0; b < mask.rows(); ++b) m[b] = mask(b, position);
    return m;
  }

  std::vector<std::size_t> order(std::size_t n, bool forward) const {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = forward ? i : n - 1 - i;
    return idx;
  }

  ad::Var zero_state(ad::Graph& g, std::size_t batch) const {
    return g.constant(Tensor::matrix(batch, static_cast<std::size_t>(spec_.hidden_dim)));
  }

  // Padded positions carry the previous state unchanged, so a backward pass
  // enters each sentence with a zero state.
  ad::Var carry(ad::Graph& g, ad::Var next, ad::Var prev, const Tensor& mask, std::size_t i) const {
    return has_padding(mask, i) ? g.blend(next, prev, mask_column(mask, i)) : next;
  }

  std::vector<ad::Var> run_shallow(ad::Graph& g, const std::string& prefix,
                                   const std::vector<ad::Var>& inputs, const Tensor& mask,
                                   bool forward) const {
    std::vector<ad::Var> states(inputs.size());
    ad::Var h = zero_state(g, mask.rows());
    for (std::size_t i : order(inputs.size(), forward)) {
      h = carry(g, gru(g, prefix + ".1", inputs[i], h), h, mask, i);
      states[i] = h;
    }
    return states;
  }

  std::vector<ad::Var> run_deep_transition(ad::Graph& g, const std::string& prefix,
                                           const std::vector<ad::Var>& inputs, const Tensor& mask,
                                           bool forward) const {
    std::vector<ad::Var> states(inputs.size());
    ad::Var h = zero_state(g, mask.rows());
    for (std::size_t i : order(inputs.size(), forward)) {
      ad::Var t = gru(g, prefix + ".1", inputs[i], h);
      for (int k = 2; k <= spec_.enc_depth; ++k) {
        t = gru(g, prefix + "." + std::to_string(k), std::nullopt, t);
      }
      h = carry(g, t, h, mask, i);
      states[i] = h;
    }
    return states;
  }

  // Alternating-direction stack with residual connections above layer 1.
  std::vector<ad::Var> run_stack(ad::Graph& g, const std::string& prefix,
                                 const std::vector<ad::Var>& inputs, const Tensor& mask,
                                 bool first_forward) const {
    std::vector<ad::Var> below = inputs;
    for (int layer = 1; layer <= spec_.enc_depth; ++layer) {
      const bool forward = (layer % 2 == 1) == first_forward;
      const std::string name = prefix + "." + std::to_string(layer);
      std::vector<ad::Var> words(inputs.size());
      ad::Var h = zero_state(g, mask.rows());
      for (std::size_t i : order(inputs.size(), forward)) {
        h = carry(g, gru(g, name, below[i], h), h, mask, i);
        words[i] = layer == 1 ? h : g.add(h, below[i]);
      }
      below = std::move(words);
    }
    return below;
  }

  ModelSpec spec_;
  ParamStore params_;
};

}  // namespace deeprnn
