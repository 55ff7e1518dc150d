#pragma once

// Independent reference implementations used to derive expected values.
// None of these call into the library code they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "deeprnn/decode.hpp"
#include "deeprnn/model.hpp"
#include "deeprnn/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

// ---------------------------------------------------------------- numerics

/// Fourth-order central difference of f at x[i].
inline double five_point(const std::function<double()>& f, double& x, double h) {
  const double x0 = x;
  x = x0 + h;
  const double f1 = f();
  x = x0 - h;
  const double fm1 = f();
  x = x0 + 2 * h;
  const double f2 = f();
  x = x0 - 2 * h;
  const double fm2 = f();
  x = x0;
  return (8 * (f1 - fm1) - (f2 - fm2)) / (12 * h);
}

inline double central(const std::function<double()>& f, double& x, double h) {
  const double x0 = x;
  x = x0 + h;
  const double fp = f();
  x = x0 - h;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2 * h);
}

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// ---------------------------------------------------------------- scalar model

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec add(Vec a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline Vec concat(Vec a, const Vec& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

/// Plain-loop evaluation of the network for a single sentence pair.
class ReferenceModel {
 public:
  ReferenceModel(const deeprnn::ModelSpec& spec, const deeprnn::ParamStore& params)
      : s_(spec), p_(params) {}

  Vec row(const std::string& name, std::size_t r = 0) const {
    const auto& t = p_.at(name);
    Vec out(t.cols());
    for (std::size_t c = 0; c < t.cols(); ++c) out[c] = t(r, c);
    return out;
  }

  // x (1 x in) times W (in x out)
  Vec times(const Vec& x, const std::string& name) const {
    const auto& w = p_.at(name);
    Vec out(w.cols(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) out[j] += x[i] * w(i, j);
    return out;
  }

  Vec norm(const Vec& a, const std::string& name) const {
    if (!s_.layer_norm) return a;
    const Vec g = row(name + ".g"), b = row(name + ".b");
    double mu = 0, var = 0;
    for (double v : a) mu += v;
    mu /= static_cast<double>(a.size());
    for (double v : a) var += (v - mu) * (v - mu);
    var /= static_cast<double>(a.size());
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = g[i] * (a[i] - mu) / std::sqrt(var + 1e-5) + b[i];
    return out;
  }

  Vec term(const Vec& x, const std::string& prefix, const std::string& w) const {
    return norm(times(x, prefix + "." + w), prefix + ".ln_" + w);
  }

  /// z = s(Wz x + Uz h + bz); r = s(Wr x + Ur h + br);
  /// c = tanh(Wh x + r * (Uh h) + bh); out = (1 - z) h + z c
  Vec gru(const std::string& prefix, const std::optional<Vec>& x, const Vec& h) const {
    const std::size_t H = h.size();
    auto gate = [&](const std::string& g) {
      Vec pre = term(h, prefix, "U" + g);
      if (x) pre = add(term(*x, prefix, "W" + g), pre);
      pre = add(pre, row(prefix + ".b" + g));
      for (double& v : pre) v = sigmoid(v);
      return pre;
    };
    const Vec z = gate("z"), r = gate("r");
    Vec uh = term(h, prefix, "Uh");
    Vec cand(H);
    const Vec wh = x ? term(*x, prefix, "Wh") : Vec(H, 0.0);
    const Vec bh = row(prefix + ".bh");
    for (std::size_t i = 0; i < H; ++i) cand[i] = std::tanh(wh[i] + r[i] * uh[i] + bh[i]);
    Vec out(H);
    for (std::size_t i = 0; i < H; ++i) out[i] = (1 - z[i]) * h[i] + z[i] * cand[i];
    return out;
  }

  std::vector<Vec> annotations(const std::vector<int>& source) const {
    std::vector<Vec> x;
    for (int id : source) x.push_back(row("enc.emb", static_cast<std::size_t>(id)));
    x.push_back(row("enc.emb", 0));  // end symbol
    const auto fwd = side("enc.fwd", x, true);
    const auto bwd = side("enc.bwd", x, false);
    std::vector<Vec> c;
    for (std::size_t i = 0; i < x.size(); ++i) c.push_back(concat(fwd[i], bwd[i]));
    return c;
  }

  /// Log-probability of each reference token (end symbol last) under teacher forcing.
  Vec token_logprobs(const std::vector<int>& source, std::vector<int> target) const {
    const auto C = annotations(source);
    std::vector<Vec> keys;
    for (const auto& c : C) keys.push_back(add(norm(times(c, "att.Wc"), "att.ln_c"), row("att.b")));
    Vec mean(C[0].size(), 0.0);
    for (const auto& c : C)
      for (std::size_t i = 0; i < c.size(); ++i) mean[i] += c[i] / static_cast<double>(C.size());
    Vec s0 = add(norm(times(mean, "dec.init.W"), "dec.init.ln"), row("dec.init.b"));
    for (double& v : s0) v = std::tanh(v);
    const std::size_t H = s0.size();
    std::vector<Vec> layers{s0};
    if (s_.family == deeprnn::Family::stacked)
      for (int k = 2; k <= s_.dec_depth; ++k) layers.push_back(Vec(H, 0.0));

    if (s_.direction == deeprnn::Direction::right_to_left) std::reverse(target.begin(), target.end());
    target.push_back(0);
    Vec out;
    int prev = -1;
    for (int t : target) {
      const Vec y = prev < 0 ? Vec(static_cast<std::size_t>(s_.embedding_dim), 0.0)
                             : row("dec.emb", static_cast<std::size_t>(prev));
      auto attend = [&](const Vec& query) {
        const Vec q = norm(times(query, "att.Ws"), "att.ln_s");
        const Vec v = column("att.v");
        Vec e(C.size());
        for (std::size_t i = 0; i < C.size(); ++i) {
          double sc = 0;
          for (std::size_t j = 0; j < H; ++j) sc += std::tanh(keys[i][j] + q[j]) * v[j];
          e[i] = sc;
        }
        const Vec a = softmax(e);
        Vec ctx(C[0].size(), 0.0);
        for (std::size_t i = 0; i < C.size(); ++i)
          for (std::size_t j = 0; j < ctx.size(); ++j) ctx[j] += a[i] * C[i][j];
        return ctx;
      };
      Vec state, ctx;
      if (s_.family == deeprnn::Family::stacked) {
        const Vec s1 = gru("dec.1", y, layers[0]);
        ctx = attend(s1);
        Vec below = gru("dec.2", ctx, s1);
        std::vector<Vec> next{below};
        for (int k = 2; k <= s_.dec_depth; ++k) {
          const Vec h = gru("dec.l" + std::to_string(k), concat(below, ctx), layers[static_cast<std::size_t>(k - 1)]);
          next.push_back(h);
          below = add(h, below);
        }
        layers = next;
        state = below;
      } else {
        Vec s = gru("dec.1", y, layers[0]);
        ctx = attend(s);
        s = gru("dec.2", ctx, s);
        if (s_.family == deeprnn::Family::deep_transition)
          for (int k = 3; k <= s_.dec_depth; ++k) s = gru("dec." + std::to_string(k), std::nullopt, s);
        layers = {s};
        state = s;
      }
      Vec hid = add(add(norm(times(state, "out.Ws"), "out.ln_s"), norm(times(y, "out.Wy"), "out.ln_y")),
                    norm(times(ctx, "out.Wc"), "out.ln_c"));
      hid = add(hid, row("out.b"));
      for (double& v : hid) v = std::tanh(v);
      const auto& proj = p_.at(s_.tie_output ? "dec.emb" : "out.W");
      const Vec bias = row("out.bias");
      Vec logits(proj.rows());
      for (std::size_t v = 0; v < proj.rows(); ++v) {
        double acc = bias[v];
        for (std::size_t j = 0; j < proj.cols(); ++j) acc += proj(v, j) * hid[j];
        logits[v] = acc;
      }
      const Vec probs = softmax(logits);
      out.push_back(std::log(probs[static_cast<std::size_t>(t)]));
      prev = t;
    }
    return out;
  }

  static Vec softmax(const Vec& a) {
    const double m = *std::max_element(a.begin(), a.end());
    double z = 0;
    for (double v : a) z += std::exp(v - m);
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::exp(a[i] - m) / z;
    return out;
  }

 private:
  Vec column(const std::string& name) const {
    const auto& t = p_.at(name);
    Vec out(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) out[r] = t(r, 0);
    return out;
  }

  std::vector<Vec> side(const std::string& prefix, const std::vector<Vec>& x, bool forward) const {
    const std::size_t N = x.size(), H = static_cast<std::size_t>(s_.hidden_dim);
    auto positions = [&](bool fwd) {
      std::vector<std::size_t> idx(N);
      for (std::size_t i = 0; i < N; ++i) idx[i] = fwd ? i : N - 1 - i;
      return idx;
    };
    if (s_.family == deeprnn::Family::stacked) {
      std::vector<Vec> below = x;
      for (int layer = 1; layer <= s_.enc_depth; ++layer) {
        const bool fwd = (layer % 2 == 1) == forward;
        std::vector<Vec> words(N);
        Vec h(H, 0.0);
        for (std::size_t i : positions(fwd)) {
          h = gru(prefix + "." + std::to_string(layer), below[i], h);
          words[i] = layer == 1 ? h : add(h, below[i]);
        }
        below = words;
      }
      return below;
    }
    std::vector<Vec> states(N);
    Vec h(H, 0.0);
    for (std::size_t i : positions(forward)) {
      Vec t = gru(prefix + ".1", x[i], h);
      if (s_.family == deeprnn::Family::deep_transition)
        for (int k = 2; k <= s_.enc_depth; ++k) t = gru(prefix + "." + std::to_string(k), std::nullopt, t);
      h = t;
      states[i] = h;
    }
    return states;
  }

  deeprnn::ModelSpec s_;
  const deeprnn::ParamStore& p_;
};

// ---------------------------------------------------------------- BPE

using Symbols = std::vector<std::string>;

inline Symbols characters_with_end(const std::string& word) {
  Symbols out;
  for (std::size_t i = 0; i < word.size();) {
    const unsigned char c = static_cast<unsigned char>(word[i]);
    const std::size_t n = c < 0x80 ? 1 : c < 0xE0 ? 2 : c < 0xF0 ? 3 : 4;
    out.push_back(word.substr(i, n));
    i += n;
  }
  out.back() += "</w>";
  return out;
}

inline Symbols merge_once(const Symbols& syms, const std::string& a, const std::string& b) {
  Symbols out;
  for (std::size_t i = 0; i < syms.size(); ++i) {
    if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
      out.push_back(a + b);
      ++i;
    } else {
      out.push_back(syms[i]);
    }
  }
  return out;
}

/// Recounts every adjacent pair over the word-frequency table at each step.
inline std::vector<std::pair<std::string, std::string>> learn_bpe(const std::vector<std::string>& words,
                                                                  std::size_t ops, std::size_t min_frequency = 2) {
  std::vector<std::pair<Symbols, std::size_t>> table;
  for (const auto& w : words) {
    auto it = std::find_if(table.begin(), table.end(),
                           [&](const auto& e) { return e.first == characters_with_end(w); });
    if (it == table.end()) table.push_back({characters_with_end(w), 1});
    else ++it->second;
  }
  std::vector<std::pair<std::string, std::string>> merges;
  while (merges.size() < ops) {
    std::vector<std::pair<std::pair<std::string, std::string>, std::size_t>> counts;
    for (const auto& [syms, n] : table) {
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        const auto key = std::make_pair(syms[i], syms[i + 1]);
        auto it = std::find_if(counts.begin(), counts.end(), [&](const auto& c) { return c.first == key; });
        if (it == counts.end()) counts.push_back({key, n});
        else it->second += n;
      }
    }
    if (counts.empty()) break;
    auto best = counts.front();
    for (const auto& c : counts)
      if (c.second > best.second || (c.second == best.second && c.first < best.first)) best = c;
    if (best.second < min_frequency) break;
    merges.push_back(best.first);
    for (auto& [syms, n] : table) syms = merge_once(syms, best.first.first, best.first.second);
  }
  return merges;
}

/// Output units of a word under merges applied in table order, marked with
/// "@@" on all but the last.
inline std::vector<std::string> apply_bpe(const std::string& word,
                                          const std::vector<std::pair<std::string, std::string>>& merges) {
  Symbols syms = characters_with_end(word);
  for (const auto& [a, b] : merges) syms = merge_once(syms, a, b);
  for (std::size_t i = 0; i + 1 < syms.size(); ++i) syms[i] += "@@";
  auto& last = syms.back();
  last.resize(last.size() - 4);
  return syms;
}

// ---------------------------------------------------------------- beam search

/// Scorer over a fixed table of next-token distributions keyed by prefix.
class TableSession : public deeprnn::decode::Session {
 public:
  TableSession(std::size_t vocab, std::uint64_t seed) : V_(vocab), rng_(seed) {}

  std::size_t vocab_size() const override { return V_; }

  deeprnn::Tensor advance(const std::vector<std::size_t>& parents, const std::vector<int>& last) override {
    std::vector<std::vector<int>> next;
    for (std::size_t i = 0; i < parents.size(); ++i) {
      std::vector<int> p = rows_.empty() ? std::vector<int>{} : rows_[parents[i]];
      if (last[i] >= 0) p.push_back(last[i]);
      next.push_back(p);
    }
    rows_ = next;
    deeprnn::Tensor out = deeprnn::Tensor::matrix(rows_.size(), V_);
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      const Vec& lp = table(rows_[r]);
      for (std::size_t v = 0; v < V_; ++v) out(r, v) = lp[v];
    }
    return out;
  }

  /// log P(token | prefix); distributions drawn from a flat Dirichlet.
  const Vec& table(const std::vector<int>& prefix) {
    auto it = tables_.find(prefix);
    if (it != tables_.end()) return it->second;
    std::gamma_distribution<double> g(1.0, 1.0);
    Vec p(V_);
    double z = 0;
    for (double& v : p) z += v = g(rng_) + 1e-12;
    for (double& v : p) v = std::log(v / z);
    return tables_.emplace(prefix, p).first->second;
  }

  void reset() { rows_.clear(); }

 private:
  std::size_t V_;
  std::mt19937_64 rng_;
  std::map<std::vector<int>, Vec> tables_;
  std::vector<std::vector<int>> rows_;
};

struct Enumerated {
  std::vector<int> tokens;  // without the end symbol
  double logprob;
  bool finished;
};

/// Every sequence the search space holds within max_length steps: those
/// ending in the end symbol (id 0) and the unterminated full-length ones.
inline std::vector<Enumerated> enumerate(TableSession& s, std::size_t max_length) {
  std::vector<Enumerated> out;
  std::function<void(std::vector<int>&, double)> walk = [&](std::vector<int>& prefix, double score) {
    if (prefix.size() == max_length) {
      out.push_back({prefix, score, false});
      return;
    }
    const Vec lp = s.table(prefix);
    for (std::size_t v = 0; v < s.vocab_size(); ++v) {
      if (v == 0) {
        out.push_back({prefix, score + lp[0], true});
        continue;
      }
      prefix.push_back(static_cast<int>(v));
      walk(prefix, score + lp[v]);
      prefix.pop_back();
    }
  };
  std::vector<int> start;
  walk(start, 0.0);
  return out;
}

}  // namespace oracle
