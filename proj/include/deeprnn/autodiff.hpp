#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "deeprnn/errors.hpp"
#include "deeprnn/tensor.hpp"

namespace deeprnn::ad {

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

/// Reverse-mode tape over rank-2 tensors. Node ids are assigned in creation
/// order, so the tape is already topologically sorted; backward() walks it
/// once in reverse, touching only nodes the loss depends on.
///
/// A graph built with `record = false` evaluates forward values only.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  /// Leaf that receives a gradient. Repeated calls with the same name return
  /// the same node.
  Var parameter(const std::string& name, const Tensor& value) {
    auto it = params_.find(name);
    if (it != params_.end()) return it->second;
    Var v = push(value, record_, {});
    params_.emplace(name, v);
    return v;
  }

  const std::map<std::string, Var>& parameters() const { return params_; }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  Real scalar(Var v) const {
    const Tensor& t = value(v);
    if (t.size() != 1) throw ShapeError("scalar(): node is not 1x1");
    return t[0];
  }

  /// Gradient of the last backward() loss w.r.t. v; zeros if v was not reached.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  std::map<std::string, Tensor> parameter_gradients() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : params_) out.emplace(name, grad(v));
    return out;
  }

  void backward(Var loss) {
    if (!record_) throw RuntimeFailure("backward() on a graph built without recording");
    Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) {
      throw ShapeError("backward(): loss must be a scalar, got " + shape_string(root.value));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    std::vector<char> reached(nodes_.size(), 0);
    reached[loss.id] = 1;
    root.grad = Tensor(root.value.shape(), 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      if (!reached[i]) continue;
      Node& n = nodes_[i];
      if (!n.needs_grad || !n.back) continue;
      for (std::size_t in : n.inputs) {
        if (!nodes_[in].needs_grad) continue;
        reached[in] = 1;
        if (nodes_[in].grad.empty()) nodes_[in].grad = Tensor(nodes_[in].value.shape(), 0.0);
      }
      n.back(*this, i);
    }
  }

  // ---- operations -------------------------------------------------------

  /// a[B x I] * w[I x O]
  Var matmul(Var a, Var w) {
    const Tensor& A = value(a);
    const Tensor& W = value(w);
    if (A.cols() != W.rows()) {
      throw ShapeError("matmul: " + shape_string(A) + " * " + shape_string(W));
    }
    Tensor out = Tensor::matrix(A.rows(), W.cols());
    kernels::gemm(A, false, W, false, out, false);
    return push(std::move(out), {a, w}, [a, w](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      if (g.needs(a)) kernels::gemm(dy, false, g.value(w), true, g.grad_ref(a), true);
      if (g.needs(w)) kernels::gemm(g.value(a), true, dy, false, g.grad_ref(w), true);
    });
  }

  /// a[B x I] * w[O x I]^T
  Var matmul_nt(Var a, Var w) {
    const Tensor& A = value(a);
    const Tensor& W = value(w);
    if (A.cols() != W.cols()) {
      throw ShapeError("matmul_nt: " + shape_string(A) + " * " + shape_string(W) + "^T");
    }
    Tensor out = Tensor::matrix(A.rows(), W.rows());
    kernels::gemm(A, false, W, true, out, false);
    return push(std::move(out), {a, w}, [a, w](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      if (g.needs(a)) kernels::gemm(dy, false, g.value(w), false, g.grad_ref(a), true);
      if (g.needs(w)) kernels::gemm(dy, true, g.value(a), false, g.grad_ref(w), true);
    });
  }

  /// Elementwise sum; b may be a single row broadcast over the rows of a.
  Var add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    const bool broadcast = B.rows() == 1 && A.rows() != 1;
    if (A.cols() != B.cols() || (!broadcast && A.rows() != B.rows())) {
      throw ShapeError("add: " + shape_string(A) + " + " + shape_string(B));
    }
    Tensor out = A;
    const std::size_t cols = A.cols();
    for (std::size_t r = 0; r < A.rows(); ++r) {
      const Real* brow = B.data() + (broadcast ? 0 : r * cols);
      Real* orow = out.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) orow[c] += brow[c];
    }
    return push(std::move(out), {a, b}, [a, b, broadcast](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      if (g.needs(a)) accumulate(g.grad_ref(a), dy);
      if (g.needs(b)) {
        Tensor& db = g.grad_ref(b);
        if (!broadcast) {
          accumulate(db, dy);
        } else {
          for (std::size_t r = 0; r < dy.rows(); ++r)
            for (std::size_t c = 0; c < dy.cols(); ++c) db[c] += dy(r, c);
        }
      }
    });
  }

  Var mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) throw ShapeError("mul: " + shape_string(A) + " * " + shape_string(B));
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return push(std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      if (g.needs(a)) {
        Tensor& da = g.grad_ref(a);
        const Tensor& bv = g.value(b);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
      }
      if (g.needs(b)) {
        Tensor& db = g.grad_ref(b);
        const Tensor& av = g.value(a);
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
      }
    });
  }

  Var scale(Var a, Real factor) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
    return push(std::move(out), {a}, [a, factor](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      Tensor& da = g.grad_ref(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * factor;
    });
  }

  Var sigmoid(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return push(std::move(out), {a}, [a](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      const Tensor& y = g.nodes_[self].value;
      Tensor& da = g.grad_ref(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * y[i] * (1.0 - y[i]);
    });
  }

  Var tanh(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    return push(std::move(out), {a}, [a](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      const Tensor& y = g.nodes_[self].value;
      Tensor& da = g.grad_ref(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * (1.0 - y[i] * y[i]);
    });
  }

  /// (1 - z) * h + z * candidate
  Var interpolate(Var z, Var h, Var candidate) {
    const Tensor& Z = value(z);
    const Tensor& H = value(h);
    const Tensor& C = value(candidate);
    if (!Z.same_shape(H) || !Z.same_shape(C)) throw ShapeError("interpolate: shape mismatch");
    Tensor out = H;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - Z[i]) * H[i] + Z[i] * C[i];
    return push(std::move(out), {z, h, candidate}, [z, h, candidate](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      const Tensor& Zv = g.value(z);
      if (g.needs(z)) {
        Tensor& dz = g.grad_ref(z);
        const Tensor& Hv = g.value(h);
        const Tensor& Cv = g.value(candidate);
        for (std::size_t i = 0; i < dy.size(); ++i) dz[i] += dy[i] * (Cv[i] - Hv[i]);
      }
      if (g.needs(h)) {
        Tensor& dh = g.grad_ref(h);
        for (std::size_t i = 0; i < dy.size(); ++i) dh[i] += dy[i] * (1.0 - Zv[i]);
      }
      if (g.needs(candidate)) {
        Tensor& dc = g.grad_ref(candidate);
        for (std::size_t i = 0; i < dy.size(); ++i) dc[i] += dy[i] * Zv[i];
      }
    });
  }

  /// mask[r] * a + (1 - mask[r]) * b with a constant column mask.
  Var blend(Var a, Var b, const std::vector<Real>& mask) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B) || mask.size() != A.rows()) throw ShapeError("blend: shape mismatch");
    Tensor out = A;
    const std::size_t cols = A.cols();
    for (std::size_t r = 0; r < A.rows(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        out(r, c) = mask[r] * A(r, c) + (1.0 - mask[r]) * B(r, c);
      }
    }
    return push(std::move(out), {a, b}, [a, b, mask](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      const std::size_t cols = dy.cols();
      for (std::size_t r = 0; r < dy.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          if (g.needs(a)) g.grad_ref(a)(r, c) += mask[r] * dy(r, c);
          if (g.needs(b)) g.grad_ref(b)(r, c) += (1.0 - mask[r]) * dy(r, c);
        }
      }
    });
  }

  /// Row-wise layer normalization with gain and bias rows.
  Var layer_norm(Var a, Var gain, Var bias, Real epsilon = kLayerNormEpsilon) {
    const Tensor& A = value(a);
    const Tensor& G = value(gain);
    const Tensor& Bv = value(bias);
    const std::size_t d = A.cols();
    if (G.size() != d || Bv.size() != d) {
      throw ShapeError("layer_norm: input " + shape_string(A) + " gain " + shape_string(G));
    }
    Tensor out = A;
    std::vector<Real> xhat(A.size());
    std::vector<Real> inv_std(A.rows());
    for (std::size_t r = 0; r < A.rows(); ++r) {
      auto row = A.row_span(r);
      Real mean = 0;
      for (Real v : row) mean += v;
      mean /= static_cast<Real>(d);
      Real var = 0;
      for (Real v : row) var += (v - mean) * (v - mean);
      var /= static_cast<Real>(d);
      inv_std[r] = 1.0 / std::sqrt(var + epsilon);
      for (std::size_t c = 0; c < d; ++c) {
        const Real xh = (row[c] - mean) * inv_std[r];
        xhat[r * d + c] = xh;
        out(r, c) = G[c] * xh + Bv[c];
      }
    }
    return push(std::move(out), {a, gain, bias},
                [a, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Graph& g, std::size_t self) {
                  const Tensor& dy = g.nodes_[self].grad;
                  const Tensor& Gv = g.value(gain);
                  const std::size_t d = dy.cols();
                  const auto n = static_cast<Real>(d);
                  std::vector<Real> dxhat(d);
                  for (std::size_t r = 0; r < dy.rows(); ++r) {
                    if (g.needs(gain) || g.needs(bias)) {
                      for (std::size_t c = 0; c < d; ++c) {
                        if (g.needs(gain)) g.grad_ref(gain)[c] += dy(r, c) * xhat[r * d + c];
                        if (g.needs(bias)) g.grad_ref(bias)[c] += dy(r, c);
                      }
                    }
                    if (!g.needs(a)) continue;
                    Real mean_dxhat = 0;
                    Real mean_dxhat_xhat = 0;
                    for (std::size_t c = 0; c < d; ++c) {
                      dxhat[c] = dy(r, c) * Gv[c];
                      mean_dxhat += dxhat[c];
                      mean_dxhat_xhat += dxhat[c] * xhat[r * d + c];
                    }
                    mean_dxhat /= n;
                    mean_dxhat_xhat /= n;
                    Tensor& da = g.grad_ref(a);
                    for (std::size_t c = 0; c < d; ++c) {
                      da(r, c) += inv_std[r] *
                                  (dxhat[c] - mean_dxhat - xhat[r * d + c] * mean_dxhat_xhat);
                    }
                  }
                });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t cols = 0;
    for (Var p : parts) {
      if (value(p).rows() != rows) throw ShapeError("concat_cols: row count mismatch");
      cols += value(p).cols();
    }
    Tensor out = Tensor::matrix(rows, cols);
    std::size_t offset = 0;
    for (Var p : parts) {
      const Tensor& t = value(p);
      for (std::size_t r = 0; r < rows; ++r)
        std::copy(t.row_span(r).begin(), t.row_span(r).end(), out.row_span(r).begin() + offset);
      offset += t.cols();
    }
    return push(std::move(out), parts, [parts](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      std::size_t offset = 0;
      for (Var p : parts) {
        const std::size_t w = g.value(p).cols();
        if (g.needs(p)) {
          Tensor& dp = g.grad_ref(p);
          for (std::size_t r = 0; r < dy.rows(); ++r)
            for (std::size_t c = 0; c < w; ++c) dp(r, c) += dy(r, offset + c);
        }
        offset += w;
      }
    });
  }

  /// Rows of a table selected by id; negative ids produce zero rows.
  Var embedding(Var table, const std::vector<int>& ids) {
    const Tensor& T = value(table);
    const std::size_t cols = T.cols();
    Tensor out = Tensor::matrix(ids.size(), cols);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (ids[r] < 0) continue;
      if (static_cast<std::size_t>(ids[r]) >= T.rows()) {
        throw ShapeError("embedding: id " + std::to_string(ids[r]) + " out of range");
      }
      auto src = T.row_span(static_cast<std::size_t>(ids[r]));
      std::copy(src.begin(), src.end(), out.row_span(r).begin());
    }
    return push(std::move(out), {table}, [table, ids](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      Tensor& dt = g.grad_ref(table);
      for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0) continue;
        auto dst = dt.row_span(static_cast<std::size_t>(ids[r]));
        for (std::size_t c = 0; c < dy.cols(); ++c) dst[c] += dy(r, c);
      }
    });
  }

  /// out[r] = a[index[r]]
  Var gather_rows(Var a, const std::vector<std::size_t>& index) {
    const Tensor& A = value(a);
    Tensor out = Tensor::matrix(index.size(), A.cols());
    for (std::size_t r = 0; r < index.size(); ++r) {
      if (index[r] >= A.rows()) throw ShapeError("gather_rows: index out of range");
      auto src = A.row_span(index[r]);
      std::copy(src.begin(), src.end(), out.row_span(r).begin());
    }
    return push(std::move(out), {a}, [a, index](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      Tensor& da = g.grad_ref(a);
      for (std::size_t r = 0; r < index.size(); ++r) {
        auto dst = da.row_span(index[r]);
        for (std::size_t c = 0; c < dy.cols(); ++c) dst[c] += dy(r, c);
      }
    });
  }

  /// Row-wise softmax restricted to entries whose mask is non-zero; masked
  /// entries get probability 0. mask is a B x N constant.
  Var masked_softmax(Var a, const Tensor& mask) {
    const Tensor& A = value(a);
    if (!A.same_shape(mask)) throw ShapeError("masked_softmax: mask shape mismatch");
    Tensor out = Tensor::matrix(A.rows(), A.cols());
    for (std::size_t r = 0; r < A.rows(); ++r) {
      Real m = -INFINITY;
      for (std::size_t c = 0; c < A.cols(); ++c)
        if (mask(r, c) != 0) m = std::max(m, A(r, c));
      if (!std::isfinite(m)) throw RuntimeFailure("masked_softmax: fully masked row");
      Real z = 0;
      for (std::size_t c = 0; c < A.cols(); ++c) {
        if (mask(r, c) == 0) continue;
        out(r, c) = std::exp(A(r, c) - m);
        z += out(r, c);
      }
      for (std::size_t c = 0; c < A.cols(); ++c) out(r, c) /= z;
    }
    return push(std::move(out), {a}, [a](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      const Tensor& y = g.nodes_[self].value;
      Tensor& da = g.grad_ref(a);
      for (std::size_t r = 0; r < y.rows(); ++r) {
        Real dot = 0;
        for (std::size_t c = 0; c < y.cols(); ++c) dot += dy(r, c) * y(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c) da(r, c) += y(r, c) * (dy(r, c) - dot);
      }
    });
  }

  /// out[r] = sum_i weights[r, i] * items[i][r]; weights is B x N, items are B x D.
  Var weighted_sum(Var weights, const std::vector<Var>& items) {
    const Tensor& W = value(weights);
    if (W.cols() != items.size()) throw ShapeError("weighted_sum: weight/item count mismatch");
    const std::size_t rows = W.rows();
    const std::size_t d = value(items.at(0)).cols();
    Tensor out = Tensor::matrix(rows, d);
    for (std::size_t i = 0; i < items.size(); ++i) {
      const Tensor& it = value(items[i]);
      if (it.rows() != rows || it.cols() != d) throw ShapeError("weighted_sum: item shape");
      for (std::size_t r = 0; r < rows; ++r) {
        const Real w = W(r, i);
        for (std::size_t c = 0; c < d; ++c) out(r, c) += w * it(r, c);
      }
    }
    std::vector<Var> inputs = items;
    inputs.push_back(weights);
    return push(std::move(out), inputs, [weights, items](Graph& g, std::size_t self) {
      const Tensor& dy = g.nodes_[self].grad;
      const Tensor& Wv = g.value(weights);
      const bool need_w = g.needs(weights);
      for (std::size_t i = 0; i < items.size(); ++i) {
        const Tensor& it = g.value(items[i]);
        const bool need_i = g.needs(items[i]);
        for (std::size_t r = 0; r < dy.rows(); ++r) {
          Real dot = 0;
          for (std::size_t c = 0; c < dy.cols(); ++c) {
            if (need_i) g.grad_ref(items[i])(r, c) += Wv(r, i) * dy(r, c);
            dot += dy(r, c) * it(r, c);
          }
          if (need_w) g.grad_ref(weights)(r, i) += dot;
        }
      }
    });
  }

  /// sum_r weight[r] * -log softmax(logits[r])[target[r]]; rows with weight 0 are skipped.
  Var cross_entropy(Var logits, const std::vector<int>& targets, const std::vector<Real>& weights) {
    const Tensor& L = value(logits);
    if (targets.size() != L.rows() || weights.size() != L.rows()) {
      throw ShapeError("cross_entropy: target count mismatch");
    }
    Real total = 0;
    Tensor probs = Tensor::matrix(L.rows(), L.cols());
    for (std::size_t r = 0; r < L.rows(); ++r) {
      if (weights[r] == 0) continue;
      if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= L.cols()) {
        throw ShapeError("cross_entropy: target out of range");
      }
      auto lp = log_softmax(L.row_span(r));
      total -= weights[r] * lp[static_cast<std::size_t>(targets[r])];
      for (std::size_t c = 0; c < L.cols(); ++c) probs(r, c) = std::exp(lp[c]);
    }
    return push(Tensor::scalar(total), {logits},
                [logits, targets, weights, probs = std::move(probs)](Graph& g, std::size_t self) {
                  const Real dy = g.nodes_[self].grad[0];
                  Tensor& dl = g.grad_ref(logits);
                  for (std::size_t r = 0; r < probs.rows(); ++r) {
                    if (weights[r] == 0) continue;
                    const Real w = weights[r] * dy;
                    for (std::size_t c = 0; c < probs.cols(); ++c) dl(r, c) += w * probs(r, c);
                    dl(r, static_cast<std::size_t>(targets[r])) -= w;
                  }
                });
  }

  Var sum(Var a) {
    Real total = 0;
    for (Real v : value(a).values()) total += v;
    return push(Tensor::scalar(total), {a}, [a](Graph& g, std::size_t self) {
      const Real dy = g.nodes_[self].grad[0];
      for (Real& v : g.grad_ref(a).values()) v += dy;
    });
  }

 private:
  using Backward = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    Backward back;
    bool needs_grad = false;
  };

  static void accumulate(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  }

  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  Tensor& grad_ref(Var v) { return nodes_[v.id].grad; }

  Var push(Tensor value, bool needs_grad, Backward back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var push(Tensor value, const std::vector<Var>& inputs, Backward back) {
    bool needs_grad = false;
    if (record_) {
      for (Var in : inputs) needs_grad = needs_grad || nodes_.at(in.id).needs_grad;
    }
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) {
      n.back = std::move(back);
      n.inputs.reserve(inputs.size());
      for (Var in : inputs) n.inputs.push_back(in.id);
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  bool record_;
  std::vector<Node> nodes_;
  std::map<std::string, Var> params_;
};

}  // namespace deeprnn::ad
