#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "deeprnn/errors.hpp"

namespace deeprnn {

using Real = double;

/// Dense row-major tensor. Rank 1 tensors behave as a single row when used
/// as matrices.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, Real fill = 0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<Real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("tensor data length does not match shape");
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, Real fill = 0) {
    return Tensor({rows, cols}, fill);
  }

  static Tensor row(std::vector<Real> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  static Tensor scalar(Real v) { return Tensor({1, 1}, std::vector<Real>{v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const {
    if (shape_.empty()) return 0;
    return shape_.size() == 1 ? 1 : shape_[0];
  }
  std::size_t cols() const {
    if (shape_.empty()) return 0;
    return shape_.back();
  }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }

  std::span<Real> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const Real> row_span(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    if (shape.empty()) return 0;
    for (std::size_t extent : shape) {
      if (extent == 0) throw ShapeError("tensor extents must be positive");
    }
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<Real> data_;
};

inline std::string shape_string(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape().size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape()[i]);
  }
  return s + "]";
}

namespace kernels {

using RowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMut = Eigen::Map<RowMajor>;
using MapConst = Eigen::Map<const RowMajor>;

inline MapConst view(const Tensor& t) {
  return MapConst(t.data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}
inline MapMut view(Tensor& t) {
  return MapMut(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

// out (+)= a * b, with optional transposes.
inline void gemm(const Tensor& a, bool trans_a, const Tensor& b, bool trans_b, Tensor& out,
                 bool accumulate) {
  auto va = view(a);
  auto vb = view(b);
  auto vo = view(out);
  if (!accumulate) vo.setZero();
  if (!trans_a && !trans_b) {
    vo.noalias() += va * vb;
  } else if (!trans_a && trans_b) {
    vo.noalias() += va * vb.transpose();
  } else if (trans_a && !trans_b) {
    vo.noalias() += va.transpose() * vb;
  } else {
    vo.noalias() += va.transpose() * vb.transpose();
  }
}

}  // namespace kernels

/// C = A * B for rank-2 tensors.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_string(a) + " * " + shape_string(b));
  }
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  kernels::gemm(a, false, b, false, out, false);
  return out;
}

/// Numerically stable softmax (max-subtracted).
inline std::vector<Real> softmax(std::span<const Real> a) {
  std::vector<Real> out(a.size());
  if (a.empty()) return out;
  const Real m = *std::max_element(a.begin(), a.end());
  Real z = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = std::exp(a[i] - m);
    z += out[i];
  }
  for (Real& v : out) v /= z;
  return out;
}

inline std::vector<Real> log_softmax(std::span<const Real> a) {
  std::vector<Real> out(a.size());
  if (a.empty()) return out;
  const Real m = *std::max_element(a.begin(), a.end());
  Real z = 0;
  for (Real v : a) z += std::exp(v - m);
  const Real lse = m + std::log(z);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - lse;
  return out;
}

/// Row-wise log-softmax of a rank-2 tensor.
inline Tensor log_softmax_rows(const Tensor& logits) {
  Tensor out = logits;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = log_softmax(logits.row_span(r));
    std::copy(row.begin(), row.end(), out.row_span(r).begin());
  }
  return out;
}

inline constexpr Real kLayerNormEpsilon = 1e-5;

struct LayerNormParams {
  std::vector<Real> gain;
  std::vector<Real> bias;
  Real epsilon = kLayerNormEpsilon;

  static LayerNormParams identity(std::size_t dim, Real epsilon = kLayerNormEpsilon) {
    return {std::vector<Real>(dim, 1.0), std::vector<Real>(dim, 0.0), epsilon};
  }
  std::size_t dim() const { return gain.size(); }
};

/// g * (a - mean) / sqrt(var + eps) + b over the components of a.
inline std::vector<Real> layer_norm(std::span<const Real> a, const LayerNormParams& p) {
  if (p.gain.size() != p.bias.size()) throw ShapeError("layer_norm: gain/bias length differ");
  if (a.size() != p.dim()) {
    throw ShapeError("layer_norm: input length " + std::to_string(a.size()) +
                     " != parameter length " + std::to_string(p.dim()));
  }
  const auto n = static_cast<Real>(a.size());
  Real mean = 0;
  for (Real v : a) mean += v;
  mean /= n;
  Real var = 0;
  for (Real v : a) var += (v - mean) * (v - mean);
  var /= n;
  const Real inv = 1.0 / std::sqrt(var + p.epsilon);
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = p.gain[i] * (a[i] - mean) * inv + p.bias[i];
  }
  return out;
}

inline Real sigmoid(Real x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace deeprnn
