#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "deeprnn/autodiff.hpp"
#include "deeprnn/tensor.hpp"
#include "oracles.hpp"

using namespace deeprnn;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

using Builder = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

// Loss = sum(op(inputs) * R) with a fixed random R, so every output entry
// carries a distinct weight. Checks `probes` random input coordinates.
double worst_probe_error(std::vector<Tensor> inputs, const Builder& op, std::mt19937_64& rng,
                         std::size_t probes = 100) {
  Tensor weights;
  auto forward = [&](ad::Graph& g, std::vector<ad::Var>& vars) {
    vars.clear();
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(g.parameter("x" + std::to_string(i), inputs[i]));
    ad::Var y = op(g, vars);
    if (weights.empty()) weights = random_matrix(g.value(y).rows(), g.value(y).cols(), rng);
    return g.sum(g.mul(y, g.constant(weights)));
  };
  ad::Graph g;
  std::vector<ad::Var> vars;
  g.backward(forward(g, vars));
  std::vector<Tensor> grads;
  for (auto v : vars) grads.push_back(g.grad(v));

  auto f = [&] {
    ad::Graph g2(false);
    std::vector<ad::Var> v2;
    return g2.scalar(forward(g2, v2));
  };
  double worst = 0;
  for (std::size_t p = 0; p < probes; ++p) {
    const std::size_t which = rng() % inputs.size();
    const std::size_t k = rng() % inputs[which].size();
    const double numeric = oracle::five_point(f, inputs[which][k], 1e-4);
    worst = std::max(worst, oracle::relative_error(grads[which][k], numeric, 1e-8));
  }
  return worst;
}

}  // namespace

TEST(Tensor, ShapeAndDataLengthAgree) {
  Tensor t({3, 4}, 1.5);
  EXPECT_EQ(t.size(), 12u);
  EXPECT_EQ(t.rows(), 3u);
  EXPECT_EQ(t.cols(), 4u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<Real>{1, 2, 3}), ShapeError);
}

TEST(Tensor, MatmulMatchesLoops) {
  std::mt19937_64 rng(1);
  Tensor a = random_matrix(3, 5, rng), b = random_matrix(5, 2, rng);
  Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 5; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(c(i, j), s, 1e-12);
    }
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Softmax, EqualInputsAreUniform) {
  auto p = softmax(std::vector<Real>{0, 0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  auto p = softmax(std::vector<Real>{1000, 0});
  EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
  EXPECT_NEAR(p[0], 1.0, 1e-15);
  EXPECT_NEAR(p[1], std::exp(-1000.0), 1e-300);
}

TEST(Softmax, MatchesDirectEvaluation) {
  auto p = softmax(std::vector<Real>{1, 2, 3});
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(p[0], std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(p[1], std::exp(2.0) / z, 1e-15);
  EXPECT_NEAR(p[2], std::exp(3.0) / z, 1e-15);
}

TEST(Softmax, SumsToOneOnRandomInputs) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Real> a(1 + rng() % 40);
    for (auto& v : a) v = u(rng);
    double s = 0;
    for (double v : softmax(a)) {
      EXPECT_GT(v, -1e-300);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(LayerNorm, ConstantInputGivesZero) {
  auto out = layer_norm(std::vector<Real>{2.5, 2.5, 2.5}, LayerNormParams::identity(3));
  for (double v : out) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, SymmetricPairWithTinyEpsilon) {
  auto out = layer_norm(std::vector<Real>{1, -1}, LayerNormParams::identity(2, 1e-300));
  EXPECT_NEAR(out[0], 1.0, 1e-15);
  EXPECT_NEAR(out[1], -1.0, 1e-15);
}

TEST(LayerNorm, ZeroGainReturnsBias) {
  LayerNormParams p{{0, 0, 0}, {0.1, -2, 7}, 1e-5};
  auto out = layer_norm(std::vector<Real>{3, -1, 4}, p);
  EXPECT_EQ(out, (std::vector<Real>{0.1, -2, 7}));
}

TEST(LayerNorm, DimensionMismatchThrows) {
  EXPECT_THROW(layer_norm(std::vector<Real>{1, 2}, LayerNormParams::identity(3)), ShapeError);
}

TEST(LayerNorm, NormalizesMeanAndVariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Real> a(2 + rng() % 30);
    for (auto& v : a) v = u(rng) * (1 + trial % 7);
    double mu = 0, var = 0;
    for (double v : a) mu += v;
    mu /= a.size();
    for (double v : a) var += (v - mu) * (v - mu);
    var /= a.size();
    if (var < 1e-3) continue;
    ++checked;
    auto out = layer_norm(a, LayerNormParams::identity(a.size()));
    double m2 = 0, v2 = 0;
    for (double v : out) m2 += v;
    m2 /= out.size();
    for (double v : out) v2 += (v - m2) * (v - m2);
    v2 /= out.size();
    EXPECT_LE(std::abs(m2), 1e-10);
    // epsilon shrinks the variance by var / (var + eps)
    EXPECT_NEAR(v2, 1.0, 1e-5 / var + 1e-12);
    if (var >= 10) {
      EXPECT_NEAR(v2, 1.0, 1e-6);
    }
  }
  EXPECT_GT(checked, 400);
}

TEST(Autodiff, SquareHasGradientSix) {
  ad::Graph g;
  ad::Var x = g.parameter("x", Tensor::scalar(3));
  g.backward(g.mul(x, x));
  EXPECT_DOUBLE_EQ(g.grad(x)[0], 6.0);
}

TEST(Autodiff, DisconnectedParameterHasZeroGradient) {
  ad::Graph g;
  ad::Var x = g.parameter("x", Tensor::scalar(3));
  ad::Var y = g.parameter("y", Tensor::matrix(2, 2, 1.0));
  g.backward(g.mul(x, x));
  const Tensor dy = g.grad(y);
  for (double v : dy.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g.parameter_gradients().at("y").size(), 4u);
}

TEST(Autodiff, NonScalarLossThrows) {
  ad::Graph g;
  ad::Var x = g.parameter("x", Tensor::matrix(2, 2, 1.0));
  EXPECT_THROW(g.backward(x), ShapeError);
}

TEST(Autodiff, SharedNodeAccumulatesOnce) {
  // y = x*x + x*x: the reverse sweep must add both paths, each once.
  ad::Graph g;
  ad::Var x = g.parameter("x", Tensor::scalar(1.5));
  ad::Var sq = g.mul(x, x);
  g.backward(g.add(sq, sq));
  EXPECT_DOUBLE_EQ(g.grad(x)[0], 6.0);
}

TEST(Autodiff, SumOfLayerNormMatchesCentralDifferences) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_matrix(1, 6, rng, 2.0);
    Tensor gain = random_matrix(1, 6, rng, 2.0), bias = random_matrix(1, 6, rng);
    auto loss = [&](ad::Graph& g) {
      ad::Var x = g.parameter("a", a);
      return g.sum(g.layer_norm(x, g.constant(gain), g.constant(bias)));
    };
    ad::Graph g;
    ad::Var l = loss(g);
    g.backward(l);
    const Tensor grad = g.parameter_gradients().at("a");
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double numeric = oracle::central(
          [&] {
            ad::Graph g2(false);
            return g2.scalar(loss(g2));
          },
          a[i], 1e-6);
      EXPECT_LE(oracle::relative_error(grad[i], numeric, 1e-6), 1e-5) << "component " << i;
    }
  }
}

// Randomized finite-difference checks, one per differentiable op.
class OpGradient : public ::testing::Test {
 protected:
  std::mt19937_64 rng{2024};
  void check(const std::vector<Tensor>& inputs, const Builder& op) {
    EXPECT_LE(worst_probe_error(inputs, op, rng), 1e-5);
  }
};

TEST_F(OpGradient, Matmul) {
  check({random_matrix(3, 4, rng), random_matrix(4, 5, rng)},
        [](ad::Graph& g, const std::vector<ad::Var>& v) { return g.matmul(v[0], v[1]); });
}

TEST_F(OpGradient, MatmulTransposed) {
  check({random_matrix(3, 4, rng), random_matrix(5, 4, rng)},
        [](ad::Graph& g, const std::vector<ad::Var>& v) { return g.matmul_nt(v[0], v[1]); });
}

TEST_F(OpGradient, AddWithRowBroadcast) {
  check({random_matrix(3, 4, rng), random_matrix(1, 4, rng)},
        [](ad::Graph& g, const std::vector<ad::Var>& v) { return g.add(v[0], v[1]); });
}

TEST_F(OpGradient, Mul) {
  check({random_matrix(3, 4, rng), random_matrix(3, 4, rng)},
        [](ad::Graph& g, const std::vector<ad::Var>& v) { return g.mul(v[0], v[1]); });
}

TEST_F(OpGradient, Scale) {
  check({random_matrix(3, 4, rng)}, [](ad::Graph& g, const std::vector<ad::Var>& v) { return g.scale(v[0], -1.7); });
}

TEST_F(OpGradient, Sigmoid) {
  check({random_matrix(3, 4, rng, 3.0)}, [](ad::Graph& g, const std::vector<ad::Var>& v) { return g.sigmoid(v[0]); });
}

TEST_F(OpGradient, Tanh) {
  check({random_matrix(3, 4, rng, 2.0)}, [](ad::Graph& g, const std::vector<ad::Var>& v) { return g.tanh(v[0]); });
}

TEST_F(OpGradient, Interpolate) {
  check({random_matrix(2, 5, rng), random_matrix(2, 5, rng), random_matrix(2, 5, rng)},
        [](ad::Graph& g, const std::vector<ad::Var>& v) { return g.interpolate(v[0], v[1], v[2]); });
}

TEST_F(OpGradient, Blend) {
  check({random_matrix(3, 4, rng), random_matrix(3, 4, rng)},
        [](ad::Graph& g, const std::vector<ad::Var>& v) { return g.blend(v[0], v[1], {1, 0, 1}); });
}

TEST_F(OpGradient, LayerNorm) {
  check({random_matrix(3, 6, rng, 2.0), random_matrix(1, 6, rng, 2.0), random_matrix(1, 6, rng)},
        [](ad::Graph& g, const std::vector<ad::Var>& v) { return g.layer_norm(v[0], v[1], v[2]); });
}

TEST_F(OpGradient, ConcatCols) {
  check({random_matrix(2, 3, rng), random_matrix(2, 1, rng), random_matrix(2, 4, rng)},
        [](ad::Graph& g, const std::vector<ad::Var>& v) { return g.concat_cols({v[0], v[1], v[2]}); });
}

TEST_F(OpGradient, EmbeddingWithRepeatsAndPadding) {
  check({random_matrix(5, 3, rng)},
        [](ad::Graph& g, const std::vector<ad::Var>& v) { return g.embedding(v[0], {2, -1, 2, 4}); });
}

TEST_F(OpGradient, GatherRows) {
  check({random_matrix(3, 4, rng)},
        [](ad::Graph& g, const std::vector<ad::Var>& v) { return g.gather_rows(v[0], {2, 0, 2, 2}); });
}

TEST_F(OpGradient, MaskedSoftmax) {
  Tensor mask({2, 4}, std::vector<Real>{1, 1, 1, 0, 1, 1, 1, 1});
  check({random_matrix(2, 4, rng, 2.0)},
        [mask](ad::Graph& g, const std::vector<ad::Var>& v) { return g.masked_softmax(v[0], mask); });
}

TEST_F(OpGradient, WeightedSum) {
  check({random_matrix(2, 3, rng), random_matrix(2, 4, rng), random_matrix(2, 4, rng), random_matrix(2, 4, rng)},
        [](ad::Graph& g, const std::vector<ad::Var>& v) { return g.weighted_sum(v[0], {v[1], v[2], v[3]}); });
}

TEST_F(OpGradient, CrossEntropy) {
  check({random_matrix(3, 5, rng, 2.0)}, [](ad::Graph& g, const std::vector<ad::Var>& v) {
    return g.cross_entropy(v[0], {1, 4, 0}, {1.0, 0.0, 0.5});
  });
}

TEST_F(OpGradient, Sum) {
  check({random_matrix(3, 4, rng)}, [](ad::Graph& g, const std::vector<ad::Var>& v) { return g.sum(v[0]); });
}

TEST(Autodiff, NonRecordingGraphRefusesBackward) {
  ad::Graph g(false);
  ad::Var x = g.parameter("x", Tensor::scalar(2));
  EXPECT_THROW(g.backward(g.mul(x, x)), RuntimeFailure);
}
