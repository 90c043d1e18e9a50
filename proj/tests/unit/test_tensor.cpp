#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "shapeguide/tensor.hpp"
#include "../support/oracles.hpp"

using namespace shapeguide;
using T = Tensor<double>;

namespace {

T rand_t(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  return T::normal(r, c, scale, rng);
}

// Weighted sum so every output element contributes a distinct gradient.
T probe(const T& y, std::uint64_t seed) {
  Rng rng(seed);
  return dot(y, T::normal(y.rows(), y.cols(), 1.0, rng));
}

}  // namespace

TEST(Softmax, HandValues) {
  auto y = softmax_rows(T::from(1, 2, {0.0, std::log(3.0)}));
  EXPECT_NEAR(y.at(0, 0), 0.25, 1e-12);
  EXPECT_NEAR(y.at(0, 1), 0.75, 1e-12);
  auto u = softmax_rows(T::zeros(1, 3));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(u.at(0, i), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    T x = T::uniform(4, 7, 50.0, rng);
    auto y = softmax_rows(x);
    std::vector<double> shifted(x.data().begin(), x.data().end());
    for (double& v : shifted) v += 12.5;
    auto ys = softmax_rows(T::from(4, 7, shifted));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GE(y.at(r, c), 0.0);
        EXPECT_NEAR(y.at(r, c), ys.at(r, c), 1e-12);
        s += y.at(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(LayerNorm, ClosedForms) {
  auto ones = T::full(1, 2, 1.0);
  auto zero = T::zeros(1, 2);
  auto y = layer_norm(T::from(1, 2, {1.0, -1.0}), ones, zero, 1e-12);
  EXPECT_NEAR(y.at(0, 0), 1.0, 1e-9);
  EXPECT_NEAR(y.at(0, 1), -1.0, 1e-9);

  auto c = layer_norm(T::full(1, 4, 1.0), T::full(1, 4, 1.0), T::zeros(1, 4), 1e-5);
  for (double v : c.data()) EXPECT_EQ(v, 0.0);

  Rng rng(1);
  auto bias = rand_t(1, 5, rng);
  auto g0 = layer_norm(rand_t(3, 5, rng), T::zeros(1, 5), bias, 1e-5);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t k = 0; k < 5; ++k) EXPECT_DOUBLE_EQ(g0.at(r, k), bias.at(0, k));
}

TEST(LayerNorm, UnitMomentsBeforeAffine) {
  Rng rng(9);
  auto x = rand_t(6, 8, rng, 3.0);
  auto y = layer_norm(x, T::full(1, 8, 1.0), T::zeros(1, 8), 1e-12);
  for (std::size_t r = 0; r < 6; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 8; ++c) m += y.at(r, c) / 8;
    for (std::size_t c = 0; c < 8; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m) / 8;
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-6);
  }
}

TEST(Backward, SumDotAndAccumulation) {
  Rng rng(2);
  auto x = rand_t(2, 3, rng);
  x.set_requires_grad(true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);

  auto a = rand_t(1, 4, rng), b = rand_t(1, 4, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  backward(dot(a, b));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(a.grad()[i], b.data()[i]);
    EXPECT_DOUBLE_EQ(b.grad()[i], a.data()[i]);
  }

  auto z = rand_t(1, 3, rng);
  z.set_requires_grad(true);
  backward(sum(add(z, z)));
  for (double g : z.grad()) EXPECT_EQ(g, 2.0);
}

TEST(Backward, NonScalarRootIsAnError) {
  auto x = T::zeros(2, 2, true);
  EXPECT_THROW(backward(x), TensorError);
}

TEST(Backward, NoGradGuardStopsRecording) {
  auto x = T::full(1, 3, 2.0, true);
  NoGradGuard guard;
  auto y = sum(mul(x, x));
  EXPECT_FALSE(y.requires_grad());
}

TEST(FiniteDiff, SumOfSquaresIsExact) {
  Rng rng(4);
  const double err = finite_diff_check([](const T& x) { return dot(x, x); }, rand_t(3, 4, rng), 1e-4);
  EXPECT_LE(err, 1e-8);
}

TEST(FiniteDiff, SoftmaxCrossEntropyToy) {
  Rng rng(5);
  const auto target = T::from(2, 3, {0, 1, 0, 1, 0, 0});
  const double err = finite_diff_check(
      [&](const T& x) { return scale(dot(target, log(softmax_rows(x))), -1.0); }, rand_t(2, 3, rng),
      1e-4);
  EXPECT_LE(err, 1e-5);
}

// Every differentiable op against central differences on randomized inputs.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const int seed = GetParam();
  Rng rng(seed);
  const double h = 1e-4, tol = 1e-4;
  auto other = rand_t(3, 4, rng);
  auto w = rand_t(4, 5, rng, 0.5), bias = rand_t(1, 5, rng);
  auto row = rand_t(1, 4, rng), tile = rand_t(3, 4, rng);
  auto gain = rand_t(1, 4, rng), beta = rand_t(1, 4, rng);
  const std::vector<std::size_t> idx = {2, 0, 2};
  const std::vector<std::vector<std::size_t>> bags = {{0, 2}, {1}, {2, 2, 1}};
  auto x = rand_t(3, 4, rng);
  auto pos = T::uniform(3, 4, 1.0, rng);
  for (double& v : pos.mutable_data()) v = std::abs(v) + 0.5;

  struct Case {
    const char* name;
    std::function<T(const T&)> f;
    T input;
  };
  std::vector<Case> cases = {
      {"add", [&](const T& a) { return probe(add(a, other), seed); }, x},
      {"sub", [&](const T& a) { return probe(sub(other, a), seed); }, x},
      {"mul", [&](const T& a) { return probe(mul(a, other), seed); }, x},
      {"scale", [&](const T& a) { return probe(scale(a, -1.7), seed); }, x},
      {"add_row.x", [&](const T& a) { return probe(add_row(a, row), seed); }, x},
      {"add_row.row", [&](const T& r) { return probe(add_row(other, r), seed); }, row},
      {"add_tiled", [&](const T& p) { return probe(add_tiled(concat_rows<double>({other, other}), p), seed); }, tile},
      {"matmul.a", [&](const T& a) { return probe(matmul(a, w), seed); }, x},
      {"matmul.b", [&](const T& b) { return probe(matmul(other, b), seed); }, w},
      {"linear.x", [&](const T& a) { return probe(linear(a, w, bias), seed); }, x},
      {"linear.w", [&](const T& ww) { return probe(linear(other, ww, bias), seed); }, w},
      {"linear.b", [&](const T& b) { return probe(linear(other, w, b), seed); }, bias},
      {"gelu", [&](const T& a) { return probe(gelu(a), seed); }, x},
      {"log", [&](const T& a) { return probe(log(a), seed); }, pos},
      {"softmax", [&](const T& a) { return probe(softmax_rows(a), seed); }, x},
      {"layer_norm.x", [&](const T& a) { return probe(layer_norm(a, gain, beta, 1e-5), seed); }, x},
      {"layer_norm.gain", [&](const T& g) { return probe(layer_norm(other, g, beta, 1e-5), seed); }, gain},
      {"layer_norm.bias", [&](const T& b) { return probe(layer_norm(other, gain, b, 1e-5), seed); }, beta},
      {"sum", [&](const T& a) { return scale(sum(mul(a, a)), 0.5); }, x},
      {"mean", [&](const T& a) { return mean(mul(a, other)); }, x},
      {"mse", [&](const T& a) { return mse(a, other); }, x},
      {"concat", [&](const T& a) { return probe(concat_rows<double>({a, other, a}), seed); }, x},
      {"gather", [&](const T& a) { return probe(gather_rows<double>(a, idx), seed); }, x},
      {"embedding_mean", [&](const T& a) { return probe(embedding_mean(a, bags), seed); }, x},
  };
  for (auto& c : cases) {
    const double err = finite_diff_check(c.f, c.input.detach(), h);
    EXPECT_LE(err, tol) << c.name;
  }
}

TEST_P(OpGradient, AttentionMatchesCentralDifferences) {
  const int seed = GetParam();
  Rng rng(seed + 100);
  auto q = rand_t(6, 4, rng), k = rand_t(6, 4, rng), v = rand_t(6, 4, rng);
  EXPECT_LE(finite_diff_check([&](const T& a) { return probe(attention(a, k, v, 2, 3), seed); }, q.detach(), 1e-4), 1e-4);
  EXPECT_LE(finite_diff_check([&](const T& a) { return probe(attention(q, a, v, 2, 3), seed); }, k.detach(), 1e-4), 1e-4);
  EXPECT_LE(finite_diff_check([&](const T& a) { return probe(attention(q, k, a, 2, 3), seed); }, v.detach(), 1e-4), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Range(0, 20));

TEST(Attention, MatchesBruteForcePerHeadAndSequence) {
  Rng rng(11);
  const std::size_t heads = 2, seq = 5, n_seq = 2, dh = 3;
  const std::size_t d = heads * dh;
  auto q = rand_t(seq * n_seq, d, rng), k = rand_t(seq * n_seq, d, rng), v = rand_t(seq * n_seq, d, rng);
  auto y = attention(q, k, v, heads, seq);
  for (std::size_t s = 0; s < n_seq; ++s)
    for (std::size_t h = 0; h < heads; ++h) {
      oracle::Mat Q(seq, dh), K(seq, dh), V(seq, dh);
      for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t c = 0; c < dh; ++c) {
          Q(i, c) = q.at(s * seq + i, h * dh + c);
          K(i, c) = k.at(s * seq + i, h * dh + c);
          V(i, c) = v.at(s * seq + i, h * dh + c);
        }
      auto ref = oracle::attention(Q, K, V);
      for (std::size_t i = 0; i < seq; ++i)
        for (std::size_t c = 0; c < dh; ++c)
          EXPECT_NEAR(y.at(s * seq + i, h * dh + c), ref(i, c), 1e-12);
    }
}

TEST(Attention, SingleTokenAndZeroQuery) {
  Rng rng(12);
  auto v1 = rand_t(1, 4, rng);
  auto y1 = attention(rand_t(1, 4, rng), rand_t(1, 4, rng), v1, 1, 1);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(y1.at(0, c), v1.at(0, c));

  auto v = rand_t(5, 4, rng);
  auto y = attention(T::zeros(5, 4), rand_t(5, 4, rng), v, 1, 5);
  for (std::size_t c = 0; c < 4; ++c) {
    double m = 0;
    for (std::size_t r = 0; r < 5; ++r) m += v.at(r, c) / 5;
    for (std::size_t r = 0; r < 5; ++r) EXPECT_NEAR(y.at(r, c), m, 1e-12);
  }
}

TEST(Tensor, SeededInitIsBitwiseReproducible) {
  Rng a(77), b(77);
  auto x = T::uniform(8, 8, 0.3, a), y = T::uniform(8, 8, 0.3, b);
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
}

TEST(Tensor, ShapeMismatchThrows) {
  EXPECT_THROW(add(T::zeros(2, 3), T::zeros(3, 2)), TensorError);
  EXPECT_THROW(matmul(T::zeros(2, 3), T::zeros(2, 3)), TensorError);
  EXPECT_THROW(T::from(2, 2, {1.0}), TensorError);
}
