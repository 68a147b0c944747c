#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "owl/error.hpp"
#include "owl/rng.hpp"
#include "owl/tensor.hpp"

namespace owl {
namespace {

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Matrix m{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
  EXPECT_EQ(matmul(Matrix::identity(3), m), m);
}

TEST(Matmul, ZerosGiveZeros) {
  const Matrix m{{1, 2}, {3, 4}, {5, 6}};
  EXPECT_EQ(matmul(Matrix::zeros(2, 3), m), Matrix::zeros(2, 2));
}

TEST(Matmul, HandExample) {
  const Matrix r = matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{5}, {6}});
  EXPECT_EQ(r, (Matrix{{17}, {39}}));
}

TEST(Matmul, DimensionMismatchThrows) {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimensionMismatch);
  }
}

TEST(Matmul, NonFiniteResultThrows) {
  const Matrix a{{1e308, 1e308}};
  const Matrix b{{1e308}, {1e308}};
  try {
    matmul(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(3);
  Matrix a(5, 7), b(7, 4);
  for (auto& v : a.flat()) v = rng.normal();
  for (auto& v : b.flat()) v = rng.normal();
  const Matrix c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 7; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(c(i, j), s, 1e-12);
    }
  }
}

TEST(Softmax, Examples) {
  const auto u = softmax_row(std::vector<Real>{0, 0, 0});
  for (Real p : u) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  const auto big = softmax_row(std::vector<Real>{1000, 0});
  EXPECT_NEAR(big[0], 1.0, 1e-12);
  EXPECT_TRUE(std::isfinite(big[1]));
  const auto s = softmax_row(std::vector<Real>{1, 2});
  EXPECT_NEAR(s[0], 0.26894, 1e-5);
  EXPECT_NEAR(s[1], 0.73106, 1e-5);
}

TEST(Softmax, EmptyThrows) { EXPECT_THROW(softmax_row(std::vector<Real>{}), Error); }

TEST(Softmax, PropertyOverRandomVectors) {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(40);
    std::vector<Real> v(n);
    for (auto& x : v) x = 50.0 * rng.normal();
    const auto p = softmax_row(v);
    const auto lp = log_softmax_row(v);
    Real total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_GE(p[i], 0.0);
      ASSERT_NEAR(std::exp(lp[i]), p[i], 1e-12);
      total += p[i];
    }
    ASSERT_NEAR(total, 1.0, 1e-12);
    // Shift invariance.
    std::vector<Real> shifted = v;
    for (auto& x : shifted) x += 123.0;
    const auto q = softmax_row(shifted);
    for (std::size_t i = 0; i < n; ++i) ASSERT_NEAR(p[i], q[i], 1e-12);
  }
}

TEST(Percentile, Examples) {
  EXPECT_EQ(percentile(std::vector<Real>{5}, 80), 5);
  std::vector<Real> r(100);
  for (int i = 0; i < 100; ++i) r[static_cast<std::size_t>(i)] = 100 - i;
  EXPECT_EQ(percentile(r, 80), 80);
  EXPECT_EQ(percentile(std::vector<Real>{3, 1, 2}, 0), 1);
  EXPECT_EQ(percentile(std::vector<Real>{3, 1, 2}, 100), 3);
}

TEST(Percentile, Errors) {
  EXPECT_THROW(percentile(std::vector<Real>{}, 50), Error);
  EXPECT_THROW(percentile(std::vector<Real>{1}, -1), Error);
  EXPECT_THROW(percentile(std::vector<Real>{1}, 100.5), Error);
}

TEST(Kernels, MatchMatmul) {
  Rng rng(5);
  Matrix w(3, 4);
  for (auto& v : w.flat()) v = rng.normal();
  const std::vector<Real> x{0.5, -1.0, 2.0};
  std::vector<Real> y(4, 1.0);
  gemv_acc(x, w, y);
  const Matrix ref = matmul(Matrix(1, 3, x), w);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y[j], 1.0 + ref(0, j), 1e-12);

  const std::vector<Real> g{1, 2, 3, 4};
  std::vector<Real> z(3, 0.0);
  gemv_t_acc(w, g, z);
  for (std::size_t i = 0; i < 3; ++i) {
    Real s = 0;
    for (std::size_t j = 0; j < 4; ++j) s += w(i, j) * g[j];
    EXPECT_NEAR(z[i], s, 1e-12);
  }

  Matrix acc(3, 4);
  outer_acc(x, g, acc);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(acc(i, j), x[i] * g[j]);
}

TEST(Rng, DeterministicAndInRange) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    EXPECT_EQ(u, b.uniform());
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(a.uniform_int(7), 7u);
    b.uniform_int(7);
  }
  EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
  EXPECT_NE(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Rng, NormalMoments) {
  Rng rng(9);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

}  // namespace
}  // namespace owl
