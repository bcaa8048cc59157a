#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "tcoder/numerics.hpp"

using namespace tcoder;
using testutil::mat;
using testutil::Md;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Md b = mat({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul<double>(Md::Identity(2, 2), b), b);
}

TEST(Matmul, ZeroRightFactorGivesZero) {
  EXPECT_EQ(matmul<double>(mat({{1, 2}, {3, 4}}), Md::Zero(2, 2)), Md::Zero(2, 2));
}

TEST(Matmul, TwoByTwoAgainstLoopOracle) {
  const Md a = mat({{1, 2}, {3, 4}}), b = mat({{5, 6}, {7, 8}});
  const Md expected = mat({{19, 22}, {43, 50}});
  EXPECT_EQ(oracle::matmul(a, b), expected);
  EXPECT_EQ(matmul(a, b), expected);
}

TEST(Matmul, InnerExtentMismatchNamesBothShapes) {
  try {
    matmul<double>(Md::Zero(2, 3), Md::Zero(2, 3));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos) << e.what();
  }
}

TEST(Matmul, AssociativeOnRandomTriples) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    const Index m = testutil::between(rng, 1, 32), k = testutil::between(rng, 1, 32);
    const Index n = testutil::between(rng, 1, 32), p = testutil::between(rng, 1, 32);
    const Md a = testutil::rand(rng, m, k), b = testutil::rand(rng, k, n), c = testutil::rand(rng, n, p);
    EXPECT_LE(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))), 1e-9);
  }
}

TEST(Matmul, MatchesLoopOracleOnRandomShapes) {
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    const Md a = testutil::rand(rng, testutil::between(rng, 1, 9), 7), b = testutil::rand(rng, 7, 5);
    EXPECT_LE(max_abs_diff(matmul(a, b), oracle::matmul(a, b)), 1e-13);
  }
}

TEST(Matmul, CounterUsesDotProductConvention) {
  FlopCounter c;
  matmul<double>(Md::Ones(3, 4), Md::Ones(4, 5), &c);
  EXPECT_EQ(c.multiplies, 3u * 5u * 4u);
  EXPECT_EQ(c.adds, 3u * 5u * 3u);
}

TEST(Softmax, ZerosGiveUniformRows) {
  EXPECT_EQ(softmax_axis(Md(Md::Zero(2, 2)), SoftmaxAxis::rows_over_k), mat({{0.5, 0.5}, {0.5, 0.5}}));
}

TEST(Softmax, LargeEqualLogitsDoNotOverflow) {
  const Md out = softmax_axis(mat({{1000, 1000}}), SoftmaxAxis::rows_over_k);
  EXPECT_EQ(out, mat({{0.5, 0.5}}));
}

TEST(Softmax, ClosedFormTwoEntryRow) {
  const Md out = softmax_axis(mat({{0, std::log(3.0)}}), SoftmaxAxis::rows_over_k);
  EXPECT_NEAR(out(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(out(0, 1), 0.75, 1e-15);
}

TEST(Softmax, SlicesSumToOneAlongChosenAxis) {
  Rng rng(3);
  const Md m = testutil::rand(rng, 6, 6) * 20.0;
  const Md r = softmax_axis(m, SoftmaxAxis::rows_over_k);
  const Md c = softmax_axis(m, SoftmaxAxis::cols_over_j);
  for (Index i = 0; i < 6; ++i) {
    EXPECT_NEAR(r.row(i).sum(), 1.0, 1e-12);
    EXPECT_NEAR(c.col(i).sum(), 1.0, 1e-12);
  }
  EXPECT_LE(max_abs_diff(r, oracle::softmax_rows(m)), 1e-15);
  EXPECT_LE(max_abs_diff(c, oracle::softmax_cols(m)), 1e-15);
}

TEST(Softmax, ShiftInvariant) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const Md m = testutil::rand(rng, 5, 4);
    const double shift = rng.uniform(-50, 50);
    for (auto axis : {SoftmaxAxis::rows_over_k, SoftmaxAxis::cols_over_j}) {
      const Md shifted = (m.array() + shift).matrix();
      EXPECT_LE(max_abs_diff(softmax_axis(shifted, axis), softmax_axis(m, axis)), 1e-12);
    }
  }
}

TEST(CumOuter, SingleTokenIsOuterProduct) {
  const Md q = mat({{1, 2}}), k = mat({{3, 5}});
  const auto out = cum_outer(q, k);
  EXPECT_EQ(Md(out.slice(0)), mat({{3, 5}, {6, 10}}));
}

TEST(CumOuter, TwoTokenPrefixSums) {
  const auto out = cum_outer(mat({{2}, {3}}), mat({{5}, {7}}));
  ASSERT_EQ(out.dim(0), 2);
  EXPECT_EQ(out(0, 0, 0), 10.0);
  EXPECT_EQ(out(1, 0, 0), 31.0);
}

TEST(CumOuter, ZeroKeysGiveZeros) {
  Rng rng(5);
  const auto out = cum_outer<double>(testutil::rand(rng, 4, 3), Md::Zero(4, 3));
  EXPECT_EQ(out.max_abs(), 0.0);
}

TEST(CumOuter, LastSliceEqualsFullScoreMatrix) {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    const Index n = testutil::between(rng, 1, 40), d = testutil::between(rng, 1, 8);
    const Md q = testutil::rand(rng, n, d), k = testutil::rand(rng, n, d);
    const auto out = cum_outer(q, k);
    EXPECT_LE(max_abs_diff(Md(out.slice(n - 1)), oracle::matmul(oracle::transpose(q), k)), 1e-10);
  }
}

TEST(CumOuter, ShapeMismatchThrows) {
  EXPECT_THROW(cum_outer<double>(Md::Zero(3, 2), Md::Zero(3, 3)), DimensionError);
}

TEST(RandInit, SameSeedIsBitIdentical) {
  Rng a(99), b(99);
  const Md x = rand_init<double>(7, 5, InitScheme::xavier(), a);
  const Md y = rand_init<double>(7, 5, InitScheme::xavier(), b);
  EXPECT_EQ(x, y);
}

TEST(RandInit, XavierStaysWithinBound) {
  Rng rng(1);
  const Md x = rand_init<double>(4, 4, InitScheme::xavier(), rng);
  EXPECT_LE(x.cwiseAbs().maxCoeff(), std::sqrt(6.0 / 8.0));
  EXPECT_GT(x.cwiseAbs().maxCoeff(), 0.0);
}

TEST(RandInit, ZeroSigmaNormalIsZero) {
  Rng rng(1);
  EXPECT_EQ(rand_init<double>(3, 3, InitScheme::gaussian(0.0), rng), Md::Zero(3, 3));
}

TEST(Rng, FirstOutputMatchesStandardMersenneTwister) {
  // the standard fixes the 10000th output of mt19937_64 default-seeded
  std::mt19937_64 reference;
  reference.discard(9999);
  EXPECT_EQ(reference(), 9981545732273789042ULL);
  Rng rng(5489);  // the standard's default seed
  std::mt19937_64 same(5489);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(rng.next_u64(), same());
}

TEST(Rng, UniformAndBelowStayInRange) {
  Rng rng(8);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(rng.below(7), 7u);
  }
  EXPECT_THROW(rng.below(0), std::invalid_argument);
}

TEST(Rng, ForkedStreamsDifferAndAreReproducible) {
  const Rng root(42);
  Rng a = root.fork(1), b = root.fork(2), a2 = root.fork(1);
  const auto x = a.next_u64();
  EXPECT_NE(x, b.next_u64());
  EXPECT_EQ(x, a2.next_u64());
}

TEST(Rng, NormalHasRoughlyUnitMoments) {
  Rng rng(13);
  double s = 0, s2 = 0;
  constexpr int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Tensor3, RowMajorLastIndexFastest) {
  Tensor3<double> t(2, 3, 4);
  t(1, 2, 3) = 7.0;
  EXPECT_EQ(t.data()[(1 * 3 + 2) * 4 + 3], 7.0);
  EXPECT_EQ(t.slice(1)(2, 3), 7.0);
  EXPECT_EQ(t.size(), 24);
}

TEST(Tensor3, NegativeExtentThrows) { EXPECT_THROW(Tensor3<double>(1, -1, 1), DimensionError); }
