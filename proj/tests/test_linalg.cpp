#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "solarmlr/linalg.hpp"
#include "solarmlr/opcount.hpp"

using namespace solarmlr;

TEST(Vector, RejectsZeroLength) {
  EXPECT_THROW(Vector(0), Error);
  EXPECT_THROW(Vector(std::vector<double>{}), Error);
}

TEST(Vector, RejectsNonFinite) {
  try {
    Vector v({1.0, std::numeric_limits<double>::quiet_NaN()});
    FAIL() << "expected NonFinite";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
  }
  EXPECT_THROW(Vector({std::numeric_limits<double>::infinity()}), Error);
}

TEST(Matrix, RowMajorInitializerAndColumnMajorStorage) {
  const Matrix a{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(a.rows(), 2u);
  EXPECT_EQ(a.cols(), 3u);
  EXPECT_EQ(a(1, 0), 4.0);
  EXPECT_EQ(a.col(2)[0], 3.0);
  EXPECT_EQ(a.col(2)[1], 6.0);
  EXPECT_EQ(a.row(1), Vector({4, 5, 6}));
}

TEST(Matrix, RaggedInitializerRejected) { EXPECT_THROW((Matrix{{1, 2}, {3}}), Error); }

TEST(Matrix, MatmulMatchesTripleLoop) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(9), k = 1 + rng.below(9), n = 1 + rng.below(9);
    const Matrix a = oracle::random_matrix(m, k, rng);
    const Matrix b = oracle::random_matrix(k, n, rng);
    EXPECT_LT(oracle::max_abs_diff(matmul(a, b), oracle::matmul_naive(a, b)), 1e-12);
  }
}

TEST(Matrix, MatmulDimensionMismatch) {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Matrix, TransposeTwiceIsIdentity) {
  Rng rng(3);
  const Matrix a = oracle::random_matrix(5, 3, rng);
  EXPECT_EQ(transpose(transpose(a)), a);
  EXPECT_EQ(transpose(a)(2, 4), a(4, 2));
}

TEST(Matrix, IdentityIsMultiplicativeUnit) {
  Rng rng(4);
  const Matrix a = oracle::random_matrix(4, 4, rng);
  EXPECT_EQ(matmul(Matrix::identity(4), a), a);
}

TEST(Matrix, MatvecAgreesWithMatmul) {
  Rng rng(5);
  const Matrix a = oracle::random_matrix(6, 4, rng);
  const Vector x = oracle::random_vector(4, rng);
  Matrix xm(4, 1);
  for (std::size_t i = 0; i < 4; ++i) xm(i, 0) = x[i];
  const Matrix ref = oracle::matmul_naive(a, xm);
  const Vector y = matvec(a, x);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(y[i], ref(i, 0), 1e-13);
}

TEST(Norms, FrobeniusAndL2) {
  const Matrix a{{3, 0}, {0, 4}};
  EXPECT_DOUBLE_EQ(frobenius_norm(a), 5.0);
  EXPECT_DOUBLE_EQ(l2_norm(Vector({1, 2, 2})), 3.0);
}

TEST(OpCount, DotIsOneOpPerTerm) {
  const Vector u({1, 2, 3, 4, 5}), v({5, 4, 3, 2, 1});
  ops::Scope scope;
  EXPECT_DOUBLE_EQ(dot(u, v), 35.0);
  EXPECT_EQ(scope.count(), 5u);
}

TEST(ColumnPartition, EvenSplitsRemainderToFirstNodes) {
  const auto p = ColumnPartition::even(7, 3);
  ASSERT_EQ(p.node_count(), 3u);
  EXPECT_EQ(p.blocks()[0].cols.size(), 3u);
  EXPECT_EQ(p.blocks()[1].cols.size(), 2u);
  EXPECT_EQ(p.blocks()[2].cols.size(), 2u);
  EXPECT_EQ(p.owner(6), 2u);
  EXPECT_EQ(p.controller(), 0u);
}

TEST(ColumnPartition, FromOwnersRequiresContiguity) {
  EXPECT_NO_THROW(ColumnPartition::from_owners({2, 2, 0, 1, 1}));
  EXPECT_THROW(ColumnPartition::from_owners({0, 1, 0}), Error);
  EXPECT_THROW(ColumnPartition::from_owners({}), Error);
}

TEST(ColumnPartition, ControllerOwnsColumnZero) {
  const auto p = ColumnPartition::from_owners({3, 3, 1, 2});
  EXPECT_EQ(p.controller(), 3u);
  ASSERT_NE(p.block_of(1), nullptr);
  EXPECT_EQ(p.block_of(1)->cols, std::vector<std::size_t>({2}));
  EXPECT_EQ(p.block_of(9), nullptr);
}

TEST(ColumnPartition, EmptyBlocksRejected) {
  EXPECT_THROW(ColumnPartition::contiguous({2, 0}, {0, 1}), Error);
  EXPECT_THROW(ColumnPartition::even(2, 3), Error);
}

TEST(ColumnPartition, SelectColumnsFollowsBlocks) {
  const Matrix a{{1, 2, 3}, {4, 5, 6}};
  const auto p = ColumnPartition::contiguous({1, 2}, {0, 1});
  const Matrix b = a.select_columns(p.blocks()[1].cols);
  EXPECT_EQ(b, (Matrix{{2, 3}, {5, 6}}));
}
