// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnid/linalg.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace attnid;

namespace {

void expect_orthonormal_columns(const Matrix& u, double tol) {
    EXPECT_LE(max_abs_diff(matmul_tn(u, u), Matrix::identity(u.cols())), tol);
}

void expect_reconstructs(const Matrix& m, const SvdResult& r) {
    Matrix us = r.U;
    for (std::size_t i = 0; i < us.rows(); ++i)
        for (std::size_t k = 0; k < us.cols(); ++k) us(i, k) *= r.singular_values[k];
    EXPECT_LE(max_abs_diff(matmul(us, r.Vt), m), 1e-9 * (1.0 + max_abs(m)));
}

} // namespace

TEST(Matrix, RejectsBadLengthAndNonFinite) {
    EXPECT_THROW(Matrix(2, 2, {1.0, 2.0, 3.0}), ShapeError);
    EXPECT_THROW(Matrix(1, 2, {1.0, NAN}), InvalidArgument);
    EXPECT_THROW(Matrix(1, 1, {INFINITY}), InvalidArgument);
    EXPECT_THROW((Matrix{{1.0, 2.0}, {3.0}}), ShapeError);
}

TEST(Matrix, ProductsMatchTripleLoop) {
    Philox rng(11);
    const Matrix a = oracle::gaussian(5, 7, rng);
    const Matrix b = oracle::gaussian(7, 3, rng);
    EXPECT_LE(max_abs_diff(matmul(a, b), oracle::naive_matmul(a, b)), 1e-12);
    EXPECT_LE(max_abs_diff(matmul_nt(a, transpose(b)), oracle::naive_matmul(a, b)), 1e-12);
    EXPECT_LE(max_abs_diff(matmul_tn(transpose(a), b), oracle::naive_matmul(a, b)), 1e-12);
    EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Svd, IdentityAndDiagonal) {
    const auto id = svd(Matrix::identity(3));
    EXPECT_EQ(id.singular_values, (std::vector<double>{1, 1, 1}));
    const Matrix d{{3, 0, 0}, {0, 2, 0}, {0, 0, 0}};
    const auto r = svd(d);
    EXPECT_EQ(r.singular_values, (std::vector<double>{3, 2, 0}));
    expect_orthonormal_columns(r.U, 1e-10);
    expect_orthonormal_columns(transpose(r.Vt), 1e-10);
    expect_reconstructs(d, r);
}

TEST(Svd, MatchesEigenvaluesOfGram) {
    Philox rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix m = oracle::gaussian(5, 3, rng);
        const auto r = svd(m);
        const auto ev = oracle::symmetric_eigenvalues(matmul_tn(m, m));
        ASSERT_EQ(r.singular_values.size(), 3u);
        for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(r.singular_values[k] * r.singular_values[k], ev[k], 1e-8);
        expect_orthonormal_columns(r.U, 1e-10);
        expect_orthonormal_columns(transpose(r.Vt), 1e-10);
        expect_reconstructs(m, r);
    }
}

TEST(Svd, WideAndRankDeficient) {
    Philox rng(6);
    const Matrix wide = oracle::gaussian(3, 8, rng);
    const auto r = svd(wide);
    EXPECT_EQ(r.U.rows(), 3u);
    EXPECT_EQ(r.Vt.cols(), 8u);
    expect_orthonormal_columns(r.U, 1e-10);
    expect_orthonormal_columns(transpose(r.Vt), 1e-10);
    expect_reconstructs(wide, r);

    const Matrix low = matmul(oracle::gaussian(9, 2, rng), oracle::gaussian(2, 6, rng));
    const auto q = svd(low);
    expect_orthonormal_columns(q.U, 1e-10);
    expect_reconstructs(low, q);
    EXPECT_TRUE(std::is_sorted(q.singular_values.rbegin(), q.singular_values.rend()));
}

TEST(Svd, Deterministic) {
    Philox rng(8);
    const Matrix m = oracle::gaussian(12, 7, rng);
    const auto a = svd(m);
    const auto b = svd(m);
    EXPECT_EQ(a.U, b.U);
    EXPECT_EQ(a.singular_values, b.singular_values);
    EXPECT_EQ(a.Vt, b.Vt);
}

TEST(Svd, EmptyIsRejected) { EXPECT_THROW(svd(Matrix(0, 3)), InvalidArgument); }

TEST(NumericalRank, Cases) {
    EXPECT_EQ(numerical_rank(Matrix(4, 4)), 0u);
    Philox rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix g = oracle::gaussian(10, 4, rng);
        EXPECT_EQ(numerical_rank(g), 4u);
        EXPECT_EQ(numerical_rank(g), oracle::elimination_rank(g));
    }
    const Matrix u = oracle::gaussian(6, 1, rng);
    const Matrix v = oracle::gaussian(1, 4, rng);
    EXPECT_EQ(numerical_rank(matmul(u, v)), 1u);
    // An explicit tolerance above s1 leaves nothing.
    EXPECT_EQ(numerical_rank(Matrix::identity(3), 2.0), 0u);
}

TEST(LeftNullspace, CanonicalCase) {
    const Matrix m{{1, 0}, {0, 1}, {0, 0}};
    const Matrix b = left_nullspace_basis(m);
    ASSERT_EQ(b.rows(), 1u);
    EXPECT_NEAR(std::abs(b(0, 2)), 1.0, 1e-15);
    EXPECT_LE(max_abs(matmul(b, m)), 1e-15);
}

TEST(LeftNullspace, FullRankWideHasNone) {
    Philox rng(4);
    EXPECT_EQ(left_nullspace_basis(oracle::gaussian(4, 8, rng)).rows(), 0u);
}

TEST(LeftNullspace, ProductOfFactors) {
    Philox rng(9);
    const Matrix m = matmul(matmul(oracle::gaussian(10, 8, rng), oracle::gaussian(8, 4, rng)), oracle::gaussian(4, 8, rng));
    const Matrix b = left_nullspace_basis(m);
    ASSERT_EQ(b.rows(), 6u);
    EXPECT_LE(max_abs(matmul(b, m)), 1e-10 * max_abs(m));
    EXPECT_LE(max_abs_diff(matmul_nt(b, b), Matrix::identity(6)), 1e-10);
}

TEST(Projection, EmptyBasisGivesZero) {
    const Matrix a{{1, 2}, {3, 4}};
    EXPECT_EQ(project_rows_onto_subspace(a, Matrix(0, 2)), Matrix(2, 2));
}

TEST(Projection, IdempotentOnSpan) {
    const Matrix basis{{1, 0, 0}, {0, 1, 0}};
    const Matrix a{{1, 2, 0}, {-3, 0.5, 0}};
    EXPECT_LE(max_abs_diff(project_rows_onto_subspace(a, basis), a), 1e-12);
}

TEST(Projection, ResidualIsOrthogonal) {
    Philox rng(12);
    const Matrix basis = left_nullspace_basis(oracle::gaussian(7, 3, rng));
    const Matrix a = oracle::gaussian(5, 7, rng);
    Matrix resid = a;
    resid -= project_rows_onto_subspace(a, basis);
    EXPECT_LE(max_abs(matmul_nt(resid, basis)), 1e-10);
}

TEST(Projection, RejectsNonOrthonormalBasis) {
    EXPECT_THROW(project_rows_onto_subspace(Matrix{{1.0, 1.0}}, Matrix{{1.0, 1.0}}), InvalidArgument);
}

TEST(Softmax, Examples) {
    const Matrix s = softmax_rows(Matrix{{0, 0, 0}, {1000, 0, 0}, {1, 2, 3}});
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(s(0, j), 1.0 / 3.0);
    EXPECT_NEAR(s(1, 0), 1.0, 1e-12);
    EXPECT_NEAR(s(1, 1), 0.0, 1e-12);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s(2, j), std::exp(j + 1.0) / z, 1e-15);
}

TEST(Pearson, Examples) {
    const std::vector<double> a{1, 2, 3};
    const std::vector<double> b{3, 2, 1};
    EXPECT_DOUBLE_EQ(pearson(a, a), 1.0);
    EXPECT_DOUBLE_EQ(pearson(a, b), -1.0);
    const std::vector<double> c{1, 2, 3, 4}, e{1, 3, 2, 4};
    EXPECT_NEAR(pearson(c, e), 0.8, 1e-15);
    EXPECT_NEAR(pearson(c, e), oracle::pearson(c, e), 1e-15);
    EXPECT_THROW(pearson(std::vector<double>{1, 1, 1}, a), UndefinedCorrelation);
}

TEST(Pearson, MatchesTextbookFormula) {
    Philox rng(13);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> a(30), b(30);
        for (std::size_t i = 0; i < 30; ++i) {
            a[i] = rng.normal();
            b[i] = 0.5 * a[i] + rng.normal();
        }
        EXPECT_NEAR(pearson(a, b), oracle::pearson(a, b), 1e-13);
    }
}

TEST(Philox, KnownAnswerZeroKey) {
    // Philox4x32-10 with zero key and counter.
    Philox rng(0, 0);
    EXPECT_EQ(rng.next_u32(), 0x6627e8d5u);
    EXPECT_EQ(rng.next_u32(), 0xe169c58du);
    EXPECT_EQ(rng.next_u32(), 0xbc57ac4cu);
    EXPECT_EQ(rng.next_u32(), 0x9b00dbd8u);
}

TEST(Philox, StreamsAndDeterminism) {
    Philox a(42), b(42), c(43);
    EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_NE(Philox(42).next_u64(), c.next_u64());
    EXPECT_NE(Philox(42).substream(0).next_u64(), Philox(42).substream(1).next_u64());
    Philox r(7);
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double z = r.normal();
        sum += z;
        sq += z * z;
    }
    EXPECT_NEAR(sum / 20000, 0.0, 0.05);
    EXPECT_NEAR(sq / 20000, 1.0, 0.05);
    for (int i = 0; i < 1000; ++i) EXPECT_LT(r.below(7), 7u);
}
