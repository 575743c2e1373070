// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnid/simplex_alternatives.hpp"
#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace attnid;

TEST(NullDirection, SingleRowBasisGivesPlusMinusRow) {
    const Matrix basis{{0.6, -0.8, 0.0}};
    Philox rng(1);
    for (int t = 0; t < 5; ++t) {
        const auto d = sample_null_direction(basis, rng);
        EXPECT_NEAR(std::abs(d[0]), 0.6, 1e-15);
        EXPECT_NEAR(d[0] * d[1], -0.48, 1e-15);
        EXPECT_EQ(d[2], 0.0);
    }
}

TEST(NullDirection, SatisfiesBothConditions) {
    Philox rng(2);
    const HeadSnapshot s = fixture::random_snapshot(10, 8, 4, rng);
    const Matrix T = compute_T(s);
    const auto dir = sample_null_direction(augmented_nullspace_basis(T), rng);
    EXPECT_LE(max_abs(matmul(Matrix(1, 10, dir), T)), 1e-10 * max_abs(T));
    double sum = 0.0;
    for (double v : dir) sum += v;
    EXPECT_LE(std::abs(sum), 1e-12);
}

TEST(NullDirection, EmptyBasisIsIdentifiable) {
    Philox rng(3);
    EXPECT_THROW(sample_null_direction(Matrix(0, 5), rng), IdentifiableHead);
    const HeadSnapshot s = fixture::random_snapshot(5, 8, 4, rng);
    EXPECT_THROW(perturb_attention(s, Philox(1)), IdentifiableHead);
}

TEST(LambdaMax, Examples) {
    EXPECT_DOUBLE_EQ(lambda_max(std::vector<double>{0.5, 0.5}, std::vector<double>{1, -1}), 0.5);
    EXPECT_DOUBLE_EQ(lambda_max(std::vector<double>{0.7, 0.2, 0.1}, std::vector<double>{0.5, -0.25, -0.25}), 0.4);
    EXPECT_TRUE(std::isinf(lambda_max(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0})));
    EXPECT_THROW(lambda_max(std::vector<double>{1.0, 0.0}, std::vector<double>{1, -1}), InvalidArgument);
}

TEST(Perturb, ConditionsHold) {
    Philox rng(4);
    const HeadSnapshot s = fixture::random_snapshot(10, 8, 4, rng);
    const auto r = perturb_attention(s, Philox(99), 0.5);
    const Matrix T = compute_T(s);
    const double s1 = svd(T).singular_values.front();
    const auto rep = verify_equivalence(s.A, r.A_alt, T, 1e-10 * std::max(1.0, s1));
    EXPECT_TRUE(rep.pass);
    EXPECT_LE(rep.max_output_diff, 1e-10 * s1);
    EXPECT_GE(rep.min_entry, -1e-12);
    EXPECT_LE(rep.max_row_sum_err, 1e-12);
    for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_GE(r.lambda_used[i], 0.0);
        EXPECT_LE(r.lambda_used[i], r.lambda_max[i]);
        EXPECT_DOUBLE_EQ(r.lambda_max[i], lambda_max(s.A.row(i), r.direction.row(i)));
    }
    EXPECT_GT(max_abs_diff(r.A_alt, s.A), 0.0);
}

TEST(Perturb, SmallScaleApproachesOriginal) {
    Philox rng(5);
    const HeadSnapshot s = fixture::random_snapshot(10, 8, 4, rng);
    const double big = max_abs_diff(perturb_attention(s, Philox(1), 0.5).A_alt, s.A);
    const double small = max_abs_diff(perturb_attention(s, Philox(1), 1e-9).A_alt, s.A);
    EXPECT_LE(small, 1e-8);
    EXPECT_NEAR(small / big, 2e-9, 1e-12);
}

TEST(Perturb, DeterministicPerSeedAndRow) {
    Philox rng(6);
    const HeadSnapshot s = fixture::random_snapshot(12, 8, 4, rng);
    EXPECT_EQ(perturb_attention(s, Philox(3)).A_alt, perturb_attention(s, Philox(3)).A_alt);
    EXPECT_NE(perturb_attention(s, Philox(3)).A_alt, perturb_attention(s, Philox(4)).A_alt);
}

TEST(Perturb, RejectsBadScale) {
    Philox rng(7);
    const HeadSnapshot s = fixture::random_snapshot(10, 8, 4, rng);
    EXPECT_THROW(perturb_attention(s, Philox(1), 0.0), InvalidArgument);
    EXPECT_THROW(perturb_attention(s, Philox(1), 1.5), InvalidArgument);
}

TEST(VerifyEquivalence, TrivialAndCounterexample) {
    Philox rng(8);
    const HeadSnapshot s = fixture::random_snapshot(10, 8, 4, rng);
    const Matrix T = compute_T(s);
    const auto same = verify_equivalence(s.A, s.A, T, 1e-9);
    EXPECT_EQ(same.max_output_diff, 0.0);
    EXPECT_TRUE(same.pass);

    Matrix broken = s.A;
    broken(0, 0) = 0.0;
    double sum = 0.0;
    for (double v : broken.row(0)) sum += v;
    for (double& v : broken.row(0)) v /= sum;
    const auto rep = verify_equivalence(s.A, broken, T, 1e-9);
    EXPECT_LE(rep.max_row_sum_err, 1e-12);
    EXPECT_GT(rep.max_output_diff, 1e-6);
    EXPECT_FALSE(rep.pass);
}
