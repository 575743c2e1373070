// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNID_SIMPLEX_ALTERNATIVES_HPP
#define ATTNID_SIMPLEX_ALTERNATIVES_HPP

#include "attnid/errors.hpp"
#include "attnid/head_geometry.hpp"
#include "attnid/linalg.hpp"
#include "attnid/matrix.hpp"
#include "attnid/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace attnid {

inline constexpr double kDefaultPerturbationScale = 0.5;
/// lambda_used never exceeds this multiple of the row's L2 norm.
inline constexpr double kLambdaNormCap = 10.0;

/// Unit-norm random combination of the basis rows (Gaussian coefficients).
inline std::vector<double> sample_null_direction(const Matrix& basis, Philox& rng) {
    if (basis.rows() == 0) {
        throw IdentifiableHead("no alternative attention exists: the augmented left null space is empty");
    }
    std::vector<double> dir(basis.cols(), 0.0);
    double norm = 0.0;
    while (norm == 0.0) {
        std::fill(dir.begin(), dir.end(), 0.0);
        for (std::size_t b = 0; b < basis.rows(); ++b) {
            const double coef = rng.normal();
            const auto row = basis.row(b);
            for (std::size_t i = 0; i < dir.size(); ++i) dir[i] += coef * row[i];
        }
        norm = norm2(dir);
    }
    for (double& v : dir) v /= norm;
    return dir;
}

namespace detail {

inline double lambda_max_unchecked(std::span<const double> a, std::span<const double> dir) {
    double lm = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (dir[i] < 0.0) lm = std::min(lm, -a[i] / dir[i]);
    }
    return std::max(lm, 0.0);
}

} // namespace detail

/// Largest lambda with a + lambda * dir >= 0; +inf if dir has no negative
/// component. `a` must be strictly positive.
inline double lambda_max(std::span<const double> a, std::span<const double> dir) {
    if (a.size() != dir.size()) throw ShapeError("lambda_max: attention row and direction differ in length");
    for (double v : a) {
        if (!(v > 0.0)) throw InvalidArgument("lambda_max: attention row must be strictly positive");
    }
    return detail::lambda_max_unchecked(a, dir);
}

struct PerturbationResult {
    Matrix A_alt;
    std::vector<double> lambda_used;
    std::vector<double> lambda_max;
    Matrix direction; ///< one sampled null row per attention row
    /// Rows whose sampled direction is pinned by an (almost) zero attention
    /// entry, so that lambda_used is ~0.
    std::vector<std::size_t> confined_rows;
};

/// Build A_alt = A + diag(lambda) * D with each row of D drawn from
/// LN([T, 1]). Row i uses rng.substream(i).
inline PerturbationResult perturb_attention(const HeadSnapshot& s, const Philox& rng,
                                            double scale = kDefaultPerturbationScale,
                                            std::optional<double> tol = std::nullopt) {
    if (!(scale > 0.0 && scale <= 1.0)) throw InvalidArgument("perturbation scale must lie in (0, 1]");
    validate(s);
    const Matrix basis = augmented_nullspace_basis(compute_T(s), tol);
    if (basis.rows() == 0) {
        throw IdentifiableHead("head (layer " + std::to_string(s.layer) + ", head " + std::to_string(s.head) +
                               ") is identifiable: LN([T,1]) is empty");
    }
    const std::size_t n = s.A.rows();
    PerturbationResult r{s.A, std::vector<double>(n), std::vector<double>(n), Matrix(n, n), {}};
    for (std::size_t i = 0; i < n; ++i) {
        Philox row_rng = rng.substream(i);
        const std::vector<double> dir = sample_null_direction(basis, row_rng);
        const auto a = s.A.row(i);
        const double lm = detail::lambda_max_unchecked(a, dir);
        const double cap = kLambdaNormCap * norm2(a);
        const double used = std::min(scale * lm, cap);
        double min_neg_entry = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < n; ++k)
            if (dir[k] < 0.0) min_neg_entry = std::min(min_neg_entry, a[k]);
        if (min_neg_entry < 1e-12) r.confined_rows.push_back(i);
        r.lambda_max[i] = lm;
        r.lambda_used[i] = used;
        std::copy(dir.begin(), dir.end(), r.direction.row(i).begin());
        auto out = r.A_alt.row(i);
        for (std::size_t k = 0; k < n; ++k) out[k] = a[k] + used * dir[k];
    }
    return r;
}

struct EquivalenceReport {
    double max_output_diff = 0.0; ///< ||A_alt T - A T||_max
    double max_row_sum_err = 0.0;
    double min_entry = 0.0;
    bool pass = false;
};

inline EquivalenceReport verify_equivalence(const Matrix& a, const Matrix& a_alt, const Matrix& T, double tol) {
    if (a.rows() != a_alt.rows() || a.cols() != a_alt.cols() || a.cols() != T.rows()) {
        throw ShapeError("verify_equivalence: A " + a.shape() + ", A_alt " + a_alt.shape() + ", T " + T.shape());
    }
    EquivalenceReport r;
    r.max_output_diff = max_abs_diff(matmul(a_alt, T), matmul(a, T));
    r.min_entry = a_alt.empty() ? 0.0 : *std::min_element(a_alt.data().begin(), a_alt.data().end());
    for (std::size_t i = 0; i < a_alt.rows(); ++i) {
        double sum = 0.0;
        for (double v : a_alt.row(i)) sum += v;
        r.max_row_sum_err = std::max(r.max_row_sum_err, std::abs(sum - 1.0));
    }
    r.pass = r.max_output_diff <= tol && r.max_row_sum_err <= tol && r.min_entry >= -tol;
    return r;
}

} // namespace attnid

#endif // ATTNID_SIMPLEX_ALTERNATIVES_HPP
