// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNID_HEAD_GEOMETRY_HPP
#define ATTNID_HEAD_GEOMETRY_HPP

#include "attnid/errors.hpp"
#include "attnid/linalg.hpp"
#include "attnid/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>

namespace attnid {

/// Everything needed to reason about one attention head on one input:
/// the head output is A · E · Wv · H.
struct HeadSnapshot {
    std::size_t layer = 1; ///< 1-based
    std::size_t head = 0;  ///< 0-based
    Matrix E;              ///< d_s x d, attention-layer input
    Matrix Wv;             ///< d x d_v
    Matrix H;              ///< d_v x d, this head's slice of the output projection
    Matrix A;              ///< d_s x d_s, post-softmax attention

    std::size_t seq_len() const noexcept { return E.rows(); }
    std::size_t model_dim() const noexcept { return E.cols(); }
    std::size_t head_dim() const noexcept { return Wv.cols(); }
};

inline void validate_shapes(const HeadSnapshot& s) {
    const bool ok = s.E.cols() == s.Wv.rows() && s.Wv.cols() == s.H.rows() && s.H.cols() == s.E.cols() &&
                    s.A.rows() == s.E.rows() && s.A.cols() == s.E.rows() && s.E.rows() > 0;
    if (!ok) {
        throw ShapeError("inconsistent head snapshot shapes: E " + s.E.shape() + ", Wv " + s.Wv.shape() +
                         ", H " + s.H.shape() + ", A " + s.A.shape());
    }
}

/// Shapes plus the attention invariant (rows on the simplex within 1e-10).
inline void validate(const HeadSnapshot& s) {
    validate_shapes(s);
    for (std::size_t i = 0; i < s.A.rows(); ++i) {
        double sum = 0.0;
        for (double v : s.A.row(i)) {
            if (v < 0.0) throw InvalidArgument("attention row " + std::to_string(i) + " has a negative entry");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-10) {
            throw InvalidArgument("attention row " + std::to_string(i) + " does not sum to 1");
        }
    }
}

/// T = (E · Wv) · H, d_s x d.
inline Matrix compute_T(const HeadSnapshot& s) {
    validate_shapes(s);
    return matmul(matmul(s.E, s.Wv), s.H);
}

inline std::size_t rank_upper_bound(std::size_t seq_len, std::size_t model_dim, std::size_t head_dim) {
    return std::min({seq_len, model_dim, head_dim});
}

struct NullspaceReport {
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t d_s = 0;
    std::size_t d = 0;
    std::size_t d_v = 0;
    std::size_t rank_T = 0;
    std::size_t dim_LN_T = 0;
    std::size_t dim_LN_T1 = 0;
    std::size_t lower_bound_LN_T = 0;
    std::size_t lower_bound_LN_T1 = 0;
    double s1 = 0.0; ///< largest singular value of T
};

/// Orthonormal rows spanning LN([T, 1]): every row annihilates T and sums to 0.
inline Matrix augmented_nullspace_basis(const Matrix& T, std::optional<double> tol = std::nullopt) {
    return left_nullspace_basis(append_ones_column(T), tol);
}

inline NullspaceReport nullspace_report(const HeadSnapshot& s, std::optional<double> tol = std::nullopt) {
    validate(s);
    const Matrix T = compute_T(s);
    const std::vector<double> sv = singular_values(T);
    const double s1 = sv.front();
    NullspaceReport r;
    r.layer = s.layer;
    r.head = s.head;
    r.d_s = s.seq_len();
    r.d = s.model_dim();
    r.d_v = s.head_dim();
    r.s1 = s1;
    r.rank_T = rank_from_singular_values(sv,
                                         tol.value_or(default_rank_tolerance(T.rows(), T.cols(), s1)));
    r.dim_LN_T = r.d_s - r.rank_T;
    r.dim_LN_T1 = r.d_s - numerical_rank(append_ones_column(T), tol);
    r.lower_bound_LN_T = r.d_s > r.d_v ? r.d_s - r.d_v : 0;
    r.lower_bound_LN_T1 = r.d_s > r.d_v + 1 ? r.d_s - r.d_v - 1 : 0;
    return r;
}

} // namespace attnid

#endif // ATTNID_HEAD_GEOMETRY_HPP
