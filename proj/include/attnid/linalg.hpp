// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNID_LINALG_HPP
#define ATTNID_LINALG_HPP

#include "attnid/errors.hpp"
#include "attnid/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace attnid {

struct SvdResult {
    Matrix U;                            ///< m x r, orthonormal columns
    std::vector<double> singular_values; ///< r values, nonincreasing
    Matrix Vt;                           ///< r x n, orthonormal rows
};

inline constexpr std::size_t kJacobiMaxSweeps = 100;

namespace detail {

using Columns = std::vector<std::vector<double>>;

/// Householder completion: given k orthonormal vectors of length m, return
/// m - k further unit vectors so that together they form an orthonormal
/// basis of R^m.
inline Columns orthonormal_complement(const Columns& q, std::size_t m) {
    const std::size_t k = q.size();
    Columns work = q;
    Columns reflectors;
    reflectors.reserve(k);
    for (std::size_t j = 0; j < k && j < m; ++j) {
        std::vector<double> v(m, 0.0);
        double norm = 0.0;
        for (std::size_t i = j; i < m; ++i) norm += work[j][i] * work[j][i];
        norm = std::sqrt(norm);
        if (norm == 0.0) {
            reflectors.push_back(std::move(v));
            continue;
        }
        const double alpha = work[j][j] > 0.0 ? -norm : norm;
        for (std::size_t i = j; i < m; ++i) v[i] = work[j][i];
        v[j] -= alpha;
        const double vnorm = norm2(std::span<const double>(v).subspan(j));
        for (std::size_t i = j; i < m; ++i) v[i] /= vnorm;
        for (std::size_t c = j; c < k; ++c) {
            double s = 0.0;
            for (std::size_t i = j; i < m; ++i) s += v[i] * work[c][i];
            for (std::size_t i = j; i < m; ++i) work[c][i] -= 2.0 * s * v[i];
        }
        reflectors.push_back(std::move(v));
    }
    Columns out;
    for (std::size_t c = reflectors.size(); c < m; ++c) {
        std::vector<double> y(m, 0.0);
        y[c] = 1.0;
        for (std::size_t j = reflectors.size(); j-- > 0;) {
            const auto& v = reflectors[j];
            const double s = dot(v, y);
            if (s == 0.0) continue;
            for (std::size_t i = 0; i < m; ++i) y[i] -= 2.0 * s * v[i];
        }
        out.push_back(std::move(y));
    }
    return out;
}

inline double dot_unrolled(const double* a, const double* b, std::size_t n) noexcept {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

/// One-sided (Hestenes) Jacobi on a matrix with rows >= cols. Column norms
/// are updated alongside each rotation and recomputed at every sweep start.
inline SvdResult jacobi_svd_tall(const Matrix& a, bool want_u, bool want_v) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    Columns w(n, std::vector<double>(m));
    Columns v(want_v ? n : 0, std::vector<double>(n, 0.0));
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < m; ++i) w[j][i] = a(i, j);
        if (want_v) v[j][j] = 1.0;
    }

    const double tol = static_cast<double>(m) * std::numeric_limits<double>::epsilon();
    std::vector<double> sq(n);
    bool converged = n < 2;
    for (std::size_t sweep = 0; sweep < kJacobiMaxSweeps && !converged; ++sweep) {
        for (std::size_t j = 0; j < n; ++j) sq[j] = dot_unrolled(w[j].data(), w[j].data(), m);
        std::size_t rotations = 0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double* wp = w[p].data();
                double* wq = w[q].data();
                const double gamma = dot_unrolled(wp, wq, m);
                const double alpha = sq[p];
                const double beta = sq[q];
                if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                ++rotations;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double x = wp[i];
                    const double y = wq[i];
                    wp[i] = c * x - s * y;
                    wq[i] = s * x + c * y;
                }
                sq[p] = alpha - t * gamma;
                sq[q] = beta + t * gamma;
                if (want_v) {
                    double* vp = v[p].data();
                    double* vq = v[q].data();
                    for (std::size_t i = 0; i < n; ++i) {
                        const double x = vp[i];
                        const double y = vq[i];
                        vp[i] = c * x - s * y;
                        vq[i] = s * x + c * y;
                    }
                }
            }
        }
        converged = rotations == 0;
    }
    if (!converged) {
        throw ConvergenceError("one-sided Jacobi SVD did not converge within " +
                               std::to_string(kJacobiMaxSweeps) + " sweeps for a " + a.shape() + " matrix");
    }

    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) norms[j] = norm2(w[j]);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    const double smax = n > 0 ? norms[order[0]] : 0.0;
    SvdResult r{Matrix(want_u ? m : 0, want_u ? n : 0), std::vector<double>(n), Matrix(want_v ? n : 0, want_v ? n : 0)};
    for (std::size_t k = 0; k < n; ++k) {
        r.singular_values[k] = norms[order[k]];
        if (want_v)
            for (std::size_t i = 0; i < n; ++i) r.Vt(k, i) = v[order[k]][i];
    }
    if (!want_u) return r;
    Columns ucols;
    std::size_t usable = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        const double s = norms[j];
        if (s > 0.0 && s > smax * 1e-100) {
            std::vector<double> u(m);
            for (std::size_t i = 0; i < m; ++i) u[i] = w[j][i] / s;
            ucols.push_back(std::move(u));
            ++usable;
        }
    }
    if (usable < n) {
        Columns extra = orthonormal_complement(ucols, m);
        for (std::size_t k = 0; usable + k < n; ++k) ucols.push_back(std::move(extra[k]));
    }
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < m; ++i) r.U(i, k) = ucols[k][i];
    return r;
}

/// SVD with optional factors; unrequested factors come back empty.
inline SvdResult svd_parts(const Matrix& m, bool want_u, bool want_v) {
    if (m.empty()) throw InvalidArgument("svd of an empty matrix");
    if (m.rows() >= m.cols()) return jacobi_svd_tall(m, want_u, want_v);
    SvdResult t = jacobi_svd_tall(transpose(m), want_v, want_u);
    return SvdResult{want_u ? transpose(t.Vt) : Matrix(), std::move(t.singular_values),
                     want_v ? transpose(t.U) : Matrix()};
}

} // namespace detail

/// Thin SVD M = U diag(s) Vt by one-sided Jacobi. Deterministic.
inline SvdResult svd(const Matrix& m) { return detail::svd_parts(m, true, true); }

/// Singular values only, nonincreasing.
inline std::vector<double> singular_values(const Matrix& m) {
    return detail::svd_parts(m, false, false).singular_values;
}

/// max(m, n) * eps * s1, the usual numerical-rank cut-off.
inline double default_rank_tolerance(std::size_t rows, std::size_t cols, double largest_singular_value) {
    return static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() *
           largest_singular_value;
}

inline std::size_t rank_from_singular_values(std::span<const double> s, double tol) {
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [tol](double x) { return x > tol; }));
}

inline std::size_t numerical_rank(const Matrix& m, std::optional<double> tol = std::nullopt) {
    if (m.empty()) return 0;
    const std::vector<double> s = singular_values(m);
    return rank_from_singular_values(s, tol.value_or(default_rank_tolerance(m.rows(), m.cols(), s.front())));
}

/// Orthonormal rows spanning LN(M) = {x : x M = 0}; shape (m - rank) x m.
inline Matrix left_nullspace_basis(const Matrix& m, std::optional<double> tol = std::nullopt) {
    if (m.rows() == 0) return Matrix(0, 0);
    std::size_t rank = 0;
    detail::Columns range;
    if (!m.empty()) {
        const SvdResult r = detail::svd_parts(m, true, false);
        const double s1 = r.singular_values.front();
        rank = rank_from_singular_values(r.singular_values,
                                         tol.value_or(default_rank_tolerance(m.rows(), m.cols(), s1)));
        range.assign(rank, std::vector<double>(m.rows()));
        for (std::size_t k = 0; k < rank; ++k)
            for (std::size_t i = 0; i < m.rows(); ++i) range[k][i] = r.U(i, k);
    }
    const detail::Columns comp = detail::orthonormal_complement(range, m.rows());
    Matrix basis(comp.size(), m.rows());
    for (std::size_t k = 0; k < comp.size(); ++k)
        std::copy(comp[k].begin(), comp[k].end(), basis.row(k).begin());
    return basis;
}

/// Row i of the result is the orthogonal projection of A's row i onto
/// span(basis rows). `basis` must have orthonormal rows.
inline Matrix project_rows_onto_subspace(const Matrix& a, const Matrix& basis) {
    if (basis.rows() == 0) return Matrix(a.rows(), a.cols());
    if (basis.cols() != a.cols()) {
        throw ShapeError("projection basis is " + basis.shape() + " but rows have length " +
                         std::to_string(a.cols()));
    }
    const Matrix gram = matmul_nt(basis, basis);
    if (max_abs_diff(gram, Matrix::identity(basis.rows())) > 1e-8) {
        throw InvalidArgument("projection basis rows are not orthonormal");
    }
    return matmul(matmul_nt(a, basis), basis);
}

/// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto in = m.row(i);
        auto o = out.row(i);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (double& x : o) x /= sum;
    }
    return out;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("pearson: vectors differ in length");
    if (a.size() < 2) throw InvalidArgument("pearson: need at least two samples");
    // A summed mean of equal values need not equal them, so test constancy directly.
    auto constant = [](std::span<const double> v) {
        return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
    };
    if (constant(a) || constant(b)) throw UndefinedCorrelation("pearson: constant input, correlation undefined");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) throw UndefinedCorrelation("pearson: zero variance, correlation undefined");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

} // namespace attnid

#endif // ATTNID_LINALG_HPP
