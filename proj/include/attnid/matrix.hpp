// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNID_MATRIX_HPP
#define ATTNID_MATRIX_HPP

#include "attnid/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace attnid {

/// Dense row-major binary64 matrix.
///
/// Constructing from external data rejects NaN/Inf; element writes through
/// operator() are unchecked.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                             shape_string(rows_, cols_));
        }
        for (double v : data_) {
            if (!std::isfinite(v)) throw InvalidArgument("matrix entries must be finite");
        }
    }

    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ == 0 ? 0 : rows.begin()->size();
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw ShapeError("ragged initializer for Matrix");
            for (double v : r) {
                if (!std::isfinite(v)) throw InvalidArgument("matrix entries must be finite");
                data_.push_back(v);
            }
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix constant(std::size_t rows, std::size_t cols, double value) {
        Matrix m(rows, cols);
        std::fill(m.data_.begin(), m.data_.end(), value);
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    std::string shape() const { return shape_string(rows_, cols_); }

    static std::string shape_string(std::size_t r, std::size_t c) {
        return std::to_string(r) + "x" + std::to_string(c);
    }

    Matrix& operator+=(const Matrix& o) {
        require_same_shape(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    Matrix& operator-=(const Matrix& o) {
        require_same_shape(o, "-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }

    Matrix& operator*=(double s) noexcept {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
    friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
    friend Matrix operator*(Matrix a, double s) { return a *= s; }
    friend Matrix operator*(double s, Matrix a) { return a *= s; }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

    void fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

private:
    void require_same_shape(const Matrix& o, const char* op) const {
        if (rows_ != o.rows_ || cols_ != o.cols_) {
            throw ShapeError(std::string("shape mismatch in ") + op + ": " + shape() + " vs " + o.shape());
        }
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

namespace detail {

/// c[j] += sum_k w[k] * b_k[j] over four rows at once. Each c[j] still
/// accumulates in ascending k, so the result matches the one-row loop.
inline void accumulate4(double* __restrict c, const double* __restrict b0, const double* __restrict b1,
                        const double* __restrict b2, const double* __restrict b3, double w0, double w1, double w2,
                        double w3, std::size_t n) noexcept {
    for (std::size_t j = 0; j < n; ++j) c[j] = (((c[j] + w0 * b0[j]) + w1 * b1[j]) + w2 * b2[j]) + w3 * b3[j];
}

inline void accumulate1(double* __restrict c, const double* __restrict b, double w, std::size_t n) noexcept {
    for (std::size_t j = 0; j < n; ++j) c[j] += w * b[j];
}

/// c_i += sum_k a(i, k) * b_k where a(i, k) = ap[i * si + k * sk]. All-zero
/// groups of coefficients are skipped, which keeps sparse cotangents cheap.
inline void gemm_rows(double* __restrict cp, const double* __restrict ap, std::size_t si, std::size_t sk,
                      const double* __restrict bp, std::size_t rows, std::size_t inner, std::size_t n) noexcept {
    for (std::size_t i = 0; i < rows; ++i) {
        double* crow = cp + i * n;
        const double* arow = ap + i * si;
        std::size_t k = 0;
        for (; k + 4 <= inner; k += 4) {
            const double w0 = arow[k * sk], w1 = arow[(k + 1) * sk], w2 = arow[(k + 2) * sk], w3 = arow[(k + 3) * sk];
            if (w0 == 0.0 && w1 == 0.0 && w2 == 0.0 && w3 == 0.0) continue;
            accumulate4(crow, bp + k * n, bp + (k + 1) * n, bp + (k + 2) * n, bp + (k + 3) * n, w0, w1, w2, w3, n);
        }
        for (; k < inner; ++k) {
            const double w = arow[k * sk];
            if (w != 0.0) accumulate1(crow, bp + k * n, w, n);
        }
    }
}

} // namespace detail

/// a · b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul shape mismatch: " + a.shape() + " * " + b.shape());
    }
    Matrix c(a.rows(), b.cols());
    detail::gemm_rows(c.data().data(), a.data().data(), a.cols(), 1, b.data().data(), a.rows(), a.cols(), b.cols());
    return c;
}

/// a · bᵀ, summing over k in the same order as a row-by-row dot product.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt shape mismatch: " + a.shape() + " * " + b.shape() + "^T");
    }
    return matmul(a, transpose(b));
}

/// aᵀ · b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn shape mismatch: " + a.shape() + "^T * " + b.shape());
    }
    Matrix c(a.cols(), b.cols());
    detail::gemm_rows(c.data().data(), a.data().data(), 1, a.cols(), b.data().data(), a.cols(), a.rows(), b.cols());
    return c;
}

inline double max_abs(const Matrix& m) noexcept {
    double r = 0.0;
    for (double v : m.data()) r = std::max(r, std::abs(v));
    return r;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("max_abs_diff shape mismatch: " + a.shape() + " vs " + b.shape());
    }
    double r = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) r = std::max(r, std::abs(a.data()[i] - b.data()[i]));
    return r;
}

/// [m, 1]: m with an all-ones column appended.
inline Matrix append_ones_column(const Matrix& m) {
    Matrix r(m.rows(), m.cols() + 1);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        std::copy(m.row(i).begin(), m.row(i).end(), r.row(i).begin());
        r(i, m.cols()) = 1.0;
    }
    return r;
}

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

inline double frobenius_norm(const Matrix& m) noexcept { return norm2(m.data()); }

} // namespace attnid

#endif // ATTNID_MATRIX_HPP
