// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNID_EFFECTIVE_ATTENTION_HPP
#define ATTNID_EFFECTIVE_ATTENTION_HPP

#include "attnid/errors.hpp"
#include "attnid/head_geometry.hpp"
#include "attnid/linalg.hpp"
#include "attnid/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace attnid {

/// A = A_perp + A_par, where A_par holds the rows' components in LN(T).
struct AttentionDecomposition {
    std::size_t layer = 0;
    std::size_t head = 0;
    Matrix A;
    Matrix A_perp; ///< effective attention
    Matrix A_par;  ///< null attention, annihilated by T
};

namespace detail {

/// Split a into (x, y) with x = fl(a - p) and y = fl(a - x). Whenever x lies
/// in [a/2, 2a] (in particular |p| <= |a|/2) the second subtraction is exact
/// and fl(x + y) == a. When both parts outgrow a by a binade no pair of
/// doubles near (a - p, p) sums to a; the result is then off by at most
/// half an ulp of the larger part.
inline std::pair<double, double> exact_split(double a, double p) {
    const double x = a - p;
    return {x, a - x};
}

} // namespace detail

/// Project the attention rows onto LN(T) and subtract.
///
/// A_perp = fl(A - P) for the projection P, and A_par = fl(A - A_perp), which
/// equals P up to rounding and makes A_perp + A_par reproduce A bit-for-bit
/// wherever that is representable (see exact_split). When LN(T) is trivial
/// A_perp is A itself.
inline AttentionDecomposition decompose(const HeadSnapshot& s, std::optional<double> tol = std::nullopt) {
    validate(s);
    AttentionDecomposition d{s.layer, s.head, s.A, s.A, Matrix(s.A.rows(), s.A.cols())};
    const Matrix basis = left_nullspace_basis(compute_T(s), tol);
    if (basis.rows() == 0) return d;
    const Matrix proj = project_rows_onto_subspace(s.A, basis);
    for (std::size_t i = 0; i < s.A.size(); ++i) {
        auto [perp, par] = detail::exact_split(s.A.data()[i], proj.data()[i]);
        d.A_perp.data()[i] = perp;
        d.A_par.data()[i] = par;
    }
    return d;
}

inline std::vector<AttentionDecomposition> decompose_all(std::span<const HeadSnapshot> snaps,
                                                         std::optional<double> tol = std::nullopt) {
    std::vector<AttentionDecomposition> out;
    out.reserve(snaps.size());
    for (const auto& s : snaps) out.push_back(decompose(s, tol));
    return out;
}

struct CorrelationRow {
    std::size_t d_s = 0;
    std::size_t n = 0; ///< decompositions with a defined correlation
    double mean_pearson = 0.0;
};

struct CorrelationProfile {
    std::vector<CorrelationRow> rows;
    /// Decompositions whose raw or effective attention is constant, making
    /// the correlation undefined: (layer, head, d_s).
    struct Flagged {
        std::size_t index;
        std::size_t layer;
        std::size_t head;
        std::size_t d_s;
    };
    std::vector<Flagged> undefined;
};

/// Pearson(A, A_perp) over flattened matrices; per decomposition or averaged
/// per exact sequence length.
inline CorrelationProfile correlation_profile(std::span<const AttentionDecomposition> decomps,
                                              bool group_by_length) {
    if (decomps.empty()) throw InvalidArgument("correlation_profile needs at least one decomposition");
    CorrelationProfile prof;
    std::map<std::size_t, std::pair<double, std::size_t>> buckets;
    for (std::size_t k = 0; k < decomps.size(); ++k) {
        const auto& d = decomps[k];
        const std::size_t len = d.A.rows();
        double r = 0.0;
        try {
            r = pearson(d.A.data(), d.A_perp.data());
        } catch (const UndefinedCorrelation&) {
            prof.undefined.push_back({k, d.layer, d.head, len});
            if (group_by_length) buckets.try_emplace(len, 0.0, 0);
            else prof.rows.push_back({len, 0, std::nan("")});
            continue;
        }
        if (group_by_length) {
            auto& b = buckets[len];
            b.first += r;
            b.second += 1;
        } else {
            prof.rows.push_back({len, 1, r});
        }
    }
    if (group_by_length) {
        for (const auto& [len, acc] : buckets) {
            prof.rows.push_back({len, acc.second,
                                 acc.second == 0 ? std::nan("") : acc.first / static_cast<double>(acc.second)});
        }
    }
    return prof;
}

struct GroupMean {
    std::string group;
    std::optional<double> mean; ///< absent when the group has no member positions
    std::size_t members = 0;
};

/// Mean weight received by each token group: average of M[r, c] over all
/// rows r and member columns c. Groups listed in `expected` but without
/// members are reported as absent.
inline std::vector<GroupMean> token_group_aggregate(const Matrix& m, std::span<const std::string> labels,
                                                    std::span<const std::string> expected = {}) {
    if (labels.size() != m.cols()) {
        throw ShapeError("token_group_aggregate: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(m.cols()) + " positions");
    }
    std::vector<std::string> order(expected.begin(), expected.end());
    for (const auto& l : labels)
        if (std::find(order.begin(), order.end(), l) == order.end()) order.push_back(l);

    std::vector<GroupMean> out;
    for (const auto& g : order) {
        double sum = 0.0;
        std::size_t members = 0;
        for (std::size_t c = 0; c < m.cols(); ++c) {
            if (labels[c] != g) continue;
            ++members;
            for (std::size_t r = 0; r < m.rows(); ++r) sum += m(r, c);
        }
        GroupMean gm{g, std::nullopt, members};
        if (members > 0 && m.rows() > 0) gm.mean = sum / static_cast<double>(members * m.rows());
        out.push_back(std::move(gm));
    }
    return out;
}

struct AttentionTriplet {
    Matrix raw;
    Matrix effective;
    Matrix null;
};

inline AttentionTriplet dump_triplet(const AttentionDecomposition& d) { return {d.A, d.A_perp, d.A_par}; }

} // namespace attnid

#endif // ATTNID_EFFECTIVE_ATTENTION_HPP
