// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNID_ATTRIBUTION_HPP
#define ATTNID_ATTRIBUTION_HPP

#include "attnid/errors.hpp"
#include "attnid/matrix.hpp"
#include "attnid/toy_transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace attnid {

/// Relative input contributions c[l][j][i] of input x_i to hidden e_j^l.
///
/// Slices are stored for layers 1..L; a depth-0 model yields the single
/// pass-through slice for layer 0.
struct AttributionTensor {
    std::vector<std::size_t> layer_ids;
    std::size_t d_s = 0;
    std::vector<double> c; ///< [slice][target][source]

    AttributionTensor() = default;
    AttributionTensor(std::vector<std::size_t> layers, std::size_t seq_len)
        : layer_ids(std::move(layers)), d_s(seq_len), c(layer_ids.size() * seq_len * seq_len, 0.0) {}

    std::size_t slices() const noexcept { return layer_ids.size(); }

    double& at(std::size_t slice, std::size_t target, std::size_t source) noexcept {
        return c[(slice * d_s + target) * d_s + source];
    }
    double at(std::size_t slice, std::size_t target, std::size_t source) const noexcept {
        return c[(slice * d_s + target) * d_s + source];
    }
    std::span<const double> row(std::size_t slice, std::size_t target) const noexcept {
        return {c.data() + (slice * d_s + target) * d_s, d_s};
    }

    /// Slice index holding layer `layer`.
    std::size_t slice_of(std::size_t layer) const {
        const auto it = std::find(layer_ids.begin(), layer_ids.end(), layer);
        if (it == layer_ids.end()) throw InvalidArgument("layer " + std::to_string(layer) + " not in attribution tensor");
        return static_cast<std::size_t>(it - layer_ids.begin());
    }
};

namespace detail {

/// c_i = ||block_i|| / sum_k ||block_k|| over the d x d blocks of a Jacobian
/// row block (Frobenius norm of the flattened block).
inline void normalize_gradient_norms(const Matrix& jac, std::size_t d, std::size_t layer, std::size_t target,
                                     std::span<double> out) {
    const std::size_t n = jac.cols() / d;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < jac.rows(); ++k)
            for (std::size_t m = 0; m < d; ++m) {
                const double v = jac(k, i * d + m);
                s += v * v;
            }
        out[i] = std::sqrt(s);
        total += out[i];
    }
    if (!(total > 0.0)) throw DegenerateAttribution(layer, target);
    for (double& v : out) v /= total;
}

} // namespace detail

/// Hidden Token Attribution for every (layer, target) pair.
inline AttributionTensor attribute(const Model& model, std::span<const std::size_t> tokens,
                                   std::span<const std::size_t> segments, const DiagnosticHooks& hooks = {}) {
    const Matrix x = embed(model, tokens, segments);
    const auto st = detail::run_forward(model, x, hooks, false);
    const std::size_t depth = model.layers.size();
    std::vector<std::size_t> ids;
    if (depth == 0) ids.push_back(0);
    for (std::size_t l = 1; l <= depth; ++l) ids.push_back(l);
    AttributionTensor at(ids, x.rows());
    for (std::size_t s = 0; s < ids.size(); ++s) {
        for (std::size_t j = 0; j < at.d_s; ++j) {
            const Matrix jac = detail::jacobian_from_state(model, st, ids[s], j, hooks);
            detail::normalize_gradient_norms(jac, model.config.dim, ids[s], j,
                                             std::span<double>(at.c).subspan((s * at.d_s + j) * at.d_s, at.d_s));
        }
    }
    return at;
}

inline AttributionTensor attribute(const Model& model, const TokenSequence& seq, const DiagnosticHooks& hooks = {}) {
    return attribute(model, seq.tokens, seq.segments, hooks);
}

// ---------------------------------------------------------------------------
// Statistics

/// Linear-interpolation quantile of sorted data (numpy's default rule).
inline double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) return std::nan("");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct BoxStats {
    std::size_t n = 0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double whisker_low = 0.0;  ///< smallest sample >= q1 - 1.5 IQR
    double whisker_high = 0.0; ///< largest sample <= q3 + 1.5 IQR
};

inline BoxStats box_stats(std::vector<double> v) {
    BoxStats b;
    b.n = v.size();
    if (v.empty()) {
        b.median = b.q1 = b.q3 = b.whisker_low = b.whisker_high = std::nan("");
        return b;
    }
    std::sort(v.begin(), v.end());
    b.median = quantile_sorted(v, 0.5);
    b.q1 = quantile_sorted(v, 0.25);
    b.q3 = quantile_sorted(v, 0.75);
    const double iqr = b.q3 - b.q1;
    const double lo = b.q1 - 1.5 * iqr;
    const double hi = b.q3 + 1.5 * iqr;
    b.whisker_low = *std::find_if(v.begin(), v.end(), [lo](double x) { return x >= lo; });
    b.whisker_high = *std::find_if(v.rbegin(), v.rend(), [hi](double x) { return x <= hi; });
    return b;
}

struct SelfContributionRow {
    std::size_t layer = 0;
    std::string group; ///< "all" or a user label
    BoxStats stats;
};

/// Box-plot statistics of c[l][j][j] per layer, pooled over tensors.
/// `labels`, when non-empty, holds one label vector per tensor and adds a
/// per-label breakdown after the "all" rows.
inline std::vector<SelfContributionRow> self_contribution_stats(
    std::span<const AttributionTensor> tensors, std::span<const std::vector<std::string>> labels = {}) {
    if (tensors.empty()) return {};
    if (!labels.empty() && labels.size() != tensors.size()) {
        throw InvalidArgument("self_contribution_stats: need one label vector per tensor");
    }
    std::vector<SelfContributionRow> out;
    const auto& ids = tensors.front().layer_ids;
    for (std::size_t s = 0; s < ids.size(); ++s) {
        std::vector<double> all;
        for (const auto& t : tensors)
            for (std::size_t j = 0; j < t.d_s; ++j) all.push_back(t.at(s, j, j));
        out.push_back({ids[s], "all", box_stats(std::move(all))});
    }
    if (labels.empty()) return out;
    std::vector<std::string> groups;
    for (const auto& lv : labels)
        for (const auto& l : lv)
            if (std::find(groups.begin(), groups.end(), l) == groups.end()) groups.push_back(l);
    for (std::size_t s = 0; s < ids.size(); ++s) {
        for (const auto& g : groups) {
            std::vector<double> vals;
            for (std::size_t t = 0; t < tensors.size(); ++t) {
                if (labels[t].size() != tensors[t].d_s) throw InvalidArgument("label count does not match sequence length");
                for (std::size_t j = 0; j < tensors[t].d_s; ++j)
                    if (labels[t][j] == g) vals.push_back(tensors[t].at(s, j, j));
            }
            out.push_back({ids[s], g, box_stats(std::move(vals))});
        }
    }
    return out;
}

inline std::vector<SelfContributionRow> self_contribution_stats(const AttributionTensor& t) {
    return self_contribution_stats(std::span<const AttributionTensor>(&t, 1));
}

struct LayerValue {
    std::size_t layer = 0;
    double value = 0.0;
};

/// Fraction of positions whose own input is not the largest contributor.
/// A position counts as self-dominated when no other input strictly exceeds
/// its own contribution, so ties favour the diagonal.
inline std::vector<LayerValue> non_max_fraction(std::span<const AttributionTensor> tensors) {
    std::vector<LayerValue> out;
    if (tensors.empty()) return out;
    const auto& ids = tensors.front().layer_ids;
    for (std::size_t s = 0; s < ids.size(); ++s) {
        std::size_t total = 0, non_max = 0;
        for (const auto& t : tensors) {
            for (std::size_t j = 0; j < t.d_s; ++j) {
                const auto r = t.row(s, j);
                const double self = r[j];
                ++total;
                if (std::any_of(r.begin(), r.end(), [self](double v) { return v > self; })) ++non_max;
            }
        }
        out.push_back({ids[s], total == 0 ? 0.0 : static_cast<double>(non_max) / static_cast<double>(total)});
    }
    return out;
}

inline std::vector<LayerValue> non_max_fraction(const AttributionTensor& t) {
    return non_max_fraction(std::span<const AttributionTensor>(&t, 1));
}

struct OffsetGroup {
    std::string name;
    std::size_t first = 1;
    std::size_t last = 1; ///< inclusive; SIZE_MAX for "and beyond"
};

inline std::vector<OffsetGroup> default_offset_groups() {
    return {{"1st", 1, 1},      {"2nd", 2, 2},       {"3rd", 3, 3},
            {"4th-5th", 4, 5},  {"6th-10th", 6, 10}, {"11th+", 11, std::numeric_limits<std::size_t>::max()}};
}

struct LocalityProfile {
    std::vector<OffsetGroup> groups;
    std::vector<std::size_t> layers;
    /// share[layer slice][group]; each group's shares sum to 1 over layers.
    /// Absent when no target has a neighbour in the group or the group's
    /// contribution is zero at every layer.
    std::vector<std::vector<std::optional<double>>> share;
    /// Mean neighbour contribution before cross-layer normalization.
    std::vector<std::vector<std::optional<double>>> mean_contribution;
    /// Number of targets that had at least one neighbour in the group.
    std::vector<std::size_t> target_counts;

    struct OffsetCurve {
        std::size_t layer = 0;
        std::vector<long> offsets;
        std::vector<double> total; ///< normalized to sum to 1
    };
    std::vector<OffsetCurve> curves; ///< first, middle and last layer
};

/// Neighbour contributions grouped by distance.
///
/// For every target j the contributions of inputs j +- o with o in a group
/// are averaged (missing neighbours are skipped), then averaged over targets
/// and normalized per group across layers.
inline LocalityProfile locality_profile(std::span<const AttributionTensor> tensors,
                                        std::vector<OffsetGroup> groups = default_offset_groups()) {
    LocalityProfile p;
    p.groups = std::move(groups);
    if (tensors.empty()) return p;
    p.layers = tensors.front().layer_ids;
    const std::size_t ns = p.layers.size();
    const std::size_t ng = p.groups.size();
    std::vector<std::vector<double>> sums(ns, std::vector<double>(ng, 0.0));
    p.target_counts.assign(ng, 0);
    for (const auto& t : tensors) {
        if (t.layer_ids != p.layers) throw InvalidArgument("locality_profile: tensors cover different layers");
        for (std::size_t g = 0; g < ng; ++g) {
            const auto& grp = p.groups[g];
            for (std::size_t j = 0; j < t.d_s; ++j) {
                std::vector<std::size_t> members;
                for (std::size_t o = grp.first; o <= grp.last && o < t.d_s; ++o) {
                    if (j >= o) members.push_back(j - o);
                    if (j + o < t.d_s) members.push_back(j + o);
                }
                if (members.empty()) continue;
                ++p.target_counts[g];
                for (std::size_t s = 0; s < ns; ++s) {
                    double acc = 0.0;
                    for (std::size_t i : members) acc += t.at(s, j, i);
                    sums[s][g] += acc / static_cast<double>(members.size());
                }
            }
        }
    }
    p.share.assign(ns, std::vector<std::optional<double>>(ng));
    p.mean_contribution.assign(ns, std::vector<std::optional<double>>(ng));
    for (std::size_t g = 0; g < ng; ++g) {
        if (p.target_counts[g] == 0) continue;
        double total = 0.0;
        for (std::size_t s = 0; s < ns; ++s) {
            const double mean = sums[s][g] / static_cast<double>(p.target_counts[g]);
            p.mean_contribution[s][g] = mean;
            total += mean;
        }
        if (!(total > 0.0)) continue;
        for (std::size_t s = 0; s < ns; ++s) p.share[s][g] = *p.mean_contribution[s][g] / total;
    }

    std::vector<std::size_t> picks{p.layers.front(), p.layers[(ns - 1) / 2], p.layers.back()};
    if (p.layers.front() >= 1) {
        const std::size_t depth = p.layers.back();
        picks = {p.layers.front(), (depth + 1) / 2, depth};
    }
    picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
    std::size_t max_len = 0;
    for (const auto& t : tensors) max_len = std::max(max_len, t.d_s);
    for (std::size_t layer : picks) {
        LocalityProfile::OffsetCurve curve;
        curve.layer = layer;
        const long span_len = static_cast<long>(max_len);
        double grand = 0.0;
        for (long o = -(span_len - 1); o <= span_len - 1; ++o) {
            double acc = 0.0;
            for (const auto& t : tensors) {
                const std::size_t s = t.slice_of(layer);
                for (std::size_t j = 0; j < t.d_s; ++j) {
                    const long i = static_cast<long>(j) + o;
                    if (i >= 0 && i < static_cast<long>(t.d_s)) acc += t.at(s, j, static_cast<std::size_t>(i));
                }
            }
            curve.offsets.push_back(o);
            curve.total.push_back(acc);
            grand += acc;
        }
        if (grand > 0.0)
            for (double& v : curve.total) v /= grand;
        p.curves.push_back(std::move(curve));
    }
    return p;
}

inline LocalityProfile locality_profile(const AttributionTensor& t) {
    return locality_profile(std::span<const AttributionTensor>(&t, 1));
}

/// Contribution rows c[.][j][.] for one target across all layers.
inline Matrix track_token(const AttributionTensor& t, std::size_t target) {
    if (target >= t.d_s) throw InvalidArgument("track_token: position " + std::to_string(target) + " out of range");
    Matrix m(t.slices(), t.d_s);
    for (std::size_t s = 0; s < t.slices(); ++s) {
        const auto r = t.row(s, target);
        std::copy(r.begin(), r.end(), m.row(s).begin());
    }
    return m;
}

} // namespace attnid

#endif // ATTNID_ATTRIBUTION_HPP
