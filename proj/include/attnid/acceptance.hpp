// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNID_ACCEPTANCE_HPP
#define ATTNID_ACCEPTANCE_HPP

// The end-to-end acceptance suite behind `attnid verify`. Each criterion
// writes its measurements to a CSV in the output directory (no timings, so
// reruns are byte-comparable) and reports one pass/fail line.

#include "attnid/attribution.hpp"
#include "attnid/bundle.hpp"
#include "attnid/corpus.hpp"
#include "attnid/csv.hpp"
#include "attnid/effective_attention.hpp"
#include "attnid/head_geometry.hpp"
#include "attnid/probe.hpp"
#include "attnid/simplex_alternatives.hpp"
#include "attnid/toy_transformer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace attnid::acceptance {

struct Options {
    std::uint64_t seed = 1;
    std::string out_dir = "acceptance_out";
    double scale = kDefaultPerturbationScale;
    /// Rerun A1-A9 into a sibling directory and compare the CSVs (A10).
    bool determinism_rerun = true;
    /// Restrict to these ids ("A1".."A10"); empty runs everything.
    std::vector<std::string> only;
};

struct Result {
    std::string id;
    std::string title;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
    double limit_seconds = 0.0; ///< 0: no runtime bound
};

/// Toy-model settings of the learned-behaviour criterion.
struct TrendSetup {
    std::size_t seeds = 5;
    std::size_t steps = 2000;
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t dim = 32;
    std::size_t ff_dim = 128;
    std::size_t seq_len = 24;
    std::size_t train_sequences = 2000;
    std::size_t probe_sequences = 200;
    std::size_t attribution_sequences = 8;
    double learn_rate = TrainOptions{}.learn_rate;
    double mask_prob = TrainOptions{}.mask_prob;
    std::size_t warmup_steps = TrainOptions{}.warmup_steps;
    std::size_t batch_size = TrainOptions{}.batch_size;
};

namespace detail {

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

inline Matrix gaussian(std::size_t r, std::size_t c, Philox& rng) {
    Matrix m(r, c);
    for (double& v : m.data()) v = rng.normal();
    return m;
}

/// Full-rank Gaussian factors and a softmax attention over Gaussian logits.
inline HeadSnapshot random_snapshot(std::size_t d_s, std::size_t d, std::size_t d_v, Philox& rng) {
    HeadSnapshot s;
    s.E = gaussian(d_s, d, rng);
    s.Wv = gaussian(d, d_v, rng);
    s.H = gaussian(d_v, d, rng);
    s.A = softmax_rows(gaussian(d_s, d_s, rng));
    return s;
}

inline double largest_singular_value(const Matrix& m) { return singular_values(m).front(); }

inline ModelConfig small_model(std::uint64_t seed, std::size_t layers, std::size_t heads, std::size_t dim,
                               std::size_t max_len) {
    ModelConfig c;
    c.layers = layers;
    c.heads = heads;
    c.dim = dim;
    c.ff_dim = 4 * dim;
    c.vocab = MarkovCorpus(seed).vocab_size();
    c.max_len = max_len;
    c.seed = seed;
    return c;
}

inline void write(const CsvTable& t, const std::string& dir, const std::string& name) {
    emit_csv(t, (std::filesystem::path(dir) / name).string());
}

inline long long ll(std::size_t v) { return static_cast<long long>(v); }

} // namespace detail

// ---------------------------------------------------------------------------

inline Result a1_nullspace_dimension(const Options& opt, const std::string& dir) {
    Result r{"A1", "null-space dimension", false, "", 0.0, 10.0};
    const std::pair<std::size_t, std::size_t> shapes[] = {{10, 4}, {65, 64}, {128, 64}, {32, 8}};
    CsvTable t{{"d_s", "d", "d_v", "trials", "exact_LN_T", "exact_LN_T1"}, {}};
    bool ok = true;
    for (auto [d_s, d_v] : shapes) {
        const std::size_t d = 2 * d_v;
        Philox rng = Philox(opt.seed, 0xA1).substream(d_s * 1000 + d_v);
        std::size_t exact = 0, exact1 = 0;
        for (int k = 0; k < 100; ++k) {
            const NullspaceReport rep = nullspace_report(detail::random_snapshot(d_s, d, d_v, rng));
            exact += rep.dim_LN_T == d_s - d_v;
            exact1 += rep.dim_LN_T1 == d_s - d_v - 1;
        }
        ok = ok && exact == 100 && exact1 == 100;
        t.add({detail::ll(d_s), detail::ll(d), detail::ll(d_v), 100LL, detail::ll(exact), detail::ll(exact1)});
        r.detail += "(" + std::to_string(d_s) + "," + std::to_string(d_v) + "):" + std::to_string(exact) + "/" +
                    std::to_string(exact1) + " ";
    }
    detail::write(t, dir, "a1_nullspace.csv");
    r.pass = ok;
    r.detail += "exact of 100";
    return r;
}

inline Result a2_output_invariance(const Options& opt, const std::string& dir) {
    Result r{"A2", "output invariance of perturbed attention", false, "", 0.0, 30.0};
    const std::pair<std::size_t, std::size_t> shapes[] = {{10, 4}, {65, 64}, {128, 64}, {32, 8}};
    CsvTable t{{"d_s", "d_v", "trials", "identifiable", "max_rel_output_diff", "max_row_sum_err", "min_entry",
                "min_change"},
               {}};
    bool ok = true;
    for (auto [d_s, d_v] : shapes) {
        const std::size_t d = 2 * d_v;
        Philox rng = Philox(opt.seed, 0xA2).substream(d_s * 1000 + d_v);
        double worst_rel = 0.0, worst_sum = 0.0, min_entry = 1.0, min_change = INFINITY;
        std::size_t identifiable = 0;
        for (int k = 0; k < 100; ++k) {
            const HeadSnapshot s = detail::random_snapshot(d_s, d, d_v, rng);
            const Matrix T = compute_T(s);
            const double s1 = detail::largest_singular_value(T);
            Matrix alt = s.A;
            try {
                alt = perturb_attention(s, rng.substream(k), opt.scale).A_alt;
            } catch (const IdentifiableHead&) {
                ++identifiable;
            }
            const EquivalenceReport rep = verify_equivalence(s.A, alt, T, 1e-9 * s1);
            worst_rel = std::max(worst_rel, rep.max_output_diff / s1);
            worst_sum = std::max(worst_sum, rep.max_row_sum_err);
            min_entry = std::min(min_entry, rep.min_entry);
            min_change = std::min(min_change, max_abs_diff(alt, s.A));
        }
        const bool must_change = d_s > d_v + 1;
        const bool shape_ok = worst_rel <= 1e-9 && worst_sum <= 1e-12 && min_entry >= -1e-12 &&
                              (!must_change || (min_change > 0.0 && identifiable == 0));
        ok = ok && shape_ok;
        t.add({detail::ll(d_s), detail::ll(d_v), 100LL, detail::ll(identifiable), worst_rel, worst_sum, min_entry,
               min_change});
        r.detail += "(" + std::to_string(d_s) + "," + std::to_string(d_v) + "):rel=" + detail::fmt(worst_rel) +
                    (must_change ? " changed" : " fixed") + " ";
    }
    detail::write(t, dir, "a2_perturb.csv");
    r.pass = ok;
    return r;
}

inline Result a3_identity_region(const Options& opt, const std::string& dir) {
    Result r{"A3", "effective-attention identity region and decay", false, "", 0.0, 60.0};
    // Part 1: d_s <= d_v leaves nothing to remove.
    bool identity_ok = true;
    Philox rng(opt.seed, 0xA3);
    for (std::size_t d_s = 2; d_s <= 8; ++d_s) {
        for (int k = 0; k < 10; ++k) {
            const auto dec = decompose(detail::random_snapshot(d_s, 16, 8, rng));
            identity_ok = identity_ok && max_abs_diff(dec.A_perp, dec.A) <= 1e-10 &&
                          pearson(dec.A.data(), dec.A_perp.data()) == 1.0;
        }
    }
    // Part 2: toy model, lengths d_v, 2 d_v, 4 d_v. At initialization attention
    // is nearly uniform and the correlation is noise beyond d_v, so each model
    // is briefly trained first.
    const std::size_t d_v = 8;
    const std::size_t lengths[] = {d_v, 2 * d_v, 4 * d_v};
    CsvTable t{{"seed", "d_s", "n", "mean_pearson"}, {}};
    bool decreasing = true;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const std::uint64_t seed = opt.seed + s;
        const MarkovCorpus corpus(seed);
        TrainOptions train;
        train.steps = 500;
        train.seed = seed;
        const Model m =
            train_mlm(init(detail::small_model(seed, 2, 2, 2 * d_v, 4 * d_v)), corpus.generate(1000, 24, seed * 7), train)
                .model;
        std::vector<AttentionDecomposition> decs;
        for (std::size_t len : lengths) {
            for (const auto& seq : corpus.generate(4, len, seed * 31 + len)) {
                const auto tr = forward(m, seq);
                for (const auto& snap : tr.snapshots) decs.push_back(decompose(snap));
            }
        }
        const auto prof = correlation_profile(decs, true);
        double prev = INFINITY;
        for (const auto& row : prof.rows) {
            t.add({detail::ll(seed), detail::ll(row.d_s), detail::ll(row.n), row.mean_pearson});
            decreasing = decreasing && row.n > 0 && row.mean_pearson < prev;
            prev = row.mean_pearson;
        }
        decreasing = decreasing && prof.rows.size() == 3;
        r.detail += detail::fmt(prof.rows.back().mean_pearson) + " ";
    }
    detail::write(t, dir, "a3_correlation.csv");
    r.pass = identity_ok && decreasing;
    r.detail = std::string(identity_ok ? "identity ok" : "identity FAILED") + "; pearson at 4d_v per seed: " + r.detail +
               (decreasing ? "(strictly decreasing)" : "(NOT decreasing)");
    return r;
}

inline Result a4_decomposition_algebra(const Options& opt, const std::string& dir) {
    Result r{"A4", "decomposition algebra", false, "", 0.0, 30.0};
    Philox rng(opt.seed, 0xA4);
    double worst_par = 0.0, worst_perp = 0.0, worst_ulps = 0.0;
    std::size_t inexact_heads = 0, inexact_entries = 0, entries = 0;
    for (int k = 0; k < 1000; ++k) {
        const std::size_t d_v = std::size_t{1} << (1 + rng.below(3)); // 2, 4, 8
        const std::size_t d_s = 2 + rng.below(39);
        const HeadSnapshot s = detail::random_snapshot(d_s, 2 * d_v, d_v, rng);
        const auto dec = decompose(s);
        const Matrix T = compute_T(s);
        const double s1 = detail::largest_singular_value(T);
        worst_par = std::max(worst_par, max_abs(matmul(dec.A_par, T)) / s1);
        worst_perp = std::max(worst_perp, max_abs_diff(matmul(dec.A_perp, T), matmul(s.A, T)) / s1);
        std::size_t bad = 0;
        for (std::size_t i = 0; i < s.A.size(); ++i) {
            const double a = s.A.data()[i];
            const double sum = dec.A_perp.data()[i] + dec.A_par.data()[i];
            if (sum == a) continue;
            ++bad;
            worst_ulps = std::max(worst_ulps, std::abs(sum - a) / (std::nextafter(a, INFINITY) - a));
        }
        entries += s.A.size();
        inexact_entries += bad;
        inexact_heads += bad > 0;
    }
    CsvTable t{{"heads", "max_rel_par_output", "max_rel_perp_output_diff", "entries", "inexact_entries",
                "inexact_heads", "max_sum_error_ulps"},
               {}};
    t.add({1000LL, worst_par, worst_perp, detail::ll(entries), detail::ll(inexact_entries), detail::ll(inexact_heads),
           worst_ulps});
    detail::write(t, dir, "a4_decomposition.csv");
    // The sum check is literal: every entry must reproduce A bit-for-bit.
    r.pass = worst_par <= 1e-9 && worst_perp <= 1e-9 && inexact_entries == 0;
    r.detail = "|A_par T|/s1=" + detail::fmt(worst_par) + " |A_perp T - A T|/s1=" + detail::fmt(worst_perp) +
               "; A_perp + A_par != A in " + std::to_string(inexact_entries) + " of " + std::to_string(entries) +
               " entries (" + std::to_string(inexact_heads) + " heads, worst " + detail::fmt(worst_ulps) + " ulp of A)";
    return r;
}

inline Result a5_jacobian(const Options& opt, const std::string& dir) {
    Result r{"A5", "analytic vs finite-difference Jacobians", false, "", 0.0, 120.0};
    CsvTable t{{"seed", "layer", "target", "max_rel_error"}, {}};
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 3; ++s) {
        const std::uint64_t seed = opt.seed + s;
        const Model m = init(detail::small_model(seed, 2, 2, 16, 8));
        const TokenSequence seq = MarkovCorpus(seed).generate(1, 8, seed).front();
        for (std::size_t l = 1; l <= 2; ++l) {
            for (std::size_t j = 0; j < 8; ++j) {
                const Matrix a = jacobian(m, seq.tokens, seq.segments, l, j);
                const Matrix f = jacobian_fd(m, seq.tokens, seq.segments, l, j, 1e-5);
                const double rel = max_abs_diff(a, f) / max_abs(a);
                worst = std::max(worst, rel);
                t.add({detail::ll(seed), detail::ll(l), detail::ll(j), rel});
            }
        }
    }
    detail::write(t, dir, "a5_jacobian.csv");
    r.pass = worst <= 1e-4;
    r.detail = "max relative error " + detail::fmt(worst) + " (bound 1e-4)";
    return r;
}

namespace detail {

struct SimplexCheck {
    double worst_sum_err = 0.0;
    double min_entry = 1.0;
    void add(const AttributionTensor& t) {
        for (std::size_t s = 0; s < t.slices(); ++s)
            for (std::size_t j = 0; j < t.d_s; ++j) {
                double sum = 0.0;
                for (double v : t.row(s, j)) {
                    sum += v;
                    min_entry = std::min(min_entry, v);
                }
                worst_sum_err = std::max(worst_sum_err, std::abs(sum - 1.0));
            }
    }
    bool ok() const { return worst_sum_err <= 1e-12 && min_entry >= 0.0; }
};

} // namespace detail

inline Result a6_attribution_invariants(const Options& opt, const std::string& dir) {
    Result r{"A6", "attribution invariants", false, "", 0.0, 30.0};
    detail::SimplexCheck check;
    for (std::uint64_t s = 0; s < 3; ++s) {
        const std::uint64_t seed = opt.seed + s;
        const Model m = init(detail::small_model(seed, 2, 2, 16, 12));
        for (const auto& seq : MarkovCorpus(seed).generate(2, 12, seed)) check.add(attribute(m, seq));
    }
    // Identity diagnostics.
    bool diag_ok = true;
    const Model m = init(detail::small_model(opt.seed, 3, 2, 16, 12));
    const TokenSequence seq = MarkovCorpus(opt.seed).generate(1, 10, opt.seed).front();
    DiagnosticHooks hooks;
    hooks.identity_attention = true;
    hooks.zero_ffn = true;
    const AttributionTensor id = attribute(m, seq, hooks);
    check.add(id);
    for (std::size_t s = 0; s < id.slices(); ++s)
        for (std::size_t j = 0; j < id.d_s; ++j) diag_ok = diag_ok && id.at(s, j, j) == 1.0;
    for (const auto& v : non_max_fraction(id)) diag_ok = diag_ok && v.value == 0.0;
    const AttributionTensor flat = attribute(init(detail::small_model(opt.seed, 0, 2, 16, 12)), seq);
    check.add(flat);
    for (std::size_t j = 0; j < flat.d_s; ++j)
        for (std::size_t i = 0; i < flat.d_s; ++i) diag_ok = diag_ok && flat.at(0, j, i) == (i == j ? 1.0 : 0.0);

    CsvTable t{{"max_row_sum_err", "min_entry", "identity_diagnostics_exact"}, {}};
    t.add({check.worst_sum_err, check.min_entry, diag_ok ? 1LL : 0LL});
    detail::write(t, dir, "a6_attribution.csv");
    r.pass = check.ok() && diag_ok;
    r.detail = "row-sum err " + detail::fmt(check.worst_sum_err) + ", min entry " + detail::fmt(check.min_entry) +
               (diag_ok ? ", diagnostics exact" : ", diagnostics FAILED");
    return r;
}

inline Result a7_probe_baselines(const Options& opt, const std::string& dir) {
    Result r{"A7", "probe baselines", false, "", 0.0, 0.0};
    const Model m = init(detail::small_model(opt.seed, 2, 2, 16, 16));
    const MarkovCorpus corpus(opt.seed);
    Philox lens(opt.seed, 0xA7);
    std::vector<ForwardTrace> traces;
    for (std::size_t k = 0; k < 60; ++k) {
        Philox rng = lens.substream(k);
        traces.push_back(forward(m, corpus.sample(6 + rng.below(9), rng)));
    }
    CsvTable t{{"check", "seed", "rate", "reference"}, {}};

    const ProbeDataset input = build_dataset(traces, 0, ProbeTarget::input, 0, opt.seed);
    const double naive = identifiability_rate(ProbeModel::naive(), input, Split::test);
    t.add({std::string("naive_input"), detail::ll(opt.seed), naive, 1.0});
    bool ok = naive == 1.0;

    const ProbeDataset top = build_dataset(traces, 2, ProbeTarget::input, 0, opt.seed);
    const auto idx = top.pairs_in(Split::train);
    std::size_t sentences = 0;
    for (const auto& s : top.sentences) sentences += s.split == Split::train;
    const double mean_len = static_cast<double>(idx.size()) / static_cast<double>(sentences);
    bool chance_ok = true;
    for (std::uint64_t s = 0; s < 5; ++s) {
        Philox rng(opt.seed + s, 0xC0);
        std::vector<double> v(top.dim);
        for (double& x : v) x = rng.normal();
        const double rate = identifiability_rate(ProbeModel::constant(v), top, Split::train);
        chance_ok = chance_ok && std::abs(rate - 1.0 / mean_len) <= 0.5 / mean_len;
        t.add({std::string("constant"), detail::ll(opt.seed + s), rate, 1.0 / mean_len});
    }

    ProbeHyper h;
    h.seed = opt.seed;
    h.max_epochs = 20;
    const ProbeModel p = train_probe(top, ProbeKind::linear, ProbeMetric::cosine, h);
    const double base = identifiability_rate(p, top, Split::test);
    bool invariant = true;
    for (double alpha : {3.7, 0.01, 1e6}) {
        ProbeModel scaled = p;
        scaled.W1 *= alpha;
        const double rate = identifiability_rate(scaled, top, Split::test);
        invariant = invariant && rate == base;
        t.add({std::string("scaled_cosine"), detail::ll(opt.seed), rate, base});
    }
    detail::write(t, dir, "a7_probe_baselines.csv");
    r.pass = ok && chance_ok && invariant;
    r.detail = "naive=" + detail::fmt(naive) + (chance_ok ? ", constant~1/d_s" : ", constant off-chance") +
               (invariant ? ", scaling-invariant" : ", scaling CHANGED rate");
    return r;
}

struct TrendRow {
    std::uint64_t seed = 0;
    double initial_loss = 0.0, final_loss = 0.0;
    double median_self_first = 0.0, median_self_last = 0.0;
    double ptilde_first = 0.0, ptilde_last = 0.0;
    double rate_linear_last = 0.0, rate_naive_last = 0.0;
    double share_first_first = 0.0, share_first_last = 0.0;
};

/// Train one toy model and take every measurement the trend checks need.
inline TrendRow measure_trends(std::uint64_t seed, const TrendSetup& ts) {
    TrendRow row;
    row.seed = seed;
    ModelConfig c;
    c.layers = ts.layers;
    c.heads = ts.heads;
    c.dim = ts.dim;
    c.ff_dim = ts.ff_dim;
    const MarkovCorpus corpus(seed);
    c.vocab = corpus.vocab_size();
    c.max_len = ts.seq_len;
    c.seed = seed;
    const auto train = corpus.generate(ts.train_sequences, ts.seq_len, seed);
    TrainOptions to;
    to.steps = ts.steps;
    to.learn_rate = ts.learn_rate;
    to.mask_prob = ts.mask_prob;
    to.warmup_steps = ts.warmup_steps;
    to.batch_size = ts.batch_size;
    to.seed = seed;
    const TrainResult tr = train_mlm(init(c), train, to);
    const std::size_t w = std::min<std::size_t>(100, tr.losses.size());
    for (std::size_t i = 0; i < w; ++i) {
        row.initial_loss += tr.losses[i] / static_cast<double>(w);
        row.final_loss += tr.losses[tr.losses.size() - 1 - i] / static_cast<double>(w);
    }

    const auto held_out = corpus.generate(ts.probe_sequences, ts.seq_len, seed ^ 0x5EEDULL);
    std::vector<AttributionTensor> at;
    for (std::size_t k = 0; k < ts.attribution_sequences; ++k) at.push_back(attribute(tr.model, held_out[k]));
    const auto self = self_contribution_stats(at);
    row.median_self_first = self.front().stats.median;
    row.median_self_last = self[ts.layers - 1].stats.median;
    const auto nm = non_max_fraction(at);
    row.ptilde_first = nm.front().value;
    row.ptilde_last = nm.back().value;
    const auto loc = locality_profile(at);
    row.share_first_first = loc.share.front()[0].value_or(NAN);
    row.share_first_last = loc.share.back()[0].value_or(NAN);

    std::vector<ForwardTrace> traces;
    for (const auto& s : held_out) traces.push_back(forward(tr.model, s));
    const ProbeDataset ds = build_dataset(traces, ts.layers, ProbeTarget::input, 0, seed);
    ProbeHyper h;
    h.seed = seed;
    const ProbeModel lin = train_probe(ds, ProbeKind::linear, ProbeMetric::cosine, h);
    row.rate_linear_last = identifiability_rate(lin, ds, Split::test);
    row.rate_naive_last = identifiability_rate(ProbeModel::naive(), ds, Split::test);
    return row;
}

inline Result a8_learned_trends(const Options& opt, const std::string& dir, const TrendSetup& ts = {}) {
    Result r{"A8", "learned-behaviour trends on the toy model", false, "", 0.0, 600.0};
    CsvTable t{{"seed", "initial_loss", "final_loss", "median_self_layer1", "median_self_layerL", "ptilde_layer1",
                "ptilde_layerL", "rate_linear_cosine_layerL", "rate_naive_layerL", "share_1st_layer1",
                "share_1st_layerL"},
               {}};
    std::size_t c1 = 0, c2 = 0, c3 = 0, c4 = 0, learned = 0;
    for (std::size_t s = 0; s < ts.seeds; ++s) {
        const TrendRow row = measure_trends(opt.seed + s, ts);
        t.add({detail::ll(row.seed), row.initial_loss, row.final_loss, row.median_self_first, row.median_self_last,
               row.ptilde_first, row.ptilde_last, row.rate_linear_last, row.rate_naive_last, row.share_first_first,
               row.share_first_last});
        learned += row.final_loss < row.initial_loss;
        c1 += row.median_self_last < row.median_self_first;
        c2 += row.ptilde_last >= row.ptilde_first;
        c3 += row.rate_linear_last > row.rate_naive_last;
        c4 += row.share_first_first > row.share_first_last;
    }
    detail::write(t, dir, "a8_trends.csv");
    const std::size_t need = ts.seeds - ts.seeds / 5; // 4 of 5
    r.pass = c1 >= need && c2 >= need && c3 >= need && c4 >= need;
    const std::string of = "/" + std::to_string(ts.seeds);
    r.detail = "(i) self-contribution falls " + std::to_string(c1) + of + ", (ii) P~ rises " + std::to_string(c2) + of +
               ", (iii) linear > naive " + std::to_string(c3) + of + ", (iv) 1st-neighbour share falls " +
               std::to_string(c4) + of + "; loss decreased " + std::to_string(learned) + of;
    return r;
}

inline Result a9_end_to_end(const Options& opt, const std::string& dir) {
    Result r{"A9", "end-to-end non-identifiability", false, "", 0.0, 10.0};
    const std::size_t d_s = 16;
    const Model m = init(detail::small_model(opt.seed, 3, 2, 16, d_s)); // d_v = 8
    const TokenSequence seq = MarkovCorpus(opt.seed).generate(1, d_s, opt.seed).front();
    const ForwardTrace base = forward(m, seq);
    const HeadSnapshot& snap = base.snapshots.front(); // layer 1, head 0
    const PerturbationResult p = perturb_attention(snap, Philox(opt.seed, 0xA9), opt.scale);
    DiagnosticHooks hooks;
    hooks.attention_override[{snap.layer, snap.head}] = p.A_alt;
    const ForwardTrace alt = forward(m, seq, hooks);
    double worst = 0.0;
    CsvTable t{{"layer", "max_hidden_diff"}, {}};
    for (std::size_t l = 1; l <= base.layers(); ++l) {
        const double diff = max_abs_diff(alt.hidden(l), base.hidden(l));
        worst = std::max(worst, diff);
        t.add({detail::ll(l), diff});
    }
    const double change = max_abs_diff(p.A_alt, snap.A);
    t.add({std::string("attention_change"), change});
    detail::write(t, dir, "a9_substitution.csv");
    r.pass = worst <= 1e-8 && change >= 1e-3 && d_s - m.config.head_dim() >= 2;
    r.detail = "max hidden diff " + detail::fmt(worst) + ", attention change " + detail::fmt(change);
    return r;
}

// ---------------------------------------------------------------------------

inline bool selected(const Options& opt, const std::string& id) {
    return opt.only.empty() || std::find(opt.only.begin(), opt.only.end(), id) != opt.only.end();
}

/// A1-A9 into `dir`, timing each one.
inline std::vector<Result> run_core(const Options& opt, const std::string& dir,
                                    const std::function<void(const Result&)>& report) {
    std::filesystem::create_directories(dir);
    using Fn = std::function<Result(const Options&, const std::string&)>;
    const std::vector<std::pair<std::string, Fn>> criteria = {
        {"A1", a1_nullspace_dimension}, {"A2", a2_output_invariance},   {"A3", a3_identity_region},
        {"A4", a4_decomposition_algebra}, {"A5", a5_jacobian},          {"A6", a6_attribution_invariants},
        {"A7", a7_probe_baselines},       {"A8", [](const Options& o, const std::string& d) { return a8_learned_trends(o, d); }},
        {"A9", a9_end_to_end}};
    std::vector<Result> out;
    for (const auto& [id, fn] : criteria) {
        if (!selected(opt, id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Result res;
        try {
            res = fn(opt, dir);
        } catch (const std::exception& e) {
            res = Result{id, "", false, std::string("error: ") + e.what(), 0.0, 0.0};
        }
        res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (res.limit_seconds > 0.0 && res.seconds >= res.limit_seconds) {
            res.pass = false;
            res.detail += "; runtime over limit";
        }
        if (report) report(res);
        out.push_back(std::move(res));
    }
    return out;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline Result a10_determinism(const Options& opt, const std::string& dir) {
    Result r{"A10", "determinism and bundle I/O", false, "", 0.0, 0.0};
    bool csv_ok = true;
    std::size_t compared = 0;
    if (opt.determinism_rerun) {
        const std::string again = (std::filesystem::path(dir) / "rerun").string();
        run_core(opt, again, {});
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            if (entry.path().extension() != ".csv") continue;
            const auto twin = std::filesystem::path(again) / entry.path().filename();
            ++compared;
            if (!std::filesystem::exists(twin) || read_file(entry.path()) != read_file(twin)) {
                csv_ok = false;
                r.detail += "differs: " + entry.path().filename().string() + "; ";
            }
        }
        csv_ok = csv_ok && compared > 0;
    }

    // Bundle round trips: a model, a trace, and an external-style snapshot.
    const Model m = init(detail::small_model(opt.seed, 2, 2, 16, 12));
    const TokenSequence seq = MarkovCorpus(opt.seed).generate(1, 12, opt.seed).front();
    std::vector<TensorBundle> bundles{model_to_bundle(m), trace_to_bundle(forward(m, seq))};
    Philox rng(opt.seed, 0xA10);
    TensorBundle ext;
    put_snapshot(ext, detail::random_snapshot(10, 8, 4, rng), false);
    bundles.push_back(ext);
    bool io_ok = true;
    for (std::size_t k = 0; k < bundles.size(); ++k) {
        const auto path = std::filesystem::path(dir) / ("a10_bundle" + std::to_string(k) + ".atnt");
        save_bundle(bundles[k], path.string());
        const TensorBundle back = load_bundle(path.string());
        io_ok = io_ok && back.tensors == bundles[k].tensors && back.metadata == bundles[k].metadata &&
                serialize_bundle(back) == read_file(path);
        std::filesystem::remove(path);
    }
    r.pass = csv_ok && io_ok;
    r.detail += (opt.determinism_rerun ? std::to_string(compared) + " CSVs byte-identical across reruns"
                                       : std::string("rerun skipped")) +
                (io_ok ? ", bundles bit-exact" : ", bundle round-trip FAILED");
    if (!opt.determinism_rerun) r.pass = false;
    return r;
}

/// Run the selected criteria and return every result, A10 last.
inline std::vector<Result> run(const Options& opt, const std::function<void(const Result&)>& report = {}) {
    std::vector<Result> results = run_core(opt, opt.out_dir, report);
    if (selected(opt, "A10")) {
        const auto t0 = std::chrono::steady_clock::now();
        Result r;
        try {
            r = a10_determinism(opt, opt.out_dir);
        } catch (const std::exception& e) {
            r = Result{"A10", "determinism and bundle I/O", false, std::string("error: ") + e.what(), 0.0, 0.0};
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (report) report(r);
        results.push_back(std::move(r));
    }
    return results;
}

inline std::string format_line(const Result& r) {
    std::ostringstream os;
    os << (r.pass ? "PASS " : "FAIL ") << r.id << "  " << r.title << " -- " << r.detail << " [" << detail::fmt(r.seconds)
       << " s";
    if (r.limit_seconds > 0.0) os << " / limit " << detail::fmt(r.limit_seconds) << " s";
    os << "]";
    return os.str();
}

} // namespace attnid::acceptance

#endif // ATTNID_ACCEPTANCE_HPP
