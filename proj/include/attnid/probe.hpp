// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNID_PROBE_HPP
#define ATTNID_PROBE_HPP

#include "attnid/errors.hpp"
#include "attnid/matrix.hpp"
#include "attnid/rng.hpp"
#include "attnid/toy_transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace attnid {

enum class ProbeTarget { input, previous_layer };
enum class ProbeKind { naive, linear, mlp, constant };
enum class ProbeMetric { cosine, l2 };
enum class Split { train, validation, test };

inline std::string_view to_string(ProbeKind k) {
    switch (k) {
    case ProbeKind::naive: return "naive";
    case ProbeKind::linear: return "linear";
    case ProbeKind::mlp: return "mlp";
    case ProbeKind::constant: return "constant";
    }
    return "?";
}

inline std::string_view to_string(ProbeMetric m) { return m == ProbeMetric::cosine ? "cosine" : "l2"; }

inline std::string_view to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
    }
    return "?";
}

/// One sentence's source vectors and its candidate target set.
struct ProbeSentence {
    std::size_t id = 0;
    Split split = Split::train;
    Matrix sources; ///< d_s x d
    Matrix targets; ///< d_s x d; nearest-neighbour candidates
};

/// Source at `source_pos` should be mapped to the target at `target_pos`.
struct ProbePair {
    std::size_t sentence = 0;
    std::size_t source_pos = 0;
    std::size_t target_pos = 0;
};

struct ProbeDataset {
    std::size_t layer = 0;
    ProbeTarget target = ProbeTarget::input;
    long offset = 0;
    std::size_t dim = 0;
    std::vector<ProbeSentence> sentences;
    std::vector<ProbePair> pairs;

    std::vector<std::size_t> pairs_in(Split s) const {
        std::vector<std::size_t> idx;
        for (std::size_t p = 0; p < pairs.size(); ++p)
            if (sentences[pairs[p].sentence].split == s) idx.push_back(p);
        return idx;
    }
};

/// Sentence-level 70/15/15 assignment after a seeded shuffle.
inline std::vector<Split> assign_splits(std::size_t sentences, std::uint64_t seed) {
    const auto n_val = static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(sentences)));
    const std::size_t n_test = n_val;
    if (sentences < 3 || n_val == 0 || sentences <= n_val + n_test) {
        throw InvalidArgument("cannot form non-empty 70/15/15 splits from " + std::to_string(sentences) + " sentences");
    }
    std::vector<std::size_t> perm(sentences);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Philox rng(seed, 0x5711);
    for (std::size_t i = sentences; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    std::vector<Split> out(sentences, Split::train);
    for (std::size_t k = 0; k < n_val; ++k) out[perm[sentences - n_test - n_val + k]] = Split::validation;
    for (std::size_t k = 0; k < n_test; ++k) out[perm[sentences - n_test + k]] = Split::test;
    return out;
}

/// Pairs (e_i^layer, target_{i+offset}) from every trace. Positions without
/// the offset neighbour are dropped.
inline ProbeDataset build_dataset(std::span<const ForwardTrace> traces, std::size_t layer, ProbeTarget target,
                                  long offset, std::uint64_t split_seed) {
    if (traces.empty()) throw InvalidArgument("build_dataset: no traces");
    if (target == ProbeTarget::previous_layer && layer == 0) {
        throw InvalidArgument("build_dataset: layer 0 has no previous layer");
    }
    std::size_t min_len = std::numeric_limits<std::size_t>::max();
    for (const auto& t : traces) {
        if (layer > t.layers()) throw InvalidArgument("build_dataset: layer exceeds trace depth");
        min_len = std::min(min_len, t.X.rows());
    }
    if (static_cast<std::size_t>(std::abs(offset)) >= min_len) {
        throw InvalidArgument("build_dataset: |offset| must be below the shortest sequence length");
    }
    const auto splits = assign_splits(traces.size(), split_seed);
    ProbeDataset ds;
    ds.layer = layer;
    ds.target = target;
    ds.offset = offset;
    ds.dim = traces.front().X.cols();
    for (std::size_t s = 0; s < traces.size(); ++s) {
        const auto& t = traces[s];
        ProbeSentence ps;
        ps.id = s;
        ps.split = splits[s];
        ps.sources = t.hidden(layer);
        ps.targets = target == ProbeTarget::input ? t.X : t.hidden(layer - 1);
        if (ps.sources.cols() != ds.dim || ps.targets.cols() != ds.dim) {
            throw ShapeError("build_dataset: traces disagree on embedding width");
        }
        const long n = static_cast<long>(ps.sources.rows());
        for (long i = 0; i < n; ++i) {
            const long k = i + offset;
            if (k < 0 || k >= n) continue;
            ds.pairs.push_back({s, static_cast<std::size_t>(i), static_cast<std::size_t>(k)});
        }
        ds.sentences.push_back(std::move(ps));
    }
    for (Split sp : {Split::train, Split::validation, Split::test}) {
        if (ds.pairs_in(sp).empty()) {
            throw InvalidArgument("build_dataset: empty " + std::string(to_string(sp)) + " split");
        }
    }
    return ds;
}

struct ProbeModel {
    ProbeKind kind = ProbeKind::naive;
    ProbeMetric metric = ProbeMetric::cosine;
    std::size_t trained_layer = 0;
    Matrix W1, b1; ///< linear: W1 only (no bias); mlp: hidden layer
    Matrix W2, b2; ///< mlp output layer; constant: b2 is the output
    std::size_t epochs_run = 0;
    double best_validation_loss = std::numeric_limits<double>::infinity();

    static ProbeModel make(ProbeKind kind, ProbeMetric metric, std::size_t layer = 0) {
        ProbeModel p;
        p.kind = kind;
        p.metric = metric;
        p.trained_layer = layer;
        return p;
    }

    static ProbeModel naive(ProbeMetric metric = ProbeMetric::cosine) { return make(ProbeKind::naive, metric); }

    static ProbeModel constant(std::vector<double> value, ProbeMetric metric = ProbeMetric::cosine) {
        ProbeModel p = make(ProbeKind::constant, metric);
        const std::size_t n = value.size();
        p.b2 = Matrix(1, n, std::move(value));
        return p;
    }

    Matrix apply(const Matrix& src) const {
        switch (kind) {
        case ProbeKind::naive: return src;
        case ProbeKind::linear: return matmul(src, W1);
        case ProbeKind::mlp: {
            Matrix h = matmul(src, W1);
            detail::add_row_bias(h, b1);
            for (double& v : h.data()) v = detail::gelu(v);
            Matrix y = matmul(h, W2);
            detail::add_row_bias(y, b2);
            return y;
        }
        case ProbeKind::constant: {
            Matrix y(src.rows(), b2.cols());
            for (std::size_t i = 0; i < y.rows(); ++i) std::copy(b2.row(0).begin(), b2.row(0).end(), y.row(i).begin());
            return y;
        }
        }
        return src;
    }
};

struct ProbeHyper {
    double learn_rate = 1e-4;
    std::size_t batch_size = 256;
    std::size_t patience = 20;
    std::size_t hidden_dim = 0; ///< 0: min(1000, 4d)
    std::size_t max_epochs = 2000;
    std::uint64_t seed = 1;
};

namespace detail {

/// Loss for one prediction and its gradient w.r.t. the prediction.
inline double probe_loss(std::span<const double> pred, std::span<const double> target, ProbeMetric metric,
                         std::span<double> grad) {
    if (metric == ProbeMetric::l2) {
        double loss = 0.0;
        for (std::size_t k = 0; k < pred.size(); ++k) {
            const double diff = pred[k] - target[k];
            loss += diff * diff;
            if (!grad.empty()) grad[k] = 2.0 * diff;
        }
        return loss;
    }
    const double np = norm2(pred);
    const double nt = norm2(target);
    if (np == 0.0 || nt == 0.0) {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
        return 1.0;
    }
    const double cosv = dot(pred, target) / (np * nt);
    if (!grad.empty())
        for (std::size_t k = 0; k < pred.size(); ++k) grad[k] = -(target[k] / (np * nt) - cosv * pred[k] / (np * np));
    return 1.0 - cosv;
}

inline Matrix gather_rows(const ProbeDataset& ds, std::span<const std::size_t> pair_idx, bool source) {
    Matrix m(pair_idx.size(), ds.dim);
    for (std::size_t r = 0; r < pair_idx.size(); ++r) {
        const auto& pr = ds.pairs[pair_idx[r]];
        const auto& s = ds.sentences[pr.sentence];
        const auto row = source ? s.sources.row(pr.source_pos) : s.targets.row(pr.target_pos);
        std::copy(row.begin(), row.end(), m.row(r).begin());
    }
    return m;
}

inline double mean_loss(const ProbeModel& p, const Matrix& src, const Matrix& tgt) {
    const Matrix pred = p.apply(src);
    double loss = 0.0;
    for (std::size_t r = 0; r < pred.rows(); ++r) loss += probe_loss(pred.row(r), tgt.row(r), p.metric, {});
    return pred.rows() == 0 ? 0.0 : loss / static_cast<double>(pred.rows());
}

} // namespace detail

/// Adam on per-pair cosine distance or squared L2 distance, with early
/// stopping on validation loss. Returns the best-validation weights.
inline ProbeModel train_probe(const ProbeDataset& ds, ProbeKind kind, ProbeMetric metric, const ProbeHyper& hyper = {}) {
    if (kind != ProbeKind::linear && kind != ProbeKind::mlp) {
        throw InvalidArgument("train_probe: only linear and mlp probes are trainable");
    }
    const std::size_t d = ds.dim;
    ProbeModel p = ProbeModel::make(kind, metric, ds.layer);
    Philox rng(hyper.seed, 0x9B0B);
    auto gaussian = [&](std::size_t r, std::size_t c, double sd) {
        Matrix m(r, c);
        for (double& v : m.data()) v = rng.normal(0.0, sd);
        return m;
    };
    const std::size_t hidden = hyper.hidden_dim ? hyper.hidden_dim : std::min<std::size_t>(1000, 4 * d);
    if (kind == ProbeKind::linear) {
        p.W1 = gaussian(d, d, 1.0 / std::sqrt(static_cast<double>(d)));
    } else {
        p.W1 = gaussian(d, hidden, 1.0 / std::sqrt(static_cast<double>(d)));
        p.b1 = Matrix(1, hidden);
        p.W2 = gaussian(hidden, d, 1.0 / std::sqrt(static_cast<double>(hidden)));
        p.b2 = Matrix(1, d);
    }

    const auto train_idx = ds.pairs_in(Split::train);
    const auto val_idx = ds.pairs_in(Split::validation);
    const Matrix val_src = detail::gather_rows(ds, val_idx, true);
    const Matrix val_tgt = detail::gather_rows(ds, val_idx, false);
    p.best_validation_loss = detail::mean_loss(p, val_src, val_tgt);
    if (hyper.max_epochs == 0 || train_idx.empty()) return p;

    std::vector<Matrix*> params{&p.W1};
    if (kind == ProbeKind::mlp) params = {&p.W1, &p.b1, &p.W2, &p.b2};
    std::vector<Matrix> m1, m2, grads;
    for (auto* w : params) {
        m1.emplace_back(w->rows(), w->cols());
        m2.emplace_back(w->rows(), w->cols());
        grads.emplace_back(w->rows(), w->cols());
    }
    ProbeModel best = p;
    std::size_t since_best = 0;
    std::size_t step = 0;
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<std::size_t> order = train_idx;
    std::vector<double> g(d);
    for (std::size_t epoch = 0; epoch < hyper.max_epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
            const std::size_t end = std::min(order.size(), start + hyper.batch_size);
            const std::span<const std::size_t> batch(order.data() + start, end - start);
            const Matrix src = detail::gather_rows(ds, batch, true);
            const Matrix tgt = detail::gather_rows(ds, batch, false);
            const double inv_b = 1.0 / static_cast<double>(batch.size());
            for (auto& gm : grads) gm.fill(0.0);
            if (kind == ProbeKind::linear) {
                const Matrix pred = matmul(src, p.W1);
                Matrix dpred(pred.rows(), pred.cols());
                for (std::size_t r = 0; r < pred.rows(); ++r) {
                    detail::probe_loss(pred.row(r), tgt.row(r), metric, dpred.row(r));
                }
                dpred *= inv_b;
                grads[0] = matmul_tn(src, dpred);
            } else {
                Matrix pre = matmul(src, p.W1);
                detail::add_row_bias(pre, p.b1);
                Matrix act = pre;
                for (double& v : act.data()) v = detail::gelu(v);
                Matrix pred = matmul(act, p.W2);
                detail::add_row_bias(pred, p.b2);
                Matrix dpred(pred.rows(), pred.cols());
                for (std::size_t r = 0; r < pred.rows(); ++r) {
                    detail::probe_loss(pred.row(r), tgt.row(r), metric, dpred.row(r));
                }
                dpred *= inv_b;
                grads[2] = matmul_tn(act, dpred);
                detail::add_column_sums(grads[3], dpred);
                Matrix dpre = matmul_nt(dpred, p.W2);
                for (std::size_t k = 0; k < dpre.size(); ++k) dpre.data()[k] *= detail::gelu_grad(pre.data()[k]);
                grads[0] = matmul_tn(src, dpre);
                detail::add_column_sums(grads[1], dpre);
            }
            ++step;
            const double t = static_cast<double>(step);
            const double c1 = 1.0 / (1.0 - std::pow(beta1, t));
            const double c2 = 1.0 / (1.0 - std::pow(beta2, t));
            for (std::size_t k = 0; k < params.size(); ++k) {
                auto w = params[k]->data();
                const auto gr = grads[k].data();
                auto a = m1[k].data();
                auto b = m2[k].data();
                for (std::size_t i = 0; i < w.size(); ++i) {
                    a[i] = beta1 * a[i] + (1.0 - beta1) * gr[i];
                    b[i] = beta2 * b[i] + (1.0 - beta2) * gr[i] * gr[i];
                    w[i] -= hyper.learn_rate * (a[i] * c1) / (std::sqrt(b[i] * c2) + eps);
                }
            }
        }
        const double vloss = detail::mean_loss(p, val_src, val_tgt);
        if (!std::isfinite(vloss)) throw TrainingDiverged(step);
        p.epochs_run = epoch + 1;
        if (vloss < best.best_validation_loss) {
            best = p;
            best.best_validation_loss = vloss;
            since_best = 0;
        } else if (++since_best >= hyper.patience) {
            break;
        }
    }
    best.epochs_run = p.epochs_run;
    return best;
}

/// Index of the nearest candidate row to `query` (lowest index on ties).
/// Cosine compares q.t / |t|, which orders candidates like cosine similarity.
inline std::size_t nearest_candidate(std::span<const double> query, const Matrix& candidates, ProbeMetric metric) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < candidates.rows(); ++c) {
        const auto t = candidates.row(c);
        double score;
        if (metric == ProbeMetric::cosine) {
            const double nt = norm2(t);
            score = nt == 0.0 ? -std::numeric_limits<double>::infinity() : dot(query, t) / nt;
        } else {
            double s = 0.0;
            for (std::size_t k = 0; k < t.size(); ++k) s += (query[k] - t[k]) * (query[k] - t[k]);
            score = -s;
        }
        if (score > best_score) {
            best_score = score;
            best = c;
        }
    }
    return best;
}

/// Share of pairs in `split` whose mapped source has its own target as the
/// nearest neighbour among the sentence's targets.
inline double identifiability_rate(const ProbeModel& probe, const ProbeDataset& ds, Split split) {
    const auto idx = ds.pairs_in(split);
    if (idx.empty()) return 0.0;
    std::size_t correct = 0;
    std::size_t cached = std::numeric_limits<std::size_t>::max();
    Matrix mapped;
    for (std::size_t p : idx) {
        const auto& pr = ds.pairs[p];
        if (pr.sentence != cached) {
            mapped = probe.apply(ds.sentences[pr.sentence].sources);
            cached = pr.sentence;
        }
        if (nearest_candidate(mapped.row(pr.source_pos), ds.sentences[pr.sentence].targets, probe.metric) ==
            pr.target_pos)
            ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

/// Rate of one probe on the datasets of several layers, without retraining.
inline std::vector<double> cross_layer_eval(const ProbeModel& probe, std::span<const ProbeDataset> per_layer,
                                            Split split = Split::test) {
    std::vector<double> out;
    for (const auto& ds : per_layer) out.push_back(identifiability_rate(probe, ds, split));
    return out;
}

struct RateProfileRow {
    std::size_t layer = 0;
    ProbeKind kind = ProbeKind::naive;
    ProbeMetric metric = ProbeMetric::cosine;
    double rate_train = 0.0;
    double rate_test = 0.0;
};

struct RateProfileOptions {
    std::vector<std::size_t> layers;
    std::vector<ProbeKind> kinds{ProbeKind::linear, ProbeKind::mlp, ProbeKind::naive};
    std::vector<ProbeMetric> metrics{ProbeMetric::cosine, ProbeMetric::l2};
    ProbeTarget target = ProbeTarget::input;
    long offset = 0;
    std::size_t folds = 3;
    std::uint64_t split_seed = 1;
    ProbeHyper hyper;
};

/// Train and evaluate every (layer, kind, metric) combination; rates are
/// averaged over folds, each fold using its own sentence split.
inline std::vector<RateProfileRow> rate_profile(std::span<const ForwardTrace> traces, const RateProfileOptions& opt) {
    if (opt.folds == 0) throw InvalidArgument("rate_profile: need at least one fold");
    std::vector<RateProfileRow> rows;
    for (std::size_t layer : opt.layers) {
        std::vector<ProbeDataset> folds;
        for (std::size_t f = 0; f < opt.folds; ++f)
            folds.push_back(build_dataset(traces, layer, opt.target, opt.offset, opt.split_seed + f));
        for (ProbeKind kind : opt.kinds) {
            for (ProbeMetric metric : opt.metrics) {
                RateProfileRow row;
                row.layer = layer;
                row.kind = kind;
                row.metric = metric;
                for (std::size_t f = 0; f < opt.folds; ++f) {
                    ProbeModel probe = ProbeModel::naive(metric);
                    if (kind == ProbeKind::linear || kind == ProbeKind::mlp) {
                        ProbeHyper h = opt.hyper;
                        h.seed = opt.hyper.seed + f;
                        probe = train_probe(folds[f], kind, metric, h);
                    }
                    row.rate_train += identifiability_rate(probe, folds[f], Split::train);
                    row.rate_test += identifiability_rate(probe, folds[f], Split::test);
                }
                row.rate_train /= static_cast<double>(opt.folds);
                row.rate_test /= static_cast<double>(opt.folds);
                rows.push_back(row);
            }
        }
    }
    return rows;
}

} // namespace attnid

#endif // ATTNID_PROBE_HPP
