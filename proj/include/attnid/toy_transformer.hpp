// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNID_TOY_TRANSFORMER_HPP
#define ATTNID_TOY_TRANSFORMER_HPP

// A small post-norm BERT-style encoder:
//
//   R1 = E + sum_h softmax(Q_h K_h^T / sqrt(d_v)) E Wv_h H_h
//   Y1 = LN1(R1)
//   Y2 = LN2(Y1 + gelu(Y1 W1 + b1) W2 + b2)
//
// with input embeddings X = token + position + segment. Backward passes are
// written out by hand; `jacobian` differentiates a layer output with respect
// to X by reverse accumulation and `jacobian_fd` is the finite-difference
// reference.

#include "attnid/corpus.hpp"
#include "attnid/errors.hpp"
#include "attnid/head_geometry.hpp"
#include "attnid/linalg.hpp"
#include "attnid/matrix.hpp"
#include "attnid/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace attnid {

struct ModelConfig {
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t dim = 16;
    std::size_t ff_dim = 64;
    std::size_t vocab = 67;
    std::size_t max_len = 64;
    std::uint64_t seed = 1;

    std::size_t head_dim() const noexcept { return heads == 0 ? 0 : dim / heads; }

    void validate() const {
        if (heads == 0 || dim == 0 || ff_dim == 0 || vocab == 0 || max_len == 0) {
            throw InvalidArgument("model dimensions must be at least 1");
        }
        if (dim % heads != 0) {
            throw InvalidArgument("head count " + std::to_string(heads) + " does not divide model dim " +
                                  std::to_string(dim));
        }
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
    std::vector<Matrix> Wq, Wk, Wv; ///< per head, d x d_v
    std::vector<Matrix> H;          ///< per head, d_v x d
    Matrix W1, b1;                  ///< d x d_ff, 1 x d_ff
    Matrix W2, b2;                  ///< d_ff x d, 1 x d
    Matrix ln1_gain, ln1_bias;      ///< 1 x d
    Matrix ln2_gain, ln2_bias;
};

struct Model {
    ModelConfig config;
    Matrix tok_emb; ///< vocab x d
    Matrix pos_emb; ///< max_len x d
    Matrix seg_emb; ///< 2 x d
    std::vector<LayerParams> layers;

    /// The d x d output projection of layer `layer` (1-based): the per-head
    /// H slices stacked vertically.
    Matrix output_projection(std::size_t layer) const {
        const auto& p = layers.at(layer - 1);
        const std::size_t dv = config.head_dim();
        Matrix out(config.dim, config.dim);
        for (std::size_t h = 0; h < p.H.size(); ++h)
            for (std::size_t r = 0; r < dv; ++r)
                std::copy(p.H[h].row(r).begin(), p.H[h].row(r).end(), out.row(h * dv + r).begin());
        return out;
    }
};

namespace detail {

template <class M>
auto named_parameters_impl(M& model) {
    using Ptr = std::conditional_t<std::is_const_v<M>, const Matrix*, Matrix*>;
    std::vector<std::pair<std::string, Ptr>> out;
    out.emplace_back("tok_emb", &model.tok_emb);
    out.emplace_back("pos_emb", &model.pos_emb);
    out.emplace_back("seg_emb", &model.seg_emb);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& p = model.layers[l];
        const std::string pre = "layer" + std::to_string(l + 1) + ".";
        for (std::size_t h = 0; h < p.Wq.size(); ++h) {
            const std::string hp = pre + "head" + std::to_string(h) + ".";
            out.emplace_back(hp + "Wq", &p.Wq[h]);
            out.emplace_back(hp + "Wk", &p.Wk[h]);
            out.emplace_back(hp + "Wv", &p.Wv[h]);
            out.emplace_back(hp + "H", &p.H[h]);
        }
        out.emplace_back(pre + "W1", &p.W1);
        out.emplace_back(pre + "b1", &p.b1);
        out.emplace_back(pre + "W2", &p.W2);
        out.emplace_back(pre + "b2", &p.b2);
        out.emplace_back(pre + "ln1_gain", &p.ln1_gain);
        out.emplace_back(pre + "ln1_bias", &p.ln1_bias);
        out.emplace_back(pre + "ln2_gain", &p.ln2_gain);
        out.emplace_back(pre + "ln2_bias", &p.ln2_bias);
    }
    return out;
}

} // namespace detail

/// Every parameter tensor with a stable name, in a fixed order.
inline std::vector<std::pair<std::string, Matrix*>> named_parameters(Model& m) {
    return detail::named_parameters_impl(m);
}
inline std::vector<std::pair<std::string, const Matrix*>> named_parameters(const Model& m) {
    return detail::named_parameters_impl(m);
}

/// Model with every tensor shaped for `config` and zero-filled.
inline Model zero_model(const ModelConfig& config) {
    config.validate();
    const std::size_t d = config.dim;
    const std::size_t dv = config.head_dim();
    Model m;
    m.config = config;
    m.tok_emb = Matrix(config.vocab, d);
    m.pos_emb = Matrix(config.max_len, d);
    m.seg_emb = Matrix(2, d);
    m.layers.resize(config.layers);
    for (auto& p : m.layers) {
        p.Wq.assign(config.heads, Matrix(d, dv));
        p.Wk.assign(config.heads, Matrix(d, dv));
        p.Wv.assign(config.heads, Matrix(d, dv));
        p.H.assign(config.heads, Matrix(dv, d));
        p.W1 = Matrix(d, config.ff_dim);
        p.b1 = Matrix(1, config.ff_dim);
        p.W2 = Matrix(config.ff_dim, d);
        p.b2 = Matrix(1, d);
        p.ln1_gain = Matrix(1, d);
        p.ln1_bias = Matrix(1, d);
        p.ln2_gain = Matrix(1, d);
        p.ln2_bias = Matrix(1, d);
    }
    return m;
}

inline constexpr double kInitStddev = 0.02;

/// N(0, 0.02^2) weights, zero biases, unit layer-norm gains.
inline Model init(const ModelConfig& config) {
    Model m = zero_model(config);
    Philox rng(config.seed, 1);
    for (auto& [name, mat] : named_parameters(m)) {
        const bool is_gain = name.ends_with("_gain");
        const bool is_bias = name.ends_with("_bias") || name.ends_with(".b1") || name.ends_with(".b2");
        if (is_gain) mat->fill(1.0);
        else if (!is_bias)
            for (double& v : mat->data()) v = rng.normal(0.0, kInitStddev);
    }
    return m;
}

/// Switches used by tests and diagnostics to make parts of the block trivial.
struct DiagnosticHooks {
    /// Attention logits are -inf off the diagonal, so A = I.
    bool identity_attention = false;
    /// Layer norms and gelu become the identity.
    bool linear = false;
    /// Feed-forward sublayer output is zero.
    bool zero_ffn = false;
    /// Replace the softmax output of (layer, head) with a given matrix.
    std::map<std::pair<std::size_t, std::size_t>, Matrix> attention_override;
};

struct ForwardTrace {
    Matrix X;                                    ///< d_s x d input embeddings
    std::vector<Matrix> E_per_layer;             ///< output of layer l at index l-1
    std::vector<std::vector<Matrix>> attention;  ///< [layer-1][head]
    std::vector<HeadSnapshot> snapshots;         ///< layer-major, head-minor

    std::size_t layers() const noexcept { return E_per_layer.size(); }

    /// e^l; layer 0 is X.
    const Matrix& hidden(std::size_t layer) const { return layer == 0 ? X : E_per_layer.at(layer - 1); }
};

namespace detail {

inline constexpr double kLayerNormEps = 1e-12;

inline double gelu(double x) noexcept { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_grad(double x) noexcept {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

struct LayerNormCache {
    Matrix xhat;
    std::vector<double> rstd;
};

inline Matrix layer_norm_forward(const Matrix& x, const Matrix& gain, const Matrix& bias, bool identity,
                                 LayerNormCache& cache) {
    if (identity) return x;
    const std::size_t n = x.cols();
    cache.xhat = Matrix(x.rows(), n);
    cache.rstd.assign(x.rows(), 0.0);
    Matrix y(x.rows(), n);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto r = x.row(i);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.rstd[i] = rstd;
        for (std::size_t k = 0; k < n; ++k) {
            const double xh = (r[k] - mean) * rstd;
            cache.xhat(i, k) = xh;
            y(i, k) = gain(0, k) * xh + bias(0, k);
        }
    }
    return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const Matrix& gain, bool identity,
                                  Matrix* dgain, Matrix* dbias) {
    if (identity) return dy;
    const std::size_t n = dy.cols();
    Matrix dx(dy.rows(), n);
    std::vector<double> dxhat(n);
    for (std::size_t i = 0; i < dy.rows(); ++i) {
        const auto g = dy.row(i);
        bool all_zero = true;
        for (double v : g) all_zero = all_zero && v == 0.0;
        if (all_zero) continue;
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            dxhat[k] = g[k] * gain(0, k);
            mean_d += dxhat[k];
            mean_dx += dxhat[k] * cache.xhat(i, k);
            if (dgain) (*dgain)(0, k) += g[k] * cache.xhat(i, k);
            if (dbias) (*dbias)(0, k) += g[k];
        }
        mean_d /= static_cast<double>(n);
        mean_dx /= static_cast<double>(n);
        for (std::size_t k = 0; k < n; ++k)
            dx(i, k) = cache.rstd[i] * (dxhat[k] - mean_d - cache.xhat(i, k) * mean_dx);
    }
    return dx;
}

struct HeadCache {
    Matrix Q, K, V, A, O;
    bool fixed_attention = false;
};

struct LayerCache {
    Matrix E;
    std::vector<HeadCache> heads;
    Matrix R1;
    LayerNormCache ln1;
    Matrix Y1;
    Matrix F1; ///< pre-activation of the first feed-forward matrix
    Matrix G;  ///< gelu(F1)
    Matrix R2;
    LayerNormCache ln2;
    Matrix Y2;
};

inline void add_row_bias(Matrix& m, const Matrix& bias) {
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t k = 0; k < m.cols(); ++k) m(i, k) += bias(0, k);
}

inline LayerCache layer_forward(const LayerParams& p, const Matrix& e, std::size_t layer, const ModelConfig& cfg,
                                const DiagnosticHooks& hooks) {
    LayerCache c;
    c.E = e;
    const std::size_t n = e.rows();
    const double inv_sqrt_dv = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    c.R1 = e;
    c.heads.resize(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        HeadCache& hc = c.heads[h];
        hc.V = matmul(e, p.Wv[h]);
        if (auto it = hooks.attention_override.find({layer, h}); it != hooks.attention_override.end()) {
            if (it->second.rows() != n || it->second.cols() != n) {
                throw ShapeError("attention override for layer " + std::to_string(layer) + " head " +
                                 std::to_string(h) + " is " + it->second.shape());
            }
            hc.A = it->second;
            hc.fixed_attention = true;
        } else if (hooks.identity_attention) {
            hc.A = Matrix::identity(n);
            hc.fixed_attention = true;
        } else {
            hc.Q = matmul(e, p.Wq[h]);
            hc.K = matmul(e, p.Wk[h]);
            Matrix s = matmul_nt(hc.Q, hc.K);
            s *= inv_sqrt_dv;
            hc.A = softmax_rows(s);
        }
        hc.O = matmul(hc.A, hc.V);
        c.R1 += matmul(hc.O, p.H[h]);
    }
    c.Y1 = layer_norm_forward(c.R1, p.ln1_gain, p.ln1_bias, hooks.linear, c.ln1);
    c.R2 = c.Y1;
    if (!hooks.zero_ffn) {
        c.F1 = matmul(c.Y1, p.W1);
        add_row_bias(c.F1, p.b1);
        c.G = c.F1;
        if (!hooks.linear)
            for (double& v : c.G.data()) v = gelu(v);
        Matrix f2 = matmul(c.G, p.W2);
        add_row_bias(f2, p.b2);
        c.R2 += f2;
    }
    c.Y2 = layer_norm_forward(c.R2, p.ln2_gain, p.ln2_bias, hooks.linear, c.ln2);
    return c;
}

inline void add_column_sums(Matrix& bias_grad, const Matrix& d) {
    for (std::size_t i = 0; i < d.rows(); ++i)
        for (std::size_t k = 0; k < d.cols(); ++k) bias_grad(0, k) += d(i, k);
}

/// Cotangent of the layer input given the cotangent of its output.
/// Parameter gradients are accumulated into `grads` when non-null.
inline Matrix layer_backward(const LayerParams& p, const LayerCache& c, const Matrix& dy2, const ModelConfig& cfg,
                             const DiagnosticHooks& hooks, LayerParams* grads) {
    const double inv_sqrt_dv = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    Matrix dr2 = layer_norm_backward(dy2, c.ln2, p.ln2_gain, hooks.linear, grads ? &grads->ln2_gain : nullptr,
                                     grads ? &grads->ln2_bias : nullptr);
    Matrix dy1 = dr2;
    if (!hooks.zero_ffn) {
        if (grads) {
            grads->W2 += matmul_tn(c.G, dr2);
            add_column_sums(grads->b2, dr2);
        }
        Matrix df1 = matmul_nt(dr2, p.W2);
        if (!hooks.linear)
            for (std::size_t i = 0; i < df1.size(); ++i) df1.data()[i] *= gelu_grad(c.F1.data()[i]);
        if (grads) {
            grads->W1 += matmul_tn(c.Y1, df1);
            add_column_sums(grads->b1, df1);
        }
        dy1 += matmul_nt(df1, p.W1);
    }
    Matrix dr1 = layer_norm_backward(dy1, c.ln1, p.ln1_gain, hooks.linear, grads ? &grads->ln1_gain : nullptr,
                                     grads ? &grads->ln1_bias : nullptr);
    Matrix de = dr1;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const HeadCache& hc = c.heads[h];
        const Matrix dO = matmul_nt(dr1, p.H[h]);
        if (grads) grads->H[h] += matmul_tn(hc.O, dr1);
        const Matrix dV = matmul_tn(hc.A, dO);
        if (grads) grads->Wv[h] += matmul_tn(c.E, dV);
        de += matmul_nt(dV, p.Wv[h]);
        if (hc.fixed_attention) continue;
        const Matrix dA = matmul_nt(dO, hc.V);
        Matrix ds(dA.rows(), dA.cols());
        for (std::size_t i = 0; i < dA.rows(); ++i) {
            const auto a = hc.A.row(i);
            const auto g = dA.row(i);
            const double inner = dot(a, g);
            for (std::size_t k = 0; k < a.size(); ++k) ds(i, k) = a[k] * (g[k] - inner) * inv_sqrt_dv;
        }
        const Matrix dQ = matmul(ds, hc.K);
        const Matrix dK = matmul_tn(ds, hc.Q);
        if (grads) {
            grads->Wq[h] += matmul_tn(c.E, dQ);
            grads->Wk[h] += matmul_tn(c.E, dK);
        }
        de += matmul_nt(dQ, p.Wq[h]);
        de += matmul_nt(dK, p.Wk[h]);
    }
    return de;
}

struct ForwardState {
    ForwardTrace trace;
    std::vector<LayerCache> caches;
};

inline ForwardState run_forward(const Model& model, const Matrix& x, const DiagnosticHooks& hooks,
                                bool keep_snapshots = true) {
    const ModelConfig& cfg = model.config;
    if (x.cols() != cfg.dim) throw ShapeError("input embeddings are " + x.shape() + ", model dim is " +
                                              std::to_string(cfg.dim));
    ForwardState st;
    st.trace.X = x;
    Matrix e = x;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const LayerParams& p = model.layers[l];
        LayerCache c = layer_forward(p, e, l + 1, cfg, hooks);
        std::vector<Matrix> att;
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            att.push_back(c.heads[h].A);
            if (keep_snapshots) st.trace.snapshots.push_back(HeadSnapshot{l + 1, h, e, p.Wv[h], p.H[h], c.heads[h].A});
        }
        st.trace.attention.push_back(std::move(att));
        e = c.Y2;
        st.trace.E_per_layer.push_back(e);
        st.caches.push_back(std::move(c));
    }
    return st;
}

/// d x (d_s * d) Jacobian of row `target` of layer `layer` w.r.t. X, from a
/// recorded forward state.
inline Matrix jacobian_from_state(const Model& model, const ForwardState& st, std::size_t layer,
                                  std::size_t target, const DiagnosticHooks& hooks) {
    const std::size_t d = model.config.dim;
    const std::size_t n = st.trace.X.rows();
    Matrix jac(d, n * d);
    for (std::size_t k = 0; k < d; ++k) {
        Matrix cot(n, d);
        cot(target, k) = 1.0;
        for (std::size_t l = layer; l-- > 0;)
            cot = layer_backward(model.layers[l], st.caches[l], cot, model.config, hooks, nullptr);
        std::copy(cot.data().begin(), cot.data().end(), jac.row(k).begin());
    }
    return jac;
}

} // namespace detail

/// X[i] = token_emb[t_i] + pos_emb[i] + seg_emb[s_i].
inline Matrix embed(const Model& model, std::span<const std::size_t> tokens, std::span<const std::size_t> segments) {
    if (tokens.size() != segments.size()) throw InvalidArgument("token and segment id lists differ in length");
    if (tokens.empty()) throw InvalidArgument("empty token sequence");
    if (tokens.size() > model.config.max_len) {
        throw InvalidArgument("sequence length " + std::to_string(tokens.size()) + " exceeds max_len " +
                              std::to_string(model.config.max_len));
    }
    const std::size_t d = model.config.dim;
    Matrix x(tokens.size(), d);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= model.tok_emb.rows()) throw InvalidArgument("token id " + std::to_string(tokens[i]) + " out of range");
        if (segments[i] >= model.seg_emb.rows()) throw InvalidArgument("segment id " + std::to_string(segments[i]) + " out of range");
        for (std::size_t k = 0; k < d; ++k)
            x(i, k) = model.tok_emb(tokens[i], k) + model.pos_emb(i, k) + model.seg_emb(segments[i], k);
    }
    return x;
}

inline ForwardTrace forward_embeddings(const Model& model, const Matrix& x, const DiagnosticHooks& hooks = {}) {
    return detail::run_forward(model, x, hooks).trace;
}

inline ForwardTrace forward(const Model& model, std::span<const std::size_t> tokens,
                            std::span<const std::size_t> segments, const DiagnosticHooks& hooks = {}) {
    return forward_embeddings(model, embed(model, tokens, segments), hooks);
}

inline ForwardTrace forward(const Model& model, const TokenSequence& seq, const DiagnosticHooks& hooks = {}) {
    return forward(model, seq.tokens, seq.segments, hooks);
}

namespace detail {
inline void check_jacobian_args(const Model& model, std::size_t n, std::size_t layer, std::size_t target) {
    if (layer > model.layers.size()) {
        throw InvalidArgument("layer " + std::to_string(layer) + " exceeds model depth " +
                              std::to_string(model.layers.size()));
    }
    if (target >= n) throw InvalidArgument("target position " + std::to_string(target) + " out of range");
}
} // namespace detail

/// Exact Jacobian d e_j^l / d X, laid out as d x (d_s * d): entry (k, i*d + m)
/// is d e_j^l[k] / d x_i[m]. Layer 0 is X itself.
inline Matrix jacobian(const Model& model, std::span<const std::size_t> tokens, std::span<const std::size_t> segments,
                       std::size_t layer, std::size_t target, const DiagnosticHooks& hooks = {}) {
    const Matrix x = embed(model, tokens, segments);
    detail::check_jacobian_args(model, x.rows(), layer, target);
    const auto st = detail::run_forward(model, x, hooks, false);
    return detail::jacobian_from_state(model, st, layer, target, hooks);
}

/// Central finite differences of e_j^l over every input coordinate.
inline Matrix jacobian_fd(const Model& model, std::span<const std::size_t> tokens,
                          std::span<const std::size_t> segments, std::size_t layer, std::size_t target, double step,
                          const DiagnosticHooks& hooks = {}) {
    if (!(step > 0.0)) throw InvalidArgument("finite-difference step must be positive");
    const Matrix x = embed(model, tokens, segments);
    detail::check_jacobian_args(model, x.rows(), layer, target);
    const std::size_t d = model.config.dim;
    Matrix jac(d, x.size());
    for (std::size_t c = 0; c < x.size(); ++c) {
        Matrix xp = x, xm = x;
        xp.data()[c] += step;
        xm.data()[c] -= step;
        const auto tp = detail::run_forward(model, xp, hooks, false).trace;
        const auto tm = detail::run_forward(model, xm, hooks, false).trace;
        const auto rp = tp.hidden(layer).row(target);
        const auto rm = tm.hidden(layer).row(target);
        for (std::size_t k = 0; k < d; ++k) jac(k, c) = (rp[k] - rm[k]) / (2.0 * step);
    }
    return jac;
}

// ---------------------------------------------------------------------------
// Masked-token training

/// Defaults are tuned for the synthetic corpus at d = 32, L = 4: with 0.02
/// initialization the loss sits on a unigram plateau until attention learns
/// to find neighbours, and how soon that happens depends mostly on the number
/// of supervised predictions per step, hence the large mask rate.
struct TrainOptions {
    std::size_t steps = 2000;
    double mask_prob = 0.3;
    double learn_rate = 2e-3;
    std::size_t batch_size = 16;
    /// Linear learning-rate ramp over the first steps.
    std::size_t warmup_steps = 100;
    std::uint64_t seed = 1;
    std::size_t mask_token = kMaskToken;
    /// Only positions holding ids >= this are eligible for masking.
    std::size_t first_maskable = kFirstSymbol;
};

struct TrainResult {
    Model model;
    std::vector<double> losses; ///< mean batch loss per step
};

/// Masked-token cross-entropy for one sequence with tied output embeddings.
/// Adds `scale` times the parameter gradient into `grads` when non-null.
inline double mlm_loss(const Model& model, const TokenSequence& masked_input, const std::vector<std::size_t>& positions,
                       const std::vector<std::size_t>& labels, Model* grads, double scale = 1.0) {
    const DiagnosticHooks hooks;
    const Matrix x = embed(model, masked_input.tokens, masked_input.segments);
    auto st = detail::run_forward(model, x, hooks, false);
    const Matrix& out = st.trace.hidden(model.layers.size());
    const std::size_t vocab = model.tok_emb.rows();
    const double inv_count = 1.0 / static_cast<double>(positions.size());
    double loss = 0.0;
    Matrix dout(out.rows(), out.cols());
    std::vector<double> logits(vocab);
    for (std::size_t m = 0; m < positions.size(); ++m) {
        const std::size_t i = positions[m];
        const auto h = out.row(i);
        double mx = -INFINITY;
        for (std::size_t v = 0; v < vocab; ++v) {
            logits[v] = dot(h, model.tok_emb.row(v));
            mx = std::max(mx, logits[v]);
        }
        double z = 0.0;
        for (double lg : logits) z += std::exp(lg - mx);
        loss += (std::log(z) + mx - logits[labels[m]]) * inv_count;
        if (!grads) continue;
        for (std::size_t v = 0; v < vocab; ++v) {
            double p = std::exp(logits[v] - mx) / z;
            if (v == labels[m]) p -= 1.0;
            const double g = p * inv_count * scale;
            if (g == 0.0) continue;
            auto erow = model.tok_emb.row(v);
            auto grow = grads->tok_emb.row(v);
            for (std::size_t k = 0; k < h.size(); ++k) {
                dout(i, k) += g * erow[k];
                grow[k] += g * h[k];
            }
        }
    }
    if (!grads) return loss;
    Matrix cot = dout;
    for (std::size_t l = model.layers.size(); l-- > 0;)
        cot = detail::layer_backward(model.layers[l], st.caches[l], cot, model.config, hooks, &grads->layers[l]);
    for (std::size_t i = 0; i < cot.rows(); ++i) {
        for (std::size_t k = 0; k < cot.cols(); ++k) {
            const double g = cot(i, k);
            grads->tok_emb(masked_input.tokens[i], k) += g;
            grads->pos_emb(i, k) += g;
            grads->seg_emb(masked_input.segments[i], k) += g;
        }
    }
    return loss;
}

/// Choose masked positions (at least one) and return the masked copy.
inline TokenSequence mask_sequence(const TokenSequence& seq, double mask_prob, std::size_t mask_token,
                                   std::size_t first_maskable, Philox& rng, std::vector<std::size_t>& positions,
                                   std::vector<std::size_t>& labels) {
    positions.clear();
    labels.clear();
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < seq.size(); ++i)
        if (seq.tokens[i] >= first_maskable) eligible.push_back(i);
    if (eligible.empty()) throw InvalidArgument("sequence has no maskable positions");
    for (std::size_t i : eligible)
        if (rng.uniform() < mask_prob) positions.push_back(i);
    if (positions.empty()) positions.push_back(eligible[rng.below(eligible.size())]);
    TokenSequence out = seq;
    for (std::size_t i : positions) {
        labels.push_back(seq.tokens[i]);
        out.tokens[i] = mask_token;
    }
    return out;
}

/// Adam on masked-token cross-entropy. Deterministic for a given seed.
inline TrainResult train_mlm(Model model, std::span<const TokenSequence> corpus, const TrainOptions& opt) {
    if (corpus.empty()) throw InvalidArgument("train_mlm: empty corpus");
    TrainResult result{std::move(model), {}};
    if (opt.steps == 0) return result;
    Model& m = result.model;
    Model grads = zero_model(m.config);
    Model first = zero_model(m.config);
    Model second = zero_model(m.config);
    auto params = named_parameters(m);
    auto gparams = named_parameters(grads);
    auto mparams = named_parameters(first);
    auto vparams = named_parameters(second);
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    Philox rng(opt.seed, 0x7A1);
    std::vector<std::size_t> positions, labels;
    const double scale = 1.0 / static_cast<double>(opt.batch_size);
    for (std::size_t step = 0; step < opt.steps; ++step) {
        for (auto& [name, g] : gparams) g->fill(0.0);
        double loss = 0.0;
        for (std::size_t b = 0; b < opt.batch_size; ++b) {
            const TokenSequence& seq = corpus[rng.below(corpus.size())];
            const TokenSequence masked =
                mask_sequence(seq, opt.mask_prob, opt.mask_token, opt.first_maskable, rng, positions, labels);
            loss += mlm_loss(m, masked, positions, labels, &grads, scale) * scale;
        }
        if (!std::isfinite(loss)) throw TrainingDiverged(step);
        result.losses.push_back(loss);
        const double t = static_cast<double>(step + 1);
        const double c1 = 1.0 / (1.0 - std::pow(beta1, t));
        const double c2 = 1.0 / (1.0 - std::pow(beta2, t));
        const double lr = step < opt.warmup_steps
                              ? opt.learn_rate * t / static_cast<double>(opt.warmup_steps)
                              : opt.learn_rate;
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto w = params[p].second->data();
            const auto g = gparams[p].second->data();
            auto mo = mparams[p].second->data();
            auto vo = vparams[p].second->data();
            for (std::size_t i = 0; i < w.size(); ++i) {
                mo[i] = beta1 * mo[i] + (1.0 - beta1) * g[i];
                vo[i] = beta2 * vo[i] + (1.0 - beta2) * g[i] * g[i];
                w[i] -= lr * (mo[i] * c1) / (std::sqrt(vo[i] * c2) + eps);
            }
        }
    }
    return result;
}

} // namespace attnid

#endif // ATTNID_TOY_TRANSFORMER_HPP
