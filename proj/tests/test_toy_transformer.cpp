// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#include "attnid/corpus.hpp"
#include "attnid/toy_transformer.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace attnid;

namespace {

ModelConfig small_config(std::uint64_t seed = 1, std::size_t layers = 2) {
    ModelConfig c;
    c.layers = layers;
    c.heads = 2;
    c.dim = 16;
    c.ff_dim = 32;
    c.vocab = 67;
    c.max_len = 16;
    c.seed = seed;
    return c;
}

/// Init weights are tiny; scale them up so every nonlinearity is exercised.
Model lively_model(std::uint64_t seed, std::size_t layers = 2) {
    Model m = init(small_config(seed, layers));
    for (auto& [name, p] : named_parameters(m))
        if (!name.ends_with("_gain") && !name.ends_with("_bias"))
            for (double& v : p->data()) v *= 25.0;
    return m;
}

TokenSequence sample_sequence(std::size_t len, std::uint64_t seed) {
    return MarkovCorpus(seed).generate(1, len, seed).front();
}

double max_rel_error(const Matrix& analytic, const Matrix& fd) {
    return max_abs_diff(analytic, fd) / max_abs(analytic);
}

} // namespace

TEST(Config, Validation) {
    ModelConfig c = small_config();
    c.heads = 3;
    EXPECT_THROW(init(c), InvalidArgument);
    c.heads = 0;
    EXPECT_THROW(init(c), InvalidArgument);
}

TEST(Init, DeterministicAndShaped) {
    const Model a = init(small_config(7));
    const Model b = init(small_config(7));
    const Model c = init(small_config(8));
    auto pa = named_parameters(a), pb = named_parameters(b), pc = named_parameters(c);
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(*pa[i].second, *pb[i].second) << pa[i].first;
        any_diff = any_diff || !(*pa[i].second == *pc[i].second);
    }
    EXPECT_TRUE(any_diff);
    EXPECT_EQ(a.layers[0].Wq[0].rows(), 16u);
    EXPECT_EQ(a.layers[0].Wq[0].cols(), 8u);
    EXPECT_EQ(a.layers[0].H[1].rows(), 8u);
    EXPECT_EQ(a.layers[0].ln1_gain, Matrix::constant(1, 16, 1.0));
    EXPECT_EQ(a.layers[0].b1, Matrix(1, 32));
}

TEST(Init, StandardDeviation) {
    ModelConfig c = small_config(3);
    c.vocab = 400;
    const Model m = init(c);
    double sq = 0.0;
    for (double v : m.tok_emb.data()) sq += v * v;
    EXPECT_NEAR(std::sqrt(sq / static_cast<double>(m.tok_emb.size())), 0.02, 0.001);
}

TEST(Model, OutputProjectionStacksHeadSlices) {
    const Model m = init(small_config(2));
    const Matrix full = m.output_projection(1);
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t r = 0; r < 8; ++r)
            for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(full(h * 8 + r, k), m.layers[0].H[h](r, k));
}

TEST(Embed, Examples) {
    const Model zero = zero_model(small_config());
    const std::vector<std::size_t> toks{5, 5, 9}, segs{0, 0, 1};
    EXPECT_EQ(embed(zero, toks, segs), Matrix(3, 16));

    const Model m = init(small_config(4));
    const Matrix x = embed(m, toks, segs);
    for (std::size_t k = 0; k < 16; ++k) {
        EXPECT_EQ(x(2, k), m.tok_emb(9, k) + m.pos_emb(2, k) + m.seg_emb(1, k));
    }
    EXPECT_NE(max_abs_diff(Matrix(1, 16, std::vector<double>(x.row(0).begin(), x.row(0).end())),
                           Matrix(1, 16, std::vector<double>(x.row(1).begin(), x.row(1).end()))),
              0.0);
    EXPECT_THROW(embed(m, std::vector<std::size_t>{67}, std::vector<std::size_t>{0}), InvalidArgument);
    EXPECT_THROW(embed(m, std::vector<std::size_t>{3}, std::vector<std::size_t>{2}), InvalidArgument);
    EXPECT_THROW(embed(m, std::vector<std::size_t>(17, 3), std::vector<std::size_t>(17, 0)), InvalidArgument);
}

TEST(Forward, ZeroDepthCarriesInputOnly) {
    ModelConfig c = small_config(1, 0);
    const Model m = init(c);
    const auto seq = sample_sequence(6, 1);
    const auto t = forward(m, seq);
    EXPECT_EQ(t.layers(), 0u);
    EXPECT_TRUE(t.snapshots.empty());
    EXPECT_EQ(t.X, embed(m, seq.tokens, seq.segments));
}

TEST(Forward, IdentityAttentionHook) {
    const Model m = lively_model(3);
    DiagnosticHooks hooks;
    hooks.identity_attention = true;
    const auto t = forward(m, sample_sequence(6, 2), hooks);
    for (const auto& layer : t.attention)
        for (const auto& a : layer) EXPECT_EQ(a, Matrix::identity(6));
}

TEST(Forward, SnapshotsRecomputeAttention) {
    const Model m = lively_model(5);
    const auto t = forward(m, sample_sequence(6, 3));
    ASSERT_EQ(t.snapshots.size(), 4u);
    ASSERT_EQ(t.layers(), 2u);
    for (const auto& s : t.snapshots) {
        const auto& p = m.layers[s.layer - 1];
        Matrix logits = matmul_nt(matmul(s.E, p.Wq[s.head]), matmul(s.E, p.Wk[s.head]));
        logits *= 1.0 / std::sqrt(8.0);
        EXPECT_LE(max_abs_diff(softmax_rows(logits), s.A), 1e-12);
        EXPECT_EQ(s.A, t.attention[s.layer - 1][s.head]);
        EXPECT_EQ(s.E, t.hidden(s.layer - 1));
        for (std::size_t i = 0; i < 6; ++i) {
            double sum = 0.0;
            for (double v : s.A.row(i)) sum += v;
            EXPECT_NEAR(sum, 1.0, 1e-10);
        }
    }
}

TEST(Forward, Deterministic) {
    const Model m = lively_model(6);
    const auto seq = sample_sequence(7, 4);
    const auto a = forward(m, seq);
    const auto b = forward(m, seq);
    for (std::size_t l = 1; l <= 2; ++l) EXPECT_EQ(a.hidden(l), b.hidden(l));
    EXPECT_EQ(jacobian(m, seq.tokens, seq.segments, 2, 3), jacobian(m, seq.tokens, seq.segments, 2, 3));
}

TEST(Jacobian, LayerZeroIsBlockIdentity) {
    const Model m = lively_model(1);
    const auto seq = sample_sequence(5, 1);
    for (std::size_t j = 0; j < 5; ++j) {
        const Matrix jac = jacobian(m, seq.tokens, seq.segments, 0, j);
        for (std::size_t k = 0; k < 16; ++k)
            for (std::size_t c = 0; c < 5 * 16; ++c) EXPECT_EQ(jac(k, c), c == j * 16 + k ? 1.0 : 0.0);
    }
}

TEST(Jacobian, MatchesFiniteDifferences) {
    for (std::uint64_t seed : {1u, 2u}) {
        const Model m = lively_model(seed);
        const auto seq = sample_sequence(8, seed);
        for (std::size_t layer : {1u, 2u}) {
            for (std::size_t j : {0u, 5u}) {
                const Matrix a = jacobian(m, seq.tokens, seq.segments, layer, j);
                const Matrix f = jacobian_fd(m, seq.tokens, seq.segments, layer, j, 1e-5);
                EXPECT_LE(max_rel_error(a, f), 1e-4) << "layer " << layer << " target " << j;
            }
        }
    }
}

TEST(Jacobian, LinearVariantIsExplicitProduct) {
    // With layer norm and gelu linearized and attention fixed, layer l maps
    // E to (E + sum_h A_h E Wv_h H_h)(I + W1 W2) + const.
    const Model m = lively_model(9, 2);
    const auto seq = sample_sequence(5, 9);
    Philox rng(17);
    DiagnosticHooks hooks;
    hooks.linear = true;
    for (std::size_t l = 1; l <= 2; ++l)
        for (std::size_t h = 0; h < 2; ++h) hooks.attention_override[{l, h}] = oracle::random_stochastic(5, rng);

    const std::size_t n = 5, d = 16;
    // Full (n*d) x (n*d) Jacobian of vec(e^l) w.r.t. vec(X), row-major vec.
    Matrix total = Matrix::identity(n * d);
    for (std::size_t l = 1; l <= 2; ++l) {
        const auto& p = m.layers[l - 1];
        const Matrix ffn = oracle::naive_matmul(p.W1, p.W2);
        Matrix step(n * d, n * d);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < n; ++i) {
                Matrix block(d, d); // d e_j / d x_i, as [out k][in m]
                if (i == j) block = Matrix::identity(d);
                for (std::size_t h = 0; h < 2; ++h) {
                    const double a = hooks.attention_override.at({l, h})(j, i);
                    const Matrix wh = oracle::naive_matmul(p.Wv[h], p.H[h]);
                    for (std::size_t k = 0; k < d; ++k)
                        for (std::size_t mm = 0; mm < d; ++mm) block(k, mm) += a * wh(mm, k);
                }
                // then through (I + W1 W2): out_k = y_k + sum_q y_q ffn(q, k)
                Matrix withffn = block;
                for (std::size_t k = 0; k < d; ++k)
                    for (std::size_t mm = 0; mm < d; ++mm)
                        for (std::size_t q = 0; q < d; ++q) withffn(k, mm) += ffn(q, k) * block(q, mm);
                for (std::size_t k = 0; k < d; ++k)
                    for (std::size_t mm = 0; mm < d; ++mm) step(j * d + k, i * d + mm) = withffn(k, mm);
            }
        total = oracle::naive_matmul(step, total);
    }
    for (std::size_t j = 0; j < n; ++j) {
        const Matrix jac = jacobian(m, seq.tokens, seq.segments, 2, j, hooks);
        double worst = 0.0, scale = 0.0;
        for (std::size_t k = 0; k < d; ++k)
            for (std::size_t c = 0; c < n * d; ++c) {
                worst = std::max(worst, std::abs(jac(k, c) - total(j * d + k, c)));
                scale = std::max(scale, std::abs(total(j * d + k, c)));
            }
        EXPECT_LE(worst, 1e-10 * scale);
    }
}

TEST(Jacobian, IdentityAttentionZeroFfnIsLocal) {
    const Model m = lively_model(4, 1);
    const auto seq = sample_sequence(6, 4);
    DiagnosticHooks hooks;
    hooks.identity_attention = true;
    hooks.zero_ffn = true;
    for (std::size_t j = 0; j < 6; ++j) {
        const Matrix jac = jacobian(m, seq.tokens, seq.segments, 1, j, hooks);
        for (std::size_t k = 0; k < 16; ++k) {
            for (std::size_t c = 0; c < 6 * 16; ++c) {
                if (c / 16 != j) {
                    EXPECT_EQ(jac(k, c), 0.0);
                }
            }
        }
    }
}

TEST(Jacobian, RejectsBadArguments) {
    const Model m = lively_model(1);
    const auto seq = sample_sequence(5, 1);
    EXPECT_THROW(jacobian(m, seq.tokens, seq.segments, 3, 0), InvalidArgument);
    EXPECT_THROW(jacobian(m, seq.tokens, seq.segments, 1, 5), InvalidArgument);
    EXPECT_THROW(jacobian_fd(m, seq.tokens, seq.segments, 1, 0, 0.0), InvalidArgument);
}

TEST(MlmLoss, ParameterGradientsMatchFiniteDifferences) {
    Model m = lively_model(3);
    m.config.max_len = 16;
    const auto seq = sample_sequence(10, 3);
    const std::vector<std::size_t> pos{2, 6}, lab{seq.tokens[2], seq.tokens[6]};
    TokenSequence masked = seq;
    masked.tokens[2] = kMaskToken;
    masked.tokens[6] = kMaskToken;
    Model g = zero_model(m.config);
    mlm_loss(m, masked, pos, lab, &g);
    auto params = named_parameters(m);
    auto grads = named_parameters(g);
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto w = params[p].second->data();
        const auto gd = grads[p].second->data();
        const std::size_t stride = std::max<std::size_t>(1, w.size() / 7);
        for (std::size_t i = 0; i < w.size(); i += stride) {
            const double orig = w[i];
            w[i] = orig + 1e-6;
            const double lp = mlm_loss(m, masked, pos, lab, nullptr);
            w[i] = orig - 1e-6;
            const double lm = mlm_loss(m, masked, pos, lab, nullptr);
            w[i] = orig;
            EXPECT_NEAR(gd[i], (lp - lm) / 2e-6, 1e-6 * (1.0 + std::abs(gd[i]))) << params[p].first << "[" << i << "]";
        }
    }
}

TEST(Train, ZeroStepsLeavesModelUnchanged) {
    const Model m = init(small_config(2));
    const auto corpus = MarkovCorpus(2).generate(10, 8, 2);
    TrainOptions opt;
    opt.steps = 0;
    const auto r = train_mlm(m, corpus, opt);
    auto a = named_parameters(m), b = named_parameters(r.model);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].second, *b[i].second);
    EXPECT_TRUE(r.losses.empty());
}

TEST(Train, ShortRunReducesLossDeterministically) {
    ModelConfig c = small_config(5);
    const Model m = init(c);
    const auto corpus = MarkovCorpus(5).generate(64, 12, 5);
    TrainOptions opt;
    opt.steps = 150;
    opt.learn_rate = 3e-3;
    opt.seed = 5;
    const auto r = train_mlm(m, corpus, opt);
    ASSERT_EQ(r.losses.size(), 150u);
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
        first += r.losses[i];
        last += r.losses[r.losses.size() - 1 - i];
    }
    EXPECT_LT(last, first);
    const auto again = train_mlm(m, corpus, opt);
    EXPECT_EQ(again.losses, r.losses);
    EXPECT_EQ(again.model.tok_emb, r.model.tok_emb);
}

TEST(Train, Preconditions) {
    TrainOptions opt;
    EXPECT_THROW(train_mlm(init(small_config()), std::vector<TokenSequence>{}, opt), InvalidArgument);
}

TEST(Corpus, ShapeAndDeterminism) {
    const MarkovCorpus c(3);
    EXPECT_EQ(c.vocab_size(), 67u);
    const auto a = c.generate(5, 10, 1);
    const auto b = c.generate(5, 10, 1);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(a[i].tokens, b[i].tokens);
        ASSERT_EQ(a[i].size(), 10u);
        EXPECT_EQ(a[i].tokens.front(), kClsToken);
        EXPECT_EQ(a[i].tokens.back(), kSepToken);
        for (std::size_t k = 1; k + 1 < 10; ++k) EXPECT_GE(a[i].tokens[k], kFirstSymbol);
    }
    const auto labels = token_type_labels(a[0].tokens);
    EXPECT_EQ(labels.front(), "CLS");
    EXPECT_EQ(labels.back(), "SEP");
}
