// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNID_CORPUS_HPP
#define ATTNID_CORPUS_HPP

#include "attnid/errors.hpp"
#include "attnid/rng.hpp"

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace attnid {

inline constexpr std::size_t kClsToken = 0;
inline constexpr std::size_t kSepToken = 1;
inline constexpr std::size_t kMaskToken = 2;
inline constexpr std::size_t kFirstSymbol = 3;

struct TokenSequence {
    std::vector<std::size_t> tokens;
    std::vector<std::size_t> segments;

    std::size_t size() const noexcept { return tokens.size(); }
};

/// Synthetic text: [CLS] s_1 ... s_n [SEP] where s_k is drawn from a sparse
/// second-order Markov chain. Every symbol b owns a pool of `kPool`
/// candidate successors; the context (a, b) allows `kBranching` of them,
/// chosen and ranked per context, with probabilities 0.6 / 0.3 / 0.1. The
/// previous symbol therefore narrows the next one to a handful of options and
/// the one before that decides among them.
class MarkovCorpus {
public:
    static constexpr std::size_t kBranching = 3;
    static constexpr std::size_t kPool = 4;

    explicit MarkovCorpus(std::uint64_t seed, std::size_t symbols = 64) : symbols_(symbols) {
        if (symbols < kPool) throw InvalidArgument("MarkovCorpus needs at least 4 symbols");
        Philox rng(seed, 0xC0DE);
        auto distinct = [&](std::size_t count, std::size_t range) {
            std::vector<std::size_t> picked;
            while (picked.size() < count) {
                const std::size_t cand = rng.below(range);
                if (std::find(picked.begin(), picked.end(), cand) == picked.end()) picked.push_back(cand);
            }
            return picked;
        };
        std::vector<std::vector<std::size_t>> pools(symbols);
        for (auto& pool : pools) pool = distinct(kPool, symbols);
        successors_.resize(symbols * symbols);
        for (std::size_t a = 0; a < symbols; ++a) {
            for (std::size_t b = 0; b < symbols; ++b) {
                const auto pick = distinct(kBranching, kPool);
                for (std::size_t k = 0; k < kBranching; ++k) successors_[a * symbols + b][k] = pools[b][pick[k]];
            }
        }
    }

    std::size_t symbols() const noexcept { return symbols_; }
    std::size_t vocab_size() const noexcept { return symbols_ + kFirstSymbol; }

    /// One sequence of total length `len` (>= 3) including CLS and SEP.
    TokenSequence sample(std::size_t len, Philox& rng) const {
        if (len < 3) throw InvalidArgument("sequence length must be at least 3");
        TokenSequence seq;
        seq.tokens.reserve(len);
        seq.tokens.push_back(kClsToken);
        const std::size_t body = len - 2;
        std::size_t prev2 = rng.below(symbols_);
        std::size_t prev1 = rng.below(symbols_);
        for (std::size_t k = 0; k < body; ++k) {
            std::size_t next;
            if (k == 0) next = prev2;
            else if (k == 1) next = prev1;
            else {
                const double u = rng.uniform();
                const std::size_t pick = u < 0.6 ? 0 : (u < 0.9 ? 1 : 2);
                next = successors_[prev2 * symbols_ + prev1][pick];
                prev2 = prev1;
                prev1 = next;
            }
            seq.tokens.push_back(next + kFirstSymbol);
        }
        seq.tokens.push_back(kSepToken);
        seq.segments.assign(len, 0);
        return seq;
    }

    std::vector<TokenSequence> generate(std::size_t count, std::size_t len, std::uint64_t seed) const {
        Philox rng(seed, 0x5E0);
        std::vector<TokenSequence> out;
        out.reserve(count);
        for (std::size_t i = 0; i < count; ++i) out.push_back(sample(len, rng));
        return out;
    }

private:
    std::size_t symbols_;
    std::vector<std::array<std::size_t, kBranching>> successors_;
};

/// CLS / SEP / MASK / other, for token-group statistics.
inline std::vector<std::string> token_type_labels(const std::vector<std::size_t>& tokens) {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (std::size_t t : tokens) {
        switch (t) {
        case kClsToken: out.emplace_back("CLS"); break;
        case kSepToken: out.emplace_back("SEP"); break;
        case kMaskToken: out.emplace_back("MASK"); break;
        default: out.emplace_back("other");
        }
    }
    return out;
}

} // namespace attnid

#endif // ATTNID_CORPUS_HPP
