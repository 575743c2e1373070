// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNID_TESTS_FIXTURES_HPP
#define ATTNID_TESTS_FIXTURES_HPP

#include "attnid/head_geometry.hpp"
#include "oracles.hpp"

namespace fixture {

/// Gaussian factors (full rank almost surely) and a softmax attention.
inline attnid::HeadSnapshot random_snapshot(std::size_t d_s, std::size_t d, std::size_t d_v, attnid::Philox& rng) {
    attnid::HeadSnapshot s;
    s.E = oracle::gaussian(d_s, d, rng);
    s.Wv = oracle::gaussian(d, d_v, rng);
    s.H = oracle::gaussian(d_v, d, rng);
    s.A = oracle::random_stochastic(d_s, rng);
    return s;
}

} // namespace fixture

#endif // ATTNID_TESTS_FIXTURES_HPP
