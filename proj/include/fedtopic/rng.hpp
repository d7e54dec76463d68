// Copyright (c) 2026 The fedtopic authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

namespace fedtopic {

// xoshiro256++ (Blackman & Vigna), seeded through splitmix64. The generator
// and every distribution below are implemented here rather than taken from
// <random> so that a given seed produces the same stream on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform double in [0, 1) with 53 random bits.
    double uniform01();

    // Uniform integer in [0, n); rejection-sampled, no modulo bias.
    std::uint64_t uniform_below(std::uint64_t n);

    // Uniform integer in [lo, hi], inclusive bounds.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    // Standard normal via the Marsaglia polar method.
    double normal();

    // Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 uses the boost
    // Gamma(shape+1) * U^(1/shape).
    double gamma(double shape);

    // Symmetric Dirichlet(alpha) of dimension n; the result sums to 1.
    std::vector<double> dirichlet_symmetric(double alpha, std::size_t n);

    // Index draw by inverse CDF over unnormalized nonnegative weights.
    std::size_t categorical(const std::vector<double>& cdf);

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_[4];
};

// Builds the cumulative sums used with Rng::categorical.
std::vector<double> cumulative_sums(const std::vector<double>& weights);

} // namespace fedtopic
