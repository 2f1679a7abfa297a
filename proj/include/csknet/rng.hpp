// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded randomness. The engine is std::mt19937_64 (portable, serializable);
// the distributions are hand-rolled because the std:: ones are
// implementation-defined and would break byte-for-byte reproducibility
// across standard libraries.

#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace csk {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) noexcept;

/// Uniform in [0, 1) with 53 random bits.
double uniform01(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
/// Uniform integer in [0, n), rejection sampled. n must be > 0.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);
/// Standard normal via Box-Muller (one draw per call, two uniforms consumed).
double normal(Rng& rng);

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

}  // namespace csk
