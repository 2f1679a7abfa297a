// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Mixed feature exchange between the EO and IR encoder branches: channel
// exchange driven by each branch's BN scale, and a fixed alternating-column
// spatial swap. Both are pure routing; no value is ever synthesized.

#pragma once

#include <array>
#include <span>
#include <utility>

#include "csknet/ops.hpp"

namespace csk {

inline constexpr int kEncoderStages = 5;

struct ExchangeConfig {
    /// Channel k of a branch is replaced when |gamma_k| < threshold.
    double threshold = 1e-2;
    /// Indexed by stage - 1.
    std::array<bool, kEncoderStages> channel_stages{true, true, true, true, true};
    std::array<bool, kEncoderStages> spatial_stages{false, false, false, true, true};

    static ExchangeConfig disabled() {
        ExchangeConfig c;
        c.channel_stages.fill(false);
        c.spatial_stages.fill(false);
        return c;
    }
};

/// 1 at odd width indices (exchanged), 0 at even ones.
Tensor exchange_mask(const Shape& shape);

/// Swaps the two branches wherever exchange_mask is 1.
std::pair<Var, Var> spatial_exchange(Var a, Var b);

/// a'[k] = b[k] if |gamma_a[k]| < threshold else a[k]; b' likewise from
/// gamma_b. The two directions are decided independently.
std::pair<Var, Var> channel_exchange(Var a, Var b, std::span<const double> gamma_a,
                                     std::span<const double> gamma_b, double threshold);

struct ExchangeResult {
    Var a;
    Var b;
    bool channel_applied = false;
    bool spatial_applied = false;
    int channels_from_b = 0;  // channels of a replaced by b
    int channels_from_a = 0;  // channels of b replaced by a
};

/// Channel exchange (if enabled for `stage`) followed by spatial exchange
/// (if enabled). Stage is 1-based.
ExchangeResult mixed_exchange(int stage, Var a, Var b, std::span<const double> gamma_a,
                              std::span<const double> gamma_b, const ExchangeConfig& config);

}  // namespace csk
