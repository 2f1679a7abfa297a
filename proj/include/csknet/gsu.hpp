// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Gated Spectral Unit. Three tanh candidates (IR, EO, IR + EO) are blended by
// three sigmoid gates, each computed from the concatenation
// [F_I, F_O, F_I + F_O]:
//
//   h1 = tanh(W1 * F_I)   h2 = tanh(W2 * F_O)   h3 = tanh(W3 * (F_I + F_O))
//   Zk = sigmoid(Wzk * [F_I, F_O, F_I + F_O])
//   F_fuse = Z1 h1 + Z2 h2 + Z3 h3

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "csknet/layers.hpp"

namespace csk {

class GatedSpectralUnit {
public:
    GatedSpectralUnit() = default;
    /// Candidate convs are 3x3 (padding 1); gate convs are 1x1 over 3c inputs.
    GatedSpectralUnit(const std::string& prefix, std::int64_t channels, Rng& rng);

    [[nodiscard]] std::int64_t channels() const noexcept { return channels_; }
    void collect(std::vector<Parameter*>& out);

    std::array<Parameter, 3> candidate_weight;
    std::array<Parameter, 3> candidate_bias;
    std::array<Parameter, 3> gate_weight;
    std::array<Parameter, 3> gate_bias;

private:
    std::int64_t channels_ = 0;
};

/// Test hook: replaces gate Zk by a constant field when set.
struct GateOverride {
    std::array<std::optional<double>, 3> value;
};

struct GsuOutputs {
    Var fused;
    std::array<Var, 3> gates;
    std::array<Var, 3> candidates;
};

GsuOutputs gsu_forward(Tape& tape, GatedSpectralUnit& unit, Var f_ir, Var f_eo,
                       const GateOverride* override_gates = nullptr);

}  // namespace csk
