// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include "csknet/gsu.hpp"

#include <fmt/format.h>

namespace csk {

GatedSpectralUnit::GatedSpectralUnit(const std::string& prefix, std::int64_t channels, Rng& rng)
    : channels_(channels) {
    for (int k = 0; k < 3; ++k) {
        const std::string p = fmt::format("{}.candidate{}", prefix, k + 1);
        candidate_weight[k] = make_conv_weight(p + ".weight", channels, channels, 3, rng);
        candidate_bias[k] = make_bias(p + ".bias", channels, 9 * channels, rng);
    }
    for (int k = 0; k < 3; ++k) {
        const std::string p = fmt::format("{}.gate{}", prefix, k + 1);
        gate_weight[k] = make_conv_weight(p + ".weight", channels, 3 * channels, 1, rng);
        gate_bias[k] = make_bias(p + ".bias", channels, 3 * channels, rng);
    }
}

void GatedSpectralUnit::collect(std::vector<Parameter*>& out) {
    for (int k = 0; k < 3; ++k) {
        out.push_back(&candidate_weight[k]);
        out.push_back(&candidate_bias[k]);
    }
    for (int k = 0; k < 3; ++k) {
        out.push_back(&gate_weight[k]);
        out.push_back(&gate_bias[k]);
    }
}

GsuOutputs gsu_forward(Tape& tape, GatedSpectralUnit& unit, Var f_ir, Var f_eo,
                       const GateOverride* override_gates) {
    require_same_shape(f_ir.shape(), f_eo.shape(), "gsu_forward F_I vs F_O");
    if (f_ir.shape().c != unit.channels()) {
        throw ShapeError(fmt::format("gsu_forward: features have {} channels, unit expects {}",
                                     f_ir.shape().c, unit.channels()));
    }
    Var both = add(f_ir, f_eo);
    const std::array<Var, 3> inputs{f_ir, f_eo, both};
    const Var concat = concat_channels(inputs);

    GsuOutputs out;
    for (std::size_t k = 0; k < 3; ++k) {
        out.candidates[k] = tanh(conv2d(inputs[k], tape.param(unit.candidate_weight[k]),
                                        tape.param(unit.candidate_bias[k]), 1, 1));
        if (override_gates && override_gates->value[k]) {
            out.gates[k] = tape.constant(Tensor(f_ir.shape(), *override_gates->value[k]));
        } else {
            out.gates[k] = sigmoid(
                conv2d(concat, tape.param(unit.gate_weight[k]), tape.param(unit.gate_bias[k]), 1, 0));
        }
    }
    out.fused = add(add(mul(out.gates[0], out.candidates[0]), mul(out.gates[1], out.candidates[1])),
                    mul(out.gates[2], out.candidates[2]));
    return out;
}

}  // namespace csk
