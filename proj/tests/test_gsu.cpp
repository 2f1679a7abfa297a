// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "csknet/gsu.hpp"

namespace csk {
namespace {

Tensor random_tensor(const Shape& s, Rng& rng, double lo, double hi) {
    Tensor t(s);
    for (double& v : t.values()) v = uniform(rng, lo, hi);
    return t;
}

class GsuTest : public ::testing::Test {
protected:
    Rng rng{11};
    GatedSpectralUnit unit{"gsu", 4, rng};
};

TEST_F(GsuTest, OutputShapesAndParameterCount) {
    Tape tape;
    const Var fi = tape.constant(random_tensor({2, 4, 5, 5}, rng, -1, 1));
    const Var fo = tape.constant(random_tensor({2, 4, 5, 5}, rng, -1, 1));
    const GsuOutputs o = gsu_forward(tape, unit, fi, fo);
    EXPECT_EQ(o.fused.shape(), (Shape{2, 4, 5, 5}));
    std::vector<Parameter*> params;
    unit.collect(params);
    std::int64_t total = 0;
    for (const Parameter* p : params) total += static_cast<std::int64_t>(p->value.size());
    // 3 candidate convs (c*c*9 + c) and 3 gate convs (c*3c + c)
    EXPECT_EQ(total, 3 * (4 * 4 * 9 + 4) + 3 * (4 * 12 + 4));
}

TEST_F(GsuTest, RangesHoldForExtremeInputs) {
    for (const double scale : {0.1, 3.0, 8.0}) {
        Tape tape;
        const Var fi = tape.constant(random_tensor({2, 4, 4, 4}, rng, -scale, scale));
        const Var fo = tape.constant(random_tensor({2, 4, 4, 4}, rng, -scale, scale));
        const GsuOutputs o = gsu_forward(tape, unit, fi, fo);
        for (int k = 0; k < 3; ++k) {
            for (const double z : o.gates[static_cast<std::size_t>(k)].value().values()) {
                EXPECT_GE(z, 0.0);
                EXPECT_LE(z, 1.0);
            }
            for (const double h : o.candidates[static_cast<std::size_t>(k)].value().values()) {
                EXPECT_GE(h, -1.0);
                EXPECT_LE(h, 1.0);
            }
        }
        for (const double f : o.fused.value().values()) EXPECT_LT(std::abs(f), 3.0);
    }
}

TEST_F(GsuTest, ModerateInputsGiveOpenRanges) {
    Tape tape;
    const GsuOutputs o = gsu_forward(tape, unit, tape.constant(random_tensor({1, 4, 3, 3}, rng, -1, 1)),
                                     tape.constant(random_tensor({1, 4, 3, 3}, rng, -1, 1)));
    for (int k = 0; k < 3; ++k) {
        for (const double z : o.gates[static_cast<std::size_t>(k)].value().values()) {
            EXPECT_GT(z, 0.0);
            EXPECT_LT(z, 1.0);
        }
        for (const double h : o.candidates[static_cast<std::size_t>(k)].value().values()) {
            EXPECT_GT(h, -1.0);
            EXPECT_LT(h, 1.0);
        }
    }
}

TEST_F(GsuTest, ForcedGatesSelectCandidate) {
    const Tensor fi = random_tensor({1, 4, 3, 3}, rng, -1, 1);
    const Tensor fo = random_tensor({1, 4, 3, 3}, rng, -1, 1);
    for (std::size_t pick = 0; pick < 3; ++pick) {
        GateOverride g;
        for (std::size_t k = 0; k < 3; ++k) g.value[k] = k == pick ? 1.0 : 0.0;
        Tape tape;
        const GsuOutputs o = gsu_forward(tape, unit, tape.constant(fi), tape.constant(fo), &g);
        EXPECT_EQ(o.fused.value(), o.candidates[pick].value());
    }
}

TEST_F(GsuTest, ThirdCandidateSeesTheSum) {
    const Tensor fi = random_tensor({1, 4, 3, 3}, rng, -1, 1);
    const Tensor fo = random_tensor({1, 4, 3, 3}, rng, -1, 1);
    Tensor both = fi;
    both += fo;
    Tape tape;
    const GsuOutputs o = gsu_forward(tape, unit, tape.constant(fi), tape.constant(fo));
    const GsuOutputs only_sum = gsu_forward(tape, unit, tape.constant(both), tape.constant(Tensor(fi.shape())));
    EXPECT_EQ(o.candidates[2].value(), only_sum.candidates[2].value());
}

TEST_F(GsuTest, MismatchedInputsThrow) {
    Tape tape;
    EXPECT_THROW(gsu_forward(tape, unit, tape.constant(Tensor({1, 4, 3, 3})), tape.constant(Tensor({1, 4, 3, 4}))),
                 ShapeError);
    EXPECT_THROW(gsu_forward(tape, unit, tape.constant(Tensor({1, 3, 3, 3})), tape.constant(Tensor({1, 3, 3, 3}))),
                 ShapeError);
}

}  // namespace
}  // namespace csk
