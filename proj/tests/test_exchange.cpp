// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "csknet/exchange.hpp"
#include "csknet/rng.hpp"

namespace csk {
namespace {

Tensor random_tensor(const Shape& s, Rng& rng) {
    Tensor t(s);
    for (double& v : t.values()) v = uniform(rng, -1.0, 1.0);
    return t;
}

TEST(ExchangeMaskTest, OddWidthIndicesAreOne) {
    const Tensor m = exchange_mask({1, 2, 2, 5});
    for (std::int64_t c = 0; c < 2; ++c)
        for (std::int64_t h = 0; h < 2; ++h)
            for (std::int64_t w = 0; w < 5; ++w) EXPECT_EQ(m.at(0, c, h, w), w % 2 == 1 ? 1.0 : 0.0);
}

TEST(SpatialExchangeTest, FourWideExample) {
    Tape tape;
    const Var a = tape.constant(Tensor({1, 1, 1, 4}, {10, 11, 12, 13}));
    const Var b = tape.constant(Tensor({1, 1, 1, 4}, {20, 21, 22, 23}));
    const auto [a2, b2] = spatial_exchange(a, b);
    EXPECT_EQ(a2.value(), Tensor({1, 1, 1, 4}, {10, 21, 12, 23}));
    EXPECT_EQ(b2.value(), Tensor({1, 1, 1, 4}, {20, 11, 22, 13}));
}

TEST(SpatialExchangeTest, InvolutionIsBitwise) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        Rng rng(mix_seed(3, s));
        const Shape shape{2, 3, 4, static_cast<std::int64_t>(1 + uniform_index(rng, 9))};
        Tape tape;
        const Tensor a = random_tensor(shape, rng);
        const Tensor b = random_tensor(shape, rng);
        const auto [a1, b1] = spatial_exchange(tape.constant(a), tape.constant(b));
        const auto [a2, b2] = spatial_exchange(a1, b1);
        EXPECT_EQ(a2.value(), a);
        EXPECT_EQ(b2.value(), b);
    }
}

TEST(SpatialExchangeTest, ShapeMismatchThrows) {
    Tape tape;
    EXPECT_THROW(spatial_exchange(tape.constant(Tensor({1, 1, 2, 2})), tape.constant(Tensor({1, 1, 2, 3}))),
                 ShapeError);
}

TEST(ChannelExchangeTest, SmallGammaChannelsComeFromPartner) {
    Tape tape;
    Rng rng(4);
    const Shape s{2, 4, 3, 3};
    const Tensor a = random_tensor(s, rng);
    const Tensor b = random_tensor(s, rng);
    const std::vector<double> ga{1.0, 0.001, -0.005, 0.5};
    const std::vector<double> gb{0.0, 1.0, 0.2, -0.009};
    const auto [a2, b2] = channel_exchange(tape.constant(a), tape.constant(b), ga, gb, 1e-2);
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t h = 0; h < s.h; ++h)
                for (std::int64_t w = 0; w < s.w; ++w) {
                    const bool a_small = std::abs(ga[static_cast<std::size_t>(c)]) < 1e-2;
                    const bool b_small = std::abs(gb[static_cast<std::size_t>(c)]) < 1e-2;
                    EXPECT_EQ(a2.value().at(n, c, h, w), (a_small ? b : a).at(n, c, h, w));
                    EXPECT_EQ(b2.value().at(n, c, h, w), (b_small ? a : b).at(n, c, h, w));
                }
}

TEST(ChannelExchangeTest, GammaLengthMismatchThrows) {
    Tape tape;
    const std::vector<double> g2{1.0, 1.0};
    const std::vector<double> g3{1.0, 1.0, 1.0};
    EXPECT_THROW(channel_exchange(tape.constant(Tensor({1, 3, 1, 1})), tape.constant(Tensor({1, 3, 1, 1})), g2, g3, 0.1),
                 ShapeError);
}

TEST(MixedExchangeTest, DefaultStagesAndCounts) {
    Tape tape;
    Rng rng(5);
    const Shape s{1, 3, 2, 4};
    const Var a = tape.constant(random_tensor(s, rng));
    const Var b = tape.constant(random_tensor(s, rng));
    const std::vector<double> ga{0.0, 1.0, 1.0};
    const std::vector<double> gb{1.0, 0.001, 0.002};
    const ExchangeConfig cfg;
    const ExchangeResult r2 = mixed_exchange(2, a, b, ga, gb, cfg);
    EXPECT_TRUE(r2.channel_applied);
    EXPECT_FALSE(r2.spatial_applied);
    EXPECT_EQ(r2.channels_from_b, 1);
    EXPECT_EQ(r2.channels_from_a, 2);
    const ExchangeResult r5 = mixed_exchange(5, a, b, ga, gb, cfg);
    EXPECT_TRUE(r5.spatial_applied);
    EXPECT_THROW(mixed_exchange(0, a, b, ga, gb, cfg), std::out_of_range);
    EXPECT_THROW(mixed_exchange(6, a, b, ga, gb, cfg), std::out_of_range);
}

TEST(MixedExchangeTest, DisabledIsIdentity) {
    Tape tape;
    Rng rng(6);
    const Tensor a = random_tensor({1, 2, 2, 2}, rng);
    const Tensor b = random_tensor({1, 2, 2, 2}, rng);
    const std::vector<double> g{0.0, 0.0};
    for (int stage = 1; stage <= kEncoderStages; ++stage) {
        const ExchangeResult r = mixed_exchange(stage, tape.constant(a), tape.constant(b), g, g, ExchangeConfig::disabled());
        EXPECT_EQ(r.a.value(), a);
        EXPECT_EQ(r.b.value(), b);
    }
}

}  // namespace
}  // namespace csk
