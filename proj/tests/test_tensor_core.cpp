// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "csknet/gradcheck.hpp"
#include "csknet/ops.hpp"
#include "csknet/parallel.hpp"
#include "csknet/rng.hpp"

namespace csk {
namespace {

Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(s);
    for (double& v : t.values()) v = uniform(rng, lo, hi);
    return t;
}

TEST(TensorTest, ValueCountMatchesShape) {
    const Tensor t({2, 3, 4, 5});
    EXPECT_EQ(t.size(), 120u);
    EXPECT_THROW(Tensor({1, 1, 2, 2}, std::vector<double>(3)), ShapeError);
}

TEST(TensorTest, DetectsNonFinite) {
    Tensor t({1, 1, 1, 2}, 1.0);
    EXPECT_TRUE(t.all_finite());
    t[1] = std::nan("");
    EXPECT_FALSE(t.all_finite());
}

TEST(Conv2dTest, IdentityKernelReturnsInput) {
    Tape tape;
    Rng rng(1);
    const Tensor x = random_tensor({1, 1, 3, 3}, rng);
    const Var y = conv2d(tape.constant(x), tape.constant(Tensor({1, 1, 1, 1}, 1.0)), std::nullopt, 1, 0);
    EXPECT_EQ(y.value(), x);
}

TEST(Conv2dTest, FullWindowSum) {
    Tape tape;
    const Var y = conv2d(tape.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})),
                         tape.constant(Tensor({1, 1, 2, 2}, 1.0)), std::nullopt, 1, 0);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(y.value()[0], 10.0);
}

TEST(Conv2dTest, OutputExtent) {
    Tape tape;
    const Var y = conv2d(tape.constant(Tensor({2, 3, 9, 7})), tape.constant(Tensor({4, 3, 3, 3})), std::nullopt, 2, 1);
    EXPECT_EQ(y.shape(), (Shape{2, 4, 5, 4}));
}

TEST(Conv2dTest, ChannelMismatchThrows) {
    Tape tape;
    EXPECT_THROW(conv2d(tape.constant(Tensor({1, 2, 4, 4})), tape.constant(Tensor({1, 3, 3, 3})), std::nullopt, 1, 1),
                 ShapeError);
}

TEST(Conv2dTest, BitwiseDeterministicAcrossThreadCounts) {
    Rng rng(5);
    const Tensor x = random_tensor({4, 3, 8, 8}, rng);
    const Tensor w = random_tensor({5, 3, 3, 3}, rng);
    const auto run = [&](int threads) {
        set_num_threads(threads);
        Tape tape;
        const Var wx = tape.leaf(w);
        const Var y = conv2d(tape.leaf(x), wx, std::nullopt, 1, 1);
        tape.backward(sum(y));
        return std::make_pair(y.value(), wx.grad());
    };
    const auto one = run(1);
    EXPECT_EQ(one, run(1));
    const auto four = run(4);
    EXPECT_EQ(four, run(4));
    set_num_threads(1);
}

TEST(BatchNormTest, EvalWithUnitStatsIsIdentity) {
    Tape tape;
    Rng rng(2);
    const Tensor x = random_tensor({2, 3, 2, 2}, rng);
    BatchNormStats stats{std::vector<double>(3, 0.0), std::vector<double>(3, 1.0)};
    const Var y = batch_norm(tape.constant(x), tape.constant(Tensor({1, 3, 1, 1}, 1.0)),
                             tape.constant(Tensor({1, 3, 1, 1}, 0.0)), stats, BnMode::kEval);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.value()[i], x[i], 1e-5);
}

TEST(BatchNormTest, ZeroGammaGivesConstantBeta) {
    Tape tape;
    Rng rng(3);
    BatchNormStats stats{std::vector<double>(2, 0.0), std::vector<double>(2, 1.0)};
    const Var y = batch_norm(tape.constant(random_tensor({2, 2, 3, 3}, rng)), tape.constant(Tensor({1, 2, 1, 1}, {0.0, 1.0})),
                             tape.constant(Tensor({1, 2, 1, 1}, {0.7, 0.0})), stats, BnMode::kTrain);
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t h = 0; h < 3; ++h)
            for (std::int64_t w = 0; w < 3; ++w) EXPECT_EQ(y.value().at(n, 0, h, w), 0.7);
}

TEST(BatchNormTest, TrainModeUpdatesRunningStats) {
    Tape tape;
    BatchNormStats stats{{0.0}, {1.0}};
    const Tensor x({2, 1, 1, 2}, {1.0, 2.0, 3.0, 4.0});
    batch_norm(tape.constant(x), tape.constant(Tensor({1, 1, 1, 1}, 1.0)), tape.constant(Tensor({1, 1, 1, 1}, 0.0)),
               stats, BnMode::kTrain);
    EXPECT_NEAR(stats.mean[0], 0.1 * 2.5, 1e-12);
    // unbiased variance of {1,2,3,4} is 5/3
    EXPECT_NEAR(stats.var[0], 0.9 + 0.1 * (5.0 / 3.0), 1e-12);
}

TEST(BatchNormTest, SingleValuePerChannelThrowsInTrainMode) {
    Tape tape;
    BatchNormStats stats{{0.0}, {1.0}};
    EXPECT_THROW(batch_norm(tape.constant(Tensor({1, 1, 1, 1}, 2.0)), tape.constant(Tensor({1, 1, 1, 1}, 1.0)),
                            tape.constant(Tensor({1, 1, 1, 1}, 0.0)), stats, BnMode::kTrain),
                 NumericError);
}

TEST(PointwiseTest, KnownValuesAndRanges) {
    Tape tape;
    const Var x = tape.constant(Tensor({1, 1, 1, 5}, {0.0, -50.0, 50.0, -3.0, 3.0}));
    const Var t = tanh(x);
    const Var s = sigmoid(x);
    EXPECT_EQ(t.value()[0], 0.0);
    EXPECT_EQ(s.value()[0], 0.5);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_GE(t.value()[i], -1.0);
        EXPECT_LE(t.value()[i], 1.0);
        EXPECT_GE(s.value()[i], 0.0);
        EXPECT_LE(s.value()[i], 1.0);
    }
    EXPECT_TRUE(t.value().all_finite());
    EXPECT_TRUE(s.value().all_finite());
    EXPECT_EQ(relu(x).value()[1], 0.0);
}

TEST(SoftmaxTest, UniformLogitsGiveQuarter) {
    Tape tape;
    const Var p = softmax_channel(tape.constant(Tensor({1, 4, 2, 2}, 3.0)));
    for (const double v : p.value().values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(SoftmaxTest, SumsToOneAndLogMatches) {
    Tape tape;
    Rng rng(4);
    const Tensor x = random_tensor({3, 5, 4, 4}, rng, -30.0, 30.0);
    const Var p = softmax_channel(tape.constant(x));
    const Var lp = log_softmax_channel(tape.constant(x));
    const Shape& s = x.shape();
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t h = 0; h < s.h; ++h)
            for (std::int64_t w = 0; w < s.w; ++w) {
                double total = 0.0;
                for (std::int64_t c = 0; c < s.c; ++c) {
                    total += p.value().at(n, c, h, w);
                    if (p.value().at(n, c, h, w) > 1e-300)
                        EXPECT_NEAR(lp.value().at(n, c, h, w), std::log(p.value().at(n, c, h, w)), 1e-6);
                }
                EXPECT_NEAR(total, 1.0, 1e-6);
            }
}

TEST(StructuralOpsTest, ConcatShape) {
    Tape tape;
    const Var parts[] = {tape.constant(Tensor({2, 2, 3, 3})), tape.constant(Tensor({2, 3, 3, 3}))};
    EXPECT_EQ(concat_channels(parts).shape(), (Shape{2, 5, 3, 3}));
}

TEST(StructuralOpsTest, UpsampleNearestRepeatsBlocks) {
    Tape tape;
    const Var y = upsample_nearest(tape.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4})), 2);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
    const std::vector<double> want{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    EXPECT_EQ(std::vector<double>(y.value().values().begin(), y.value().values().end()), want);
}

TEST(StructuralOpsTest, UpsampleDownsampleRoundTripsShape) {
    Tape tape;
    const Var x = tape.constant(Tensor({2, 3, 8, 6}));
    EXPECT_EQ(avg_pool(upsample_nearest(x, 2), 2).shape(), x.shape());
    EXPECT_EQ(upsample_bilinear(avg_pool(x, 2), 2).shape(), x.shape());
}

TEST(StructuralOpsTest, SliceAndShapeErrors) {
    Tape tape;
    const Var x = tape.constant(Tensor({1, 4, 2, 6}));
    EXPECT_EQ(slice_channels(x, 1, 2).shape(), (Shape{1, 2, 2, 6}));
    EXPECT_EQ(slice_width(x, 3, 3).shape(), (Shape{1, 4, 2, 3}));
    EXPECT_THROW(slice_width(x, 4, 3), ShapeError);
    EXPECT_THROW(add(x, tape.constant(Tensor({1, 4, 2, 5}))), ShapeError);
}

TEST(BackwardTest, GradientOfSumIsOnes) {
    Tape tape;
    Rng rng(6);
    const Var x = tape.leaf(random_tensor({2, 2, 3, 3}, rng));
    tape.backward(sum(x));
    for (const double g : x.grad().values()) EXPECT_EQ(g, 1.0);
}

TEST(BackwardTest, LinearFunctionGradientIsInput) {
    Rng rng(7);
    const Tensor x = random_tensor({1, 2, 3, 3}, rng);
    Parameter w("w", random_tensor({1, 2, 3, 3}, rng));
    Tape tape;
    tape.backward(sum(mul(tape.param(w), tape.constant(x))));
    EXPECT_EQ(w.grad, x);
}

TEST(BackwardTest, SharedParameterGetsSummedGradient) {
    Rng rng(8);
    const Tensor xa = random_tensor({1, 1, 4, 4}, rng);
    const Tensor xb = random_tensor({1, 1, 4, 4}, rng);
    Parameter w("w", random_tensor({1, 1, 3, 3}, rng));
    const auto branch = [&](Tape& t, const Tensor& x) {
        return sum(tanh(conv2d(t.constant(x), t.param(w), std::nullopt, 1, 1)));
    };
    Tensor separate(w.value.shape());
    for (const Tensor* x : {&xa, &xb}) {
        w.zero_grad();
        Tape t;
        t.backward(branch(t, *x));
        separate += w.grad;
    }
    w.zero_grad();
    Tape t;
    t.backward(add(branch(t, xa), branch(t, xb)));
    for (std::size_t i = 0; i < separate.size(); ++i) EXPECT_NEAR(w.grad[i], separate[i], 1e-12);
}

TEST(BackwardTest, RepeatedCallsAccumulate) {
    Parameter w("w", Tensor({1, 1, 1, 1}, 2.0));
    for (int k = 0; k < 2; ++k) {
        Tape t;
        t.backward(scalar_mul(t.param(w), 3.0));
    }
    EXPECT_EQ(w.grad[0], 6.0);
}

TEST(BackwardTest, RejectsNonScalarAndForeignLoss) {
    Tape a;
    Tape b;
    EXPECT_THROW(a.backward(a.leaf(Tensor({1, 1, 1, 2}))), ShapeError);
    EXPECT_THROW(a.backward(b.leaf(Tensor({1, 1, 1, 1}))), std::invalid_argument);
}

TEST(FiniteDiffTest, SquareAtThree) {
    Tensor x({1, 1, 1, 1}, 3.0);
    Tensor* ptrs[] = {&x};
    const auto g = finite_diff_gradient([&] { return x[0] * x[0]; }, ptrs);
    EXPECT_NEAR(g[0][0], 6.0, 1e-6);
    EXPECT_EQ(x[0], 3.0);
}

TEST(FiniteDiffTest, ConstantHasZeroGradient) {
    Tensor x({1, 1, 2, 2}, 1.5);
    Tensor* ptrs[] = {&x};
    const auto g = finite_diff_gradient([] { return 4.0; }, ptrs);
    for (const double v : g[0].values()) EXPECT_EQ(v, 0.0);
}

TEST(GradCheckTest, PrimitiveOpsOverTenSeeds) {
    for (int s = 0; s < 10; ++s) {
        Rng rng(mix_seed(77, static_cast<std::uint64_t>(s)));
        const auto r = check_input_gradient(
            "conv2d",
            [](Tape&, std::span<const Var> v) { return tanh(conv2d(v[0], v[1], v[2], 1, 1)); },
            {random_tensor({2, 3, 8, 8}, rng), random_tensor({4, 3, 3, 3}, rng), random_tensor({1, 4, 1, 1}, rng)},
            static_cast<std::uint64_t>(s));
        EXPECT_TRUE(r.passed) << r.max_rel_error;
    }
}

TEST(GradCheckTest, DetectsAWrongGradient) {
    // A deliberately broken op: forward 2x, backward claims 3x.
    const auto broken = [](Tape& tape, std::span<const Var> v) {
        const Var x = v[0];
        Tensor out = x.value();
        for (double& e : out.values()) e *= 2.0;
        return tape.record(out, {x.id()}, [x](Tape& t, int self) {
            Tensor& g = t.grad_buffer(x.id());
            const Tensor& up = t.grad(self);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += 3.0 * up[i];
        });
    };
    Rng rng(9);
    const auto r = check_input_gradient("broken", broken, {random_tensor({1, 1, 2, 2}, rng)}, 1);
    EXPECT_FALSE(r.passed);
}

}  // namespace
}  // namespace csk
