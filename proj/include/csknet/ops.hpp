// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every op takes and returns Vars on the same tape
// and records its own backward closure.

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "csknet/autograd.hpp"

namespace csk {

enum class BnMode { kTrain, kEval };

/// Running statistics of one normalizer slot.
struct BatchNormStats {
    std::vector<double> mean;
    std::vector<double> var;
};

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.1;

/// weight (c_out, c_in, k, k); bias (1, c_out, 1, 1).
Var conv2d(Var input, Var weight, std::optional<Var> bias, int stride, int padding);

/// gamma/beta shaped (1, c, 1, 1). Train mode normalizes with the biased batch
/// variance and folds batch mean / unbiased variance into `stats` with
/// momentum kBnMomentum; eval mode normalizes with `stats`.
Var batch_norm(Var input, Var gamma, Var beta, BatchNormStats& stats, BnMode mode,
               double eps = kBnEpsilon, double momentum = kBnMomentum);

enum class Pointwise { kTanh, kSigmoid, kRelu };
Var pointwise(Pointwise op, Var input);
inline Var tanh(Var x) { return pointwise(Pointwise::kTanh, x); }
inline Var sigmoid(Var x) { return pointwise(Pointwise::kSigmoid, x); }
inline Var relu(Var x) { return pointwise(Pointwise::kRelu, x); }

/// Normalizes over the channel axis independently at each (n, h, w).
Var softmax_channel(Var logits);
Var log_softmax_channel(Var logits);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scalar_mul(Var a, double s);

Var concat_channels(std::span<const Var> parts);
Var slice_channels(Var x, std::int64_t start, std::int64_t count);
Var slice_width(Var x, std::int64_t start, std::int64_t count);

Var upsample_nearest(Var x, int factor);
/// Half-pixel-centre bilinear interpolation, edge-clamped.
Var upsample_bilinear(Var x, int factor);
/// Non-overlapping factor x factor mean pooling.
Var avg_pool(Var x, int factor);

/// Mean / sum of every element, as a 1x1x1x1 tensor.
Var mean(Var x);
Var sum(Var x);

/// out = mask != 0 ? b : a, elementwise. The mask is a routing decision and
/// carries no gradient.
Var select(const Tensor& mask, Var a, Var b);

}  // namespace csk
