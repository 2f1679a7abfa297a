// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include "csknet/exchange.hpp"

#include <cmath>

#include <fmt/format.h>

namespace csk {
namespace {

Tensor channel_mask(const Shape& s, std::span<const double> gamma, double threshold, int& count) {
    Tensor mask(s);
    count = 0;
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t c = 0; c < s.c; ++c) {
        if (!(std::abs(gamma[static_cast<std::size_t>(c)]) < threshold)) continue;
        ++count;
        for (std::int64_t n = 0; n < s.n; ++n) {
            double* p = mask.data() + (n * s.c + c) * plane;
            std::fill(p, p + plane, 1.0);
        }
    }
    return mask;
}

int count_small(std::span<const double> gamma, double threshold) {
    int n = 0;
    for (double g : gamma) n += std::abs(g) < threshold ? 1 : 0;
    return n;
}

}  // namespace

Tensor exchange_mask(const Shape& shape) {
    Tensor mask(shape);
    for (std::int64_t n = 0; n < shape.n; ++n)
        for (std::int64_t c = 0; c < shape.c; ++c)
            for (std::int64_t h = 0; h < shape.h; ++h)
                for (std::int64_t w = 0; w < shape.w; ++w) mask.at(n, c, h, w) = (w % 2 == 0) ? 0.0 : 1.0;
    return mask;
}

std::pair<Var, Var> spatial_exchange(Var a, Var b) {
    require_same_shape(a.shape(), b.shape(), "spatial_exchange");
    const Tensor mask = exchange_mask(a.shape());
    return {select(mask, a, b), select(mask, b, a)};
}

std::pair<Var, Var> channel_exchange(Var a, Var b, std::span<const double> gamma_a,
                                     std::span<const double> gamma_b, double threshold) {
    require_same_shape(a.shape(), b.shape(), "channel_exchange");
    const auto c = static_cast<std::size_t>(a.shape().c);
    if (gamma_a.size() != c || gamma_b.size() != c) {
        throw ShapeError(fmt::format("channel_exchange: gamma lengths {} / {} do not match {} channels",
                                     gamma_a.size(), gamma_b.size(), c));
    }
    int unused = 0;
    const Tensor mask_a = channel_mask(a.shape(), gamma_a, threshold, unused);
    const Tensor mask_b = channel_mask(a.shape(), gamma_b, threshold, unused);
    return {select(mask_a, a, b), select(mask_b, b, a)};
}

ExchangeResult mixed_exchange(int stage, Var a, Var b, std::span<const double> gamma_a,
                              std::span<const double> gamma_b, const ExchangeConfig& config) {
    if (stage < 1 || stage > kEncoderStages) {
        throw std::out_of_range(fmt::format("mixed_exchange: stage {} outside 1..{}", stage, kEncoderStages));
    }
    ExchangeResult r{a, b};
    const auto idx = static_cast<std::size_t>(stage - 1);
    if (config.channel_stages[idx]) {
        auto [a2, b2] = channel_exchange(r.a, r.b, gamma_a, gamma_b, config.threshold);
        r.channels_from_b = count_small(gamma_a, config.threshold);
        r.channels_from_a = count_small(gamma_b, config.threshold);
        r.a = a2;
        r.b = b2;
        r.channel_applied = true;
    }
    if (config.spatial_stages[idx]) {
        auto [a2, b2] = spatial_exchange(r.a, r.b);
        r.a = a2;
        r.b = b2;
        r.spatial_applied = true;
    }
    return r;
}

}  // namespace csk
