// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

namespace csk {

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Per-pixel class ids, (n, h, w) row-major. kIgnoreLabel marks unscored pixels.
struct LabelMap {
    std::int64_t n = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<std::uint8_t> values;

    LabelMap() = default;
    LabelMap(std::int64_t n, std::int64_t h, std::int64_t w, std::uint8_t fill = 0)
        : n(n), h(h), w(w), values(static_cast<std::size_t>(n * h * w), fill) {}

    std::uint8_t& at(std::int64_t b, std::int64_t y, std::int64_t x) {
        return values[static_cast<std::size_t>((b * h + y) * w + x)];
    }
    [[nodiscard]] std::uint8_t at(std::int64_t b, std::int64_t y, std::int64_t x) const {
        return values[static_cast<std::size_t>((b * h + y) * w + x)];
    }
    friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Nearest-centre subsampling by an integer factor: output pixel (y, x) takes
/// the label at (y * f + f / 2, x * f + f / 2).
LabelMap downsample_labels(const LabelMap& labels, int factor);

}  // namespace csk
