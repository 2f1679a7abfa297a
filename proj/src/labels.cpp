// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include "csknet/labels.hpp"

#include <stdexcept>

namespace csk {

LabelMap downsample_labels(const LabelMap& labels, int factor) {
    if (factor < 1 || labels.h % factor != 0 || labels.w % factor != 0) {
        throw std::invalid_argument("downsample_labels: factor must divide the label extent");
    }
    LabelMap out(labels.n, labels.h / factor, labels.w / factor);
    for (std::int64_t b = 0; b < out.n; ++b)
        for (std::int64_t y = 0; y < out.h; ++y)
            for (std::int64_t x = 0; x < out.w; ++x)
                out.at(b, y, x) = labels.at(b, y * factor + factor / 2, x * factor + factor / 2);
    return out;
}

}  // namespace csk
