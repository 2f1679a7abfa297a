// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include "csknet/tensor.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace csk {

std::string Shape::str() const { return fmt::format("({}, {}, {}, {})", n, c, h, w); }

Tensor::Tensor(Shape shape, double fill) : shape_(shape) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        throw ShapeError("negative extent in shape " + shape.str());
    }
    data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape.numel()) {
        throw ShapeError(fmt::format("tensor of shape {} needs {} values, got {}", shape.str(),
                                     shape.numel(), data_.size()));
    }
}

double Tensor::item() const {
    if (shape_ != Shape{1, 1, 1, 1}) {
        throw ShapeError("item() on non-scalar tensor " + shape_.str());
    }
    return data_[0];
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
    require_same_shape(shape_, other.shape_, "tensor +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) {
        throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", what, a.str(), b.str()));
    }
}

}  // namespace csk
