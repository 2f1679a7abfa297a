// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense rank-4 NCHW tensor. Plain value type; graph bookkeeping lives in Tape.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csk {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Shape {
    std::int64_t n = 0;
    std::int64_t c = 0;
    std::int64_t h = 0;
    std::int64_t w = 0;

    [[nodiscard]] std::size_t numel() const noexcept {
        return static_cast<std::size_t>(n * c * h * w);
    }
    [[nodiscard]] std::string str() const;
    friend bool operator==(const Shape&, const Shape&) = default;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor({1, 1, 1, 1}, v); }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] std::span<double> values() noexcept { return data_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
    [[nodiscard]] double* data() noexcept { return data_.data(); }
    [[nodiscard]] const double* data() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    [[nodiscard]] std::size_t index(std::int64_t n, std::int64_t c, std::int64_t h,
                                    std::int64_t w) const noexcept {
        return static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w);
    }
    double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) noexcept {
        return data_[index(n, c, h, w)];
    }
    [[nodiscard]] double at(std::int64_t n, std::int64_t c, std::int64_t h,
                            std::int64_t w) const noexcept {
        return data_[index(n, c, h, w)];
    }

    /// Scalar value of a 1x1x1x1 tensor.
    [[nodiscard]] double item() const;

    [[nodiscard]] bool all_finite() const noexcept;
    void fill(double v) noexcept;
    Tensor& operator+=(const Tensor& other);

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_{};
    std::vector<double> data_;
};

/// Throws ShapeError with `what` prefixed when shapes differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace csk
