// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite differences, the independent oracle for Tape::backward.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "csknet/autograd.hpp"

namespace csk {

inline constexpr double kFiniteDiffStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;

/// (f(p + eps) - f(p - eps)) / 2eps for every entry of every tensor in
/// `inputs`. Each entry is perturbed in place and restored bit-exactly.
std::vector<Tensor> finite_diff_gradient(const std::function<double()>& f,
                                         std::span<Tensor* const> inputs,
                                         double eps = kFiniteDiffStep);

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor). The floor keeps entries whose
/// true gradient is ~0 from turning finite-difference round-off into
/// relative error.
double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-3);

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t entries = 0;
    bool passed = false;
};


/// Builds a graph from leaves holding `inputs` and returns one output Var.
using GraphBuilder = std::function<Var(Tape&, std::span<const Var>)>;

/// Checks d(sum(R * out)) / d(inputs) against finite differences, where R is
/// a fixed random projection drawn from `seed` so every output entry
/// contributes. A scalar output is used as-is. With `max_entries` > 0 only a
/// seeded random subset of that many entries per input is differenced.
GradCheckResult check_input_gradient(std::string name, const GraphBuilder& build, std::vector<Tensor> inputs,
                                     std::uint64_t seed, double eps = kFiniteDiffStep,
                                     std::size_t max_entries = 0);

/// Checks Tape::backward of a scalar loss against finite differences over
/// every entry of `params`. `loss` must build a fresh graph on the given tape
/// and be deterministic.
GradCheckResult check_parameter_gradient(std::string name, const std::function<Var(Tape&)>& loss,
                                         const std::vector<Parameter*>& params, double eps = kFiniteDiffStep);

/// Whole finite-difference suite: every primitive op over `seeds` random
/// draws, every loss, exchange, the GSU, and full forward passes of both
/// models. Used by `csknet gradcheck` and the acceptance suite.
std::vector<GradCheckResult> run_gradcheck_suite(int seeds = 10);

}  // namespace csk
