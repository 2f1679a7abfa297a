// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include "csknet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "csknet/ops.hpp"
#include "csknet/rng.hpp"

namespace csk {

std::vector<Tensor> finite_diff_gradient(const std::function<double()>& f,
                                         std::span<Tensor* const> inputs, double eps) {
    std::vector<Tensor> grads;
    grads.reserve(inputs.size());
    for (Tensor* t : inputs) {
        Tensor g(t->shape());
        for (std::size_t i = 0; i < t->size(); ++i) {
            const double orig = (*t)[i];
            (*t)[i] = orig + eps;
            const double up = f();
            (*t)[i] = orig - eps;
            const double down = f();
            (*t)[i] = orig;
            g[i] = (up - down) / (2.0 * eps);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor) {
    require_same_shape(analytic.shape(), numeric.shape(), "max_relative_error");
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i];
        const double n = numeric[i];
        const double denom = std::max({std::abs(a), std::abs(n), floor});
        worst = std::max(worst, std::abs(a - n) / denom);
    }
    return worst;
}

namespace {

double projected(Tape& tape, const GraphBuilder& build, const std::vector<Tensor>& inputs, const Tensor* proj,
                 std::vector<Var>* leaves_out) {
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
    Var out = build(tape, leaves);
    if (leaves_out) *leaves_out = leaves;
    if (out.shape() == Shape{1, 1, 1, 1}) {
        if (leaves_out) tape.backward(out);
        return out.value()[0];
    }
    Var loss = sum(mul(out, tape.constant(*proj)));
    if (leaves_out) tape.backward(loss);
    return loss.value()[0];
}

}  // namespace

GradCheckResult check_input_gradient(std::string name, const GraphBuilder& build, std::vector<Tensor> inputs,
                                     std::uint64_t seed, double eps, std::size_t max_entries) {
    Tensor proj;
    {
        Tape probe;
        std::vector<Var> leaves;
        for (const Tensor& t : inputs) leaves.push_back(probe.constant(t));
        const Shape s = build(probe, leaves).shape();
        Rng rng(mix_seed(seed, 0x9E0));
        proj = Tensor(s);
        for (double& v : proj.values()) v = uniform(rng, -1.0, 1.0);
    }
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> leaves;
        projected(tape, build, inputs, &proj, &leaves);
        for (const Var& l : leaves) analytic.push_back(l.grad().empty() ? Tensor(l.shape()) : l.grad());
    }
    const auto f = [&] {
        Tape tape;
        return projected(tape, build, inputs, &proj, nullptr);
    };

    GradCheckResult r{std::move(name)};
    if (max_entries == 0) {
        std::vector<Tensor*> ptrs;
        for (Tensor& t : inputs) ptrs.push_back(&t);
        const std::vector<Tensor> numeric = finite_diff_gradient(f, ptrs, eps);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            r.max_rel_error = std::max(r.max_rel_error, max_relative_error(analytic[i], numeric[i]));
            r.entries += inputs[i].size();
        }
    } else {
        Rng pick(mix_seed(seed, 0x5B5E7));
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            Tensor& t = inputs[i];
            const std::size_t count = std::min(max_entries, t.size());
            Tensor a({1, 1, 1, static_cast<std::int64_t>(count)});
            Tensor n(a.shape());
            for (std::size_t k = 0; k < count; ++k) {
                const std::size_t idx = uniform_index(pick, t.size());
                const double orig = t[idx];
                t[idx] = orig + eps;
                const double up = f();
                t[idx] = orig - eps;
                const double down = f();
                t[idx] = orig;
                a[k] = analytic[i][idx];
                n[k] = (up - down) / (2.0 * eps);
            }
            r.max_rel_error = std::max(r.max_rel_error, max_relative_error(a, n));
            r.entries += count;
        }
    }
    r.passed = r.max_rel_error < kGradTolerance && std::isfinite(r.max_rel_error);
    return r;
}

GradCheckResult check_parameter_gradient(std::string name, const std::function<Var(Tape&)>& loss,
                                         const std::vector<Parameter*>& params, double eps) {
    for (Parameter* p : params) p->zero_grad();
    {
        Tape tape;
        tape.backward(loss(tape));
    }
    std::vector<Tensor> analytic;
    std::vector<Tensor*> ptrs;
    for (Parameter* p : params) {
        analytic.push_back(p->grad);
        ptrs.push_back(&p->value);
    }
    const auto f = [&] {
        Tape tape;
        return loss(tape).value()[0];
    };
    const std::vector<Tensor> numeric = finite_diff_gradient(f, ptrs, eps);
    GradCheckResult r{std::move(name)};
    for (std::size_t i = 0; i < params.size(); ++i) {
        r.max_rel_error = std::max(r.max_rel_error, max_relative_error(analytic[i], numeric[i]));
        r.entries += params[i]->value.size();
    }
    r.passed = r.max_rel_error < kGradTolerance && std::isfinite(r.max_rel_error);
    return r;
}

}  // namespace csk
