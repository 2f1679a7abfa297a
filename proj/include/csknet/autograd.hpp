// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation. A Tape records every primitive op
// of one forward pass in execution order, so node ids are already a
// topological order. Tapes are cheap and meant to be thrown away after each
// step.

#pragma once

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "csknet/tensor.hpp"

namespace csk {

/// Named, optionally trainable tensor owned by a model.
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Tensor value, bool trainable = true)
        : name(std::move(name)), value(std::move(value)), grad(this->value.shape()),
          trainable(trainable) {}

    void zero_grad() { grad = Tensor(value.shape()); }

    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
};

class Tape;

/// Handle to a node on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    [[nodiscard]] const Tensor& value() const;
    [[nodiscard]] const Shape& shape() const { return value().shape(); }
    /// Gradient after Tape::backward; empty tensor when the node was unreached.
    [[nodiscard]] const Tensor& grad() const;
    [[nodiscard]] bool requires_grad() const;
    [[nodiscard]] Tape& tape() const { return *tape_; }
    [[nodiscard]] int id() const noexcept { return id_; }
    [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr && id_ >= 0; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    /// Propagates the node's accumulated gradient into its parents.
    using BackwardFn = std::function<void(Tape&, int self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that never receives a gradient.
    Var constant(Tensor value);
    /// Leaf that does receive a gradient (for inputs under test).
    Var leaf(Tensor value);
    /// Leaf bound to a model parameter. One node per parameter per tape, so
    /// every use site of a shared parameter accumulates into the same node.
    Var param(Parameter& p);

    Var record(Tensor value, std::vector<int> parents, BackwardFn backward);

    /// Seeds d(loss)/d(loss) = 1, runs the tape in reverse and adds the
    /// resulting parameter gradients into Parameter::grad. Node gradients are
    /// reset on entry; parameter gradients accumulate across calls.
    void backward(Var loss);

    [[nodiscard]] const Tensor& value(int id) const { return nodes_.at(id).value; }
    [[nodiscard]] const Tensor& grad(int id) const { return nodes_.at(id).grad; }
    [[nodiscard]] bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
    /// Gradient buffer of `id`, zero-initialized on first touch.
    Tensor& grad_buffer(int id);
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

    /// Every parameter bound to this tape, in first-read order.
    [[nodiscard]] const std::vector<const Parameter*>& parameter_reads() const noexcept {
        return param_reads_;
    }
    [[nodiscard]] bool has_read(const Parameter& p) const { return param_nodes_.contains(&p); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<int> parents;
        BackwardFn backward;
        bool requires_grad = false;
        Parameter* param = nullptr;
    };

    std::deque<Node> nodes_;
    std::unordered_map<const Parameter*, int> param_nodes_;
    std::vector<const Parameter*> param_reads_;
};

}  // namespace csk
