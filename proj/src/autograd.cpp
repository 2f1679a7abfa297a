// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include "csknet/autograd.hpp"

#include <algorithm>

namespace csk {

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, false, nullptr});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, {}, true, nullptr});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
    nodes_.push_back(Node{p.value, {}, {}, {}, p.trainable, &p});
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_nodes_.emplace(&p, id);
    param_reads_.push_back(&p);
    return {this, id};
}

Var Tape::record(Tensor value, std::vector<int> parents, BackwardFn backward) {
    const bool needs = std::any_of(parents.begin(), parents.end(),
                                   [this](int p) { return nodes_.at(p).requires_grad; });
    nodes_.push_back(
        Node{std::move(value), {}, std::move(parents), needs ? std::move(backward) : nullptr,
             needs, nullptr});
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buffer(int id) {
    Node& node = nodes_.at(id);
    if (node.grad.empty() && node.value.size() != 0) node.grad = Tensor(node.value.shape());
    return node.grad;
}

void Tape::backward(Var loss) {
    if (&loss.tape() != this || loss.id() < 0 || loss.id() >= static_cast<int>(nodes_.size())) {
        throw std::invalid_argument("backward: loss is not a node of this tape");
    }
    if (loss.shape() != Shape{1, 1, 1, 1}) {
        throw ShapeError("backward: loss must be 1x1x1x1, got " + loss.shape().str());
    }
    for (auto& node : nodes_) node.grad = Tensor();
    grad_buffer(loss.id())[0] = 1.0;

    for (int id = loss.id(); id >= 0; --id) {
        Node& node = nodes_[id];
        if (!node.requires_grad || node.grad.empty()) continue;
        if (node.backward) node.backward(*this, id);
        if (node.param != nullptr) node.param->grad += node.grad;
    }
}

}  // namespace csk
