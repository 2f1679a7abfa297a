// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include "csknet/layers.hpp"

#include <cmath>

#include <fmt/format.h>

namespace csk {

const char* modality_name(Modality m) noexcept { return m == Modality::kEo ? "eo" : "ir"; }

Parameter make_conv_weight(std::string name, std::int64_t c_out, std::int64_t c_in, std::int64_t k,
                           Rng& rng) {
    Tensor w({c_out, c_in, k, k});
    const double bound = std::sqrt(6.0 / static_cast<double>(c_in * k * k));
    for (double& v : w.values()) v = uniform(rng, -bound, bound);
    return {std::move(name), std::move(w)};
}

Parameter make_bias(std::string name, std::int64_t c, std::int64_t fan_in, Rng& rng) {
    Tensor b({1, c, 1, 1});
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : b.values()) v = uniform(rng, -bound, bound);
    return {std::move(name), std::move(b)};
}

ModalityBatchNorm::ModalityBatchNorm(const std::string& prefix, std::int64_t channels, bool per_modality)
    : channels_(channels) {
    const auto make_slot = [&](const std::string& p) {
        return BnSlot{Parameter(p + ".gamma", Tensor({1, channels, 1, 1}, 1.0)),
                      Parameter(p + ".beta", Tensor({1, channels, 1, 1}, 0.0)),
                      BatchNormStats{std::vector<double>(static_cast<std::size_t>(channels), 0.0),
                                     std::vector<double>(static_cast<std::size_t>(channels), 1.0)}};
    };
    if (per_modality) {
        slots_.push_back(make_slot(prefix + ".eo"));
        slots_.push_back(make_slot(prefix + ".ir"));
    } else {
        slots_.push_back(make_slot(prefix));
    }
}

BnSlot& ModalityBatchNorm::slot(Modality m) {
    return per_modality() ? slots_[static_cast<std::size_t>(m)] : slots_.front();
}

const BnSlot& ModalityBatchNorm::slot(Modality m) const {
    return per_modality() ? slots_[static_cast<std::size_t>(m)] : slots_.front();
}

Var ModalityBatchNorm::forward(Tape& tape, Var x, Modality m, BnMode mode) {
    BnSlot& s = slot(m);
    return batch_norm(x, tape.param(s.gamma), tape.param(s.beta), s.stats, mode);
}

void ModalityBatchNorm::collect(std::vector<Parameter*>& out) {
    for (auto& s : slots_) {
        out.push_back(&s.gamma);
        out.push_back(&s.beta);
    }
}

void ModalityBatchNorm::collect(std::vector<Parameter*>& out, Modality m) {
    BnSlot& s = slot(m);
    out.push_back(&s.gamma);
    out.push_back(&s.beta);
}

void ModalityBatchNorm::collect_buffers(std::vector<BufferRef>& out) {
    for (auto& s : slots_) {
        const std::string base = s.gamma.name.substr(0, s.gamma.name.size() - 6);  // strip ".gamma"
        out.push_back({base + ".running_mean", &s.stats.mean});
        out.push_back({base + ".running_var", &s.stats.var});
    }
}

Var ConvBnRelu::forward(Tape& tape, Var x, Modality m, BnMode mode) {
    Var y = conv2d(x, tape.param(weight), std::nullopt, stride, padding);
    return relu(bn.forward(tape, y, m, mode));
}

PointwiseConv::PointwiseConv(const std::string& prefix, std::int64_t c_out, std::int64_t c_in, Rng& rng)
    : weight(make_conv_weight(prefix + ".weight", c_out, c_in, 1, rng)),
      bias(make_bias(prefix + ".bias", c_out, c_in, rng)) {}

Var PointwiseConv::forward(Tape& tape, Var x) {
    return conv2d(x, tape.param(weight), tape.param(bias), 1, 0);
}

void PointwiseConv::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

Decoder::Decoder(const std::string& prefix, std::int64_t deep_channels, std::int64_t skip_channels,
                 std::int64_t width, Rng& rng)
    : width_(width) {
    reduce_ = ConvBnRelu{make_conv_weight(prefix + ".reduce.weight", width, deep_channels, 1, rng),
                         ModalityBatchNorm(prefix + ".reduce.bn", width, false), 1, 0};
    fuse_ = ConvBnRelu{make_conv_weight(prefix + ".fuse.weight", width, width + skip_channels, 3, rng),
                       ModalityBatchNorm(prefix + ".fuse.bn", width, false), 1, 1};
}

Var Decoder::forward(Tape& tape, Var skip, Var deep, BnMode mode) {
    Var r = reduce_.forward(tape, deep, Modality::kEo, mode);
    if (skip.shape().h % r.shape().h != 0 || skip.shape().h / r.shape().h != skip.shape().w / r.shape().w) {
        throw ShapeError(fmt::format("decoder: skip {} is not an integer upscale of deep {}",
                                     skip.shape().str(), r.shape().str()));
    }
    const int factor = static_cast<int>(skip.shape().h / r.shape().h);
    Var up = factor == 1 ? r : upsample_bilinear(r, factor);
    const Var parts[] = {up, skip};
    return fuse_.forward(tape, concat_channels(parts), Modality::kEo, mode);
}

void Decoder::collect(std::vector<Parameter*>& out) {
    out.push_back(&reduce_.weight);
    reduce_.bn.collect(out);
    out.push_back(&fuse_.weight);
    fuse_.bn.collect(out);
}

void Decoder::collect_buffers(std::vector<BufferRef>& out) {
    reduce_.bn.collect_buffers(out);
    fuse_.bn.collect_buffers(out);
}

SegHead::SegHead(const std::string& prefix, std::int64_t num_classes, std::int64_t channels, Rng& rng)
    : conv_(prefix, num_classes, channels, rng) {}

Var SegHead::forward(Tape& tape, Var features, std::int64_t out_height) {
    Var logits = conv_.forward(tape, features);
    if (out_height % logits.shape().h != 0) {
        throw ShapeError(fmt::format("seg head: output height {} is not a multiple of {}", out_height,
                                     logits.shape().h));
    }
    const int factor = static_cast<int>(out_height / logits.shape().h);
    return factor == 1 ? logits : upsample_bilinear(logits, factor);
}

ProjectionHead::ProjectionHead(const std::string& prefix, std::int64_t channels, std::int64_t embed_dim,
                               Rng& rng)
    : hidden_(prefix + ".hidden", channels, channels, rng), out_(prefix + ".out", embed_dim, channels, rng) {}

Var ProjectionHead::forward(Tape& tape, Var features) {
    return out_.forward(tape, relu(hidden_.forward(tape, features)));
}

void ProjectionHead::collect(std::vector<Parameter*>& out) {
    hidden_.collect(out);
    out_.collect(out);
}

}  // namespace csk
