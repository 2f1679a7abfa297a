// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameterized building blocks shared by the baseline and dual-branch
// models.

#pragma once

#include <string>
#include <vector>

#include "csknet/ops.hpp"
#include "csknet/rng.hpp"

namespace csk {

enum class Modality { kEo = 0, kIr = 1 };

const char* modality_name(Modality m) noexcept;

/// Non-trainable per-channel vector stored in checkpoints (BN running stats).
struct BufferRef {
    std::string name;
    std::vector<double>* values;
};

/// He-uniform fan-in initialization: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
Parameter make_conv_weight(std::string name, std::int64_t c_out, std::int64_t c_in, std::int64_t k,
                           Rng& rng);
/// U(-1 / sqrt(fan_in), 1 / sqrt(fan_in)).
Parameter make_bias(std::string name, std::int64_t c, std::int64_t fan_in, Rng& rng);

struct BnSlot {
    Parameter gamma;
    Parameter beta;
    BatchNormStats stats;
};

/// Normalizer companion of a shared conv: one (gamma, beta, running stats)
/// slot per modality, or a single slot when `per_modality` is false. The
/// slots are disjoint storage.
class ModalityBatchNorm {
public:
    ModalityBatchNorm() = default;
    ModalityBatchNorm(const std::string& prefix, std::int64_t channels, bool per_modality);

    Var forward(Tape& tape, Var x, Modality m, BnMode mode);

    BnSlot& slot(Modality m);
    [[nodiscard]] const BnSlot& slot(Modality m) const;
    [[nodiscard]] bool per_modality() const noexcept { return slots_.size() == 2; }
    [[nodiscard]] std::int64_t channels() const noexcept { return channels_; }

    void collect(std::vector<Parameter*>& out);
    void collect(std::vector<Parameter*>& out, Modality m);
    void collect_buffers(std::vector<BufferRef>& out);

private:
    std::int64_t channels_ = 0;
    std::vector<BnSlot> slots_;
};

/// conv (no bias) -> BN -> ReLU.
struct ConvBnRelu {
    Parameter weight;
    ModalityBatchNorm bn;
    int stride = 1;
    int padding = 0;

    Var forward(Tape& tape, Var x, Modality m, BnMode mode);
};

/// 1x1 conv with bias.
struct PointwiseConv {
    Parameter weight;
    Parameter bias;

    PointwiseConv() = default;
    PointwiseConv(const std::string& prefix, std::int64_t c_out, std::int64_t c_in, Rng& rng);
    Var forward(Tape& tape, Var x);
    void collect(std::vector<Parameter*>& out);
};

/// Light DeepLabV3+-style decoder: 1x1 reduction of the deepest features,
/// bilinear upsampling to the stage-3 grid, concatenation with the stage-3
/// skip, then a 3x3 fuse conv. Output is the decoder feature F_d.
class Decoder {
public:
    Decoder() = default;
    Decoder(const std::string& prefix, std::int64_t deep_channels, std::int64_t skip_channels,
            std::int64_t width, Rng& rng);

    Var forward(Tape& tape, Var skip, Var deep, BnMode mode);
    void collect(std::vector<Parameter*>& out);
    void collect_buffers(std::vector<BufferRef>& out);
    [[nodiscard]] std::int64_t width() const noexcept { return width_; }

private:
    std::int64_t width_ = 0;
    ConvBnRelu reduce_;
    ConvBnRelu fuse_;
};

/// 1x1 classifier followed by bilinear upsampling to the input resolution.
class SegHead {
public:
    SegHead() = default;
    SegHead(const std::string& prefix, std::int64_t num_classes, std::int64_t channels, Rng& rng);

    Var forward(Tape& tape, Var features, std::int64_t out_height);
    void collect(std::vector<Parameter*>& out) { conv_.collect(out); }

private:
    PointwiseConv conv_;
};

/// h_pixel: 1x1 conv -> ReLU -> 1x1 conv into the embedding space.
class ProjectionHead {
public:
    ProjectionHead() = default;
    ProjectionHead(const std::string& prefix, std::int64_t channels, std::int64_t embed_dim, Rng& rng);

    Var forward(Tape& tape, Var features);
    void collect(std::vector<Parameter*>& out);

private:
    PointwiseConv hidden_;
    PointwiseConv out_;
};

}  // namespace csk
