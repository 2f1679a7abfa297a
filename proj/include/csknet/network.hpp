// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Baseline single-branch segmenter and the dual-branch CSK-Net model.
//
// Both share the same topology: a five-stage conv encoder (stride 2 at
// stages 2-5), a light decoder over a skip stage and stage 5, and a 1x1 segmentation
// head. CSK-Net runs the encoder twice with the *same* conv Parameters and a
// per-modality BN slot, exchanging features between the passes, then fuses
// the two decoder outputs with a Gated Spectral Unit.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "csknet/exchange.hpp"
#include "csknet/gsu.hpp"
#include "csknet/layers.hpp"

namespace csk {

/// Which encoder outputs feed the pixel contrastive loss.
enum class TapPoints {
    kFigure,    // stages 4, 5 on the EO pass and stages 4, 5 on the IR pass
    kLastFour,  // stages 2-5 on the IR pass
};

struct ModelConfig {
    std::array<std::int64_t, kEncoderStages> widths{8, 16, 32, 64, 64};
    std::int64_t num_classes = 4;
    std::int64_t in_channels = 3;
    std::int64_t decoder_width = 32;
    /// Encoder stage whose output the decoder fuses with stage 5 (1-4).
    int skip_stage = 2;
    std::int64_t embed_dim = 32;
    int convs_per_stage = 1;
    TapPoints taps = TapPoints::kFigure;
    std::uint64_t seed = 1;

    /// Throws std::invalid_argument on non-positive widths/classes.
    void validate() const;
    /// Input extents must be divisible by this.
    [[nodiscard]] static constexpr std::int64_t input_multiple() { return 16; }
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Stride of each stage's output relative to the input (1, 2, 4, 8, 16).
std::int64_t stage_stride(int stage);

class Encoder {
public:
    struct Stage {
        std::vector<ConvBnRelu> blocks;
    };

    Encoder() = default;
    Encoder(const ModelConfig& config, bool per_modality, Rng& rng);

    /// Runs one 1-based stage.
    Var stage_forward(Tape& tape, int stage, Var x, Modality m, BnMode mode);
    /// BN of the stage's last block; its gamma drives channel exchange.
    ModalityBatchNorm& stage_norm(int stage);

    void collect_convs(std::vector<Parameter*>& out);
    void collect_norms(std::vector<Parameter*>& out);
    void collect_norms(std::vector<Parameter*>& out, Modality m);
    void collect_buffers(std::vector<BufferRef>& out);

    std::vector<Stage> stages;
};

struct BaselineOutputs {
    Var logits;
    std::array<Var, kEncoderStages> stages;
    Var decoder;  // F_d
};

class BaselineModel {
public:
    BaselineModel() = default;
    explicit BaselineModel(const ModelConfig& config);

    [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
    std::vector<Parameter*> parameters();
    std::vector<BufferRef> buffers();

    Encoder encoder;
    Decoder decoder;
    SegHead head;

private:
    ModelConfig config_;
};

BaselineOutputs forward_baseline(Tape& tape, BaselineModel& model, Var image, BnMode mode);

enum class FusionMode { kGsu, kSum };

struct CskForwardOptions {
    BnMode mode = BnMode::kTrain;
    bool exchange = true;
    ExchangeConfig exchange_config{};
    FusionMode fusion = FusionMode::kGsu;
    bool embeddings = true;
    const GateOverride* gates = nullptr;
};

struct CskOutputs {
    Var p_eo;
    Var p_ir;
    Var p_fused;
    /// Stage outputs of each pass before exchange.
    std::array<Var, kEncoderStages> stages_eo;
    std::array<Var, kEncoderStages> stages_ir;
    Var decoder_eo;  // F_O
    Var decoder_ir;  // F_I
    std::vector<Var> embeddings;
    /// Stride of each embedding relative to the input.
    std::vector<std::int64_t> embedding_strides;
    GsuOutputs gsu;
    std::array<ExchangeResult, kEncoderStages> exchanges;
};

class CskNetModel {
public:
    CskNetModel() = default;
    explicit CskNetModel(const ModelConfig& config);

    [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
    std::vector<Parameter*> parameters();
    std::vector<BufferRef> buffers();
    /// Shared convs + IR BN slots + IR decoder + IR head.
    std::vector<Parameter*> ir_only_parameters();
    /// Shared convs + EO BN slots + EO decoder + EO head.
    std::vector<Parameter*> eo_path_parameters();

    /// Copies shared convs into the encoder and the baseline BN parameters and
    /// running stats into the EO slots; decoder and head into the EO branch.
    void init_eo_branch_from(BaselineModel& baseline);

    Encoder encoder;
    Decoder decoder_eo;
    Decoder decoder_ir;
    SegHead head_eo;
    SegHead head_ir;
    SegHead head_fused;
    GatedSpectralUnit gsu;
    std::vector<ProjectionHead> projections;

private:
    ModelConfig config_;
};

/// Replicates a 1-channel IR image to `channels` channels (constant op).
Tensor replicate_channels(const Tensor& ir, std::int64_t channels);

CskOutputs forward_csknet(Tape& tape, CskNetModel& model, Var eo, Var ir,
                          const CskForwardOptions& options);
/// IR branch alone: IR BN slots, no exchange, IR decoder and head, no GSU.
Var forward_ir_only(Tape& tape, CskNetModel& model, Var ir, BnMode mode = BnMode::kEval);

enum class ParamSubgraph { kFull, kIrOnly, kBaselineEquivalent };
ParamSubgraph parse_param_subgraph(std::string_view name);

std::int64_t count_elements(const std::vector<Parameter*>& params);
std::int64_t param_count(BaselineModel& model, ParamSubgraph which = ParamSubgraph::kFull);
std::int64_t param_count(CskNetModel& model, ParamSubgraph which = ParamSubgraph::kFull);

}  // namespace csk
