// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include "csknet/network.hpp"

#include <unordered_set>

#include <fmt/format.h>

namespace csk {

void ModelConfig::validate() const {
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (widths[i] <= 0) {
            throw std::invalid_argument(fmt::format("model config: stage {} width {} must be positive", i + 1,
                                                    widths[i]));
        }
    }
    if (num_classes <= 0) throw std::invalid_argument("model config: num_classes must be positive");
    if (in_channels <= 0) throw std::invalid_argument("model config: in_channels must be positive");
    if (decoder_width <= 0) throw std::invalid_argument("model config: decoder_width must be positive");
    if (embed_dim <= 0) throw std::invalid_argument("model config: embed_dim must be positive");
    if (convs_per_stage < 1) throw std::invalid_argument("model config: convs_per_stage must be >= 1");
    if (skip_stage < 1 || skip_stage > kEncoderStages - 1)
        throw std::invalid_argument("model config: skip_stage must be in 1..4");
}

namespace {

std::size_t skip_index(const ModelConfig& c) { return static_cast<std::size_t>(c.skip_stage - 1); }
std::int64_t skip_width(const ModelConfig& c) { return c.widths[skip_index(c)]; }

}  // namespace

std::int64_t stage_stride(int stage) {
    if (stage < 1 || stage > kEncoderStages) throw std::out_of_range("stage outside 1..5");
    return std::int64_t{1} << (stage - 1);
}

Encoder::Encoder(const ModelConfig& config, bool per_modality, Rng& rng) {
    std::int64_t c_in = config.in_channels;
    for (int s = 1; s <= kEncoderStages; ++s) {
        Stage stage;
        const std::int64_t width = config.widths[static_cast<std::size_t>(s - 1)];
        for (int b = 0; b < config.convs_per_stage; ++b) {
            const std::string prefix = fmt::format("encoder.stage{}.", s);
            const std::string suffix = config.convs_per_stage == 1 ? "" : std::to_string(b + 1);
            stage.blocks.push_back(ConvBnRelu{
                make_conv_weight(prefix + "conv" + suffix + ".weight", width, c_in, 3, rng),
                ModalityBatchNorm(prefix + "bn" + suffix, width, per_modality),
                (b == 0 && s > 1) ? 2 : 1, 1});
            c_in = width;
        }
        stages.push_back(std::move(stage));
    }
}

Var Encoder::stage_forward(Tape& tape, int stage, Var x, Modality m, BnMode mode) {
    for (auto& block : stages.at(static_cast<std::size_t>(stage - 1)).blocks) x = block.forward(tape, x, m, mode);
    return x;
}

ModalityBatchNorm& Encoder::stage_norm(int stage) { return stages.at(static_cast<std::size_t>(stage - 1)).blocks.back().bn; }

void Encoder::collect_convs(std::vector<Parameter*>& out) {
    for (auto& s : stages)
        for (auto& b : s.blocks) out.push_back(&b.weight);
}

void Encoder::collect_norms(std::vector<Parameter*>& out) {
    for (auto& s : stages)
        for (auto& b : s.blocks) b.bn.collect(out);
}

void Encoder::collect_norms(std::vector<Parameter*>& out, Modality m) {
    for (auto& s : stages)
        for (auto& b : s.blocks) b.bn.collect(out, m);
}

void Encoder::collect_buffers(std::vector<BufferRef>& out) {
    for (auto& s : stages)
        for (auto& b : s.blocks) b.bn.collect_buffers(out);
}

namespace {

void check_unique(const std::vector<Parameter*>& params) {
    std::unordered_set<std::string> seen;
    for (const Parameter* p : params) {
        if (!seen.insert(p->name).second) throw std::logic_error("duplicate parameter name " + p->name);
    }
}

void check_image(const Var& image, const ModelConfig& config, const char* what) {
    const Shape s = image.shape();
    if (s.c != config.in_channels) {
        throw ShapeError(fmt::format("{}: image has {} channels, model expects {}", what, s.c, config.in_channels));
    }
    if (s.h % ModelConfig::input_multiple() != 0 || s.w % ModelConfig::input_multiple() != 0 || s.h == 0) {
        throw ShapeError(fmt::format("{}: image extent {}x{} must be a positive multiple of {}", what, s.h, s.w,
                                     ModelConfig::input_multiple()));
    }
}

}  // namespace

BaselineModel::BaselineModel(const ModelConfig& config) : config_(config) {
    config.validate();
    Rng rng(mix_seed(config.seed, 0xBA5E));
    encoder = Encoder(config, false, rng);
    decoder = Decoder("decoder", config.widths[4], skip_width(config), config.decoder_width, rng);
    head = SegHead("head", config.num_classes, config.decoder_width, rng);
    check_unique(parameters());
}

std::vector<Parameter*> BaselineModel::parameters() {
    std::vector<Parameter*> out;
    encoder.collect_convs(out);
    encoder.collect_norms(out);
    decoder.collect(out);
    head.collect(out);
    return out;
}

std::vector<BufferRef> BaselineModel::buffers() {
    std::vector<BufferRef> out;
    encoder.collect_buffers(out);
    decoder.collect_buffers(out);
    return out;
}

BaselineOutputs forward_baseline(Tape& tape, BaselineModel& model, Var image, BnMode mode) {
    check_image(image, model.config(), "forward_baseline");
    BaselineOutputs out;
    Var x = image;
    for (int s = 1; s <= kEncoderStages; ++s) {
        x = model.encoder.stage_forward(tape, s, x, Modality::kEo, mode);
        out.stages[static_cast<std::size_t>(s - 1)] = x;
    }
    out.decoder = model.decoder.forward(tape, out.stages[skip_index(model.config())], out.stages[4], mode);
    out.logits = model.head.forward(tape, out.decoder, image.shape().h);
    return out;
}

CskNetModel::CskNetModel(const ModelConfig& config) : config_(config) {
    config.validate();
    // Same stream layout as BaselineModel for the shared part.
    Rng rng(mix_seed(config.seed, 0xBA5E));
    encoder = Encoder(config, true, rng);
    decoder_eo = Decoder("decoder_eo", config.widths[4], skip_width(config), config.decoder_width, rng);
    head_eo = SegHead("head_eo", config.num_classes, config.decoder_width, rng);
    decoder_ir = Decoder("decoder_ir", config.widths[4], skip_width(config), config.decoder_width, rng);
    head_ir = SegHead("head_ir", config.num_classes, config.decoder_width, rng);
    gsu = GatedSpectralUnit("gsu", config.decoder_width, rng);
    head_fused = SegHead("head_fused", config.num_classes, config.decoder_width, rng);
    const auto add_head = [&](const std::string& name, int stage) {
        projections.emplace_back(name, config.widths[static_cast<std::size_t>(stage - 1)], config.embed_dim, rng);
    };
    if (config.taps == TapPoints::kFigure) {
        add_head("proj.eo.stage4", 4);
        add_head("proj.eo.stage5", 5);
        add_head("proj.ir.stage4", 4);
        add_head("proj.ir.stage5", 5);
    } else {
        for (int s = 2; s <= 5; ++s) add_head(fmt::format("proj.ir.stage{}", s), s);
    }
    check_unique(parameters());
}

std::vector<Parameter*> CskNetModel::parameters() {
    std::vector<Parameter*> out;
    encoder.collect_convs(out);
    encoder.collect_norms(out);
    decoder_eo.collect(out);
    head_eo.collect(out);
    decoder_ir.collect(out);
    head_ir.collect(out);
    gsu.collect(out);
    head_fused.collect(out);
    for (auto& p : projections) p.collect(out);
    return out;
}

std::vector<BufferRef> CskNetModel::buffers() {
    std::vector<BufferRef> out;
    encoder.collect_buffers(out);
    decoder_eo.collect_buffers(out);
    decoder_ir.collect_buffers(out);
    return out;
}

std::vector<Parameter*> CskNetModel::ir_only_parameters() {
    std::vector<Parameter*> out;
    encoder.collect_convs(out);
    encoder.collect_norms(out, Modality::kIr);
    decoder_ir.collect(out);
    head_ir.collect(out);
    return out;
}

std::vector<Parameter*> CskNetModel::eo_path_parameters() {
    std::vector<Parameter*> out;
    encoder.collect_convs(out);
    encoder.collect_norms(out, Modality::kEo);
    decoder_eo.collect(out);
    head_eo.collect(out);
    return out;
}

void CskNetModel::init_eo_branch_from(BaselineModel& baseline) {
    if (!(baseline.config().widths == config_.widths) || baseline.config().num_classes != config_.num_classes ||
        baseline.config().decoder_width != config_.decoder_width ||
        baseline.config().in_channels != config_.in_channels ||
        baseline.config().convs_per_stage != config_.convs_per_stage ||
        baseline.config().skip_stage != config_.skip_stage) {
        throw std::invalid_argument("init_eo_branch_from: pretrained model configuration is incompatible");
    }
    auto src = baseline.parameters();
    auto dst = eo_path_parameters();
    if (src.size() != dst.size()) throw std::logic_error("init_eo_branch_from: parameter layout differs");
    for (std::size_t i = 0; i < src.size(); ++i) {
        require_same_shape(src[i]->value.shape(), dst[i]->value.shape(), "init_eo_branch_from");
        dst[i]->value = src[i]->value;
    }
    for (int s = 1; s <= kEncoderStages; ++s) {
        auto& from = baseline.encoder.stages[static_cast<std::size_t>(s - 1)].blocks;
        auto& to = encoder.stages[static_cast<std::size_t>(s - 1)].blocks;
        for (std::size_t b = 0; b < from.size(); ++b) to[b].bn.slot(Modality::kEo).stats = from[b].bn.slot(Modality::kEo).stats;
    }
    std::vector<BufferRef> from_dec;
    std::vector<BufferRef> to_dec;
    baseline.decoder.collect_buffers(from_dec);
    decoder_eo.collect_buffers(to_dec);
    for (std::size_t i = 0; i < from_dec.size(); ++i) *to_dec[i].values = *from_dec[i].values;
}

Tensor replicate_channels(const Tensor& ir, std::int64_t channels) {
    const Shape s = ir.shape();
    if (s.c == channels) return ir;
    if (s.c != 1) throw ShapeError("replicate_channels: expected a 1-channel image, got " + s.str());
    Tensor out({s.n, channels, s.h, s.w});
    const std::int64_t plane = s.h * s.w;
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < channels; ++c)
            std::copy_n(ir.data() + n * plane, plane, out.data() + (n * channels + c) * plane);
    return out;
}

CskOutputs forward_csknet(Tape& tape, CskNetModel& model, Var eo, Var ir, const CskForwardOptions& options) {
    const ModelConfig& cfg = model.config();
    if (eo.shape().h != ir.shape().h || eo.shape().w != ir.shape().w || eo.shape().n != ir.shape().n) {
        throw ShapeError(fmt::format("forward_csknet: EO {} and IR {} are not co-registered", eo.shape().str(),
                                     ir.shape().str()));
    }
    if (ir.shape().c != cfg.in_channels) ir = tape.constant(replicate_channels(ir.value(), cfg.in_channels));
    check_image(eo, cfg, "forward_csknet (EO)");
    check_image(ir, cfg, "forward_csknet (IR)");

    CskOutputs out;
    Var xa = eo;
    Var xb = ir;
    for (int s = 1; s <= kEncoderStages; ++s) {
        const auto idx = static_cast<std::size_t>(s - 1);
        xa = model.encoder.stage_forward(tape, s, xa, Modality::kEo, options.mode);
        xb = model.encoder.stage_forward(tape, s, xb, Modality::kIr, options.mode);
        out.stages_eo[idx] = xa;
        out.stages_ir[idx] = xb;
        if (options.exchange) {
            ModalityBatchNorm& bn = model.encoder.stage_norm(s);
            const auto ga = bn.slot(Modality::kEo).gamma.value.values();
            const auto gb = bn.slot(Modality::kIr).gamma.value.values();
            out.exchanges[idx] = mixed_exchange(s, xa, xb, ga, gb, options.exchange_config);
            xa = out.exchanges[idx].a;
            xb = out.exchanges[idx].b;
        } else {
            out.exchanges[idx] = ExchangeResult{xa, xb};
        }
    }
    // Decoders consume the exchanged skip and stage-5 features.
    const std::size_t skip = skip_index(cfg);
    out.decoder_eo = model.decoder_eo.forward(tape, out.exchanges[skip].a, xa, options.mode);
    out.decoder_ir = model.decoder_ir.forward(tape, out.exchanges[skip].b, xb, options.mode);
    const std::int64_t height = eo.shape().h;
    out.p_eo = model.head_eo.forward(tape, out.decoder_eo, height);
    out.p_ir = model.head_ir.forward(tape, out.decoder_ir, height);
    Var fused;
    if (options.fusion == FusionMode::kGsu) {
        out.gsu = gsu_forward(tape, model.gsu, out.decoder_ir, out.decoder_eo, options.gates);
        fused = out.gsu.fused;
    } else {
        fused = add(out.decoder_ir, out.decoder_eo);
    }
    out.p_fused = model.head_fused.forward(tape, fused, height);

    if (options.embeddings) {
        const auto embed = [&](std::size_t head, const Var& features, int stage) {
            out.embeddings.push_back(model.projections[head].forward(tape, features));
            out.embedding_strides.push_back(stage_stride(stage));
        };
        if (cfg.taps == TapPoints::kFigure) {
            embed(0, out.stages_eo[3], 4);
            embed(1, out.stages_eo[4], 5);
            embed(2, out.stages_ir[3], 4);
            embed(3, out.stages_ir[4], 5);
        } else {
            for (int s = 2; s <= 5; ++s) embed(static_cast<std::size_t>(s - 2), out.stages_ir[static_cast<std::size_t>(s - 1)], s);
        }
    }
    return out;
}

Var forward_ir_only(Tape& tape, CskNetModel& model, Var ir, BnMode mode) {
    const ModelConfig& cfg = model.config();
    if (ir.shape().c != cfg.in_channels) ir = tape.constant(replicate_channels(ir.value(), cfg.in_channels));
    check_image(ir, cfg, "forward_ir_only");
    Var x = ir;
    Var skip;
    for (int s = 1; s <= kEncoderStages; ++s) {
        x = model.encoder.stage_forward(tape, s, x, Modality::kIr, mode);
        if (s == cfg.skip_stage) skip = x;
    }
    Var fd = model.decoder_ir.forward(tape, skip, x, mode);
    return model.head_ir.forward(tape, fd, ir.shape().h);
}

ParamSubgraph parse_param_subgraph(std::string_view name) {
    if (name == "full") return ParamSubgraph::kFull;
    if (name == "ir_only" || name == "ir-only") return ParamSubgraph::kIrOnly;
    if (name == "baseline" || name == "baseline_equivalent") return ParamSubgraph::kBaselineEquivalent;
    throw std::invalid_argument(fmt::format("unknown parameter subgraph '{}'", name));
}

std::int64_t count_elements(const std::vector<Parameter*>& params) {
    std::int64_t total = 0;
    for (const Parameter* p : params)
        if (p->trainable) total += static_cast<std::int64_t>(p->value.size());
    return total;
}

std::int64_t param_count(BaselineModel& model, ParamSubgraph) { return count_elements(model.parameters()); }

std::int64_t param_count(CskNetModel& model, ParamSubgraph which) {
    switch (which) {
        case ParamSubgraph::kFull: return count_elements(model.parameters());
        case ParamSubgraph::kIrOnly: return count_elements(model.ir_only_parameters());
        case ParamSubgraph::kBaselineEquivalent: return count_elements(model.eo_path_parameters());
    }
    throw std::invalid_argument("unknown parameter subgraph");
}

}  // namespace csk
