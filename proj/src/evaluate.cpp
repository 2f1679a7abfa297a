// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include "csknet/evaluate.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace csk {

ConfusionMatrix::ConfusionMatrix(std::int64_t classes)
    : classes_(classes), counts_(static_cast<std::size_t>(classes * classes), 0) {
    if (classes < 1) throw std::invalid_argument("ConfusionMatrix needs >= 1 class");
}

void ConfusionMatrix::update(const LabelMap& pred, const LabelMap& gt) {
    if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w)
        throw ShapeError(fmt::format("confusion_update: prediction {}x{}x{} vs ground truth {}x{}x{}", pred.n, pred.h,
                                     pred.w, gt.n, gt.h, gt.w));
    for (std::size_t i = 0; i < gt.values.size(); ++i) {
        const std::uint8_t g = gt.values[i];
        if (g == kIgnoreLabel) continue;
        const std::uint8_t p = pred.values[i];
        if (g >= classes_ || p >= classes_)
            throw std::out_of_range(fmt::format("confusion_update: label {} / prediction {} outside {} classes", g, p,
                                                classes_));
        ++counts_[static_cast<std::size_t>(g * classes_ + p)];
    }
}

std::int64_t ConfusionMatrix::at(std::int64_t gt, std::int64_t pred) const {
    if (gt < 0 || gt >= classes_ || pred < 0 || pred >= classes_) throw std::out_of_range("ConfusionMatrix::at");
    return counts_[static_cast<std::size_t>(gt * classes_ + pred)];
}

std::int64_t ConfusionMatrix::total() const noexcept {
    return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

EvalMode parse_eval_mode(const std::string& name) {
    if (name == "fused") return EvalMode::kFused;
    if (name == "optical") return EvalMode::kOptical;
    if (name == "ir-only" || name == "ir_only") return EvalMode::kIrOnly;
    throw std::invalid_argument("unknown eval mode '" + name + "' (want fused|optical|ir-only)");
}

const char* eval_mode_name(EvalMode m) noexcept {
    switch (m) {
        case EvalMode::kFused: return "fused";
        case EvalMode::kOptical: return "optical";
        case EvalMode::kIrOnly: return "ir_only";
    }
    return "?";
}

EvalReport iou_report(const ConfusionMatrix& cm, EvalMode mode) {
    const std::int64_t c = cm.classes();
    EvalReport r;
    r.mode = mode;
    r.iou.assign(static_cast<std::size_t>(c), 0.0);
    r.present.assign(static_cast<std::size_t>(c), false);
    double sum = 0.0;
    int counted = 0;
    for (std::int64_t k = 0; k < c; ++k) {
        std::int64_t row = 0;
        std::int64_t col = 0;
        for (std::int64_t j = 0; j < c; ++j) {
            row += cm.at(k, j);
            col += cm.at(j, k);
        }
        const std::int64_t tp = cm.at(k, k);
        const std::int64_t uni = row + col - tp;
        if (uni == 0) continue;
        const auto ku = static_cast<std::size_t>(k);
        r.present[ku] = true;
        r.iou[ku] = static_cast<double>(tp) / static_cast<double>(uni);
        sum += r.iou[ku];
        ++counted;
    }
    r.miou = counted > 0 ? sum / counted : 0.0;
    return r;
}

LabelMap argmax_labels(const Tensor& logits) {
    const Shape& s = logits.shape();
    LabelMap out(s.n, s.h, s.w);
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t y = 0; y < s.h; ++y)
            for (std::int64_t x = 0; x < s.w; ++x) {
                std::int64_t best = 0;
                for (std::int64_t c = 1; c < s.c; ++c)
                    if (logits.at(n, c, y, x) > logits.at(n, best, y, x)) best = c;
                out.at(n, y, x) = static_cast<std::uint8_t>(best);
            }
    return out;
}

namespace {

template <class Fn>
EvalReport run_eval(std::span<const PairedSample> samples, std::int64_t classes, EvalMode mode, int batch_size,
                    Fn&& logits_of) {
    if (samples.empty()) throw std::invalid_argument("evaluation needs at least one sample");
    if (batch_size < 1) throw std::invalid_argument("evaluation batch size must be >= 1");
    ConfusionMatrix cm(classes);
    const auto step = static_cast<std::size_t>(batch_size);
    for (std::size_t begin = 0; begin < samples.size(); begin += step) {
        std::vector<std::size_t> idx(std::min(step, samples.size() - begin));
        std::iota(idx.begin(), idx.end(), begin);
        const Batch b = make_batch(samples, idx);
        cm.update(argmax_labels(logits_of(b)), b.labels);
    }
    EvalReport r = iou_report(cm, mode);
    r.samples = static_cast<std::int64_t>(samples.size());
    return r;
}

}  // namespace

EvalReport evaluate_model(CskNetModel& model, std::span<const PairedSample> samples, EvalMode mode,
                          const EvalOptions& options) {
    const std::int64_t ch = model.config().in_channels;
    return run_eval(samples, model.config().num_classes, mode, options.batch_size, [&](const Batch& b) {
        if (b.ir.empty()) throw std::invalid_argument("evaluation needs IR images");
        Tape tape;
        const Var ir = tape.constant(replicate_channels(b.ir, ch));
        if (mode == EvalMode::kIrOnly) return forward_ir_only(tape, model, ir, BnMode::kEval).value();
        if (b.eo.empty()) throw std::invalid_argument("fused/optical evaluation needs EO images");
        CskForwardOptions opts;
        opts.mode = BnMode::kEval;
        opts.exchange = options.exchange;
        opts.exchange_config = options.exchange_config;
        opts.fusion = options.fusion;
        opts.embeddings = false;
        const CskOutputs o = forward_csknet(tape, model, tape.constant(b.eo), ir, opts);
        return mode == EvalMode::kFused ? o.p_fused.value() : o.p_eo.value();
    });
}

EvalReport evaluate_baseline(BaselineModel& model, std::span<const PairedSample> samples, EvalMode mode,
                             int batch_size) {
    if (mode == EvalMode::kFused) throw std::invalid_argument("fused evaluation needs a CSK-Net model");
    const std::int64_t ch = model.config().in_channels;
    return run_eval(samples, model.config().num_classes, mode, batch_size, [&](const Batch& b) {
        const Tensor& src = mode == EvalMode::kOptical ? b.eo : b.ir;
        if (src.empty()) throw std::invalid_argument("evaluation input modality not loaded");
        Tape tape;
        const Tensor x = mode == EvalMode::kOptical ? src : replicate_channels(src, ch);
        return forward_baseline(tape, model, tape.constant(x), BnMode::kEval).logits.value();
    });
}

std::string format_report(const EvalReport& report, std::span<const std::string> class_names) {
    std::string out = fmt::format("mode\t{}\nsamples\t{}\n", eval_mode_name(report.mode), report.samples);
    for (std::size_t c = 0; c < report.iou.size(); ++c) {
        const std::string name = c < class_names.size() ? class_names[c] : fmt::format("class{}", c);
        out += report.present[c] ? fmt::format("iou[{}]\t{:.4f}\n", name, report.iou[c])
                                 : fmt::format("iou[{}]\tabsent\n", name);
    }
    out += fmt::format("miou\t{:.4f}\n", report.miou);
    return out;
}

std::vector<AblationVariant> ablation_variants() {
    return {
        {"full", true, FusionMode::kGsu, true},
        {"no_cl", false, FusionMode::kGsu, true},
        {"no_gsu", true, FusionMode::kSum, true},
        {"no_exchange", true, FusionMode::kGsu, false},
        {"no_cl_no_exchange", false, FusionMode::kGsu, false},
    };
}

namespace {

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

AblationTable ablation_report(const TrainConfig& config, std::span<const PairedSample> train,
                              std::span<const PairedSample> test, std::span<const std::uint64_t> seeds) {
    if (seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
    const std::vector<AblationVariant> variants = ablation_variants();
    AblationTable table;
    for (const auto& v : variants) table.variants.push_back(v.name);
    std::vector<std::vector<double>> scores(variants.size());
    for (const std::uint64_t seed : seeds) {
        TrainConfig base = config;
        base.seed = seed;
        base.out_dir.clear();
        BaselineModel teacher = train_stage1(base, train, Modality::kEo).model;
        for (std::size_t k = 0; k < variants.size(); ++k) {
            const AblationVariant& v = variants[k];
            TrainConfig c = base;
            if (!v.contrastive) c.weights.cl = 0.0;
            c.fusion = v.fusion;
            c.exchange = v.exchange;
            CskNetModel model = train_stage2(c, train, teacher).model;
            const EvalOptions eo{8, c.fusion, c.exchange, c.exchange_config};
            const double miou = evaluate_model(model, test, EvalMode::kFused, eo).miou;
            table.rows.push_back({v.name, seed, miou});
            scores[k].push_back(miou);
        }
    }
    for (auto& s : scores) table.medians.push_back(median(s));
    return table;
}

std::string format_ablation(const AblationTable& table) {
    std::string out = "variant\tseed\tmiou\n";
    for (const AblationRow& r : table.rows) out += fmt::format("{}\t{}\t{:.4f}\n", r.variant, r.seed, r.miou);
    const double full = table.medians.empty() ? 0.0 : table.medians.front();
    out += "variant\tmedian_miou\tfull_median_miou\n";
    for (std::size_t k = 0; k < table.variants.size(); ++k)
        out += fmt::format("{}\t{:.4f}\t{:.4f}\n", table.variants[k], table.medians[k], full);
    out += "# paper reference mIoU (paper-scale, not a desk-scale target):";
    for (std::size_t k = 0; k < std::size(kPaperAblation) && k < table.variants.size(); ++k)
        out += fmt::format(" {} {:.2f}", table.variants[k], kPaperAblation[k]);
    out += "\n";
    return out;
}

}  // namespace csk
