// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0
//
// mIoU, the three inference modes, and the ablation harness.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "csknet/data.hpp"
#include "csknet/network.hpp"
#include "csknet/pipeline.hpp"

namespace csk {

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::int64_t classes);

    /// Ignore-label ground-truth pixels are skipped. Throws std::out_of_range
    /// on any other label >= classes, and ShapeError on extent mismatch.
    void update(const LabelMap& pred, const LabelMap& gt);
    [[nodiscard]] std::int64_t at(std::int64_t gt, std::int64_t pred) const;
    [[nodiscard]] std::int64_t classes() const noexcept { return classes_; }
    [[nodiscard]] std::int64_t total() const noexcept;

private:
    std::int64_t classes_;
    std::vector<std::int64_t> counts_;  // gt-major
};

enum class EvalMode { kFused, kOptical, kIrOnly };
EvalMode parse_eval_mode(const std::string& name);
const char* eval_mode_name(EvalMode m) noexcept;

struct EvalReport {
    EvalMode mode = EvalMode::kFused;
    /// IoU per class; entries for classes absent from prediction and ground
    /// truth are 0 with present[c] == false.
    std::vector<double> iou;
    std::vector<bool> present;
    double miou = 0.0;
    std::int64_t samples = 0;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// IoU_c = TP / (TP + FP + FN); the mean skips classes with an empty union.
EvalReport iou_report(const ConfusionMatrix& cm, EvalMode mode = EvalMode::kFused);

/// Per-pixel argmax over channels; ties go to the lowest class.
LabelMap argmax_labels(const Tensor& logits);

struct EvalOptions {
    int batch_size = 8;
    FusionMode fusion = FusionMode::kGsu;
    bool exchange = true;
    ExchangeConfig exchange_config;
};

/// Eval-mode BN throughout. kFused argmaxes the GSU prediction, kOptical the
/// EO head, kIrOnly runs the IR branch alone (the EO tensor is not read).
EvalReport evaluate_model(CskNetModel& model, std::span<const PairedSample> samples, EvalMode mode,
                          const EvalOptions& options = {});

/// A baseline on the modality it was trained on: kOptical feeds EO,
/// kIrOnly feeds IR. kFused throws std::invalid_argument.
EvalReport evaluate_baseline(BaselineModel& model, std::span<const PairedSample> samples, EvalMode mode,
                             int batch_size = 8);

/// Human-readable per-class table.
std::string format_report(const EvalReport& report, std::span<const std::string> class_names = {});

struct AblationVariant {
    std::string name;
    bool contrastive = true;
    FusionMode fusion = FusionMode::kGsu;
    bool exchange = true;
};

/// full, no CL, no GSU, no exchange, no CL and no exchange.
std::vector<AblationVariant> ablation_variants();

struct AblationRow {
    std::string variant;
    std::uint64_t seed = 0;
    double miou = 0.0;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    std::vector<std::string> variants;
    std::vector<double> medians;  // per variant, same order
};

/// Paper-scale mIoU of the five variants, in ablation_variants() order.
inline constexpr double kPaperAblation[5] = {69.38, 68.01, 68.90, 68.54, 68.37};

/// For every seed: trains one EO teacher, then every variant from it, and
/// scores fused mIoU on `test`.
AblationTable ablation_report(const TrainConfig& config, std::span<const PairedSample> train,
                              std::span<const PairedSample> test, std::span<const std::uint64_t> seeds);

/// Tab-separated rows, a median row per variant, and the reference footer.
std::string format_ablation(const AblationTable& table);

}  // namespace csk
