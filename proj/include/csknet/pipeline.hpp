// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-stage training: stage 1 fits a single-modality baseline with the
// segmentation loss; stage 2 fits CSK-Net against the frozen stage-1 model.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csknet/data.hpp"
#include "csknet/losses.hpp"
#include "csknet/network.hpp"

namespace csk {

struct TrainConfig {
    ModelConfig model;
    int epochs = 60;
    int batch_size = 8;
    double base_lr = 0.02;
    double momentum = 0.9;
    double poly_power = 0.9;
    double weight_decay = 0.0;
    /// Run seed. Trainers build their model with model.seed = seed.
    std::uint64_t seed = 1;
    LossWeights weights;
    bool exchange = true;
    ExchangeConfig exchange_config;
    FusionMode fusion = FusionMode::kGsu;
    ContrastiveConfig contrastive;
    bool hflip = true;
    /// Stage 2: copy shared convs, EO BN, EO decoder and head from the teacher.
    bool init_eo_from_teacher = true;
    /// Writes epoch_NNNN.ckpt every this many epochs; 0 disables.
    int checkpoint_every = 0;
    std::string data_dir;
    /// When empty the trainers write nothing to disk.
    std::string out_dir;

    /// The paper-scale schedule: 200 epochs at base_lr 5e-3.
    static TrainConfig paper_preset();
    /// Throws std::invalid_argument on epochs < 1, batch_size < 2, base_lr <= 0.
    void validate() const;
    [[nodiscard]] ModelConfig model_config() const;
};

/// base_lr * (1 - step / total)^power. Throws on step outside [0, total].
double poly_lr(int step, int total, double base_lr, double power = 0.9);

struct SgdState {
    std::map<std::string, Tensor> velocity;
    std::int64_t steps = 0;
};

/// v <- momentum * v + (g + weight_decay * p); p <- p - lr * v. Buffers are
/// keyed by parameter name and created on first use. Frozen parameters are
/// skipped.
void sgd_step(std::span<Parameter* const> params, SgdState& state, double lr, double momentum,
              double weight_decay = 0.0);

/// Flips EO, IR and labels together with probability 0.5.
PairedSample augment_hflip(const PairedSample& sample, Rng& rng);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double l_seg = 0.0;
    double l_d1 = 0.0;
    double l_d2 = 0.0;
    double l_cl = 0.0;
    double l_total = 0.0;
    double train_miou = 0.0;
    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Tab-separated metrics log.
std::string metrics_header();
std::string metrics_line(const EpochRecord& r);

class CheckpointError : public DataError {
public:
    using DataError::DataError;
};

struct Checkpoint {
    std::string kind;      // "baseline" or "csknet"
    std::string modality;  // baseline input modality: "eo" or "ir"
    std::string config_json;
    int epoch = 0;         // epochs completed
    double best_miou = -1.0;
    int best_epoch = -1;
    std::string rng_state;
    std::int64_t optimizer_steps = 0;
    std::vector<EpochRecord> history;
    std::map<std::string, Tensor> params;
    std::map<std::string, Tensor> buffers;
    std::map<std::string, Tensor> momentum;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "CSKCKPT\0", u32 version, u64 header length, JSON header, u64 blob count,
/// then per blob: u32 name length, name, 4 x i64 extents, f64 values. All
/// integers and floats little-endian.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void capture_parameters(std::span<Parameter* const> params, std::span<const BufferRef> buffers, Checkpoint& ckpt);
/// Throws CheckpointError when a name is missing or a shape differs.
void restore_parameters(const Checkpoint& ckpt, std::span<Parameter* const> params,
                        std::span<const BufferRef> buffers);

BaselineModel load_baseline(const Checkpoint& ckpt);
CskNetModel load_csknet(const Checkpoint& ckpt);
/// ModelConfig echoed in a checkpoint header.
ModelConfig checkpoint_model_config(const Checkpoint& ckpt);

struct Stage1Result {
    BaselineModel model;
    std::vector<EpochRecord> history;
    Checkpoint last;
};

/// Trains a baseline on one modality (EO is the stage-1 teacher; IR gives the
/// from-scratch IR baseline). `resume` continues a run from its checkpoint.
Stage1Result train_stage1(const TrainConfig& config, std::span<const PairedSample> train, Modality modality,
                          const Checkpoint* resume = nullptr);

struct Stage2Result {
    CskNetModel model;
    std::vector<EpochRecord> history;
    Checkpoint last;
};

/// Trains CSK-Net with distillation from `teacher`, which runs in eval mode
/// and is never written. Throws std::invalid_argument when the teacher's
/// architecture differs from config.model.
Stage2Result train_stage2(const TrainConfig& config, std::span<const PairedSample> train, BaselineModel& teacher,
                          const Checkpoint* resume = nullptr);

/// Teacher outputs for one EO batch (eval mode, separate tape).
TeacherTargets teacher_targets(BaselineModel& teacher, const Tensor& eo);

}  // namespace csk
