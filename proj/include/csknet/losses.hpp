// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: segmentation (CE + dice), prediction distillation,
// feature distillation, supervised pixel contrastive loss, and the joint
// stage-2 objective that sums them.

#pragma once

#include <span>
#include <vector>

#include "csknet/labels.hpp"
#include "csknet/network.hpp"
#include "csknet/rng.hpp"

namespace csk {

inline constexpr double kDiceSmoothing = 1.0;

struct SegLoss {
    Var total;
    double ce = 0.0;
    double dice = 0.0;
};

/// Mean per-pixel cross-entropy of softmax(logits) plus the class-averaged
/// soft dice loss 1 - (2 I_c + eps) / (|y_c| + |p_c| + eps). Ignore-label
/// pixels are excluded from both terms.
SegLoss seg_loss(Var logits, const LabelMap& labels, double dice_eps = kDiceSmoothing);

struct DistillPredLoss {
    Var total;
    double kl = 0.0;  // mean_pixels KL(q || p)
    double ce = 0.0;  // mean_pixels H(q, p)
};

/// sum q log(q / p) - sum q log p per pixel, averaged over pixels, where p is
/// softmax(logits) and q the detached teacher distribution.
DistillPredLoss distill_pred_loss(Var logits, const Tensor& teacher_probs);

/// Sum over the pairs of mean squared differences. Teacher tensors are
/// detached constants.
Var distill_feat_loss(std::span<const Var> student, std::span<const Tensor> teacher);

struct ContrastiveConfig {
    double temperature = 0.1;
    int anchors_per_class = 64;
    double semi_hard_fraction = 0.10;
    /// true: keep the farthest positives; false: discard them and keep the rest.
    bool keep_farthest_positives = true;
};

struct ContrastiveLoss {
    Var total;
    std::size_t anchors = 0;
    std::size_t pairs = 0;
};

/// -log(exp(s_pos / tau) / (exp(s_pos / tau) + sum_k exp(s_neg_k / tau))).
double info_nce_term(double s_pos, std::span<const double> s_neg, double tau);

/// Number of entries kept by semi-hard selection out of `available`.
std::size_t semi_hard_count(std::size_t available, double fraction);

/// Supervised pixel contrastive loss over one tap. `labels` must already be
/// at the embedding resolution. Embeddings are L2-normalized per pixel; the
/// candidate pool is every labelled pixel of the batch. Anchor sampling draws
/// from `rng` image by image, class by class.
ContrastiveLoss pixel_contrastive_loss(Var embeddings, const LabelMap& labels,
                                       const ContrastiveConfig& config, Rng& rng);

struct LossWeights {
    double seg = 1.0;
    double d1 = 1.0;
    double d2 = 1.0;
    double cl = 1.0;
    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossReport {
    double l_seg = 0.0;
    double l_d1 = 0.0;
    double l_d2 = 0.0;
    double l_cl = 0.0;
    double l_total = 0.0;
    LossWeights weights;
};

/// Frozen pretrained model outputs on the EO input.
struct TeacherTargets {
    Tensor probs;
    Tensor f4;
    Tensor f5;
    Tensor fd;
};

struct JointLoss {
    Var total;
    LossReport report;
};

/// L_seg(p_fused) + L_seg(p_ir) + L_D1(p_eo, teacher) + L_D2 + L_CL, each term
/// scaled by its weight. A term with weight 0 is not built at all (its value
/// is reported as 0 and its parameters receive no gradient).
JointLoss joint_loss(const CskOutputs& outputs, const LabelMap& labels, const TeacherTargets* teacher,
                     const LossWeights& weights, const ContrastiveConfig& contrastive, Rng& rng);

}  // namespace csk
