// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include "csknet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace csk {
namespace {

using std::int64_t;

void check_labels(const Shape& s, const LabelMap& labels, const char* what) {
    if (labels.n != s.n || labels.h != s.h || labels.w != s.w) {
        throw ShapeError(fmt::format("{}: labels ({}, {}, {}) do not match logits {}", what, labels.n, labels.h,
                                     labels.w, s.str()));
    }
    for (std::uint8_t v : labels.values) {
        if (v != kIgnoreLabel && v >= s.c) {
            throw std::out_of_range(fmt::format("{}: label {} outside [0, {})", what, v, s.c));
        }
    }
}

Tensor softmax_values(const Tensor& z) {
    Tape scratch;
    return softmax_channel(scratch.constant(z)).value();
}

}  // namespace

SegLoss seg_loss(Var logits, const LabelMap& labels, double dice_eps) {
    const Shape s = logits.shape();
    check_labels(s, labels, "seg_loss");
    const Tensor p = softmax_values(logits.value());
    const int64_t plane = s.h * s.w;
    const auto classes = static_cast<std::size_t>(s.c);

    double ce = 0.0;
    std::size_t valid = 0;
    std::vector<double> inter(classes, 0.0);
    std::vector<double> sum_p(classes, 0.0);
    std::vector<double> sum_y(classes, 0.0);
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t i = 0; i < plane; ++i) {
            const std::uint8_t y = labels.values[static_cast<std::size_t>(n * plane + i)];
            if (y == kIgnoreLabel) continue;
            ++valid;
            for (int64_t c = 0; c < s.c; ++c) {
                const double pc = p[static_cast<std::size_t>((n * s.c + c) * plane + i)];
                sum_p[c] += pc;
                if (c == y) {
                    inter[c] += pc;
                    sum_y[c] += 1.0;
                    ce -= std::log(std::max(pc, 1e-300));
                }
            }
        }
    const double inv_valid = valid > 0 ? 1.0 / static_cast<double>(valid) : 0.0;
    ce *= inv_valid;
    double dice = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        dice += 1.0 - (2.0 * inter[c] + dice_eps) / (sum_y[c] + sum_p[c] + dice_eps);
    }
    dice /= static_cast<double>(classes);

    const int zid = logits.id();
    Var total = logits.tape().record(
        Tensor::scalar(ce + dice), {zid},
        [=](Tape& tape, int self) {
            const double g_out = tape.grad(self)[0];
            Tensor& gz = tape.grad_buffer(zid);
            std::vector<double> g(classes);
            for (int64_t n = 0; n < s.n; ++n)
                for (int64_t i = 0; i < plane; ++i) {
                    const std::uint8_t y = labels.values[static_cast<std::size_t>(n * plane + i)];
                    if (y == kIgnoreLabel) continue;
                    // d(dice)/dp_c at this pixel; CE is handled on logits directly.
                    double dot = 0.0;
                    for (int64_t c = 0; c < s.c; ++c) {
                        const double denom = sum_y[c] + sum_p[c] + dice_eps;
                        const double yc = (c == y) ? 1.0 : 0.0;
                        g[c] = -(2.0 * yc * denom - (2.0 * inter[c] + dice_eps)) / (denom * denom) /
                               static_cast<double>(classes);
                        dot += p[static_cast<std::size_t>((n * s.c + c) * plane + i)] * g[c];
                    }
                    for (int64_t c = 0; c < s.c; ++c) {
                        const auto k = static_cast<std::size_t>((n * s.c + c) * plane + i);
                        const double yc = (c == y) ? 1.0 : 0.0;
                        gz[k] += g_out * ((p[k] - yc) * inv_valid + p[k] * (g[c] - dot));
                    }
                }
        });
    return {total, ce, dice};
}

DistillPredLoss distill_pred_loss(Var logits, const Tensor& teacher_probs) {
    const Shape s = logits.shape();
    require_same_shape(s, teacher_probs.shape(), "distill_pred_loss");
    const int64_t plane = s.h * s.w;
    double neg_entropy = 0.0;
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t i = 0; i < plane; ++i) {
            double total = 0.0;
            for (int64_t c = 0; c < s.c; ++c) {
                const double q = teacher_probs[static_cast<std::size_t>((n * s.c + c) * plane + i)];
                if (q < 0.0 || !std::isfinite(q)) throw NumericError("distill_pred_loss: teacher probability invalid");
                total += q;
                if (q > 0.0) neg_entropy += q * std::log(q);
            }
            if (std::abs(total - 1.0) > 1e-4) {
                throw NumericError(fmt::format(
                    "distill_pred_loss: teacher distribution sums to {} at pixel ({}, {})", total, n, i));
            }
        }
    const auto pixels = static_cast<double>(s.n * plane);
    Tape& tape = logits.tape();
    Var logp = log_softmax_channel(logits);
    Var cross = sum(mul(logp, tape.constant(teacher_probs)));  // sum q log p
    const double cross_v = cross.value()[0];
    Var total = add(scalar_mul(cross, -2.0 / pixels), tape.constant(Tensor::scalar(neg_entropy / pixels)));
    return {total, (neg_entropy - cross_v) / pixels, -cross_v / pixels};
}

Var distill_feat_loss(std::span<const Var> student, std::span<const Tensor> teacher) {
    if (student.size() != teacher.size() || student.empty()) {
        throw ShapeError("distill_feat_loss: student and teacher feature lists differ in length");
    }
    Var total;
    for (std::size_t i = 0; i < student.size(); ++i) {
        require_same_shape(student[i].shape(), teacher[i].shape(), "distill_feat_loss");
        Var d = sub(student[i], student[i].tape().constant(teacher[i]));
        Var term = mean(mul(d, d));
        total = total.valid() ? add(total, term) : term;
    }
    return total;
}

double info_nce_term(double s_pos, std::span<const double> s_neg, double tau) {
    double mx = s_pos / tau;
    for (double s : s_neg) mx = std::max(mx, s / tau);
    double z = std::exp(s_pos / tau - mx);
    for (double s : s_neg) z += std::exp(s / tau - mx);
    return mx + std::log(z) - s_pos / tau;
}

std::size_t semi_hard_count(std::size_t available, double fraction) {
    if (available == 0) return 0;
    const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(available) - 1e-9));
    return std::clamp<std::size_t>(k, 1, available);
}

ContrastiveLoss pixel_contrastive_loss(Var embeddings, const LabelMap& labels, const ContrastiveConfig& config,
                                       Rng& rng) {
    if (!(config.temperature > 0.0)) throw std::invalid_argument("pixel_contrastive_loss: temperature must be > 0");
    if (!(config.semi_hard_fraction > 0.0 && config.semi_hard_fraction <= 1.0)) {
        throw std::invalid_argument("pixel_contrastive_loss: semi_hard_fraction must be in (0, 1]");
    }
    if (config.anchors_per_class < 1) throw std::invalid_argument("pixel_contrastive_loss: anchors_per_class < 1");
    const Shape s = embeddings.shape();
    if (labels.n != s.n || labels.h != s.h || labels.w != s.w) {
        throw ShapeError(fmt::format("pixel_contrastive_loss: labels ({}, {}, {}) not aligned with embeddings {}",
                                     labels.n, labels.h, labels.w, s.str()));
    }
    Tape& tape = embeddings.tape();
    const int64_t plane = s.h * s.w;
    const int64_t dim = s.c;
    const Tensor& e = embeddings.value();

    // Pool of labelled pixels as (batch, pixel) flat indices.
    std::vector<int64_t> pool;
    std::vector<std::uint8_t> pool_label;
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t i = 0; i < plane; ++i) {
            const std::uint8_t y = labels.values[static_cast<std::size_t>(n * plane + i)];
            if (y == kIgnoreLabel) continue;
            pool.push_back(n * plane + i);
            pool_label.push_back(y);
        }
    const std::size_t m = pool.size();

    // Unit embeddings, one row per pool entry.
    std::vector<double> unit(m * static_cast<std::size_t>(dim));
    std::vector<double> norm(m);
    for (std::size_t r = 0; r < m; ++r) {
        const int64_t n = pool[r] / plane;
        const int64_t i = pool[r] % plane;
        double sq = 0.0;
        for (int64_t c = 0; c < dim; ++c) {
            const double v = e[static_cast<std::size_t>((n * dim + c) * plane + i)];
            sq += v * v;
        }
        norm[r] = std::max(std::sqrt(sq), 1e-12);
        for (int64_t c = 0; c < dim; ++c)
            unit[r * dim + c] = e[static_cast<std::size_t>((n * dim + c) * plane + i)] / norm[r];
    }

    std::vector<std::size_t> anchors;
    {
        std::vector<std::size_t> members;
        for (int64_t n = 0; n < s.n; ++n) {
            for (int cls = 0; cls < 255; ++cls) {
                members.clear();
                for (std::size_t r = 0; r < m; ++r)
                    if (pool[r] / plane == n && pool_label[r] == cls) members.push_back(r);
                if (members.empty()) continue;
                const std::size_t take = std::min<std::size_t>(members.size(), static_cast<std::size_t>(config.anchors_per_class));
                for (std::size_t k = 0; k < take; ++k) {
                    const std::size_t j = k + static_cast<std::size_t>(uniform_index(rng, members.size() - k));
                    std::swap(members[k], members[j]);
                    anchors.push_back(members[k]);
                }
            }
        }
    }

    const auto dot = [&](std::size_t a, std::size_t b) {
        double acc = 0.0;
        for (int64_t c = 0; c < dim; ++c) acc += unit[a * dim + c] * unit[b * dim + c];
        return acc;
    };

    struct Pair {
        std::size_t anchor;
        std::size_t positive;
        std::vector<std::size_t> negatives;
    };
    std::vector<Pair> pairs;
    std::size_t used_anchors = 0;
    std::vector<std::pair<double, std::size_t>> pos;
    std::vector<std::pair<double, std::size_t>> neg;
    for (std::size_t a : anchors) {
        pos.clear();
        neg.clear();
        for (std::size_t r = 0; r < m; ++r) {
            if (r == a) continue;
            (pool_label[r] == pool_label[a] ? pos : neg).emplace_back(dot(a, r), r);
        }
        if (pos.empty() || neg.empty()) continue;
        ++used_anchors;
        // Nearest negatives first; farthest positives first.
        std::sort(neg.begin(), neg.end(), [](const auto& x, const auto& y) {
            return x.first != y.first ? x.first > y.first : x.second < y.second;
        });
        std::sort(pos.begin(), pos.end(), [](const auto& x, const auto& y) {
            return x.first != y.first ? x.first < y.first : x.second < y.second;
        });
        const std::size_t keep_neg = semi_hard_count(neg.size(), config.semi_hard_fraction);
        const std::size_t hard_pos = semi_hard_count(pos.size(), config.semi_hard_fraction);
        std::size_t pos_begin = 0;
        std::size_t pos_end = hard_pos;
        if (!config.keep_farthest_positives) {
            pos_begin = hard_pos < pos.size() ? hard_pos : 0;
            pos_end = pos.size();
        }
        std::vector<std::size_t> negs;
        for (std::size_t k = 0; k < keep_neg; ++k) negs.push_back(neg[k].second);
        for (std::size_t k = pos_begin; k < pos_end; ++k) pairs.push_back({a, pos[k].second, negs});
    }

    if (pairs.empty()) return {tape.constant(Tensor::scalar(0.0)), used_anchors, 0};

    const double tau = config.temperature;
    double loss = 0.0;
    std::vector<double> negs_s;
    for (const Pair& p : pairs) {
        negs_s.clear();
        for (std::size_t k : p.negatives) negs_s.push_back(dot(p.anchor, k));
        loss += info_nce_term(dot(p.anchor, p.positive), negs_s, tau);
    }
    const std::size_t pair_count = pairs.size();
    const double inv_pairs = 1.0 / static_cast<double>(pair_count);
    loss *= inv_pairs;

    const int eid = embeddings.id();
    Var total = tape.record(
        Tensor::scalar(loss), {eid},
        [=, pairs = std::move(pairs), unit = std::move(unit), norm = std::move(norm),
         pool = std::move(pool)](Tape& tp, int self) {
            const double g_out = tp.grad(self)[0] * inv_pairs;
            std::vector<double> gunit(unit.size(), 0.0);
            const auto sim = [&](std::size_t a, std::size_t b) {
                double acc = 0.0;
                for (int64_t c = 0; c < dim; ++c) acc += unit[a * dim + c] * unit[b * dim + c];
                return acc;
            };
            const auto push = [&](std::size_t a, std::size_t b, double g) {
                for (int64_t c = 0; c < dim; ++c) {
                    gunit[a * dim + c] += g * unit[b * dim + c];
                    gunit[b * dim + c] += g * unit[a * dim + c];
                }
            };
            std::vector<double> logits;
            for (const Pair& p : pairs) {
                logits.clear();
                logits.push_back(sim(p.anchor, p.positive) / tau);
                for (std::size_t k : p.negatives) logits.push_back(sim(p.anchor, k) / tau);
                const double mx = *std::max_element(logits.begin(), logits.end());
                double z = 0.0;
                for (double l : logits) z += std::exp(l - mx);
                // d/d s = (softmax - onehot(pos)) / tau
                push(p.anchor, p.positive, g_out * (std::exp(logits[0] - mx) / z - 1.0) / tau);
                for (std::size_t k = 0; k < p.negatives.size(); ++k)
                    push(p.anchor, p.negatives[k], g_out * std::exp(logits[k + 1] - mx) / z / tau);
            }
            Tensor& ge = tp.grad_buffer(eid);
            for (std::size_t r = 0; r < pool.size(); ++r) {
                double proj = 0.0;
                for (int64_t c = 0; c < dim; ++c) proj += unit[r * dim + c] * gunit[r * dim + c];
                const int64_t n = pool[r] / plane;
                const int64_t i = pool[r] % plane;
                for (int64_t c = 0; c < dim; ++c) {
                    ge[static_cast<std::size_t>((n * dim + c) * plane + i)] +=
                        (gunit[r * dim + c] - unit[r * dim + c] * proj) / norm[r];
                }
            }
        });
    return {total, used_anchors, pair_count};
}

JointLoss joint_loss(const CskOutputs& outputs, const LabelMap& labels, const TeacherTargets* teacher,
                     const LossWeights& weights, const ContrastiveConfig& contrastive, Rng& rng) {
    JointLoss out;
    out.report.weights = weights;
    Tape& tape = outputs.p_ir.tape();
    std::vector<Var> terms;
    if (weights.seg != 0.0) {
        Var seg = add(seg_loss(outputs.p_fused, labels).total, seg_loss(outputs.p_ir, labels).total);
        out.report.l_seg = seg.value()[0];
        terms.push_back(scalar_mul(seg, weights.seg));
    }
    if (weights.d1 != 0.0 || weights.d2 != 0.0) {
        if (teacher == nullptr) throw std::invalid_argument("joint_loss: distillation enabled without teacher targets");
    }
    if (weights.d1 != 0.0) {
        DistillPredLoss d1 = distill_pred_loss(outputs.p_eo, teacher->probs);
        out.report.l_d1 = d1.total.value()[0];
        terms.push_back(scalar_mul(d1.total, weights.d1));
    }
    if (weights.d2 != 0.0) {
        const Var student[] = {outputs.stages_eo[3], outputs.stages_eo[4], outputs.decoder_eo};
        const Tensor targets[] = {teacher->f4, teacher->f5, teacher->fd};
        Var d2 = distill_feat_loss(student, targets);
        out.report.l_d2 = d2.value()[0];
        terms.push_back(scalar_mul(d2, weights.d2));
    }
    if (weights.cl != 0.0) {
        if (outputs.embeddings.empty()) throw std::invalid_argument("joint_loss: contrastive term enabled without embeddings");
        Var cl;
        for (std::size_t k = 0; k < outputs.embeddings.size(); ++k) {
            const LabelMap tap_labels = downsample_labels(labels, static_cast<int>(outputs.embedding_strides[k]));
            Var term = pixel_contrastive_loss(outputs.embeddings[k], tap_labels, contrastive, rng).total;
            cl = cl.valid() ? add(cl, term) : term;
        }
        out.report.l_cl = cl.value()[0];
        terms.push_back(scalar_mul(cl, weights.cl));
    }
    if (terms.empty()) {
        out.total = tape.constant(Tensor::scalar(0.0));
    } else {
        out.total = terms.front();
        for (std::size_t k = 1; k < terms.size(); ++k) out.total = add(out.total, terms[k]);
    }
    out.report.l_total = out.total.value()[0];
    return out;
}

}  // namespace csk
