// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "csknet/evaluate.hpp"

namespace csk {
namespace {

LabelMap map2x2(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
    LabelMap m(1, 2, 2);
    m.values = {a, b, c, d};
    return m;
}

double brute_force_miou(const LabelMap& pred, const LabelMap& gt, int classes) {
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < classes; ++c) {
        std::set<std::size_t> p, g;
        for (std::size_t i = 0; i < gt.values.size(); ++i) {
            if (gt.values[i] == kIgnoreLabel) continue;
            if (pred.values[i] == c) p.insert(i);
            if (gt.values[i] == c) g.insert(i);
        }
        std::set<std::size_t> both;
        std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::inserter(both, both.begin()));
        std::set<std::size_t> any = p;
        any.insert(g.begin(), g.end());
        if (any.empty()) continue;
        sum += static_cast<double>(both.size()) / static_cast<double>(any.size());
        ++present;
    }
    return sum / present;
}

TEST(ConfusionTest, HandComputedExample) {
    ConfusionMatrix cm(2);
    cm.update(map2x2(0, 1, 1, 1), map2x2(0, 0, 1, 1));
    const EvalReport r = iou_report(cm);
    EXPECT_DOUBLE_EQ(r.iou[0], 0.5);
    EXPECT_DOUBLE_EQ(r.iou[1], 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.miou, 7.0 / 12.0);
    EXPECT_EQ(cm.total(), 4);
}

TEST(ConfusionTest, PerfectPrediction) {
    ConfusionMatrix cm(4);
    const LabelMap m = map2x2(0, 2, 2, 3);
    cm.update(m, m);
    const EvalReport r = iou_report(cm);
    EXPECT_EQ(r.miou, 1.0);
    EXPECT_FALSE(r.present[1]);
}

TEST(ConfusionTest, DisjointClassScoresZero) {
    ConfusionMatrix cm(3);
    cm.update(map2x2(2, 2, 0, 0), map2x2(1, 1, 0, 0));
    const EvalReport r = iou_report(cm);
    EXPECT_EQ(r.iou[1], 0.0);
    EXPECT_EQ(r.iou[2], 0.0);
    EXPECT_TRUE(r.present[1]);
    EXPECT_DOUBLE_EQ(r.miou, 1.0 / 3.0);
}

TEST(ConfusionTest, IgnoreAndErrors) {
    ConfusionMatrix cm(2);
    cm.update(map2x2(0, 1, 1, 0), map2x2(0, kIgnoreLabel, 1, 0));
    EXPECT_EQ(cm.total(), 3);
    EXPECT_THROW(cm.update(map2x2(0, 2, 0, 0), map2x2(0, 0, 0, 0)), std::out_of_range);
    EXPECT_THROW(cm.update(LabelMap(1, 2, 3), map2x2(0, 0, 0, 0)), ShapeError);
}

TEST(ConfusionTest, AgreesWithBruteForce) {
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        const int classes = 2 + static_cast<int>(uniform_index(rng, 4));
        const auto h = static_cast<std::int64_t>(1 + uniform_index(rng, 6));
        const auto w = static_cast<std::int64_t>(1 + uniform_index(rng, 6));
        LabelMap pred(1, h, w), gt(1, h, w);
        for (std::size_t i = 0; i < gt.values.size(); ++i) {
            pred.values[i] = static_cast<std::uint8_t>(uniform_index(rng, classes));
            gt.values[i] = uniform_index(rng, 10) == 0 ? kIgnoreLabel : static_cast<std::uint8_t>(uniform_index(rng, classes));
        }
        if (std::all_of(gt.values.begin(), gt.values.end(), [](auto v) { return v == kIgnoreLabel; })) continue;
        ConfusionMatrix cm(classes);
        cm.update(pred, gt);
        EXPECT_EQ(iou_report(cm).miou, brute_force_miou(pred, gt, classes)) << "trial " << trial;
    }
}

TEST(ConfusionTest, PermutationEquivariant) {
    Rng rng(18);
    LabelMap pred(1, 4, 4), gt(1, 4, 4);
    for (std::size_t i = 0; i < 16; ++i) {
        pred.values[i] = static_cast<std::uint8_t>(uniform_index(rng, 3));
        gt.values[i] = static_cast<std::uint8_t>(uniform_index(rng, 3));
    }
    const std::uint8_t perm[3] = {2, 0, 1};
    LabelMap pp = pred, pg = gt;
    for (auto& v : pp.values) v = perm[v];
    for (auto& v : pg.values) v = perm[v];
    ConfusionMatrix a(3), b(3);
    a.update(pred, gt);
    b.update(pp, pg);
    for (int g = 0; g < 3; ++g)
        for (int p = 0; p < 3; ++p) EXPECT_EQ(a.at(g, p), b.at(perm[g], perm[p]));
}

TEST(ArgmaxTest, TiesGoToLowestClass) {
    const Tensor logits({1, 3, 1, 2}, {0.5, 1.0, 0.5, 2.0, 0.1, 2.0});
    const LabelMap m = argmax_labels(logits);
    EXPECT_EQ(m.values, (std::vector<std::uint8_t>{0, 1}));
}

TEST(EvalModeTest, Names) {
    EXPECT_EQ(parse_eval_mode("ir-only"), EvalMode::kIrOnly);
    EXPECT_EQ(parse_eval_mode("ir_only"), EvalMode::kIrOnly);
    EXPECT_EQ(parse_eval_mode("optical"), EvalMode::kOptical);
    EXPECT_STREQ(eval_mode_name(EvalMode::kFused), "fused");
    EXPECT_THROW(parse_eval_mode("thermal"), std::invalid_argument);
}

class EvaluateModelTest : public ::testing::Test {
protected:
    void SetUp() override {
        SceneConfig c;
        c.seed = 21;
        for (std::uint64_t i = 0; i < 16; ++i) samples.push_back(generate_scene(c, i));
    }
    std::vector<PairedSample> samples;
};

TEST_F(EvaluateModelTest, UntrainedModelIsNearChance) {
    CskNetModel net(ModelConfig{});
    const EvalReport r = evaluate_model(net, samples, EvalMode::kFused);
    EXPECT_LT(r.miou, 0.5);
    EXPECT_EQ(r.samples, 16);
}

TEST_F(EvaluateModelTest, RepeatableAndDoesNotMutate) {
    CskNetModel net(ModelConfig{});
    std::vector<std::vector<double>> before;
    for (const Parameter* p : net.parameters()) before.emplace_back(p->value.values().begin(), p->value.values().end());
    for (const BufferRef& b : net.buffers()) before.push_back(*b.values);
    for (const EvalMode m : {EvalMode::kFused, EvalMode::kOptical, EvalMode::kIrOnly}) {
        EXPECT_EQ(evaluate_model(net, samples, m), evaluate_model(net, samples, m));
    }
    std::size_t i = 0;
    for (const Parameter* p : net.parameters()) {
        EXPECT_TRUE(std::equal(p->value.values().begin(), p->value.values().end(), before[i].begin(), before[i].end()))
            << p->name;
        ++i;
    }
    for (const BufferRef& b : net.buffers()) EXPECT_EQ(*b.values, before[i++]) << b.name;
}

TEST_F(EvaluateModelTest, BatchSizeDoesNotChangeReport) {
    CskNetModel net(ModelConfig{});
    EvalOptions a;
    a.batch_size = 3;
    EvalOptions b;
    b.batch_size = 16;
    EXPECT_EQ(evaluate_model(net, samples, EvalMode::kFused, a), evaluate_model(net, samples, EvalMode::kFused, b));
}

TEST_F(EvaluateModelTest, IrOnlyNeverReadsEoFiles) {
    const auto dir = std::filesystem::temp_directory_path() / "csknet_ir_only_trace";
    std::filesystem::remove_all(dir);
    SceneConfig c;
    generate_dataset(c, 6, {}, dir);
    IoTrace trace;
    ModalityMask mask;
    mask.eo = false;
    const auto test = load_split(dir, "test", 4, mask, &trace);
    CskNetModel net(ModelConfig{});
    const EvalReport r = evaluate_model(net, test, EvalMode::kIrOnly);
    EXPECT_EQ(r.samples, static_cast<std::int64_t>(test.size()));
    EXPECT_FALSE(trace.opened.empty());
    for (const auto& f : trace.opened) EXPECT_EQ(f.find("eo/"), std::string::npos) << f;
    std::filesystem::remove_all(dir);
}

TEST_F(EvaluateModelTest, BaselineFusedModeThrows) {
    BaselineModel base(ModelConfig{});
    EXPECT_THROW(evaluate_baseline(base, samples, EvalMode::kFused), std::invalid_argument);
    EXPECT_LE(evaluate_baseline(base, samples, EvalMode::kOptical).miou, 1.0);
}

TEST(AblationTest, VariantsAndFormat) {
    const auto v = ablation_variants();
    ASSERT_EQ(v.size(), 5u);
    EXPECT_FALSE(v[1].contrastive);
    EXPECT_EQ(v[2].fusion, FusionMode::kSum);
    EXPECT_FALSE(v[3].exchange);
    EXPECT_FALSE(v[4].contrastive || v[4].exchange);

    AblationTable t;
    for (const auto& var : v) t.variants.push_back(var.name);
    for (std::size_t i = 0; i < v.size(); ++i) {
        t.rows.push_back({v[i].name, 1, 0.5 + 0.01 * static_cast<double>(i)});
        t.medians.push_back(0.5 + 0.01 * static_cast<double>(i));
    }
    const std::string out = format_ablation(t);
    EXPECT_NE(out.find("69.38"), std::string::npos);
    EXPECT_NE(out.find("68.37"), std::string::npos);
    for (const auto& var : v) EXPECT_NE(out.find(var.name), std::string::npos);
}

}  // namespace
}  // namespace csk
