// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>

#include <gtest/gtest.h>

#include "csknet/config.hpp"

namespace csk {
namespace {

TEST(RunConfigTest, FlatJsonRoundTrip) {
    RunConfig a;
    a.train.epochs = 7;
    a.train.model.skip_stage = 3;
    a.train.fusion = FusionMode::kSum;
    a.scene.night_fraction = 0.5;
    a.count = 12;
    RunConfig b;
    apply_flat_json(b, to_flat_json(a));
    EXPECT_EQ(to_flat_json(b), to_flat_json(a));
    EXPECT_EQ(b.train.model, a.train.model);
    EXPECT_EQ(b.scene, a.scene);
}

TEST(RunConfigTest, EveryKeyIsListed) {
    const auto keys = config_keys();
    EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
    EXPECT_EQ(keys.size(), to_flat_json(RunConfig{}).size());
}

TEST(RunConfigTest, UnknownKeyAndWrongTypeRejected) {
    RunConfig c;
    EXPECT_THROW(apply_flat_json(c, nlohmann::json{{"learning_rate", 0.1}}), std::invalid_argument);
    EXPECT_THROW(apply_flat_json(c, nlohmann::json{{"epochs", "ten"}}), std::invalid_argument);
    EXPECT_THROW(apply_flat_json(c, nlohmann::json{{"widths", {1, 2}}}), std::invalid_argument);
}

TEST(RunConfigTest, SeedAndClassesPropagateToScene) {
    RunConfig c;
    apply_flat_json(c, nlohmann::json{{"seed", 42}, {"num_classes", 3}});
    EXPECT_EQ(c.train.seed, 42u);
    EXPECT_EQ(c.scene.seed, 42u);
    EXPECT_EQ(c.scene.num_classes, 3);
    EXPECT_EQ(c.train.model.num_classes, 3);
}

TEST(RunConfigTest, FileRoundTripAndMissingFile) {
    const auto path = std::filesystem::temp_directory_path() / "csknet_config_test.json";
    RunConfig a;
    a.train.base_lr = 0.125;
    write_run_config(path, a);
    EXPECT_EQ(to_flat_json(load_run_config(path)), to_flat_json(a));
    std::filesystem::remove(path);
    EXPECT_THROW(load_run_config(path), IoError);
}

TEST(RunConfigTest, EnumNames) {
    EXPECT_EQ(parse_taps(taps_name(TapPoints::kLastFour)), TapPoints::kLastFour);
    EXPECT_EQ(parse_fusion(fusion_name(FusionMode::kSum)), FusionMode::kSum);
    EXPECT_THROW(parse_fusion("concat"), std::invalid_argument);
}

}  // namespace
}  // namespace csk
