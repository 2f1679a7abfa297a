// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat key/value run configuration shared by the CLI and checkpoint headers.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "csknet/data.hpp"
#include "csknet/pipeline.hpp"

namespace csk {

struct RunConfig {
    TrainConfig train;
    SceneConfig scene;
    std::int64_t count = 80;
    double train_fraction = 0.8;

    void validate() const;
};

/// Every key with its current value.
nlohmann::json to_flat_json(const RunConfig& config);
/// Only the keys that describe training (model, schedule, losses, paths).
nlohmann::json to_flat_json(const TrainConfig& config);
/// Overwrites the keys present in `j`. Unknown keys and wrongly typed values
/// throw std::invalid_argument naming the key.
void apply_flat_json(RunConfig& config, const nlohmann::json& j);
/// Sorted key list.
std::vector<std::string> config_keys();

RunConfig load_run_config(const std::filesystem::path& path);
void write_run_config(const std::filesystem::path& path, const RunConfig& config);

TapPoints parse_taps(const std::string& name);
const char* taps_name(TapPoints t) noexcept;
FusionMode parse_fusion(const std::string& name);
const char* fusion_name(FusionMode f) noexcept;

}  // namespace csk
