// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural paired EO/IR scenes and their on-disk form: EO as binary PPM,
// IR and labels as binary PGM, plus a tab-separated manifest.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "csknet/labels.hpp"
#include "csknet/rng.hpp"
#include "csknet/tensor.hpp"

namespace csk {

/// Malformed or inconsistent data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A file that cannot be opened, read or written.
class IoError : public DataError {
public:
    using DataError::DataError;
};

enum SceneClass : std::uint8_t { kBackground = 0, kWarmBlob = 1, kColdBox = 2, kThinPole = 3 };

struct SceneConfig {
    std::int64_t size = 32;
    std::int64_t num_classes = 4;
    int min_shapes = 2;
    int max_shapes = 4;
    double eo_texture = 0.12;
    double ir_contrast = 0.5;
    double eo_noise = 0.03;
    double ir_noise = 0.04;
    /// Fraction of images rendered in night mode (EO dimmed x0.25, extra noise).
    double night_fraction = 0.0;
    double night_extra_noise = 0.06;
    std::uint64_t seed = 1;

    void validate() const;
    friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

struct PairedSample {
    std::string id;
    Tensor eo;  // 1x3xHxW in [0, 1]
    Tensor ir;  // 1x1xHxW in [0, 1]
    LabelMap label;

    friend bool operator==(const PairedSample&, const PairedSample&) = default;
};

/// Scene `index` of a run; pixel values are quantized to 1/255 so they survive
/// a save/load round trip exactly.
PairedSample generate_scene(const SceneConfig& config, std::uint64_t index);

struct SplitRatios {
    double train = 0.8;
    double test = 0.2;
};

struct ManifestEntry {
    std::string id;
    std::string split;
    std::string eo;
    std::string ir;
    std::string label;
};

/// Renders `count` scenes into `dir` (eo/, ir/, label/, manifest.tsv). The
/// first round(count * train) ids form the train split, the rest test.
std::vector<ManifestEntry> generate_dataset(const SceneConfig& config, std::int64_t count, const SplitRatios& splits,
                                            const std::filesystem::path& dir);

void write_ppm(const std::filesystem::path& path, const Tensor& rgb);
void write_pgm(const std::filesystem::path& path, std::int64_t h, std::int64_t w,
               std::span<const std::uint8_t> bytes);
/// Returns a 1x3xHxW tensor of byte / 255.
Tensor read_ppm(const std::filesystem::path& path);
struct GrayImage {
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<std::uint8_t> bytes;
};
GrayImage read_pgm(const std::filesystem::path& path);

/// Records every file the loader opens.
struct IoTrace {
    std::vector<std::string> opened;
};

struct ModalityMask {
    bool eo = true;
    bool ir = true;
    bool label = true;
};

/// Writes `<dir>/eo/<id>.ppm`, `<dir>/ir/<id>.pgm`, `<dir>/label/<id>.pgm`.
ManifestEntry save_sample(const PairedSample& sample, const std::filesystem::path& dir);

/// Loads the masked members of one triple; paths are relative to `root`.
/// Throws DataError on labels >= num_classes (other than the ignore label)
/// and on extent mismatches within the triple.
PairedSample load_sample(const ManifestEntry& entry, const std::filesystem::path& root, std::int64_t num_classes,
                         const ModalityMask& mask = {}, IoTrace* trace = nullptr);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Loads every sample of `split` listed in `<dir>/manifest.tsv`.
std::vector<PairedSample> load_split(const std::filesystem::path& dir, const std::string& split,
                                     std::int64_t num_classes, const ModalityMask& mask = {},
                                     IoTrace* trace = nullptr);

struct Batch {
    Tensor eo;  // Nx3xHxW
    Tensor ir;  // Nx1xHxW
    LabelMap labels;
};

/// Stacks samples[indices]; members absent from the samples stay empty.
Batch make_batch(std::span<const PairedSample> samples, std::span<const std::size_t> indices);

/// Width-reverses EO, IR and labels together.
PairedSample hflip(const PairedSample& sample);

}  // namespace csk
