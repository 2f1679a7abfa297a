// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "csknet/data.hpp"

namespace csk {
namespace {

namespace fs = std::filesystem;

class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("csknet_" + name)) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    [[nodiscard]] const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

TEST(SceneTest, SameIndexSameScene) {
    SceneConfig c;
    c.seed = 5;
    EXPECT_EQ(generate_scene(c, 3), generate_scene(c, 3));
    EXPECT_NE(generate_scene(c, 3).eo, generate_scene(c, 4).eo);
}

TEST(SceneTest, EveryClassAppearsOver32Images) {
    SceneConfig c;
    std::array<std::int64_t, 4> hist{};
    for (std::uint64_t i = 0; i < 32; ++i)
        for (const auto v : generate_scene(c, i).label.values) ++hist.at(v);
    for (const auto h : hist) EXPECT_GT(h, 0);
}

TEST(SceneTest, EoAndIrAreNotCopies) {
    SceneConfig c;
    double sum = 0.0;
    const int images = 32;
    for (int i = 0; i < images; ++i) {
        const PairedSample s = generate_scene(c, static_cast<std::uint64_t>(i));
        const std::int64_t n = c.size * c.size;
        std::vector<double> lum(static_cast<std::size_t>(n));
        for (std::int64_t p = 0; p < n; ++p) {
            lum[static_cast<std::size_t>(p)] =
                (s.eo.data()[p] + s.eo.data()[n + p] + s.eo.data()[2 * n + p]) / 3.0;
        }
        double ma = 0, mb = 0;
        for (std::int64_t p = 0; p < n; ++p) {
            ma += lum[static_cast<std::size_t>(p)];
            mb += s.ir.data()[p];
        }
        ma /= static_cast<double>(n);
        mb /= static_cast<double>(n);
        double sab = 0, saa = 0, sbb = 0;
        for (std::int64_t p = 0; p < n; ++p) {
            const double a = lum[static_cast<std::size_t>(p)] - ma;
            const double b = s.ir.data()[p] - mb;
            sab += a * b;
            saa += a * a;
            sbb += b * b;
        }
        sum += std::abs(sab / std::sqrt(saa * sbb));
    }
    EXPECT_LT(sum / images, 0.9);
}

TEST(SceneTest, ValuesInUnitRangeAndQuantized) {
    SceneConfig c;
    c.night_fraction = 1.0;
    const PairedSample s = generate_scene(c, 0);
    for (const Tensor* t : {&s.eo, &s.ir}) {
        for (const double v : t->values()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            EXPECT_EQ(v, std::round(v * 255.0) / 255.0);
        }
    }
}

TEST(SceneTest, InvalidConfigThrows) {
    SceneConfig c;
    c.num_classes = 1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = SceneConfig{};
    c.min_shapes = 5;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(DatasetTest, SameSeedGivesIdenticalFiles) {
    TempDir a("data_a");
    TempDir b("data_b");
    SceneConfig c;
    c.seed = 7;
    const auto ea = generate_dataset(c, 10, {}, a.path());
    generate_dataset(c, 10, {}, b.path());
    for (const ManifestEntry& e : ea) {
        for (const std::string& rel : {e.eo, e.ir, e.label}) EXPECT_EQ(slurp(a.path() / rel), slurp(b.path() / rel));
    }
    EXPECT_EQ(slurp(a.path() / "manifest.tsv"), slurp(b.path() / "manifest.tsv"));
}

TEST(DatasetTest, SplitsAreDisjointAndCoverAllIds) {
    TempDir d("data_split");
    const auto entries = generate_dataset(SceneConfig{}, 10, {}, d.path());
    const auto manifest = read_manifest(d.path() / "manifest.tsv");
    ASSERT_EQ(manifest.size(), 10u);
    std::set<std::string> train, test;
    for (const ManifestEntry& e : manifest) (e.split == "train" ? train : test).insert(e.id);
    EXPECT_EQ(train.size(), 8u);
    EXPECT_EQ(test.size(), 2u);
    for (const auto& id : train) EXPECT_FALSE(test.contains(id));
    EXPECT_EQ(load_split(d.path(), "test", 4).size(), 2u);
}

TEST(SampleIoTest, RoundTripIsExact) {
    TempDir d("roundtrip");
    SceneConfig c;
    c.night_fraction = 0.5;
    for (std::uint64_t i = 0; i < 4; ++i) {
        const PairedSample s = generate_scene(c, i);
        const ManifestEntry e = save_sample(s, d.path());
        EXPECT_EQ(load_sample(e, d.path(), 4), s);
    }
}

TEST(SampleIoTest, LabelOutOfRangeIsRejected) {
    TempDir d("badlabel");
    PairedSample s = generate_scene(SceneConfig{}, 0);
    s.label.values[5] = 4;
    const ManifestEntry e = save_sample(s, d.path());
    EXPECT_THROW(load_sample(e, d.path(), 4), DataError);
    s.label.values[5] = kIgnoreLabel;
    EXPECT_NO_THROW(load_sample(save_sample(s, d.path()), d.path(), 4));
}

TEST(SampleIoTest, ExtentMismatchNamesBothExtents) {
    TempDir d("extent");
    const PairedSample s = generate_scene(SceneConfig{}, 0);
    const ManifestEntry e = save_sample(s, d.path());
    const std::vector<std::uint8_t> small(16 * 8, 0);
    write_pgm(d.path() / e.ir, 16, 8, small);
    try {
        load_sample(e, d.path(), 4);
        FAIL() << "expected DataError";
    } catch (const DataError& err) {
        const std::string msg = err.what();
        EXPECT_NE(msg.find("32x32"), std::string::npos) << msg;
        EXPECT_NE(msg.find("16x8"), std::string::npos) << msg;
    }
}

TEST(SampleIoTest, MalformedHeaderThrows) {
    TempDir d("malformed");
    std::ofstream(d.path() / "x.pgm", std::ios::binary) << "P5\n4 4\n65535\n";
    EXPECT_THROW(read_pgm(d.path() / "x.pgm"), DataError);
    std::ofstream(d.path() / "y.ppm", std::ios::binary) << "P3\n1 1\n255\n0 0 0\n";
    EXPECT_THROW(read_ppm(d.path() / "y.ppm"), DataError);
    EXPECT_THROW(read_ppm(d.path() / "missing.ppm"), IoError);
}

TEST(SampleIoTest, MaskSkipsFilesAndTraceRecordsThem) {
    TempDir d("mask");
    const ManifestEntry e = save_sample(generate_scene(SceneConfig{}, 0), d.path());
    IoTrace trace;
    ModalityMask mask;
    mask.eo = false;
    const PairedSample s = load_sample(e, d.path(), 4, mask, &trace);
    EXPECT_TRUE(s.eo.empty());
    ASSERT_EQ(trace.opened.size(), 2u);
    for (const auto& f : trace.opened) EXPECT_EQ(f.find("eo/"), std::string::npos);
}

TEST(BatchTest, HflipReversesAllModalities) {
    const PairedSample s = generate_scene(SceneConfig{}, 2);
    const PairedSample f = hflip(s);
    const std::int64_t w = s.eo.shape().w;
    for (std::int64_t h = 0; h < s.eo.shape().h; ++h) {
        for (std::int64_t j = 0; j < w; ++j) {
            for (std::int64_t c = 0; c < 3; ++c) EXPECT_EQ(f.eo.at(0, c, h, j), s.eo.at(0, c, h, w - 1 - j));
            EXPECT_EQ(f.ir.at(0, 0, h, j), s.ir.at(0, 0, h, w - 1 - j));
            EXPECT_EQ(f.label.at(0, h, j), s.label.at(0, h, w - 1 - j));
        }
    }
    EXPECT_EQ(hflip(f), s);
}

TEST(BatchTest, MakeBatchStacksInOrder) {
    std::vector<PairedSample> samples;
    for (std::uint64_t i = 0; i < 3; ++i) samples.push_back(generate_scene(SceneConfig{}, i));
    const std::vector<std::size_t> idx{2, 0};
    const Batch b = make_batch(samples, idx);
    EXPECT_EQ(b.eo.shape(), (Shape{2, 3, 32, 32}));
    EXPECT_EQ(b.eo.at(0, 1, 4, 5), samples[2].eo.at(0, 1, 4, 5));
    EXPECT_EQ(b.ir.at(1, 0, 7, 1), samples[0].ir.at(0, 0, 7, 1));
    EXPECT_EQ(b.labels.at(1, 3, 3), samples[0].label.at(0, 3, 3));
}

}  // namespace
}  // namespace csk
