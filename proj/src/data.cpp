// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include "csknet/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include <fmt/format.h>

#include "csknet/parallel.hpp"

namespace csk {

void SceneConfig::validate() const {
    if (num_classes < 2) throw std::invalid_argument("scene num_classes must be >= 2");
    if (num_classes > 4) throw std::invalid_argument("the scene generator renders at most 4 classes");
    if (size < 4) throw std::invalid_argument("scene size must be >= 4");
    if (min_shapes < 0 || max_shapes < min_shapes) throw std::invalid_argument("invalid shape count range");
    if (night_fraction < 0.0 || night_fraction > 1.0) throw std::invalid_argument("night_fraction must be in [0, 1]");
    if (eo_noise < 0.0 || ir_noise < 0.0 || night_extra_noise < 0.0) throw std::invalid_argument("noise must be >= 0");
}

namespace {

constexpr double kBackgroundIr = 0.35;

struct Rgb {
    double r, g, b;
};

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

Rgb class_color(std::uint8_t c) {
    switch (c) {
        case kWarmBlob: return {0.55, 0.25, 0.20};
        case kColdBox: return {0.30, 0.75, 0.80};
        case kThinPole: return {0.85, 0.80, 0.20};
        default: return {0.45, 0.55, 0.40};
    }
}

double class_ir(std::uint8_t c, double contrast) {
    switch (c) {
        case kWarmBlob: return kBackgroundIr + contrast;
        case kColdBox: return kBackgroundIr - 0.5 * contrast;
        case kThinPole: return kBackgroundIr + 0.3 * contrast;
        default: return kBackgroundIr;
    }
}

double texture(std::uint8_t c, std::int64_t y, std::int64_t x, double phase) {
    switch (c) {
        case kWarmBlob: return ((x + y) % 2 == 0) ? 1.0 : -1.0;
        case kColdBox: return (y % 3 == 0) ? 1.0 : -0.5;
        case kThinPole: return 0.0;
        default: return std::sin(0.45 * static_cast<double>(x) + 0.3 * static_cast<double>(y) + phase);
    }
}

}  // namespace

PairedSample generate_scene(const SceneConfig& config, std::uint64_t index) {
    config.validate();
    Rng rng(mix_seed(config.seed, index));
    const std::int64_t s = config.size;
    PairedSample out;
    out.id = fmt::format("scene_{:04d}", index);
    out.label = LabelMap(1, s, s, kBackground);

    const bool night = uniform01(rng) < config.night_fraction;
    const double phase = uniform(rng, 0.0, 6.283185307179586);
    const double ir_slope = uniform(rng, -0.1, 0.1);
    const Rgb tint{uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05)};

    const auto classes = static_cast<std::uint64_t>(config.num_classes - 1);
    const int shapes = config.min_shapes +
                       static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(config.max_shapes - config.min_shapes + 1)));
    for (int k = 0; k < shapes; ++k) {
        const auto c = static_cast<std::uint8_t>(1 + uniform_index(rng, classes));
        const double cy = uniform(rng, 0.0, static_cast<double>(s));
        const double cx = uniform(rng, 0.0, static_cast<double>(s));
        const double a = uniform(rng, 0.08, 0.22) * static_cast<double>(s);
        const double b = uniform(rng, 0.08, 0.22) * static_cast<double>(s);
        const double len = uniform(rng, 0.35, 0.85) * static_cast<double>(s);
        const std::int64_t thick = 1 + static_cast<std::int64_t>(uniform_index(rng, 2));
        for (std::int64_t y = 0; y < s; ++y) {
            for (std::int64_t x = 0; x < s; ++x) {
                const double dy = static_cast<double>(y) + 0.5 - cy;
                const double dx = static_cast<double>(x) + 0.5 - cx;
                bool inside = false;
                if (c == kWarmBlob) {
                    inside = (dy * dy) / (a * a) + (dx * dx) / (b * b) <= 1.0;
                } else if (c == kColdBox) {
                    inside = std::abs(dy) <= a && std::abs(dx) <= b;
                } else {
                    const auto x0 = static_cast<std::int64_t>(cx);
                    inside = x >= x0 && x < x0 + thick && std::abs(dy) <= 0.5 * len;
                }
                if (inside) out.label.at(0, y, x) = c;
            }
        }
    }

    out.eo = Tensor({1, 3, s, s});
    out.ir = Tensor({1, 1, s, s});
    for (std::int64_t y = 0; y < s; ++y) {
        for (std::int64_t x = 0; x < s; ++x) {
            const std::uint8_t c = out.label.at(0, y, x);
            const Rgb base = class_color(c);
            const double t = config.eo_texture * texture(c, y, x, phase);
            const std::array<double, 3> rgb{base.r + tint.r + t, base.g + tint.g + t, base.b + tint.b + t};
            for (std::int64_t ch = 0; ch < 3; ++ch) {
                double v = rgb[static_cast<std::size_t>(ch)] + config.eo_noise * normal(rng);
                if (night) v = 0.25 * v + config.night_extra_noise * normal(rng);
                out.eo.at(0, ch, y, x) = quantize(v);
            }
            const double ramp = ir_slope * (static_cast<double>(y) / static_cast<double>(s) - 0.5);
            out.ir.at(0, 0, y, x) = quantize(class_ir(c, config.ir_contrast) + ramp + config.ir_noise * normal(rng));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// PPM / PGM

void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
    const Shape& s = rgb.shape();
    if (s.n != 1 || s.c != 3) throw ShapeError("write_ppm expects 1x3xHxW, got " + s.str());
    std::string bytes = fmt::format("P6\n{} {}\n255\n", s.w, s.h);
    for (std::int64_t y = 0; y < s.h; ++y)
        for (std::int64_t x = 0; x < s.w; ++x)
            for (std::int64_t c = 0; c < 3; ++c) bytes.push_back(static_cast<char>(to_byte(rgb.at(0, c, y, x))));
    std::ofstream f(path, std::ios::binary);
    if (!f || !f.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
        throw IoError("cannot write " + path.string());
}

void write_pgm(const std::filesystem::path& path, std::int64_t h, std::int64_t w,
               std::span<const std::uint8_t> bytes) {
    if (bytes.size() != static_cast<std::size_t>(h * w)) throw ShapeError("write_pgm: byte count != h*w");
    std::string out = fmt::format("P5\n{} {}\n255\n", w, h);
    out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    std::ofstream f(path, std::ios::binary);
    if (!f || !f.write(out.data(), static_cast<std::streamsize>(out.size())))
        throw IoError("cannot write " + path.string());
}

namespace {

struct Netpbm {
    std::int64_t w = 0;
    std::int64_t h = 0;
    std::string raster;
};

Netpbm read_netpbm(const std::filesystem::path& path, std::string_view magic, std::int64_t channels) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto fail = [&](const std::string& why) {
        return DataError(fmt::format("{}: malformed {} header: {}", path.string(), magic, why));
    };
    if (data.size() < 2 || data.compare(0, 2, magic) != 0) throw fail("bad magic");
    std::size_t pos = 2;
    const auto next_int = [&]() -> std::int64_t {
        while (pos < data.size()) {
            if (data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        std::int64_t v = 0;
        const std::size_t start = pos;
        while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos])) && pos - start < 9)
            v = v * 10 + (data[pos++] - '0');
        if (pos == start) throw fail("expected integer");
        return v;
    };
    Netpbm img;
    img.w = next_int();
    img.h = next_int();
    const std::int64_t maxval = next_int();
    if (img.w <= 0 || img.h <= 0) throw fail("non-positive extent");
    if (maxval != 255) throw fail(fmt::format("maxval {} unsupported (want 255)", maxval));
    if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos]))) throw fail("missing raster separator");
    ++pos;
    const auto need = static_cast<std::size_t>(img.w * img.h * channels);
    if (data.size() - pos != need)
        throw fail(fmt::format("raster has {} bytes, expected {}", data.size() - pos, need));
    img.raster = data.substr(pos);
    return img;
}

}  // namespace

Tensor read_ppm(const std::filesystem::path& path) {
    const Netpbm img = read_netpbm(path, "P6", 3);
    Tensor t({1, 3, img.h, img.w});
    std::size_t k = 0;
    for (std::int64_t y = 0; y < img.h; ++y)
        for (std::int64_t x = 0; x < img.w; ++x)
            for (std::int64_t c = 0; c < 3; ++c)
                t.at(0, c, y, x) = static_cast<double>(static_cast<unsigned char>(img.raster[k++])) / 255.0;
    return t;
}

GrayImage read_pgm(const std::filesystem::path& path) {
    Netpbm img = read_netpbm(path, "P5", 1);
    GrayImage g{img.h, img.w, {}};
    g.bytes.assign(img.raster.begin(), img.raster.end());
    return g;
}

// ---------------------------------------------------------------------------
// Samples and manifests

ManifestEntry save_sample(const PairedSample& sample, const std::filesystem::path& dir) {
    ManifestEntry e{sample.id, "", "eo/" + sample.id + ".ppm", "ir/" + sample.id + ".pgm",
                    "label/" + sample.id + ".pgm"};
    std::error_code ec;
    for (const char* sub : {"eo", "ir", "label"}) {
        std::filesystem::create_directories(dir / sub, ec);
        if (ec) throw IoError(fmt::format("cannot create {}: {}", (dir / sub).string(), ec.message()));
    }
    write_ppm(dir / e.eo, sample.eo);
    const Shape& s = sample.ir.shape();
    std::vector<std::uint8_t> bytes(sample.ir.size());
    std::transform(sample.ir.values().begin(), sample.ir.values().end(), bytes.begin(), to_byte);
    write_pgm(dir / e.ir, s.h, s.w, bytes);
    write_pgm(dir / e.label, sample.label.h, sample.label.w, sample.label.values);
    return e;
}

PairedSample load_sample(const ManifestEntry& entry, const std::filesystem::path& root, std::int64_t num_classes,
                         const ModalityMask& mask, IoTrace* trace) {
    PairedSample s;
    s.id = entry.id;
    const auto open = [&](const std::string& rel) {
        const std::filesystem::path p = root / rel;
        if (trace) trace->opened.push_back(p.string());
        return p;
    };
    std::int64_t h = -1;
    std::int64_t w = -1;
    std::string first;
    const auto check_extent = [&](const char* what, std::int64_t hh, std::int64_t ww) {
        if (h < 0) {
            h = hh;
            w = ww;
            first = what;
        } else if (hh != h || ww != w) {
            throw DataError(fmt::format("{}: {} extent {}x{} does not match {} extent {}x{}", entry.id, what, hh, ww,
                                        first, h, w));
        }
    };
    if (mask.eo) {
        s.eo = read_ppm(open(entry.eo));
        check_extent("EO", s.eo.shape().h, s.eo.shape().w);
    }
    if (mask.ir) {
        const GrayImage g = read_pgm(open(entry.ir));
        s.ir = Tensor({1, 1, g.h, g.w});
        for (std::size_t i = 0; i < g.bytes.size(); ++i) s.ir[i] = static_cast<double>(g.bytes[i]) / 255.0;
        check_extent("IR", g.h, g.w);
    }
    if (mask.label) {
        GrayImage g = read_pgm(open(entry.label));
        check_extent("label", g.h, g.w);
        for (const std::uint8_t v : g.bytes)
            if (v != kIgnoreLabel && v >= num_classes)
                throw DataError(fmt::format("{}: label value {} out of range for {} classes", entry.id, v, num_classes));
        s.label = LabelMap(1, g.h, g.w);
        s.label.values = std::move(g.bytes);
    }
    return s;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::string out = "# id\tsplit\teo\tir\tlabel\n";
    for (const auto& e : entries) out += fmt::format("{}\t{}\t{}\t{}\t{}\n", e.id, e.split, e.eo, e.ir, e.label);
    std::ofstream f(path, std::ios::binary);
    if (!f || !f.write(out.data(), static_cast<std::streamsize>(out.size())))
        throw IoError("cannot write " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<ManifestEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, '\t')) fields.push_back(field);
        if (fields.size() != 5)
            throw DataError(fmt::format("{}:{}: expected 5 tab-separated fields, got {}", path.string(), lineno,
                                        fields.size()));
        out.push_back({fields[0], fields[1], fields[2], fields[3], fields[4]});
    }
    return out;
}

std::vector<ManifestEntry> generate_dataset(const SceneConfig& config, std::int64_t count, const SplitRatios& splits,
                                            const std::filesystem::path& dir) {
    config.validate();
    if (count < 1) throw std::invalid_argument("dataset count must be >= 1");
    if (splits.train < 0.0 || splits.test < 0.0 || splits.train + splits.test <= 0.0)
        throw std::invalid_argument("split ratios must be non-negative with a positive sum");
    std::vector<PairedSample> samples(static_cast<std::size_t>(count));
    parallel_for(samples.size(), [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) samples[i] = generate_scene(config, i);
    });
    const auto n_train = static_cast<std::int64_t>(
        std::llround(static_cast<double>(count) * splits.train / (splits.train + splits.test)));
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        ManifestEntry e = save_sample(samples[i], dir);
        e.split = static_cast<std::int64_t>(i) < n_train ? "train" : "test";
        entries.push_back(std::move(e));
    }
    write_manifest(dir / "manifest.tsv", entries);
    return entries;
}

std::vector<PairedSample> load_split(const std::filesystem::path& dir, const std::string& split,
                                     std::int64_t num_classes, const ModalityMask& mask, IoTrace* trace) {
    std::vector<PairedSample> out;
    for (const ManifestEntry& e : read_manifest(dir / "manifest.tsv"))
        if (e.split == split) out.push_back(load_sample(e, dir, num_classes, mask, trace));
    return out;
}

// ---------------------------------------------------------------------------
// Batching

Batch make_batch(std::span<const PairedSample> samples, std::span<const std::size_t> indices) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
    const PairedSample& first = samples[indices[0]];
    const auto n = static_cast<std::int64_t>(indices.size());
    Batch b;
    const auto stack = [&](Tensor PairedSample::*member, Tensor& out) {
        if ((first.*member).empty()) return;
        Shape s = (first.*member).shape();
        const std::size_t per = (first.*member).size();
        s.n = n;
        out = Tensor(s);
        for (std::size_t k = 0; k < indices.size(); ++k) {
            const Tensor& src = samples[indices[k]].*member;
            require_same_shape(src.shape(), (first.*member).shape(), "make_batch");
            std::copy(src.values().begin(), src.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(k * per));
        }
    };
    stack(&PairedSample::eo, b.eo);
    stack(&PairedSample::ir, b.ir);
    if (!first.label.values.empty()) {
        b.labels = LabelMap(n, first.label.h, first.label.w);
        const std::size_t per = first.label.values.size();
        for (std::size_t k = 0; k < indices.size(); ++k) {
            const LabelMap& src = samples[indices[k]].label;
            if (src.values.size() != per) throw ShapeError("make_batch: label extents differ");
            std::copy(src.values.begin(), src.values.end(), b.labels.values.begin() + static_cast<std::ptrdiff_t>(k * per));
        }
    }
    return b;
}

PairedSample hflip(const PairedSample& sample) {
    PairedSample out = sample;
    const auto flip = [](const Tensor& src, Tensor& dst) {
        const Shape& s = src.shape();
        for (std::int64_t n = 0; n < s.n; ++n)
            for (std::int64_t c = 0; c < s.c; ++c)
                for (std::int64_t y = 0; y < s.h; ++y)
                    for (std::int64_t x = 0; x < s.w; ++x) dst.at(n, c, y, x) = src.at(n, c, y, s.w - 1 - x);
    };
    flip(sample.eo, out.eo);
    flip(sample.ir, out.ir);
    const LabelMap& l = sample.label;
    for (std::int64_t n = 0; n < l.n; ++n)
        for (std::int64_t y = 0; y < l.h; ++y)
            for (std::int64_t x = 0; x < l.w; ++x) out.label.at(n, y, x) = l.at(n, y, l.w - 1 - x);
    return out;
}

}  // namespace csk
