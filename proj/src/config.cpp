// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include "csknet/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <stdexcept>

#include <fmt/format.h>

namespace csk {

using nlohmann::json;

TapPoints parse_taps(const std::string& name) {
    if (name == "figure") return TapPoints::kFigure;
    if (name == "last_four") return TapPoints::kLastFour;
    throw std::invalid_argument("unknown tap set '" + name + "' (want figure|last_four)");
}

const char* taps_name(TapPoints t) noexcept { return t == TapPoints::kFigure ? "figure" : "last_four"; }

FusionMode parse_fusion(const std::string& name) {
    if (name == "gsu") return FusionMode::kGsu;
    if (name == "sum") return FusionMode::kSum;
    throw std::invalid_argument("unknown fusion '" + name + "' (want gsu|sum)");
}

const char* fusion_name(FusionMode f) noexcept { return f == FusionMode::kGsu ? "gsu" : "sum"; }

namespace {

double as_double(const json& v, const std::string& key) {
    if (!v.is_number()) throw std::invalid_argument(fmt::format("config key '{}' must be a number", key));
    return v.get<double>();
}

std::int64_t as_int(const json& v, const std::string& key) {
    if (!v.is_number_integer()) throw std::invalid_argument(fmt::format("config key '{}' must be an integer", key));
    return v.get<std::int64_t>();
}

std::uint64_t as_uint(const json& v, const std::string& key) {
    const bool ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    if (!ok) throw std::invalid_argument(fmt::format("config key '{}' must be a non-negative integer", key));
    return v.get<std::uint64_t>();
}

bool as_bool(const json& v, const std::string& key) {
    if (!v.is_boolean()) throw std::invalid_argument(fmt::format("config key '{}' must be true or false", key));
    return v.get<bool>();
}

std::string as_string(const json& v, const std::string& key) {
    if (!v.is_string()) throw std::invalid_argument(fmt::format("config key '{}' must be a string", key));
    return v.get<std::string>();
}

json stage_list(const std::array<bool, kEncoderStages>& on) {
    json out = json::array();
    for (int s = 0; s < kEncoderStages; ++s)
        if (on[static_cast<std::size_t>(s)]) out.push_back(s + 1);
    return out;
}

std::array<bool, kEncoderStages> parse_stage_list(const json& v, const std::string& key) {
    if (!v.is_array()) throw std::invalid_argument(fmt::format("config key '{}' must be a list of stages", key));
    std::array<bool, kEncoderStages> on{};
    for (const json& e : v) {
        const std::int64_t s = as_int(e, key);
        if (s < 1 || s > kEncoderStages)
            throw std::invalid_argument(fmt::format("config key '{}': stage {} outside 1..{}", key, s, kEncoderStages));
        on[static_cast<std::size_t>(s - 1)] = true;
    }
    return on;
}

struct Field {
    bool train;  // part of the training echo
    std::function<json(const RunConfig&)> get;
    std::function<void(RunConfig&, const json&, const std::string&)> set;
};

#define CSK_DOUBLE(train, expr) \
    Field { train, [](const RunConfig& c) { return json(c.expr); }, \
            [](RunConfig& c, const json& v, const std::string& k) { c.expr = as_double(v, k); } }
#define CSK_INT(train, expr, type) \
    Field { train, [](const RunConfig& c) { return json(c.expr); }, \
            [](RunConfig& c, const json& v, const std::string& k) { c.expr = static_cast<type>(as_int(v, k)); } }
#define CSK_BOOL(train, expr) \
    Field { train, [](const RunConfig& c) { return json(c.expr); }, \
            [](RunConfig& c, const json& v, const std::string& k) { c.expr = as_bool(v, k); } }
#define CSK_STRING(train, expr) \
    Field { train, [](const RunConfig& c) { return json(c.expr); }, \
            [](RunConfig& c, const json& v, const std::string& k) { c.expr = as_string(v, k); } }

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = {
        // model
        {"widths", {true, [](const RunConfig& c) { return json(c.train.model.widths); },
                    [](RunConfig& c, const json& v, const std::string& k) {
                        if (!v.is_array() || v.size() != kEncoderStages)
                            throw std::invalid_argument(fmt::format("config key '{}' must list {} widths", k, kEncoderStages));
                        for (std::size_t i = 0; i < v.size(); ++i) c.train.model.widths[i] = as_int(v[i], k);
                    }}},
        {"num_classes", {true, [](const RunConfig& c) { return json(c.train.model.num_classes); },
                         [](RunConfig& c, const json& v, const std::string& k) {
                             c.train.model.num_classes = as_int(v, k);
                             c.scene.num_classes = c.train.model.num_classes;
                         }}},
        {"decoder_width", CSK_INT(true, train.model.decoder_width, std::int64_t)},
        {"embed_dim", CSK_INT(true, train.model.embed_dim, std::int64_t)},
        {"convs_per_stage", CSK_INT(true, train.model.convs_per_stage, int)},
        {"skip_stage", CSK_INT(true, train.model.skip_stage, int)},
        {"taps", {true, [](const RunConfig& c) { return json(taps_name(c.train.model.taps)); },
                  [](RunConfig& c, const json& v, const std::string& k) { c.train.model.taps = parse_taps(as_string(v, k)); }}},
        // schedule
        {"epochs", CSK_INT(true, train.epochs, int)},
        {"batch_size", CSK_INT(true, train.batch_size, int)},
        {"base_lr", CSK_DOUBLE(true, train.base_lr)},
        {"momentum", CSK_DOUBLE(true, train.momentum)},
        {"poly_power", CSK_DOUBLE(true, train.poly_power)},
        {"weight_decay", CSK_DOUBLE(true, train.weight_decay)},
        {"seed", {true, [](const RunConfig& c) { return json(c.train.seed); },
                  [](RunConfig& c, const json& v, const std::string& k) {
                      c.train.seed = as_uint(v, k);
                      c.scene.seed = c.train.seed;
                  }}},
        {"hflip", CSK_BOOL(true, train.hflip)},
        {"checkpoint_every", CSK_INT(true, train.checkpoint_every, int)},
        {"data_dir", CSK_STRING(true, train.data_dir)},
        {"out_dir", CSK_STRING(true, train.out_dir)},
        // losses
        {"w_seg", CSK_DOUBLE(true, train.weights.seg)},
        {"w_d1", CSK_DOUBLE(true, train.weights.d1)},
        {"w_d2", CSK_DOUBLE(true, train.weights.d2)},
        {"w_cl", CSK_DOUBLE(true, train.weights.cl)},
        {"cl_temperature", CSK_DOUBLE(true, train.contrastive.temperature)},
        {"cl_anchors_per_class", CSK_INT(true, train.contrastive.anchors_per_class, int)},
        {"cl_semi_hard_fraction", CSK_DOUBLE(true, train.contrastive.semi_hard_fraction)},
        {"cl_keep_farthest_positives", CSK_BOOL(true, train.contrastive.keep_farthest_positives)},
        // fusion and exchange
        {"fusion", {true, [](const RunConfig& c) { return json(fusion_name(c.train.fusion)); },
                    [](RunConfig& c, const json& v, const std::string& k) { c.train.fusion = parse_fusion(as_string(v, k)); }}},
        {"exchange", CSK_BOOL(true, train.exchange)},
        {"exchange_threshold", CSK_DOUBLE(true, train.exchange_config.threshold)},
        {"channel_exchange_stages",
         {true, [](const RunConfig& c) { return stage_list(c.train.exchange_config.channel_stages); },
          [](RunConfig& c, const json& v, const std::string& k) {
              c.train.exchange_config.channel_stages = parse_stage_list(v, k);
          }}},
        {"spatial_exchange_stages",
         {true, [](const RunConfig& c) { return stage_list(c.train.exchange_config.spatial_stages); },
          [](RunConfig& c, const json& v, const std::string& k) {
              c.train.exchange_config.spatial_stages = parse_stage_list(v, k);
          }}},
        {"init_eo_from_teacher", CSK_BOOL(true, train.init_eo_from_teacher)},
        // scene
        {"image_size", CSK_INT(false, scene.size, std::int64_t)},
        {"min_shapes", CSK_INT(false, scene.min_shapes, int)},
        {"max_shapes", CSK_INT(false, scene.max_shapes, int)},
        {"eo_texture", CSK_DOUBLE(false, scene.eo_texture)},
        {"ir_contrast", CSK_DOUBLE(false, scene.ir_contrast)},
        {"eo_noise", CSK_DOUBLE(false, scene.eo_noise)},
        {"ir_noise", CSK_DOUBLE(false, scene.ir_noise)},
        {"night_fraction", CSK_DOUBLE(false, scene.night_fraction)},
        {"night_extra_noise", CSK_DOUBLE(false, scene.night_extra_noise)},
        {"count", CSK_INT(false, count, std::int64_t)},
        {"train_fraction", CSK_DOUBLE(false, train_fraction)},
    };
    return table;
}

#undef CSK_DOUBLE
#undef CSK_INT
#undef CSK_BOOL
#undef CSK_STRING

}  // namespace

void RunConfig::validate() const {
    train.validate();
    scene.validate();
    if (scene.num_classes != train.model.num_classes)
        throw std::invalid_argument("scene and model class counts differ");
    if (count < 1) throw std::invalid_argument("count must be >= 1");
    if (train_fraction < 0.0 || train_fraction > 1.0) throw std::invalid_argument("train_fraction must be in [0, 1]");
}

json to_flat_json(const RunConfig& config) {
    json out = json::object();
    for (const auto& [key, f] : fields()) out[key] = f.get(config);
    return out;
}

json to_flat_json(const TrainConfig& config) {
    RunConfig rc;
    rc.train = config;
    json out = json::object();
    for (const auto& [key, f] : fields())
        if (f.train) out[key] = f.get(rc);
    return out;
}

void apply_flat_json(RunConfig& config, const json& j) {
    if (!j.is_object()) throw std::invalid_argument("config document must be a JSON object");
    const auto& table = fields();
    for (const auto& [key, value] : j.items()) {
        const auto it = table.find(key);
        if (it == table.end()) throw std::invalid_argument(fmt::format("unknown config key '{}'", key));
        it->second.set(config, value, key);
    }
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [key, f] : fields()) keys.push_back(key);
    return keys;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(fmt::format("{}: {}", path.string(), e.what()));
    }
    RunConfig rc;
    apply_flat_json(rc, j);
    return rc;
}

void write_run_config(const std::filesystem::path& path, const RunConfig& config) {
    std::ofstream f(path);
    if (!f || !(f << to_flat_json(config).dump(2) << '\n')) throw IoError("cannot write " + path.string());
}

}  // namespace csk
