// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0
//
// csknet: data generation, two-stage training, evaluation, gradient checks
// and the ablation harness behind one command.
//
// Configuration layering: built-in defaults, then --config FILE (flat JSON,
// unknown keys rejected), then command-line flags. The effective config is
// written to config.json in every output directory.
//
// Exit codes: 0 success, 1 failed check, 2 usage or config error, 3 I/O or
// data error. CSKNET_THREADS sets the worker count (default 1).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "csknet/config.hpp"
#include "csknet/evaluate.hpp"
#include "csknet/gradcheck.hpp"
#include "csknet/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

const std::vector<std::string> kClassNames = {"background", "warm-blob", "cold-box", "thin-pole"};

struct Options {
    std::string config_file;
    json overrides = json::object();
    std::string modality = "eo";
    std::string pretrained;
    std::string resume;
    std::string checkpoint;
    std::string mode = "fused";
    std::string split = "test";
    std::string io_trace;
    int gradcheck_seeds = 10;
    std::vector<std::uint64_t> ablate_seeds{1, 2, 3};
};

template <class T>
void config_flag(CLI::App* app, Options& o, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<T>(flag, [&o, key](const T& v) { o.overrides[key] = v; }, help + " (config: " + key + ")");
}

void config_flags(CLI::App* app, Options& o) {
    app->add_option("--config", o.config_file, "Flat JSON config file; flags override its values")
        ->check(CLI::ExistingFile);
    app->add_option_function<std::vector<std::string>>(
        "--set",
        [&o](const std::vector<std::string>& items) {
            for (const std::string& item : items) {
                const auto eq = item.find('=');
                if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected KEY=VALUE, got " + item);
                const std::string key = item.substr(0, eq);
                const std::string text = item.substr(eq + 1);
                json v = json::parse(text, nullptr, false);
                o.overrides[key] = v.is_discarded() ? json(text) : v;
            }
        },
        "Override any config key, value parsed as JSON (repeatable)");
    config_flag<std::uint64_t>(app, o, "--seed", "seed", "Run seed");
}

void train_flags(CLI::App* app, Options& o) {
    config_flags(app, o);
    config_flag<std::string>(app, o, "--data", "data_dir", "Dataset directory holding manifest.tsv");
    config_flag<std::string>(app, o, "--out", "out_dir", "Output directory");
    config_flag<int>(app, o, "--epochs", "epochs", "Training epochs");
    config_flag<int>(app, o, "--batch-size", "batch_size", "Mini-batch size (>= 2)");
    config_flag<double>(app, o, "--lr", "base_lr", "Initial learning rate");
    config_flag<int>(app, o, "--checkpoint-every", "checkpoint_every", "Numbered checkpoint cadence in epochs");
}

csk::RunConfig effective_config(const Options& o) {
    csk::RunConfig rc = o.config_file.empty() ? csk::RunConfig{} : csk::load_run_config(o.config_file);
    csk::apply_flat_json(rc, o.overrides);
    rc.validate();
    return rc;
}

void echo_config(const fs::path& dir, const csk::RunConfig& rc) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw csk::IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
    csk::write_run_config(dir / "config.json", rc);
}

fs::path require_dir(const std::string& value, const char* what) {
    if (value.empty()) throw std::invalid_argument(fmt::format("{} is required", what));
    return value;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f || !(f << text)) throw csk::IoError("cannot write " + path.string());
}

int cmd_gen_data(const Options& o) {
    const csk::RunConfig rc = effective_config(o);
    const fs::path out = require_dir(rc.train.out_dir, "--out");
    const auto entries =
        csk::generate_dataset(rc.scene, rc.count, {rc.train_fraction, 1.0 - rc.train_fraction}, out);
    echo_config(out, rc);
    std::size_t train = 0;
    for (const auto& e : entries) train += e.split == "train" ? 1 : 0;
    fmt::print("wrote {} scenes ({} train, {} test) to {}\n", entries.size(), train, entries.size() - train,
               out.string());
    return kExitOk;
}

csk::Modality parse_modality(const std::string& m) {
    if (m == "eo") return csk::Modality::kEo;
    if (m == "ir") return csk::Modality::kIr;
    throw std::invalid_argument("--modality must be eo or ir");
}

void print_history_tail(const std::vector<csk::EpochRecord>& history) {
    if (history.empty()) return;
    fmt::print("{}{}", csk::metrics_header(), csk::metrics_line(history.back()));
}

int cmd_train_stage1(const Options& o) {
    const csk::RunConfig rc = effective_config(o);
    const fs::path data = require_dir(rc.train.data_dir, "--data");
    const fs::path out = require_dir(rc.train.out_dir, "--out");
    const csk::Modality m = parse_modality(o.modality);
    const csk::ModalityMask mask{m == csk::Modality::kEo, m == csk::Modality::kIr, true};
    const auto train = csk::load_split(data, "train", rc.train.model.num_classes, mask);
    echo_config(out, rc);
    std::optional<csk::Checkpoint> resume;
    if (!o.resume.empty()) resume = csk::load_checkpoint(o.resume);
    const csk::Stage1Result r = csk::train_stage1(rc.train, train, m, resume ? &*resume : nullptr);
    print_history_tail(r.history);
    return kExitOk;
}

int cmd_train_stage2(const Options& o) {
    const csk::RunConfig rc = effective_config(o);
    const fs::path data = require_dir(rc.train.data_dir, "--data");
    const fs::path out = require_dir(rc.train.out_dir, "--out");
    const auto train = csk::load_split(data, "train", rc.train.model.num_classes);
    csk::BaselineModel teacher = csk::load_baseline(csk::load_checkpoint(o.pretrained));
    echo_config(out, rc);
    std::optional<csk::Checkpoint> resume;
    if (!o.resume.empty()) resume = csk::load_checkpoint(o.resume);
    const csk::Stage2Result r = csk::train_stage2(rc.train, train, teacher, resume ? &*resume : nullptr);
    print_history_tail(r.history);
    return kExitOk;
}

int cmd_eval(const Options& o) {
    const csk::RunConfig cli = effective_config(o);
    const fs::path data = require_dir(cli.train.data_dir, "--data");
    const csk::EvalMode mode = csk::parse_eval_mode(o.mode);
    const csk::Checkpoint ckpt = csk::load_checkpoint(o.checkpoint);
    csk::RunConfig saved;
    csk::apply_flat_json(saved, json::parse(ckpt.config_json));
    const std::int64_t classes = saved.train.model.num_classes;

    csk::IoTrace trace;
    csk::EvalReport report;
    if (ckpt.kind == "csknet") {
        const csk::ModalityMask mask{mode != csk::EvalMode::kIrOnly, true, true};
        const auto samples = csk::load_split(data, o.split, classes, mask, &trace);
        csk::CskNetModel model = csk::load_csknet(ckpt);
        const csk::EvalOptions opts{8, saved.train.fusion, saved.train.exchange, saved.train.exchange_config};
        report = csk::evaluate_model(model, samples, mode, opts);
    } else {
        const bool ir = ckpt.modality == "ir";
        if (mode == csk::EvalMode::kFused || (mode == csk::EvalMode::kIrOnly) != ir)
            throw std::invalid_argument(fmt::format("mode {} does not apply to a baseline trained on {}",
                                                    csk::eval_mode_name(mode), ckpt.modality));
        const csk::ModalityMask mask{!ir, ir, true};
        const auto samples = csk::load_split(data, o.split, classes, mask, &trace);
        csk::BaselineModel model = csk::load_baseline(ckpt);
        report = csk::evaluate_baseline(model, samples, mode);
    }
    const std::span<const std::string> names =
        classes == static_cast<std::int64_t>(kClassNames.size()) ? std::span<const std::string>(kClassNames)
                                                                  : std::span<const std::string>();
    const std::string text = csk::format_report(report, names);
    fmt::print("{}", text);
    if (!o.io_trace.empty()) {
        std::string lines;
        for (const auto& p : trace.opened) lines += p + "\n";
        write_text(o.io_trace, lines);
    }
    if (!cli.train.out_dir.empty()) {
        echo_config(cli.train.out_dir, cli);
        write_text(fs::path(cli.train.out_dir) / fmt::format("eval_{}.tsv", csk::eval_mode_name(mode)), text);
    }
    return kExitOk;
}

int cmd_gradcheck(const Options& o) {
    bool ok = true;
    for (const auto& r : csk::run_gradcheck_suite(o.gradcheck_seeds)) {
        fmt::print("{}\t{:<24}\tmax_rel_err={:.3e}\tentries={}\n", r.passed ? "PASS" : "FAIL", r.name,
                   r.max_rel_error, r.entries);
        ok = ok && r.passed;
    }
    fmt::print("{}\n", ok ? "all gradient checks passed" : "gradient check FAILED");
    return ok ? kExitOk : kExitCheckFailed;
}

int cmd_ablate(const Options& o) {
    const csk::RunConfig rc = effective_config(o);
    const fs::path data = require_dir(rc.train.data_dir, "--data");
    const auto train = csk::load_split(data, "train", rc.train.model.num_classes);
    const auto test = csk::load_split(data, "test", rc.train.model.num_classes);
    const csk::AblationTable table = csk::ablation_report(rc.train, train, test, o.ablate_seeds);
    const std::string text = csk::format_ablation(table);
    fmt::print("{}", text);
    if (!rc.train.out_dir.empty()) {
        echo_config(rc.train.out_dir, rc);
        write_text(fs::path(rc.train.out_dir) / "ablation.tsv", text);
    }
    return kExitOk;
}

void set_threads_from_env() {
    const char* env = std::getenv("CSKNET_THREADS");
    if (env == nullptr || *env == '\0') return;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1) throw std::invalid_argument(fmt::format("CSKNET_THREADS='{}' is not a positive integer", env));
    csk::set_num_threads(static_cast<int>(n));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"csknet: shared-encoder EO/IR segmentation with spectral knowledge distillation"};
    app.require_subcommand(1);
    Options o;

    CLI::App* gen = app.add_subcommand("gen-data", "Render a synthetic paired EO/IR dataset");
    config_flags(gen, o);
    config_flag<std::string>(gen, o, "--out", "out_dir", "Dataset output directory");
    config_flag<std::int64_t>(gen, o, "--count", "count", "Number of scenes");
    config_flag<double>(gen, o, "--night-fraction", "night_fraction", "Fraction of night-mode scenes");
    config_flag<std::int64_t>(gen, o, "--image-size", "image_size", "Scene extent in pixels");

    CLI::App* s1 = app.add_subcommand("train-stage1", "Train a single-modality baseline");
    train_flags(s1, o);
    s1->add_option("--modality", o.modality, "Input modality")->check(CLI::IsMember({"eo", "ir"}))->capture_default_str();
    s1->add_option("--resume", o.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

    CLI::App* s2 = app.add_subcommand("train-stage2", "Train CSK-Net distilling from a frozen stage-1 model");
    train_flags(s2, o);
    s2->add_option("--pretrained", o.pretrained, "Stage-1 EO checkpoint")->required()->check(CLI::ExistingFile);
    s2->add_option("--resume", o.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

    CLI::App* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
    config_flags(ev, o);
    config_flag<std::string>(ev, o, "--data", "data_dir", "Dataset directory holding manifest.tsv");
    config_flag<std::string>(ev, o, "--out", "out_dir", "Optional directory for the report");
    ev->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);
    ev->add_option("--mode", o.mode, "Inference mode")
        ->check(CLI::IsMember({"fused", "optical", "ir-only"}))
        ->capture_default_str();
    ev->add_option("--split", o.split, "Manifest split")->capture_default_str();
    ev->add_option("--io-trace", o.io_trace, "Write every file opened while loading data to this path");

    CLI::App* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
    gc->add_option("--seeds", o.gradcheck_seeds, "Random draws per primitive")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    CLI::App* ab = app.add_subcommand("ablate", "Train and score the five ablation variants");
    train_flags(ab, o);
    ab->add_option("--seeds", o.ablate_seeds, "Seeds to run")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        set_threads_from_env();
        if (*gen) return cmd_gen_data(o);
        if (*s1) return cmd_train_stage1(o);
        if (*s2) return cmd_train_stage2(o);
        if (*ev) return cmd_eval(o);
        if (*gc) return cmd_gradcheck(o);
        if (*ab) return cmd_ablate(o);
    } catch (const csk::DataError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitUsage;
    } catch (const std::out_of_range& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitUsage;
    } catch (const json::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitCheckFailed;
    }
    return kExitUsage;
}
