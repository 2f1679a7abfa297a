// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include "csknet/pipeline.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "csknet/config.hpp"
#include "csknet/evaluate.hpp"

namespace csk {

TrainConfig TrainConfig::paper_preset() {
    TrainConfig c;
    c.epochs = 200;
    c.base_lr = 5e-3;
    return c;
}

void TrainConfig::validate() const {
    model.validate();
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2 (batch norm needs a batch)");
    if (!(base_lr > 0.0)) throw std::invalid_argument("base_lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0, 1)");
    if (!(poly_power > 0.0)) throw std::invalid_argument("poly_power must be > 0");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
    if (weights.seg < 0.0 || weights.d1 < 0.0 || weights.d2 < 0.0 || weights.cl < 0.0)
        throw std::invalid_argument("loss weights must be >= 0");
    if (!(contrastive.temperature > 0.0)) throw std::invalid_argument("cl_temperature must be > 0");
    if (contrastive.anchors_per_class < 1) throw std::invalid_argument("cl_anchors_per_class must be >= 1");
    if (contrastive.semi_hard_fraction <= 0.0 || contrastive.semi_hard_fraction > 1.0)
        throw std::invalid_argument("cl_semi_hard_fraction must be in (0, 1]");
    if (!(exchange_config.threshold >= 0.0)) throw std::invalid_argument("exchange_threshold must be >= 0");
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig m = model;
    m.seed = seed;
    return m;
}

double poly_lr(int step, int total, double base_lr, double power) {
    if (total < 1) throw std::out_of_range("poly_lr: total must be >= 1");
    if (step < 0 || step > total)
        throw std::out_of_range(fmt::format("poly_lr: step {} outside [0, {}]", step, total));
    return base_lr * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total), power);
}

void sgd_step(std::span<Parameter* const> params, SgdState& state, double lr, double momentum, double weight_decay) {
    for (Parameter* p : params) {
        if (!p->trainable) continue;
        if (p->grad.shape() != p->value.shape())
            throw ShapeError(fmt::format("sgd_step: {} gradient {} vs value {}", p->name, p->grad.shape().str(),
                                         p->value.shape().str()));
        auto [it, fresh] = state.velocity.try_emplace(p->name, p->value.shape());
        Tensor& v = it->second;
        if (v.shape() != p->value.shape())
            throw ShapeError(fmt::format("sgd_step: {} momentum buffer {} vs value {}", p->name, v.shape().str(),
                                         p->value.shape().str()));
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = momentum * v[i] + p->grad[i] + weight_decay * p->value[i];
            p->value[i] -= lr * v[i];
        }
    }
    ++state.steps;
}

PairedSample augment_hflip(const PairedSample& sample, Rng& rng) {
    return uniform01(rng) < 0.5 ? hflip(sample) : sample;
}

std::string metrics_header() { return "epoch\tlr\tl_seg\tl_d1\tl_d2\tl_cl\tl_total\ttrain_miou\n"; }

std::string metrics_line(const EpochRecord& r) {
    return fmt::format("{}\t{:.9g}\t{:.9g}\t{:.9g}\t{:.9g}\t{:.9g}\t{:.9g}\t{:.6f}\n", r.epoch, r.lr, r.l_seg, r.l_d1,
                       r.l_d2, r.l_cl, r.l_total, r.train_miou);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'C', 'S', 'K', 'C', 'K', 'P', 'T', '\0'};

template <class T>
void put(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
public:
    Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

    template <class T>
    T get() {
        need(sizeof(T));
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, &bits, sizeof(T));
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    [[nodiscard]] bool done() const noexcept { return pos_ == data_.size(); }
    [[noreturn]] void fail(const std::string& why) const {
        throw CheckpointError(fmt::format("{}: {}", path_, why));
    }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) fail("truncated checkpoint");
    }
    std::string data_;
    std::string path_;
    std::size_t pos_ = 0;
};

void put_blobs(std::string& out, const std::string& prefix, const std::map<std::string, Tensor>& blobs) {
    for (const auto& [name, t] : blobs) {
        const std::string full = prefix + name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(full.size()));
        out += full;
        const Shape& s = t.shape();
        for (const std::int64_t d : {s.n, s.c, s.h, s.w}) put<std::int64_t>(out, d);
        for (const double v : t.values()) put<double>(out, v);
    }
}

nlohmann::json history_json(const std::vector<EpochRecord>& history) {
    nlohmann::json out = nlohmann::json::array();
    for (const EpochRecord& r : history)
        out.push_back({r.epoch, r.lr, r.l_seg, r.l_d1, r.l_d2, r.l_cl, r.l_total, r.train_miou});
    return out;
}

std::vector<EpochRecord> parse_history(const nlohmann::json& j) {
    std::vector<EpochRecord> out;
    for (const auto& r : j) {
        out.push_back({r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>(),
                       r.at(4).get<double>(), r.at(5).get<double>(), r.at(6).get<double>(), r.at(7).get<double>()});
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const nlohmann::json header = {
        {"kind", ckpt.kind},
        {"modality", ckpt.modality},
        {"config", nlohmann::json::parse(ckpt.config_json.empty() ? "{}" : ckpt.config_json)},
        {"epoch", ckpt.epoch},
        {"best_miou", ckpt.best_miou},
        {"best_epoch", ckpt.best_epoch},
        {"rng_state", ckpt.rng_state},
        {"optimizer_steps", ckpt.optimizer_steps},
        {"history", history_json(ckpt.history)},
    };
    const std::string text = header.dump();
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out += text;
    put<std::uint64_t>(out, ckpt.params.size() + ckpt.buffers.size() + ckpt.momentum.size());
    put_blobs(out, "param:", ckpt.params);
    put_blobs(out, "buffer:", ckpt.buffers);
    put_blobs(out, "momentum:", ckpt.momentum);

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f || !f.write(out.data(), static_cast<std::streamsize>(out.size())))
            throw IoError("cannot write " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError(fmt::format("cannot move checkpoint to {}: {}", path.string(), ec.message()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    Reader r(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()), path.string());
    if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) r.fail("not a csknet checkpoint");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) r.fail(fmt::format("unsupported checkpoint version {}", version));
    const auto header_len = r.get<std::uint64_t>();
    Checkpoint ckpt;
    try {
        const nlohmann::json h = nlohmann::json::parse(r.bytes(header_len));
        ckpt.kind = h.at("kind").get<std::string>();
        ckpt.modality = h.at("modality").get<std::string>();
        ckpt.config_json = h.at("config").dump();
        ckpt.epoch = h.at("epoch").get<int>();
        ckpt.best_miou = h.at("best_miou").get<double>();
        ckpt.best_epoch = h.at("best_epoch").get<int>();
        ckpt.rng_state = h.at("rng_state").get<std::string>();
        ckpt.optimizer_steps = h.at("optimizer_steps").get<std::int64_t>();
        ckpt.history = parse_history(h.at("history"));
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("bad header: ") + e.what());
    }
    const auto count = r.get<std::uint64_t>();
    for (std::uint64_t k = 0; k < count; ++k) {
        const std::string name = r.bytes(r.get<std::uint32_t>());
        Shape s;
        s.n = r.get<std::int64_t>();
        s.c = r.get<std::int64_t>();
        s.h = r.get<std::int64_t>();
        s.w = r.get<std::int64_t>();
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) r.fail("negative extent in blob " + name);
        Tensor t(s);
        for (double& v : t.values()) v = r.get<double>();
        const auto colon = name.find(':');
        const std::string group = name.substr(0, colon);
        const std::string key = colon == std::string::npos ? "" : name.substr(colon + 1);
        if (group == "param") ckpt.params.emplace(key, std::move(t));
        else if (group == "buffer") ckpt.buffers.emplace(key, std::move(t));
        else if (group == "momentum") ckpt.momentum.emplace(key, std::move(t));
        else r.fail("unknown blob group in " + name);
    }
    if (!r.done()) r.fail("trailing bytes");
    return ckpt;
}

void capture_parameters(std::span<Parameter* const> params, std::span<const BufferRef> buffers, Checkpoint& ckpt) {
    ckpt.params.clear();
    ckpt.buffers.clear();
    for (const Parameter* p : params) ckpt.params.insert_or_assign(p->name, p->value);
    for (const BufferRef& b : buffers)
        ckpt.buffers.insert_or_assign(b.name, Tensor({1, 1, 1, static_cast<std::int64_t>(b.values->size())}, *b.values));
}

void restore_parameters(const Checkpoint& ckpt, std::span<Parameter* const> params,
                        std::span<const BufferRef> buffers) {
    if (ckpt.params.size() != params.size() || ckpt.buffers.size() != buffers.size())
        throw CheckpointError(fmt::format("checkpoint holds {} parameters / {} buffers, model has {} / {}",
                                          ckpt.params.size(), ckpt.buffers.size(), params.size(), buffers.size()));
    for (Parameter* p : params) {
        const auto it = ckpt.params.find(p->name);
        if (it == ckpt.params.end()) throw CheckpointError("checkpoint lacks parameter " + p->name);
        if (it->second.shape() != p->value.shape())
            throw CheckpointError(fmt::format("parameter {}: checkpoint shape {} vs model {}", p->name,
                                              it->second.shape().str(), p->value.shape().str()));
        p->value = it->second;
    }
    for (const BufferRef& b : buffers) {
        const auto it = ckpt.buffers.find(b.name);
        if (it == ckpt.buffers.end()) throw CheckpointError("checkpoint lacks buffer " + b.name);
        if (it->second.size() != b.values->size())
            throw CheckpointError(fmt::format("buffer {}: checkpoint length {} vs model {}", b.name, it->second.size(),
                                              b.values->size()));
        b.values->assign(it->second.values().begin(), it->second.values().end());
    }
}

ModelConfig checkpoint_model_config(const Checkpoint& ckpt) {
    RunConfig rc;
    try {
        apply_flat_json(rc, nlohmann::json::parse(ckpt.config_json));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint config: ") + e.what());
    }
    return rc.train.model_config();
}

BaselineModel load_baseline(const Checkpoint& ckpt) {
    if (ckpt.kind != "baseline") throw CheckpointError("expected a baseline checkpoint, got '" + ckpt.kind + "'");
    BaselineModel m(checkpoint_model_config(ckpt));
    restore_parameters(ckpt, m.parameters(), m.buffers());
    return m;
}

CskNetModel load_csknet(const Checkpoint& ckpt) {
    if (ckpt.kind != "csknet") throw CheckpointError("expected a csknet checkpoint, got '" + ckpt.kind + "'");
    CskNetModel m(checkpoint_model_config(ckpt));
    restore_parameters(ckpt, m.parameters(), m.buffers());
    return m;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct StepOutcome {
    LossReport report;
    Tensor logits;
};

struct Run {
    const TrainConfig& config;
    std::span<const PairedSample> train;
    Rng rng;
    SgdState opt;
    Checkpoint state;
    std::function<StepOutcome(const Batch&, double lr)> step;
    std::function<void(Checkpoint&)> capture;

    void restore_from(const Checkpoint& ckpt) {
        state.epoch = ckpt.epoch;
        state.best_miou = ckpt.best_miou;
        state.best_epoch = ckpt.best_epoch;
        state.history = ckpt.history;
        set_rng_state(rng, ckpt.rng_state);
        opt.steps = ckpt.optimizer_steps;
        opt.velocity = ckpt.momentum;
    }

    Checkpoint snapshot() {
        Checkpoint c = state;
        c.config_json = to_flat_json(config).dump();
        c.rng_state = rng_state(rng);
        c.optimizer_steps = opt.steps;
        c.momentum = opt.velocity;
        capture(c);
        return c;
    }

    void run() {
        if (train.size() < 2) throw std::invalid_argument("training needs at least 2 samples");
        const std::filesystem::path out = config.out_dir;
        std::ofstream log;
        if (!out.empty()) {
            std::error_code ec;
            std::filesystem::create_directories(out, ec);
            if (ec) throw IoError(fmt::format("cannot create {}: {}", out.string(), ec.message()));
            log.open(out / "metrics.tsv", std::ios::binary | std::ios::trunc);
            if (!log) throw IoError("cannot write " + (out / "metrics.tsv").string());
            log << metrics_header();
            for (const EpochRecord& r : state.history) log << metrics_line(r);
            log.flush();
        }
        const std::int64_t classes = config.model.num_classes;
        const std::size_t n = train.size();
        const auto batch = static_cast<std::size_t>(config.batch_size);
        for (int e = state.epoch; e < config.epochs; ++e) {
            const double lr = poly_lr(e, config.epochs, config.base_lr, config.poly_power);
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), 0);
            for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);

            EpochRecord rec;
            rec.epoch = e + 1;
            rec.lr = lr;
            ConfusionMatrix cm(classes);
            double seen = 0.0;
            for (std::size_t begin = 0; begin < n; begin += batch) {
                const std::size_t end = std::min(n, begin + batch);
                if (end - begin < 2) break;
                std::vector<PairedSample> picked;
                for (std::size_t i = begin; i < end; ++i)
                    picked.push_back(config.hflip ? augment_hflip(train[order[i]], rng) : train[order[i]]);
                std::vector<std::size_t> idx(picked.size());
                std::iota(idx.begin(), idx.end(), 0);
                const Batch b = make_batch(picked, idx);
                const StepOutcome o = step(b, lr);
                const auto w = static_cast<double>(picked.size());
                rec.l_seg += w * o.report.l_seg;
                rec.l_d1 += w * o.report.l_d1;
                rec.l_d2 += w * o.report.l_d2;
                rec.l_cl += w * o.report.l_cl;
                rec.l_total += w * o.report.l_total;
                seen += w;
                cm.update(argmax_labels(o.logits), b.labels);
            }
            rec.l_seg /= seen;
            rec.l_d1 /= seen;
            rec.l_d2 /= seen;
            rec.l_cl /= seen;
            rec.l_total /= seen;
            rec.train_miou = iou_report(cm).miou;
            if (!std::isfinite(rec.l_total))
                throw NumericError(fmt::format("non-finite training loss at epoch {}", rec.epoch));

            state.history.push_back(rec);
            state.epoch = e + 1;
            const bool best = rec.train_miou > state.best_miou;
            if (best) {
                state.best_miou = rec.train_miou;
                state.best_epoch = rec.epoch;
            }
            if (!out.empty()) {
                log << metrics_line(rec);
                log.flush();
                const Checkpoint c = snapshot();
                save_checkpoint(out / "last.ckpt", c);
                if (best) save_checkpoint(out / "best.ckpt", c);
                if (config.checkpoint_every > 0 && state.epoch % config.checkpoint_every == 0)
                    save_checkpoint(out / fmt::format("epoch_{:04d}.ckpt", state.epoch), c);
            }
        }
    }
};

Tensor model_input(const Batch& b, Modality m, std::int64_t channels) {
    return m == Modality::kEo ? b.eo : replicate_channels(b.ir, channels);
}

void zero_grads(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->zero_grad();
}

bool same_architecture(const ModelConfig& a, const ModelConfig& b) {
    return a.widths == b.widths && a.num_classes == b.num_classes && a.in_channels == b.in_channels &&
           a.decoder_width == b.decoder_width && a.convs_per_stage == b.convs_per_stage &&
           a.skip_stage == b.skip_stage;
}

}  // namespace

Stage1Result train_stage1(const TrainConfig& config, std::span<const PairedSample> train, Modality modality,
                          const Checkpoint* resume) {
    config.validate();
    if (train.empty()) throw std::invalid_argument("train_stage1: empty dataset");
    Stage1Result result{BaselineModel(config.model_config()), {}, {}};
    BaselineModel& model = result.model;
    const std::vector<Parameter*> params = model.parameters();

    Run run{config, train, Rng(mix_seed(config.seed, 0x57A6E1)), {}, {}, {}, {}};
    run.state.kind = "baseline";
    run.state.modality = modality_name(modality);
    if (resume) {
        if (resume->kind != "baseline" || resume->modality != run.state.modality)
            throw CheckpointError("resume checkpoint is not a " + run.state.modality + " baseline");
        restore_parameters(*resume, params, model.buffers());
        run.restore_from(*resume);
    }
    run.capture = [&](Checkpoint& c) { capture_parameters(params, model.buffers(), c); };
    run.step = [&](const Batch& b, double lr) {
        Tape tape;
        const BaselineOutputs o =
            forward_baseline(tape, model, tape.constant(model_input(b, modality, config.model.in_channels)), BnMode::kTrain);
        const SegLoss l = seg_loss(o.logits, b.labels);
        zero_grads(params);
        tape.backward(l.total);
        sgd_step(params, run.opt, lr, config.momentum, config.weight_decay);
        StepOutcome out;
        out.report.l_seg = l.total.value()[0];
        out.report.l_total = out.report.l_seg;
        out.logits = o.logits.value();
        return out;
    };
    run.run();
    result.history = run.state.history;
    result.last = run.snapshot();
    return result;
}

TeacherTargets teacher_targets(BaselineModel& teacher, const Tensor& eo) {
    Tape tape;
    const BaselineOutputs o = forward_baseline(tape, teacher, tape.constant(eo), BnMode::kEval);
    TeacherTargets t;
    t.probs = softmax_channel(o.logits).value();
    t.f4 = o.stages[3].value();
    t.f5 = o.stages[4].value();
    t.fd = o.decoder.value();
    return t;
}

Stage2Result train_stage2(const TrainConfig& config, std::span<const PairedSample> train, BaselineModel& teacher,
                          const Checkpoint* resume) {
    config.validate();
    if (train.empty()) throw std::invalid_argument("train_stage2: empty dataset");
    if (!same_architecture(teacher.config(), config.model))
        throw std::invalid_argument("pretrained checkpoint and config disagree on the architecture (widths/classes)");
    Stage2Result result{CskNetModel(config.model_config()), {}, {}};
    CskNetModel& model = result.model;
    const std::vector<Parameter*> params = model.parameters();
    const bool needs_teacher = config.weights.d1 > 0.0 || config.weights.d2 > 0.0;

    Run run{config, train, Rng(mix_seed(config.seed, 0x57A6E2)), {}, {}, {}, {}};
    run.state.kind = "csknet";
    if (resume) {
        if (resume->kind != "csknet") throw CheckpointError("resume checkpoint is not a csknet checkpoint");
        restore_parameters(*resume, params, model.buffers());
        run.restore_from(*resume);
    } else if (config.init_eo_from_teacher) {
        model.init_eo_branch_from(teacher);
    }
    CskForwardOptions opts;
    opts.mode = BnMode::kTrain;
    opts.exchange = config.exchange;
    opts.exchange_config = config.exchange_config;
    opts.fusion = config.fusion;
    opts.embeddings = config.weights.cl > 0.0;

    run.capture = [&](Checkpoint& c) { capture_parameters(params, model.buffers(), c); };
    run.step = [&](const Batch& b, double lr) {
        TeacherTargets targets;
        if (needs_teacher) targets = teacher_targets(teacher, b.eo);
        Tape tape;
        const CskOutputs o = forward_csknet(tape, model, tape.constant(b.eo),
                                            tape.constant(replicate_channels(b.ir, config.model.in_channels)), opts);
        const JointLoss l = joint_loss(o, b.labels, needs_teacher ? &targets : nullptr, config.weights,
                                       config.contrastive, run.rng);
        zero_grads(params);
        tape.backward(l.total);
        sgd_step(params, run.opt, lr, config.momentum, config.weight_decay);
        return StepOutcome{l.report, o.p_fused.value()};
    };
    run.run();
    result.history = run.state.history;
    result.last = run.snapshot();
    return result;
}

}  // namespace csk
