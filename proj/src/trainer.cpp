// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdit/trainer.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "pixdit/kernels.hpp"

namespace pixdit {

namespace {

std::string shortest(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

}  // namespace

std::string format_decay(double decay) { return shortest(decay); }

void ema_update(ParamMap<float>& shadow, const ParamMap<float>& params, double decay) {
    if (!(decay >= 0.0 && decay <= 1.0)) throw DomainError("ema_update: decay outside [0,1]");
    if (shadow.size() != params.size())
        throw StateError("ema_update: shadow and params disagree on entry count");
    for (auto& [name, s] : shadow) {
        auto it = params.find(name);
        if (it == params.end())
            throw StateError("ema_update: shadow entry '" + name + "' missing from params");
        if (!s.same_shape(it->second))
            throw StateError("ema_update: shape mismatch for '" + name + "'");
        kern::ema_step(s.ptr(), it->second.ptr(), s.numel(), float(decay));
    }
}

double clip_gradients(ParamMap<float>& grads, double max_norm) {
    double sumsq = 0.0;
    for (const auto& [name, g] : grads) sumsq += kern::reduce_sumsq(g.ptr(), g.numel());
    double norm = std::sqrt(sumsq);
    if (max_norm > 0.0 && norm > max_norm && norm > 0.0) {
        float scale = float(max_norm / norm);
        for (auto& [name, g] : grads) kern::scale_inplace(g.ptr(), scale, g.numel());
    }
    return norm;
}

std::string metrics_json(const StepMetrics& m) {
    nlohmann::json j;
    j["step"] = m.step;
    j["loss_total"] = m.loss_total;
    j["loss_denoise"] = m.loss_denoise;
    if (m.loss_align.has_value()) j["loss_align"] = *m.loss_align;
    j["grad_norm"] = m.grad_norm;
    return j.dump();
}

Trainer::Trainer(const RunConfig& cfg) : cfg_(cfg), model_(cfg) {
    cfg_.validate();
    if (cfg_.alignment.active()) encoder_ = make_encoder<float>(cfg_.alignment, cfg_.model);
}

TrainState Trainer::init_state() const {
    TrainState st;
    st.rng = Rng(cfg_.train.seed);
    st.params = model_.init_params(st.rng);
    for (const auto& [name, p] : st.params) {
        st.adam_m[name] = Tensor(p.shape);
        st.adam_v[name] = Tensor(p.shape);
    }
    for (double d : cfg_.train.ema_decays) st.ema[format_decay(d)] = st.params;
    st.step = 0;
    return st;
}

Tensor Trainer::targets_for(const Tensor& x, const std::vector<int64_t>& ids) const {
    if (!cfg_.alignment.active()) return Tensor{};
    return encode_target(x, ids, *encoder_, cfg_.model.grid(), cfg_.model.grid());
}

StepMetrics Trainer::train_step(TrainState& st, const Tensor& x, const std::vector<int>& labels,
                                const std::vector<int64_t>& ids) const {
    auto t0 = std::chrono::steady_clock::now();
    if (x.ndim() != 4 || x.dim(0) < 1) throw InvalidInputError("train_step: empty batch");
    StepDraws<float> draws = draw_step(x, labels, cfg_.model, cfg_.alignment,
                                       cfg_.train.class_drop, st.rng);
    Tensor targets = targets_for(x, ids);

    ParamMap<float> grads;
    for (const auto& [name, p] : st.params) grads[name] = Tensor(p.shape);

    typename Backbone<float>::Acts bacts;
    typename AlignmentBranch<float>::Acts aacts;
    LossResult<float> res;
    try {
        res = model_.compute_losses(st.params, x, targets, draws, bacts, aacts, &grads);
    } catch (const NumericalError& e) {
        throw NumericalError("train_step " + std::to_string(st.step + 1) +
                             " aborted: " + e.what());
    }

    double norm = clip_gradients(grads, cfg_.train.grad_clip);
    st.step += 1;
    const float bc1 = 1.0f - float(std::pow(cfg_.train.beta1, double(st.step)));
    const float bc2 = 1.0f - float(std::pow(cfg_.train.beta2, double(st.step)));
    for (auto& [name, p] : st.params)
        kern::adam_step(p.ptr(), st.adam_m.at(name).ptr(), st.adam_v.at(name).ptr(),
                        grads.at(name).ptr(), p.numel(), float(cfg_.train.lr),
                        float(cfg_.train.beta1), float(cfg_.train.beta2), 1e-8f, bc1, bc2);
    for (auto& [decay_str, shadow] : st.ema)
        ema_update(shadow, st.params, std::stod(decay_str));

    StepMetrics m;
    m.step = st.step;
    m.loss_total = double(res.total);
    m.loss_denoise = double(res.denoise);
    if (res.align_active) m.loss_align = double(res.align);
    m.grad_norm = norm;
    m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                          t0)
                    .count();
    return m;
}

// ------------------------------------------------------------- checkpoints

namespace {

constexpr char kCkptMagic[4] = {'P', 'X', 'C', 'K'};
constexpr uint32_t kCkptVersion = 1;

void w_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<char*>(&v), 4); }
void w_u64(std::ofstream& f, uint64_t v) { f.write(reinterpret_cast<char*>(&v), 8); }

uint32_t r_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    if (!f) throw IoError("checkpoint: truncated file");
    return v;
}
uint64_t r_u64(std::ifstream& f) {
    uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    if (!f) throw IoError("checkpoint: truncated file");
    return v;
}

void write_tensor(std::ofstream& f, const std::string& name, const Tensor& t) {
    w_u32(f, uint32_t(name.size()));
    f.write(name.data(), std::streamsize(name.size()));
    w_u32(f, uint32_t(t.shape.size()));
    for (int64_t d : t.shape) w_u64(f, uint64_t(d));
    w_u64(f, uint64_t(t.numel()) * sizeof(float));
    f.write(reinterpret_cast<const char*>(t.ptr()),
            std::streamsize(size_t(t.numel()) * sizeof(float)));
}

std::pair<std::string, Tensor> read_tensor(std::ifstream& f) {
    uint32_t name_len = r_u32(f);
    if (name_len > 4096) throw IoError("checkpoint: implausible tensor name length");
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    uint32_t ndim = r_u32(f);
    if (ndim > 8) throw IoError("checkpoint: implausible tensor rank");
    std::vector<int64_t> shape(ndim);
    for (auto& d : shape) d = int64_t(r_u64(f));
    uint64_t bytes = r_u64(f);
    Tensor t(shape);
    if (bytes != uint64_t(t.numel()) * sizeof(float))
        throw IoError("checkpoint: tensor byte length disagrees with shape");
    f.read(reinterpret_cast<char*>(t.ptr()), std::streamsize(bytes));
    if (size_t(f.gcount()) != bytes) throw IoError("checkpoint: truncated tensor data");
    return {name, std::move(t)};
}

}  // namespace

void save_checkpoint(const TrainState& st, const RunConfig& cfg, const std::string& path) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write(kCkptMagic, 4);
    w_u32(f, kCkptVersion);
    w_u64(f, fnv1a64(cfg.canonical()));
    uint64_t count = st.params.size() + st.adam_m.size() + st.adam_v.size();
    for (const auto& [d, shadow] : st.ema) count += shadow.size();
    w_u64(f, count);
    for (const auto& [name, t] : st.params) write_tensor(f, "param/" + name, t);
    for (const auto& [name, t] : st.adam_m) write_tensor(f, "adam_m/" + name, t);
    for (const auto& [name, t] : st.adam_v) write_tensor(f, "adam_v/" + name, t);
    for (const auto& [decay, shadow] : st.ema)
        for (const auto& [name, t] : shadow) write_tensor(f, "ema/" + decay + "/" + name, t);
    nlohmann::json trailer = {{"step", st.step},
                              {"rng", st.rng.serialize()},
                              {"config", cfg.canonical()},
                              {"config_hash", cfg.hash()}};
    std::string tj = trailer.dump();
    w_u64(f, uint64_t(tj.size()));
    f.write(tj.data(), std::streamsize(tj.size()));
    if (!f) throw IoError("short write on checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path, const std::string& expected_hash) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw IoError("checkpoint: bad magic (corrupt or not a checkpoint): " + path);
    uint32_t version = r_u32(f);
    if (version != kCkptVersion)
        throw StateError("checkpoint: format version " + std::to_string(version) +
                         " unsupported (expected " + std::to_string(kCkptVersion) + ")");
    uint64_t stored_hash = r_u64(f);
    uint64_t count = r_u64(f);

    LoadedCheckpoint out;
    for (uint64_t i = 0; i < count; ++i) {
        auto [name, t] = read_tensor(f);
        if (name.rfind("param/", 0) == 0)
            out.state.params[name.substr(6)] = std::move(t);
        else if (name.rfind("adam_m/", 0) == 0)
            out.state.adam_m[name.substr(7)] = std::move(t);
        else if (name.rfind("adam_v/", 0) == 0)
            out.state.adam_v[name.substr(7)] = std::move(t);
        else if (name.rfind("ema/", 0) == 0) {
            size_t slash = name.find('/', 4);
            if (slash == std::string::npos)
                throw IoError("checkpoint: malformed ema tensor name " + name);
            out.state.ema[name.substr(4, slash - 4)][name.substr(slash + 1)] = std::move(t);
        } else {
            throw IoError("checkpoint: unknown tensor section in name " + name);
        }
    }
    uint64_t tlen = r_u64(f);
    std::string tj(tlen, '\0');
    f.read(tj.data(), std::streamsize(tlen));
    if (size_t(f.gcount()) != tlen) throw IoError("checkpoint: truncated trailer");
    nlohmann::json trailer;
    try {
        trailer = nlohmann::json::parse(tj);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: malformed trailer: " + std::string(e.what()));
    }
    out.state.step = trailer.at("step").get<int64_t>();
    out.state.rng.deserialize(trailer.at("rng").get<std::string>());
    out.config = parse_run_config(trailer.at("config").get<std::string>());
    if (fnv1a64(out.config.canonical()) != stored_hash)
        throw StateError("checkpoint: stored config hash disagrees with embedded config; "
                         "refusing to load");
    if (!expected_hash.empty() && out.config.hash() != expected_hash)
        throw StateError("checkpoint: config hash " + out.config.hash() +
                         " does not match expected " + expected_hash +
                         "; refusing to load");
    return out;
}

const ParamMap<float>& select_params(const TrainState& st, const std::string& ema) {
    if (ema == "none" || ema.empty()) return st.params;
    auto it = st.ema.find(ema);
    if (it == st.ema.end())
        throw InvalidInputError("no EMA shadow with decay " + ema + " in this checkpoint");
    return it->second;
}

std::vector<StepMetrics> run_training(const RunConfig& cfg, const Dataset& data,
                                      const std::string& run_dir, TrainState* out_state) {
    cfg.validate();
    if (data.size() < 1) throw InvalidInputError("run_training: empty dataset");
    if (data.image_size() != cfg.model.image_size || data.channels() != cfg.model.channels)
        throw ConfigError("run_training: dataset geometry does not match model config");
    namespace fs = std::filesystem;
    std::ofstream metrics_f, timing_f;
    if (!run_dir.empty()) {
        fs::create_directories(fs::path(run_dir) / "checkpoints");
        std::ofstream cf(fs::path(run_dir) / "config.canonical");
        cf << cfg.canonical();
        metrics_f.open(fs::path(run_dir) / "metrics.jsonl");
        timing_f.open(fs::path(run_dir) / "timing.jsonl");
        if (!cf || !metrics_f || !timing_f)
            throw IoError("run_training: cannot create run files in " + run_dir);
    }

    Trainer trainer(cfg);
    TrainState st = trainer.init_state();
    const int64_t n = data.size(), bsz = std::min<int64_t>(cfg.train.batch_size, n);
    std::vector<int64_t> order(n);
    for (int64_t i = 0; i < n; ++i) order[i] = i;
    int64_t cursor = n;  // forces a shuffle before the first batch

    std::vector<StepMetrics> log;
    log.reserve(size_t(cfg.train.steps));
    for (int64_t step = 0; step < cfg.train.steps; ++step) {
        if (cursor + bsz > n) {
            for (int64_t i = n - 1; i > 0; --i) {
                int64_t j = int64_t(st.rng.integer(uint64_t(i + 1)));
                std::swap(order[i], order[j]);
            }
            cursor = 0;
        }
        std::vector<int64_t> idx(order.begin() + cursor, order.begin() + cursor + bsz);
        cursor += bsz;
        Tensor x = gather_images(data, idx);
        std::vector<int> labels(bsz);
        std::vector<int64_t> ids(bsz);
        for (int64_t i = 0; i < bsz; ++i) {
            labels[i] = data.labels[idx[i]];
            ids[i]    = data.ids[idx[i]];
        }
        StepMetrics m = trainer.train_step(st, x, labels, ids);
        if (metrics_f) metrics_f << metrics_json(m) << "\n";
        if (timing_f)
            timing_f << "{\"step\":" << m.step << ",\"wall_ms\":" << m.wall_ms << "}\n";
        log.push_back(m);
        if (!run_dir.empty() &&
            (st.step % cfg.train.checkpoint_every == 0 || step + 1 == cfg.train.steps)) {
            char name[64];
            std::snprintf(name, sizeof(name), "step_%06lld.ckpt",
                          static_cast<long long>(st.step));
            save_checkpoint(st, cfg, (fs::path(run_dir) / "checkpoints" / name).string());
        }
    }
    if (out_state != nullptr) *out_state = std::move(st);
    return log;
}

}  // namespace pixdit
