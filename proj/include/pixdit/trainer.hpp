// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Optimization loop: Adam with constant learning rate, global-norm gradient
// clipping, one EMA shadow per configured decay, binary checkpoints and a
// deterministic metrics stream.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pixdit/alignment.hpp"
#include "pixdit/config.hpp"
#include "pixdit/dataset.hpp"
#include "pixdit/model.hpp"
#include "pixdit/rng.hpp"
#include "pixdit/tensor.hpp"

namespace pixdit {

struct TrainState {
    ParamMap<float> params;
    ParamMap<float> adam_m, adam_v;
    std::map<std::string, ParamMap<float>> ema;  // decay string -> shadow
    int64_t step = 0;
    Rng rng;
};

struct StepMetrics {
    int64_t step = 0;
    double loss_total = 0.0;
    double loss_denoise = 0.0;
    std::optional<double> loss_align;  // absent when the branch is none
    double grad_norm = 0.0;
    double wall_ms = 0.0;  // reported separately; not part of the metrics file
};

// shadow' = decay * shadow + (1 - decay) * params, element-wise by name.
void ema_update(ParamMap<float>& shadow, const ParamMap<float>& params, double decay);

// Returns the pre-clip global norm; scales grads down when above max_norm
// (max_norm <= 0 disables clipping).
double clip_gradients(ParamMap<float>& grads, double max_norm);

std::string format_decay(double decay);

// One deterministic JSON line: step, losses, grad norm. Wall time goes to a
// separate timing file so reruns stay byte-identical.
std::string metrics_json(const StepMetrics& m);

class Trainer {
public:
    explicit Trainer(const RunConfig& cfg);

    const RunConfig& config() const { return cfg_; }
    const DiffusionModel<float>& model() const { return model_; }
    const SemanticEncoder<float>* encoder() const { return encoder_.get(); }

    TrainState init_state() const;

    // Alignment targets for a clean batch (empty tensor when branch is none).
    Tensor targets_for(const Tensor& x, const std::vector<int64_t>& ids) const;

    StepMetrics train_step(TrainState& st, const Tensor& x, const std::vector<int>& labels,
                           const std::vector<int64_t>& ids) const;

private:
    RunConfig cfg_;
    DiffusionModel<float> model_;
    std::unique_ptr<SemanticEncoder<float>> encoder_;
};

// Checkpoint container: magic, version, config hash, length-prefixed named
// float32 tensors (params, Adam moments, every EMA shadow), JSON trailer
// with step, rng state and the canonical config.
void save_checkpoint(const TrainState& st, const RunConfig& cfg, const std::string& path);

struct LoadedCheckpoint {
    TrainState state;
    RunConfig config;
};

// expected_hash, when nonempty, must match the stored config hash.
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::string& expected_hash = "");

// Pick raw params or one EMA shadow ("none" or a decay string).
const ParamMap<float>& select_params(const TrainState& st, const std::string& ema);

// Full training run over a dataset. When run_dir is nonempty, writes
// config.canonical, metrics.jsonl, timing.jsonl and checkpoints/.
std::vector<StepMetrics> run_training(const RunConfig& cfg, const Dataset& data,
                                      const std::string& run_dir, TrainState* out_state);

}  // namespace pixdit
