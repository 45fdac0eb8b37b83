// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pixdit/error.hpp"

namespace pixdit {

// Backbone shape. Desk-scale defaults sized so the full smoke-training
// suite fits a small CPU box; larger presets scale depth/hidden/heads up
// while keeping the structure.
struct ModelConfig {
    int64_t image_size = 24;
    int64_t patch_size = 4;  // 6x6 token grid
    int64_t channels   = 3;
    int64_t depth      = 4;
    int64_t hidden_dim = 48;
    int64_t heads      = 4;
    int64_t num_classes = 10;
    int64_t in_context_tokens      = 8;
    int64_t in_context_start_block = 3;  // 1-based block index
    int64_t alignment_depth        = 2;  // = in_context_start_block - 1
    int64_t mlp_ratio = 2;

    int64_t grid() const { return image_size / patch_size; }
    int64_t n_patch() const { return grid() * grid(); }
    int64_t patch_dim() const { return patch_size * patch_size * channels; }
    int64_t head_dim() const { return hidden_dim / heads; }

    void validate() const {
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
            throw ConfigError("model: image_size must be a positive multiple of patch_size");
        if (depth < 1) throw ConfigError("model: depth must be >= 1");
        if (in_context_start_block < 1 || in_context_start_block > depth)
            throw ConfigError("model: in_context_start_block must be in [1, depth]");
        if (alignment_depth < 1 || alignment_depth > depth)
            throw ConfigError("model: alignment_depth must be in [1, depth]");
        if (alignment_depth >= in_context_start_block)
            throw ConfigError("model: alignment_depth must precede in_context_start_block");
        if (hidden_dim <= 0 || heads <= 0 || hidden_dim % heads != 0)
            throw ConfigError("model: hidden_dim must be divisible by heads");
        if (num_classes < 1) throw ConfigError("model: num_classes must be >= 1");
        if (in_context_tokens < 0) throw ConfigError("model: in_context_tokens must be >= 0");
        if (channels < 1) throw ConfigError("model: channels must be >= 1");
        if (mlp_ratio < 1) throw ConfigError("model: mlp_ratio must be >= 1");
    }
};

struct TrainConfig {
    double lr    = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    int64_t batch_size = 32;
    int64_t steps      = 1000;
    std::vector<double> ema_decays = {0.9996, 0.9998, 0.9999};
    uint64_t seed    = 0;
    double grad_clip = 1.0;  // global norm; <= 0 disables
    double class_drop = 0.1;
    int64_t checkpoint_every = 500;

    void validate() const {
        if (!(lr > 0)) throw ConfigError("train: lr must be positive");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
            throw ConfigError("train: betas must be in [0,1)");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (steps < 1) throw ConfigError("train: steps must be >= 1");
        if (ema_decays.empty()) throw ConfigError("train: ema_decays must be nonempty");
        for (double d : ema_decays)
            if (!(d >= 0.0 && d <= 1.0)) throw ConfigError("train: ema decay outside [0,1]");
        if (!(class_drop >= 0.0 && class_drop < 1.0))
            throw ConfigError("train: class_drop must be in [0,1)");
        if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be >= 1");
    }
};

struct AlignmentConfig {
    std::string variant = "none";  // none | mlp | mta
    double mask_ratio   = 0.2;
    double lambda       = 0.1;
    bool learned_mask_token = false;  // zeroing is the default masking
    std::string encoder = "frozen-random-vit";  // | precomputed-file | lossy-pool
    int64_t feature_dim = 32;
    int64_t encoder_patch  = 8;  // coarser grid than the backbone: targets resample
    int64_t encoder_depth  = 2;
    int64_t encoder_hidden = 32;
    int64_t encoder_heads  = 4;
    uint64_t encoder_seed  = 1234;
    int64_t pool_grid      = 2;   // lossy-pool cell grid
    int64_t pool_blur      = 4;   // lossy-pool blur passes
    std::string features_dir;     // precomputed-file shard directory

    bool active() const { return variant != "none"; }

    void validate() const {
        if (variant != "none" && variant != "mlp" && variant != "mta")
            throw ConfigError("alignment: variant must be none, mlp or mta");
        if (!(mask_ratio >= 0.0 && mask_ratio < 1.0))
            throw ConfigError("alignment: mask_ratio must be in [0,1)");
        if (active() && !(lambda > 0.0))
            throw ConfigError("alignment: lambda must be positive when a branch is active");
        if (encoder != "frozen-random-vit" && encoder != "precomputed-file" &&
            encoder != "lossy-pool")
            throw ConfigError("alignment: unknown encoder kind");
        if (feature_dim < 1) throw ConfigError("alignment: feature_dim must be >= 1");
        if (encoder_hidden < 1 || encoder_heads < 1 || encoder_hidden % encoder_heads != 0)
            throw ConfigError("alignment: encoder_hidden must be divisible by encoder_heads");
        if (pool_grid < 1) throw ConfigError("alignment: pool_grid must be >= 1");
        if (encoder == "precomputed-file" && features_dir.empty())
            throw ConfigError("alignment: precomputed-file encoder needs features_dir");
    }
};

struct SamplerConfig {
    int64_t steps = 50;
    double guidance_scale = 1.5;
    double interval_lo = 0.1;
    double interval_hi = 1.0;
    std::string ema = "0.9999";  // decay value as string, or "none" for raw params

    void validate() const {
        if (steps < 1) throw ConfigError("sampler: steps must be >= 1");
        if (!(interval_lo >= 0.0 && interval_lo < interval_hi && interval_hi <= 1.0))
            throw ConfigError("sampler: guidance interval must satisfy 0 <= lo < hi <= 1");
    }
};

struct DataConfig {
    std::string dir;            // dataset directory; empty = generate in memory
    std::string kind = "shapes";  // shapes | tightmode (generation)
    int64_t classes   = 10;
    int64_t per_class = 64;
    uint64_t seed     = 1000;   // generation seed, independent of train.seed

    void validate() const {
        if (kind != "shapes" && kind != "tightmode")
            throw ConfigError("data: kind must be shapes or tightmode");
        if (classes < 1 || per_class < 1)
            throw ConfigError("data: classes and per_class must be >= 1");
    }
};

struct AnalysisConfig {
    int64_t subset_k = 16;
    double probe_t0  = 0.2;
    int64_t sample_count = 64;
    std::vector<double> mask_ratios = {0.1, 0.2, 0.3, 0.4, 0.5};

    void validate() const {
        if (subset_k < 1) throw ConfigError("analysis: subset_k must be >= 1");
        if (!(probe_t0 > 0.0 && probe_t0 < 1.0))
            throw ConfigError("analysis: probe_t0 must be in (0,1)");
        if (sample_count < 1) throw ConfigError("analysis: sample_count must be >= 1");
        for (double r : mask_ratios)
            if (!(r >= 0.0 && r < 1.0)) throw ConfigError("analysis: mask ratio outside [0,1)");
    }
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    AlignmentConfig alignment;
    SamplerConfig sampler;
    DataConfig data;
    AnalysisConfig analysis;

    void validate() const {
        model.validate();
        train.validate();
        alignment.validate();
        sampler.validate();
        data.validate();
        analysis.validate();
    }

    // Fixed section order, sorted keys, every default explicit.
    std::string canonical() const;
    // FNV-1a 64 over the canonical text, as 16 hex digits.
    std::string hash() const;
};

// Parse TOML-style sectioned key = value text. Unknown sections or keys are
// rejected with their line number. Values: bool, integer, float, string,
// and flat arrays of numbers.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Apply one "section.key=value" override.
void apply_override(RunConfig& cfg, const std::string& spec);

uint64_t fnv1a64(const std::string& s);

}  // namespace pixdit
