// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Diagnostic machinery: centroid-based subset selection in encoder feature
// space, Gaussian Fréchet distance, mean pairwise diversity, the
// denoise-from-t probe (sampler module) and the mask-ratio ablation runner.

#include <string>
#include <vector>

#include "pixdit/config.hpp"
#include "pixdit/dataset.hpp"
#include "pixdit/tensor.hpp"

namespace pixdit::analysis {

struct FeatureSet {
    std::vector<int64_t> ids;
    std::vector<int> labels;
    TensorD pooled;  // [count, dim], unit rows
};

// Patch grids [n, np, f] -> per-image pooled features: mean over the grid,
// then L2 normalization.
FeatureSet pool_features(const std::vector<int64_t>& ids, const std::vector<int>& labels,
                         const TensorD& patch_feats);

// L2-normalized mean of the class's pooled unit vectors.
TensorD class_centroid(const FeatureSet& fs, int class_id);

struct SubsetReport {
    int class_id = -1;
    TensorD centroid;
    std::vector<int64_t> most_ids, least_ids;
    std::vector<double> most_sims, least_sims;
};

// Top-k / bottom-k by cosine similarity to the centroid under one total
// order (similarity descending, ties by ascending id).
SubsetReport select_subsets(const FeatureSet& fs, const TensorD& centroid, int class_id,
                            int64_t k);

// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)) with unbiased sample
// covariances regularized by +1e-6 I.
double frechet_distance(const TensorD& feats_a, const TensorD& feats_b);

// Mean pairwise Euclidean distance over all row pairs.
double diversity_score(const TensorD& feats);

void write_subset_csv(const std::string& path, const SubsetReport& report);

struct AblationRow {
    double ratio = 0.0;
    uint64_t seed = 0;
    double final_total = 0.0;
    double final_denoise = 0.0;
    double final_align = 0.0;
    double fid_like = 0.0;  // Fréchet between sample and data pooled features
};

// Trains one mta model per (ratio, seed) on the dataset and scores samples
// against the training data with the run's frozen encoder. Writes
// mask_ablation.csv and mask_ablation.png into out_dir when nonempty.
std::vector<AblationRow> run_mask_ablation(const RunConfig& base, const Dataset& data,
                                           const std::vector<double>& ratios,
                                           const std::vector<uint64_t>& seeds,
                                           const std::string& out_dir);

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace pixdit::analysis
