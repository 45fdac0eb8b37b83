// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Precomputed per-sample feature grids on disk: a directory of binary
// shards, each a fixed header followed by contiguous little-endian float32
// grids, plus a JSON index mapping sample ids to (shard, offset).

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pixdit/tensor.hpp"

namespace pixdit {

class FeatureStore {
public:
    // feats: [n, rows*cols, feature_dim], one grid per id.
    static void write(const std::string& dir, const std::vector<int64_t>& ids,
                      const Tensor& feats, int64_t rows, int64_t cols,
                      int64_t per_shard = 1024);

    explicit FeatureStore(const std::string& dir);

    int64_t rows() const { return rows_; }
    int64_t cols() const { return cols_; }
    int64_t feature_dim() const { return fdim_; }
    int64_t size() const { return static_cast<int64_t>(index_.size()); }

    // [count(ids), rows*cols, feature_dim]
    Tensor gather(const std::vector<int64_t>& ids) const;

private:
    int64_t rows_ = 0, cols_ = 0, fdim_ = 0;
    std::map<int64_t, std::pair<int64_t, int64_t>> index_;  // id -> (shard, offset)
    std::vector<std::vector<float>> shards_;
};

}  // namespace pixdit
