// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Procedurally generated class-conditional toy datasets and their on-disk
// layout (per-image PNGs, a raw float32 image blob, and a JSON manifest).
//
// "shapes": generic colored-shape classes for smoke training.
// "tightmode": each class contains a sub-population that shares one
// low-frequency layout and differs only in high-frequency texture, so a
// lossy encoder maps those samples to nearly one feature point while they
// stay diverse in pixel space.

#include <cstdint>
#include <string>
#include <vector>

#include "pixdit/tensor.hpp"

namespace pixdit {

struct Dataset {
    Tensor images;                    // [N, C, H, W] in [-1, 1]
    std::vector<int> labels;
    std::vector<int64_t> ids;
    std::vector<uint8_t> tight_mode;  // 1 = tight-mode member; empty for shapes
    std::string kind;

    int64_t size() const { return images.ndim() ? images.dim(0) : 0; }
    int64_t image_size() const { return images.dim(2); }
    int64_t channels() const { return images.dim(1); }
};

Dataset generate_shapes(int64_t classes, int64_t per_class, int64_t image_size,
                        uint64_t seed);

// mode_fraction of each class shares the class's base layout.
Dataset generate_tightmode(int64_t classes, int64_t per_class, int64_t image_size,
                           uint64_t seed, double mode_fraction = 0.5);

// dir/: labels.json, images.f32, png/img_<id>_c<label>.png
void save_dataset(const Dataset& d, const std::string& dir, bool write_pngs = true);
Dataset load_dataset(const std::string& dir);

Tensor gather_images(const Dataset& d, const std::vector<int64_t>& indices);

}  // namespace pixdit
