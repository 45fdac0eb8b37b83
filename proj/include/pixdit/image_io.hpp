// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic PNG encoding (zlib-backed), raw float32 tensor files, and a
// tiny line-plot renderer for report figures.

#include <cstdint>
#include <string>
#include <vector>

#include "pixdit/tensor.hpp"

namespace pixdit {

// 8-bit RGB, row-major [h][w][3].
void write_png_rgb(const std::string& path, const std::vector<uint8_t>& rgb, int64_t w,
                   int64_t h);

// Map one [C, H, W] image in [-1, 1] to 8-bit RGB (C = 1 broadcasts; C >= 3
// takes the first three channels).
std::vector<uint8_t> to_rgb8(const float* chw, int64_t c, int64_t h, int64_t w);

// Tile a [B, C, H, W] batch into a grid PNG with a 2-pixel gutter.
void write_image_grid_png(const std::string& path, const Tensor& images, int64_t cols);

// Raw little-endian float32 blobs.
void save_raw_f32(const std::string& path, const Tensor& t);
Tensor load_raw_f32(const std::string& path, const std::vector<int64_t>& shape);

struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
    uint8_t rgb[3] = {31, 119, 180};
};

// Minimal line chart: axes, ticks with numeric labels, one polyline per
// series. Enough for the report figures, nothing more.
void write_line_plot_png(const std::string& path, const std::vector<PlotSeries>& series,
                         const std::string& title, int64_t w = 640, int64_t h = 420);

}  // namespace pixdit
