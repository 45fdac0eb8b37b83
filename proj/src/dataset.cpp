// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "pixdit/error.hpp"
#include "pixdit/image_io.hpp"
#include "pixdit/kernels.hpp"
#include "pixdit/rng.hpp"

namespace pixdit {

namespace {

struct Rgb {
    double r, g, b;
};

Rgb hsv(double h, double s, double v) {
    h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
    int i = int(h);
    double f = h - i;
    double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i % 6) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

void put(Tensor& images, int64_t n, int64_t hw, int64_t idx, int64_t y, int64_t x,
         const Rgb& c, double alpha = 1.0) {
    float* base = images.ptr() + idx * 3 * hw * hw;
    double vals[3] = {c.r, c.g, c.b};
    for (int64_t ch = 0; ch < 3; ++ch) {
        float& px = base[(ch * hw + y) * hw + x];
        px = float((1 - alpha) * px + alpha * (vals[ch] * 2.0 - 1.0));
    }
    (void)n;
}

// smooth multi-blob field in [0,1] per channel
void paint_blobs(Tensor& images, int64_t idx, int64_t hw, Rng& rng, int blobs) {
    float* base = images.ptr() + idx * 3 * hw * hw;
    struct Blob {
        double cx, cy, s, amp[3];
    };
    std::vector<Blob> bl(blobs);
    double bg[3] = {rng.uniform(0.2, 0.5), rng.uniform(0.2, 0.5), rng.uniform(0.2, 0.5)};
    for (auto& b : bl) {
        b.cx = rng.uniform(0.1, 0.9) * double(hw);
        b.cy = rng.uniform(0.1, 0.9) * double(hw);
        b.s  = rng.uniform(0.12, 0.3) * double(hw);
        for (double& a : b.amp) a = rng.uniform(-0.5, 0.5);
    }
    for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t y = 0; y < hw; ++y)
            for (int64_t x = 0; x < hw; ++x) {
                double v = bg[ch];
                for (const auto& b : bl) {
                    double dx = double(x) - b.cx, dy = double(y) - b.cy;
                    v += b.amp[ch] * std::exp(-(dx * dx + dy * dy) / (2 * b.s * b.s));
                }
                base[(ch * hw + y) * hw + x] = float(std::clamp(v, 0.0, 1.0) * 2.0 - 1.0);
            }
}

void add_texture(Tensor& images, int64_t idx, int64_t hw, Rng& rng, double amp) {
    float* base = images.ptr() + idx * 3 * hw * hw;
    // random high-frequency checker plus pixel speckle; averages to ~0 over
    // any coarse cell, so pooled features barely move
    double fx = rng.uniform(2.0, 3.2), fy = rng.uniform(2.0, 3.2);
    double px = rng.uniform(0.0, 2 * M_PI), py = rng.uniform(0.0, 2 * M_PI);
    std::vector<float> speckle(size_t(hw * hw));
    for (auto& s : speckle) s = float(rng.uniform(-1.0, 1.0));
    for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t y = 0; y < hw; ++y)
            for (int64_t x = 0; x < hw; ++x) {
                double checker =
                    std::sin(fx * double(x) + px) * std::sin(fy * double(y) + py) > 0 ? 1.0
                                                                                      : -1.0;
                double t = amp * (0.6 * checker + 0.4 * speckle[size_t(y * hw + x)]);
                float& v = base[(ch * hw + y) * hw + x];
                v = float(std::clamp(double(v) + t, -1.0, 1.0));
            }
}

}  // namespace

Dataset generate_shapes(int64_t classes, int64_t per_class, int64_t image_size,
                        uint64_t seed) {
    if (classes < 1 || per_class < 1 || image_size < 8)
        throw InvalidInputError("generate_shapes: bad sizes");
    const int64_t n = classes * per_class, hw = image_size;
    Dataset d;
    d.kind = "shapes";
    d.images = Tensor({n, 3, hw, hw});
    d.labels.resize(n);
    d.ids.resize(n);
    Rng rng(seed);
    for (int64_t c = 0; c < classes; ++c) {
        double hue = 360.0 * double(c) / double(classes);
        int shape = int(c % 5);
        for (int64_t s = 0; s < per_class; ++s) {
            int64_t idx = c * per_class + s;
            d.labels[idx] = int(c);
            d.ids[idx] = idx;
            Rgb bg = hsv(hue + 180.0, 0.25, rng.uniform(0.25, 0.5));
            for (int64_t y = 0; y < hw; ++y)
                for (int64_t x = 0; x < hw; ++x) put(d.images, n, hw, idx, y, x, bg);
            Rgb fg = hsv(hue + rng.uniform(-14.0, 14.0), rng.uniform(0.7, 1.0),
                         rng.uniform(0.7, 1.0));
            double cx = rng.uniform(0.35, 0.65) * double(hw);
            double cy = rng.uniform(0.35, 0.65) * double(hw);
            double r  = rng.uniform(0.18, 0.32) * double(hw);
            for (int64_t y = 0; y < hw; ++y)
                for (int64_t x = 0; x < hw; ++x) {
                    double dx = double(x) - cx, dy = double(y) - cy;
                    bool hit = false;
                    switch (shape) {
                        case 0: hit = dx * dx + dy * dy <= r * r; break;
                        case 1: hit = std::fabs(dx) <= r && std::fabs(dy) <= r * 0.8; break;
                        case 2: {
                            double rr = std::sqrt(dx * dx + dy * dy);
                            hit = rr <= r && rr >= r * 0.55;
                            break;
                        }
                        case 3:
                            hit = dy >= -r && dy <= r && std::fabs(dx) <= (dy + r) * 0.5;
                            break;
                        default:
                            hit = std::fabs(std::fmod(dx + dy + 4 * r, r * 0.9)) < r * 0.45 &&
                                  dx * dx + dy * dy <= r * r * 1.4;
                    }
                    if (hit) put(d.images, n, hw, idx, y, x, fg);
                }
            add_texture(d.images, idx, hw, rng, 0.05);
        }
    }
    return d;
}

Dataset generate_tightmode(int64_t classes, int64_t per_class, int64_t image_size,
                           uint64_t seed, double mode_fraction) {
    if (classes < 1 || per_class < 2 || image_size < 8)
        throw InvalidInputError("generate_tightmode: bad sizes");
    if (!(mode_fraction > 0.0 && mode_fraction < 1.0))
        throw InvalidInputError("generate_tightmode: mode_fraction must be in (0,1)");
    const int64_t n = classes * per_class, hw = image_size;
    Dataset d;
    d.kind = "tightmode";
    d.images = Tensor({n, 3, hw, hw});
    d.labels.resize(n);
    d.ids.resize(n);
    d.tight_mode.assign(size_t(n), 0);
    Rng rng(seed);
    const int64_t mode_count = int64_t(mode_fraction * double(per_class));
    for (int64_t c = 0; c < classes; ++c) {
        // one fixed low-frequency layout per class for the tight mode
        Rng base_rng(seed ^ (0x5deece66dull * uint64_t(c + 1)));
        Tensor base({1, 3, hw, hw});
        {
            Tensor tmp = base;
            paint_blobs(tmp, 0, hw, base_rng, 4);
            base = tmp;
        }
        for (int64_t s = 0; s < per_class; ++s) {
            int64_t idx = c * per_class + s;
            d.labels[idx] = int(c);
            d.ids[idx] = idx;
            if (s < mode_count) {
                d.tight_mode[idx] = 1;
                std::copy(base.ptr(), base.ptr() + 3 * hw * hw,
                          d.images.ptr() + idx * 3 * hw * hw);
                add_texture(d.images, idx, hw, rng, 0.45);
            } else {
                paint_blobs(d.images, idx, hw, rng, 4);
                add_texture(d.images, idx, hw, rng, 0.08);
            }
        }
    }
    return d;
}

void save_dataset(const Dataset& d, const std::string& dir, bool write_pngs) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    save_raw_f32((fs::path(dir) / "images.f32").string(), d.images);
    nlohmann::json manifest = {
        {"version", 1},
        {"kind", d.kind},
        {"count", d.size()},
        {"channels", d.channels()},
        {"image_size", d.image_size()},
        {"classes", d.labels.empty() ? 0 : *std::max_element(d.labels.begin(),
                                                             d.labels.end()) + 1},
        {"ids", d.ids},
        {"labels", d.labels},
    };
    if (!d.tight_mode.empty()) {
        std::vector<int> flags(d.tight_mode.begin(), d.tight_mode.end());
        manifest["tight_mode"] = flags;
    }
    std::ofstream mf(fs::path(dir) / "labels.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw IoError("cannot write labels.json in " + dir);
    if (write_pngs) {
        fs::create_directories(fs::path(dir) / "png");
        const int64_t hw = d.image_size(), c = d.channels();
        for (int64_t i = 0; i < d.size(); ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "img_%06lld_c%02d.png",
                          static_cast<long long>(d.ids[i]), d.labels[i]);
            auto rgb = to_rgb8(d.images.ptr() + i * c * hw * hw, c, hw, hw);
            write_png_rgb((fs::path(dir) / "png" / name).string(), rgb, hw, hw);
        }
    }
}

Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "labels.json");
    if (!mf) throw IoError("missing labels.json in " + dir);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed labels.json: " + std::string(e.what()));
    }
    Dataset d;
    d.kind = manifest.value("kind", "shapes");
    int64_t n = manifest.at("count").get<int64_t>();
    int64_t c = manifest.at("channels").get<int64_t>();
    int64_t hw = manifest.at("image_size").get<int64_t>();
    d.images = load_raw_f32((fs::path(dir) / "images.f32").string(), {n, c, hw, hw});
    d.ids    = manifest.at("ids").get<std::vector<int64_t>>();
    d.labels = manifest.at("labels").get<std::vector<int>>();
    if (manifest.contains("tight_mode")) {
        auto flags = manifest.at("tight_mode").get<std::vector<int>>();
        d.tight_mode.assign(flags.begin(), flags.end());
    }
    if (int64_t(d.ids.size()) != n || int64_t(d.labels.size()) != n)
        throw IoError("labels.json does not match image count in " + dir);
    return d;
}

Tensor gather_images(const Dataset& d, const std::vector<int64_t>& indices) {
    const int64_t c = d.channels(), hw = d.image_size();
    const int64_t per = c * hw * hw;
    Tensor out({int64_t(indices.size()), c, hw, hw});
    for (size_t i = 0; i < indices.size(); ++i) {
        int64_t idx = indices[i];
        if (idx < 0 || idx >= d.size())
            throw InvalidInputError("gather_images: index out of range");
        std::copy(d.images.ptr() + idx * per, d.images.ptr() + (idx + 1) * per,
                  out.ptr() + int64_t(i) * per);
    }
    return out;
}

}  // namespace pixdit
