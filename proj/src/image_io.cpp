// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdit/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "pixdit/error.hpp"

namespace pixdit {

namespace {

void push_u32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(uint8_t(x >> 24));
    v.push_back(uint8_t(x >> 16));
    v.push_back(uint8_t(x >> 8));
    v.push_back(uint8_t(x));
}

void write_chunk(std::ofstream& f, const char type[4], const std::vector<uint8_t>& data) {
    std::vector<uint8_t> head;
    push_u32(head, uint32_t(data.size()));
    f.write(reinterpret_cast<const char*>(head.data()), 4);
    uint32_t crc = crc32(0, reinterpret_cast<const Bytef*>(type), 4);
    if (!data.empty()) crc = crc32(crc, data.data(), uInt(data.size()));
    f.write(type, 4);
    if (!data.empty()) f.write(reinterpret_cast<const char*>(data.data()),
                               std::streamsize(data.size()));
    std::vector<uint8_t> tail;
    push_u32(tail, crc);
    f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

std::vector<uint8_t> deflate_all(const std::vector<uint8_t>& raw) {
    uLongf bound = compressBound(uLong(raw.size()));
    std::vector<uint8_t> out(bound);
    if (compress2(out.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw IoError("png: deflate failed");
    out.resize(bound);
    return out;
}

// 3x5 glyphs for axis labels
const char* glyph(char c) {
    switch (c) {
        case '0': return "111101101101111";
        case '1': return "010110010010111";
        case '2': return "111001111100111";
        case '3': return "111001111001111";
        case '4': return "101101111001001";
        case '5': return "111100111001111";
        case '6': return "111100111101111";
        case '7': return "111001010010010";
        case '8': return "111101111101111";
        case '9': return "111101111001111";
        case '.': return "000000000000010";
        case '-': return "000000111000000";
        case '+': return "000010111010000";
        case '_': return "000000000000111";
        case 'a': return "000011101101011";
        case 'b': return "100100111101111";
        case 'c': return "000011100100011";
        case 'd': return "001001011101011";
        case 'e': return "000010101110011";
        case 'f': return "001010111010010";
        case 'g': return "011101011001110";
        case 'h': return "100100111101101";
        case 'i': return "010000010010010";
        case 'j': return "001000001001110";
        case 'k': return "100101110101101";
        case 'l': return "010010010010001";
        case 'm': return "000000111111101";
        case 'n': return "000000110101101";
        case 'o': return "000010101101010";
        case 'p': return "000111101111100";
        case 'q': return "000111101111001";
        case 'r': return "000000110100100";
        case 's': return "000011110011110";
        case 't': return "010111010010001";
        case 'u': return "000000101101011";
        case 'v': return "000000101101010";
        case 'w': return "000000101111111";
        case 'x': return "000000101010101";
        case 'y': return "000101011001110";
        case 'z': return "000111001010111";
        default: return "000000000000000";
    }
}

void draw_text(std::vector<uint8_t>& rgb, int64_t w, int64_t h, int64_t x0, int64_t y0,
               const std::string& s, const uint8_t color[3]) {
    for (size_t i = 0; i < s.size(); ++i) {
        const char* g = glyph(s[i]);
        for (int gy = 0; gy < 5; ++gy)
            for (int gx = 0; gx < 3; ++gx)
                if (g[gy * 3 + gx] == '1') {
                    int64_t x = x0 + int64_t(i) * 4 + gx, y = y0 + gy;
                    if (x >= 0 && x < w && y >= 0 && y < h)
                        std::memcpy(&rgb[(y * w + x) * 3], color, 3);
                }
    }
}

void draw_line(std::vector<uint8_t>& rgb, int64_t w, int64_t h, double x0, double y0,
               double x1, double y1, const uint8_t color[3]) {
    double dx = x1 - x0, dy = y1 - y0;
    int64_t n = int64_t(std::max(std::fabs(dx), std::fabs(dy))) + 1;
    for (int64_t i = 0; i <= n; ++i) {
        int64_t x = int64_t(std::lround(x0 + dx * double(i) / double(n)));
        int64_t y = int64_t(std::lround(y0 + dy * double(i) / double(n)));
        if (x >= 0 && x < w && y >= 0 && y < h) std::memcpy(&rgb[(y * w + x) * 3], color, 3);
    }
}

std::string fmt_tick(double v) {
    char buf[32];
    double a = std::fabs(v);
    if (v != 0.0 && (a >= 1e4 || a < 1e-2))
        std::snprintf(buf, sizeof(buf), "%.1e", v);
    else
        std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

}  // namespace

void write_png_rgb(const std::string& path, const std::vector<uint8_t>& rgb, int64_t w,
                   int64_t h) {
    if (int64_t(rgb.size()) != w * h * 3) throw InvalidInputError("write_png_rgb: bad buffer");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    f.write(reinterpret_cast<const char*>(sig), 8);
    std::vector<uint8_t> ihdr;
    push_u32(ihdr, uint32_t(w));
    push_u32(ihdr, uint32_t(h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(f, "IHDR", ihdr);
    std::vector<uint8_t> raw;
    raw.reserve(size_t(h * (w * 3 + 1)));
    for (int64_t y = 0; y < h; ++y) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), rgb.begin() + y * w * 3, rgb.begin() + (y + 1) * w * 3);
    }
    write_chunk(f, "IDAT", deflate_all(raw));
    write_chunk(f, "IEND", {});
    if (!f) throw IoError("short write: " + path);
}

std::vector<uint8_t> to_rgb8(const float* chw, int64_t c, int64_t h, int64_t w) {
    std::vector<uint8_t> rgb(size_t(w * h * 3));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t ch = 0; ch < 3; ++ch) {
                int64_t src = c >= 3 ? ch : 0;
                float v = chw[(src * h + y) * w + x];
                float u = (std::clamp(v, -1.0f, 1.0f) + 1.0f) * 0.5f * 255.0f;
                rgb[(y * w + x) * 3 + ch] = uint8_t(std::lround(u));
            }
    return rgb;
}

void write_image_grid_png(const std::string& path, const Tensor& images, int64_t cols) {
    if (images.ndim() != 4) throw InvalidInputError("write_image_grid_png: need [B,C,H,W]");
    const int64_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    cols = std::max<int64_t>(1, std::min(cols, b));
    const int64_t rows = (b + cols - 1) / cols, pad = 2;
    const int64_t gw = cols * (w + pad) + pad, gh = rows * (h + pad) + pad;
    std::vector<uint8_t> canvas(size_t(gw * gh * 3), 32);
    for (int64_t i = 0; i < b; ++i) {
        auto tile = to_rgb8(images.ptr() + i * c * h * w, c, h, w);
        int64_t r = i / cols, col = i % cols;
        int64_t y0 = pad + r * (h + pad), x0 = pad + col * (w + pad);
        for (int64_t y = 0; y < h; ++y)
            std::memcpy(&canvas[((y0 + y) * gw + x0) * 3], &tile[y * w * 3],
                        size_t(w * 3));
    }
    write_png_rgb(path, canvas, gw, gh);
}

void save_raw_f32(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(t.ptr()),
            std::streamsize(size_t(t.numel()) * sizeof(float)));
    if (!f) throw IoError("short write: " + path);
}

Tensor load_raw_f32(const std::string& path, const std::vector<int64_t>& shape) {
    Tensor t(shape);
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    f.read(reinterpret_cast<char*>(t.ptr()),
           std::streamsize(size_t(t.numel()) * sizeof(float)));
    if (size_t(f.gcount()) != size_t(t.numel()) * sizeof(float))
        throw IoError("truncated tensor file: " + path);
    return t;
}

void write_line_plot_png(const std::string& path, const std::vector<PlotSeries>& series,
                         const std::string& title, int64_t w, int64_t h) {
    const uint8_t black[3] = {20, 20, 20};
    const uint8_t grey[3] = {200, 200, 200};
    std::vector<uint8_t> rgb(size_t(w * h * 3), 255);
    const int64_t ml = 56, mr = 16, mt = 24, mb = 32;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (xmin > xmax) { xmin = 0; xmax = 1; }
    if (ymin > ymax) { ymin = 0; ymax = 1; }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + (std::fabs(ymin) > 0 ? std::fabs(ymin) * 0.1 : 1.0);
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * double(w - ml - mr); };
    auto py = [&](double y) {
        return double(h - mb) - (y - ymin) / (ymax - ymin) * double(h - mt - mb);
    };
    for (int i = 0; i <= 4; ++i) {
        double yv = ymin + (ymax - ymin) * i / 4.0;
        draw_line(rgb, w, h, ml, py(yv), w - mr, py(yv), grey);
        draw_text(rgb, w, h, 4, int64_t(py(yv)) - 2, fmt_tick(yv), black);
        double xv = xmin + (xmax - xmin) * i / 4.0;
        draw_line(rgb, w, h, px(xv), mt, px(xv), h - mb, grey);
        draw_text(rgb, w, h, int64_t(px(xv)) - 8, h - mb + 6, fmt_tick(xv), black);
    }
    draw_line(rgb, w, h, ml, mt, ml, h - mb, black);
    draw_line(rgb, w, h, ml, h - mb, w - mr, h - mb, black);
    draw_text(rgb, w, h, ml, 8, title, black);
    int64_t legend_y = mt + 6;
    for (const auto& s : series) {
        for (size_t i = 0; i + 1 < s.x.size(); ++i)
            draw_line(rgb, w, h, px(s.x[i]), py(s.y[i]), px(s.x[i + 1]), py(s.y[i + 1]),
                      s.rgb);
        draw_line(rgb, w, h, w - mr - 60, legend_y + 2, w - mr - 48, legend_y + 2, s.rgb);
        draw_text(rgb, w, h, w - mr - 44, legend_y, s.label, black);
        legend_y += 9;
    }
    write_png_rgb(path, rgb, w, h);
}

}  // namespace pixdit
