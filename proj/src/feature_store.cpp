// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdit/feature_store.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "pixdit/error.hpp"

namespace pixdit {

namespace {

constexpr char kMagic[4] = {'P', 'X', 'F', 'S'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<char*>(&v), 4); }
void write_u64(std::ofstream& f, uint64_t v) { f.write(reinterpret_cast<char*>(&v), 8); }

uint32_t read_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
uint64_t read_u64(std::ifstream& f) {
    uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

std::string shard_name(int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "shard_%04lld.bin", static_cast<long long>(i));
    return buf;
}

}  // namespace

void FeatureStore::write(const std::string& dir, const std::vector<int64_t>& ids,
                         const Tensor& feats, int64_t rows, int64_t cols, int64_t per_shard) {
    const int64_t n = static_cast<int64_t>(ids.size());
    if (feats.ndim() != 3 || feats.dim(0) != n || feats.dim(1) != rows * cols)
        throw InvalidInputError("FeatureStore::write: feature shape does not match index");
    const int64_t fdim = feats.dim(2);
    const int64_t grid = rows * cols * fdim;
    std::filesystem::create_directories(dir);

    nlohmann::json samples = nlohmann::json::object();
    std::vector<std::string> shard_files;
    for (int64_t s = 0, done = 0; done < n; ++s) {
        int64_t count = std::min<int64_t>(per_shard, n - done);
        std::string name = shard_name(s);
        std::ofstream f(std::filesystem::path(dir) / name, std::ios::binary);
        if (!f) throw IoError("FeatureStore::write: cannot open shard in " + dir);
        f.write(kMagic, 4);
        write_u32(f, kVersion);
        write_u64(f, uint64_t(count));
        write_u32(f, uint32_t(rows));
        write_u32(f, uint32_t(cols));
        write_u32(f, uint32_t(fdim));
        f.write(reinterpret_cast<const char*>(feats.ptr() + done * grid),
                std::streamsize(count * grid * sizeof(float)));
        if (!f) throw IoError("FeatureStore::write: short write in " + dir);
        for (int64_t i = 0; i < count; ++i)
            samples[std::to_string(ids[done + i])] = {s, i};
        shard_files.push_back(name);
        done += count;
    }
    nlohmann::json index = {{"version", kVersion},
                            {"rows", rows},
                            {"cols", cols},
                            {"feature_dim", fdim},
                            {"shards", shard_files},
                            {"samples", samples}};
    std::ofstream f(std::filesystem::path(dir) / "index.json");
    f << index.dump(2) << "\n";
    if (!f) throw IoError("FeatureStore::write: cannot write index.json");
}

FeatureStore::FeatureStore(const std::string& dir) {
    std::ifstream idx(std::filesystem::path(dir) / "index.json");
    if (!idx) throw IoError("FeatureStore: missing index.json in " + dir);
    nlohmann::json index;
    try {
        idx >> index;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("FeatureStore: malformed index.json: " + std::string(e.what()));
    }
    rows_ = index.at("rows").get<int64_t>();
    cols_ = index.at("cols").get<int64_t>();
    fdim_ = index.at("feature_dim").get<int64_t>();
    const int64_t grid = rows_ * cols_ * fdim_;
    for (const auto& name : index.at("shards")) {
        std::ifstream f(std::filesystem::path(dir) / name.get<std::string>(),
                        std::ios::binary);
        if (!f) throw IoError("FeatureStore: missing shard " + name.get<std::string>());
        char magic[4];
        f.read(magic, 4);
        if (std::memcmp(magic, kMagic, 4) != 0)
            throw IoError("FeatureStore: bad magic in " + name.get<std::string>());
        uint32_t version = read_u32(f);
        if (version != kVersion)
            throw IoError("FeatureStore: unsupported shard version " +
                          std::to_string(version));
        uint64_t count = read_u64(f);
        uint32_t r = read_u32(f), c = read_u32(f), fd = read_u32(f);
        if (int64_t(r) != rows_ || int64_t(c) != cols_ || int64_t(fd) != fdim_)
            throw IoError("FeatureStore: shard grid disagrees with index.json");
        std::vector<float> data(size_t(count) * grid);
        f.read(reinterpret_cast<char*>(data.data()),
               std::streamsize(data.size() * sizeof(float)));
        if (size_t(f.gcount()) != data.size() * sizeof(float))
            throw IoError("FeatureStore: truncated shard " + name.get<std::string>());
        shards_.push_back(std::move(data));
    }
    for (const auto& [key, loc] : index.at("samples").items()) {
        int64_t shard = loc.at(0).get<int64_t>();
        int64_t off   = loc.at(1).get<int64_t>();
        if (shard < 0 || shard >= int64_t(shards_.size()) ||
            off * grid + grid > int64_t(shards_[shard].size()))
            throw IoError("FeatureStore: index entry out of range for sample " + key);
        index_[std::stoll(key)] = {shard, off};
    }
}

Tensor FeatureStore::gather(const std::vector<int64_t>& ids) const {
    const int64_t grid = rows_ * cols_ * fdim_;
    Tensor out({int64_t(ids.size()), rows_ * cols_, fdim_});
    for (size_t i = 0; i < ids.size(); ++i) {
        auto it = index_.find(ids[i]);
        if (it == index_.end())
            throw InvalidInputError("FeatureStore: no features for sample id " +
                                    std::to_string(ids[i]));
        const auto& [shard, off] = it->second;
        std::copy(shards_[shard].begin() + off * grid,
                  shards_[shard].begin() + (off + 1) * grid, out.ptr() + int64_t(i) * grid);
    }
    return out;
}

}  // namespace pixdit
