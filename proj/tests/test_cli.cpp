// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0

// In-process CLI round trips: dataset generation, training, sampling,
// analysis modes, dry runs and error exit codes.

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "pixdit/cli.hpp"
#include "pixdit/dataset.hpp"
#include "pixdit/feature_store.hpp"

using namespace pixdit;
namespace fs = std::filesystem;

namespace {

struct TempTree {
    fs::path root;
    TempTree() : root(fs::temp_directory_path() / "pixdit_cli_test") {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~TempTree() { fs::remove_all(root); }
    std::string operator/(const std::string& s) const { return (root / s).string(); }
};

void write_config(const std::string& path, const std::string& data_dir) {
    std::ofstream f(path);
    f << "[model]\nimage_size = 24\nnum_classes = 3\n"
      << "[train]\nsteps = 4\nbatch_size = 6\nseed = 2\ncheckpoint_every = 4\n"
      << "[alignment]\nvariant = \"mlp\"\n"
      << "[data]\ndir = \"" << data_dir << "\"\n";
}

}  // namespace

TEST_CASE("cli: make-dataset, train, sample, analyze round trip") {
    TempTree tmp;
    CHECK(run_cli({"make-dataset", "--kind", "shapes", "--out", tmp / "ds", "--seed", "4",
                   "--classes", "3", "--per-class", "6", "--image-size", "24",
                   "--features"}) == 0);
    CHECK(fs::exists(tmp.root / "ds" / "labels.json"));
    CHECK(fs::exists(tmp.root / "ds" / "images.f32"));
    CHECK(fs::exists(tmp.root / "ds" / "features" / "index.json"));
    {
        FeatureStore store((tmp.root / "ds" / "features").string());
        CHECK(store.size() == 18);
    }

    write_config(tmp / "run.toml", tmp / "ds");
    CHECK(run_cli({"train", "--config", tmp / "run.toml", "--run-dir", tmp / "run"}) == 0);
    CHECK(fs::exists(tmp.root / "run" / "metrics.jsonl"));
    CHECK(fs::exists(tmp.root / "run" / "config.canonical"));
    auto ckpt = tmp / "run/checkpoints/step_000004.ckpt";
    CHECK(fs::exists(ckpt));

    CHECK(run_cli({"sample", "--checkpoint", ckpt, "--steps", "6", "--seed", "1", "--out",
                   tmp / "smp", "--classes", "0,1,2"}) == 0);
    CHECK(fs::exists(tmp.root / "smp" / "samples_seed1.png"));
    CHECK(fs::exists(tmp.root / "smp" / "samples_seed1.f32"));
    CHECK(fs::exists(tmp.root / "smp" / "samples_seed1.json"));

    CHECK(run_cli({"analyze", "centroids", "--config", tmp / "run.toml", "--out",
                   tmp / "rep"}) == 0);
    CHECK(fs::exists(tmp.root / "rep" / "subsets_class0.csv"));
    CHECK(fs::exists(tmp.root / "rep" / "subsets_class2.csv"));

    CHECK(run_cli({"analyze", "centroids", "--config", tmp / "run.toml", "--features",
                   tmp / "ds/features", "--out", tmp / "rep_fs"}) == 0);
    CHECK(fs::exists(tmp.root / "rep_fs" / "subsets_class0.csv"));

    CHECK(run_cli({"analyze", "denoise-probe", "--checkpoint", ckpt, "--t0", "0.2", "--out",
                   tmp / "probe"}) == 0);
    CHECK(fs::exists(tmp.root / "probe" / "denoise_probe.csv"));
    CHECK(fs::exists(tmp.root / "probe" / "probe_denoised.png"));
}

TEST_CASE("cli: dry run prints the canonical config and exit codes are mapped") {
    TempTree tmp;
    write_config(tmp / "run.toml", "");
    CHECK(run_cli({"train", "--config", tmp / "run.toml", "--dry-run"}) == 0);
    // unknown key -> config error -> exit 1
    {
        std::ofstream f(tmp / "bad.toml");
        f << "[model]\nbogus = 1\n";
    }
    CHECK(run_cli({"train", "--config", tmp / "bad.toml"}) == 1);
    // missing checkpoint -> runtime failure -> exit 2
    CHECK(run_cli({"sample", "--checkpoint", tmp / "nope.ckpt"}) == 2);
    // bad usage -> 1
    CHECK(run_cli({"analyze", "nosuchmode", "--config", tmp / "run.toml"}) == 1);
    CHECK(run_cli({"make-dataset", "--kind", "nope", "--out", tmp / "x"}) == 1);
    // override applies
    CHECK(run_cli({"train", "--config", tmp / "run.toml", "--set",
                   "alignment.variant=mta", "--dry-run"}) == 0);
}
