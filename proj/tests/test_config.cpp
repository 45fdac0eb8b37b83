// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "pixdit/config.hpp"

using namespace pixdit;

TEST_CASE("config parses, canonicalizes and round-trips") {
    std::string text = R"(
# comment
[model]
depth = 4            # trailing comment
hidden_dim = 64
[train]
lr = 2e-4
ema_decays = [0.9996, 0.9998, 0.9999]
seed = 7
[alignment]
variant = "mta"
mask_ratio = 0.2
)";
    RunConfig cfg = parse_run_config(text);
    CHECK(cfg.model.depth == 4);
    CHECK(cfg.train.lr == doctest::Approx(2e-4));
    CHECK(cfg.train.seed == 7);
    CHECK(cfg.alignment.variant == "mta");

    std::string canon = cfg.canonical();
    RunConfig cfg2 = parse_run_config(canon);
    CHECK(cfg2.canonical() == canon);
    CHECK(cfg2.hash() == cfg.hash());
}

TEST_CASE("hash stable under key reordering") {
    RunConfig a = parse_run_config("[model]\ndepth = 5\nhidden_dim = 64\n");
    RunConfig b = parse_run_config("[model]\nhidden_dim = 64\ndepth = 5\n");
    CHECK(a.hash() == b.hash());
    RunConfig c = parse_run_config("[model]\ndepth = 6\nhidden_dim = 64\n");
    CHECK(a.hash() != c.hash());
}

TEST_CASE("unknown keys and sections rejected with line info") {
    CHECK_THROWS_WITH_AS(parse_run_config("[model]\nbogus = 3\n"),
                         doctest::Contains("line 2"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[nosuch]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("stray = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[model]\ndepth = 4\ndepth = 5\n"), ConfigError);
}

TEST_CASE("validation enforces module invariants") {
    CHECK_THROWS_AS(parse_run_config("[model]\nimage_size = 30\npatch_size = 4\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[model]\nin_context_start_block = 9\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[model]\nhidden_dim = 66\nheads = 4\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[train]\nlr = 0.0\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[alignment]\nvariant = \"mlp\"\nlambda = 0.0\n"),
                    ConfigError);
    CHECK_THROWS_AS(parse_run_config("[alignment]\nmask_ratio = 1.0\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[sampler]\ninterval_lo = 0.5\ninterval_hi = 0.2\n"),
                    ConfigError);
}

TEST_CASE("override semantics") {
    RunConfig cfg;
    apply_override(cfg, "alignment.variant=\"mta\"");
    CHECK(cfg.alignment.variant == "mta");
    apply_override(cfg, "train.lr=1e-3");
    CHECK(cfg.train.lr == doctest::Approx(1e-3));
    CHECK_THROWS_AS(apply_override(cfg, "model.nope=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "garbage"), ConfigError);
}

TEST_CASE("alignment depth default mirrors the start block rule") {
    RunConfig cfg;
    CHECK(cfg.model.alignment_depth == cfg.model.in_context_start_block - 1);
}
