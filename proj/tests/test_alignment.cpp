// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pixdit/alignment.hpp"
#include "pixdit/model.hpp"

using namespace pixdit;

namespace {

ModelConfig tiny_model() {
    ModelConfig m;
    m.image_size = 8;
    m.patch_size = 4;
    m.depth      = 3;
    m.hidden_dim = 8;
    m.heads      = 2;
    m.num_classes = 3;
    m.in_context_tokens      = 2;
    m.in_context_start_block = 2;
    m.alignment_depth        = 1;
    m.mlp_ratio = 2;
    return m;
}

AlignmentConfig tiny_align(const std::string& variant) {
    AlignmentConfig a;
    a.variant = variant;
    a.feature_dim = 3;
    a.encoder = "lossy-pool";
    a.pool_grid = 2;
    a.mask_ratio = 0.25;
    return a;
}

template <typename T>
TensorT<T> rand_tensor(Rng& rng, std::vector<int64_t> shape, double std = 1.0) {
    TensorT<T> t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.normal() * std);
    return t;
}

template <typename T>
TokenGridT<T> make_grid(Rng& rng, int64_t b, int64_t g, int64_t d) {
    TokenGridT<T> h;
    h.grid_rows = g;
    h.grid_cols = g;
    h.n_ctx     = 0;
    h.tokens    = rand_tensor<T>(rng, {b, g * g, d});
    return h;
}

}  // namespace

TEST_CASE("sample_mask: exact counts, no-mask case, domain error, uniformity") {
    Rng rng(1);
    auto m = sample_mask(3, 10, 0.2, rng);
    for (int64_t b = 0; b < 3; ++b) {
        int64_t count = 0;
        for (int64_t p = 0; p < 10; ++p) count += m.masked(b, p) ? 1 : 0;
        CHECK(count == 2);
    }
    auto m0 = sample_mask(2, 10, 0.0, rng);
    for (auto bit : m0.bits) CHECK(bit == 0);
    CHECK_THROWS_AS(sample_mask(2, 10, 1.0, rng), DomainError);

    // sweep: floor(r * n) for every (r, n) pair
    for (double r : {0.1, 0.2, 0.3333, 0.5, 0.9})
        for (int64_t n : {4, 10, 16, 64, 99}) {
            auto mm = sample_mask(2, n, r, rng);
            CHECK(mm.masked_per_sample() == int64_t(r * double(n)));
            for (int64_t b = 0; b < 2; ++b) {
                int64_t c = 0;
                for (int64_t p = 0; p < n; ++p) c += mm.masked(b, p) ? 1 : 0;
                CHECK(c == mm.masked_per_sample());
            }
        }

    Rng u(99);
    std::vector<int64_t> hits(10, 0);
    const int64_t draws = 10000;
    for (int64_t i = 0; i < draws; ++i) {
        auto mu = sample_mask(1, 10, 0.2, u);
        for (int64_t p = 0; p < 10; ++p) hits[p] += mu.masked(0, p) ? 1 : 0;
    }
    for (int64_t p = 0; p < 10; ++p) {
        double freq = double(hits[p]) / double(draws);
        CHECK(std::fabs(freq - 0.2) < 0.01);
    }
}

TEST_CASE("apply_mask: identity, zeroing, mismatch error") {
    Rng rng(2);
    auto h = make_grid<double>(rng, 2, 2, 5);
    PatchMask none;
    none.batch = 2;
    none.n_patch = 4;
    none.ratio = 0.0;
    none.bits.assign(8, 0);
    auto same = apply_mask(h, none);
    CHECK(same.data == h.tokens.data);

    PatchMask all = none;
    all.bits.assign(8, 1);
    auto zero = apply_mask(h, all);
    for (int64_t i = 0; i < zero.numel(); ++i) CHECK(zero[i] == 0.0);

    PatchMask wrong = none;
    wrong.n_patch = 3;
    wrong.bits.assign(6, 0);
    CHECK_THROWS_AS(apply_mask(h, wrong), InvalidInputError);

    SUBCASE("masking bottleneck: nonzero token count is n - floor(r n)") {
        Rng r2(3);
        auto m = sample_mask(2, 4, 0.5, r2);
        auto masked = apply_mask(h, m);
        for (int64_t b = 0; b < 2; ++b) {
            int64_t nonzero = 0;
            for (int64_t p = 0; p < 4; ++p) {
                bool any = false;
                for (int64_t j = 0; j < 5; ++j)
                    if (masked[(b * 4 + p) * 5 + j] != 0.0) any = true;
                nonzero += any ? 1 : 0;
            }
            CHECK(nonzero == 4 - m.masked_per_sample());
        }
    }
}

TEST_CASE("alignment_loss: exact constructions, bounds, scale invariance") {
    Rng rng(4);
    auto t = rand_tensor<double>(rng, {2, 6, 4});
    // the eps-stabilized norms keep |sim| strictly below 1 by ~2e-8
    CHECK(std::fabs(alignment_loss(t, t) - (-1.0)) < 1e-6);
    TensorT<double> neg(t.shape);
    for (int64_t i = 0; i < t.numel(); ++i) neg[i] = -t[i];
    CHECK(std::fabs(alignment_loss(t, neg) - 1.0) < 1e-6);

    // orthogonal at every position
    TensorT<double> a({1, 2, 2}), b({1, 2, 2});
    a[0] = 1; a[1] = 0; a[2] = 0; a[3] = 2;
    b[0] = 0; b[1] = 3; b[2] = -1; b[3] = 0;
    CHECK(alignment_loss(a, b) == doctest::Approx(0.0).epsilon(1e-12));

    for (int rep = 0; rep < 200; ++rep) {
        auto u = rand_tensor<double>(rng, {3, 4, 5});
        auto v = rand_tensor<double>(rng, {3, 4, 5});
        double l = alignment_loss(u, v);
        CHECK(l >= -1.0);
        CHECK(l <= 1.0);
        for (double c : {0.3, 2.0, 7.5}) {
            TensorT<double> vs(v.shape);
            for (int64_t i = 0; i < v.numel(); ++i) vs[i] = c * v[i];
            CHECK(std::fabs(alignment_loss(u, vs) - l) < 1e-6);
        }
    }
}

TEST_CASE("total_loss arithmetic and config error") {
    CHECK(total_loss(1.0, -1.0, 0.1, true) == doctest::Approx(0.9));
    CHECK(total_loss(2.5, 123.0, 0.1, false) == 2.5);
    CHECK_THROWS_AS(total_loss(1.0, 0.0, 0.0, true), ConfigError);
    CHECK_THROWS_AS(total_loss(1.0, 0.0, -0.5, true), ConfigError);
}

TEST_CASE("mlp head: token-wise map, equal tokens, loop oracle, variant guard") {
    auto mcfg = tiny_model();
    auto acfg = tiny_align("mlp");
    AlignmentBranch<double> branch(acfg, mcfg);
    Rng rng(7);
    ParamMap<double> params;
    branch.init_params(params, rng);

    const int64_t b = 2, g = 2, d = mcfg.hidden_dim, f = acfg.feature_dim;
    auto h = make_grid<double>(rng, b, g, d);
    // two equal tokens
    std::copy(h.tokens.ptr(), h.tokens.ptr() + d, h.tokens.ptr() + 2 * d);

    typename AlignmentBranch<double>::Acts acts;
    auto preds = branch.mlp_forward(params, h, acts);
    CHECK(preds.shape == std::vector<int64_t>{b, g * g, f});
    for (int64_t j = 0; j < f; ++j) CHECK(preds[j] == preds[2 * f + j]);

    // scalar per-token oracle
    auto silu = [](double x) { return x / (1.0 + std::exp(-x)); };
    const auto& w1 = params.at("align.mlp.fc1.w");
    const auto& b1 = params.at("align.mlp.fc1.b");
    const auto& w2 = params.at("align.mlp.fc2.w");
    const auto& b2 = params.at("align.mlp.fc2.b");
    const auto& w3 = params.at("align.mlp.fc3.w");
    const auto& b3 = params.at("align.mlp.fc3.b");
    for (int64_t tok = 0; tok < b * g * g; ++tok) {
        std::vector<double> h1(d), a1(d), h2(d), a2(d), out(f);
        for (int64_t j = 0; j < d; ++j) {
            double acc = b1[j];
            for (int64_t i = 0; i < d; ++i) acc += h.tokens[tok * d + i] * w1[i * d + j];
            h1[j] = acc;
            a1[j] = silu(acc);
        }
        for (int64_t j = 0; j < d; ++j) {
            double acc = b2[j];
            for (int64_t i = 0; i < d; ++i) acc += a1[i] * w2[i * d + j];
            a2[j] = silu(acc);
        }
        for (int64_t j = 0; j < f; ++j) {
            double acc = b3[j];
            for (int64_t i = 0; i < d; ++i) acc += a2[i] * w3[i * f + j];
            out[j] = acc;
        }
        for (int64_t j = 0; j < f; ++j)
            CHECK(preds[tok * f + j] == doctest::Approx(out[j]).epsilon(1e-10));
    }

    PatchMask m = sample_mask(b, g * g, 0.25, rng);
    CHECK_THROWS_AS(branch.mta_forward(params, h, rand_tensor<double>(rng, {b, d}), m, acts),
                    UsageError);
}

TEST_CASE("mta head: shape, identity-at-init projection, masked gradient is exactly zero") {
    auto mcfg = tiny_model();
    auto acfg = tiny_align("mta");
    AlignmentBranch<double> branch(acfg, mcfg);
    Rng rng(9);
    ParamMap<double> params;
    branch.init_params(params, rng);

    const int64_t b = 2, g = 2, np = g * g, d = mcfg.hidden_dim, f = acfg.feature_dim;
    auto h = make_grid<double>(rng, b, g, d);
    auto scond = rand_tensor<double>(rng, {b, d});
    PatchMask mask = sample_mask(b, np, 0.25, rng);

    typename AlignmentBranch<double>::Acts acts;
    auto preds = branch.mta_forward(params, h, scond, mask, acts);
    CHECK(preds.shape == std::vector<int64_t>{b, np, f});

    // zero-gate init: adapter blocks are identities, so preds are the linear
    // projection of the masked tokens
    auto masked = apply_mask(h, mask);
    const auto& w = params.at("align.mta.proj.w");
    const auto& bb = params.at("align.mta.proj.b");
    for (int64_t tok = 0; tok < b * np; ++tok)
        for (int64_t j = 0; j < f; ++j) {
            double acc = bb[j];
            for (int64_t i = 0; i < d; ++i) acc += masked[tok * d + i] * w[i * f + j];
            CHECK(preds[tok * f + j] == doctest::Approx(acc).epsilon(1e-10));
        }

    // gradient through the zeroing path is exactly zero at masked positions
    auto targets = rand_tensor<double>(rng, {b, np, f});
    typename AlignmentBranch<double>::Acts acts2;
    branch.loss_forward(params, h, scond, targets, &mask, acts2);
    ParamMap<double> grads;
    for (const auto& [k, v] : params) grads[k] = TensorT<double>(v.shape);
    TensorT<double> dh, dscond({b, d});
    branch.loss_backward(params, acts2, 1.0, dh, dscond, grads);
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t p = 0; p < np; ++p)
            if (mask.masked(bi, p))
                for (int64_t j = 0; j < d; ++j) CHECK(dh[(bi * np + p) * d + j] == 0.0);

    CHECK_THROWS_AS(branch.mlp_forward(params, h, acts), UsageError);
}

TEST_CASE("mta predictions at masked positions depend on the visible tokens") {
    // all tokens masked except one; once the gates are non-degenerate the
    // attention path must carry signal from the visible token to every
    // masked prediction
    auto mcfg = tiny_model();
    auto acfg = tiny_align("mta");
    AlignmentBranch<double> branch(acfg, mcfg);
    Rng rng(77);
    ParamMap<double> params;
    branch.init_params(params, rng);
    for (auto& [k, v] : params)  // simulate a post-update state: nonzero gates
        for (int64_t i = 0; i < v.numel(); ++i) v[i] = rng.normal() * 0.2;

    const int64_t b = 1, np = 4, d = mcfg.hidden_dim, f = acfg.feature_dim;
    auto h = make_grid<double>(rng, b, 2, d);
    auto scond = rand_tensor<double>(rng, {b, d});
    PatchMask mask;
    mask.batch = b;
    mask.n_patch = np;
    mask.ratio = 0.75;
    mask.bits = {1, 1, 0, 1};  // only token 2 visible

    typename AlignmentBranch<double>::Acts acts;
    auto base = branch.mta_forward(params, h, scond, mask, acts);
    // perturb the visible token, predictions at a masked position move
    const int64_t visible = 2, masked_pos = 0;
    h.tokens[visible * d + 1] += 0.05;
    typename AlignmentBranch<double>::Acts acts2;
    auto moved = branch.mta_forward(params, h, scond, mask, acts2);
    double delta = 0;
    for (int64_t j = 0; j < f; ++j)
        delta += std::fabs(moved[masked_pos * f + j] - base[masked_pos * f + j]);
    CHECK(delta > 1e-6);
}

TEST_CASE("branch loss gradients match finite differences (both variants)") {
    auto mcfg = tiny_model();
    for (const char* variant : {"mlp", "mta"}) {
        CAPTURE(variant);
        auto acfg = tiny_align(variant);
        AlignmentBranch<double> branch(acfg, mcfg);
        Rng rng(11);
        ParamMap<double> params;
        branch.init_params(params, rng);
        for (auto& [k, v] : params)  // randomize the zero-init pieces too
            for (int64_t i = 0; i < v.numel(); ++i) v[i] = rng.normal() * 0.08;

        const int64_t b = 2, g = 2, np = g * g, d = mcfg.hidden_dim;
        auto h = make_grid<double>(rng, b, g, d);
        auto scond = rand_tensor<double>(rng, {b, d});
        auto targets = rand_tensor<double>(rng, {b, np, acfg.feature_dim});
        PatchMask mask = sample_mask(b, np, 0.25, rng);

        auto objective = [&](const ParamMap<double>& p, const TokenGridT<double>& hh) {
            typename AlignmentBranch<double>::Acts a;
            return branch.loss_forward(p, hh, scond, targets, &mask, a);
        };

        typename AlignmentBranch<double>::Acts acts;
        branch.loss_forward(params, h, scond, targets, &mask, acts);
        ParamMap<double> grads;
        for (const auto& [k, v] : params) grads[k] = TensorT<double>(v.shape);
        TensorT<double> dh, dscond({b, d});
        branch.loss_backward(params, acts, 1.0, dh, dscond, grads);

        const double step = 1e-6;
        for (auto& [name, tensor] : params)
            for (int64_t idx : {int64_t(0), tensor.numel() / 2}) {
                double keep = tensor[idx];
                tensor[idx] = keep + step;
                double up = objective(params, h);
                tensor[idx] = keep - step;
                double dn = objective(params, h);
                tensor[idx] = keep;
                double want = (up - dn) / (2 * step);
                double got  = grads.at(name)[idx];
                double scale = std::max({std::fabs(want), std::fabs(got), 1e-7});
                INFO(name, "[", idx, "]");
                CHECK(std::fabs(want - got) / scale < 1e-4);
            }
        // input gradient
        for (int64_t idx : {int64_t(0), h.tokens.numel() / 3, h.tokens.numel() - 1}) {
            double keep = h.tokens[idx];
            h.tokens[idx] = keep + step;
            double up = objective(params, h);
            h.tokens[idx] = keep - step;
            double dn = objective(params, h);
            h.tokens[idx] = keep;
            double want = (up - dn) / (2 * step);
            double scale = std::max({std::fabs(want), std::fabs(dh[idx]), 1e-7});
            CHECK(std::fabs(want - dh[idx]) / scale < 1e-4);
        }
    }
}

TEST_CASE("encoders: determinism, pooling a constant, grid resample") {
    auto mcfg = tiny_model();
    mcfg.image_size = 8;
    auto acfg = tiny_align("mlp");

    SUBCASE("lossy-pool maps a constant image to equal patch features") {
        LossyPoolEncoder<double> enc(acfg, mcfg);
        TensorT<double> img({1, 3, 8, 8});
        for (int64_t i = 0; i < img.numel(); ++i)
            img[i] = (i / 64) == 0 ? 0.25 : ((i / 64) == 1 ? -0.5 : 0.75);
        auto feats = enc.encode(img, {});
        const int64_t f = enc.feature_dim();
        for (int64_t cell = 1; cell < enc.grid_rows() * enc.grid_cols(); ++cell)
            for (int64_t j = 0; j < f; ++j)
                CHECK(feats[cell * f + j] == doctest::Approx(feats[j]).epsilon(1e-9));
    }

    SUBCASE("frozen-random-vit is deterministic and frozen") {
        acfg.encoder = "frozen-random-vit";
        acfg.encoder_patch = 4;
        acfg.encoder_hidden = 8;
        acfg.encoder_heads = 2;
        acfg.encoder_depth = 2;
        FrozenRandomVit<double> enc(acfg, mcfg);
        Rng rng(5);
        auto img = rand_tensor<double>(rng, {2, 3, 8, 8});
        auto f1 = enc.encode(img, {});
        auto f2 = enc.encode(img, {});
        CHECK(f1.data == f2.data);
        CHECK(f1.shape == std::vector<int64_t>{2, 4, acfg.feature_dim});
        // same seed, fresh instance: identical weights
        FrozenRandomVit<double> enc2(acfg, mcfg);
        auto f3 = enc2.encode(img, {});
        CHECK(f1.data == f3.data);
    }

    SUBCASE("encode_target resamples the encoder grid onto the backbone grid") {
        LossyPoolEncoder<double> enc(acfg, mcfg);  // 2x2 grid
        Rng rng(6);
        auto img = rand_tensor<double>(rng, {2, 3, 8, 8});
        auto t = encode_target(img, {}, enc, 2, 2);
        CHECK(t.shape == std::vector<int64_t>{2, 4, acfg.feature_dim});
        auto t2 = encode_target(img, {}, enc, 4, 4);
        CHECK(t2.shape == std::vector<int64_t>{2, 16, acfg.feature_dim});
        // corners of the upsampled grid equal the source corners
        const int64_t f = acfg.feature_dim;
        for (int64_t j = 0; j < f; ++j) {
            CHECK(t2[0 * f + j] == doctest::Approx(t[0 * f + j]));
            CHECK(t2[3 * f + j] == doctest::Approx(t[1 * f + j]));
            CHECK(t2[12 * f + j] == doctest::Approx(t[2 * f + j]));
            CHECK(t2[15 * f + j] == doctest::Approx(t[3 * f + j]));
        }
    }
}

TEST_CASE("feature store: round trip, unknown id, corruption") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "pixdit_fs_test";
    fs::remove_all(dir);
    Rng rng(8);
    Tensor feats({5, 6, 3});
    for (int64_t i = 0; i < feats.numel(); ++i) feats[i] = float(rng.normal());
    std::vector<int64_t> ids = {10, 11, 12, 20, 21};
    FeatureStore::write(dir.string(), ids, feats, 2, 3, 2);  // three shards

    FeatureStore store(dir.string());
    CHECK(store.size() == 5);
    CHECK(store.rows() == 2);
    CHECK(store.cols() == 3);
    CHECK(store.feature_dim() == 3);
    auto got = store.gather({20, 10});
    for (int64_t j = 0; j < 18; ++j) {
        CHECK(got[j] == feats[3 * 18 + j]);
        CHECK(got[18 + j] == feats[j]);
    }
    CHECK_THROWS_AS(store.gather({99}), InvalidInputError);

    // truncate a shard
    {
        std::ofstream f(dir / "shard_0000.bin", std::ios::binary | std::ios::trunc);
        f << "PXFS";
    }
    CHECK_THROWS_AS(FeatureStore(dir.string()), IoError);
    fs::remove_all(dir);
}

TEST_CASE("branch isolation and lambda scaling through the combined loss") {
    RunConfig base;
    base.model = tiny_model();
    base.alignment = tiny_align("none");
    base.train.seed = 3;

    // shared backbone params; branch params added per variant
    Rng prng(42);
    DiffusionModel<double> m_none(base);
    auto params_backbone = Backbone<double>(base.model).init_params(prng);

    Rng drng(7);
    TensorT<double> x({2, 3, 8, 8});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = drng.uniform(-1.0, 1.0);
    std::vector<int> labels = {0, 2};
    StepDraws<double> draws;
    draws.t = {0.3, 0.7};
    draws.eps = rand_tensor<double>(drng, x.shape);
    draws.class_ids = labels;
    draws.mask = sample_mask(2, base.model.n_patch(), 0.25, drng);
    draws.has_mask = true;

    std::vector<TensorT<double>> xpreds;
    for (const char* variant : {"none", "mlp", "mta"}) {
        RunConfig cfg = base;
        cfg.alignment = tiny_align(variant);
        DiffusionModel<double> model(cfg);
        ParamMap<double> params = params_backbone;
        Rng br(100);
        model.branch().init_params(params, br);
        Tensor dummy;
        TensorT<double> targets;
        if (cfg.alignment.active()) {
            auto enc = make_encoder<double>(cfg.alignment, cfg.model);
            targets = encode_target(x, {}, *enc, cfg.model.grid(), cfg.model.grid());
        }
        typename Backbone<double>::Acts bacts;
        typename AlignmentBranch<double>::Acts aacts;
        model.compute_losses(params, x, targets, draws, bacts, aacts, nullptr);
        xpreds.push_back(bacts.x_pred);
    }
    CHECK(xpreds[0].data == xpreds[1].data);
    CHECK(xpreds[0].data == xpreds[2].data);

    SUBCASE("doubling lambda doubles adapter gradients exactly") {
        RunConfig cfg = base;
        cfg.alignment = tiny_align("mta");
        ParamMap<double> params = params_backbone;
        Rng br(100);
        auto enc = make_encoder<double>(cfg.alignment, cfg.model);
        auto targets = encode_target(x, {}, *enc, cfg.model.grid(), cfg.model.grid());

        auto grads_for = [&](double lambda) {
            RunConfig c2 = cfg;
            c2.alignment.lambda = lambda;
            DiffusionModel<double> model(c2);
            ParamMap<double> p = params;
            Rng br2(100);
            model.branch().init_params(p, br2);
            ParamMap<double> grads;
            for (const auto& [k, v] : p) grads[k] = TensorT<double>(v.shape);
            typename Backbone<double>::Acts bacts;
            typename AlignmentBranch<double>::Acts aacts;
            model.compute_losses(p, x, targets, draws, bacts, aacts, &grads);
            return grads;
        };
        auto g1 = grads_for(0.25);
        auto g2 = grads_for(0.5);
        for (const auto& [name, g] : g1) {
            if (name.rfind("align.", 0) != 0) continue;
            for (int64_t i = 0; i < g.numel(); ++i)
                CHECK(g2.at(name)[i] == 2.0 * g[i]);
        }
    }
}
