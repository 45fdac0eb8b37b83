// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdit/verify.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "pixdit/analysis.hpp"
#include "pixdit/model.hpp"
#include "pixdit/sampler.hpp"
#include "pixdit/trainer.hpp"

namespace pixdit::verify {

namespace {

struct Failure {
    std::string msg;
};

void require(bool cond, const std::string& msg) {
    if (!cond) throw Failure{msg};
}

template <typename Fn>
CheckResult run_check(const std::string& name, Fn&& fn) {
    CheckResult r;
    r.name = name;
    auto t0 = std::chrono::steady_clock::now();
    try {
        fn();
        r.ok = true;
        r.detail = "ok";
    } catch (const Failure& f) {
        r.ok = false;
        r.detail = f.msg;
    } catch (const std::exception& e) {
        r.ok = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
               .count();
    return r;
}

ModelConfig verify_model() {
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

AlignmentConfig verify_align(const std::string& variant) {
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

}  // namespace

CheckResult check_flow_identities() {
    return run_check("flow identities (endpoints, x-pred consistency)", [] {
        Rng rng(101);
        for (int rep = 0; rep < 200; ++rep) {
            auto x   = rand_tensor<double>(rng, {8});
            auto eps = rand_tensor<double>(rng, {8});
            auto at0 = flow::interpolate(x, eps, 0.0);
            auto at1 = flow::interpolate(x, eps, 1.0);
            double t = rng.uniform() * (1.0 - flow::kTimeGuard);
            auto xt = flow::interpolate(x, eps, t);
            auto v1 = flow::xpred_to_velocity(x, xt, t);
            auto v2 = flow::target_velocity(x, eps);
            for (int64_t i = 0; i < 8; ++i) {
                require(at0[i] == eps[i] && at1[i] == x[i], "endpoint identity violated");
                double scale = std::max(1.0, std::fabs(v2[i]));
                require(std::fabs(v1[i] - v2[i]) / scale < 1e-10,
                        "x-pred/velocity consistency beyond 1e-10");
            }
        }
    });
}

CheckResult check_flow_loss_gradient() {
    return run_check("denoising loss gradient vs finite differences", [] {
        Rng rng(102);
        auto x     = rand_tensor<double>(rng, {2, 1, 2, 2});
        auto eps   = rand_tensor<double>(rng, {2, 1, 2, 2});
        auto x_pred = rand_tensor<double>(rng, {2, 1, 2, 2});
        std::vector<double> t = {0.3, 0.8};
        auto xt = flow::interpolate_batch(x, eps, t);
        auto g = flow::denoising_loss_grad(x_pred, xt, x, eps, t);
        const double h = 1e-5;
        for (int64_t i = 0; i < x_pred.numel(); ++i) {
            double keep = x_pred[i];
            x_pred[i] = keep + h;
            double up = flow::denoising_loss(x_pred, xt, x, eps, t);
            x_pred[i] = keep - h;
            double dn = flow::denoising_loss(x_pred, xt, x, eps, t);
            x_pred[i] = keep;
            double want = (up - dn) / (2 * h);
            double scale = std::max({std::fabs(want), std::fabs(g[i]), 1e-8});
            require(std::fabs(want - g[i]) / scale < 1e-4, "flow gradient off at index " +
                                                               std::to_string(i));
        }
    });
}

CheckResult check_integrator_exactness() {
    return run_check("Heun integrates constant fields exactly", [] {
        TensorT<double> x({1});
        x[0] = 0.0;
        const double c = 0.75, dt = 1.0 / 16.0;
        auto field = [&](const TensorT<double>&, double) {
            TensorT<double> v({1});
            v[0] = c;
            return v;
        };
        for (int k = 0; k < 16; ++k) x = heun_step(field, x, k * dt, dt);
        require(x[0] == c, "constant field not integrated exactly");
    });
}

CheckResult check_integrator_order() {
    return run_check("Heun global error is second order on x' = x", [] {
        auto field = [](const TensorT<double>& x, double) { return x; };
        auto integrate = [&](int64_t steps) {
            TensorT<double> cur({1});
            cur[0] = 1.0;
            double h = 1.0 / double(steps);
            for (int64_t k = 0; k < steps; ++k)
                cur = heun_step(field, cur, double(k) * h, h);
            return cur[0];
        };
        std::vector<double> errs, dts = {0.1, 0.05, 0.025, 0.0125};
        for (int64_t s : {10, 20, 40, 80})
            errs.push_back(std::fabs(integrate(s) - std::exp(1.0)));
        double n = 4, sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (size_t i = 0; i < errs.size(); ++i) {
            double lx = std::log(dts[i]), ly = std::log(errs[i]);
            sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly;
        }
        double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        std::ostringstream os;
        os << "slope " << slope << " outside [1.9, 2.1]";
        require(slope > 1.9 && slope < 2.1, os.str());
    });
}

CheckResult check_guidance(const GuidanceFn& combine) {
    return run_check("classifier-free guidance interval rules", [&] {
        Rng rng(103);
        auto vc = rand_tensor<double>(rng, {6});
        auto vu = rand_tensor<double>(rng, {6});
        auto w1 = combine(vc, vu, 1.0, 0.5, 0.1, 1.0);
        require(w1.data == vc.data, "w = 1 must return the conditional velocity unchanged");
        auto outside = combine(vc, vu, 2.0, 0.05, 0.1, 1.0);
        require(outside.data == vc.data, "guidance must be disabled outside the interval");
        auto inside = combine(vc, vu, 2.0, 0.5, 0.1, 1.0);
        for (int64_t i = 0; i < 6; ++i)
            require(std::fabs(inside[i] - (2 * vc[i] - vu[i])) < 1e-12,
                    "w = 2 inside the interval must give 2 v_cond - v_uncond");
    });
}

CheckResult check_adaln_identity() {
    return run_check("AdaLN-Zero blocks are identities at init", [] {
        auto cfg = verify_model();
        Backbone<double> net(cfg);
        Rng rng(104);
        auto params = net.init_params(rng);
        Backbone<double>::Acts a;
        std::vector<double> t = {0.2, 0.7};
        std::vector<int> ids = {0, 2};
        net.compute_conditioning(params, t, ids, a);
        a.tokens0 = rand_tensor<double>(rng, {2, cfg.n_patch(), cfg.hidden_dim});
        net.blocks_forward(params, a);
        const int64_t np = cfg.n_patch(), d = cfg.hidden_dim;
        for (int64_t bi = 0; bi < 2; ++bi)
            for (int64_t i = 0; i < np * d; ++i)
                require(a.x_last[bi * a.x_last.dim(1) * d + i] == a.tokens0[bi * np * d + i],
                        "block stack moved tokens at init");
    });
}

CheckResult check_backbone_gradients() {
    return run_check("backbone backward vs finite differences", [] {
        auto cfg = verify_model();
        Backbone<double> net(cfg);
        Rng rng(105);
        auto params = net.init_params(rng);
        for (auto& [k, v] : params)
            for (int64_t i = 0; i < v.numel(); ++i) v[i] = rng.normal() * 0.08;
        auto x = rand_tensor<double>(rng, {2, 3, 8, 8});
        std::vector<double> t = {0.25, 0.8};
        std::vector<int> ids = {0, 2};
        auto wx = rand_tensor<double>(rng, {2, 3, 8, 8});
        auto objective = [&](const ParamMap<double>& p) {
            Backbone<double>::Acts a;
            net.forward(p, x, t, ids, a);
            double s = 0;
            for (int64_t i = 0; i < a.x_pred.numel(); ++i) s += wx[i] * a.x_pred[i];
            return s;
        };
        Backbone<double>::Acts acts;
        net.forward(params, x, t, ids, acts);
        auto grads = net.zero_grads(params);
        net.backward(params, acts, wx, nullptr, grads);
        const double h = 1e-5;
        for (const char* name : {"patch.w", "blk0.attn.qkv.w", "blk1.mlp.fc1.w", "ctx.w",
                                 "head.out.w", "class.table", "temb.fc1.w"}) {
            auto& tensor = params.at(name);
            int64_t idx = tensor.numel() / 2;
            double keep = tensor[idx];
            tensor[idx] = keep + h;
            double up = objective(params);
            tensor[idx] = keep - h;
            double dn = objective(params);
            tensor[idx] = keep;
            double want = (up - dn) / (2 * h);
            double got  = grads.at(name)[idx];
            double scale = std::max({std::fabs(want), std::fabs(got), 1e-7});
            require(std::fabs(want - got) / scale < 1e-4,
                    std::string("gradient mismatch for ") + name);
        }
    });
}

CheckResult check_branch_gradients() {
    return run_check("alignment branch backward vs finite differences", [] {
        auto mcfg = verify_model();
        for (const char* variant : {"mlp", "mta"}) {
            auto acfg = verify_align(variant);
            AlignmentBranch<double> branch(acfg, mcfg);
            Rng rng(106);
            ParamMap<double> params;
            branch.init_params(params, rng);
            for (auto& [k, v] : params)
                for (int64_t i = 0; i < v.numel(); ++i) v[i] = rng.normal() * 0.08;
            TokenGridT<double> h;
            h.grid_rows = h.grid_cols = 2;
            h.tokens = rand_tensor<double>(rng, {2, 4, mcfg.hidden_dim});
            auto scond = rand_tensor<double>(rng, {2, mcfg.hidden_dim});
            auto targets = rand_tensor<double>(rng, {2, 4, acfg.feature_dim});
            PatchMask mask = sample_mask(2, 4, 0.25, rng);
            auto objective = [&](const ParamMap<double>& p) {
                AlignmentBranch<double>::Acts a;
                return branch.loss_forward(p, h, scond, targets, &mask, a);
            };
            AlignmentBranch<double>::Acts acts;
            branch.loss_forward(params, h, scond, targets, &mask, acts);
            ParamMap<double> grads;
            for (const auto& [k, v] : params) grads[k] = TensorT<double>(v.shape);
            TensorT<double> dh, dscond({2, mcfg.hidden_dim});
            branch.loss_backward(params, acts, 1.0, dh, dscond, grads);
            const double step = 1e-6;
            for (auto& [name, tensor] : params) {
                int64_t idx = tensor.numel() / 2;
                double keep = tensor[idx];
                tensor[idx] = keep + step;
                double up = objective(params);
                tensor[idx] = keep - step;
                double dn = objective(params);
                tensor[idx] = keep;
                double want = (up - dn) / (2 * step);
                double got  = grads.at(name)[idx];
                double scale = std::max({std::fabs(want), std::fabs(got), 1e-7});
                require(std::fabs(want - got) / scale < 1e-4,
                        "branch gradient mismatch for " + name);
            }
        }
    });
}

CheckResult check_mask_semantics() {
    return run_check("mask counts and masked-token gradient", [] {
        Rng rng(107);
        for (double r : {0.0, 0.1, 0.2, 0.5})
            for (int64_t n : {4, 10, 64}) {
                auto m = sample_mask(2, n, r, rng);
                for (int64_t b = 0; b < 2; ++b) {
                    int64_t c = 0;
                    for (int64_t p = 0; p < n; ++p) c += m.masked(b, p) ? 1 : 0;
                    require(c == int64_t(r * double(n)), "mask count != floor(r n)");
                }
            }
        auto mcfg = verify_model();
        auto acfg = verify_align("mta");
        AlignmentBranch<double> branch(acfg, mcfg);
        ParamMap<double> params;
        Rng prng(108);
        branch.init_params(params, prng);
        TokenGridT<double> h;
        h.grid_rows = h.grid_cols = 2;
        h.tokens = rand_tensor<double>(prng, {2, 4, mcfg.hidden_dim});
        auto scond = rand_tensor<double>(prng, {2, mcfg.hidden_dim});
        auto targets = rand_tensor<double>(prng, {2, 4, acfg.feature_dim});
        PatchMask mask = sample_mask(2, 4, 0.25, prng);
        AlignmentBranch<double>::Acts acts;
        branch.loss_forward(params, h, scond, targets, &mask, acts);
        ParamMap<double> grads;
        for (const auto& [k, v] : params) grads[k] = TensorT<double>(v.shape);
        TensorT<double> dh, dscond({2, mcfg.hidden_dim});
        branch.loss_backward(params, acts, 1.0, dh, dscond, grads);
        for (int64_t b = 0; b < 2; ++b)
            for (int64_t p = 0; p < 4; ++p)
                if (mask.masked(b, p))
                    for (int64_t j = 0; j < mcfg.hidden_dim; ++j)
                        require(dh[(b * 4 + p) * mcfg.hidden_dim + j] == 0.0,
                                "masked token received gradient through the zeroing path");
    });
}

CheckResult check_alignment_loss_bounds() {
    return run_check("alignment loss bounded in [-1, 1]", [] {
        Rng rng(109);
        for (int rep = 0; rep < 2000; ++rep) {
            auto t = rand_tensor<double>(rng, {1, 5, 4});
            auto p = rand_tensor<double>(rng, {1, 5, 4});
            double l = alignment_loss(t, p);
            require(l >= -1.0 && l <= 1.0, "alignment loss escaped [-1, 1]");
        }
        auto t = rand_tensor<double>(rng, {2, 4, 3});
        require(std::fabs(alignment_loss(t, t) + 1.0) < 1e-6, "aligned construction != -1");
    });
}

CheckResult check_branch_isolation() {
    return run_check("x-prediction identical across branch variants", [] {
        RunConfig base;
        base.model = verify_model();
        Rng prng(110);
        auto backbone_params = Backbone<double>(base.model).init_params(prng);
        Rng drng(111);
        auto x = rand_tensor<double>(drng, {2, 3, 8, 8}, 0.5);
        StepDraws<double> draws;
        draws.t = {0.3, 0.7};
        draws.eps = rand_tensor<double>(drng, x.shape);
        draws.class_ids = {0, 2};
        draws.mask = sample_mask(2, base.model.n_patch(), 0.25, drng);
        draws.has_mask = true;
        std::vector<TensorT<double>> xpreds;
        for (const char* variant : {"none", "mlp", "mta"}) {
            RunConfig cfg = base;
            cfg.alignment = verify_align(variant);
            DiffusionModel<double> model(cfg);
            auto params = backbone_params;
            Rng br(112);
            model.branch().init_params(params, br);
            TensorT<double> targets;
            if (cfg.alignment.active()) {
                auto enc = make_encoder<double>(cfg.alignment, cfg.model);
                targets = encode_target(x, {}, *enc, cfg.model.grid(), cfg.model.grid());
            }
            Backbone<double>::Acts bacts;
            AlignmentBranch<double>::Acts aacts;
            model.compute_losses(params, x, targets, draws, bacts, aacts, nullptr);
            xpreds.push_back(bacts.x_pred);
        }
        require(xpreds[0].data == xpreds[1].data && xpreds[0].data == xpreds[2].data,
                "x_pred differs across alignment variants");
    });
}

CheckResult check_analysis_oracles() {
    return run_check("analysis metrics vs brute-force oracles", [] {
        using namespace analysis;
        for (int rep = 0; rep < 20; ++rep) {
            Rng rng(5000 + rep);
            TensorD f({8, 3});
            for (int64_t i = 0; i < f.numel(); ++i) f[i] = rng.normal();
            double want = 0.0;
            for (int64_t i = 0; i < 8; ++i)
                for (int64_t j = i + 1; j < 8; ++j) {
                    double d2 = 0;
                    for (int64_t e = 0; e < 3; ++e)
                        d2 += (f[i * 3 + e] - f[j * 3 + e]) * (f[i * 3 + e] - f[j * 3 + e]);
                    want += std::sqrt(d2);
                }
            want /= 28.0;
            require(std::fabs(diversity_score(f) - want) < 1e-10, "diversity oracle mismatch");
            require(std::fabs(frechet_distance(f, f)) < 1e-6, "frechet(A, A) != 0");
        }
    });
}

CheckResult check_checkpoint_roundtrip() {
    return run_check("checkpoint save/load round trip", [] {
        RunConfig cfg;
        cfg.model = verify_model();
        cfg.alignment = verify_align("mta");
        cfg.train.batch_size = 2;
        cfg.train.steps = 1;
        cfg.data.classes = 3;
        cfg.data.per_class = 2;
        Trainer trainer(cfg);
        TrainState st = trainer.init_state();
        auto path = (std::filesystem::temp_directory_path() / "pixdit_verify.ckpt").string();
        save_checkpoint(st, cfg, path);
        auto loaded = load_checkpoint(path, cfg.hash());
        std::filesystem::remove(path);
        require(loaded.state.params.size() == st.params.size(), "param count changed");
        for (const auto& [k, v] : st.params)
            require(loaded.state.params.at(k).data == v.data, "param bytes changed: " + k);
        require(loaded.state.ema.size() == st.ema.size(), "ema shadows lost");
    });
}

CheckResult check_sampling_determinism() {
    return run_check("sampling is seed-deterministic", [] {
        auto cfg = verify_model();
        Backbone<float> net(cfg);
        Rng prng(113);
        auto params = net.init_params(prng);
        SamplerConfig scfg;
        scfg.steps = 6;
        Rng a(1), b(1);
        auto s1 = sample(net, params, scfg, {0, 1}, a);
        auto s2 = sample(net, params, scfg, {0, 1}, b);
        require(s1.data == s2.data, "same seed produced different samples");
        for (int64_t i = 0; i < s1.numel(); ++i)
            require(std::isfinite(double(s1[i])), "non-finite sample output");
    });
}

std::vector<CheckResult> run_all(const GuidanceFn* injected_guidance) {
    GuidanceFn real = [](const TensorD& vc, const TensorD& vu, double w, double t, double lo,
                         double hi) { return guided_velocity(vc, vu, w, t, lo, hi); };
    std::vector<CheckResult> out;
    out.push_back(check_flow_identities());
    out.push_back(check_flow_loss_gradient());
    out.push_back(check_integrator_exactness());
    out.push_back(check_integrator_order());
    out.push_back(check_guidance(injected_guidance != nullptr ? *injected_guidance : real));
    out.push_back(check_adaln_identity());
    out.push_back(check_backbone_gradients());
    out.push_back(check_branch_gradients());
    out.push_back(check_mask_semantics());
    out.push_back(check_alignment_loss_bounds());
    out.push_back(check_branch_isolation());
    out.push_back(check_analysis_oracles());
    out.push_back(check_checkpoint_roundtrip());
    out.push_back(check_sampling_determinism());
    return out;
}

bool all_ok(const std::vector<CheckResult>& results) {
    for (const auto& r : results)
        if (!r.ok) return false;
    return true;
}

}  // namespace pixdit::verify
