// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// The pixel-space transformer denoiser: patch embedding, AdaLN-Zero blocks,
// in-context class-token concatenation after a configured block, and an
// unpatchify head producing the x-prediction. The intermediate token grid at
// the alignment depth is exposed for the alignment branch.

#include <algorithm>
#include <string>
#include <vector>

#include "pixdit/adaln_block.hpp"
#include "pixdit/config.hpp"
#include "pixdit/kernels.hpp"
#include "pixdit/rng.hpp"
#include "pixdit/tensor.hpp"

namespace pixdit {

// Token sequence plus its spatial metadata. Image tokens always precede
// context tokens.
template <typename T>
struct TokenGridT {
    TensorT<T> tokens;  // [batch, n_patch + n_ctx, dim]
    int64_t grid_rows = 0;
    int64_t grid_cols = 0;
    int64_t n_ctx     = 0;

    int64_t n_patch() const { return grid_rows * grid_cols; }
    int64_t n_total() const { return n_patch() + n_ctx; }
    int64_t batch() const { return tokens.dim(0); }
    int64_t dim() const { return tokens.dim(2); }
};

using TokenGrid = TokenGridT<float>;

// Append context tokens to a grid that has none. Grid metadata unchanged.
template <typename T>
TokenGridT<T> in_context_concat(const TokenGridT<T>& g, const TensorT<T>& ctx) {
    if (g.n_ctx != 0)
        throw StateError("in_context_concat: context tokens already present");
    if (ctx.numel() == 0) return g;
    if (ctx.ndim() != 3 || ctx.dim(0) != g.batch() || ctx.dim(2) != g.dim())
        throw InvalidInputError("in_context_concat: context token shape mismatch");
    const int64_t b = g.batch(), np = g.n_patch(), k = ctx.dim(1), d = g.dim();
    TokenGridT<T> out;
    out.grid_rows = g.grid_rows;
    out.grid_cols = g.grid_cols;
    out.n_ctx     = k;
    out.tokens    = TensorT<T>({b, np + k, d});
#pragma omp parallel for schedule(static)
    for (int64_t bi = 0; bi < b; ++bi) {
        std::copy(g.tokens.ptr() + bi * np * d, g.tokens.ptr() + (bi + 1) * np * d,
                  out.tokens.ptr() + bi * (np + k) * d);
        std::copy(ctx.ptr() + bi * k * d, ctx.ptr() + (bi + 1) * k * d,
                  out.tokens.ptr() + (bi * (np + k) + np) * d);
    }
    return out;
}

template <typename T>
TokenGridT<T> strip_context(const TokenGridT<T>& g) {
    if (g.n_ctx == 0) return g;
    const int64_t b = g.batch(), np = g.n_patch(), n = g.n_total(), d = g.dim();
    TokenGridT<T> out;
    out.grid_rows = g.grid_rows;
    out.grid_cols = g.grid_cols;
    out.n_ctx     = 0;
    out.tokens    = TensorT<T>({b, np, d});
#pragma omp parallel for schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        std::copy(g.tokens.ptr() + bi * n * d, g.tokens.ptr() + (bi * n + np) * d,
                  out.tokens.ptr() + bi * np * d);
    return out;
}

template <typename T>
class Backbone {
public:
    explicit Backbone(ModelConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        block_.dim       = cfg_.hidden_dim;
        block_.heads     = cfg_.heads;
        block_.mlp_ratio = cfg_.mlp_ratio;
    }

    const ModelConfig& config() const { return cfg_; }

    struct Acts {
        int64_t batch = 0;
        std::vector<T> t;
        std::vector<int> class_ids;
        TensorT<T> patches;                 // [B, Np, pd]
        TensorT<T> tokens0;                 // [B, Np, D]
        TensorT<T> sinfeat, t_fc1, t_act, temb, cond, scond;  // [B, D]
        TensorT<T> ctx;                     // [B, K, D]
        std::vector<BlockActsT<T>> blocks;
        TensorT<T> x_last;                  // [B, N_last, D]
        TensorT<T> h_align;                 // [B, Np, D]
        TensorT<T> x_final;                 // [B, Np, D]
        TensorT<T> lnf, modf_out;           // [B, Np, D]
        TensorT<T> meanf, rstdf;            // [B*Np]
        TensorT<T> modf;                    // [B, 2D]
        TensorT<T> head_rows;               // [B, Np, pd]
        TensorT<T> x_pred;                  // [B, C, H, W]
    };

    ParamMap<T> init_params(Rng& rng) const {
        ParamMap<T> p;
        const int64_t d = cfg_.hidden_dim, pd = cfg_.patch_dim();
        auto normal = [&](std::vector<int64_t> shape, T std) {
            TensorT<T> t(shape);
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.normal()) * std;
            return t;
        };
        const T w_std = T(0.02);
        p["patch.w"] = normal({pd, d}, w_std);
        p["patch.b"] = TensorT<T>({d});
        p["pos"]     = normal({cfg_.n_patch(), d}, w_std);
        p["temb.fc1.w"] = normal({d, d}, w_std);
        p["temb.fc1.b"] = TensorT<T>({d});
        p["temb.fc2.w"] = normal({d, d}, w_std);
        p["temb.fc2.b"] = TensorT<T>({d});
        p["class.table"] = normal({cfg_.num_classes + 1, d}, w_std);
        if (cfg_.in_context_tokens > 0) {
            p["ctx.w"] = normal({d, cfg_.in_context_tokens * d}, w_std);
            p["ctx.b"] = TensorT<T>({cfg_.in_context_tokens * d});
        }
        for (int64_t i = 0; i < cfg_.depth; ++i)
            block_.init_params(p, "blk" + std::to_string(i) + ".", rng, w_std);
        p["head.ada.w"] = TensorT<T>({d, 2 * d});  // zero
        p["head.ada.b"] = TensorT<T>({2 * d});
        p["head.out.w"] = TensorT<T>({d, pd});     // zero
        p["head.out.b"] = TensorT<T>({pd});
        return p;
    }

    void compute_conditioning(const ParamMap<T>& params, const std::vector<T>& t,
                              const std::vector<int>& class_ids, Acts& a) const {
        const int64_t b = static_cast<int64_t>(t.size()), d = cfg_.hidden_dim;
        if (class_ids.size() != t.size())
            throw InvalidInputError("forward: class id count does not match batch");
        for (int id : class_ids)
            if (id < 0 || id > cfg_.num_classes)
                throw InvalidInputError("forward: unknown class id " + std::to_string(id));
        a.batch = b;
        a.t = t;
        a.class_ids = class_ids;
        a.sinfeat = TensorT<T>({b, d});
        const int64_t half = d / 2;
#pragma omp parallel for schedule(static)
        for (int64_t bi = 0; bi < b; ++bi) {
            T* row = a.sinfeat.ptr() + bi * d;
            for (int64_t i = 0; i < half; ++i) {
                T freq = std::exp(T(-std::log(10000.0)) * T(i) / T(half));
                T arg  = t[bi] * T(1000) * freq;
                row[i]        = std::cos(arg);
                row[half + i] = std::sin(arg);
            }
            if (d % 2) row[d - 1] = T(0);
        }
        a.t_fc1 = TensorT<T>({b, d});
        kern::gemm(false, false, b, d, d, T(1), a.sinfeat.ptr(), d,
                   params.at("temb.fc1.w").ptr(), d, T(0), a.t_fc1.ptr(), d);
        kern::add_bias(a.t_fc1.ptr(), params.at("temb.fc1.b").ptr(), b, d);
        a.t_act = TensorT<T>({b, d});
        kern::silu_fwd(a.t_fc1.ptr(), a.t_act.ptr(), b * d);
        a.temb = TensorT<T>({b, d});
        kern::gemm(false, false, b, d, d, T(1), a.t_act.ptr(), d,
                   params.at("temb.fc2.w").ptr(), d, T(0), a.temb.ptr(), d);
        kern::add_bias(a.temb.ptr(), params.at("temb.fc2.b").ptr(), b, d);
        a.cond = TensorT<T>({b, d});
        const TensorT<T>& table = params.at("class.table");
        for (int64_t bi = 0; bi < b; ++bi) {
            const T* crow = table.ptr() + int64_t(class_ids[bi]) * d;
            const T* trow = a.temb.ptr() + bi * d;
            T* out = a.cond.ptr() + bi * d;
            for (int64_t j = 0; j < d; ++j) out[j] = trow[j] + crow[j];
        }
        a.scond = TensorT<T>({b, d});
        kern::silu_fwd(a.cond.ptr(), a.scond.ptr(), b * d);
    }

    void embed_patches(const ParamMap<T>& params, const TensorT<T>& x_t, Acts& a) const {
        const int64_t b = x_t.dim(0), d = cfg_.hidden_dim, np = cfg_.n_patch(),
                      pd = cfg_.patch_dim();
        if (x_t.ndim() != 4 || x_t.dim(1) != cfg_.channels || x_t.dim(2) != cfg_.image_size ||
            x_t.dim(3) != cfg_.image_size)
            throw InvalidInputError("forward: input image shape mismatch " + x_t.shape_str());
        a.patches = TensorT<T>({b, np, pd});
        kern::im2patch(x_t.ptr(), a.patches.ptr(), b, cfg_.channels, cfg_.image_size,
                       cfg_.patch_size);
        a.tokens0 = TensorT<T>({b, np, d});
        kern::gemm(false, false, b * np, d, pd, T(1), a.patches.ptr(), pd,
                   params.at("patch.w").ptr(), d, T(0), a.tokens0.ptr(), d);
        kern::add_bias(a.tokens0.ptr(), params.at("patch.b").ptr(), b * np, d);
        const T* pos = params.at("pos").ptr();
#pragma omp parallel for schedule(static)
        for (int64_t bi = 0; bi < b; ++bi) {
            T* tok = a.tokens0.ptr() + bi * np * d;
            for (int64_t i = 0; i < np * d; ++i) tok[i] += pos[i];
        }
    }

    // Run the AdaLN-Zero block stack from acts.tokens0, including the
    // in-context concatenation. Fills blocks, ctx, h_align and x_last.
    void blocks_forward(const ParamMap<T>& params, Acts& a) const {
        const int64_t b = a.batch, d = cfg_.hidden_dim, np = cfg_.n_patch();
        const int64_t start_idx = cfg_.in_context_start_block - 1;
        const int64_t align_idx = cfg_.alignment_depth - 1;
        const int64_t k = cfg_.in_context_tokens;
        a.blocks.assign(cfg_.depth, BlockActsT<T>{});
        TensorT<T> cur = a.tokens0;
        for (int64_t j = 0; j < cfg_.depth; ++j) {
            if (j == start_idx && k > 0) {
                a.ctx = TensorT<T>({b, k, d});
                kern::gemm(false, false, b, k * d, d, T(1), a.scond.ptr(), d,
                           params.at("ctx.w").ptr(), k * d, T(0), a.ctx.ptr(), k * d);
                kern::add_bias(a.ctx.ptr(), params.at("ctx.b").ptr(), b, k * d);
                TensorT<T> merged({b, np + k, d});
#pragma omp parallel for schedule(static)
                for (int64_t bi = 0; bi < b; ++bi) {
                    std::copy(cur.ptr() + bi * np * d, cur.ptr() + (bi + 1) * np * d,
                              merged.ptr() + bi * (np + k) * d);
                    std::copy(a.ctx.ptr() + bi * k * d, a.ctx.ptr() + (bi + 1) * k * d,
                              merged.ptr() + (bi * (np + k) + np) * d);
                }
                cur = std::move(merged);
            }
            block_.forward(params, "blk" + std::to_string(j) + ".", cur, a.scond, a.blocks[j]);
            cur = a.blocks[j].x_out;
            if (j == align_idx) a.h_align = cur;  // align precedes concat: N == Np
        }
        a.x_last = cur;
    }

    void forward(const ParamMap<T>& params, const TensorT<T>& x_t, const std::vector<T>& t,
                 const std::vector<int>& class_ids, Acts& a) const {
        compute_conditioning(params, t, class_ids, a);
        embed_patches(params, x_t, a);
        blocks_forward(params, a);
        head_forward(params, a);
    }

    TokenGridT<T> h_align_grid(const Acts& a) const {
        TokenGridT<T> g;
        g.tokens    = a.h_align;
        g.grid_rows = cfg_.grid();
        g.grid_cols = cfg_.grid();
        g.n_ctx     = 0;
        return g;
    }

    // dh_align may be null when no gradient flows through the alignment tap.
    // dscond_extra, when given, is an extra conditioning gradient produced by
    // an adapter that shares the conditioning vector (added before the
    // conditioning pathway backward).
    void backward(const ParamMap<T>& params, const Acts& a, const TensorT<T>& dx_pred,
                  const TensorT<T>* dh_align, ParamMap<T>& grads,
                  const TensorT<T>* dscond_extra = nullptr) const {
        const int64_t b = a.batch, d = cfg_.hidden_dim, np = cfg_.n_patch(),
                      pd = cfg_.patch_dim();
        const int64_t start_idx = cfg_.in_context_start_block - 1;
        const int64_t align_idx = cfg_.alignment_depth - 1;
        const int64_t k = cfg_.in_context_tokens;
        TensorT<T> dscond({b, d});
        if (dscond_extra != nullptr) {
            check_same_shape(*dscond_extra, dscond, "backward: dscond_extra");
            dscond = *dscond_extra;
        }

        // head
        TensorT<T> dhead_rows({b, np, pd});
        kern::im2patch(dx_pred.ptr(), dhead_rows.ptr(), b, cfg_.channels, cfg_.image_size,
                       cfg_.patch_size);
        TensorT<T> dmodf_out({b, np, d});
        kern::gemm(false, true, b * np, d, pd, T(1), dhead_rows.ptr(), pd,
                   params.at("head.out.w").ptr(), pd, T(0), dmodf_out.ptr(), d);
        kern::gemm(true, false, d, pd, b * np, T(1), a.modf_out.ptr(), d, dhead_rows.ptr(),
                   pd, T(1), grads.at("head.out.w").ptr(), pd);
        kern::bias_grad_acc(dhead_rows.ptr(), grads.at("head.out.b").ptr(), b * np, pd);
        TensorT<T> dlnf({b, np, d});
        TensorT<T> dmodf({b, 2 * d});
        modulate_slots_bwd(a.lnf, a.modf, 0, 1, dmodf_out, dlnf, dmodf, b, np, d, 2);
        TensorT<T> dx_final({b, np, d});
        kern::layernorm_bwd_acc(a.x_final.ptr(), a.meanf.ptr(), a.rstdf.ptr(), dlnf.ptr(),
                                dx_final.ptr(), b * np, d);
        kern::gemm(false, true, b, d, 2 * d, T(1), dmodf.ptr(), 2 * d,
                   params.at("head.ada.w").ptr(), 2 * d, T(1), dscond.ptr(), d);
        kern::gemm(true, false, d, 2 * d, b, T(1), a.scond.ptr(), d, dmodf.ptr(), 2 * d,
                   T(1), grads.at("head.ada.w").ptr(), 2 * d);
        kern::bias_grad_acc(dmodf.ptr(), grads.at("head.ada.b").ptr(), b, 2 * d);

        // block stack, reversed
        const int64_t n_last = a.x_last.dim(1);
        TensorT<T> dcur({b, n_last, d});
#pragma omp parallel for schedule(static)
        for (int64_t bi = 0; bi < b; ++bi)
            std::copy(dx_final.ptr() + bi * np * d, dx_final.ptr() + (bi + 1) * np * d,
                      dcur.ptr() + bi * n_last * d);

        for (int64_t j = cfg_.depth - 1; j >= 0; --j) {
            if (j == align_idx && dh_align != nullptr) {
                check_same_shape(*dh_align, a.h_align, "backward: dh_align");
                kern::axpy(T(1), dh_align->ptr(), dcur.ptr(), b * np * d);
            }
            TensorT<T> dxin = block_.backward(params, "blk" + std::to_string(j) + ".",
                                              a.scond, a.blocks[j], dcur, dscond, grads);
            if (j == start_idx && k > 0) {
                TensorT<T> dctx({b, k, d});
                TensorT<T> dprev({b, np, d});
#pragma omp parallel for schedule(static)
                for (int64_t bi = 0; bi < b; ++bi) {
                    std::copy(dxin.ptr() + bi * (np + k) * d,
                              dxin.ptr() + (bi * (np + k) + np) * d,
                              dprev.ptr() + bi * np * d);
                    std::copy(dxin.ptr() + (bi * (np + k) + np) * d,
                              dxin.ptr() + (bi + 1) * (np + k) * d,
                              dctx.ptr() + bi * k * d);
                }
                kern::gemm(false, true, b, d, k * d, T(1), dctx.ptr(), k * d,
                           params.at("ctx.w").ptr(), k * d, T(1), dscond.ptr(), d);
                kern::gemm(true, false, d, k * d, b, T(1), a.scond.ptr(), d, dctx.ptr(),
                           k * d, T(1), grads.at("ctx.w").ptr(), k * d);
                kern::bias_grad_acc(dctx.ptr(), grads.at("ctx.b").ptr(), b, k * d);
                dcur = std::move(dprev);
            } else {
                dcur = std::move(dxin);
            }
        }

        // patch embedding
        kern::gemm(true, false, pd, d, b * np, T(1), a.patches.ptr(), pd, dcur.ptr(), d,
                   T(1), grads.at("patch.w").ptr(), d);
        kern::bias_grad_acc(dcur.ptr(), grads.at("patch.b").ptr(), b * np, d);
        {
            T* dpos = grads.at("pos").ptr();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < np * d; ++i) {
                T acc = T(0);
                for (int64_t bi = 0; bi < b; ++bi) acc += dcur[bi * np * d + i];
                dpos[i] += acc;
            }
        }

        // conditioning pathway
        TensorT<T> dcond({b, d});
        kern::silu_bwd_acc(a.cond.ptr(), dscond.ptr(), dcond.ptr(), b * d);
        {
            T* dtable = grads.at("class.table").ptr();
            for (int64_t bi = 0; bi < b; ++bi) {
                T* row = dtable + int64_t(a.class_ids[bi]) * d;
                for (int64_t j2 = 0; j2 < d; ++j2) row[j2] += dcond[bi * d + j2];
            }
        }
        TensorT<T> dt_act({b, d});
        kern::gemm(false, true, b, d, d, T(1), dcond.ptr(), d, params.at("temb.fc2.w").ptr(),
                   d, T(0), dt_act.ptr(), d);
        kern::gemm(true, false, d, d, b, T(1), a.t_act.ptr(), d, dcond.ptr(), d, T(1),
                   grads.at("temb.fc2.w").ptr(), d);
        kern::bias_grad_acc(dcond.ptr(), grads.at("temb.fc2.b").ptr(), b, d);
        TensorT<T> dt_fc1({b, d});
        kern::silu_bwd_acc(a.t_fc1.ptr(), dt_act.ptr(), dt_fc1.ptr(), b * d);
        kern::gemm(true, false, d, d, b, T(1), a.sinfeat.ptr(), d, dt_fc1.ptr(), d, T(1),
                   grads.at("temb.fc1.w").ptr(), d);
        kern::bias_grad_acc(dt_fc1.ptr(), grads.at("temb.fc1.b").ptr(), b, d);
    }

    ParamMap<T> zero_grads(const ParamMap<T>& params) const {
        ParamMap<T> g;
        for (const auto& [k, v] : params) g[k] = TensorT<T>(v.shape);
        return g;
    }

private:
    void head_forward(const ParamMap<T>& params, Acts& a) const {
        const int64_t b = a.batch, d = cfg_.hidden_dim, np = cfg_.n_patch(),
                      pd = cfg_.patch_dim();
        const int64_t n_last = a.x_last.dim(1);
        a.x_final = TensorT<T>({b, np, d});
#pragma omp parallel for schedule(static)
        for (int64_t bi = 0; bi < b; ++bi)
            std::copy(a.x_last.ptr() + bi * n_last * d,
                      a.x_last.ptr() + (bi * n_last + np) * d, a.x_final.ptr() + bi * np * d);
        a.lnf   = TensorT<T>({b, np, d});
        a.meanf = TensorT<T>({b * np});
        a.rstdf = TensorT<T>({b * np});
        kern::layernorm_fwd(a.x_final.ptr(), a.lnf.ptr(), a.meanf.ptr(), a.rstdf.ptr(),
                            b * np, d, T(1e-6));
        a.modf = TensorT<T>({b, 2 * d});
        kern::gemm(false, false, b, 2 * d, d, T(1), a.scond.ptr(), d,
                   params.at("head.ada.w").ptr(), 2 * d, T(0), a.modf.ptr(), 2 * d);
        kern::add_bias(a.modf.ptr(), params.at("head.ada.b").ptr(), b, 2 * d);
        a.modf_out = TensorT<T>({b, np, d});
        modulate_slots_fwd(a.lnf, a.modf, 0, 1, a.modf_out, b, np, d, 2);
        a.head_rows = TensorT<T>({b, np, pd});
        kern::gemm(false, false, b * np, pd, d, T(1), a.modf_out.ptr(), d,
                   params.at("head.out.w").ptr(), pd, T(0), a.head_rows.ptr(), pd);
        kern::add_bias(a.head_rows.ptr(), params.at("head.out.b").ptr(), b * np, pd);
        a.x_pred = TensorT<T>({b, cfg_.channels, cfg_.image_size, cfg_.image_size});
        kern::patch2im(a.head_rows.ptr(), a.x_pred.ptr(), b, cfg_.channels, cfg_.image_size,
                       cfg_.patch_size);
    }

    ModelConfig cfg_;
    AdaLnBlock<T> block_;
};

}  // namespace pixdit
