// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// One AdaLN-Zero transformer block: pre-norm attention and MLP residual
// branches whose shift/scale/gate vectors come from a conditioning vector
// through a zero-initialized projection, so a fresh block is an identity
// map. Shared by the denoiser backbone and the alignment adapter.

#include <string>

#include "pixdit/kernels.hpp"
#include "pixdit/rng.hpp"
#include "pixdit/tensor.hpp"

namespace pixdit {

template <typename T>
struct BlockActsT {
    int64_t n = 0;
    TensorT<T> mod;                // [B, 6D]
    TensorT<T> x_in;               // [B, N, D]
    TensorT<T> ln1, mod1;          // [B, N, D]
    TensorT<T> mean1, rstd1;       // [B*N]
    TensorT<T> qkv;                // [B, N, 3D]
    TensorT<T> probs;              // [B, H, N, N]
    TensorT<T> attn, proj, x_mid;  // [B, N, D]
    TensorT<T> ln2, mod2;          // [B, N, D]
    TensorT<T> mean2, rstd2;       // [B*N]
    TensorT<T> fc1, act;           // [B, N, MD]
    TensorT<T> fc2;                // [B, N, D]
    TensorT<T> x_out;              // [B, N, D]
};

// modulate / gate with vectors taken from chunk slots of a packed [B, S*D]
// modulation tensor.
template <typename T>
void modulate_slots_fwd(const TensorT<T>& x, const TensorT<T>& mod, int64_t shift_slot,
                        int64_t scale_slot, TensorT<T>& y, int64_t b, int64_t n, int64_t d,
                        int64_t slots = 6) {
    const T* m = mod.ptr();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t t = 0; t < n; ++t) {
            const T* xr = x.ptr() + (bi * n + t) * d;
            const T* sh = m + bi * slots * d + shift_slot * d;
            const T* sc = m + bi * slots * d + scale_slot * d;
            T* yr = y.ptr() + (bi * n + t) * d;
            for (int64_t j = 0; j < d; ++j) yr[j] = xr[j] * (T(1) + sc[j]) + sh[j];
        }
}

template <typename T>
void modulate_slots_bwd(const TensorT<T>& x, const TensorT<T>& mod, int64_t shift_slot,
                        int64_t scale_slot, const TensorT<T>& dy, TensorT<T>& dx,
                        TensorT<T>& dmod, int64_t b, int64_t n, int64_t d, int64_t slots = 6) {
    const T* m = mod.ptr();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t t = 0; t < n; ++t) {
            const T* dyr = dy.ptr() + (bi * n + t) * d;
            const T* sc  = m + bi * slots * d + scale_slot * d;
            T* dxr = dx.ptr() + (bi * n + t) * d;
            for (int64_t j = 0; j < d; ++j) dxr[j] = dyr[j] * (T(1) + sc[j]);
        }
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t j = 0; j < d; ++j) {
            T dsh = T(0), dsc = T(0);
            for (int64_t t = 0; t < n; ++t) {
                T g = dy[(bi * n + t) * d + j];
                dsh += g;
                dsc += g * x[(bi * n + t) * d + j];
            }
            dmod[bi * slots * d + shift_slot * d + j] += dsh;
            dmod[bi * slots * d + scale_slot * d + j] += dsc;
        }
}

template <typename T>
void gate_slot_fwd(TensorT<T>& x, const TensorT<T>& h, const TensorT<T>& mod,
                   int64_t gate_slot, int64_t b, int64_t n, int64_t d) {
    const T* m = mod.ptr();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t t = 0; t < n; ++t) {
            const T* g  = m + bi * 6 * d + gate_slot * d;
            const T* hr = h.ptr() + (bi * n + t) * d;
            T* xr = x.ptr() + (bi * n + t) * d;
            for (int64_t j = 0; j < d; ++j) xr[j] += g[j] * hr[j];
        }
}

template <typename T>
void gate_slot_bwd(const TensorT<T>& h, const TensorT<T>& mod, int64_t gate_slot,
                   const TensorT<T>& dx, TensorT<T>& dh, TensorT<T>& dmod, int64_t b,
                   int64_t n, int64_t d) {
    const T* m = mod.ptr();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t t = 0; t < n; ++t) {
            const T* g   = m + bi * 6 * d + gate_slot * d;
            const T* dxr = dx.ptr() + (bi * n + t) * d;
            T* dhr = dh.ptr() + (bi * n + t) * d;
            for (int64_t j = 0; j < d; ++j) dhr[j] = dxr[j] * g[j];
        }
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t j = 0; j < d; ++j) {
            T acc = T(0);
            for (int64_t t = 0; t < n; ++t)
                acc += dx[(bi * n + t) * d + j] * h[(bi * n + t) * d + j];
            dmod[bi * 6 * d + gate_slot * d + j] += acc;
        }
}

template <typename T>
struct AdaLnBlock {
    int64_t dim = 0;
    int64_t heads = 0;
    int64_t mlp_ratio = 4;

    int64_t head_dim() const { return dim / heads; }

    void init_params(ParamMap<T>& p, const std::string& pre, Rng& rng, T w_std = T(0.02)) const {
        auto normal = [&](std::vector<int64_t> shape) {
            TensorT<T> t(shape);
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.normal()) * w_std;
            return t;
        };
        const int64_t d = dim, md = d * mlp_ratio;
        p[pre + "ada.w"] = TensorT<T>({d, 6 * d});  // zero: identity at init
        p[pre + "ada.b"] = TensorT<T>({6 * d});
        p[pre + "attn.qkv.w"]  = normal({d, 3 * d});
        p[pre + "attn.qkv.b"]  = TensorT<T>({3 * d});
        p[pre + "attn.proj.w"] = normal({d, d});
        p[pre + "attn.proj.b"] = TensorT<T>({d});
        p[pre + "mlp.fc1.w"] = normal({d, md});
        p[pre + "mlp.fc1.b"] = TensorT<T>({md});
        p[pre + "mlp.fc2.w"] = normal({md, d});
        p[pre + "mlp.fc2.b"] = TensorT<T>({d});
    }

    void forward(const ParamMap<T>& params, const std::string& pre, const TensorT<T>& x_in,
                 const TensorT<T>& scond, BlockActsT<T>& blk) const {
        const int64_t b = x_in.dim(0), n = x_in.dim(1), d = dim, md = d * mlp_ratio;
        blk.n    = n;
        blk.x_in = x_in;
        blk.mod  = TensorT<T>({b, 6 * d});
        kern::gemm(false, false, b, 6 * d, d, T(1), scond.ptr(), d,
                   params.at(pre + "ada.w").ptr(), 6 * d, T(0), blk.mod.ptr(), 6 * d);
        kern::add_bias(blk.mod.ptr(), params.at(pre + "ada.b").ptr(), b, 6 * d);
        // mod rows: [shift1 | scale1 | gate1 | shift2 | scale2 | gate2]
        blk.ln1   = TensorT<T>({b, n, d});
        blk.mean1 = TensorT<T>({b * n});
        blk.rstd1 = TensorT<T>({b * n});
        kern::layernorm_fwd(x_in.ptr(), blk.ln1.ptr(), blk.mean1.ptr(), blk.rstd1.ptr(),
                            b * n, d, T(1e-6));
        blk.mod1 = TensorT<T>({b, n, d});
        modulate_slots_fwd(blk.ln1, blk.mod, 0, 1, blk.mod1, b, n, d);
        blk.qkv = TensorT<T>({b, n, 3 * d});
        kern::gemm(false, false, b * n, 3 * d, d, T(1), blk.mod1.ptr(), d,
                   params.at(pre + "attn.qkv.w").ptr(), 3 * d, T(0), blk.qkv.ptr(), 3 * d);
        kern::add_bias(blk.qkv.ptr(), params.at(pre + "attn.qkv.b").ptr(), b * n, 3 * d);
        blk.probs = TensorT<T>({b, heads, n, n});
        blk.attn  = TensorT<T>({b, n, d});
        kern::attention_fwd(blk.qkv.ptr(), blk.probs.ptr(), blk.attn.ptr(), b, heads, n,
                            head_dim());
        blk.proj = TensorT<T>({b, n, d});
        kern::gemm(false, false, b * n, d, d, T(1), blk.attn.ptr(), d,
                   params.at(pre + "attn.proj.w").ptr(), d, T(0), blk.proj.ptr(), d);
        kern::add_bias(blk.proj.ptr(), params.at(pre + "attn.proj.b").ptr(), b * n, d);
        blk.x_mid = x_in;
        gate_slot_fwd(blk.x_mid, blk.proj, blk.mod, 2, b, n, d);
        blk.ln2   = TensorT<T>({b, n, d});
        blk.mean2 = TensorT<T>({b * n});
        blk.rstd2 = TensorT<T>({b * n});
        kern::layernorm_fwd(blk.x_mid.ptr(), blk.ln2.ptr(), blk.mean2.ptr(), blk.rstd2.ptr(),
                            b * n, d, T(1e-6));
        blk.mod2 = TensorT<T>({b, n, d});
        modulate_slots_fwd(blk.ln2, blk.mod, 3, 4, blk.mod2, b, n, d);
        blk.fc1 = TensorT<T>({b, n, md});
        kern::gemm(false, false, b * n, md, d, T(1), blk.mod2.ptr(), d,
                   params.at(pre + "mlp.fc1.w").ptr(), md, T(0), blk.fc1.ptr(), md);
        kern::add_bias(blk.fc1.ptr(), params.at(pre + "mlp.fc1.b").ptr(), b * n, md);
        blk.act = TensorT<T>({b, n, md});
        kern::gelu_fwd(blk.fc1.ptr(), blk.act.ptr(), b * n * md);
        blk.fc2 = TensorT<T>({b, n, d});
        kern::gemm(false, false, b * n, d, md, T(1), blk.act.ptr(), md,
                   params.at(pre + "mlp.fc2.w").ptr(), d, T(0), blk.fc2.ptr(), d);
        kern::add_bias(blk.fc2.ptr(), params.at(pre + "mlp.fc2.b").ptr(), b * n, d);
        blk.x_out = blk.x_mid;
        gate_slot_fwd(blk.x_out, blk.fc2, blk.mod, 5, b, n, d);
    }

    // Returns d(x_in); accumulates parameter grads and the conditioning
    // gradient (through the modulation projection) into dscond.
    TensorT<T> backward(const ParamMap<T>& params, const std::string& pre,
                        const TensorT<T>& scond, const BlockActsT<T>& blk,
                        const TensorT<T>& dx_out, TensorT<T>& dscond,
                        ParamMap<T>& grads) const {
        const int64_t b = blk.x_in.dim(0), n = blk.n, d = dim, md = d * mlp_ratio;
        TensorT<T> dmod({b, 6 * d});

        // x_out = x_mid + gate2 * fc2
        TensorT<T> dfc2({b, n, d});
        gate_slot_bwd(blk.fc2, blk.mod, 5, dx_out, dfc2, dmod, b, n, d);
        TensorT<T> dxmid = dx_out;
        TensorT<T> dact({b, n, md});
        kern::gemm(false, true, b * n, md, d, T(1), dfc2.ptr(), d,
                   params.at(pre + "mlp.fc2.w").ptr(), d, T(0), dact.ptr(), md);
        kern::gemm(true, false, md, d, b * n, T(1), blk.act.ptr(), md, dfc2.ptr(), d, T(1),
                   grads.at(pre + "mlp.fc2.w").ptr(), d);
        kern::bias_grad_acc(dfc2.ptr(), grads.at(pre + "mlp.fc2.b").ptr(), b * n, d);
        TensorT<T> dfc1({b, n, md});
        kern::gelu_bwd(blk.fc1.ptr(), dact.ptr(), dfc1.ptr(), b * n * md);
        TensorT<T> dmod2({b, n, d});
        kern::gemm(false, true, b * n, d, md, T(1), dfc1.ptr(), md,
                   params.at(pre + "mlp.fc1.w").ptr(), md, T(0), dmod2.ptr(), d);
        kern::gemm(true, false, d, md, b * n, T(1), blk.mod2.ptr(), d, dfc1.ptr(), md, T(1),
                   grads.at(pre + "mlp.fc1.w").ptr(), md);
        kern::bias_grad_acc(dfc1.ptr(), grads.at(pre + "mlp.fc1.b").ptr(), b * n, md);
        TensorT<T> dln2({b, n, d});
        modulate_slots_bwd(blk.ln2, blk.mod, 3, 4, dmod2, dln2, dmod, b, n, d);
        kern::layernorm_bwd_acc(blk.x_mid.ptr(), blk.mean2.ptr(), blk.rstd2.ptr(), dln2.ptr(),
                                dxmid.ptr(), b * n, d);

        // x_mid = x_in + gate1 * proj
        TensorT<T> dproj({b, n, d});
        gate_slot_bwd(blk.proj, blk.mod, 2, dxmid, dproj, dmod, b, n, d);
        TensorT<T> dxin = dxmid;
        TensorT<T> dattn({b, n, d});
        kern::gemm(false, true, b * n, d, d, T(1), dproj.ptr(), d,
                   params.at(pre + "attn.proj.w").ptr(), d, T(0), dattn.ptr(), d);
        kern::gemm(true, false, d, d, b * n, T(1), blk.attn.ptr(), d, dproj.ptr(), d, T(1),
                   grads.at(pre + "attn.proj.w").ptr(), d);
        kern::bias_grad_acc(dproj.ptr(), grads.at(pre + "attn.proj.b").ptr(), b * n, d);
        TensorT<T> dqkv({b, n, 3 * d});
        kern::attention_bwd(blk.qkv.ptr(), blk.probs.ptr(), dattn.ptr(), dqkv.ptr(), b, heads,
                            n, head_dim());
        TensorT<T> dmod1({b, n, d});
        kern::gemm(false, true, b * n, d, 3 * d, T(1), dqkv.ptr(), 3 * d,
                   params.at(pre + "attn.qkv.w").ptr(), 3 * d, T(0), dmod1.ptr(), d);
        kern::gemm(true, false, d, 3 * d, b * n, T(1), blk.mod1.ptr(), d, dqkv.ptr(), 3 * d,
                   T(1), grads.at(pre + "attn.qkv.w").ptr(), 3 * d);
        kern::bias_grad_acc(dqkv.ptr(), grads.at(pre + "attn.qkv.b").ptr(), b * n, 3 * d);
        TensorT<T> dln1({b, n, d});
        modulate_slots_bwd(blk.ln1, blk.mod, 0, 1, dmod1, dln1, dmod, b, n, d);
        kern::layernorm_bwd_acc(blk.x_in.ptr(), blk.mean1.ptr(), blk.rstd1.ptr(), dln1.ptr(),
                                dxin.ptr(), b * n, d);

        kern::gemm(false, true, b, d, 6 * d, T(1), dmod.ptr(), 6 * d,
                   params.at(pre + "ada.w").ptr(), 6 * d, T(1), dscond.ptr(), d);
        kern::gemm(true, false, d, 6 * d, b, T(1), scond.ptr(), d, dmod.ptr(), 6 * d, T(1),
                   grads.at(pre + "ada.w").ptr(), 6 * d);
        kern::bias_grad_acc(dmod.ptr(), grads.at(pre + "ada.b").ptr(), b, 6 * d);
        return dxin;
    }
};

}  // namespace pixdit
