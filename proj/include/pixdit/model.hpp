// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Ties the denoiser and the alignment branch into the combined training
// objective: total = denoising loss + lambda * alignment loss. All per-step
// randomness is drawn up front into StepDraws so a loss evaluation is a pure
// function of (params, batch, draws) — which is what the finite-difference
// gradient checks and the reproducibility guarantees rely on.

#include <vector>

#include "pixdit/alignment.hpp"
#include "pixdit/backbone.hpp"
#include "pixdit/config.hpp"
#include "pixdit/flow.hpp"

namespace pixdit {

template <typename T>
struct StepDraws {
    std::vector<T> t;               // per-sample timesteps in [0, 1 - guard]
    TensorT<T> eps;                 // standard-normal noise, image-shaped
    std::vector<int> class_ids;     // after classifier-free-guidance dropout
    PatchMask mask;                 // mta only
    bool has_mask = false;
};

// Fixed draw order: timesteps, noise, class dropout, mask.
template <typename T>
StepDraws<T> draw_step(const TensorT<T>& x, const std::vector<int>& labels,
                       const ModelConfig& mcfg, const AlignmentConfig& acfg,
                       double class_drop, Rng& rng) {
    const int64_t b = x.dim(0);
    if (b < 1) throw InvalidInputError("draw_step: empty batch");
    if (static_cast<int64_t>(labels.size()) != b)
        throw InvalidInputError("draw_step: label count does not match batch");
    StepDraws<T> d;
    d.t = flow::sample_timesteps<T>(b, rng);
    d.eps = TensorT<T>(x.shape);
    for (int64_t i = 0; i < d.eps.numel(); ++i) d.eps[i] = T(rng.normal());
    d.class_ids = labels;
    for (int64_t i = 0; i < b; ++i)
        if (rng.bernoulli(class_drop)) d.class_ids[i] = int(mcfg.num_classes);  // null class
    if (acfg.variant == "mta") {
        d.mask = sample_mask(b, mcfg.n_patch(), acfg.mask_ratio, rng);
        d.has_mask = true;
    }
    return d;
}

struct LossWeights {
    double denoise = 1.0;  // backward-only multipliers, used by gradient probes
    double align   = 1.0;
};

template <typename T>
struct LossResult {
    T total   = T(0);
    T denoise = T(0);
    T align   = T(0);
    bool align_active = false;
};

template <typename T>
class DiffusionModel {
public:
    explicit DiffusionModel(const RunConfig& cfg)
        : cfg_(cfg), net_(cfg.model), branch_(cfg.alignment, cfg.model) {}

    const Backbone<T>& backbone() const { return net_; }
    const AlignmentBranch<T>& branch() const { return branch_; }
    const RunConfig& config() const { return cfg_; }

    ParamMap<T> init_params(Rng& rng) const {
        ParamMap<T> p = net_.init_params(rng);
        branch_.init_params(p, rng);
        return p;
    }

    // targets must match [B, n_patch, feature_dim] when the branch is active
    // (ignored otherwise). grads, when given, receives accumulated gradients
    // of w.denoise * l_denoise + w.align * lambda * l_align.
    LossResult<T> compute_losses(const ParamMap<T>& params, const TensorT<T>& x_clean,
                                 const TensorT<T>& targets, const StepDraws<T>& draws,
                                 typename Backbone<T>::Acts& bacts,
                                 typename AlignmentBranch<T>::Acts& aacts,
                                 ParamMap<T>* grads, LossWeights w = {}) const {
        TensorT<T> x_t = flow::interpolate_batch(x_clean, draws.eps, draws.t);
        net_.forward(params, x_t, draws.t, draws.class_ids, bacts);

        LossResult<T> out;
        out.denoise = flow::denoising_loss(bacts.x_pred, x_t, x_clean, draws.eps, draws.t);
        out.align_active = branch_.active();
        if (out.align_active) {
            const PatchMask* mask = draws.has_mask ? &draws.mask : nullptr;
            out.align = branch_.loss_forward(params, net_.h_align_grid(bacts), bacts.scond,
                                             targets, mask, aacts);
        }
        out.total = total_loss(out.denoise, out.align, cfg_.alignment.lambda,
                               out.align_active);
        if (!std::isfinite(double(out.total)))
            throw NumericalError("compute_losses: non-finite loss");

        if (grads != nullptr) {
            TensorT<T> dx_pred =
                flow::denoising_loss_grad(bacts.x_pred, x_t, x_clean, draws.eps, draws.t);
            if (w.denoise != 1.0)
                kern::scale_inplace(dx_pred.ptr(), T(w.denoise), dx_pred.numel());
            if (out.align_active) {
                TensorT<T> dh_align, dscond({bacts.batch, cfg_.model.hidden_dim});
                branch_.loss_backward(params, aacts, T(w.align * cfg_.alignment.lambda),
                                      dh_align, dscond, *grads);
                net_.backward(params, bacts, dx_pred, &dh_align, *grads, &dscond);
            } else {
                net_.backward(params, bacts, dx_pred, nullptr, *grads);
            }
        }
        return out;
    }

private:
    RunConfig cfg_;
    Backbone<T> net_;
    AlignmentBranch<T> branch_;
};

}  // namespace pixdit
