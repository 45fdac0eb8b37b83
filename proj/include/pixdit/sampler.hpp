// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic ODE sampling: a Heun integrator over the learned velocity
// field, classifier-free guidance restricted to a timestep interval, and
// the terminal rule that replaces the last step's division by (1 - t) with
// the x-prediction itself.

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "pixdit/backbone.hpp"
#include "pixdit/config.hpp"
#include "pixdit/flow.hpp"
#include "pixdit/rng.hpp"

namespace pixdit {

// v_uncond + w * (v_cond - v_uncond) inside [lo, hi], v_cond outside.
// w == 1 short-circuits to v_cond so guidance-off runs are bit-identical to
// a sampler with guidance disabled.
template <typename T>
TensorT<T> guided_velocity(const TensorT<T>& v_cond, const TensorT<T>& v_uncond, double w,
                           double t, double lo, double hi) {
    check_same_shape(v_cond, v_uncond, "guided_velocity");
    if (w == 1.0 || t < lo || t > hi) return v_cond;
    TensorT<T> out(v_cond.shape);
    const int64_t n = out.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i)
        out[i] = v_uncond[i] + T(w) * (v_cond[i] - v_uncond[i]);
    return out;
}

struct SampleStats {
    int64_t integrator_steps = 0;
    int64_t model_evals = 0;
    // (evaluation time, backbone evaluations spent at it)
    std::vector<std::pair<double, int>> eval_log;
};

// The learned velocity field with guidance. Evaluates the backbone once per
// call at w == 1 or outside the interval, twice (conditional + null class)
// otherwise.
template <typename T>
class VelocityField {
public:
    VelocityField(const Backbone<T>& net, const ParamMap<T>& params,
                  std::vector<int> class_ids, double w, double lo, double hi,
                  SampleStats* stats = nullptr)
        : net_(net), params_(params), cond_ids_(std::move(class_ids)), w_(w), lo_(lo),
          hi_(hi), stats_(stats) {
        uncond_ids_.assign(cond_ids_.size(), int(net.config().num_classes));
    }

    // Guided x-prediction at (x, t). Velocity and x-prediction are affinely
    // related at fixed (x, t), so guiding either is equivalent.
    TensorT<T> x_pred(const TensorT<T>& x, T t) {
        const int64_t b = x.dim(0);
        std::vector<T> tb(b, t);
        typename Backbone<T>::Acts acts;
        net_.forward(params_, x, tb, cond_ids_, acts);
        TensorT<T> xp = acts.x_pred;
        int evals = 1;
        if (w_ != 1.0 && double(t) >= lo_ && double(t) <= hi_) {
            typename Backbone<T>::Acts acts_u;
            net_.forward(params_, x, tb, uncond_ids_, acts_u);
            const int64_t n = xp.numel();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i)
                xp[i] = acts_u.x_pred[i] + T(w_) * (xp[i] - acts_u.x_pred[i]);
            evals = 2;
        }
        if (stats_ != nullptr) {
            stats_->model_evals += evals;
            stats_->eval_log.emplace_back(double(t), evals);
        }
        return xp;
    }

    TensorT<T> operator()(const TensorT<T>& x, T t) {
        TensorT<T> xp = x_pred(x, t);
        return flow::xpred_to_velocity(xp, x, t);
    }

private:
    const Backbone<T>& net_;
    const ParamMap<T>& params_;
    std::vector<int> cond_ids_, uncond_ids_;
    double w_, lo_, hi_;
    SampleStats* stats_;
};

namespace detail {
template <typename T>
void check_finite(const TensorT<T>& v, const char* what, double t) {
    for (int64_t i = 0; i < v.numel(); ++i)
        if (!std::isfinite(double(v[i])))
            throw NumericalError(std::string(what) + ": non-finite field output at t = " +
                                 std::to_string(t));
}
}  // namespace detail

// One Heun step: k1 = f(x, t); k2 = f(x + dt*k1, t + dt);
// x' = x + dt/2 * (k1 + k2).
template <typename T, typename Field>
TensorT<T> heun_step(Field&& field, const TensorT<T>& x, T t, T dt) {
    if (!(dt > T(0))) throw DomainError("heun_step: dt must be positive");
    TensorT<T> k1 = field(x, t);
    check_same_shape(k1, x, "heun_step");
    detail::check_finite(k1, "heun_step", double(t));
    TensorT<T> xe(x.shape);
    const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) xe[i] = x[i] + dt * k1[i];
    TensorT<T> k2 = field(xe, t + dt);
    detail::check_finite(k2, "heun_step", double(t + dt));
    TensorT<T> out(x.shape);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = x[i] + (dt / T(2)) * (k1[i] + k2[i]);
    return out;
}

// Strictly increasing grid from 0 to 1 with `steps` segments.
template <typename T>
std::vector<T> linear_time_grid(int64_t steps) {
    if (steps < 1) throw ConfigError("time grid needs at least one step");
    std::vector<T> g(steps + 1);
    for (int64_t k = 0; k <= steps; ++k) g[k] = T(k) / T(steps);
    return g;
}

// Integrate x from grid[i0] to 1; the final segment consumes the guided
// x-prediction directly instead of dividing by (1 - t).
template <typename T>
TensorT<T> integrate_to_data(VelocityField<T>& field, TensorT<T> x, const std::vector<T>& grid,
                             size_t i0, SampleStats* stats) {
    if (grid.size() < 2 || i0 + 1 >= grid.size())
        throw InvalidInputError("integrate_to_data: empty grid segment");
    size_t k = i0;
    try {
        for (; k + 2 < grid.size(); ++k) {
            x = heun_step([&](const TensorT<T>& xx, T tt) { return field(xx, tt); }, x,
                          grid[k], grid[k + 1] - grid[k]);
            if (stats != nullptr) stats->integrator_steps += 1;
        }
        // terminal rule at the last grid point before t = 1
        x = field.x_pred(x, grid[grid.size() - 2]);
        if (stats != nullptr) stats->integrator_steps += 1;
        detail::check_finite(x, "integrate_to_data", double(grid[grid.size() - 2]));
    } catch (const NumericalError& e) {
        throw NumericalError("sampler failure at step " + std::to_string(k - i0) + ": " +
                             e.what());
    }
    return x;
}

// Draw noise, integrate the ODE over the linear grid, clamp to [-1, 1].
template <typename T>
TensorT<T> sample(const Backbone<T>& net, const ParamMap<T>& params,
                  const SamplerConfig& scfg, const std::vector<int>& class_ids, Rng& rng,
                  SampleStats* stats = nullptr) {
    scfg.validate();
    const ModelConfig& m = net.config();
    const int64_t b = static_cast<int64_t>(class_ids.size());
    if (b < 1) throw InvalidInputError("sample: no class ids given");
    TensorT<T> x({b, m.channels, m.image_size, m.image_size});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = T(rng.normal());
    VelocityField<T> field(net, params, class_ids, scfg.guidance_scale, scfg.interval_lo,
                           scfg.interval_hi, stats);
    auto grid = linear_time_grid<T>(scfg.steps);
    x = integrate_to_data(field, std::move(x), grid, 0, stats);
    const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) x[i] = std::clamp(x[i], T(-1), T(1));
    return x;
}

// Noise clean images to t0 and denoise them back along the remaining grid.
template <typename T>
TensorT<T> denoise_from_t(const Backbone<T>& net, const ParamMap<T>& params,
                          const TensorT<T>& images, T t0, const SamplerConfig& scfg,
                          const std::vector<int>& class_ids, Rng& rng,
                          SampleStats* stats = nullptr) {
    scfg.validate();
    if (!(t0 > T(0) && t0 <= T(1) - T(flow::kTimeGuard)))
        throw DomainError("denoise_from_t: t0 must lie in (0, 1 - guard]");
    TensorT<T> eps(images.shape);
    for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = T(rng.normal());
    TensorT<T> x = flow::interpolate(images, eps, t0);

    // remaining grid: t0 followed by the standard grid points above it
    std::vector<T> grid;
    grid.push_back(t0);
    for (T g : linear_time_grid<T>(scfg.steps))
        if (g > t0) grid.push_back(g);
    if (grid.back() != T(1)) grid.push_back(T(1));
    VelocityField<T> field(net, params, class_ids, scfg.guidance_scale, scfg.interval_lo,
                           scfg.interval_hi, stats);
    x = integrate_to_data(field, std::move(x), grid, 0, stats);
    const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) x[i] = std::clamp(x[i], T(-1), T(1));
    return x;
}

}  // namespace pixdit
