// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Linear-interpolant flow matching: x_t = t*x + (1-t)*eps, target velocity
// v = x - eps, and the x-prediction <-> velocity conversion with its
// singularity guard at t = 1.

#include <vector>

#include "pixdit/rng.hpp"
#include "pixdit/tensor.hpp"

namespace pixdit::flow {

// Timesteps are sampled in [0, 1 - kTimeGuard]; the velocity conversion
// divides by (1 - t) and refuses t beyond the guard.
inline constexpr double kTimeGuard = 1e-3;

template <typename T>
TensorT<T> interpolate(const TensorT<T>& x, const TensorT<T>& eps, T t) {
    check_same_shape(x, eps, "interpolate");
    if (!(t >= T(0) && t <= T(1))) throw DomainError("interpolate: t outside [0,1]");
    TensorT<T> out(x.shape);
    const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = t * x[i] + (T(1) - t) * eps[i];
    return out;
}

// Per-sample timesteps over a batched tensor whose leading dim is the batch.
template <typename T>
TensorT<T> interpolate_batch(const TensorT<T>& x, const TensorT<T>& eps,
                             const std::vector<T>& t) {
    check_same_shape(x, eps, "interpolate");
    if (x.ndim() < 1 || x.dim(0) != static_cast<int64_t>(t.size()))
        throw InvalidInputError("interpolate: batch size does not match t count");
    for (T ti : t)
        if (!(ti >= T(0) && ti <= T(1))) throw DomainError("interpolate: t outside [0,1]");
    TensorT<T> out(x.shape);
    const int64_t b = x.dim(0), per = x.numel() / (b > 0 ? b : 1);
#pragma omp parallel for schedule(static)
    for (int64_t bi = 0; bi < b; ++bi) {
        T ti = t[bi];
        for (int64_t i = 0; i < per; ++i) {
            int64_t idx = bi * per + i;
            out[idx] = ti * x[idx] + (T(1) - ti) * eps[idx];
        }
    }
    return out;
}

template <typename T>
TensorT<T> target_velocity(const TensorT<T>& x, const TensorT<T>& eps) {
    check_same_shape(x, eps, "target_velocity");
    TensorT<T> v(x.shape);
    const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) v[i] = x[i] - eps[i];
    return v;
}

template <typename T>
void check_time_guard(T t) {
    if (!(t <= T(1) - T(kTimeGuard)))
        throw SingularityError("xpred_to_velocity: t beyond 1 - guard; use x_pred directly");
}

template <typename T>
TensorT<T> xpred_to_velocity(const TensorT<T>& x_pred, const TensorT<T>& x_t, T t) {
    check_same_shape(x_pred, x_t, "xpred_to_velocity");
    check_time_guard(t);
    TensorT<T> v(x_pred.shape);
    const T inv = T(1) / (T(1) - t);
    const int64_t n = v.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) v[i] = (x_pred[i] - x_t[i]) * inv;
    return v;
}

// Mean over batch and elements of |v_tilde - v|^2 with per-sample t.
template <typename T>
T denoising_loss(const TensorT<T>& x_pred, const TensorT<T>& x_t, const TensorT<T>& x,
                 const TensorT<T>& eps, const std::vector<T>& t) {
    check_same_shape(x_pred, x_t, "denoising_loss");
    check_same_shape(x, eps, "denoising_loss");
    check_same_shape(x_pred, x, "denoising_loss");
    const int64_t b = x.dim(0);
    if (b != static_cast<int64_t>(t.size()))
        throw InvalidInputError("denoising_loss: batch size does not match t count");
    for (T ti : t) check_time_guard(ti);
    const int64_t per = x.numel() / b;
    double acc = 0.0;
    for (int64_t bi = 0; bi < b; ++bi) {
        const T inv = T(1) / (T(1) - t[bi]);
        double local = 0.0;
        for (int64_t i = 0; i < per; ++i) {
            int64_t idx = bi * per + i;
            T vt = (x_pred[idx] - x_t[idx]) * inv;
            T v  = x[idx] - eps[idx];
            double d = double(vt) - double(v);
            local += d * d;
        }
        acc += local;
    }
    return T(acc / double(x.numel()));
}

// d(denoising_loss)/d(x_pred); same reduction convention as the loss.
template <typename T>
TensorT<T> denoising_loss_grad(const TensorT<T>& x_pred, const TensorT<T>& x_t,
                               const TensorT<T>& x, const TensorT<T>& eps,
                               const std::vector<T>& t) {
    check_same_shape(x_pred, x, "denoising_loss_grad");
    const int64_t b = x.dim(0);
    for (T ti : t) check_time_guard(ti);
    const int64_t per = x.numel() / b;
    TensorT<T> g(x.shape);
    const T norm = T(2) / T(x.numel());
#pragma omp parallel for schedule(static)
    for (int64_t bi = 0; bi < b; ++bi) {
        const T inv = T(1) / (T(1) - t[bi]);
        for (int64_t i = 0; i < per; ++i) {
            int64_t idx = bi * per + i;
            T vt = (x_pred[idx] - x_t[idx]) * inv;
            T v  = x[idx] - eps[idx];
            g[idx] = norm * (vt - v) * inv;
        }
    }
    return g;
}

// Uniform draws in [0, 1 - guard]. The only stateful piece of this module
// is the caller's generator.
template <typename T>
std::vector<T> sample_timesteps(int64_t batch_size, Rng& rng) {
    if (batch_size < 1) throw InvalidInputError("sample_timesteps: batch_size must be >= 1");
    std::vector<T> t(batch_size);
    for (int64_t i = 0; i < batch_size; ++i)
        t[i] = T(rng.uniform() * (1.0 - kTimeGuard));
    return t;
}

}  // namespace pixdit::flow
