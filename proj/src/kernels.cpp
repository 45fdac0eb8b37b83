// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdit/kernels.hpp"

#include <cblas.h>
#include <omp.h>

#include <mutex>
#include <vector>

namespace pixdit::kern {

namespace {

// OpenBLAS is pinned to one internal thread; parallelism lives at the
// OpenMP level where output partitioning keeps results independent of the
// thread count.
void pin_blas_threads() {
    static std::once_flag once;
    std::call_once(once, [] { openblas_set_num_threads(1); });
}

template <typename T>
void cblas_call(bool ta, bool tb, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
                int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc) {
    auto at = ta ? CblasTrans : CblasNoTrans;
    auto bt = tb ? CblasTrans : CblasNoTrans;
    if constexpr (sizeof(T) == sizeof(float))
        cblas_sgemm(CblasRowMajor, at, bt, int(m), int(n), int(k), float(alpha),
                    reinterpret_cast<const float*>(a), int(lda),
                    reinterpret_cast<const float*>(b), int(ldb), float(beta),
                    reinterpret_cast<float*>(c), int(ldc));
    else
        cblas_dgemm(CblasRowMajor, at, bt, int(m), int(n), int(k), double(alpha),
                    reinterpret_cast<const double*>(a), int(lda),
                    reinterpret_cast<const double*>(b), int(ldb), double(beta),
                    reinterpret_cast<double*>(c), int(ldc));
}

template <typename T>
void gemm_impl(bool ta, bool tb, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
               int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc) {
    pin_blas_threads();
    const int64_t work = m * n * k;
    const int threads = omp_get_max_threads();
    if (threads <= 1 || work < (int64_t(1) << 18) || m < 2 * threads) {
        cblas_call(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
        return;
    }
    // Split output rows across threads; each slice is one serial BLAS call,
    // so every C element sees the same K-accumulation order regardless of
    // the thread count.
#pragma omp parallel
    {
        int tid = omp_get_thread_num();
        int nt  = omp_get_num_threads();
        int64_t r0 = m * tid / nt;
        int64_t r1 = m * (tid + 1) / nt;
        if (r1 > r0) {
            const T* a_slice = ta ? a + r0 : a + r0 * lda;
            cblas_call(ta, tb, r1 - r0, n, k, alpha, a_slice, lda, b, ldb, beta,
                       c + r0 * ldc, ldc);
        }
    }
}

template <typename T>
void attention_fwd_impl(const T* qkv, T* probs, T* out, int64_t b, int64_t h, int64_t n,
                        int64_t hd) {
    const int64_t d = h * hd, row = 3 * d;
    const T scl = T(1) / std::sqrt(T(hd));
    pin_blas_threads();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t hi = 0; hi < h; ++hi) {
            const T* q = qkv + bi * n * row + hi * hd;
            const T* k = q + d;
            const T* v = q + 2 * d;
            T* p = probs + (bi * h + hi) * n * n;
            cblas_call(false, true, n, n, hd, scl, q, row, k, row, T(0), p, n);
            for (int64_t i = 0; i < n; ++i) {
                T* pr = p + i * n;
                T mx = pr[0];
                for (int64_t j = 1; j < n; ++j) mx = pr[j] > mx ? pr[j] : mx;
                T sum = T(0);
                for (int64_t j = 0; j < n; ++j) {
                    pr[j] = std::exp(pr[j] - mx);
                    sum += pr[j];
                }
                T inv = T(1) / sum;
                for (int64_t j = 0; j < n; ++j) pr[j] *= inv;
            }
            cblas_call(false, false, n, hd, n, T(1), p, n, v, row, T(0),
                       out + bi * n * d + hi * hd, d);
        }
}

template <typename T>
void attention_bwd_impl(const T* qkv, const T* probs, const T* dout, T* dqkv, int64_t b,
                        int64_t h, int64_t n, int64_t hd) {
    const int64_t d = h * hd, row = 3 * d;
    const T scl = T(1) / std::sqrt(T(hd));
    pin_blas_threads();
    const int threads = omp_get_max_threads();
    std::vector<T> scratch(size_t(threads) * n * n);
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t hi = 0; hi < h; ++hi) {
            const T* q = qkv + bi * n * row + hi * hd;
            const T* k = q + d;
            const T* v = q + 2 * d;
            const T* p = probs + (bi * h + hi) * n * n;
            const T* do_ = dout + bi * n * d + hi * hd;
            T* dq = dqkv + bi * n * row + hi * hd;
            T* dk = dq + d;
            T* dv = dq + 2 * d;
            T* dp = scratch.data() + size_t(omp_get_thread_num()) * n * n;
            // dV = P^T dO
            cblas_call(true, false, n, hd, n, T(1), p, n, do_, d, T(1), dv, row);
            // dP = dO V^T, then softmax backward into dS (in place)
            cblas_call(false, true, n, n, hd, T(1), do_, d, v, row, T(0), dp, n);
            for (int64_t i = 0; i < n; ++i) {
                T dot = T(0);
                for (int64_t j = 0; j < n; ++j) dot += dp[i * n + j] * p[i * n + j];
                for (int64_t j = 0; j < n; ++j)
                    dp[i * n + j] = p[i * n + j] * (dp[i * n + j] - dot);
            }
            // dQ += scl * dS K ; dK += scl * dS^T Q
            cblas_call(false, false, n, hd, n, scl, dp, n, k, row, T(1), dq, row);
            cblas_call(true, false, n, hd, n, scl, dp, n, q, row, T(1), dk, row);
        }
}

}  // namespace

void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
          int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc) {
    gemm_impl(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, double alpha, const double* a,
          int64_t lda, const double* b, int64_t ldb, double beta, double* c, int64_t ldc) {
    gemm_impl(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <typename T>
void attention_fwd(const T* qkv, T* probs, T* out, int64_t b, int64_t h, int64_t n, int64_t hd) {
    attention_fwd_impl(qkv, probs, out, b, h, n, hd);
}

template <typename T>
void attention_bwd(const T* qkv, const T* probs, const T* dout, T* dqkv, int64_t b, int64_t h,
                   int64_t n, int64_t hd) {
    attention_bwd_impl(qkv, probs, dout, dqkv, b, h, n, hd);
}

template void attention_fwd<float>(const float*, float*, float*, int64_t, int64_t, int64_t, int64_t);
template void attention_fwd<double>(const double*, double*, double*, int64_t, int64_t, int64_t, int64_t);
template void attention_bwd<float>(const float*, const float*, const float*, float*, int64_t, int64_t, int64_t, int64_t);
template void attention_bwd<double>(const double*, const double*, const double*, double*, int64_t, int64_t, int64_t, int64_t);

}  // namespace pixdit::kern
