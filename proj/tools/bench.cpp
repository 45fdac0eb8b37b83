// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0

// Serial reference kernels against the OpenMP/BLAS production kernels at
// training-realistic shapes.

#include <benchmark/benchmark.h>

#include <vector>

#include "pixdit/kernels.hpp"
#include "pixdit/rng.hpp"

using namespace pixdit;

namespace {

std::vector<float> randf(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = float(rng.normal());
    return v;
}

constexpr int64_t kRows = 64 * 64;  // batch x tokens at the desk-scale config
constexpr int64_t kDim  = 64;
constexpr int64_t kMlp  = 256;

void BM_gemm_serial(benchmark::State& state) {
    auto a = randf(kRows * kDim, 1), b = randf(kDim * kMlp, 2);
    std::vector<float> c(kRows * kMlp);
    for (auto _ : state) {
        kern::ref::gemm(false, false, kRows, kMlp, kDim, 1.0f, a.data(), kDim, b.data(),
                        kMlp, 0.0f, c.data(), kMlp);
        benchmark::ClobberMemory();
    }
}

void BM_gemm_parallel(benchmark::State& state) {
    auto a = randf(kRows * kDim, 1), b = randf(kDim * kMlp, 2);
    std::vector<float> c(kRows * kMlp);
    for (auto _ : state) {
        kern::gemm(false, false, kRows, kMlp, kDim, 1.0f, a.data(), kDim, b.data(), kMlp,
                   0.0f, c.data(), kMlp);
        benchmark::ClobberMemory();
    }
}

void BM_layernorm_serial(benchmark::State& state) {
    auto x = randf(kRows * kDim, 3);
    std::vector<float> y(kRows * kDim), mean(kRows), rstd(kRows);
    for (auto _ : state) {
        kern::ref::layernorm_fwd(x.data(), y.data(), mean.data(), rstd.data(), kRows, kDim,
                                 1e-6f);
        benchmark::ClobberMemory();
    }
}

void BM_layernorm_parallel(benchmark::State& state) {
    auto x = randf(kRows * kDim, 3);
    std::vector<float> y(kRows * kDim), mean(kRows), rstd(kRows);
    for (auto _ : state) {
        kern::layernorm_fwd(x.data(), y.data(), mean.data(), rstd.data(), kRows, kDim,
                            1e-6f);
        benchmark::ClobberMemory();
    }
}

void BM_attention_serial(benchmark::State& state) {
    const int64_t b = 8, h = 4, n = 72, hd = 16, d = h * hd;
    auto qkv = randf(b * n * 3 * d, 4);
    std::vector<float> probs(b * h * n * n), out(b * n * d);
    for (auto _ : state) {
        kern::ref::attention_fwd(qkv.data(), probs.data(), out.data(), b, h, n, hd);
        benchmark::ClobberMemory();
    }
}

void BM_attention_parallel(benchmark::State& state) {
    const int64_t b = 8, h = 4, n = 72, hd = 16, d = h * hd;
    auto qkv = randf(b * n * 3 * d, 4);
    std::vector<float> probs(b * h * n * n), out(b * n * d);
    for (auto _ : state) {
        kern::attention_fwd(qkv.data(), probs.data(), out.data(), b, h, n, hd);
        benchmark::ClobberMemory();
    }
}

void BM_gelu_serial(benchmark::State& state) {
    auto x = randf(kRows * kMlp, 5);
    std::vector<float> y(kRows * kMlp);
    for (auto _ : state) {
        for (int64_t i = 0; i < kRows * kMlp; ++i) y[size_t(i)] = kern::gelu_of(x[size_t(i)]);
        benchmark::ClobberMemory();
    }
}

void BM_gelu_parallel(benchmark::State& state) {
    auto x = randf(kRows * kMlp, 5);
    std::vector<float> y(kRows * kMlp);
    for (auto _ : state) {
        kern::gelu_fwd(x.data(), y.data(), kRows * kMlp);
        benchmark::ClobberMemory();
    }
}

void BM_cosine_serial(benchmark::State& state) {
    auto t = randf(kRows * 32, 6), p = randf(kRows * 32, 7);
    std::vector<float> sims(kRows);
    for (auto _ : state) {
        kern::ref::cosine_rows_fwd(t.data(), p.data(), sims.data(), kRows, 32, 1e-8f);
        benchmark::ClobberMemory();
    }
}

void BM_cosine_parallel(benchmark::State& state) {
    auto t = randf(kRows * 32, 6), p = randf(kRows * 32, 7);
    std::vector<float> sims(kRows);
    for (auto _ : state) {
        kern::cosine_rows_fwd(t.data(), p.data(), sims.data(), kRows, 32, 1e-8f);
        benchmark::ClobberMemory();
    }
}

void BM_resample_serial(benchmark::State& state) {
    auto src = randf(2 * 2 * 32, 8);
    std::vector<float> dst(8 * 8 * 32);
    for (auto _ : state) {
        kern::ref::bilinear_resample(src.data(), 2, 2, dst.data(), 8, 8, 32);
        benchmark::ClobberMemory();
    }
}

void BM_resample_parallel(benchmark::State& state) {
    auto src = randf(2 * 2 * 32, 8);
    std::vector<float> dst(8 * 8 * 32);
    for (auto _ : state) {
        kern::bilinear_resample(src.data(), 2, 2, dst.data(), 8, 8, 32);
        benchmark::ClobberMemory();
    }
}

BENCHMARK(BM_gemm_serial);
BENCHMARK(BM_gemm_parallel);
BENCHMARK(BM_layernorm_serial);
BENCHMARK(BM_layernorm_parallel);
BENCHMARK(BM_attention_serial);
BENCHMARK(BM_attention_parallel);
BENCHMARK(BM_gelu_serial);
BENCHMARK(BM_gelu_parallel);
BENCHMARK(BM_cosine_serial);
BENCHMARK(BM_cosine_parallel);
BENCHMARK(BM_resample_serial);
BENCHMARK(BM_resample_parallel);

}  // namespace

BENCHMARK_MAIN();
