// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0

// Parallel kernels against their serial references, and finite-difference
// checks of every backward kernel in double precision.

#include <doctest.h>
#include <omp.h>

#include <cmath>
#include <vector>

#include "pixdit/kernels.hpp"
#include "pixdit/rng.hpp"

using namespace pixdit;

namespace {

std::vector<double> randn(Rng& rng, size_t n, double std = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal() * std;
    return v;
}

// Central finite difference of scalar(fwd(x)) with respect to x[i].
template <typename Fwd>
double fd(std::vector<double>& x, size_t i, Fwd fwd, double h = 1e-6) {
    double keep = x[i];
    x[i] = keep + h;
    double up = fwd();
    x[i] = keep - h;
    double dn = fwd();
    x[i] = keep;
    return (up - dn) / (2 * h);
}

bool close_rel(double a, double b, double tol) {
    double scale = std::max({std::fabs(a), std::fabs(b), 1e-8});
    return std::fabs(a - b) / scale <= tol;
}

}  // namespace

TEST_CASE("gemm matches serial reference for all transpose combos") {
    Rng rng(7);
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            int64_t m = 33, n = 27, k = 41;
            auto a = randn(rng, size_t((ta ? k : m) * (ta ? m : k)));
            auto b = randn(rng, size_t((tb ? n : k) * (tb ? k : n)));
            std::vector<double> c1(m * n, 0.5), c2(m * n, 0.5);
            int64_t lda = ta ? m : k, ldb = tb ? k : n;
            kern::gemm(ta, tb, m, n, k, 1.7, a.data(), lda, b.data(), ldb, 0.3, c1.data(), n);
            kern::ref::gemm(ta, tb, m, n, k, 1.7, a.data(), lda, b.data(), ldb, 0.3,
                            c2.data(), n);
            double worst = 0;
            for (int64_t i = 0; i < m * n; ++i)
                worst = std::max(worst, std::fabs(c1[i] - c2[i]));
            CHECK(worst < 1e-10);
        }
}

TEST_CASE("gemm result independent of thread count") {
    Rng rng(8);
    int64_t m = 256, n = 96, k = 64;
    auto a = randn(rng, m * k);
    auto b = randn(rng, k * n);
    std::vector<double> c1(m * n), c2(m * n);
    int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    kern::gemm(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, c1.data(), n);
    omp_set_num_threads(saved);
    kern::gemm(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, c2.data(), n);
    CHECK(c1 == c2);
}

TEST_CASE("layernorm forward matches reference and backward matches FD") {
    Rng rng(11);
    const int64_t rows = 6, c = 13;
    auto x = randn(rng, rows * c);
    std::vector<double> y1(rows * c), y2(rows * c), mean(rows), rstd(rows);
    kern::layernorm_fwd(x.data(), y1.data(), mean.data(), rstd.data(), rows, c, 1e-6);
    std::vector<double> m2(rows), r2(rows);
    kern::ref::layernorm_fwd(x.data(), y2.data(), m2.data(), r2.data(), rows, c, 1e-6);
    for (int64_t i = 0; i < rows * c; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-12));

    // scalar objective: weighted sum of outputs
    auto w = randn(rng, rows * c);
    auto objective = [&] {
        std::vector<double> y(rows * c), mm(rows), rr(rows);
        kern::layernorm_fwd(x.data(), y.data(), mm.data(), rr.data(), rows, c, 1e-6);
        double s = 0;
        for (int64_t i = 0; i < rows * c; ++i) s += w[i] * y[i];
        return s;
    };
    std::vector<double> dx(rows * c, 0.0);
    kern::layernorm_bwd_acc(x.data(), mean.data(), rstd.data(), w.data(), dx.data(), rows, c);
    for (size_t i : {size_t(0), size_t(17), size_t(40), size_t(rows * c - 1)}) {
        double g = fd(x, i, objective);
        CHECK(close_rel(g, dx[i], 1e-6));
    }
}

TEST_CASE("attention forward matches reference, backward matches FD") {
    Rng rng(13);
    const int64_t b = 2, h = 2, n = 5, hd = 4, d = h * hd;
    auto qkv = randn(rng, b * n * 3 * d);
    std::vector<double> probs1(b * h * n * n), probs2(b * h * n * n);
    std::vector<double> out1(b * n * d), out2(b * n * d);
    kern::attention_fwd(qkv.data(), probs1.data(), out1.data(), b, h, n, hd);
    kern::ref::attention_fwd(qkv.data(), probs2.data(), out2.data(), b, h, n, hd);
    for (size_t i = 0; i < out1.size(); ++i)
        CHECK(out1[i] == doctest::Approx(out2[i]).epsilon(1e-10));

    auto w = randn(rng, b * n * d);
    auto objective = [&] {
        std::vector<double> p(b * h * n * n), o(b * n * d);
        kern::attention_fwd(qkv.data(), p.data(), o.data(), b, h, n, hd);
        double s = 0;
        for (size_t i = 0; i < o.size(); ++i) s += w[i] * o[i];
        return s;
    };
    std::vector<double> dqkv(qkv.size(), 0.0);
    kern::attention_bwd(qkv.data(), probs1.data(), w.data(), dqkv.data(), b, h, n, hd);
    for (size_t i = 0; i < qkv.size(); i += 23) {
        double g = fd(qkv, i, objective);
        CHECK(close_rel(g, dqkv[i], 1e-5));
    }
}

TEST_CASE("activation backward kernels match FD") {
    Rng rng(17);
    const int64_t n = 64;
    auto x = randn(rng, n);
    auto w = randn(rng, n);

    SUBCASE("gelu") {
        auto objective = [&] {
            std::vector<double> y(n);
            kern::gelu_fwd(x.data(), y.data(), n);
            double s = 0;
            for (int64_t i = 0; i < n; ++i) s += w[i] * y[i];
            return s;
        };
        std::vector<double> dx(n);
        kern::gelu_bwd(x.data(), w.data(), dx.data(), n);
        for (size_t i = 0; i < size_t(n); i += 7) CHECK(close_rel(fd(x, i, objective), dx[i], 1e-6));
    }
    SUBCASE("silu") {
        auto objective = [&] {
            std::vector<double> y(n);
            kern::silu_fwd(x.data(), y.data(), n);
            double s = 0;
            for (int64_t i = 0; i < n; ++i) s += w[i] * y[i];
            return s;
        };
        std::vector<double> dx(n, 0.0);
        kern::silu_bwd_acc(x.data(), w.data(), dx.data(), n);
        for (size_t i = 0; i < size_t(n); i += 7) CHECK(close_rel(fd(x, i, objective), dx[i], 1e-6));
    }
}

TEST_CASE("cosine rows: bounds, known values, FD, reference agreement") {
    Rng rng(19);
    const int64_t rows = 40, c = 9;
    auto t = randn(rng, rows * c);
    auto p = randn(rng, rows * c);
    std::vector<double> s1(rows), s2(rows);
    kern::cosine_rows_fwd(t.data(), p.data(), s1.data(), rows, c, 1e-8);
    kern::ref::cosine_rows_fwd(t.data(), p.data(), s2.data(), rows, c, 1e-8);
    for (int64_t r = 0; r < rows; ++r) {
        CHECK(s1[r] == doctest::Approx(s2[r]).epsilon(1e-12));
        CHECK(s1[r] >= -1.0);
        CHECK(s1[r] <= 1.0);
    }

    auto w = randn(rng, rows);
    auto objective = [&] {
        std::vector<double> s(rows);
        kern::cosine_rows_fwd(t.data(), p.data(), s.data(), rows, c, 1e-8);
        double acc = 0;
        for (int64_t r = 0; r < rows; ++r) acc += w[r] * s[r];
        return acc;
    };
    std::vector<double> dp(rows * c, 0.0);
    kern::cosine_rows_bwd(t.data(), p.data(), w.data(), dp.data(), rows, c, 1e-8);
    for (size_t i = 0; i < size_t(rows * c); i += 31)
        CHECK(close_rel(fd(p, i, objective), dp[i], 1e-5));

    SUBCASE("zero prediction vector is safe") {
        std::vector<double> pz(rows * c, 0.0), s(rows), dpz(rows * c, 0.0);
        kern::cosine_rows_fwd(t.data(), pz.data(), s.data(), rows, c, 1e-8);
        for (int64_t r = 0; r < rows; ++r) CHECK(s[r] == 0.0);
        kern::cosine_rows_bwd(t.data(), pz.data(), w.data(), dpz.data(), rows, c, 1e-8);
        for (double g : dpz) CHECK(std::isfinite(g));
    }
}

TEST_CASE("im2patch / patch2im are inverse layouts") {
    Rng rng(23);
    const int64_t b = 2, c = 3, hw = 8, p = 4;
    auto img = randn(rng, b * c * hw * hw);
    std::vector<double> rows(img.size()), back(img.size());
    kern::im2patch(img.data(), rows.data(), b, c, hw, p);
    kern::patch2im(rows.data(), back.data(), b, c, hw, p);
    CHECK(img == back);
}

TEST_CASE("bilinear resample matches direct separable oracle") {
    Rng rng(29);
    const int64_t rs = 4, cs = 4, rd = 8, cd = 8, c = 3;
    auto src = randn(rng, rs * cs * c);
    std::vector<double> dst(rd * cd * c);
    kern::bilinear_resample(src.data(), rs, cs, dst.data(), rd, cd, c);

    // independent oracle: interpolate rows first, then columns, scalar loops
    std::vector<double> tmp(rs * cd * c);
    for (int64_t r = 0; r < rs; ++r)
        for (int64_t col = 0; col < cd; ++col)
            for (int64_t j = 0; j < c; ++j) {
                double fc = double(col) * double(cs - 1) / double(cd - 1);
                int64_t c0 = int64_t(fc), c1 = std::min(c0 + 1, cs - 1);
                double w = fc - double(c0);
                tmp[(r * cd + col) * c + j] =
                    (1 - w) * src[(r * cs + c0) * c + j] + w * src[(r * cs + c1) * c + j];
            }
    for (int64_t r = 0; r < rd; ++r)
        for (int64_t col = 0; col < cd; ++col)
            for (int64_t j = 0; j < c; ++j) {
                double fr = double(r) * double(rs - 1) / double(rd - 1);
                int64_t r0 = int64_t(fr), r1 = std::min(r0 + 1, rs - 1);
                double w = fr - double(r0);
                double want =
                    (1 - w) * tmp[(r0 * cd + col) * c + j] + w * tmp[(r1 * cd + col) * c + j];
                CHECK(dst[(r * cd + col) * c + j] == doctest::Approx(want).epsilon(1e-12));
            }

    SUBCASE("identity when shapes match") {
        std::vector<double> same(rs * cs * c);
        kern::bilinear_resample(src.data(), rs, cs, same.data(), rs, cs, c);
        CHECK(same == src);
    }
}

TEST_CASE("modulate and gate backward match FD") {
    Rng rng(31);
    const int64_t b = 3, n = 4, c = 5;
    auto x = randn(rng, b * n * c);
    auto shift = randn(rng, b * c);
    auto scale = randn(rng, b * c);
    auto w = randn(rng, b * n * c);

    auto objective = [&] {
        std::vector<double> y(b * n * c);
        kern::modulate_fwd(x.data(), shift.data(), scale.data(), y.data(), b, n, c);
        double s = 0;
        for (size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
        return s;
    };
    std::vector<double> dx(b * n * c), dsh(b * c, 0.0), dsc(b * c, 0.0);
    kern::modulate_bwd(x.data(), scale.data(), w.data(), dx.data(), dsh.data(), dsc.data(),
                       b, n, c);
    for (size_t i = 0; i < size_t(b * n * c); i += 9)
        CHECK(close_rel(fd(x, i, objective), dx[i], 1e-6));
    for (size_t i = 0; i < size_t(b * c); i += 4)
        CHECK(close_rel(fd(shift, i, objective), dsh[i], 1e-6));
    for (size_t i = 0; i < size_t(b * c); i += 4)
        CHECK(close_rel(fd(scale, i, objective), dsc[i], 1e-6));
}
