// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Data-parallel primitives behind the model code. Every kernel here has a
// serial twin in kern::ref used as the oracle in tests and as the baseline
// in the benchmark target. The parallel kernels are written so results do
// not depend on the number of OpenMP threads: each output element is
// produced by exactly one thread with a fixed accumulation order, and
// scalar reductions accumulate serially.

#include <cmath>
#include <cstdint>

namespace pixdit::kern {

// C = alpha * op(A) * op(B) + beta * C, row-major. op(X) = X or X^T.
// lda/ldb are the leading dimensions of the *stored* matrices.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          float alpha, const float* a, int64_t lda, const float* b, int64_t ldb,
          float beta, float* c, int64_t ldc);
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
          double alpha, const double* a, int64_t lda, const double* b, int64_t ldb,
          double beta, double* c, int64_t ldc);

// ---------------------------------------------------------------- helpers

template <typename T>
inline T silu_of(T x) {
    T s = T(1) / (T(1) + std::exp(-x));
    return x * s;
}

// tanh through exp: the libm tanh is an order of magnitude slower than exp
// on this toolchain and these loops live on the training hot path.
template <typename T>
inline T tanh_via_exp(T u) {
    T a = u < T(0) ? -u : u;
    T e = std::exp(T(-2) * a);
    T t = (T(1) - e) / (T(1) + e);
    return u < T(0) ? -t : t;
}

template <typename T>
inline T gelu_of(T x) {
    const T c = T(0.7978845608028654);  // sqrt(2/pi)
    T u = c * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + tanh_via_exp(u));
}

// ------------------------------------------------------------ elementwise

template <typename T>
void add_bias(T* y, const T* bias, int64_t rows, int64_t c) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        T* yr = y + r * c;
        for (int64_t j = 0; j < c; ++j) yr[j] += bias[j];
    }
}

// db += column sums of dy. Parallel over channels, serial over rows.
template <typename T>
void bias_grad_acc(const T* dy, T* db, int64_t rows, int64_t c) {
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < c; ++j) {
        T acc = T(0);
        for (int64_t r = 0; r < rows; ++r) acc += dy[r * c + j];
        db[j] += acc;
    }
}

template <typename T>
void silu_fwd(const T* x, T* y, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = silu_of(x[i]);
}

template <typename T>
void silu_bwd_acc(const T* x, const T* dy, T* dx, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        T s = T(1) / (T(1) + std::exp(-x[i]));
        dx[i] += dy[i] * s * (T(1) + x[i] * (T(1) - s));
    }
}

template <typename T>
void gelu_fwd(const T* x, T* y, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = gelu_of(x[i]);
}

template <typename T>
void gelu_bwd(const T* x, const T* dy, T* dx, int64_t n) {
    const T c = T(0.7978845608028654);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        T xi  = x[i];
        T u   = c * (xi + T(0.044715) * xi * xi * xi);
        T th  = tanh_via_exp(u);
        T du  = c * (T(1) + T(3) * T(0.044715) * xi * xi);
        dx[i] = dy[i] * (T(0.5) * (T(1) + th) + T(0.5) * xi * (T(1) - th * th) * du);
    }
}

template <typename T>
void axpy(T a, const T* x, T* y, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
void scale_inplace(T* x, T a, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) x[i] *= a;
}

// Serial double accumulation: deterministic and precise enough for norms.
template <typename T>
double reduce_sumsq(const T* x, int64_t n) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]) * static_cast<double>(x[i]);
    return acc;
}

// ------------------------------------------------------------- layer norm

// Affine-free layer norm over the last dimension.
template <typename T>
void layernorm_fwd(const T* x, T* y, T* mean, T* rstd, int64_t rows, int64_t c, T eps) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x + r * c;
        T m = T(0);
        for (int64_t j = 0; j < c; ++j) m += xr[j];
        m /= T(c);
        T v = T(0);
        for (int64_t j = 0; j < c; ++j) {
            T d = xr[j] - m;
            v += d * d;
        }
        v /= T(c);
        T rs = T(1) / std::sqrt(v + eps);
        mean[r] = m;
        rstd[r] = rs;
        T* yr = y + r * c;
        for (int64_t j = 0; j < c; ++j) yr[j] = (xr[j] - m) * rs;
    }
}

template <typename T>
void layernorm_bwd_acc(const T* x, const T* mean, const T* rstd, const T* dy, T* dx,
                       int64_t rows, int64_t c) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr  = x + r * c;
        const T* dyr = dy + r * c;
        T m = mean[r], rs = rstd[r];
        T dy_mean = T(0), dyxhat_mean = T(0);
        for (int64_t j = 0; j < c; ++j) {
            T xhat = (xr[j] - m) * rs;
            dy_mean += dyr[j];
            dyxhat_mean += dyr[j] * xhat;
        }
        dy_mean /= T(c);
        dyxhat_mean /= T(c);
        T* dxr = dx + r * c;
        for (int64_t j = 0; j < c; ++j) {
            T xhat = (xr[j] - m) * rs;
            dxr[j] += rs * (dyr[j] - dy_mean - xhat * dyxhat_mean);
        }
    }
}

// ------------------------------------------------- AdaLN modulation pieces

// y = x * (1 + scale[b]) + shift[b], rows grouped per batch element.
template <typename T>
void modulate_fwd(const T* x, const T* shift, const T* scale, T* y,
                  int64_t b, int64_t n, int64_t c) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t t = 0; t < n; ++t) {
            const T* xr = x + (bi * n + t) * c;
            T* yr       = y + (bi * n + t) * c;
            const T* sh = shift + bi * c;
            const T* sc = scale + bi * c;
            for (int64_t j = 0; j < c; ++j) yr[j] = xr[j] * (T(1) + sc[j]) + sh[j];
        }
}

template <typename T>
void modulate_bwd(const T* x, const T* scale, const T* dy, T* dx, T* dshift_acc,
                  T* dscale_acc, int64_t b, int64_t n, int64_t c) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t t = 0; t < n; ++t) {
            const T* dyr = dy + (bi * n + t) * c;
            const T* sc  = scale + bi * c;
            T* dxr       = dx + (bi * n + t) * c;
            for (int64_t j = 0; j < c; ++j) dxr[j] = dyr[j] * (T(1) + sc[j]);
        }
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t j = 0; j < c; ++j) {
            T dsh = T(0), dsc = T(0);
            for (int64_t t = 0; t < n; ++t) {
                T d = dy[(bi * n + t) * c + j];
                dsh += d;
                dsc += d * x[(bi * n + t) * c + j];
            }
            dshift_acc[bi * c + j] += dsh;
            dscale_acc[bi * c + j] += dsc;
        }
}

// x += gate[b] * h (the zero-initialized AdaLN-Zero gate path).
template <typename T>
void gate_residual_fwd(T* x, const T* h, const T* gate, int64_t b, int64_t n, int64_t c) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t t = 0; t < n; ++t) {
            T* xr       = x + (bi * n + t) * c;
            const T* hr = h + (bi * n + t) * c;
            const T* g  = gate + bi * c;
            for (int64_t j = 0; j < c; ++j) xr[j] += g[j] * hr[j];
        }
}

template <typename T>
void gate_residual_bwd(const T* h, const T* gate, const T* dx, T* dh, T* dgate_acc,
                       int64_t b, int64_t n, int64_t c) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t t = 0; t < n; ++t) {
            const T* dxr = dx + (bi * n + t) * c;
            const T* g   = gate + bi * c;
            T* dhr       = dh + (bi * n + t) * c;
            for (int64_t j = 0; j < c; ++j) dhr[j] = dxr[j] * g[j];
        }
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t j = 0; j < c; ++j) {
            T acc = T(0);
            for (int64_t t = 0; t < n; ++t)
                acc += dx[(bi * n + t) * c + j] * h[(bi * n + t) * c + j];
            dgate_acc[bi * c + j] += acc;
        }
}

// --------------------------------------------------------------- attention

// Multi-head self-attention over packed qkv [b, n, 3*h*hd].
// probs [b, h, n, n] is kept for the backward pass.
template <typename T>
void attention_fwd(const T* qkv, T* probs, T* out, int64_t b, int64_t h, int64_t n, int64_t hd);

template <typename T>
void attention_bwd(const T* qkv, const T* probs, const T* dout, T* dqkv,
                   int64_t b, int64_t h, int64_t n, int64_t hd);

// ------------------------------------------------------------ patch layout

// [b, c, hw, hw] image -> [b, np, p*p*c] patch rows, channel-major per patch.
template <typename T>
void im2patch(const T* img, T* rows, int64_t b, int64_t c, int64_t hw, int64_t p) {
    int64_t g = hw / p, np = g * g, pd = p * p * c;
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t pi = 0; pi < np; ++pi) {
            int64_t gr = pi / g, gc = pi % g;
            T* out = rows + (bi * np + pi) * pd;
            int64_t idx = 0;
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t py = 0; py < p; ++py)
                    for (int64_t px = 0; px < p; ++px)
                        out[idx++] = img[((bi * c + ch) * hw + gr * p + py) * hw + gc * p + px];
        }
}

template <typename T>
void patch2im(const T* rows, T* img, int64_t b, int64_t c, int64_t hw, int64_t p) {
    int64_t g = hw / p, np = g * g, pd = p * p * c;
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t pi = 0; pi < np; ++pi) {
            int64_t gr = pi / g, gc = pi % g;
            const T* in = rows + (bi * np + pi) * pd;
            int64_t idx = 0;
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t py = 0; py < p; ++py)
                    for (int64_t px = 0; px < p; ++px)
                        img[((bi * c + ch) * hw + gr * p + py) * hw + gc * p + px] = in[idx++];
        }
}

// --------------------------------------------------------- cosine alignment

// sim[r] = <tgt_r, pred_r> / ((|tgt_r| + eps) * (|pred_r| + eps))
template <typename T>
void cosine_rows_fwd(const T* tgt, const T* pred, T* sim, int64_t rows, int64_t c, T eps) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        const T* t = tgt + r * c;
        const T* p = pred + r * c;
        T dot = T(0), nt = T(0), np = T(0);
        for (int64_t j = 0; j < c; ++j) {
            dot += t[j] * p[j];
            nt += t[j] * t[j];
            np += p[j] * p[j];
        }
        sim[r] = dot / ((std::sqrt(nt) + eps) * (std::sqrt(np) + eps));
    }
}

template <typename T>
void cosine_rows_bwd(const T* tgt, const T* pred, const T* dsim, T* dpred_acc,
                     int64_t rows, int64_t c, T eps) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        const T* t = tgt + r * c;
        const T* p = pred + r * c;
        T dot = T(0), nt2 = T(0), np2 = T(0);
        for (int64_t j = 0; j < c; ++j) {
            dot += t[j] * p[j];
            nt2 += t[j] * t[j];
            np2 += p[j] * p[j];
        }
        T nt = std::sqrt(nt2), np = std::sqrt(np2);
        T denom = (nt + eps) * (np + eps);
        T s = dot / denom;
        T g = dsim[r];
        T* dp = dpred_acc + r * c;
        if (np > T(0)) {
            T k = s / (np * (np + eps));
            for (int64_t j = 0; j < c; ++j) dp[j] += g * (t[j] / denom - k * p[j]);
        } else {
            for (int64_t j = 0; j < c; ++j) dp[j] += g * t[j] / denom;
        }
    }
}

// ------------------------------------------------------- optimizer updates

template <typename T>
void adam_step(T* p, T* m, T* v, const T* g, int64_t n, T lr, T beta1, T beta2, T eps,
               T bias_corr1, T bias_corr2) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
        T mh = m[i] / bias_corr1;
        T vh = v[i] / bias_corr2;
        p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
}

template <typename T>
void ema_step(T* shadow, const T* p, int64_t n, T decay) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) shadow[i] = decay * shadow[i] + (T(1) - decay) * p[i];
}

// ---------------------------------------------------------------- resample

// Separable bilinear resample of a [rs, cs, c] grid to [rd, cd, c]
// (align-corners mapping; a 1-wide source axis broadcasts).
template <typename T>
void bilinear_resample(const T* src, int64_t rs, int64_t cs, T* dst, int64_t rd, int64_t cd,
                       int64_t c) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t r = 0; r < rd; ++r)
        for (int64_t col = 0; col < cd; ++col) {
            T fr = (rd > 1 && rs > 1) ? T(r) * T(rs - 1) / T(rd - 1) : T(0);
            T fc = (cd > 1 && cs > 1) ? T(col) * T(cs - 1) / T(cd - 1) : T(0);
            int64_t r0 = static_cast<int64_t>(fr);
            int64_t c0 = static_cast<int64_t>(fc);
            int64_t r1 = r0 + 1 < rs ? r0 + 1 : r0;
            int64_t c1 = c0 + 1 < cs ? c0 + 1 : c0;
            T wr = fr - T(r0), wc = fc - T(c0);
            const T* s00 = src + (r0 * cs + c0) * c;
            const T* s01 = src + (r0 * cs + c1) * c;
            const T* s10 = src + (r1 * cs + c0) * c;
            const T* s11 = src + (r1 * cs + c1) * c;
            T* d = dst + (r * cd + col) * c;
            for (int64_t j = 0; j < c; ++j)
                d[j] = (T(1) - wr) * ((T(1) - wc) * s00[j] + wc * s01[j]) +
                       wr * ((T(1) - wc) * s10[j] + wc * s11[j]);
        }
}

// --------------------------------------------------------------- image ops

// 3x3 binomial blur per channel, replicated border.
template <typename T>
void blur3x3(const T* img, T* out, int64_t c, int64_t h, int64_t w) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h; ++y) {
            const T* plane = img + ch * h * w;
            T* orow = out + (ch * h + y) * w;
            for (int64_t x = 0; x < w; ++x) {
                T acc = T(0);
                static const T k[3] = {T(0.25), T(0.5), T(0.25)};
                for (int64_t dy = -1; dy <= 1; ++dy)
                    for (int64_t dx = -1; dx <= 1; ++dx) {
                        int64_t yy = y + dy < 0 ? 0 : (y + dy >= h ? h - 1 : y + dy);
                        int64_t xx = x + dx < 0 ? 0 : (x + dx >= w ? w - 1 : x + dx);
                        acc += k[dy + 1] * k[dx + 1] * plane[yy * w + xx];
                    }
                orow[x] = acc;
            }
        }
}

// Average-pool a [c, h, w] image onto a [gr, gc, c] cell grid.
template <typename T>
void avgpool_to_grid(const T* img, T* out, int64_t c, int64_t h, int64_t w, int64_t gr,
                     int64_t gc) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t r = 0; r < gr; ++r)
        for (int64_t col = 0; col < gc; ++col) {
            int64_t y0 = r * h / gr, y1 = (r + 1) * h / gr;
            int64_t x0 = col * w / gc, x1 = (col + 1) * w / gc;
            T* d = out + (r * gc + col) * c;
            for (int64_t ch = 0; ch < c; ++ch) {
                T acc = T(0);
                for (int64_t y = y0; y < y1; ++y)
                    for (int64_t x = x0; x < x1; ++x) acc += img[(ch * h + y) * w + x];
                d[ch] = acc / T((y1 - y0) * (x1 - x0));
            }
        }
}

// ===================================================================== ref
// Serial reference implementations. Plain loops, no OpenMP, no BLAS.

namespace ref {

template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
          int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc) {
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            T acc = T(0);
            for (int64_t kk = 0; kk < k; ++kk) {
                T av = trans_a ? a[kk * lda + i] : a[i * lda + kk];
                T bv = trans_b ? b[j * ldb + kk] : b[kk * ldb + j];
                acc += av * bv;
            }
            c[i * ldc + j] = alpha * acc + (beta == T(0) ? T(0) : beta * c[i * ldc + j]);
        }
}

template <typename T>
void layernorm_fwd(const T* x, T* y, T* mean, T* rstd, int64_t rows, int64_t c, T eps) {
    for (int64_t r = 0; r < rows; ++r) {
        const T* xr = x + r * c;
        T m = T(0);
        for (int64_t j = 0; j < c; ++j) m += xr[j];
        m /= T(c);
        T v = T(0);
        for (int64_t j = 0; j < c; ++j) v += (xr[j] - m) * (xr[j] - m);
        v /= T(c);
        T rs = T(1) / std::sqrt(v + eps);
        mean[r] = m;
        rstd[r] = rs;
        for (int64_t j = 0; j < c; ++j) y[r * c + j] = (xr[j] - m) * rs;
    }
}

template <typename T>
void softmax_row(T* row, int64_t n) {
    T mx = row[0];
    for (int64_t i = 1; i < n; ++i) mx = row[i] > mx ? row[i] : mx;
    T sum = T(0);
    for (int64_t i = 0; i < n; ++i) {
        row[i] = std::exp(row[i] - mx);
        sum += row[i];
    }
    for (int64_t i = 0; i < n; ++i) row[i] /= sum;
}

template <typename T>
void attention_fwd(const T* qkv, T* probs, T* out, int64_t b, int64_t h, int64_t n, int64_t hd) {
    int64_t d = h * hd, row = 3 * d;
    T scl = T(1) / std::sqrt(T(hd));
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t hi = 0; hi < h; ++hi) {
            const T* base = qkv + bi * n * row + hi * hd;
            T* p = probs + ((bi * h + hi) * n) * n;
            for (int64_t i = 0; i < n; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    T acc = T(0);
                    for (int64_t e = 0; e < hd; ++e)
                        acc += base[i * row + e] * base[j * row + d + e];
                    p[i * n + j] = acc * scl;
                }
                softmax_row(p + i * n, n);
            }
            for (int64_t i = 0; i < n; ++i)
                for (int64_t e = 0; e < hd; ++e) {
                    T acc = T(0);
                    for (int64_t j = 0; j < n; ++j)
                        acc += p[i * n + j] * base[j * row + 2 * d + e];
                    out[(bi * n + i) * d + hi * hd + e] = acc;
                }
        }
}

template <typename T>
void cosine_rows_fwd(const T* tgt, const T* pred, T* sim, int64_t rows, int64_t c, T eps) {
    for (int64_t r = 0; r < rows; ++r) {
        T dot = T(0), nt = T(0), np = T(0);
        for (int64_t j = 0; j < c; ++j) {
            dot += tgt[r * c + j] * pred[r * c + j];
            nt += tgt[r * c + j] * tgt[r * c + j];
            np += pred[r * c + j] * pred[r * c + j];
        }
        sim[r] = dot / ((std::sqrt(nt) + eps) * (std::sqrt(np) + eps));
    }
}

template <typename T>
void bilinear_resample(const T* src, int64_t rs, int64_t cs, T* dst, int64_t rd, int64_t cd,
                       int64_t c) {
    for (int64_t r = 0; r < rd; ++r)
        for (int64_t col = 0; col < cd; ++col)
            for (int64_t j = 0; j < c; ++j) {
                T fr = (rd > 1 && rs > 1) ? T(r) * T(rs - 1) / T(rd - 1) : T(0);
                T fc = (cd > 1 && cs > 1) ? T(col) * T(cs - 1) / T(cd - 1) : T(0);
                int64_t r0 = static_cast<int64_t>(fr);
                int64_t c0 = static_cast<int64_t>(fc);
                int64_t r1 = r0 + 1 < rs ? r0 + 1 : r0;
                int64_t c1 = c0 + 1 < cs ? c0 + 1 : c0;
                T wr = fr - T(r0), wc = fc - T(c0);
                dst[(r * cd + col) * c + j] =
                    (T(1) - wr) * ((T(1) - wc) * src[(r0 * cs + c0) * c + j] +
                                   wc * src[(r0 * cs + c1) * c + j]) +
                    wr * ((T(1) - wc) * src[(r1 * cs + c0) * c + j] +
                          wc * src[(r1 * cs + c1) * c + j]);
            }
}

}  // namespace ref

}  // namespace pixdit::kern
