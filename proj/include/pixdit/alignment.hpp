// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// The alignment branch: frozen semantic encoders, patch masking, the MLP
// projection head and the masked transformer adapter (two AdaLN-Zero blocks
// over a partially zeroed token sequence), plus the cosine alignment loss.
// The branch reads the backbone's alignment tap and never writes into the
// denoising pathway.

#include <memory>
#include <string>
#include <vector>

#include "pixdit/adaln_block.hpp"
#include "pixdit/backbone.hpp"
#include "pixdit/config.hpp"
#include "pixdit/feature_store.hpp"
#include "pixdit/kernels.hpp"
#include "pixdit/rng.hpp"
#include "pixdit/tensor.hpp"

namespace pixdit {

inline constexpr double kCosineEps = 1e-8;

// ------------------------------------------------------------------- masks

struct PatchMask {
    std::vector<uint8_t> bits;  // [batch * n_patch], 1 = masked
    int64_t batch = 0;
    int64_t n_patch = 0;
    double ratio = 0.0;

    int64_t masked_per_sample() const {
        return static_cast<int64_t>(ratio * static_cast<double>(n_patch));
    }
    bool masked(int64_t b, int64_t p) const { return bits[b * n_patch + p] != 0; }
};

// Exactly floor(r * n_patch) positions per sample, uniform without
// replacement. Resampled by the trainer every step.
inline PatchMask sample_mask(int64_t batch, int64_t n_patch, double r, Rng& rng) {
    if (!(r >= 0.0 && r < 1.0)) throw DomainError("sample_mask: ratio must be in [0,1)");
    if (batch < 1 || n_patch < 1) throw InvalidInputError("sample_mask: empty mask");
    PatchMask m;
    m.batch = batch;
    m.n_patch = n_patch;
    m.ratio = r;
    m.bits.assign(size_t(batch * n_patch), 0);
    const int64_t k = m.masked_per_sample();
    std::vector<int64_t> idx(n_patch);
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t i = 0; i < n_patch; ++i) idx[i] = i;
        for (int64_t i = 0; i < k; ++i) {
            int64_t j = i + int64_t(rng.integer(uint64_t(n_patch - i)));
            std::swap(idx[i], idx[j]);
            m.bits[b * n_patch + idx[i]] = 1;
        }
    }
    return m;
}

// Element-wise zeroing of masked tokens; length and positions unchanged.
template <typename T>
TensorT<T> apply_mask(const TokenGridT<T>& h, const PatchMask& mask) {
    if (h.n_ctx != 0)
        throw InvalidInputError("apply_mask: grid must hold image tokens only");
    if (h.batch() != mask.batch || h.n_patch() != mask.n_patch)
        throw InvalidInputError("apply_mask: mask does not match token grid");
    const int64_t b = h.batch(), n = h.n_patch(), d = h.dim();
    TensorT<T> out = h.tokens;
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t p = 0; p < n; ++p)
            if (mask.masked(bi, p)) {
                T* row = out.ptr() + (bi * n + p) * d;
                for (int64_t j = 0; j < d; ++j) row[j] = T(0);
            }
    return out;
}

// ---------------------------------------------------------------- encoders

// Frozen feature extractor; parameters never receive gradients.
template <typename T>
class SemanticEncoder {
public:
    virtual ~SemanticEncoder() = default;
    virtual int64_t feature_dim() const = 0;
    virtual int64_t grid_rows() const = 0;
    virtual int64_t grid_cols() const = 0;
    // images [B, C, H, W] (clean training images) -> [B, rows*cols, F].
    // ids identify samples for file-backed encoders.
    virtual TensorT<T> encode(const TensorT<T>& images,
                              const std::vector<int64_t>& ids) const = 0;
};

// A small plain (unconditioned) ViT with seed-fixed random weights.
template <typename T>
class FrozenRandomVit final : public SemanticEncoder<T> {
public:
    FrozenRandomVit(const AlignmentConfig& acfg, const ModelConfig& mcfg)
        : patch_(acfg.encoder_patch),
          image_(mcfg.image_size),
          channels_(mcfg.channels),
          depth_(acfg.encoder_depth),
          dim_(acfg.encoder_hidden),
          heads_(acfg.encoder_heads),
          fdim_(acfg.feature_dim) {
        if (image_ % patch_ != 0)
            throw ConfigError("frozen-random-vit: image size not divisible by encoder patch");
        Rng rng(acfg.encoder_seed);
        auto normal = [&](std::vector<int64_t> shape, T std) {
            TensorT<T> t(shape);
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.normal()) * std;
            return t;
        };
        const int64_t pd = patch_ * patch_ * channels_;
        w_["patch.w"] = normal({pd, dim_}, T(0.05));
        w_["patch.b"] = TensorT<T>({dim_});
        w_["pos"]     = normal({n_patch(), dim_}, T(0.05));
        for (int64_t i = 0; i < depth_; ++i) {
            std::string pre = "blk" + std::to_string(i) + ".";
            w_[pre + "qkv.w"]  = normal({dim_, 3 * dim_}, T(0.05));
            w_[pre + "qkv.b"]  = TensorT<T>({3 * dim_});
            w_[pre + "proj.w"] = normal({dim_, dim_}, T(0.05));
            w_[pre + "proj.b"] = TensorT<T>({dim_});
            w_[pre + "fc1.w"]  = normal({dim_, 2 * dim_}, T(0.05));
            w_[pre + "fc1.b"]  = TensorT<T>({2 * dim_});
            w_[pre + "fc2.w"]  = normal({2 * dim_, dim_}, T(0.05));
            w_[pre + "fc2.b"]  = TensorT<T>({dim_});
        }
        w_["out.w"] = normal({dim_, fdim_}, T(0.05));
        w_["out.b"] = TensorT<T>({fdim_});
    }

    int64_t feature_dim() const override { return fdim_; }
    int64_t grid_rows() const override { return image_ / patch_; }
    int64_t grid_cols() const override { return image_ / patch_; }
    int64_t n_patch() const { return grid_rows() * grid_cols(); }

    TensorT<T> encode(const TensorT<T>& images, const std::vector<int64_t>&) const override {
        const int64_t b = images.dim(0), np = n_patch(), d = dim_;
        const int64_t pd = patch_ * patch_ * channels_;
        TensorT<T> rows({b, np, pd});
        kern::im2patch(images.ptr(), rows.ptr(), b, channels_, image_, patch_);
        TensorT<T> x({b, np, d});
        kern::gemm(false, false, b * np, d, pd, T(1), rows.ptr(), pd, w_.at("patch.w").ptr(),
                   d, T(0), x.ptr(), d);
        kern::add_bias(x.ptr(), w_.at("patch.b").ptr(), b * np, d);
        const T* pos = w_.at("pos").ptr();
#pragma omp parallel for schedule(static)
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t i = 0; i < np * d; ++i) x[bi * np * d + i] += pos[i];

        TensorT<T> ln({b, np, d}), mean({b * np}), rstd({b * np});
        for (int64_t blk = 0; blk < depth_; ++blk) {
            std::string pre = "blk" + std::to_string(blk) + ".";
            kern::layernorm_fwd(x.ptr(), ln.ptr(), mean.ptr(), rstd.ptr(), b * np, d,
                                T(1e-6));
            TensorT<T> qkv({b, np, 3 * d});
            kern::gemm(false, false, b * np, 3 * d, d, T(1), ln.ptr(), d,
                       w_.at(pre + "qkv.w").ptr(), 3 * d, T(0), qkv.ptr(), 3 * d);
            kern::add_bias(qkv.ptr(), w_.at(pre + "qkv.b").ptr(), b * np, 3 * d);
            TensorT<T> probs({b, heads_, np, np}), mix({b, np, d});
            kern::attention_fwd(qkv.ptr(), probs.ptr(), mix.ptr(), b, heads_, np,
                                d / heads_);
            TensorT<T> proj({b, np, d});
            kern::gemm(false, false, b * np, d, d, T(1), mix.ptr(), d,
                       w_.at(pre + "proj.w").ptr(), d, T(0), proj.ptr(), d);
            kern::add_bias(proj.ptr(), w_.at(pre + "proj.b").ptr(), b * np, d);
            kern::axpy(T(1), proj.ptr(), x.ptr(), b * np * d);

            kern::layernorm_fwd(x.ptr(), ln.ptr(), mean.ptr(), rstd.ptr(), b * np, d,
                                T(1e-6));
            TensorT<T> h1({b, np, 2 * d});
            kern::gemm(false, false, b * np, 2 * d, d, T(1), ln.ptr(), d,
                       w_.at(pre + "fc1.w").ptr(), 2 * d, T(0), h1.ptr(), 2 * d);
            kern::add_bias(h1.ptr(), w_.at(pre + "fc1.b").ptr(), b * np, 2 * d);
            TensorT<T> a1({b, np, 2 * d});
            kern::gelu_fwd(h1.ptr(), a1.ptr(), b * np * 2 * d);
            TensorT<T> h2({b, np, d});
            kern::gemm(false, false, b * np, d, 2 * d, T(1), a1.ptr(), 2 * d,
                       w_.at(pre + "fc2.w").ptr(), d, T(0), h2.ptr(), d);
            kern::add_bias(h2.ptr(), w_.at(pre + "fc2.b").ptr(), b * np, d);
            kern::axpy(T(1), h2.ptr(), x.ptr(), b * np * d);
        }
        kern::layernorm_fwd(x.ptr(), ln.ptr(), mean.ptr(), rstd.ptr(), b * np, d, T(1e-6));
        TensorT<T> out({b, np, fdim_});
        kern::gemm(false, false, b * np, fdim_, d, T(1), ln.ptr(), d, w_.at("out.w").ptr(),
                   fdim_, T(0), out.ptr(), fdim_);
        kern::add_bias(out.ptr(), w_.at("out.b").ptr(), b * np, fdim_);
        return out;
    }

    const ParamMap<T>& weights() const { return w_; }

private:
    int64_t patch_, image_, channels_, depth_, dim_, heads_, fdim_;
    ParamMap<T> w_;
};

// Deliberately many-to-one: repeated blur, coarse spatial averaging, then a
// fixed random projection of the per-cell mean colors.
template <typename T>
class LossyPoolEncoder final : public SemanticEncoder<T> {
public:
    LossyPoolEncoder(const AlignmentConfig& acfg, const ModelConfig& mcfg)
        : image_(mcfg.image_size),
          channels_(mcfg.channels),
          grid_(acfg.pool_grid),
          blur_(acfg.pool_blur),
          fdim_(acfg.feature_dim) {
        Rng rng(acfg.encoder_seed);
        proj_ = TensorT<T>({channels_, fdim_});
        for (int64_t i = 0; i < proj_.numel(); ++i)
            proj_[i] = T(rng.normal() / std::sqrt(double(channels_)));
    }

    int64_t feature_dim() const override { return fdim_; }
    int64_t grid_rows() const override { return grid_; }
    int64_t grid_cols() const override { return grid_; }

    TensorT<T> encode(const TensorT<T>& images, const std::vector<int64_t>&) const override {
        const int64_t b = images.dim(0), hw = image_, c = channels_;
        TensorT<T> out({b, grid_ * grid_, fdim_});
        for (int64_t bi = 0; bi < b; ++bi) {
            TensorT<T> img({c, hw, hw}), tmp({c, hw, hw});
            std::copy(images.ptr() + bi * c * hw * hw, images.ptr() + (bi + 1) * c * hw * hw,
                      img.ptr());
            for (int64_t pass = 0; pass < blur_; ++pass) {
                kern::blur3x3(img.ptr(), tmp.ptr(), c, hw, hw);
                std::swap(img.data, tmp.data);
            }
            TensorT<T> cells({grid_, grid_, c});
            kern::avgpool_to_grid(img.ptr(), cells.ptr(), c, hw, hw, grid_, grid_);
            kern::gemm(false, false, grid_ * grid_, fdim_, c, T(1), cells.ptr(), c,
                       proj_.ptr(), fdim_, T(0), out.ptr() + bi * grid_ * grid_ * fdim_,
                       fdim_);
        }
        return out;
    }

private:
    int64_t image_, channels_, grid_, blur_, fdim_;
    TensorT<T> proj_;
};

// Per-sample feature grids prepared offline (real pretrained targets at full
// scale); see feature_store.hpp for the shard format.
template <typename T>
class PrecomputedEncoder final : public SemanticEncoder<T> {
public:
    explicit PrecomputedEncoder(const std::string& dir) : store_(dir) {}

    int64_t feature_dim() const override { return store_.feature_dim(); }
    int64_t grid_rows() const override { return store_.rows(); }
    int64_t grid_cols() const override { return store_.cols(); }

    TensorT<T> encode(const TensorT<T>&, const std::vector<int64_t>& ids) const override {
        if (ids.empty()) throw InvalidInputError("precomputed encoder: no sample ids");
        return store_.gather(ids).template cast<T>();
    }

private:
    FeatureStore store_;
};

template <typename T>
std::unique_ptr<SemanticEncoder<T>> make_encoder(const AlignmentConfig& acfg,
                                                 const ModelConfig& mcfg) {
    if (acfg.encoder == "frozen-random-vit")
        return std::make_unique<FrozenRandomVit<T>>(acfg, mcfg);
    if (acfg.encoder == "lossy-pool") return std::make_unique<LossyPoolEncoder<T>>(acfg, mcfg);
    if (acfg.encoder == "precomputed-file")
        return std::make_unique<PrecomputedEncoder<T>>(acfg.features_dir);
    throw ConfigError("unknown encoder kind: " + acfg.encoder);
}

// Per-patch targets from clean images, bilinearly resampled onto the
// backbone grid when the encoder grid differs. No gradient flows here.
template <typename T>
TensorT<T> encode_target(const TensorT<T>& images, const std::vector<int64_t>& ids,
                         const SemanticEncoder<T>& enc, int64_t out_rows, int64_t out_cols) {
    const int64_t er = enc.grid_rows(), ec = enc.grid_cols(), f = enc.feature_dim();
    if (er < 1 || ec < 1 || out_rows < 1 || out_cols < 1)
        throw ConfigError("encode_target: empty feature grid");
    TensorT<T> feats = enc.encode(images, ids);
    const int64_t b = feats.dim(0);
    if (er == out_rows && ec == out_cols) return feats;
    TensorT<T> out({b, out_rows * out_cols, f});
    for (int64_t bi = 0; bi < b; ++bi)
        kern::bilinear_resample(feats.ptr() + bi * er * ec * f, er, ec,
                                out.ptr() + bi * out_rows * out_cols * f, out_rows, out_cols,
                                f);
    return out;
}

// ------------------------------------------------------------------ losses

// Negative mean cosine similarity over batch and all patch positions,
// masked ones included. Value in [-1, 1].
template <typename T>
T alignment_loss(const TensorT<T>& targets, const TensorT<T>& preds) {
    check_same_shape(targets, preds, "alignment_loss");
    if (targets.ndim() < 1) throw InvalidInputError("alignment_loss: scalar input");
    const int64_t f = targets.shape.back();
    const int64_t rows = targets.numel() / f;
    TensorT<T> sims({rows});
    kern::cosine_rows_fwd(targets.ptr(), preds.ptr(), sims.ptr(), rows, f, T(kCosineEps));
    double acc = 0.0;
    for (int64_t r = 0; r < rows; ++r) acc += double(sims[r]);
    return T(-acc / double(rows));
}

template <typename T>
T total_loss(T l_denoise, T l_align, double lambda, bool branch_active) {
    if (!branch_active) return l_denoise;
    if (!(lambda > 0.0))
        throw ConfigError("total_loss: lambda must be positive with an active branch");
    return l_denoise + T(lambda) * l_align;
}

// ------------------------------------------------------------------ branch

template <typename T>
class AlignmentBranch {
public:
    AlignmentBranch(const AlignmentConfig& acfg, const ModelConfig& mcfg)
        : acfg_(acfg), mcfg_(mcfg) {
        acfg_.validate();
        block_.dim       = mcfg_.hidden_dim;
        block_.heads     = mcfg_.heads;
        block_.mlp_ratio = mcfg_.mlp_ratio;
    }

    const AlignmentConfig& config() const { return acfg_; }
    bool active() const { return acfg_.active(); }

    void init_params(ParamMap<T>& p, Rng& rng) const {
        const int64_t d = mcfg_.hidden_dim, f = acfg_.feature_dim;
        auto normal = [&](std::vector<int64_t> shape, T std) {
            TensorT<T> t(shape);
            for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.normal()) * std;
            return t;
        };
        if (acfg_.variant == "mlp") {
            p["align.mlp.fc1.w"] = normal({d, d}, T(0.02));
            p["align.mlp.fc1.b"] = TensorT<T>({d});
            p["align.mlp.fc2.w"] = normal({d, d}, T(0.02));
            p["align.mlp.fc2.b"] = TensorT<T>({d});
            p["align.mlp.fc3.w"] = normal({d, f}, T(0.02));
            p["align.mlp.fc3.b"] = TensorT<T>({f});
        } else if (acfg_.variant == "mta") {
            block_.init_params(p, "align.mta.blk0.", rng);
            block_.init_params(p, "align.mta.blk1.", rng);
            p["align.mta.proj.w"] = normal({d, f}, T(0.02));
            p["align.mta.proj.b"] = TensorT<T>({f});
            if (acfg_.learned_mask_token) p["align.mask_token"] = normal({d}, T(0.02));
        }
    }

    struct Acts {
        PatchMask mask;
        TensorT<T> scond;                   // [B, D] conditioning used by mta
        TensorT<T> h_in;                    // [B, Np, D]
        TensorT<T> h_masked;                // [B, Np, D] (mta)
        BlockActsT<T> blk0, blk1;
        TensorT<T> mlp_h1, mlp_a1, mlp_h2, mlp_a2;  // [B, Np, D]
        TensorT<T> feats_in;                // input to the output projection
        TensorT<T> preds;                   // [B, Np, F]
        TensorT<T> sims;                    // [B*Np]
        TensorT<T> targets;                 // [B, Np, F]
    };

    // Two conditioned blocks over the masked sequence, then a linear map to
    // the encoder feature width. Predictions at every position.
    TensorT<T> mta_forward(const ParamMap<T>& params, const TokenGridT<T>& h,
                           const TensorT<T>& scond, const PatchMask& mask, Acts& a) const {
        if (acfg_.variant != "mta") throw UsageError("mta_forward: branch variant is not mta");
        if (h.n_ctx != 0)
            throw InvalidInputError("mta_forward: alignment tap must hold image tokens only");
        const int64_t b = h.batch(), np = h.n_patch(), d = h.dim(), f = acfg_.feature_dim;
        a.mask  = mask;
        a.scond = scond;
        a.h_in  = h.tokens;
        if (acfg_.learned_mask_token) {
            a.h_masked = h.tokens;
            const T* tok = params.at("align.mask_token").ptr();
#pragma omp parallel for collapse(2) schedule(static)
            for (int64_t bi = 0; bi < b; ++bi)
                for (int64_t p2 = 0; p2 < np; ++p2)
                    if (mask.masked(bi, p2)) {
                        T* row = a.h_masked.ptr() + (bi * np + p2) * d;
                        for (int64_t j = 0; j < d; ++j) row[j] = tok[j];
                    }
        } else {
            a.h_masked = apply_mask(h, mask);
        }
        block_.forward(params, "align.mta.blk0.", a.h_masked, scond, a.blk0);
        block_.forward(params, "align.mta.blk1.", a.blk0.x_out, scond, a.blk1);
        a.feats_in = a.blk1.x_out;
        a.preds = TensorT<T>({b, np, f});
        kern::gemm(false, false, b * np, f, d, T(1), a.feats_in.ptr(), d,
                   params.at("align.mta.proj.w").ptr(), f, T(0), a.preds.ptr(), f);
        kern::add_bias(a.preds.ptr(), params.at("align.mta.proj.b").ptr(), b * np, f);
        return a.preds;
    }

    // Token-wise three-layer MLP projection; no masking on this baseline.
    TensorT<T> mlp_forward(const ParamMap<T>& params, const TokenGridT<T>& h, Acts& a) const {
        if (acfg_.variant != "mlp") throw UsageError("mlp_forward: branch variant is not mlp");
        if (h.n_ctx != 0)
            throw InvalidInputError("mlp_forward: alignment tap must hold image tokens only");
        const int64_t b = h.batch(), np = h.n_patch(), d = h.dim(), f = acfg_.feature_dim;
        a.h_in = h.tokens;
        const int64_t rows = b * np;
        a.mlp_h1 = TensorT<T>({b, np, d});
        kern::gemm(false, false, rows, d, d, T(1), h.tokens.ptr(), d,
                   params.at("align.mlp.fc1.w").ptr(), d, T(0), a.mlp_h1.ptr(), d);
        kern::add_bias(a.mlp_h1.ptr(), params.at("align.mlp.fc1.b").ptr(), rows, d);
        a.mlp_a1 = TensorT<T>({b, np, d});
        kern::silu_fwd(a.mlp_h1.ptr(), a.mlp_a1.ptr(), rows * d);
        a.mlp_h2 = TensorT<T>({b, np, d});
        kern::gemm(false, false, rows, d, d, T(1), a.mlp_a1.ptr(), d,
                   params.at("align.mlp.fc2.w").ptr(), d, T(0), a.mlp_h2.ptr(), d);
        kern::add_bias(a.mlp_h2.ptr(), params.at("align.mlp.fc2.b").ptr(), rows, d);
        a.mlp_a2 = TensorT<T>({b, np, d});
        kern::silu_fwd(a.mlp_h2.ptr(), a.mlp_a2.ptr(), rows * d);
        a.feats_in = a.mlp_a2;
        a.preds = TensorT<T>({b, np, f});
        kern::gemm(false, false, rows, f, d, T(1), a.feats_in.ptr(), d,
                   params.at("align.mlp.fc3.w").ptr(), f, T(0), a.preds.ptr(), f);
        kern::add_bias(a.preds.ptr(), params.at("align.mlp.fc3.b").ptr(), rows, f);
        return a.preds;
    }

    // Branch forward plus loss. mask is required for mta and ignored for mlp.
    T loss_forward(const ParamMap<T>& params, const TokenGridT<T>& h, const TensorT<T>& scond,
                   const TensorT<T>& targets, const PatchMask* mask, Acts& a) const {
        if (!active()) throw UsageError("loss_forward: branch variant is none");
        if (acfg_.variant == "mta") {
            if (mask == nullptr) throw UsageError("loss_forward: mta requires a mask");
            mta_forward(params, h, scond, *mask, a);
        } else {
            mlp_forward(params, h, a);
        }
        check_same_shape(targets, a.preds, "loss_forward targets");
        a.targets = targets;
        const int64_t f = acfg_.feature_dim;
        const int64_t rows = a.preds.numel() / f;
        a.sims = TensorT<T>({rows});
        kern::cosine_rows_fwd(targets.ptr(), a.preds.ptr(), a.sims.ptr(), rows, f,
                              T(kCosineEps));
        double acc = 0.0;
        for (int64_t r = 0; r < rows; ++r) acc += double(a.sims[r]);
        return T(-acc / double(rows));
    }

    // Backward of dloss * l_align. Writes dh_align, accumulates parameter
    // grads and (for mta) the shared conditioning gradient into dscond.
    void loss_backward(const ParamMap<T>& params, const Acts& a, T dloss, TensorT<T>& dh_align,
                       TensorT<T>& dscond, ParamMap<T>& grads) const {
        const int64_t b = a.h_in.dim(0), np = a.h_in.dim(1), d = a.h_in.dim(2);
        const int64_t f = acfg_.feature_dim;
        const int64_t rows = b * np;
        TensorT<T> dsims({rows});
        const T per = -dloss / T(rows);
        for (int64_t r = 0; r < rows; ++r) dsims[r] = per;
        TensorT<T> dpreds({b, np, f});
        kern::cosine_rows_bwd(a.targets.ptr(), a.preds.ptr(), dsims.ptr(), dpreds.ptr(), rows,
                              f, T(kCosineEps));

        if (acfg_.variant == "mta") {
            TensorT<T> dfeats({b, np, d});
            kern::gemm(false, true, rows, d, f, T(1), dpreds.ptr(), f,
                       params.at("align.mta.proj.w").ptr(), f, T(0), dfeats.ptr(), d);
            kern::gemm(true, false, d, f, rows, T(1), a.feats_in.ptr(), d, dpreds.ptr(), f,
                       T(1), grads.at("align.mta.proj.w").ptr(), f);
            kern::bias_grad_acc(dpreds.ptr(), grads.at("align.mta.proj.b").ptr(), rows, f);
            TensorT<T> dblk0 = block_.backward(params, "align.mta.blk1.", a.scond, a.blk1,
                                               dfeats, dscond, grads);
            TensorT<T> dmasked = block_.backward(params, "align.mta.blk0.", a.scond, a.blk0,
                                                 dblk0, dscond, grads);
            // masking: zero gradient through masked positions
            dh_align = dmasked;
            if (acfg_.learned_mask_token) {
                T* dtok = grads.at("align.mask_token").ptr();
                for (int64_t bi = 0; bi < b; ++bi)
                    for (int64_t p2 = 0; p2 < np; ++p2)
                        if (a.mask.masked(bi, p2)) {
                            T* row = dh_align.ptr() + (bi * np + p2) * d;
                            for (int64_t j = 0; j < d; ++j) {
                                dtok[j] += row[j];
                                row[j] = T(0);
                            }
                        }
            } else {
#pragma omp parallel for collapse(2) schedule(static)
                for (int64_t bi = 0; bi < b; ++bi)
                    for (int64_t p2 = 0; p2 < np; ++p2)
                        if (a.mask.masked(bi, p2)) {
                            T* row = dh_align.ptr() + (bi * np + p2) * d;
                            for (int64_t j = 0; j < d; ++j) row[j] = T(0);
                        }
            }
        } else {
            TensorT<T> da2({b, np, d});
            kern::gemm(false, true, rows, d, f, T(1), dpreds.ptr(), f,
                       params.at("align.mlp.fc3.w").ptr(), f, T(0), da2.ptr(), d);
            kern::gemm(true, false, d, f, rows, T(1), a.mlp_a2.ptr(), d, dpreds.ptr(), f,
                       T(1), grads.at("align.mlp.fc3.w").ptr(), f);
            kern::bias_grad_acc(dpreds.ptr(), grads.at("align.mlp.fc3.b").ptr(), rows, f);
            TensorT<T> dh2({b, np, d});
            kern::silu_bwd_acc(a.mlp_h2.ptr(), da2.ptr(), dh2.ptr(), rows * d);
            TensorT<T> da1({b, np, d});
            kern::gemm(false, true, rows, d, d, T(1), dh2.ptr(), d,
                       params.at("align.mlp.fc2.w").ptr(), d, T(0), da1.ptr(), d);
            kern::gemm(true, false, d, d, rows, T(1), a.mlp_a1.ptr(), d, dh2.ptr(), d, T(1),
                       grads.at("align.mlp.fc2.w").ptr(), d);
            kern::bias_grad_acc(dh2.ptr(), grads.at("align.mlp.fc2.b").ptr(), rows, d);
            TensorT<T> dh1({b, np, d});
            kern::silu_bwd_acc(a.mlp_h1.ptr(), da1.ptr(), dh1.ptr(), rows * d);
            dh_align = TensorT<T>({b, np, d});
            kern::gemm(false, true, rows, d, d, T(1), dh1.ptr(), d,
                       params.at("align.mlp.fc1.w").ptr(), d, T(0), dh_align.ptr(), d);
            kern::gemm(true, false, d, d, rows, T(1), a.h_in.ptr(), d, dh1.ptr(), d, T(1),
                       grads.at("align.mlp.fc1.w").ptr(), d);
            kern::bias_grad_acc(dh1.ptr(), grads.at("align.mlp.fc1.b").ptr(), rows, d);
        }
    }

private:
    AlignmentConfig acfg_;
    ModelConfig mcfg_;
    AdaLnBlock<T> block_;
};

}  // namespace pixdit
