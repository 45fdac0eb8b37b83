// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdit/analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "pixdit/alignment.hpp"
#include "pixdit/image_io.hpp"
#include "pixdit/sampler.hpp"
#include "pixdit/trainer.hpp"

namespace pixdit::analysis {

namespace {

constexpr double kCovReg = 1e-6;

Eigen::MatrixXd to_eigen(const TensorD& t) {
    const int64_t n = t.dim(0), d = t.dim(1);
    Eigen::MatrixXd m(n, d);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) m(i, j) = t[i * d + j];
    return m;
}

// symmetric PSD square root; throws if eigenvalues are meaningfully negative
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
    if (eig.info() != Eigen::Success)
        throw NumericalError(std::string(what) + ": eigendecomposition failed");
    Eigen::VectorXd ev = eig.eigenvalues();
    const double floor = -1e-8 * std::max(1.0, std::fabs(ev.maxCoeff()));
    for (int i = 0; i < ev.size(); ++i) {
        if (ev(i) < floor)
            throw NumericalError(std::string(what) +
                                 ": covariance not PSD after regularization");
        ev(i) = std::sqrt(std::max(0.0, ev(i)));
    }
    return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

FeatureSet pool_features(const std::vector<int64_t>& ids, const std::vector<int>& labels,
                         const TensorD& patch_feats) {
    if (patch_feats.ndim() != 3) throw InvalidInputError("pool_features: need [n, np, f]");
    const int64_t n = patch_feats.dim(0), np = patch_feats.dim(1), f = patch_feats.dim(2);
    if (int64_t(ids.size()) != n || int64_t(labels.size()) != n)
        throw InvalidInputError("pool_features: ids/labels do not match feature count");
    if (n < 1) throw InvalidInputError("pool_features: empty feature set");
    FeatureSet fs;
    fs.ids = ids;
    fs.labels = labels;
    fs.pooled = TensorD({n, f});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < f; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < np; ++p) acc += patch_feats[(i * np + p) * f + j];
            fs.pooled[i * f + j] = acc / double(np);
        }
        double norm = 0.0;
        for (int64_t j = 0; j < f; ++j) norm += fs.pooled[i * f + j] * fs.pooled[i * f + j];
        norm = std::sqrt(norm);
        if (norm == 0.0)
            throw NumericalError("pool_features: zero pooled vector for sample " +
                                 std::to_string(ids[i]));
        for (int64_t j = 0; j < f; ++j) fs.pooled[i * f + j] /= norm;
    }
    return fs;
}

TensorD class_centroid(const FeatureSet& fs, int class_id) {
    const int64_t n = fs.pooled.dim(0), d = fs.pooled.dim(1);
    TensorD c({d});
    int64_t members = 0;
    for (int64_t i = 0; i < n; ++i) {
        if (fs.labels[i] != class_id) continue;
        for (int64_t j = 0; j < d; ++j) c[j] += fs.pooled[i * d + j];
        ++members;
    }
    if (members == 0)
        throw InvalidInputError("class_centroid: class " + std::to_string(class_id) +
                                " has no members");
    double norm = 0.0;
    for (int64_t j = 0; j < d; ++j) {
        c[j] /= double(members);
        norm += c[j] * c[j];
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12)
        throw NumericalError("class_centroid: degenerate class " + std::to_string(class_id) +
                             " (zero mean vector)");
    for (int64_t j = 0; j < d; ++j) c[j] /= norm;
    return c;
}

SubsetReport select_subsets(const FeatureSet& fs, const TensorD& centroid, int class_id,
                            int64_t k) {
    const int64_t n = fs.pooled.dim(0), d = fs.pooled.dim(1);
    if (centroid.numel() != d) throw InvalidInputError("select_subsets: centroid dim mismatch");
    struct Entry {
        double sim;
        int64_t id;
        int64_t row;
    };
    std::vector<Entry> entries;
    for (int64_t i = 0; i < n; ++i) {
        if (fs.labels[i] != class_id) continue;
        double dot = 0.0;
        for (int64_t j = 0; j < d; ++j) dot += fs.pooled[i * d + j] * centroid[j];
        entries.push_back({dot, fs.ids[i], i});
    }
    if (k < 1 || k > int64_t(entries.size()))
        throw InvalidInputError("select_subsets: k exceeds class size");
    // one total order; ties broken by ascending sample id
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        return a.id < b.id;
    });
    SubsetReport rep;
    rep.class_id = class_id;
    rep.centroid = centroid;
    for (int64_t i = 0; i < k; ++i) {
        rep.most_ids.push_back(entries[size_t(i)].id);
        rep.most_sims.push_back(entries[size_t(i)].sim);
    }
    for (int64_t i = 0; i < k; ++i) {
        const Entry& e = entries[entries.size() - 1 - size_t(i)];
        rep.least_ids.push_back(e.id);
        rep.least_sims.push_back(e.sim);
    }
    return rep;
}

double frechet_distance(const TensorD& feats_a, const TensorD& feats_b) {
    if (feats_a.ndim() != 2 || feats_b.ndim() != 2 || feats_a.dim(1) != feats_b.dim(1))
        throw InvalidInputError("frechet_distance: need [n, d] sets with equal d");
    if (feats_a.dim(0) < 2 || feats_b.dim(0) < 2)
        throw InvalidInputError("frechet_distance: need at least two rows per set");
    Eigen::MatrixXd a = to_eigen(feats_a), b = to_eigen(feats_b);
    Eigen::VectorXd mu_a = a.colwise().mean(), mu_b = b.colwise().mean();
    Eigen::MatrixXd ca = a.rowwise() - mu_a.transpose();
    Eigen::MatrixXd cb = b.rowwise() - mu_b.transpose();
    const int64_t d = feats_a.dim(1);
    Eigen::MatrixXd sa = ca.transpose() * ca / double(feats_a.dim(0) - 1) +
                         kCovReg * Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd sb = cb.transpose() * cb / double(feats_b.dim(0) - 1) +
                         kCovReg * Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd sa_half = psd_sqrt(sa, "frechet_distance");
    Eigen::MatrixXd inner = sa_half * sb * sa_half;
    inner = 0.5 * (inner + inner.transpose());  // symmetrize numeric residue
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner);
    if (eig.info() != Eigen::Success)
        throw NumericalError("frechet_distance: eigendecomposition failed");
    double tr_sqrt = 0.0;
    const double floor = -1e-8 * std::max(1.0, std::fabs(eig.eigenvalues().maxCoeff()));
    for (int i = 0; i < eig.eigenvalues().size(); ++i) {
        double ev = eig.eigenvalues()(i);
        if (ev < floor)
            throw NumericalError("frechet_distance: product matrix not PSD");
        tr_sqrt += std::sqrt(std::max(0.0, ev));
    }
    return (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
}

double diversity_score(const TensorD& feats) {
    if (feats.ndim() != 2) throw InvalidInputError("diversity_score: need [n, d]");
    const int64_t n = feats.dim(0), d = feats.dim(1);
    if (n < 2) throw InvalidInputError("diversity_score: need at least two rows");
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j) {
            double dist = 0.0;
            for (int64_t e = 0; e < d; ++e) {
                double diff = feats[i * d + e] - feats[j * d + e];
                dist += diff * diff;
            }
            acc += std::sqrt(dist);
        }
    return acc / (double(n) * double(n - 1) / 2.0);
}

void write_subset_csv(const std::string& path, const SubsetReport& report) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "class_id,rank,kind,sample_id,similarity\n";
    for (size_t i = 0; i < report.most_ids.size(); ++i)
        f << report.class_id << "," << i << ",most," << report.most_ids[i] << ","
          << report.most_sims[i] << "\n";
    for (size_t i = 0; i < report.least_ids.size(); ++i)
        f << report.class_id << "," << i << ",least," << report.least_ids[i] << ","
          << report.least_sims[i] << "\n";
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "mask_ratio,seed,final_total,final_denoise,final_align,fid_like\n";
    for (const auto& r : rows)
        f << r.ratio << "," << r.seed << "," << r.final_total << "," << r.final_denoise
          << "," << r.final_align << "," << r.fid_like << "\n";
}

std::vector<AblationRow> run_mask_ablation(const RunConfig& base, const Dataset& data,
                                           const std::vector<double>& ratios,
                                           const std::vector<uint64_t>& seeds,
                                           const std::string& out_dir) {
    if (ratios.empty()) throw InvalidInputError("run_mask_ablation: empty ratio list");
    if (seeds.empty()) throw InvalidInputError("run_mask_ablation: empty seed list");
    for (double r : ratios)
        if (!(r >= 0.0 && r < 1.0))
            throw DomainError("run_mask_ablation: ratio outside [0,1)");

    std::vector<AblationRow> rows;
    for (double ratio : ratios)
        for (uint64_t seed : seeds) {
            RunConfig cfg = base;
            cfg.alignment.variant = "mta";
            cfg.alignment.mask_ratio = ratio;
            cfg.train.seed = seed;
            cfg.validate();

            TrainState st;
            auto log = run_training(cfg, data, "", &st);
            AblationRow row;
            row.ratio = ratio;
            row.seed = seed;
            row.final_total = log.back().loss_total;
            row.final_denoise = log.back().loss_denoise;
            row.final_align = log.back().loss_align.value_or(0.0);

            // FID analog: pooled encoder features of fresh samples vs the
            // training set, using the run's frozen encoder
            Trainer trainer(cfg);
            const auto& params = select_params(st, format_decay(cfg.train.ema_decays.back()));
            const int64_t count = std::min<int64_t>(cfg.analysis.sample_count, data.size());
            std::vector<int> cls(count);
            for (int64_t i = 0; i < count; ++i)
                cls[i] = int(i % cfg.model.num_classes);
            Rng srng(seed ^ 0xabcdef123ull);
            Tensor samples =
                sample(trainer.model().backbone(), params, cfg.sampler, cls, srng);
            auto enc = make_encoder<float>(cfg.alignment, cfg.model);
            auto pooled_of = [&](const Tensor& imgs, const std::vector<int64_t>& ids) {
                auto patch = enc->encode(imgs, ids);
                std::vector<int> lbl(imgs.dim(0), 0);
                std::vector<int64_t> iid(imgs.dim(0));
                for (int64_t i = 0; i < imgs.dim(0); ++i) iid[i] = ids.empty() ? i : ids[i];
                return pool_features(iid, lbl, patch.cast<double>()).pooled;
            };
            std::vector<int64_t> data_idx(data.size());
            std::iota(data_idx.begin(), data_idx.end(), 0);
            Tensor data_imgs = gather_images(data, data_idx);
            row.fid_like = frechet_distance(pooled_of(samples, {}),
                                            pooled_of(data_imgs, data.ids));
            rows.push_back(row);
        }

    if (!out_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir);
        write_ablation_csv((fs::path(out_dir) / "mask_ablation.csv").string(), rows);
        // median per ratio for the plot
        PlotSeries series;
        series.label = "fid vs ratio";
        for (double ratio : ratios) {
            std::vector<double> vals;
            for (const auto& r : rows)
                if (r.ratio == ratio) vals.push_back(r.fid_like);
            std::sort(vals.begin(), vals.end());
            series.x.push_back(ratio);
            series.y.push_back(vals[vals.size() / 2]);
        }
        write_line_plot_png((fs::path(out_dir) / "mask_ablation.png").string(), {series},
                            "fid analog vs mask ratio");
    }
    return rows;
}

}  // namespace pixdit::analysis
