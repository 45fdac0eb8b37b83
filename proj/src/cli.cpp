// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdit/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "pixdit/analysis.hpp"
#include "pixdit/feature_store.hpp"
#include "pixdit/image_io.hpp"
#include "pixdit/sampler.hpp"
#include "pixdit/trainer.hpp"
#include "pixdit/verify.hpp"

namespace pixdit {

namespace {

namespace fs = std::filesystem;

std::string default_run_root() {
    const char* env = std::getenv("PIXDIT_RUN_ROOT");
    return env != nullptr && env[0] != '\0' ? env : "runs";
}

Dataset dataset_for(const RunConfig& cfg, const std::string& data_dir) {
    std::string dir = !data_dir.empty() ? data_dir : cfg.data.dir;
    if (!dir.empty()) return load_dataset(dir);
    if (cfg.data.kind == "tightmode")
        return generate_tightmode(cfg.data.classes, cfg.data.per_class, cfg.model.image_size,
                                  cfg.data.seed);
    return generate_shapes(cfg.data.classes, cfg.data.per_class, cfg.model.image_size,
                           cfg.data.seed);
}

std::vector<int> parse_class_list(const std::string& spec, int64_t num_classes) {
    std::vector<int> out;
    std::string cur;
    auto flush = [&] {
        if (cur.empty()) return;
        int v = std::stoi(cur);
        if (v < 0 || v >= int(num_classes))
            throw InvalidInputError("class id " + cur + " outside [0, " +
                                    std::to_string(num_classes - 1) + "]");
        out.push_back(v);
        cur.clear();
    };
    for (char c : spec) {
        if (c == ',') flush();
        else cur += c;
    }
    flush();
    return out;
}

RunConfig config_from_flags(const std::string& config_path,
                            const std::vector<std::string>& overrides) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    for (const auto& o : overrides) apply_override(cfg, o);
    cfg.validate();
    return cfg;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& run_dir_flag, const std::string& data_dir, bool dry_run) {
    RunConfig cfg = config_from_flags(config_path, overrides);
    if (dry_run) {
        std::cout << cfg.canonical();
        std::cout << "# config_hash " << cfg.hash() << "\n";
        return 0;
    }
    Dataset data = dataset_for(cfg, data_dir);
    std::string run_dir = run_dir_flag;
    if (run_dir.empty())
        run_dir = (fs::path(default_run_root()) /
                   ("run-" + cfg.hash() + "-seed" + std::to_string(cfg.train.seed)))
                      .string();
    auto log = run_training(cfg, data, run_dir, nullptr);
    std::cout << "trained " << log.size() << " steps; final total loss "
              << log.back().loss_total << "\n"
              << "run directory: " << run_dir << "\n";
    return 0;
}

int cmd_sample(const std::string& ckpt_path, int64_t steps, double w,
               const std::string& interval, const std::string& ema, uint64_t seed,
               const std::string& classes, int64_t count, const std::string& out_dir) {
    auto loaded = load_checkpoint(ckpt_path);
    RunConfig cfg = loaded.config;
    cfg.sampler.steps = steps;
    cfg.sampler.guidance_scale = w;
    if (!interval.empty()) {
        auto comma = interval.find(',');
        if (comma == std::string::npos)
            throw UsageError("--interval expects lo,hi");
        cfg.sampler.interval_lo = std::stod(interval.substr(0, comma));
        cfg.sampler.interval_hi = std::stod(interval.substr(comma + 1));
    }
    cfg.sampler.ema = ema;
    cfg.sampler.validate();

    std::vector<int> ids;
    if (!classes.empty()) {
        ids = parse_class_list(classes, cfg.model.num_classes);
    } else {
        int64_t n = count > 0 ? count : std::min<int64_t>(cfg.model.num_classes * 2, 16);
        for (int64_t i = 0; i < n; ++i) ids.push_back(int(i % cfg.model.num_classes));
    }
    const ParamMap<float>& params = select_params(loaded.state, cfg.sampler.ema);
    Backbone<float> net(cfg.model);
    Rng rng(seed);
    Tensor imgs = sample(net, params, cfg.sampler, ids, rng);

    fs::path out = out_dir.empty() ? fs::path("samples") : fs::path(out_dir);
    fs::create_directories(out);
    char stem[64];
    std::snprintf(stem, sizeof(stem), "samples_seed%llu", (unsigned long long)seed);
    write_image_grid_png((out / (std::string(stem) + ".png")).string(), imgs, 8);
    save_raw_f32((out / (std::string(stem) + ".f32")).string(), imgs);
    nlohmann::json side = {{"shape", imgs.shape},
                           {"seed", seed},
                           {"config_hash", cfg.hash()},
                           {"classes", ids},
                           {"steps", cfg.sampler.steps},
                           {"guidance_scale", cfg.sampler.guidance_scale},
                           {"interval", {cfg.sampler.interval_lo, cfg.sampler.interval_hi}},
                           {"ema", cfg.sampler.ema}};
    std::ofstream sf(out / (std::string(stem) + ".json"));
    sf << side.dump(2) << "\n";
    if (!sf) throw IoError("cannot write sample sidecar");
    std::cout << "wrote " << (out / (std::string(stem) + ".png")).string() << "\n";
    return 0;
}

analysis::FeatureSet features_of_dataset(const RunConfig& cfg, const Dataset& data) {
    auto enc = make_encoder<float>(cfg.alignment, cfg.model);
    std::vector<int64_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    Tensor imgs = gather_images(data, idx);
    auto patch = enc->encode(imgs, data.ids);
    return analysis::pool_features(data.ids, data.labels, patch.cast<double>());
}

int cmd_analyze(const std::string& mode, const std::string& config_path,
                const std::vector<std::string>& overrides, const std::string& data_dir,
                const std::string& ckpt_path, const std::string& features_dir, double t0,
                const std::string& ratios_flag, const std::string& seeds_flag,
                const std::string& out_dir) {
    RunConfig cfg = config_from_flags(config_path, overrides);
    fs::path out = out_dir.empty() ? fs::path("reports") : fs::path(out_dir);
    fs::create_directories(out);

    if (mode == "centroids") {
        analysis::FeatureSet fsF;
        std::vector<int> labels;
        if (!features_dir.empty()) {
            // precomputed feature shards plus the dataset manifest for labels
            Dataset data = dataset_for(cfg, data_dir);
            FeatureStore store(features_dir);
            auto patch = store.gather(data.ids);
            fsF = analysis::pool_features(data.ids, data.labels, patch.cast<double>());
        } else {
            Dataset data = dataset_for(cfg, data_dir);
            fsF = features_of_dataset(cfg, data);
        }
        int classes = 1 + *std::max_element(fsF.labels.begin(), fsF.labels.end());
        for (int c = 0; c < classes; ++c) {
            auto centroid = analysis::class_centroid(fsF, c);
            int64_t members = 0;
            for (int l : fsF.labels) members += l == c ? 1 : 0;
            int64_t k = std::min<int64_t>(cfg.analysis.subset_k, members);
            auto rep = analysis::select_subsets(fsF, centroid, c, k);
            analysis::write_subset_csv(
                (out / ("subsets_class" + std::to_string(c) + ".csv")).string(), rep);
        }
        std::cout << "wrote " << classes << " subset reports to " << out.string() << "\n";
        return 0;
    }

    if (mode == "denoise-probe") {
        if (ckpt_path.empty()) throw UsageError("denoise-probe needs --checkpoint");
        auto loaded = load_checkpoint(ckpt_path);
        RunConfig rcfg = loaded.config;
        Dataset data = dataset_for(rcfg, data_dir);
        const ParamMap<float>& params = select_params(loaded.state, rcfg.sampler.ema);
        Backbone<float> net(rcfg.model);

        // probe the tight-mode subset when present, else the head of the set
        std::vector<int64_t> pick;
        for (int64_t i = 0; i < data.size() && int64_t(pick.size()) < 32; ++i)
            if (data.tight_mode.empty() || data.tight_mode[i]) pick.push_back(i);
        Tensor originals = gather_images(data, pick);
        std::vector<int> labels(pick.size());
        for (size_t i = 0; i < pick.size(); ++i) labels[i] = data.labels[pick[i]];
        Rng rng(rcfg.train.seed ^ 0x9e37);
        Tensor denoised = denoise_from_t(net, params, originals, float(t0), rcfg.sampler,
                                         labels, rng);
        write_image_grid_png((out / "probe_originals.png").string(), originals, 8);
        write_image_grid_png((out / "probe_denoised.png").string(), denoised, 8);

        auto flatten = [](const Tensor& t) {
            TensorD f({t.dim(0), t.numel() / t.dim(0)});
            for (int64_t i = 0; i < t.numel(); ++i) f[i] = double(t[i]);
            return f;
        };
        double div_orig = analysis::diversity_score(flatten(originals));
        double div_deno = analysis::diversity_score(flatten(denoised));
        std::ofstream cf(out / "denoise_probe.csv");
        cf << "t0,count,pixel_diversity_originals,pixel_diversity_denoised\n"
           << t0 << "," << pick.size() << "," << div_orig << "," << div_deno << "\n";
        std::cout << "probe at t0 = " << t0 << ": diversity " << div_orig << " -> "
                  << div_deno << "\n";
        return 0;
    }

    if (mode == "metrics") {
        if (ckpt_path.empty()) throw UsageError("metrics needs --checkpoint");
        auto loaded = load_checkpoint(ckpt_path);
        RunConfig rcfg = loaded.config;
        Dataset data = dataset_for(rcfg, data_dir);
        const ParamMap<float>& params = select_params(loaded.state, rcfg.sampler.ema);
        Backbone<float> net(rcfg.model);
        int64_t count = std::min<int64_t>(rcfg.analysis.sample_count, data.size());
        std::vector<int> cls(count);
        for (int64_t i = 0; i < count; ++i) cls[i] = int(i % rcfg.model.num_classes);
        Rng rng(rcfg.train.seed ^ 0x51ce);
        Tensor samples = sample(net, params, rcfg.sampler, cls, rng);

        auto enc = make_encoder<float>(rcfg.alignment, rcfg.model);
        auto pooled = [&](const Tensor& imgs, const std::vector<int64_t>& ids) {
            std::vector<int64_t> iid(imgs.dim(0));
            for (int64_t i = 0; i < imgs.dim(0); ++i) iid[i] = ids.empty() ? i : ids[i];
            std::vector<int> lbl(imgs.dim(0), 0);
            return analysis::pool_features(iid, lbl, enc->encode(imgs, ids).cast<double>())
                .pooled;
        };
        std::vector<int64_t> idx(data.size());
        std::iota(idx.begin(), idx.end(), 0);
        auto data_pooled = pooled(gather_images(data, idx), data.ids);
        auto sample_pooled = pooled(samples, {});
        double fid = analysis::frechet_distance(data_pooled, sample_pooled);
        std::ofstream cf(out / "metrics.csv");
        cf << "fid_like,diversity_data,diversity_samples,sample_count\n"
           << fid << "," << analysis::diversity_score(data_pooled) << ","
           << analysis::diversity_score(sample_pooled) << "," << count << "\n";
        std::cout << "fid-analog " << fid << " over " << count << " samples\n";
        return 0;
    }

    if (mode == "ablate-mask") {
        Dataset data = dataset_for(cfg, data_dir);
        std::vector<double> ratios = cfg.analysis.mask_ratios;
        if (!ratios_flag.empty()) {
            ratios.clear();
            std::string cur;
            for (char c : ratios_flag + ",")
                if (c == ',') {
                    if (!cur.empty()) ratios.push_back(std::stod(cur));
                    cur.clear();
                } else
                    cur += c;
        }
        std::vector<uint64_t> seeds = {cfg.train.seed};
        if (!seeds_flag.empty()) {
            seeds.clear();
            std::string cur;
            for (char c : seeds_flag + ",")
                if (c == ',') {
                    if (!cur.empty()) seeds.push_back(std::stoull(cur));
                    cur.clear();
                } else
                    cur += c;
        }
        auto rows = analysis::run_mask_ablation(cfg, data, ratios, seeds, out.string());
        std::cout << "mask_ratio,median_fid_like\n";
        for (double r : ratios) {
            std::vector<double> vals;
            for (const auto& row : rows)
                if (row.ratio == r) vals.push_back(row.fid_like);
            std::sort(vals.begin(), vals.end());
            std::cout << r << "," << vals[vals.size() / 2] << "\n";
        }
        return 0;
    }

    throw UsageError("unknown analyze mode: " + mode +
                     " (expected centroids, denoise-probe, metrics or ablate-mask)");
}

int cmd_verify() {
    auto results = verify::run_all();
    std::printf("%-52s %-6s %10s\n", "check", "status", "ms");
    for (const auto& r : results) {
        std::printf("%-52s %-6s %10.1f\n", r.name.c_str(), r.ok ? "PASS" : "FAIL", r.ms);
        if (!r.ok) std::printf("    %s\n", r.detail.c_str());
    }
    return verify::all_ok(results) ? 0 : 3;
}

int cmd_make_dataset(const std::string& kind, const std::string& out_dir, uint64_t seed,
                     int64_t classes, int64_t per_class, int64_t image_size, bool features,
                     const std::string& config_path,
                     const std::vector<std::string>& overrides) {
    Dataset d;
    if (kind == "shapes")
        d = generate_shapes(classes, per_class, image_size, seed);
    else if (kind == "tightmode")
        d = generate_tightmode(classes, per_class, image_size, seed);
    else
        throw UsageError("unknown dataset kind: " + kind + " (expected shapes or tightmode)");
    save_dataset(d, out_dir, true);
    std::cout << "wrote " << d.size() << " images to " << out_dir << "\n";
    if (features) {
        RunConfig cfg = config_from_flags(config_path, overrides);
        cfg.model.image_size = image_size;
        cfg.model.num_classes = classes;
        if (cfg.alignment.variant == "none") cfg.alignment.variant = "mlp";
        auto enc = make_encoder<float>(cfg.alignment, cfg.model);
        std::vector<int64_t> idx(d.size());
        std::iota(idx.begin(), idx.end(), 0);
        Tensor feats = enc->encode(gather_images(d, idx), d.ids);
        FeatureStore::write((fs::path(out_dir) / "features").string(), d.ids, feats,
                            enc->grid_rows(), enc->grid_cols());
        std::cout << "wrote feature shards to " << (fs::path(out_dir) / "features").string()
                  << "\n";
    }
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"pixel-space diffusion transformer lab"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "train a model from a config file");
    std::string t_config, t_run_dir, t_data;
    std::vector<std::string> t_sets;
    bool t_dry = false;
    train->add_option("--config", t_config, "run configuration file")->required();
    train->add_option("--set", t_sets, "override section.key=value");
    train->add_option("--run-dir", t_run_dir, "output run directory");
    train->add_option("--data", t_data, "dataset directory (overrides config)");
    train->add_flag("--dry-run", t_dry, "validate and print the canonical config");

    // sample
    auto* smp = app.add_subcommand("sample", "sample images from a checkpoint");
    std::string s_ckpt, s_interval = "0.1,1.0", s_ema = "0.9999", s_classes, s_out;
    int64_t s_steps = 50, s_count = 0;
    double s_w = 1.5;
    uint64_t s_seed = 0;
    smp->add_option("--checkpoint", s_ckpt, "checkpoint file")->required();
    smp->add_option("--steps", s_steps, "ODE steps (default 50)");
    smp->add_option("--w", s_w, "guidance scale (default 1.5)");
    smp->add_option("--interval", s_interval, "guidance interval lo,hi (default 0.1,1.0)");
    smp->add_option("--ema", s_ema, "EMA decay to sample from, or 'none' (default 0.9999)");
    smp->add_option("--seed", s_seed, "noise seed");
    smp->add_option("--classes", s_classes, "comma list of class ids");
    smp->add_option("--count", s_count, "sample count when --classes is omitted");
    smp->add_option("--out", s_out, "output directory (default samples/)");

    // analyze
    auto* ana = app.add_subcommand("analyze", "diagnostics and ablations");
    std::string a_mode, a_config, a_data, a_ckpt, a_features, a_ratios, a_seeds, a_out;
    std::vector<std::string> a_sets;
    double a_t0 = 0.2;
    ana->add_option("mode", a_mode, "centroids | denoise-probe | metrics | ablate-mask")
        ->required();
    ana->add_option("--config", a_config, "run configuration file");
    ana->add_option("--set", a_sets, "override section.key=value");
    ana->add_option("--data", a_data, "dataset directory");
    ana->add_option("--checkpoint", a_ckpt, "checkpoint file");
    ana->add_option("--features", a_features, "precomputed feature shard directory");
    ana->add_option("--t0", a_t0, "denoise-probe start time (default 0.2)");
    ana->add_option("--ratios", a_ratios, "comma list of mask ratios");
    ana->add_option("--seeds", a_seeds, "comma list of seeds");
    ana->add_option("--out", a_out, "report directory (default reports/)");

    // verify
    app.add_subcommand("verify", "run the self-check suite");

    // make-dataset
    auto* mk = app.add_subcommand("make-dataset", "generate a synthetic dataset");
    std::string m_kind, m_out, m_config;
    std::vector<std::string> m_sets;
    uint64_t m_seed = 0;
    int64_t m_classes = 10, m_per = 64, m_image = 32;
    bool m_features = false;
    mk->add_option("--kind", m_kind, "shapes | tightmode")->required();
    mk->add_option("--out", m_out, "output directory")->required();
    mk->add_option("--seed", m_seed, "generation seed");
    mk->add_option("--classes", m_classes, "class count (default 10)");
    mk->add_option("--per-class", m_per, "images per class (default 64)");
    mk->add_option("--image-size", m_image, "image size (default 32)");
    mk->add_flag("--features", m_features, "also write precomputed feature shards");
    mk->add_option("--config", m_config, "config for the feature encoder");
    mk->add_option("--set", m_sets, "override section.key=value");

    try {
        std::vector<std::string> argv = args;
        std::reverse(argv.begin(), argv.end());  // CLI11 parses reversed vectors
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        CLI::App dummy;
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (train->parsed()) return cmd_train(t_config, t_sets, t_run_dir, t_data, t_dry);
        if (smp->parsed())
            return cmd_sample(s_ckpt, s_steps, s_w, s_interval, s_ema, s_seed, s_classes,
                              s_count, s_out);
        if (ana->parsed())
            return cmd_analyze(a_mode, a_config, a_sets, a_data, a_ckpt, a_features, a_t0,
                               a_ratios, a_seeds, a_out);
        if (app.get_subcommand("verify")->parsed()) return cmd_verify();
        if (mk->parsed())
            return cmd_make_dataset(m_kind, m_out, m_seed, m_classes, m_per, m_image,
                                    m_features, m_config, m_sets);
        std::cerr << "no subcommand given\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace pixdit
