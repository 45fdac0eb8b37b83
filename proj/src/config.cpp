// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdit/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace pixdit {

namespace {

struct Value {
    enum Kind { Bool, Int, Float, Str, Arr } kind;
    bool b = false;
    int64_t i = 0;
    double d = 0.0;
    std::string s;
    std::vector<Value> arr;
    int line = 0;

    int64_t as_int(const std::string& key) const {
        if (kind != Int)
            throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                              "' expects an integer");
        return i;
    }
    double as_float(const std::string& key) const {
        if (kind == Int) return double(i);
        if (kind != Float)
            throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                              "' expects a number");
        return d;
    }
    bool as_bool(const std::string& key) const {
        if (kind != Bool)
            throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                              "' expects true/false");
        return b;
    }
    std::string as_str(const std::string& key) const {
        if (kind == Str) return s;
        // numeric-looking strings (EMA decay keys) arrive as numbers
        if (kind == Int) return std::to_string(i);
        if (kind == Float) {
            char buf[64];
            auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), d);
            return std::string(buf, p);
        }
        throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                          "' expects a string");
    }
    std::vector<double> as_float_list(const std::string& key) const {
        if (kind != Arr)
            throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                              "' expects an array");
        std::vector<double> out;
        for (const Value& v : arr) out.push_back(v.as_float(key));
        return out;
    }
};

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

Value parse_scalar(const std::string& tok, int line) {
    Value v;
    v.line = line;
    if (tok == "true" || tok == "false") {
        v.kind = Value::Bool;
        v.b = tok == "true";
        return v;
    }
    if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"') {
        v.kind = Value::Str;
        v.s = tok.substr(1, tok.size() - 2);
        return v;
    }
    bool floaty = tok.find_first_of(".eE") != std::string::npos &&
                  tok.find_first_not_of("+-0123456789.eE") == std::string::npos;
    if (!floaty) {
        int64_t iv = 0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), iv);
        if (ec == std::errc() && p == tok.data() + tok.size()) {
            v.kind = Value::Int;
            v.i = iv;
            return v;
        }
    }
    {
        double dv = 0.0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), dv);
        if (ec == std::errc() && p == tok.data() + tok.size()) {
            v.kind = Value::Float;
            v.d = dv;
            return v;
        }
    }
    throw ConfigError("line " + std::to_string(line) + ": cannot parse value '" + tok + "'");
}

Value parse_value(const std::string& raw, int line) {
    std::string tok = trim(raw);
    if (tok.empty()) throw ConfigError("line " + std::to_string(line) + ": empty value");
    if (tok.front() == '[') {
        if (tok.back() != ']')
            throw ConfigError("line " + std::to_string(line) + ": unterminated array");
        Value v;
        v.kind = Value::Arr;
        v.line = line;
        std::string inner = tok.substr(1, tok.size() - 2);
        std::string cur;
        for (char ch : inner) {
            if (ch == ',') {
                if (!trim(cur).empty()) v.arr.push_back(parse_scalar(trim(cur), line));
                cur.clear();
            } else {
                cur += ch;
            }
        }
        if (!trim(cur).empty()) v.arr.push_back(parse_scalar(trim(cur), line));
        return v;
    }
    return parse_scalar(tok, line);
}

std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_str = !in_str;
        if (line[i] == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

using Section = std::map<std::string, Value>;
using Table   = std::map<std::string, Section>;

Table parse_table(const std::string& text) {
    Table tab;
    std::istringstream is(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string s = trim(strip_comment(line));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) + ": bad section header");
            section = trim(s.substr(1, s.size() - 2));
            if (section.empty())
                throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
            continue;
        }
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(s.substr(0, eq));
        if (key.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        if (section.empty())
            throw ConfigError("line " + std::to_string(lineno) +
                              ": key outside of any [section]");
        Section& sec = tab[section];
        if (sec.count(key))
            throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key +
                              "' in [" + section + "]");
        sec[key] = parse_value(s.substr(eq + 1), lineno);
    }
    return tab;
}

// --- per-section bindings -------------------------------------------------

void set_model(ModelConfig& m, const std::string& k, const Value& v) {
    if (k == "image_size") m.image_size = v.as_int(k);
    else if (k == "patch_size") m.patch_size = v.as_int(k);
    else if (k == "channels") m.channels = v.as_int(k);
    else if (k == "depth") m.depth = v.as_int(k);
    else if (k == "hidden_dim") m.hidden_dim = v.as_int(k);
    else if (k == "heads") m.heads = v.as_int(k);
    else if (k == "num_classes") m.num_classes = v.as_int(k);
    else if (k == "in_context_tokens") m.in_context_tokens = v.as_int(k);
    else if (k == "in_context_start_block") m.in_context_start_block = v.as_int(k);
    else if (k == "alignment_depth") m.alignment_depth = v.as_int(k);
    else if (k == "mlp_ratio") m.mlp_ratio = v.as_int(k);
    else throw ConfigError("line " + std::to_string(v.line) + ": unknown key 'model." + k + "'");
}

void set_train(TrainConfig& t, const std::string& k, const Value& v) {
    if (k == "lr") t.lr = v.as_float(k);
    else if (k == "beta1") t.beta1 = v.as_float(k);
    else if (k == "beta2") t.beta2 = v.as_float(k);
    else if (k == "batch_size") t.batch_size = v.as_int(k);
    else if (k == "steps") t.steps = v.as_int(k);
    else if (k == "ema_decays") t.ema_decays = v.as_float_list(k);
    else if (k == "seed") t.seed = uint64_t(v.as_int(k));
    else if (k == "grad_clip") t.grad_clip = v.as_float(k);
    else if (k == "class_drop") t.class_drop = v.as_float(k);
    else if (k == "checkpoint_every") t.checkpoint_every = v.as_int(k);
    else throw ConfigError("line " + std::to_string(v.line) + ": unknown key 'train." + k + "'");
}

void set_alignment(AlignmentConfig& a, const std::string& k, const Value& v) {
    if (k == "variant") a.variant = v.as_str(k);
    else if (k == "mask_ratio") a.mask_ratio = v.as_float(k);
    else if (k == "lambda") a.lambda = v.as_float(k);
    else if (k == "learned_mask_token") a.learned_mask_token = v.as_bool(k);
    else if (k == "encoder") a.encoder = v.as_str(k);
    else if (k == "feature_dim") a.feature_dim = v.as_int(k);
    else if (k == "encoder_patch") a.encoder_patch = v.as_int(k);
    else if (k == "encoder_depth") a.encoder_depth = v.as_int(k);
    else if (k == "encoder_hidden") a.encoder_hidden = v.as_int(k);
    else if (k == "encoder_heads") a.encoder_heads = v.as_int(k);
    else if (k == "encoder_seed") a.encoder_seed = uint64_t(v.as_int(k));
    else if (k == "pool_grid") a.pool_grid = v.as_int(k);
    else if (k == "pool_blur") a.pool_blur = v.as_int(k);
    else if (k == "features_dir") a.features_dir = v.as_str(k);
    else throw ConfigError("line " + std::to_string(v.line) + ": unknown key 'alignment." + k + "'");
}

void set_sampler(SamplerConfig& s, const std::string& k, const Value& v) {
    if (k == "steps") s.steps = v.as_int(k);
    else if (k == "guidance_scale") s.guidance_scale = v.as_float(k);
    else if (k == "interval_lo") s.interval_lo = v.as_float(k);
    else if (k == "interval_hi") s.interval_hi = v.as_float(k);
    else if (k == "ema") s.ema = v.as_str(k);
    else throw ConfigError("line " + std::to_string(v.line) + ": unknown key 'sampler." + k + "'");
}

void set_data(DataConfig& d, const std::string& k, const Value& v) {
    if (k == "dir") d.dir = v.as_str(k);
    else if (k == "kind") d.kind = v.as_str(k);
    else if (k == "classes") d.classes = v.as_int(k);
    else if (k == "per_class") d.per_class = v.as_int(k);
    else if (k == "seed") d.seed = uint64_t(v.as_int(k));
    else throw ConfigError("line " + std::to_string(v.line) + ": unknown key 'data." + k + "'");
}

void set_analysis(AnalysisConfig& a, const std::string& k, const Value& v) {
    if (k == "subset_k") a.subset_k = v.as_int(k);
    else if (k == "probe_t0") a.probe_t0 = v.as_float(k);
    else if (k == "sample_count") a.sample_count = v.as_int(k);
    else if (k == "mask_ratios") a.mask_ratios = v.as_float_list(k);
    else throw ConfigError("line " + std::to_string(v.line) + ": unknown key 'analysis." + k + "'");
}

void apply_section(RunConfig& cfg, const std::string& sec, const std::string& key,
                   const Value& v) {
    if (sec == "model") set_model(cfg.model, key, v);
    else if (sec == "train") set_train(cfg.train, key, v);
    else if (sec == "alignment") set_alignment(cfg.alignment, key, v);
    else if (sec == "sampler") set_sampler(cfg.sampler, key, v);
    else if (sec == "data") set_data(cfg.data, key, v);
    else if (sec == "analysis") set_analysis(cfg.analysis, key, v);
    else throw ConfigError("line " + std::to_string(v.line) + ": unknown section [" + sec + "]");
}

// --- canonical emission ----------------------------------------------------

std::string fmt_int(int64_t v) { return std::to_string(v); }

std::string fmt_float(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    std::string s(buf, p);
    // mark as float so the canonical form re-parses into the same kind
    if (s.find_first_of(".eE") == std::string::npos) s += ".0";
    return s;
}

std::string fmt_str(const std::string& s) { return "\"" + s + "\""; }

std::string fmt_float_list(const std::vector<double>& v) {
    std::string s = "[";
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ", ";
        s += fmt_float(v[i]);
    }
    return s + "]";
}

using KV = std::vector<std::pair<std::string, std::string>>;

KV emit_model(const ModelConfig& m) {
    return {{"alignment_depth", fmt_int(m.alignment_depth)},
            {"channels", fmt_int(m.channels)},
            {"depth", fmt_int(m.depth)},
            {"heads", fmt_int(m.heads)},
            {"hidden_dim", fmt_int(m.hidden_dim)},
            {"image_size", fmt_int(m.image_size)},
            {"in_context_start_block", fmt_int(m.in_context_start_block)},
            {"in_context_tokens", fmt_int(m.in_context_tokens)},
            {"mlp_ratio", fmt_int(m.mlp_ratio)},
            {"num_classes", fmt_int(m.num_classes)},
            {"patch_size", fmt_int(m.patch_size)}};
}

KV emit_train(const TrainConfig& t) {
    return {{"batch_size", fmt_int(t.batch_size)},
            {"beta1", fmt_float(t.beta1)},
            {"beta2", fmt_float(t.beta2)},
            {"checkpoint_every", fmt_int(t.checkpoint_every)},
            {"class_drop", fmt_float(t.class_drop)},
            {"ema_decays", fmt_float_list(t.ema_decays)},
            {"grad_clip", fmt_float(t.grad_clip)},
            {"lr", fmt_float(t.lr)},
            {"seed", fmt_int(int64_t(t.seed))},
            {"steps", fmt_int(t.steps)}};
}

KV emit_alignment(const AlignmentConfig& a) {
    return {{"encoder", fmt_str(a.encoder)},
            {"encoder_depth", fmt_int(a.encoder_depth)},
            {"encoder_heads", fmt_int(a.encoder_heads)},
            {"encoder_hidden", fmt_int(a.encoder_hidden)},
            {"encoder_patch", fmt_int(a.encoder_patch)},
            {"encoder_seed", fmt_int(int64_t(a.encoder_seed))},
            {"feature_dim", fmt_int(a.feature_dim)},
            {"features_dir", fmt_str(a.features_dir)},
            {"lambda", fmt_float(a.lambda)},
            {"learned_mask_token", a.learned_mask_token ? "true" : "false"},
            {"mask_ratio", fmt_float(a.mask_ratio)},
            {"pool_blur", fmt_int(a.pool_blur)},
            {"pool_grid", fmt_int(a.pool_grid)},
            {"variant", fmt_str(a.variant)}};
}

KV emit_sampler(const SamplerConfig& s) {
    return {{"ema", fmt_str(s.ema)},
            {"guidance_scale", fmt_float(s.guidance_scale)},
            {"interval_hi", fmt_float(s.interval_hi)},
            {"interval_lo", fmt_float(s.interval_lo)},
            {"steps", fmt_int(s.steps)}};
}

KV emit_data(const DataConfig& d) {
    return {{"classes", fmt_int(d.classes)},
            {"dir", fmt_str(d.dir)},
            {"kind", fmt_str(d.kind)},
            {"per_class", fmt_int(d.per_class)},
            {"seed", fmt_int(int64_t(d.seed))}};
}

KV emit_analysis(const AnalysisConfig& a) {
    return {{"mask_ratios", fmt_float_list(a.mask_ratios)},
            {"probe_t0", fmt_float(a.probe_t0)},
            {"sample_count", fmt_int(a.sample_count)},
            {"subset_k", fmt_int(a.subset_k)}};
}

}  // namespace

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string RunConfig::canonical() const {
    std::ostringstream os;
    auto section = [&](const char* name, const KV& kv) {
        os << "[" << name << "]\n";
        for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
        os << "\n";
    };
    section("model", emit_model(model));
    section("train", emit_train(train));
    section("alignment", emit_alignment(alignment));
    section("sampler", emit_sampler(sampler));
    section("data", emit_data(data));
    section("analysis", emit_analysis(analysis));
    return os.str();
}

std::string RunConfig::hash() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical())));
    return std::string(buf);
}

RunConfig parse_run_config(const std::string& text) {
    Table tab = parse_table(text);
    RunConfig cfg;
    for (const auto& [sec, kv] : tab)
        for (const auto& [key, val] : kv) apply_section(cfg, sec, key, val);
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_run_config(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& spec) {
    size_t eq = spec.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must look like section.key=value: " + spec);
    std::string path = trim(spec.substr(0, eq));
    size_t dot = path.find('.');
    if (dot == std::string::npos)
        throw ConfigError("override key must be section.key: " + spec);
    Value v;
    try {
        v = parse_value(spec.substr(eq + 1), 0);
    } catch (const ConfigError&) {
        // overrides usually come from a shell, so bare strings are fine
        v.kind = Value::Str;
        v.s = trim(spec.substr(eq + 1));
    }
    apply_section(cfg, path.substr(0, dot), path.substr(dot + 1), v);
    cfg.validate();
}

}  // namespace pixdit
