#include "screloc/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace screloc {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad number for " + key + ": '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const std::uint64_t n = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw std::invalid_argument("config: bad flag for " + key + ": '" + v + "'");
}

// Tracks consumption so leftovers (typos, stale keys) can be rejected.
class KvReader {
public:
    explicit KvReader(const KeyValues& kv) : kv_(kv) {}

    bool present(const std::string& key) const { return kv_.count(key) != 0; }

    std::string str(const std::string& key, const std::string& def) {
        const auto it = kv_.find(key);
        if (it == kv_.end()) return def;
        seen_.insert(key);
        return it->second;
    }
    double num(const std::string& key, double def) {
        const auto it = kv_.find(key);
        if (it == kv_.end()) return def;
        seen_.insert(key);
        return parse_double(it->second, key);
    }
    std::uint64_t u64(const std::string& key, std::uint64_t def) {
        const auto it = kv_.find(key);
        if (it == kv_.end()) return def;
        seen_.insert(key);
        return parse_u64(it->second, key);
    }
    std::size_t size(const std::string& key, std::size_t def) {
        return static_cast<std::size_t>(u64(key, def));
    }
    bool flag(const std::string& key, bool def) {
        const auto it = kv_.find(key);
        if (it == kv_.end()) return def;
        seen_.insert(key);
        return parse_bool(it->second, key);
    }
    void finish() const {
        for (const auto& [k, v] : kv_)
            if (!seen_.count(k)) throw std::invalid_argument("config: unknown key '" + k + "'");
    }

private:
    const KeyValues& kv_;
    std::set<std::string> seen_;
};

}  // namespace

KeyValues parse_key_values(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not key=value");
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) throw std::invalid_argument("config: empty key on line " + std::to_string(lineno));
        if (!kv.emplace(key, trim(t.substr(eq + 1))).second)
            throw std::invalid_argument("config: duplicate key '" + key + "'");
    }
    return kv;
}

std::string serialize_key_values(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

KeyValues load_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_key_values(buf.str());
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

RunConfig parse_run_config(const KeyValues& kv) {
    KvReader r(kv);
    RunConfig rc;
    rc.config_version = static_cast<int>(r.u64("config_version", 1));
    if (rc.config_version != 1) throw std::invalid_argument("config: unsupported config_version");
    rc.preset = r.str("preset", rc.preset);
    if (rc.preset != "desk" && rc.preset != "full")
        throw std::invalid_argument("config: preset must be desk or full");
    rc.seed = r.u64("seed", rc.seed);
    rc.data_source = r.str("data.source", rc.data_source);

    if (rc.data_source == "synth") {
        if (r.present("files.scan_dir") || r.present("files.pose_csv"))
            throw std::invalid_argument("config: synth data source cannot take files.* paths");
    } else if (rc.data_source == "files") {
        for (const auto& [k, v] : kv)
            if (k.rfind("synth.", 0) == 0)
                throw std::invalid_argument("config: files data source cannot take synth.* keys");
        rc.scan_dir = r.str("files.scan_dir", "");
        rc.pose_csv = r.str("files.pose_csv", "");
        if (rc.scan_dir.empty() || rc.pose_csv.empty())
            throw std::invalid_argument("config: files data source needs files.scan_dir and files.pose_csv");
    } else {
        throw std::invalid_argument("config: data.source must be synth or files");
    }

    rc.synth.scene_seed = r.u64("synth.scene_seed", rc.synth.scene_seed);
    rc.synth.pose_seed = r.u64("synth.pose_seed", rc.synth.pose_seed);
    rc.synth.extent = r.num("synth.extent", rc.synth.extent);
    rc.synth.buildings = r.size("synth.buildings", rc.synth.buildings);
    rc.synth.scan_count = r.size("synth.scan_count", rc.synth.scan_count);
    rc.synth.ray_count = r.size("synth.ray_count", rc.synth.ray_count);
    rc.synth.alt_min = r.num("synth.alt_min", rc.synth.alt_min);
    rc.synth.alt_max = r.num("synth.alt_max", rc.synth.alt_max);
    rc.synth.xy_span = r.num("synth.xy_span", rc.synth.xy_span);
    rc.synth.max_range = r.num("synth.max_range", rc.synth.max_range);
    rc.synth.randomize_yaw = r.flag("synth.randomize_yaw", rc.synth.randomize_yaw);
    if (!(rc.synth.extent > 0.0) || rc.synth.scan_count < 1 || rc.synth.ray_count < 1)
        throw std::invalid_argument("config: bad synth recipe");
    if (!(rc.synth.alt_min > 0.0) || !(rc.synth.alt_min <= rc.synth.alt_max))
        throw std::invalid_argument("config: synth altitude band must sit above the ground");

    rc.train.epochs = r.size("train.epochs", rc.train.epochs);
    rc.train.batch = r.size("train.batch", rc.train.batch);
    rc.train.lr = r.num("train.lr", rc.train.lr);
    rc.train.shuffle_seed = r.u64("train.shuffle_seed", rc.train.shuffle_seed);

    rc.ransac.inlier_threshold_m = r.num("ransac.threshold_m", rc.ransac.inlier_threshold_m);
    rc.ransac.max_iterations = r.u64("ransac.max_iterations", rc.ransac.max_iterations);
    rc.ransac.confidence = r.num("ransac.confidence", rc.ransac.confidence);
    rc.ransac.edge_ratio = r.num("ransac.edge_ratio", rc.ransac.edge_ratio);
    rc.ransac.min_inliers = r.size("ransac.min_inliers", rc.ransac.min_inliers);

    rc.bench_max_tokens = r.size("bench.max_tokens", rc.bench_max_tokens);
    rc.bench_repeats = r.size("bench.repeats", rc.bench_repeats);
    r.finish();
    return rc;
}

KeyValues to_key_values(const RunConfig& rc) {
    KeyValues kv;
    kv["config_version"] = std::to_string(rc.config_version);
    kv["preset"] = rc.preset;
    kv["seed"] = std::to_string(rc.seed);
    kv["data.source"] = rc.data_source;
    if (rc.data_source == "files") {
        kv["files.scan_dir"] = rc.scan_dir;
        kv["files.pose_csv"] = rc.pose_csv;
    } else {
        kv["synth.scene_seed"] = std::to_string(rc.synth.scene_seed);
        kv["synth.pose_seed"] = std::to_string(rc.synth.pose_seed);
        kv["synth.extent"] = format_double(rc.synth.extent);
        kv["synth.buildings"] = std::to_string(rc.synth.buildings);
        kv["synth.scan_count"] = std::to_string(rc.synth.scan_count);
        kv["synth.ray_count"] = std::to_string(rc.synth.ray_count);
        kv["synth.alt_min"] = format_double(rc.synth.alt_min);
        kv["synth.alt_max"] = format_double(rc.synth.alt_max);
        kv["synth.xy_span"] = format_double(rc.synth.xy_span);
        kv["synth.max_range"] = format_double(rc.synth.max_range);
        kv["synth.randomize_yaw"] = rc.synth.randomize_yaw ? "1" : "0";
    }
    kv["train.epochs"] = std::to_string(rc.train.epochs);
    kv["train.batch"] = std::to_string(rc.train.batch);
    kv["train.lr"] = format_double(rc.train.lr);
    kv["train.shuffle_seed"] = std::to_string(rc.train.shuffle_seed);
    kv["ransac.threshold_m"] = format_double(rc.ransac.inlier_threshold_m);
    kv["ransac.max_iterations"] = std::to_string(rc.ransac.max_iterations);
    kv["ransac.confidence"] = format_double(rc.ransac.confidence);
    kv["ransac.edge_ratio"] = format_double(rc.ransac.edge_ratio);
    kv["ransac.min_inliers"] = std::to_string(rc.ransac.min_inliers);
    kv["bench.max_tokens"] = std::to_string(rc.bench_max_tokens);
    kv["bench.repeats"] = std::to_string(rc.bench_repeats);
    return kv;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(load_key_values(path)); }

ModelConfig model_for_preset(const std::string& preset) {
    if (preset == "desk") return ModelConfig::desk();
    if (preset == "full") return ModelConfig::full();
    throw std::invalid_argument("unknown preset '" + preset + "'");
}

namespace {

std::string curve_name(CurveKind c) { return c == CurveKind::Morton ? "morton" : "hilbert"; }
CurveKind curve_from(const std::string& s) {
    if (s == "morton") return CurveKind::Morton;
    if (s == "hilbert") return CurveKind::Hilbert;
    throw std::invalid_argument("config: unknown curve '" + s + "'");
}
std::string act_name(ad::Activation a) {
    switch (a) {
        case ad::Activation::Gelu: return "gelu";
        case ad::Activation::Softplus: return "softplus";
        case ad::Activation::Relu: return "relu";
    }
    return "gelu";
}
ad::Activation act_from(const std::string& s) {
    if (s == "gelu") return ad::Activation::Gelu;
    if (s == "softplus") return ad::Activation::Softplus;
    if (s == "relu") return ad::Activation::Relu;
    throw std::invalid_argument("config: unknown activation '" + s + "'");
}

std::string stages_to_string(const std::vector<StageConfig>& stages) {
    std::string out;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(stages[i].blocks) + ':' + std::to_string(stages[i].dim) + ':' +
               std::to_string(stages[i].heads) + ':' + std::to_string(stages[i].window_k);
    }
    return out;
}

std::vector<StageConfig> stages_from_string(const std::string& s) {
    std::vector<StageConfig> stages;
    if (s.empty()) return stages;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        StageConfig st;
        if (std::sscanf(item.c_str(), "%d:%d:%d:%d", &st.blocks, &st.dim, &st.heads, &st.window_k) != 4)
            throw std::invalid_argument("config: bad stage entry '" + item + "'");
        stages.push_back(st);
    }
    return stages;
}

}  // namespace

KeyValues model_to_key_values(const ModelConfig& cfg) {
    KeyValues kv;
    kv["model.voxel_size"] = format_double(cfg.voxel_size);
    kv["model.pool_kernel"] = std::to_string(cfg.pool_kernel);
    kv["model.curve"] = curve_name(cfg.curve);
    kv["model.init_dim"] = std::to_string(cfg.init_dim);
    kv["model.init_heads"] = std::to_string(cfg.init_heads);
    kv["model.init_window_k"] = std::to_string(cfg.init_window_k);
    kv["model.stages"] = stages_to_string(cfg.stages);
    kv["model.head_layers"] = std::to_string(cfg.head_layers);
    kv["model.head_width"] = std::to_string(cfg.head_width);
    kv["model.bias_dim"] = std::to_string(cfg.bias_dim);
    kv["model.phi3_hidden"] = std::to_string(cfg.phi3_hidden);
    kv["model.act"] = act_name(cfg.act);
    kv["model.use_xyz_features"] = cfg.use_xyz_features ? "1" : "0";
    kv["model.softmax_free_first"] = cfg.softmax_free_first ? "1" : "0";
    kv["model.position_bias"] = cfg.position_bias ? "1" : "0";
    return kv;
}

ModelConfig model_from_key_values(const KeyValues& kv) {
    KvReader r(kv);
    ModelConfig cfg;
    cfg.voxel_size = r.num("model.voxel_size", cfg.voxel_size);
    cfg.pool_kernel = r.size("model.pool_kernel", cfg.pool_kernel);
    cfg.curve = curve_from(r.str("model.curve", curve_name(cfg.curve)));
    cfg.init_dim = static_cast<int>(r.u64("model.init_dim", cfg.init_dim));
    cfg.init_heads = static_cast<int>(r.u64("model.init_heads", cfg.init_heads));
    cfg.init_window_k = static_cast<int>(r.u64("model.init_window_k", cfg.init_window_k));
    cfg.stages = stages_from_string(r.str("model.stages", ""));
    cfg.head_layers = static_cast<int>(r.u64("model.head_layers", cfg.head_layers));
    cfg.head_width = static_cast<int>(r.u64("model.head_width", cfg.head_width));
    cfg.bias_dim = static_cast<int>(r.u64("model.bias_dim", cfg.bias_dim));
    cfg.phi3_hidden = static_cast<int>(r.u64("model.phi3_hidden", cfg.phi3_hidden));
    cfg.act = act_from(r.str("model.act", act_name(cfg.act)));
    cfg.use_xyz_features = r.flag("model.use_xyz_features", cfg.use_xyz_features);
    cfg.softmax_free_first = r.flag("model.softmax_free_first", cfg.softmax_free_first);
    cfg.position_bias = r.flag("model.position_bias", cfg.position_bias);
    r.finish();
    validate_model_config(cfg);
    return cfg;
}

}  // namespace screloc
