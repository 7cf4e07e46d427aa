#include "screloc/encoder.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace screloc {

GeometricToken geometric_token(const Vec3& center, const Vec3& neighbor) {
    const Vec3 d = neighbor - center;
    GeometricToken t;
    t.range_xy = std::hypot(d.x(), d.y());
    t.elevation = std::atan2(d.z(), t.range_xy);  // 0 for the self pair
    return t;
}

ad::Mat window_geometric_tokens(const std::vector<Vec3>& positions, const ad::WindowMap& wm) {
    if (static_cast<int>(positions.size()) != wm.size())
        throw std::invalid_argument("window_geometric_tokens: position count mismatch");
    for (const Vec3& p : positions)
        if (!p.allFinite()) throw std::invalid_argument("window_geometric_tokens: non-finite position");
    ad::Mat geo(wm.total, 2);
    for (int i = 0; i < wm.size(); ++i) {
        for (int jj = 0; jj < wm.len[i]; ++jj) {
            const GeometricToken t = geometric_token(positions[i], positions[wm.start[i] + jj]);
            geo(wm.offset[i] + jj, 0) = t.range_xy;
            geo(wm.offset[i] + jj, 1) = t.elevation;
        }
    }
    return geo;
}

ModelConfig ModelConfig::desk() {
    ModelConfig cfg;
    cfg.init_dim = 16;
    cfg.init_heads = 2;
    cfg.init_window_k = 4;
    cfg.stages = {{1, 16, 2, 4}, {1, 32, 4, 4}, {1, 64, 8, 8}};
    cfg.head_layers = 3;
    cfg.head_width = 128;
    cfg.bias_dim = 8;
    cfg.phi3_hidden = 16;
    return cfg;
}

ModelConfig ModelConfig::full() {
    ModelConfig cfg;
    cfg.init_dim = 64;
    cfg.init_heads = 2;
    cfg.init_window_k = 8;
    cfg.stages = {{2, 128, 4, 8}, {2, 256, 8, 8}, {4, 512, 16, 16}};
    cfg.head_layers = 6;
    cfg.head_width = 1024;
    cfg.bias_dim = 16;
    cfg.phi3_hidden = 32;
    return cfg;
}

void validate_model_config(const ModelConfig& cfg) {
    if (!(cfg.voxel_size > 0.0)) throw std::invalid_argument("model config: voxel_size must be positive");
    if (cfg.pool_kernel < 1) throw std::invalid_argument("model config: pool_kernel must be >= 1");
    if (cfg.init_dim < 1 || cfg.init_heads < 1 || cfg.init_dim % cfg.init_heads != 0)
        throw std::invalid_argument("model config: init_dim must divide into init_heads");
    if (cfg.init_window_k < 1) throw std::invalid_argument("model config: window half-width must be >= 1");
    for (const StageConfig& s : cfg.stages) {
        if (s.blocks < 1) throw std::invalid_argument("model config: stage blocks must be >= 1");
        if (s.dim < 1 || s.heads < 1 || s.dim % s.heads != 0)
            throw std::invalid_argument("model config: stage dim must divide into heads");
        if (s.window_k < 1) throw std::invalid_argument("model config: window half-width must be >= 1");
    }
    if (cfg.head_layers < 0 || cfg.head_width < 1) throw std::invalid_argument("model config: bad head shape");
    if (cfg.bias_dim < 1 || cfg.phi3_hidden < 1) throw std::invalid_argument("model config: bad bias channel shape");
}

const ad::Mat& tensor(const NamedTensors& tensors, const std::string& name) {
    for (const auto& [n, m] : tensors)
        if (n == name) return m;
    throw std::invalid_argument("missing weight tensor: " + name);
}

ad::Mat* find_tensor(NamedTensors& tensors, const std::string& name) {
    for (auto& [n, m] : tensors)
        if (n == name) return &m;
    return nullptr;
}

namespace {

struct TensorSpec {
    std::string name;
    int rows;
    int cols;
    bool is_weight;  // weights get fan-in init, biases start at zero
};

void push_linear(std::vector<TensorSpec>& out, const std::string& prefix, int in, int dim) {
    out.push_back({prefix + ".w", in, dim, true});
    out.push_back({prefix + ".b", 1, dim, false});
}

void push_attn(std::vector<TensorSpec>& out, const std::string& prefix, int dim, int heads, int bias_dim,
               int phi3_hidden) {
    push_linear(out, prefix + ".pq", dim, dim);
    push_linear(out, prefix + ".pk", dim, dim);
    push_linear(out, prefix + ".pv", dim, dim);
    push_linear(out, prefix + ".phi2", dim, heads * bias_dim);
    push_linear(out, prefix + ".phi3.l0", 2, phi3_hidden);
    push_linear(out, prefix + ".phi3.l1", phi3_hidden, heads * bias_dim);
}

std::vector<TensorSpec> enumerate_weights(const ModelConfig& cfg) {
    std::vector<TensorSpec> specs;
    const int in_dim = cfg.use_xyz_features ? 3 : 1;
    push_linear(specs, "cipcs.l0", in_dim, cfg.init_dim);
    push_linear(specs, "cipcs.l1", cfg.init_dim, cfg.init_dim);
    push_attn(specs, "init.attn", cfg.init_dim, cfg.init_heads, cfg.bias_dim, cfg.phi3_hidden);
    int prev = cfg.init_dim;
    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
        const StageConfig& st = cfg.stages[s];
        const std::string sp = "stage" + std::to_string(s);
        push_linear(specs, sp + ".proj", prev, st.dim);
        for (int b = 0; b < st.blocks; ++b)
            push_attn(specs, sp + ".block" + std::to_string(b) + ".attn", st.dim, st.heads, cfg.bias_dim,
                      cfg.phi3_hidden);
        prev = st.dim;
    }
    for (int t = 0; t < cfg.head_layers; ++t) {
        push_linear(specs, "head.l" + std::to_string(t), t == 0 ? prev : cfg.head_width, cfg.head_width);
        if (cfg.head_layers > 0) prev = cfg.head_width;
    }
    push_linear(specs, "head.out", prev, 3);
    return specs;
}

ad::Mat gaussian_matrix(std::mt19937_64& rng, int rows, int cols) {
    std::normal_distribution<double> dist(0.0, 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
    ad::Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = dist(rng) * scale;
    return m;
}

}  // namespace

NamedTensors init_weights(const ModelConfig& cfg, std::uint64_t seed) {
    validate_model_config(cfg);
    std::mt19937_64 rng(seed);
    NamedTensors weights;
    for (const TensorSpec& spec : enumerate_weights(cfg)) {
        if (spec.is_weight)
            weights.emplace_back(spec.name, gaussian_matrix(rng, spec.rows, spec.cols));
        else
            weights.emplace_back(spec.name, ad::Mat::Zero(spec.rows, spec.cols));
    }
    return weights;
}

AttnWeights init_attn_weights(int dim, int heads, int bias_dim, int phi3_hidden, std::uint64_t seed) {
    if (dim < 1 || heads < 1 || dim % heads != 0) throw std::invalid_argument("attention dim must divide into heads");
    std::mt19937_64 rng(seed);
    AttnWeights w;
    w.pq_w = gaussian_matrix(rng, dim, dim);
    w.pq_b = ad::Mat::Zero(1, dim);
    w.pk_w = gaussian_matrix(rng, dim, dim);
    w.pk_b = ad::Mat::Zero(1, dim);
    w.pv_w = gaussian_matrix(rng, dim, dim);
    w.pv_b = ad::Mat::Zero(1, dim);
    w.phi2_w = gaussian_matrix(rng, dim, heads * bias_dim);
    w.phi2_b = ad::Mat::Zero(1, heads * bias_dim);
    w.phi3_l0_w = gaussian_matrix(rng, 2, phi3_hidden);
    w.phi3_l0_b = ad::Mat::Zero(1, phi3_hidden);
    w.phi3_l1_w = gaussian_matrix(rng, phi3_hidden, heads * bias_dim);
    w.phi3_l1_b = ad::Mat::Zero(1, heads * bias_dim);
    return w;
}

FeatureSequence cipcs_init(std::size_t token_count, const NamedTensors& weights, const ModelConfig& cfg) {
    if (token_count < 1) throw std::invalid_argument("cipcs_init: token_count must be >= 1");
    if (cfg.use_xyz_features) throw std::invalid_argument("cipcs_init: only defined for the constant-feature seed");
    const ad::Mat ones = ad::Mat::Ones(static_cast<Eigen::Index>(token_count), 1);
    const ad::Mat hidden = ad::activation_forward(
        (ones * tensor(weights, "cipcs.l0.w")).rowwise() + tensor(weights, "cipcs.l0.b").row(0), cfg.act);
    return (hidden * tensor(weights, "cipcs.l1.w")).rowwise() + tensor(weights, "cipcs.l1.b").row(0);
}

namespace {

struct AttnNodeIds {
    ad::NodeId pq_w, pq_b, pk_w, pk_b, pv_w, pv_b;
    ad::NodeId phi2_w, phi2_b, phi3_l0_w, phi3_l0_b, phi3_l1_w, phi3_l1_b;
};

ad::NodeId apply_attention(ad::Graph& g, ad::NodeId f, const std::vector<Vec3>& positions, int window_k, int heads,
                           int bias_dim, bool softmax, bool position_bias, ad::Activation act, const AttnNodeIds& p) {
    const ad::WindowMap wm = ad::make_window_map(static_cast<int>(positions.size()), window_k);
    const ad::NodeId q = g.add_row(g.matmul(f, p.pq_w), p.pq_b);
    const ad::NodeId k = g.add_row(g.matmul(f, p.pk_w), p.pk_b);
    const ad::NodeId v = g.add_row(g.matmul(f, p.pv_w), p.pv_b);
    ad::NodeId q2 = ad::kNoNode;
    ad::NodeId k2 = ad::kNoNode;
    if (position_bias) {
        q2 = g.add_row(g.matmul(f, p.phi2_w), p.phi2_b);
        const ad::NodeId geo = g.input(window_geometric_tokens(positions, wm));
        const ad::NodeId hidden = g.activation(g.add_row(g.matmul(geo, p.phi3_l0_w), p.phi3_l0_b), act);
        k2 = g.add_row(g.matmul(hidden, p.phi3_l1_w), p.phi3_l1_b);
    }
    return g.sliding_window_attention(q, k, v, q2, k2, wm, heads, bias_dim, softmax);
}

}  // namespace

FeatureSequence loswatt_layer(const FeatureSequence& features, const std::vector<Vec3>& positions,
                              const AttnWeights& w, int heads, int bias_dim, int window_k, bool softmax,
                              bool position_bias, ad::Activation act) {
    ad::Graph g;
    AttnNodeIds ids;
    ids.pq_w = g.input(w.pq_w);
    ids.pq_b = g.input(w.pq_b);
    ids.pk_w = g.input(w.pk_w);
    ids.pk_b = g.input(w.pk_b);
    ids.pv_w = g.input(w.pv_w);
    ids.pv_b = g.input(w.pv_b);
    ids.phi2_w = g.input(w.phi2_w);
    ids.phi2_b = g.input(w.phi2_b);
    ids.phi3_l0_w = g.input(w.phi3_l0_w);
    ids.phi3_l0_b = g.input(w.phi3_l0_b);
    ids.phi3_l1_w = g.input(w.phi3_l1_w);
    ids.phi3_l1_b = g.input(w.phi3_l1_b);
    const ad::NodeId f = g.input(features);
    const ad::NodeId out = apply_attention(g, f, positions, window_k, heads, bias_dim, softmax, position_bias, act, ids);
    return g.value(out);
}

BuiltModel build_forward(const PointCloud& scan, const ModelConfig& cfg, const NamedTensors& weights,
                         bool track_gradients) {
    validate_model_config(cfg);
    const std::vector<TensorSpec> specs = enumerate_weights(cfg);
    if (weights.size() != specs.size())
        throw std::invalid_argument("build_forward: weight count does not match the model config");
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (weights[i].first != specs[i].name)
            throw std::invalid_argument("build_forward: expected tensor " + specs[i].name + ", got " +
                                        weights[i].first);
        if (weights[i].second.rows() != specs[i].rows || weights[i].second.cols() != specs[i].cols)
            throw std::invalid_argument("build_forward: tensor " + specs[i].name + " has the wrong shape");
    }

    const VoxelGrid grid = voxelize(scan, cfg.voxel_size);
    SerializedCloud ser = serialize(grid, cfg.curve);

    BuiltModel m;
    m.graph = std::make_unique<ad::Graph>();
    ad::Graph& g = *m.graph;
    for (const auto& [name, mat] : weights)
        m.param_ids[name] = track_gradients ? g.param(name, mat) : g.input(mat);
    auto pid = [&m](const std::string& name) {
        const auto it = m.param_ids.find(name);
        if (it == m.param_ids.end()) throw std::logic_error("missing weight tensor: " + name);
        return it->second;
    };
    auto attn_ids = [&pid](const std::string& prefix) {
        AttnNodeIds ids;
        ids.pq_w = pid(prefix + ".pq.w");
        ids.pq_b = pid(prefix + ".pq.b");
        ids.pk_w = pid(prefix + ".pk.w");
        ids.pk_b = pid(prefix + ".pk.b");
        ids.pv_w = pid(prefix + ".pv.w");
        ids.pv_b = pid(prefix + ".pv.b");
        ids.phi2_w = pid(prefix + ".phi2.w");
        ids.phi2_b = pid(prefix + ".phi2.b");
        ids.phi3_l0_w = pid(prefix + ".phi3.l0.w");
        ids.phi3_l0_b = pid(prefix + ".phi3.l0.b");
        ids.phi3_l1_w = pid(prefix + ".phi3.l1.w");
        ids.phi3_l1_b = pid(prefix + ".phi3.l1.b");
        return ids;
    };

    // Seed tokens. The working configuration feeds every token the same
    // constant, so at this point the sequence carries no appearance at all.
    ad::Mat seed_in;
    const Eigen::Index n0 = static_cast<Eigen::Index>(ser.size());
    if (cfg.use_xyz_features) {
        seed_in.resize(n0, 3);
        for (Eigen::Index i = 0; i < n0; ++i) seed_in.row(i) = ser.positions[i].transpose();
    } else {
        seed_in = ad::Mat::Ones(n0, 1);
    }
    ad::NodeId f = g.add_row(g.matmul(g.input(seed_in), pid("cipcs.l0.w")), pid("cipcs.l0.b"));
    f = g.activation(f, cfg.act);
    f = g.add_row(g.matmul(f, pid("cipcs.l1.w")), pid("cipcs.l1.b"));

    f = apply_attention(g, f, ser.positions, cfg.init_window_k, cfg.init_heads, cfg.bias_dim,
                        !cfg.softmax_free_first, cfg.position_bias, cfg.act, attn_ids("init.attn"));

    for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
        const StageConfig& st = cfg.stages[s];
        const std::string sp = "stage" + std::to_string(s);
        PoolPlan plan = plan_pooling(ser, {cfg.pool_kernel});
        f = g.group_max(f, std::move(plan.groups));
        ser = std::move(plan.pooled);
        f = g.add_row(g.matmul(f, pid(sp + ".proj.w")), pid(sp + ".proj.b"));
        for (int b = 0; b < st.blocks; ++b)
            f = apply_attention(g, f, ser.positions, st.window_k, st.heads, cfg.bias_dim, true, cfg.position_bias,
                                cfg.act, attn_ids(sp + ".block" + std::to_string(b) + ".attn"));
    }

    for (int t = 0; t < cfg.head_layers; ++t)
        f = g.activation(g.add_row(g.matmul(f, pid("head.l" + std::to_string(t) + ".w")),
                                   pid("head.l" + std::to_string(t) + ".b")),
                         cfg.act);
    m.prediction = g.add_row(g.matmul(f, pid("head.out.w")), pid("head.out.b"));
    m.token_positions = ser.positions;
    return m;
}

CorrespondenceSet forward(const PointCloud& scan, const ModelConfig& cfg, const NamedTensors& weights) {
    const BuiltModel m = build_forward(scan, cfg, weights, false);
    const ad::Mat& pred = m.graph->value(m.prediction);
    CorrespondenceSet out;
    out.reserve(m.token_positions.size());
    for (std::size_t i = 0; i < m.token_positions.size(); ++i)
        out.push_back({m.token_positions[i], pred.row(static_cast<Eigen::Index>(i)).transpose()});
    return out;
}

}  // namespace screloc
