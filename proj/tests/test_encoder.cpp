#include "screloc/encoder.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace screloc;
using ad::Mat;

namespace {

constexpr double kPi = 3.14159265358979323846;

PointCloud random_cloud(std::size_t n, std::uint64_t seed, double span = 6.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-span, span);
    PointCloud cloud;
    for (std::size_t i = 0; i < n; ++i) cloud.points.emplace_back(d(rng), d(rng), d(rng));
    return cloud;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.voxel_size = 0.5;
    cfg.pool_kernel = 2;
    cfg.init_dim = 4;
    cfg.init_heads = 2;
    cfg.init_window_k = 2;
    cfg.stages = {{1, 6, 2, 2}, {1, 8, 2, 2}};
    cfg.head_layers = 2;
    cfg.head_width = 5;
    cfg.bias_dim = 2;
    cfg.phi3_hidden = 3;
    return cfg;
}

std::vector<Vec3> transformed(const std::vector<Vec3>& positions, double yaw, double dz) {
    const Pose pose = yaw_rotation(yaw, dz);
    std::vector<Vec3> out;
    out.reserve(positions.size());
    for (const Vec3& p : positions) out.push_back(pose * p);
    return out;
}

double row_spread(const Mat& m) {
    double spread = 0.0;
    for (Eigen::Index i = 1; i < m.rows(); ++i)
        spread = std::max(spread, (m.row(i) - m.row(0)).cwiseAbs().maxCoeff());
    return spread;
}

}  // namespace

TEST_CASE("geometric_token reduces neighbours to range and elevation") {
    const GeometricToken flat = geometric_token(Vec3(0, 0, 0), Vec3(3, 4, 0));
    CHECK(flat.range_xy == doctest::Approx(5.0));
    CHECK(flat.elevation == 0.0);

    const GeometricToken above = geometric_token(Vec3(2, -1, 4), Vec3(2, -1, 5));
    CHECK(above.range_xy == 0.0);
    CHECK(above.elevation == doctest::Approx(kPi / 2.0));

    const GeometricToken diag = geometric_token(Vec3(0, 0, 0), Vec3(1, 1, std::sqrt(2.0)));
    CHECK(std::abs(diag.range_xy - std::sqrt(2.0)) <= 1e-12);
    CHECK(std::abs(diag.elevation - kPi / 4.0) <= 1e-12);

    const GeometricToken self = geometric_token(Vec3(7, 7, 7), Vec3(7, 7, 7));
    CHECK(self.range_xy == 0.0);
    CHECK(self.elevation == 0.0);
}

TEST_CASE("geometric tokens ignore yaw and altitude") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> coord(-10.0, 10.0);
    std::uniform_real_distribution<double> yaw(0.0, 2.0 * kPi);
    std::uniform_real_distribution<double> dz(-5.0, 5.0);

    for (int trial = 0; trial < 200; ++trial) {
        const Vec3 c(coord(rng), coord(rng), coord(rng));
        const Vec3 n(coord(rng), coord(rng), coord(rng));
        const GeometricToken base = geometric_token(c, n);
        const Pose t = yaw_rotation(yaw(rng), dz(rng));
        const GeometricToken moved = geometric_token(t * c, t * n);
        CHECK(std::abs(moved.range_xy - base.range_xy) <= 1e-9);
        CHECK(std::abs(moved.elevation - base.elevation) <= 1e-9);
    }
}

TEST_CASE("window_geometric_tokens lays out one row per window slot") {
    const std::vector<Vec3> positions = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {1, 1, 2}};
    const ad::WindowMap wm = ad::make_window_map(4, 1);
    const Mat geo = window_geometric_tokens(positions, wm);
    REQUIRE(geo.rows() == wm.total);
    REQUIRE(geo.cols() == 2);

    for (int i = 0; i < wm.size(); ++i)
        for (int jj = 0; jj < wm.len[i]; ++jj) {
            const GeometricToken t = geometric_token(positions[i], positions[wm.start[i] + jj]);
            CHECK(geo(wm.offset[i] + jj, 0) == t.range_xy);
            CHECK(geo(wm.offset[i] + jj, 1) == t.elevation);
        }

    CHECK_THROWS_AS(window_geometric_tokens(positions, ad::make_window_map(3, 1)), std::invalid_argument);
    const std::vector<Vec3> bad = {{0, 0, 0}, {std::nan(""), 0, 0}};
    CHECK_THROWS_AS(window_geometric_tokens(bad, ad::make_window_map(2, 1)), std::invalid_argument);
}

TEST_CASE("cipcs_init emits identical coordinate-free tokens") {
    const ModelConfig cfg = tiny_config();
    const NamedTensors weights = init_weights(cfg, 5);

    const FeatureSequence f = cipcs_init(6, weights, cfg);
    REQUIRE(f.rows() == 6);
    REQUIRE(f.cols() == cfg.init_dim);
    for (Eigen::Index i = 1; i < f.rows(); ++i) CHECK(f.row(i) == f.row(0));

    // Matches the two-layer closed form on a single token.
    const FeatureSequence one = cipcs_init(1, weights, cfg);
    const Mat hidden = ad::activation_forward(
        Mat::Ones(1, 1) * tensor(weights, "cipcs.l0.w") + tensor(weights, "cipcs.l0.b"), cfg.act);
    const Mat expect = hidden * tensor(weights, "cipcs.l1.w") + tensor(weights, "cipcs.l1.b");
    CHECK((one - expect).cwiseAbs().maxCoeff() <= 1e-12);

    CHECK_THROWS_AS(cipcs_init(0, weights, cfg), std::invalid_argument);
}

TEST_CASE("softmax over constant tokens collapses, raw logits do not") {
    const int dim = 4, heads = 1, bias_dim = 2, hidden = 3;
    const AttnWeights w = init_attn_weights(dim, heads, bias_dim, hidden, 17);
    const std::vector<Vec3> positions = {{0, 0, 0}, {1, 0, 0}, {1, 1, 2}};

    Mat f(3, dim);
    const Mat row = Mat::Random(1, dim);
    for (int i = 0; i < 3; ++i) f.row(i) = row;

    const FeatureSequence soft = loswatt_layer(f, positions, w, heads, bias_dim, 1, true, true, ad::Activation::Gelu);
    CHECK(row_spread(soft) <= 1e-12);

    const FeatureSequence raw = loswatt_layer(f, positions, w, heads, bias_dim, 1, false, true, ad::Activation::Gelu);
    CHECK(row_spread(raw) > 1e-8);

    // Independent recomputation: with identical rows, out_i = (sum of window
    // logits) * v, and only the geometric-token channel moves the sums.
    const Mat q = row * w.pq_w + w.pq_b;
    const Mat k = row * w.pk_w + w.pk_b;
    const Mat v = row * w.pv_w + w.pv_b;
    const Mat q2 = row * w.phi2_w + w.phi2_b;
    const double content = q.row(0).dot(k.row(0)) / std::sqrt(static_cast<double>(dim));
    const ad::WindowMap wm = ad::make_window_map(3, 1);
    for (int i = 0; i < 3; ++i) {
        double s = 0.0;
        for (int jj = 0; jj < wm.len[i]; ++jj) {
            const GeometricToken t = geometric_token(positions[i], positions[wm.start[i] + jj]);
            Mat geo(1, 2);
            geo << t.range_xy, t.elevation;
            const Mat k2 = ad::activation_forward(geo * w.phi3_l0_w + w.phi3_l0_b, ad::Activation::Gelu) *
                               w.phi3_l1_w + w.phi3_l1_b;
            s += content + q2.row(0).dot(k2.row(0)) / std::sqrt(static_cast<double>(bias_dim));
        }
        CHECK((raw.row(i) - s * v.row(0)).cwiseAbs().maxCoeff() <= 1e-9);
    }
    CHECK(soft.row(0).isApprox(v.row(0), 1e-12));
}

TEST_CASE("layer output is unchanged under yaw plus altitude at fixed order") {
    const int dim = 8, heads = 2, bias_dim = 3, hidden = 4, k = 3;
    const AttnWeights w = init_attn_weights(dim, heads, bias_dim, hidden, 23);
    const PointCloud cloud = random_cloud(12, 29);
    const std::vector<Vec3>& positions = cloud.points;
    const Mat f = Mat::Random(12, dim);

    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> yaw(0.0, 2.0 * kPi);
    std::uniform_real_distribution<double> dz(-3.0, 3.0);
    for (bool softmax : {true, false}) {
        const FeatureSequence base = loswatt_layer(f, positions, w, heads, bias_dim, k, softmax, true,
                                                   ad::Activation::Gelu);
        for (int trial = 0; trial < 10; ++trial) {
            const FeatureSequence moved = loswatt_layer(f, transformed(positions, yaw(rng), dz(rng)), w, heads,
                                                        bias_dim, k, softmax, true, ad::Activation::Gelu);
            CHECK((moved - base).cwiseAbs().maxCoeff() <= 1e-6);
        }
    }
}

TEST_CASE("forward pairs one pooled token position with one prediction") {
    const ModelConfig cfg = tiny_config();
    const NamedTensors weights = init_weights(cfg, 7);
    const PointCloud cloud = random_cloud(60, 37);

    std::size_t expected = voxelize(cloud, cfg.voxel_size).size();
    for (std::size_t s = 0; s < cfg.stages.size(); ++s)
        expected = (expected + cfg.pool_kernel - 1) / cfg.pool_kernel;

    const CorrespondenceSet corr = forward(cloud, cfg, weights);
    CHECK(corr.size() == expected);

    const CorrespondenceSet again = forward(cloud, cfg, weights);
    REQUIRE(again.size() == corr.size());
    for (std::size_t i = 0; i < corr.size(); ++i) {
        CHECK(corr[i].local == again[i].local);   // bitwise determinism
        CHECK(corr[i].world == again[i].world);
    }
}

TEST_CASE("forward stays finite across random clouds and weight draws") {
    const ModelConfig cfg = tiny_config();
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        const NamedTensors weights = init_weights(cfg, 100 + trial);
        const CorrespondenceSet corr = forward(random_cloud(40 + trial % 30, trial), cfg, weights);
        REQUIRE(!corr.empty());
        for (const Correspondence& c : corr) {
            CHECK(c.world.allFinite());
            CHECK(c.local.allFinite());
        }
    }
}

TEST_CASE("zero weights regress every token to the origin") {
    const ModelConfig cfg = tiny_config();
    NamedTensors weights = init_weights(cfg, 11);
    for (auto& [name, mat] : weights) mat.setZero();

    for (const Correspondence& c : forward(random_cloud(30, 41), cfg, weights))
        CHECK(c.world == Vec3(0, 0, 0));
}

TEST_CASE("single-token forward matches an explicit matrix chain") {
    ModelConfig cfg = tiny_config();
    cfg.stages = {{1, 6, 2, 2}};
    const NamedTensors weights = init_weights(cfg, 13);

    PointCloud cloud;
    cloud.points.emplace_back(0.2, 0.1, 0.3);  // one voxel, one token
    const CorrespondenceSet corr = forward(cloud, cfg, weights);
    REQUIRE(corr.size() == 1);

    auto linear = [&](const Mat& x, const std::string& prefix) {
        return Mat(x * tensor(weights, prefix + ".w") + tensor(weights, prefix + ".b"));
    };
    auto act = [&](const Mat& x) { return ad::activation_forward(x, cfg.act); };

    // Seed MLP on the constant input.
    Mat f = linear(act(linear(Mat::Ones(1, 1), "cipcs.l0")), "cipcs.l1");

    // Softmax-free initialization layer over the single-slot window: the one
    // geometric token is (0,0) and the output is logit * v per head.
    {
        const Mat q = linear(f, "init.attn.pq");
        const Mat k = linear(f, "init.attn.pk");
        const Mat v = linear(f, "init.attn.pv");
        const Mat q2 = linear(f, "init.attn.phi2");
        const Mat k2 = linear(act(linear(Mat::Zero(1, 2), "init.attn.phi3.l0")), "init.attn.phi3.l1");
        const int dh = cfg.init_dim / cfg.init_heads;
        Mat out(1, cfg.init_dim);
        for (int h = 0; h < cfg.init_heads; ++h) {
            const double logit = q.row(0).segment(h * dh, dh).dot(k.row(0).segment(h * dh, dh)) / std::sqrt(double(dh)) +
                                 q2.row(0).segment(h * cfg.bias_dim, cfg.bias_dim)
                                         .dot(k2.row(0).segment(h * cfg.bias_dim, cfg.bias_dim)) /
                                     std::sqrt(double(cfg.bias_dim));
            out.row(0).segment(h * dh, dh) = logit * v.row(0).segment(h * dh, dh);
        }
        f = out;
    }

    // Stage: pooling a single token is the identity, then the projection. The
    // softmax block's weights over a one-slot window are 1, so it reduces to
    // its value projection.
    f = linear(f, "stage0.proj");
    f = linear(f, "stage0.block0.attn.pv");

    for (int t = 0; t < cfg.head_layers; ++t) f = act(linear(f, "head.l" + std::to_string(t)));
    const Mat pred = linear(f, "head.out");

    CHECK((corr[0].world - pred.row(0).transpose()).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("init_weights is seeded and shape-stable") {
    const ModelConfig cfg = tiny_config();
    const NamedTensors a = init_weights(cfg, 99);
    const NamedTensors b = init_weights(cfg, 99);
    const NamedTensors c = init_weights(cfg, 100);

    REQUIRE(a.size() == b.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(a[i].second == b[i].second);
        any_diff = any_diff || a[i].second != c[i].second;
    }
    CHECK(any_diff);

    CHECK(tensor(a, "cipcs.l0.w").rows() == 1);
    CHECK(tensor(a, "head.out.w").cols() == 3);
    CHECK(tensor(a, "init.attn.phi3.l0.w").rows() == 2);
    CHECK(tensor(a, "head.l0.b").isZero());
    CHECK_THROWS_AS(tensor(a, "nope.w"), std::invalid_argument);
}

TEST_CASE("build_forward rejects reordered, misshapen or missing weights") {
    const ModelConfig cfg = tiny_config();
    const PointCloud cloud = random_cloud(20, 55);

    NamedTensors reordered = init_weights(cfg, 1);
    std::swap(reordered[0], reordered[2]);
    CHECK_THROWS_AS(build_forward(cloud, cfg, reordered, false), std::invalid_argument);

    NamedTensors misshapen = init_weights(cfg, 1);
    misshapen[4].second.resize(1, 1);
    CHECK_THROWS_AS(build_forward(cloud, cfg, misshapen, false), std::invalid_argument);

    NamedTensors missing = init_weights(cfg, 1);
    missing.pop_back();
    CHECK_THROWS_AS(build_forward(cloud, cfg, missing, false), std::invalid_argument);
}

TEST_CASE("model config validation enforces head and window shapes") {
    CHECK_NOTHROW(validate_model_config(ModelConfig::desk()));
    CHECK_NOTHROW(validate_model_config(ModelConfig::full()));

    ModelConfig bad_k = tiny_config();
    bad_k.init_window_k = 0;
    CHECK_THROWS_AS(validate_model_config(bad_k), std::invalid_argument);

    ModelConfig bad_stage_k = tiny_config();
    bad_stage_k.stages[0].window_k = 0;
    CHECK_THROWS_AS(validate_model_config(bad_stage_k), std::invalid_argument);

    ModelConfig bad_heads = tiny_config();
    bad_heads.stages[0].dim = 7;  // not divisible by 2 heads
    CHECK_THROWS_AS(validate_model_config(bad_heads), std::invalid_argument);

    const ModelConfig full = ModelConfig::full();
    CHECK(full.init_dim == 64);
    CHECK(full.init_heads == 2);
    CHECK(full.init_window_k == 8);
    REQUIRE(full.stages.size() == 3);
    CHECK(full.stages[0].blocks == 2);
    CHECK(full.stages[2].blocks == 4);
    CHECK(full.stages[2].dim == 512);
    CHECK(full.stages[2].heads == 16);
    CHECK(full.stages[2].window_k == 16);
    CHECK(full.head_layers == 6);
    CHECK(full.head_width == 1024);
    CHECK(full.voxel_size == 0.3);
    CHECK(full.pool_kernel == 2);
}
