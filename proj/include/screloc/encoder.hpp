#pragma once

#include "screloc/autodiff.hpp"
#include "screloc/geometry.hpp"
#include "screloc/serialization.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace screloc {

/// Relative position of a window member seen from its center token,
/// reduced to the two quantities unchanged by yaw and altitude shifts.
struct GeometricToken {
    double range_xy = 0.0;   // horizontal distance
    double elevation = 0.0;  // atan2(dz, range_xy)
};

GeometricToken geometric_token(const Vec3& center, const Vec3& neighbor);

/// One row (range_xy, elevation) per flattened window slot; wm.total x 2.
ad::Mat window_geometric_tokens(const std::vector<Vec3>& positions, const ad::WindowMap& wm);

struct StageConfig {
    int blocks = 1;
    int dim = 16;
    int heads = 2;
    int window_k = 4;
};

struct ModelConfig {
    double voxel_size = 0.3;
    std::size_t pool_kernel = 2;
    CurveKind curve = CurveKind::Hilbert;

    int init_dim = 16;
    int init_heads = 2;
    int init_window_k = 4;
    std::vector<StageConfig> stages;

    int head_layers = 3;
    int head_width = 128;

    int bias_dim = 8;     // per-head width of the positional bias channel
    int phi3_hidden = 16; // hidden width of the geometric-token key MLP
    ad::Activation act = ad::Activation::Gelu;

    // Ablation switches. Defaults are the working configuration.
    bool use_xyz_features = false;   // seed tokens from raw local xyz instead of a constant
    bool softmax_free_first = true;  // drop the softmax in the first attention layer
    bool position_bias = true;       // keep the geometric-token bias channel

    static ModelConfig desk();
    static ModelConfig full();
};

void validate_model_config(const ModelConfig& cfg);

/// Weights live in a fixed, named order so checkpoints, optimizer state and
/// gradient accumulation all walk the same sequence.
using NamedTensors = std::vector<std::pair<std::string, ad::Mat>>;

const ad::Mat& tensor(const NamedTensors& tensors, const std::string& name);
ad::Mat* find_tensor(NamedTensors& tensors, const std::string& name);

/// Gaussian fan-in init for weight matrices, zero biases.
NamedTensors init_weights(const ModelConfig& cfg, std::uint64_t seed);

/// Explicit weights for a single attention layer, for tests and the
/// invariance bench.
struct AttnWeights {
    ad::Mat pq_w, pq_b;
    ad::Mat pk_w, pk_b;
    ad::Mat pv_w, pv_b;
    ad::Mat phi2_w, phi2_b;          // center -> bias queries, V x (H*D2)
    ad::Mat phi3_l0_w, phi3_l0_b;    // geo token MLP
    ad::Mat phi3_l1_w, phi3_l1_b;
};

AttnWeights init_attn_weights(int dim, int heads, int bias_dim, int phi3_hidden, std::uint64_t seed);

/// The geometry-free token seed: all rows equal, carrying no coordinates.
FeatureSequence cipcs_init(std::size_t token_count, const NamedTensors& weights, const ModelConfig& cfg);

/// One windowed attention layer over an already-serialized sequence.
FeatureSequence loswatt_layer(const FeatureSequence& features, const std::vector<Vec3>& positions,
                              const AttnWeights& w, int heads, int bias_dim, int window_k, bool softmax,
                              bool position_bias, ad::Activation act);

/// A fully built forward pass, ready for backward(). The graph owns every
/// intermediate; param_ids maps weight names to their leaf nodes.
struct BuiltModel {
    std::unique_ptr<ad::Graph> graph;
    ad::NodeId prediction = ad::kNoNode;  // V_out x 3 scene-coordinate estimates
    std::vector<Vec3> token_positions;    // matching sensor-frame token positions
    std::unordered_map<std::string, ad::NodeId> param_ids;
};

BuiltModel build_forward(const PointCloud& scan, const ModelConfig& cfg, const NamedTensors& weights,
                         bool track_gradients);

/// Convenience wrapper: run the model and pair each surviving token position
/// with its predicted world coordinate.
CorrespondenceSet forward(const PointCloud& scan, const ModelConfig& cfg, const NamedTensors& weights);

}  // namespace screloc
