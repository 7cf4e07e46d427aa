#pragma once

#include "screloc/encoder.hpp"
#include "screloc/geometry.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

namespace screloc {

/// The optimizer produced a non-finite loss or weight.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainSample {
    PointCloud scan;  // sensor frame
    Pose pose;        // ground-truth sensor -> world
};

/// Regression targets: world coordinates of the surviving token positions.
ad::Mat gt_scene_coords(const std::vector<Vec3>& token_positions, const Pose& gt_pose);

struct AdamConfig {
    double lr = 0.002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    NamedTensors m;
    NamedTensors v;
    std::uint64_t step = 0;
};

AdamState make_adam_state(const NamedTensors& weights);

void adam_step(NamedTensors& weights, const NamedTensors& grads, AdamState& state, const AdamConfig& cfg);

struct TrainConfig {
    AdamConfig adam;
    std::size_t epochs = 1;
    std::size_t batch_size = 8;
    std::uint64_t shuffle_seed = 0;
};

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
};

/// Minibatch training with mean-absolute-error on scene coordinates.
/// Within a batch, gradients accumulate in ascending sample index order, so
/// the result is independent of the shuffle when everything fits one batch.
std::vector<EpochStats> train(NamedTensors& weights, const ModelConfig& cfg, const std::vector<TrainSample>& samples,
                              const TrainConfig& tc, const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace screloc
