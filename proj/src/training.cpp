#include "screloc/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace screloc {

ad::Mat gt_scene_coords(const std::vector<Vec3>& token_positions, const Pose& gt_pose) {
    validate_pose(gt_pose);
    ad::Mat target(static_cast<Eigen::Index>(token_positions.size()), 3);
    for (std::size_t i = 0; i < token_positions.size(); ++i)
        target.row(static_cast<Eigen::Index>(i)) = (gt_pose * token_positions[i]).transpose();
    return target;
}

AdamState make_adam_state(const NamedTensors& weights) {
    AdamState state;
    for (const auto& [name, w] : weights) {
        state.m.emplace_back(name, ad::Mat::Zero(w.rows(), w.cols()));
        state.v.emplace_back(name, ad::Mat::Zero(w.rows(), w.cols()));
    }
    return state;
}

void adam_step(NamedTensors& weights, const NamedTensors& grads, AdamState& state, const AdamConfig& cfg) {
    if (grads.size() != weights.size() || state.m.size() != weights.size())
        throw std::invalid_argument("adam_step: tensor lists out of sync");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (grads[i].first != weights[i].first) throw std::invalid_argument("adam_step: tensor order mismatch");
        ad::Mat& m = state.m[i].second;
        ad::Mat& v = state.v[i].second;
        const ad::Mat& g = grads[i].second;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        weights[i].second -=
            cfg.lr * (m / bc1).cwiseQuotient(((v / bc2).cwiseSqrt().array() + cfg.eps).matrix());
        if (!weights[i].second.allFinite())
            throw DivergenceError("adam_step: non-finite weight in " + weights[i].first);
    }
}

std::vector<EpochStats> train(NamedTensors& weights, const ModelConfig& cfg, const std::vector<TrainSample>& samples,
                              const TrainConfig& tc, const std::function<void(const EpochStats&)>& on_epoch) {
    if (samples.empty()) throw std::invalid_argument("train: no samples");
    if (tc.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (tc.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");

    AdamState state = make_adam_state(weights);
    std::vector<EpochStats> stats;
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0u);

    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        std::mt19937_64 rng(tc.shuffle_seed + epoch);
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += tc.batch_size, ++batch_index) {
            const std::size_t hi = std::min(lo + tc.batch_size, order.size());
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                           order.begin() + static_cast<std::ptrdiff_t>(hi));
            // Fixed accumulation order keeps float sums reproducible across shuffles.
            std::sort(batch.begin(), batch.end());

            NamedTensors grads;
            for (const auto& [name, w] : weights) grads.emplace_back(name, ad::Mat::Zero(w.rows(), w.cols()));

            const std::string where =
                " (epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ")";
            for (const std::size_t si : batch) {
                BuiltModel m = build_forward(samples[si].scan, cfg, weights, true);
                const ad::NodeId loss =
                    m.graph->l1_loss(m.prediction, gt_scene_coords(m.token_positions, samples[si].pose));
                const double sample_loss = m.graph->value(loss)(0, 0);
                if (!std::isfinite(sample_loss)) throw DivergenceError("train: non-finite loss" + where);
                loss_sum += sample_loss;
                m.graph->backward(loss);
                for (auto& [name, g] : grads) {
                    // Ablated-off channels leave their tensors out of the graph.
                    const ad::NodeId id = m.param_ids.at(name);
                    if (m.graph->has_grad(id)) g += m.graph->grad(id);
                }
            }
            const double inv = 1.0 / static_cast<double>(batch.size());
            for (auto& [name, g] : grads) g *= inv;
            try {
                adam_step(weights, grads, state, tc.adam);
            } catch (const DivergenceError& e) {
                throw DivergenceError(e.what() + where);
            }
        }

        EpochStats es;
        es.epoch = epoch;
        es.mean_loss = loss_sum / static_cast<double>(samples.size());
        stats.push_back(es);
        if (on_epoch) on_epoch(es);
    }
    return stats;
}

}  // namespace screloc
