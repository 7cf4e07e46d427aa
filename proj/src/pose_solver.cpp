#include "screloc/pose_solver.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <cmath>
#include <limits>
#include <random>

namespace screloc {
namespace {

double point_residual(const Pose& pose, const Correspondence& c) { return (pose * c.local - c.world).norm(); }

double mean_residual(const Pose& pose, const CorrespondenceSet& matches, const std::vector<bool>& mask) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < matches.size(); ++i) {
        if (!mask[i]) continue;
        sum += point_residual(pose, matches[i]);
        ++n;
    }
    return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::infinity();
}

}  // namespace

Pose kabsch(const CorrespondenceSet& matches) {
    if (matches.size() < 3) throw std::invalid_argument("kabsch: needs at least 3 correspondences");
    Vec3 src_mean = Vec3::Zero(), dst_mean = Vec3::Zero();
    for (const Correspondence& c : matches) {
        if (!c.local.allFinite() || !c.world.allFinite())
            throw std::invalid_argument("kabsch: non-finite correspondence");
        src_mean += c.local;
        dst_mean += c.world;
    }
    src_mean /= static_cast<double>(matches.size());
    dst_mean /= static_cast<double>(matches.size());

    Mat3 cov = Mat3::Zero();
    for (const Correspondence& c : matches) cov += (c.local - src_mean) * (c.world - dst_mean).transpose();

    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sigma = svd.singularValues();
    // Rank < 2 leaves a rotation axis unconstrained.
    if (sigma(0) <= 1e-12 || sigma(1) / sigma(0) <= 1e-9)
        throw DegenerateGeometryError("kabsch: correspondence geometry is rank deficient");

    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    Pose pose;
    pose.rotation = svd.matrixV() * d * svd.matrixU().transpose();
    pose.translation = dst_mean - pose.rotation * src_mean;
    return pose;
}

bool sample_consistent(const CorrespondenceSet& matches, const std::vector<std::size_t>& idx, double edge_ratio) {
    for (std::size_t a = 0; a < idx.size(); ++a) {
        for (std::size_t b = a + 1; b < idx.size(); ++b) {
            const double dl = (matches[idx[a]].local - matches[idx[b]].local).norm();
            const double dw = (matches[idx[a]].world - matches[idx[b]].world).norm();
            const double hi = std::max(dl, dw);
            if (hi <= 1e-12) return false;  // coincident pair pins nothing down
            if (std::min(dl, dw) / hi < edge_ratio) return false;
        }
    }
    return true;
}

PoseEstimate ransac_pose(const CorrespondenceSet& matches, const RansacConfig& cfg) {
    if (!(cfg.inlier_threshold_m > 0.0)) throw std::invalid_argument("ransac: inlier threshold must be positive");
    if (!(cfg.confidence > 0.0 && cfg.confidence < 1.0))
        throw std::invalid_argument("ransac: confidence must be in (0, 1)");
    if (!(cfg.edge_ratio > 0.0 && cfg.edge_ratio <= 1.0))
        throw std::invalid_argument("ransac: edge_ratio must be in (0, 1]");
    if (cfg.sample_size < 3) throw std::invalid_argument("ransac: sample_size must be >= 3");
    if (cfg.min_inliers < cfg.sample_size) throw std::invalid_argument("ransac: min_inliers below sample size");
    if (cfg.max_iterations < 1) throw std::invalid_argument("ransac: max_iterations must be >= 1");
    if (matches.size() < cfg.min_inliers)
        throw NoConsensusError("ransac: fewer correspondences than the consensus floor");

    const std::size_t n = matches.size();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);

    Pose best_pose;
    std::size_t best_count = 0;
    std::vector<bool> best_mask(n, false);
    std::uint64_t it = 0;
    double needed = static_cast<double>(cfg.max_iterations);

    std::vector<std::size_t> idx(cfg.sample_size);
    CorrespondenceSet sample(cfg.sample_size);
    std::vector<bool> mask(n, false);
    while (it < cfg.max_iterations && static_cast<double>(it) < needed) {
        ++it;
        for (std::size_t s = 0; s < cfg.sample_size; ++s) {
            bool fresh;
            do {
                idx[s] = pick(rng);
                fresh = true;
                for (std::size_t t = 0; t < s; ++t) fresh = fresh && idx[t] != idx[s];
            } while (!fresh);
        }
        if (!sample_consistent(matches, idx, cfg.edge_ratio)) continue;
        for (std::size_t s = 0; s < cfg.sample_size; ++s) sample[s] = matches[idx[s]];

        Pose pose;
        try {
            pose = kabsch(sample);
        } catch (const DegenerateGeometryError&) {
            continue;
        }

        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            mask[i] = point_residual(pose, matches[i]) <= cfg.inlier_threshold_m;
            if (mask[i]) ++count;
        }
        if (count > best_count) {
            best_count = count;
            best_pose = pose;
            best_mask = mask;
            const double w = static_cast<double>(count) / static_cast<double>(n);
            const double miss = 1.0 - std::pow(w, static_cast<double>(cfg.sample_size));
            needed = miss <= 0.0 ? 0.0 : std::log(1.0 - cfg.confidence) / std::log(miss);
        }
    }

    if (best_count < cfg.min_inliers) throw NoConsensusError("ransac: no model reached the consensus floor");

    // Refit on the consensus set; keep it only if it does not hurt the fit.
    CorrespondenceSet consensus;
    consensus.reserve(best_count);
    for (std::size_t i = 0; i < n; ++i)
        if (best_mask[i]) consensus.push_back(matches[i]);
    try {
        const Pose refit = kabsch(consensus);
        if (mean_residual(refit, matches, best_mask) <= mean_residual(best_pose, matches, best_mask))
            best_pose = refit;
    } catch (const DegenerateGeometryError&) {
        // sample pose stands
    }

    PoseEstimate est;
    est.pose = best_pose;
    est.inliers.resize(n);
    est.inlier_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        est.inliers[i] = point_residual(best_pose, matches[i]) <= cfg.inlier_threshold_m;
        if (est.inliers[i]) ++est.inlier_count;
    }
    est.iterations = it;
    return est;
}

}  // namespace screloc
