#pragma once

#include "screloc/geometry.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace screloc {

/// Correspondence set too degenerate to pin down a rotation (all points
/// nearly collinear or coincident).
struct DegenerateGeometryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// RANSAC walked its iteration budget without finding a supported model.
struct NoConsensusError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Least-squares rigid transform taking local points onto world points.
/// Needs >= 3 correspondences and non-degenerate geometry.
Pose kabsch(const CorrespondenceSet& matches);

struct RansacConfig {
    double inlier_threshold_m = 0.6;
    std::uint64_t max_iterations = 100000;
    double confidence = 0.999;
    /// A sampled triple is only solved when corresponding edge lengths agree
    /// to this min/max ratio on both sides.
    double edge_ratio = 0.9;
    std::size_t sample_size = 3;
    /// Consensus below this is treated as no model. Keeping it one above the
    /// sample size rejects fits supported only by the sample itself.
    std::size_t min_inliers = 4;
    std::uint64_t seed = 0;
};

struct PoseEstimate {
    Pose pose;
    std::vector<bool> inliers;  // per input correspondence, under the final pose
    std::size_t inlier_count = 0;
    std::uint64_t iterations = 0;
};

PoseEstimate ransac_pose(const CorrespondenceSet& matches, const RansacConfig& cfg);

/// min/max agreement of the pairwise edge lengths of a candidate sample on
/// the local and world sides; 1 means perfectly rigid.
bool sample_consistent(const CorrespondenceSet& matches, const std::vector<std::size_t>& idx, double edge_ratio);

}  // namespace screloc
