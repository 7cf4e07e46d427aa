#pragma once

#include "screloc/geometry.hpp"

#include <Eigen/Core>
#include <cstdint>
#include <utility>
#include <vector>

namespace screloc {

enum class CurveKind { Morton, Hilbert };

/// 21 bits per axis keeps 3-axis codes inside one 64-bit word.
inline constexpr int kMaxBitsPerAxis = 21;

/// Interleaves the low `bits` of each index: code bit 3j+0 = ix bit j,
/// 3j+1 = iy bit j, 3j+2 = iz bit j.
std::uint64_t morton_encode(std::uint32_t ix, std::uint32_t iy, std::uint32_t iz, int bits);
void morton_decode(std::uint64_t code, int bits, std::uint32_t& ix, std::uint32_t& iy, std::uint32_t& iz);

/// Hilbert curve index of a cell in the 2^bits cube (transposed-bits
/// Gray-code construction). Consecutive codes are face-adjacent cells.
std::uint64_t hilbert_encode(std::uint32_t ix, std::uint32_t iy, std::uint32_t iz, int bits);
void hilbert_decode(std::uint64_t code, int bits, std::uint32_t& ix, std::uint32_t& iy, std::uint32_t& iz);

/// Voxel tokens arranged along a space-filling curve.
struct SerializedCloud {
    std::vector<std::uint32_t> order;  // order[pos] = input voxel/group index
    std::vector<std::uint64_t> codes;  // curve codes, non-decreasing along order
    std::vector<Vec3> positions;       // representative positions, serialized order
    double voxel_size = 0.0;           // grid scale the codes were computed at
    Vec3 origin = Vec3::Zero();
    CurveKind curve = CurveKind::Hilbert;

    std::size_t size() const { return positions.size(); }
};

SerializedCloud serialize(const VoxelGrid& grid, CurveKind curve);

struct PoolConfig {
    std::size_t kernel = 2;  // consecutive-token group size, >= 1
};

/// Grouping of consecutive tokens plus the re-serialized coarse sequence.
/// groups[g] lists input rows feeding output token g, in output order.
struct PoolPlan {
    std::vector<std::vector<std::uint32_t>> groups;
    SerializedCloud pooled;
};

/// Merges consecutive groups of `kernel` tokens, pools positions to group
/// centroids, and re-sorts by curve codes at double the grid scale.
/// kernel == 1 is the identity.
PoolPlan plan_pooling(const SerializedCloud& serialized, const PoolConfig& cfg);

using FeatureSequence = Eigen::MatrixXd;  // V x D token features

/// Componentwise max over each group, positions pooled per plan_pooling.
std::pair<FeatureSequence, SerializedCloud> pool_sequence(const FeatureSequence& features,
                                                          const SerializedCloud& serialized,
                                                          const PoolConfig& cfg);

}  // namespace screloc
