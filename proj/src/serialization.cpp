#include "screloc/serialization.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace screloc {
namespace {

void check_curve_inputs(std::uint32_t ix, std::uint32_t iy, std::uint32_t iz, int bits) {
    if (bits < 1 || bits > kMaxBitsPerAxis)
        throw std::invalid_argument("curve bits must be in [1, " + std::to_string(kMaxBitsPerAxis) + "]");
    const std::uint32_t limit = 1u << bits;
    if (ix >= limit || iy >= limit || iz >= limit)
        throw std::invalid_argument("cell index out of range for " + std::to_string(bits) + " bits");
}

// Spreads the low 21 bits of v so bit j lands at bit 3j.
std::uint64_t spread3(std::uint64_t v) {
    v &= 0x1fffff;
    v = (v | v << 32) & 0x1f00000000ffff;
    v = (v | v << 16) & 0x1f0000ff0000ff;
    v = (v | v << 8) & 0x100f00f00f00f00f;
    v = (v | v << 4) & 0x10c30c30c30c30c3;
    v = (v | v << 2) & 0x1249249249249249;
    return v;
}

std::uint32_t compact3(std::uint64_t v) {
    v &= 0x1249249249249249;
    v = (v ^ (v >> 2)) & 0x10c30c30c30c30c3;
    v = (v ^ (v >> 4)) & 0x100f00f00f00f00f;
    v = (v ^ (v >> 8)) & 0x1f0000ff0000ff;
    v = (v ^ (v >> 16)) & 0x1f00000000ffff;
    v = (v ^ (v >> 32)) & 0x1fffff;
    return static_cast<std::uint32_t>(v);
}

// Skilling's transpose-form Hilbert transforms. X holds one axis per entry;
// afterwards the index bits sit interleaved across the entries, MSB first.
void axes_to_transpose(std::uint32_t X[3], int bits) {
    std::uint32_t M = 1u << (bits - 1), P, Q, t;
    for (Q = M; Q > 1; Q >>= 1) {
        P = Q - 1;
        for (int i = 0; i < 3; ++i) {
            if (X[i] & Q) {
                X[0] ^= P;
            } else {
                t = (X[0] ^ X[i]) & P;
                X[0] ^= t;
                X[i] ^= t;
            }
        }
    }
    for (int i = 1; i < 3; ++i) X[i] ^= X[i - 1];
    t = 0;
    for (Q = M; Q > 1; Q >>= 1)
        if (X[2] & Q) t ^= Q - 1;
    for (int i = 0; i < 3; ++i) X[i] ^= t;
}

void transpose_to_axes(std::uint32_t X[3], int bits) {
    std::uint32_t N = 2u << (bits - 1), P, Q, t;
    t = X[2] >> 1;
    for (int i = 2; i > 0; --i) X[i] ^= X[i - 1];
    X[0] ^= t;
    for (Q = 2; Q != N; Q <<= 1) {
        P = Q - 1;
        for (int i = 2; i >= 0; --i) {
            if (X[i] & Q) {
                X[0] ^= P;
            } else {
                t = (X[0] ^ X[i]) & P;
                X[0] ^= t;
                X[i] ^= t;
            }
        }
    }
}

}  // namespace

std::uint64_t morton_encode(std::uint32_t ix, std::uint32_t iy, std::uint32_t iz, int bits) {
    check_curve_inputs(ix, iy, iz, bits);
    return spread3(ix) | spread3(iy) << 1 | spread3(iz) << 2;
}

void morton_decode(std::uint64_t code, int bits, std::uint32_t& ix, std::uint32_t& iy, std::uint32_t& iz) {
    if (bits < 1 || bits > kMaxBitsPerAxis)
        throw std::invalid_argument("curve bits must be in [1, " + std::to_string(kMaxBitsPerAxis) + "]");
    if (bits < kMaxBitsPerAxis && code >> (3 * bits))
        throw std::invalid_argument("curve code out of range for " + std::to_string(bits) + " bits");
    ix = compact3(code);
    iy = compact3(code >> 1);
    iz = compact3(code >> 2);
}

std::uint64_t hilbert_encode(std::uint32_t ix, std::uint32_t iy, std::uint32_t iz, int bits) {
    check_curve_inputs(ix, iy, iz, bits);
    std::uint32_t X[3] = {ix, iy, iz};
    axes_to_transpose(X, bits);
    std::uint64_t code = 0;
    for (int j = bits - 1; j >= 0; --j)
        for (int i = 0; i < 3; ++i) code = code << 1 | (X[i] >> j & 1);
    return code;
}

void hilbert_decode(std::uint64_t code, int bits, std::uint32_t& ix, std::uint32_t& iy, std::uint32_t& iz) {
    if (bits < 1 || bits > kMaxBitsPerAxis)
        throw std::invalid_argument("curve bits must be in [1, " + std::to_string(kMaxBitsPerAxis) + "]");
    if (bits < kMaxBitsPerAxis && code >> (3 * bits))
        throw std::invalid_argument("curve code out of range for " + std::to_string(bits) + " bits");
    std::uint32_t X[3] = {0, 0, 0};
    for (int j = bits - 1; j >= 0; --j)
        for (int i = 0; i < 3; ++i) X[i] |= static_cast<std::uint32_t>(code >> (3 * j + 2 - i) & 1) << j;
    transpose_to_axes(X, bits);
    ix = X[0];
    iy = X[1];
    iz = X[2];
}

namespace {

std::uint64_t encode_cell(CurveKind curve, std::uint32_t ix, std::uint32_t iy, std::uint32_t iz, int bits) {
    return curve == CurveKind::Morton ? morton_encode(ix, iy, iz, bits) : hilbert_encode(ix, iy, iz, bits);
}

// Sorts arbitrary representative positions along the curve at the given
// scale. Origin is rebased to the min corner so cell indices stay unsigned.
SerializedCloud serialize_positions(const std::vector<Vec3>& positions, double voxel_size, CurveKind curve) {
    if (positions.empty()) throw std::invalid_argument("serialize: no tokens");
    if (!(voxel_size > 0.0)) throw std::invalid_argument("serialize: voxel_size must be positive");

    Vec3 origin = positions.front();
    for (const Vec3& p : positions) origin = origin.cwiseMin(p);

    std::vector<std::uint32_t> cells(positions.size() * 3);
    std::uint32_t max_cell = 0;
    for (std::size_t n = 0; n < positions.size(); ++n) {
        for (int a = 0; a < 3; ++a) {
            const double idx = std::floor((positions[n][a] - origin[a]) / voxel_size);
            if (idx < 0.0 || idx >= static_cast<double>(1u << kMaxBitsPerAxis))
                throw std::invalid_argument("serialize: cloud extent exceeds the curve cell budget");
            cells[3 * n + a] = static_cast<std::uint32_t>(idx);
            max_cell = std::max(max_cell, cells[3 * n + a]);
        }
    }
    const int bits = std::max(1, static_cast<int>(std::bit_width(max_cell)));

    SerializedCloud out;
    out.voxel_size = voxel_size;
    out.origin = origin;
    out.curve = curve;
    out.order.resize(positions.size());
    std::iota(out.order.begin(), out.order.end(), 0u);

    std::vector<std::uint64_t> codes(positions.size());
    for (std::size_t n = 0; n < positions.size(); ++n)
        codes[n] = encode_cell(curve, cells[3 * n], cells[3 * n + 1], cells[3 * n + 2], bits);

    // Ties (distinct tokens in one cell after pooling) keep input order.
    std::sort(out.order.begin(), out.order.end(), [&](std::uint32_t a, std::uint32_t b) {
        return codes[a] != codes[b] ? codes[a] < codes[b] : a < b;
    });

    out.codes.resize(positions.size());
    out.positions.resize(positions.size());
    for (std::size_t pos = 0; pos < out.order.size(); ++pos) {
        out.codes[pos] = codes[out.order[pos]];
        out.positions[pos] = positions[out.order[pos]];
    }
    return out;
}

}  // namespace

SerializedCloud serialize(const VoxelGrid& grid, CurveKind curve) {
    if (grid.voxels.empty()) throw std::invalid_argument("serialize: empty voxel grid");
    std::vector<Vec3> centroids;
    centroids.reserve(grid.voxels.size());
    for (const Voxel& v : grid.voxels) centroids.push_back(v.centroid);
    return serialize_positions(centroids, grid.voxel_size, curve);
}

PoolPlan plan_pooling(const SerializedCloud& serialized, const PoolConfig& cfg) {
    if (cfg.kernel < 1) throw std::invalid_argument("pooling kernel must be >= 1");
    if (serialized.size() == 0) throw std::invalid_argument("plan_pooling: empty sequence");

    PoolPlan plan;
    if (cfg.kernel == 1) {
        plan.groups.resize(serialized.size());
        for (std::uint32_t r = 0; r < serialized.size(); ++r) plan.groups[r] = {r};
        plan.pooled = serialized;
        return plan;
    }

    const std::size_t n_groups = (serialized.size() + cfg.kernel - 1) / cfg.kernel;
    std::vector<std::vector<std::uint32_t>> raw(n_groups);
    std::vector<Vec3> centroids(n_groups);
    for (std::size_t g = 0; g < n_groups; ++g) {
        const std::size_t lo = g * cfg.kernel;
        const std::size_t hi = std::min(lo + cfg.kernel, serialized.size());
        Vec3 sum = Vec3::Zero();
        for (std::size_t r = lo; r < hi; ++r) {
            raw[g].push_back(static_cast<std::uint32_t>(r));
            sum += serialized.positions[r];
        }
        centroids[g] = sum / static_cast<double>(hi - lo);
    }

    plan.pooled = serialize_positions(centroids, serialized.voxel_size * 2.0, serialized.curve);
    plan.groups.resize(n_groups);
    for (std::size_t pos = 0; pos < n_groups; ++pos) plan.groups[pos] = raw[plan.pooled.order[pos]];
    return plan;
}

std::pair<FeatureSequence, SerializedCloud> pool_sequence(const FeatureSequence& features,
                                                          const SerializedCloud& serialized, const PoolConfig& cfg) {
    if (static_cast<std::size_t>(features.rows()) != serialized.size())
        throw std::invalid_argument("pool_sequence: feature rows do not match token count");
    PoolPlan plan = plan_pooling(serialized, cfg);
    FeatureSequence pooled(plan.groups.size(), features.cols());
    for (std::size_t g = 0; g < plan.groups.size(); ++g) {
        Eigen::RowVectorXd acc = features.row(plan.groups[g][0]);
        for (std::size_t m = 1; m < plan.groups[g].size(); ++m) acc = acc.cwiseMax(features.row(plan.groups[g][m]));
        pooled.row(g) = acc;
    }
    return {std::move(pooled), std::move(plan.pooled)};
}

}  // namespace screloc
