#include "screloc/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace screloc {

bool Pose::is_valid(double tol) const {
    if (!rotation.allFinite() || !translation.allFinite()) return false;
    const Mat3 gram = rotation.transpose() * rotation;
    if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(rotation.determinant() - 1.0) <= tol;
}

void validate_pose(const Pose& pose) {
    if (!pose.is_valid()) {
        throw std::invalid_argument("pose is not a proper rigid transform (R'R != I or det != +1)");
    }
}

Pose compose(const Pose& a, const Pose& b) {
    Pose out;
    out.rotation = a.rotation * b.rotation;
    out.translation = a.rotation * b.translation + a.translation;
    return out;
}

Pose invert_pose(const Pose& pose) {
    validate_pose(pose);
    Pose out;
    out.rotation = pose.rotation.transpose();
    out.translation = -(out.rotation * pose.translation);
    return out;
}

PointCloud apply_pose(const Pose& pose, const PointCloud& cloud) {
    validate_pose(pose);
    PointCloud out;
    out.points.reserve(cloud.size());
    for (const Vec3& p : cloud.points) {
        if (!p.allFinite()) throw std::invalid_argument("apply_pose: non-finite point in cloud");
        out.points.push_back(pose * p);
    }
    return out;
}

Pose yaw_rotation(double angle, double altitude_shift) {
    if (!std::isfinite(angle)) throw std::invalid_argument("yaw_rotation: angle must be finite");
    const double c = std::cos(angle), s = std::sin(angle);
    Pose out;
    out.rotation << c, -s, 0.0,
                    s,  c, 0.0,
                  0.0, 0.0, 1.0;
    out.translation = Vec3(0.0, 0.0, altitude_shift);
    return out;
}

PoseError pose_error(const Pose& estimate, const Pose& ground_truth) {
    validate_pose(estimate);
    validate_pose(ground_truth);
    PoseError err;
    err.position_m = (estimate.translation - ground_truth.translation).norm();
    const Mat3 delta = ground_truth.rotation.transpose() * estimate.rotation;
    // The quaternion form stays accurate for tiny angles, where
    // acos((trace-1)/2) loses half the significant digits.
    const Eigen::Quaterniond q(delta);
    err.orientation_deg = 2.0 * std::atan2(q.vec().norm(), std::abs(q.w())) * 180.0 / M_PI;
    return err;
}

VoxelGrid voxelize(const PointCloud& cloud, double voxel_size) {
    if (cloud.empty()) throw std::invalid_argument("voxelize: empty cloud");
    if (!(voxel_size > 0.0)) throw std::invalid_argument("voxelize: voxel_size must be > 0");

    VoxelGrid grid;
    grid.voxel_size = voxel_size;
    grid.origin = cloud.points.front();
    for (const Vec3& p : cloud.points) {
        if (!p.allFinite()) throw std::invalid_argument("voxelize: non-finite point in cloud");
        grid.origin = grid.origin.cwiseMin(p);
    }

    // std::map keeps voxels sorted by key, independent of point order.
    std::map<VoxelKey, std::size_t> lookup;
    std::vector<std::vector<std::uint32_t>> members;
    for (std::uint32_t i = 0; i < cloud.size(); ++i) {
        const Vec3 rel = (cloud.points[i] - grid.origin) / voxel_size;
        const VoxelKey key{static_cast<std::int32_t>(std::floor(rel.x())),
                           static_cast<std::int32_t>(std::floor(rel.y())),
                           static_cast<std::int32_t>(std::floor(rel.z()))};
        auto [it, inserted] = lookup.try_emplace(key, members.size());
        if (inserted) members.emplace_back();
        members[it->second].push_back(i);
    }

    grid.voxels.reserve(lookup.size());
    for (const auto& [key, slot] : lookup) {
        Voxel voxel;
        voxel.key = key;
        voxel.members = std::move(members[slot]);
        Vec3 sum = Vec3::Zero();
        for (std::uint32_t idx : voxel.members) sum += cloud.points[idx];
        voxel.centroid = sum / static_cast<double>(voxel.members.size());
        grid.voxels.push_back(std::move(voxel));
    }
    return grid;
}

}  // namespace screloc
