#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace screloc {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// One LiDAR scan: 3D points in meters, sensor/local frame.
struct PointCloud {
    std::vector<Vec3> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

/// Rigid SE(3) transform, sensor -> world. Rotation must be orthonormal with det +1.
struct Pose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

    bool is_valid(double tol = 1e-9) const;
};

/// Throws std::invalid_argument if the pose violates its invariants.
void validate_pose(const Pose& pose);

/// (a * b)(x) = a(b(x))
Pose compose(const Pose& a, const Pose& b);
Pose invert_pose(const Pose& pose);

/// Applies R*p + t to every point. Rejects non-finite input.
PointCloud apply_pose(const Pose& pose, const PointCloud& cloud);

/// Rotation about +z by `angle` radians followed by a translation of
/// (0, 0, altitude_shift). The SO(2) x R transform group of the invariance tests.
Pose yaw_rotation(double angle, double altitude_shift);

struct PoseError {
    double position_m = 0.0;
    double orientation_deg = 0.0;
};

/// Euclidean translation gap and geodesic rotation angle between two poses.
PoseError pose_error(const Pose& estimate, const Pose& ground_truth);

struct VoxelKey {
    std::int32_t ix = 0, iy = 0, iz = 0;

    bool operator==(const VoxelKey&) const = default;
    bool operator<(const VoxelKey& o) const {
        if (ix != o.ix) return ix < o.ix;
        if (iy != o.iy) return iy < o.iy;
        return iz < o.iz;
    }
};

struct Voxel {
    VoxelKey key;
    std::vector<std::uint32_t> members;  // indices into the source cloud
    Vec3 centroid = Vec3::Zero();        // representative position
};

/// Occupied voxels of a cloud. Origin is the componentwise minimum of the
/// cloud, so indices are non-negative and depend only on internal geometry.
struct VoxelGrid {
    double voxel_size = 0.0;
    Vec3 origin = Vec3::Zero();
    std::vector<Voxel> voxels;  // sorted by key, deterministic

    std::size_t size() const { return voxels.size(); }
};

/// index = floor((p - origin) / voxel_size) per axis; centroid = mean of members.
VoxelGrid voxelize(const PointCloud& cloud, double voxel_size);

/// A (local point, predicted world coordinate) pair fed into pose estimation.
struct Correspondence {
    Vec3 local = Vec3::Zero();
    Vec3 world = Vec3::Zero();
};

using CorrespondenceSet = std::vector<Correspondence>;

}  // namespace screloc
