#pragma once

#include "screloc/geometry.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace screloc {

/// No ray returned a hit; the pose is looking at nothing in range.
struct EmptyScanError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Box {
    Vec3 center = Vec3::Zero();
    Vec3 half_extents = Vec3::Ones();
};

/// Flat ground at z = 0 plus axis-aligned buildings, centered on the origin.
struct SyntheticScene {
    double extent = 100.0;  // ground square spans [-extent/2, extent/2]^2
    std::vector<Box> boxes;
};

SyntheticScene synth_scene(std::uint64_t seed, double extent, std::size_t building_count);

struct SensorModel {
    std::size_t ray_count = 6000;
    double vfov_min_deg = -22.5;
    double vfov_max_deg = 22.5;
    double max_range = 120.0;
};

/// Casts the sensor's ray pattern from the given pose and returns hits in the
/// sensor frame. The sensor must sit above the ground plane.
PointCloud simulate_scan(const SyntheticScene& scene, const SensorModel& sensor, const Pose& sensor_pose);

}  // namespace screloc
