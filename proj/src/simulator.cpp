#include "screloc/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace screloc {
namespace {

constexpr double kRayEps = 1e-9;

// Slab test; returns the parameter of the first hit at or beyond kRayEps,
// or infinity on a miss. Starting inside the box reports the exit face.
double intersect_box(const Vec3& origin, const Vec3& dir, const Box& box) {
    double t_near = -std::numeric_limits<double>::infinity();
    double t_far = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        const double lo = box.center[a] - box.half_extents[a];
        const double hi = box.center[a] + box.half_extents[a];
        if (std::abs(dir[a]) < 1e-15) {
            if (origin[a] < lo || origin[a] > hi) return std::numeric_limits<double>::infinity();
            continue;
        }
        double t1 = (lo - origin[a]) / dir[a];
        double t2 = (hi - origin[a]) / dir[a];
        if (t1 > t2) std::swap(t1, t2);
        t_near = std::max(t_near, t1);
        t_far = std::min(t_far, t2);
        if (t_near > t_far) return std::numeric_limits<double>::infinity();
    }
    if (t_near > kRayEps) return t_near;
    if (t_far > kRayEps) return t_far;
    return std::numeric_limits<double>::infinity();
}

double intersect_ground(const Vec3& origin, const Vec3& dir, double extent) {
    if (dir.z() >= -1e-15) return std::numeric_limits<double>::infinity();
    const double t = -origin.z() / dir.z();
    if (t <= kRayEps) return std::numeric_limits<double>::infinity();
    const Vec3 hit = origin + t * dir;
    const double half = extent * 0.5;
    if (std::abs(hit.x()) > half || std::abs(hit.y()) > half) return std::numeric_limits<double>::infinity();
    return t;
}

}  // namespace

SyntheticScene synth_scene(std::uint64_t seed, double extent, std::size_t building_count) {
    if (!(extent > 0.0)) throw std::invalid_argument("synth_scene: extent must be positive");
    SyntheticScene scene;
    scene.extent = extent;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> half_xy(2.0, 8.0);
    std::uniform_real_distribution<double> height(5.0, 30.0);
    for (std::size_t b = 0; b < building_count; ++b) {
        Box box;
        box.half_extents.x() = half_xy(rng);
        box.half_extents.y() = half_xy(rng);
        const double h = height(rng);
        box.half_extents.z() = h * 0.5;
        box.center.z() = h * 0.5;
        for (int a = 0; a < 2; ++a) {
            const double room = extent * 0.5 - box.half_extents[a];
            if (room <= 0.0) throw std::invalid_argument("synth_scene: extent too small for buildings");
            box.center[a] = std::uniform_real_distribution<double>(-room, room)(rng);
        }
        scene.boxes.push_back(box);
    }
    return scene;
}

PointCloud simulate_scan(const SyntheticScene& scene, const SensorModel& sensor, const Pose& sensor_pose) {
    validate_pose(sensor_pose);
    if (sensor.ray_count < 1) throw std::invalid_argument("simulate_scan: ray_count must be >= 1");
    if (!(sensor.vfov_min_deg <= sensor.vfov_max_deg))
        throw std::invalid_argument("simulate_scan: vertical field of view is inverted");
    if (!(sensor.max_range > 0.0)) throw std::invalid_argument("simulate_scan: max_range must be positive");
    if (!(sensor_pose.translation.z() > 0.0))
        throw std::invalid_argument("simulate_scan: sensor must be above the ground plane");

    // Spread rays over a ring pattern: a few elevation channels, full azimuth.
    const auto channels = static_cast<std::size_t>(std::clamp(
        std::llround(std::sqrt(static_cast<double>(sensor.ray_count) / 20.0)), 2ll, 64ll));
    const std::size_t columns = (sensor.ray_count + channels - 1) / channels;
    constexpr double deg = 3.14159265358979323846 / 180.0;

    PointCloud cloud;
    cloud.points.reserve(sensor.ray_count);
    const Mat3 rot_t = sensor_pose.rotation.transpose();
    for (std::size_t r = 0; r < sensor.ray_count; ++r) {
        const std::size_t ch = r % channels;
        const std::size_t col = r / channels;
        const double frac = channels > 1 ? static_cast<double>(ch) / static_cast<double>(channels - 1) : 0.5;
        const double elev = (sensor.vfov_min_deg + frac * (sensor.vfov_max_deg - sensor.vfov_min_deg)) * deg;
        const double azim = 2.0 * 3.14159265358979323846 * static_cast<double>(col) / static_cast<double>(columns);
        const Vec3 local_dir(std::cos(elev) * std::cos(azim), std::cos(elev) * std::sin(azim), std::sin(elev));
        const Vec3 dir = sensor_pose.rotation * local_dir;

        double best = intersect_ground(sensor_pose.translation, dir, scene.extent);
        for (const Box& box : scene.boxes) best = std::min(best, intersect_box(sensor_pose.translation, dir, box));
        if (!(best <= sensor.max_range)) continue;
        const Vec3 world = sensor_pose.translation + best * dir;
        cloud.points.push_back(rot_t * (world - sensor_pose.translation));
    }
    if (cloud.empty()) throw EmptyScanError("simulate_scan: no ray hit anything in range");
    return cloud;
}

}  // namespace screloc
