#include "screloc/pose_solver.hpp"

#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <random>

using namespace screloc;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed, double span = 20.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-span, span);
    std::vector<Vec3> pts;
    for (std::size_t i = 0; i < n; ++i) pts.emplace_back(d(rng), d(rng), d(rng));
    return pts;
}

CorrespondenceSet under_pose(const std::vector<Vec3>& locals, const Pose& pose) {
    CorrespondenceSet set;
    for (const Vec3& p : locals) set.push_back({p, pose * p});
    return set;
}

Pose random_pose(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    Pose p;
    p.rotation = Eigen::AngleAxisd(kPi * d(rng), Vec3(d(rng), d(rng), d(rng)).normalized()).toRotationMatrix();
    p.translation = Vec3(30.0 * d(rng), 30.0 * d(rng), 5.0 * d(rng));
    return p;
}

double squared_error(const Mat3& r, const CorrespondenceSet& matches) {
    // Translation re-optimized for the candidate rotation, so this probes the
    // rotation argmin alone.
    Vec3 sm = Vec3::Zero(), dm = Vec3::Zero();
    for (const Correspondence& c : matches) {
        sm += c.local;
        dm += c.world;
    }
    sm /= static_cast<double>(matches.size());
    dm /= static_cast<double>(matches.size());
    const Vec3 t = dm - r * sm;
    double err = 0.0;
    for (const Correspondence& c : matches) err += (r * c.local + t - c.world).squaredNorm();
    return err;
}

}  // namespace

TEST_CASE("kabsch recovers identity and pure translation") {
    const std::vector<Vec3> pts = random_points(8, 1);

    const Pose id = kabsch(under_pose(pts, Pose{}));
    CHECK((id.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(id.translation.cwiseAbs().maxCoeff() <= 1e-12);

    Pose lift;
    lift.translation = Vec3(0, 0, 5);
    const Pose t = kabsch(under_pose(pts, lift));
    CHECK((t.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((t.translation - Vec3(0, 0, 5)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("kabsch recovers a yaw-and-lift transform") {
    const Pose truth = yaw_rotation(37.0 * kPi / 180.0, 2.0);
    const Pose est = kabsch(under_pose(random_points(10, 2), truth));
    const PoseError err = pose_error(est, truth);
    CHECK(err.position_m <= 1e-9);
    CHECK(err.orientation_deg <= 1e-7);
}

TEST_CASE("kabsch recovers general rigid transforms") {
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
        const Pose truth = random_pose(seed);
        const Pose est = kabsch(under_pose(random_points(12, seed * 7), truth));
        const PoseError err = pose_error(est, truth);
        CHECK(err.position_m <= 1e-9);
        CHECK(err.orientation_deg <= 1e-7);
    }
}

TEST_CASE("kabsch rejects degenerate geometry") {
    CorrespondenceSet collinear;
    for (int i = 0; i < 6; ++i) {
        const Vec3 p(static_cast<double>(i), 0.0, 0.0);
        collinear.push_back({p, p + Vec3(1, 2, 3)});
    }
    CHECK_THROWS_AS(kabsch(collinear), DegenerateGeometryError);

    CorrespondenceSet coincident(5, Correspondence{Vec3(1, 1, 1), Vec3(2, 2, 2)});
    CHECK_THROWS_AS(kabsch(coincident), DegenerateGeometryError);

    CHECK_THROWS_AS(kabsch(under_pose(random_points(2, 3), Pose{})), std::invalid_argument);

    CorrespondenceSet bad = under_pose(random_points(4, 4), Pose{});
    bad[1].world.x() = std::nan("");
    CHECK_THROWS_AS(kabsch(bad), std::invalid_argument);
}

TEST_CASE("kabsch rotation is a local minimum of the squared error") {
    // Noisy correspondences so the optimum is strict.
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> noise(-0.05, 0.05);
    const Pose truth = random_pose(6);
    CorrespondenceSet matches = under_pose(random_points(30, 7), truth);
    for (Correspondence& c : matches) c.world += Vec3(noise(rng), noise(rng), noise(rng));

    const Pose est = kabsch(matches);
    const double base = squared_error(est.rotation, matches);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const Vec3 axis = Vec3(d(rng), d(rng), d(rng)).normalized();
        const Mat3 perturbed = Eigen::AngleAxisd(1e-4, axis).toRotationMatrix() * est.rotation;
        CHECK(squared_error(perturbed, matches) >= base);
    }
}

TEST_CASE("sample consistency compares pairwise edge lengths") {
    const std::vector<std::size_t> idx = {0, 1, 2};
    CorrespondenceSet congruent = under_pose({Vec3(0, 0, 0), Vec3(4, 0, 0), Vec3(0, 3, 0)}, random_pose(8));
    CHECK(sample_consistent(congruent, idx, 0.9));

    CorrespondenceSet stretched = congruent;
    stretched[1].world += (stretched[1].world - stretched[0].world);  // one edge doubled
    CHECK_FALSE(sample_consistent(stretched, idx, 0.9));

    CorrespondenceSet scaled;
    for (const Vec3& p : {Vec3(0, 0, 0), Vec3(4, 0, 0), Vec3(0, 3, 0)}) scaled.push_back({p, 0.95 * p});
    CHECK(sample_consistent(scaled, idx, 0.9));
    CHECK_FALSE(sample_consistent(scaled, idx, 0.96));

    CorrespondenceSet pinched = congruent;
    pinched[2].local = pinched[0].local;  // coincident pair constrains nothing
    CHECK_FALSE(sample_consistent(pinched, idx, 0.9));
}

TEST_CASE("ransac on clean correspondences nails the pose") {
    const Pose truth = random_pose(9);
    const CorrespondenceSet matches = under_pose(random_points(200, 10), truth);

    RansacConfig cfg;
    cfg.seed = 1;
    const PoseEstimate est = ransac_pose(matches, cfg);
    const PoseError err = pose_error(est.pose, truth);
    CHECK(err.position_m <= 1e-9);
    CHECK(err.orientation_deg <= 1e-7);
    CHECK(est.inlier_count == matches.size());
    CHECK(est.iterations < cfg.max_iterations);  // adaptive stop
}

TEST_CASE("ransac rides out 40 percent outliers") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> box(-50.0, 50.0);
    const Pose truth = random_pose(12);

    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        CorrespondenceSet matches = under_pose(random_points(300, seed + 100), truth);
        for (int i = 0; i < 200; ++i)
            matches.push_back({Vec3(box(rng), box(rng), box(rng)) / 5.0, Vec3(box(rng), box(rng), box(rng))});

        RansacConfig cfg;
        cfg.seed = seed;
        const PoseEstimate est = ransac_pose(matches, cfg);
        CHECK(pose_error(est.pose, truth).position_m <= 0.05);

        std::size_t recovered = 0;
        for (std::size_t i = 0; i < 300; ++i) recovered += est.inliers[i] ? 1 : 0;
        CHECK(static_cast<double>(recovered) >= 0.95 * 300.0);
    }
}

TEST_CASE("ransac inlier mask matches the returned pose exactly") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> noise(-0.4, 0.4);
    const Pose truth = random_pose(14);
    CorrespondenceSet matches = under_pose(random_points(150, 15), truth);
    for (Correspondence& c : matches) c.world += Vec3(noise(rng), noise(rng), noise(rng));

    RansacConfig cfg;
    cfg.seed = 3;
    const PoseEstimate est = ransac_pose(matches, cfg);

    std::size_t count = 0;
    for (std::size_t i = 0; i < matches.size(); ++i) {
        const double residual = (est.pose * matches[i].local - matches[i].world).norm();
        CHECK(est.inliers[i] == (residual <= cfg.inlier_threshold_m));
        count += est.inliers[i] ? 1 : 0;
    }
    CHECK(count == est.inlier_count);
    CHECK(est.inlier_count >= cfg.min_inliers);
}

TEST_CASE("ransac is deterministic per seed") {
    std::mt19937_64 rng(16);
    std::uniform_real_distribution<double> box(-30.0, 30.0);
    const Pose truth = random_pose(17);
    CorrespondenceSet matches = under_pose(random_points(80, 18), truth);
    for (int i = 0; i < 40; ++i) matches.push_back({Vec3(box(rng), box(rng), box(rng)), Vec3(box(rng), box(rng), box(rng))});

    RansacConfig cfg;
    cfg.seed = 42;
    const PoseEstimate a = ransac_pose(matches, cfg);
    const PoseEstimate b = ransac_pose(matches, cfg);
    CHECK(a.pose.rotation == b.pose.rotation);
    CHECK(a.pose.translation == b.pose.translation);
    CHECK(a.inliers == b.inliers);
    CHECK(a.iterations == b.iterations);
}

TEST_CASE("ransac refuses unsupported data") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> box(-50.0, 50.0);
    CorrespondenceSet junk;
    for (int i = 0; i < 50; ++i)
        junk.push_back({Vec3(box(rng), box(rng), box(rng)), Vec3(box(rng), box(rng), box(rng))});

    RansacConfig cfg;
    cfg.max_iterations = 2000;
    CHECK_THROWS_AS(ransac_pose(junk, cfg), NoConsensusError);

    CHECK_THROWS_AS(ransac_pose(CorrespondenceSet(3), RansacConfig{}), NoConsensusError);

    RansacConfig bad;
    bad.confidence = 1.0;
    CHECK_THROWS_AS(ransac_pose(junk, bad), std::invalid_argument);
    bad = RansacConfig{};
    bad.edge_ratio = 0.0;
    CHECK_THROWS_AS(ransac_pose(junk, bad), std::invalid_argument);
    bad = RansacConfig{};
    bad.min_inliers = 2;
    CHECK_THROWS_AS(ransac_pose(junk, bad), std::invalid_argument);
}
