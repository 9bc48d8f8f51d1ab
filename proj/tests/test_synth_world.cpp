#include "mvtrack/synth_world.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace mvtrack;

TEST(GenerateScene, DefaultSceneBounds) {
    const SceneConfig cfg;
    const PointCloud c = generate_scene(cfg);
    ASSERT_FALSE(c.empty());
    for (const Vec3& p : c.points) {
        EXPECT_GE(p.z(), 0.0);
        EXPECT_LE(p.z(), cfg.facade_height);
    }
}

TEST(GenerateScene, EmptyWhenNothingRequested) {
    SceneConfig cfg;
    cfg.ground_density = cfg.facade_density = 0.0;
    cfg.pole_count = 0;
    EXPECT_TRUE(generate_scene(cfg).empty());
}

TEST(GenerateScene, DeterministicPerSeed) {
    SceneConfig cfg;
    cfg.extent = 100;
    EXPECT_EQ(generate_scene(cfg).points, generate_scene(cfg).points);
    SceneConfig other = cfg;
    other.seed = cfg.seed + 1;
    EXPECT_NE(generate_scene(cfg).points, generate_scene(other).points);
    cfg.extent = 0;
    EXPECT_THROW(generate_scene(cfg), std::invalid_argument);
}

TEST(GenerateTrajectory, StraightPositions) {
    TrajectoryConfig cfg;
    cfg.frame_count = 10;
    const Trajectory t = generate_trajectory(cfg);
    ASSERT_EQ(t.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_LT((t.poses[i].translation() - Vec3(static_cast<double>(i), 0, cfg.camera_height)).norm(), 1e-12);
        // Optical axis along world +x.
        EXPECT_LT((t.poses[i].rotation_matrix().col(2) - Vec3::UnitX()).norm(), 1e-12);
    }
}

TEST(GenerateTrajectory, ArcClosesAfterFullTurn) {
    TrajectoryConfig cfg;
    cfg.profile = TrajectoryProfile::kArc;
    cfg.turn_rate = 1.0;
    cfg.frame_count = 361;
    const Trajectory t = generate_trajectory(cfg);
    // The heading after 360 one-degree steps equals the start heading.
    const double deg = rad2deg(rotation_angle(t.poses.front().rotation().conjugate() * t.poses.back().rotation()));
    EXPECT_LT(deg, 1e-6);
    // And the path closes on itself, a regular 360-gon.
    EXPECT_LT((t.poses.front().translation() - t.poses.back().translation()).norm(), 1e-9);
}

TEST(GenerateTrajectory, StepLengthEqualsSpeed) {
    for (const auto profile : {TrajectoryProfile::kStraight, TrajectoryProfile::kArc, TrajectoryProfile::kSCurve}) {
        TrajectoryConfig cfg;
        cfg.profile = profile;
        cfg.speed = 1.3;
        cfg.turn_rate = 2.0;
        cfg.frame_count = 250;
        const Trajectory t = generate_trajectory(cfg);
        for (std::size_t i = 1; i < t.size(); ++i)
            EXPECT_NEAR((t.poses[i].translation() - t.poses[i - 1].translation()).norm(), 1.3, 1e-9);
    }
}

TEST(GenerateTrajectory, SingleFrameAndValidation) {
    TrajectoryConfig cfg;
    cfg.frame_count = 1;
    EXPECT_EQ(generate_trajectory(cfg).size(), 1u);
    cfg.frame_count = 0;
    EXPECT_THROW(generate_trajectory(cfg), std::invalid_argument);
    EXPECT_EQ(parse_profile("s_curve"), TrajectoryProfile::kSCurve);
    EXPECT_STREQ(to_string(TrajectoryProfile::kArc), "arc");
    EXPECT_THROW(parse_profile("zigzag"), std::invalid_argument);
}

TEST(VoOracle, ZeroSigmaIsExact) {
    TrajectoryConfig tc;
    tc.profile = TrajectoryProfile::kSCurve;
    tc.frame_count = 50;
    const Trajectory gt = generate_trajectory(tc);
    const auto rel = vo_oracle(gt, VoOracleConfig{});
    ASSERT_EQ(rel.size(), 49u);
    const Trajectory vo = integrate_vo(gt.poses.front(), rel);
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const PoseErrorValue e = pose_error(vo.poses[i], gt.poses[i]);
        EXPECT_LT(e.transl_m, 1e-9);
        EXPECT_LT(e.rot_deg, 1e-6);
    }
    tc.frame_count = 1;
    EXPECT_TRUE(vo_oracle(generate_trajectory(tc), VoOracleConfig{}).empty());
}

TEST(VoOracle, EndpointErrorGrowsLikeSqrtN) {
    // Translation-only drift is a 3D Gaussian random walk: the expected
    // endpoint error after N steps is sigma * sqrt(N) * E|chi_3| with
    // E|chi_3| = 2 * sqrt(2 / pi).
    TrajectoryConfig tc;
    tc.frame_count = 401;
    const Trajectory gt = generate_trajectory(tc);
    const double sigma = 0.05;
    const double chi3 = 2.0 * std::sqrt(2.0 / kPi);
    double e40 = 0.0, e400 = 0.0;
    const int seeds = 100;
    for (int s = 0; s < seeds; ++s) {
        VoOracleConfig vc;
        vc.transl_drift_sigma = sigma;
        vc.seed = static_cast<std::uint64_t>(s);
        const Trajectory vo = integrate_vo(gt.poses.front(), vo_oracle(gt, vc));
        e40 += pose_error(vo.poses[40], gt.poses[40]).transl_m;
        e400 += pose_error(vo.poses[400], gt.poses[400]).transl_m;
    }
    e40 /= seeds;
    e400 /= seeds;
    EXPECT_NEAR(e40, sigma * std::sqrt(40.0) * chi3, 0.3 * sigma * std::sqrt(40.0) * chi3);
    EXPECT_NEAR(e400, sigma * std::sqrt(400.0) * chi3, 0.3 * sigma * std::sqrt(400.0) * chi3);
    EXPECT_NEAR(e400 / e40, std::sqrt(10.0), 0.3 * std::sqrt(10.0));
}

TEST(BuildScenario, EveryPoseSeesEnoughOfTheMap) {
    const Scenario s = testkit::small_scenario(30, 5, TrajectoryProfile::kSCurve);
    EXPECT_EQ(s.gt.size(), 30u);
    EXPECT_EQ(s.vo.size(), 29u);
    for (std::size_t i = 0; i < s.gt.size(); i += 7) {
        const PoseSE3 cam = s.gt.cam_pose(i);
        EXPECT_GE(render_depth(s.map.crop(cam, CropExtents{}), CameraIntrinsics{}, cam).valid_count(), 500u);
    }
}

TEST(BuildScenario, EmptySceneIsRejected) {
    SceneConfig sc;
    sc.ground_density = sc.facade_density = 0.0;
    sc.pole_count = 0;
    TrajectoryConfig tc;
    tc.frame_count = 3;
    EXPECT_THROW(build_scenario(sc, tc, VoOracleConfig{}, CameraIntrinsics{}, CropExtents{}), InsufficientVisibility);
}
