#include "mvtrack/pnp.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace mvtrack;

namespace {

const Scenario& scene() {
    static const Scenario s = testkit::small_scenario(12, 31);
    return s;
}

std::vector<Correspondence> sample(const std::vector<Correspondence>& all, std::size_t n, std::uint64_t seed) {
    std::vector<Correspondence> v = all;
    std::mt19937_64 rng(seed);
    std::shuffle(v.begin(), v.end(), rng);
    v.resize(std::min(n, v.size()));
    return v;
}

std::vector<Correspondence> scene_corrs(std::size_t frame, std::size_t n, std::uint64_t seed) {
    const PoseSE3 gt = scene().gt.cam_pose(frame);
    const PointCloud crop = scene().map.crop(gt, CropExtents{});
    return sample(testkit::exact_correspondences(crop, CameraIntrinsics{}, gt), n, seed);
}

void expect_close(const PoseSE3& a, const PoseSE3& b, double deg, double m) {
    const PoseErrorValue e = pose_error(a, b);
    EXPECT_LT(e.rot_deg, deg);
    EXPECT_LT(e.transl_m, m);
}

}  // namespace

TEST(CorrespondencesFromFlow, ZeroFlowGivesInitProjectionPixels) {
    const PoseSE3 t = scene().gt.cam_pose(2);
    const PointCloud crop = scene().map.crop(t, CropExtents{});
    const CameraIntrinsics k;
    const DepthMap d = remove_occlusions(render_depth(crop, k, t));
    FlowField f(d.width, d.height);
    for (std::size_t i = 0; i < f.valid.size(); ++i)
        if (d.valid[i]) f.set(i, Vec2::Zero());
    const auto c = correspondences_from_flow(d, f, crop);
    EXPECT_EQ(c.size(), d.valid_count());
    for (const auto& x : c) {
        const auto px = k.pixel_of(h_project(k, t, x.p_world).u, h_project(k, t, x.p_world).v);
        ASSERT_TRUE(px);
        EXPECT_EQ(x.x_img, Vec2(px->first, px->second));
    }
    EXPECT_TRUE(correspondences_from_flow(d, FlowField(d.width, d.height), crop).empty());
    EXPECT_THROW(correspondences_from_flow(d, FlowField(3, 3), crop), std::invalid_argument);
}

TEST(CorrespondencesFromFlow, GtFlowLandsOnGtProjection) {
    const PoseSE3 gt = scene().gt.cam_pose(4);
    std::mt19937_64 rng(3);
    const PoseSE3 t_init = testkit::disturb(gt, 1.0, 5.0, rng);
    const PointCloud crop = scene().map.crop(t_init, CropExtents{});
    const CameraIntrinsics k;
    const DepthMap d = remove_occlusions(render_depth(crop, k, t_init));
    const auto c = correspondences_from_flow(d, depth_flow(d, crop, t_init, gt), crop);
    ASSERT_GT(c.size(), 500u);
    for (const auto& x : c) {
        const PixelCoord g = h_project(k, gt, x.p_world);
        EXPECT_LE(std::max(std::abs(x.x_img.x() - g.u), std::abs(x.x_img.y() - g.v)), 0.5 + 1e-3);
    }
}

TEST(ReprojectionResidual, JacobianMatchesFiniteDifferences) {
    std::mt19937_64 rng(17);
    const CameraIntrinsics k;
    const auto corrs = scene_corrs(3, 400, 1);
    const PoseSE3 gt = scene().gt.cam_pose(3);
    int checked = 0;
    for (int i = 0; checked < 100; ++i) {
        const PoseSE3 t = gt * se3_exp(testkit::random_twist(rng, 0.03, 0.3));
        const Correspondence& c = corrs[static_cast<std::size_t>(i) % corrs.size()];
        Vec2 r;
        Mat26 j;
        if (!reprojection_residual(k, t.rotation_matrix(), t.translation(), c, r, &j)) continue;
        const auto fn = [&](const PoseSE3& p) {
            Vec2 out;
            reprojection_residual(k, p.rotation_matrix(), p.translation(), c, out, nullptr);
            return out;
        };
        EXPECT_LT(testkit::jacobian_rel_error(t, j, fn), 1e-4);
        ++checked;
    }
}

TEST(RefinePose, FixedPointAtGroundTruth) {
    const auto corrs = scene_corrs(5, 300, 2);
    const PoseSE3 gt = scene().gt.cam_pose(5);
    const RefineResult r = refine_pose(corrs, CameraIntrinsics{}, gt);
    EXPECT_LT((r.pose.matrix3x4() - gt.matrix3x4()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE(r.final_cost, r.initial_cost);
}

TEST(RefinePose, RecoversFromLargePerturbation) {
    const auto corrs = scene_corrs(6, 300, 3);
    const PoseSE3 gt = scene().gt.cam_pose(6);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        const PoseSE3 t0 = testkit::disturb(gt, 2.0, 10.0, rng);
        const RefineResult r = refine_pose(corrs, CameraIntrinsics{}, t0);
        expect_close(r.pose, gt, 0.01, 0.01);
        EXPECT_LT(r.final_cost, r.initial_cost);
    }
}

TEST(RefinePose, NoisyCorrespondencesLowerTheCost) {
    auto corrs = scene_corrs(7, 500, 5);
    ASSERT_EQ(corrs.size(), 500u);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& c : corrs) c.x_img += Vec2(n(rng), n(rng));
    const PoseSE3 gt = scene().gt.cam_pose(7);
    const PoseSE3 t0 = testkit::disturb(gt, 0.5, 3.0, rng);
    const RefineResult r = refine_pose(corrs, CameraIntrinsics{}, t0);
    EXPECT_LT(r.final_cost, r.initial_cost);
    EXPECT_LT(r.final_cost, reprojection_cost(corrs, CameraIntrinsics{}, gt) + 1e-9);
    expect_close(r.pose, gt, 0.1, 0.05);
}

TEST(RefinePose, TooFewCorrespondences) {
    const auto corrs = scene_corrs(1, 3, 7);
    EXPECT_THROW(refine_pose(corrs, CameraIntrinsics{}, PoseSE3{}), TooFewCorrespondences);
}

TEST(SolvePnpRansac, NoiselessRecoversPose) {
    const auto corrs = scene_corrs(4, 200, 8);
    ASSERT_EQ(corrs.size(), 200u);
    const PoseSE3 gt = scene().gt.cam_pose(4);
    std::mt19937_64 rng(9);
    const PnpResult r = solve_pnp_ransac(corrs, CameraIntrinsics{}, testkit::disturb(gt, 1.0, 5.0, rng), RansacConfig{});
    ASSERT_TRUE(r.success);
    EXPECT_EQ(r.inlier_count, 200u);
    expect_close(r.pose, gt, 0.01, 0.01);
}

TEST(SolvePnpRansac, RejectsOutliers) {
    auto corrs = scene_corrs(8, 200, 10);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> a(0, 2 * kPi);
    std::vector<bool> is_outlier(corrs.size(), false);
    for (std::size_t i = 0; i < corrs.size(); i += 10) {
        for (std::size_t j = i; j < i + 3; ++j) {
            const double ang = a(rng);
            corrs[j].x_img += 50.0 * Vec2(std::cos(ang), std::sin(ang));
            is_outlier[j] = true;
        }
    }
    const PoseSE3 gt = scene().gt.cam_pose(8);
    const PnpResult r = solve_pnp_ransac(corrs, CameraIntrinsics{}, testkit::disturb(gt, 1.0, 5.0, rng), RansacConfig{});
    ASSERT_TRUE(r.success);
    expect_close(r.pose, gt, 0.01, 0.01);
    for (std::size_t i = 0; i < corrs.size(); ++i) EXPECT_EQ(r.inliers[i] != 0, !is_outlier[i]) << i;
    EXPECT_EQ(r.inlier_count, 140u);
}

TEST(SolvePnpRansac, ErrorsAndFallback) {
    const auto corrs = scene_corrs(2, 200, 12);
    EXPECT_THROW(solve_pnp_ransac(std::span(corrs).first(3), CameraIntrinsics{}, PoseSE3{}, RansacConfig{}),
                 TooFewCorrespondences);

    std::vector<Correspondence> line;
    for (int i = 0; i < 30; ++i) line.push_back({Vec3(i, 0.5 * i, 2.0), Vec2(100 + i, 100), 1.0});
    EXPECT_THROW(solve_pnp_ransac(line, CameraIntrinsics{}, PoseSE3{}, RansacConfig{}), DegenerateConfiguration);

    // Pure noise cannot reach min_inliers: the initial pose comes back.
    std::vector<Correspondence> junk = corrs;
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0, 960), v(0, 320);
    for (auto& c : junk) c.x_img = Vec2(u(rng), v(rng));
    const PoseSE3 t_init = scene().gt.cam_pose(2);
    RansacConfig cfg;
    cfg.max_iters = 50;
    cfg.min_inliers = 100;
    const PnpResult r = solve_pnp_ransac(junk, CameraIntrinsics{}, t_init, cfg);
    EXPECT_FALSE(r.success);
    EXPECT_EQ(r.pose.matrix3x4(), t_init.matrix3x4());

    cfg.inlier_threshold = 0.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(SolvePnpRansac, DeterministicPerSeed) {
    auto corrs = scene_corrs(9, 300, 14);
    std::mt19937_64 rng(15);
    std::normal_distribution<double> n(0.0, 2.0);
    for (auto& c : corrs) c.x_img += Vec2(n(rng), n(rng));
    const PoseSE3 t0 = testkit::disturb(scene().gt.cam_pose(9), 1.0, 5.0, rng);
    RansacConfig cfg;
    cfg.seed = 99;
    const PnpResult a = solve_pnp_ransac(corrs, CameraIntrinsics{}, t0, cfg);
    const PnpResult b = solve_pnp_ransac(corrs, CameraIntrinsics{}, t0, cfg);
    EXPECT_EQ(a.pose.matrix3x4(), b.pose.matrix3x4());
    EXPECT_EQ(a.inliers, b.inliers);
    EXPECT_EQ(a.hypotheses, b.hypotheses);
}
