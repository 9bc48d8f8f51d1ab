#include "mvtrack/config.hpp"
#include "mvtrack/io.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace mvtrack;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-100.0, 100.0);
    PointCloud c;
    for (std::size_t i = 0; i < n; ++i) c.points.emplace_back(u(rng), u(rng), u(rng));
    return c;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("mvtrack_io_" + name)).string();
}

}  // namespace

TEST(CloudFormat, BinaryRoundTripIsFloatExact) {
    const PointCloud c = random_cloud(500, 1);
    const PointCloud back = decode_cloud(encode_cloud_binary(c));
    ASSERT_EQ(back.size(), c.size());
    for (std::size_t i = 0; i < c.size(); ++i)
        EXPECT_EQ(back.points[i], c.points[i].cast<float>().cast<double>()) << i;
    EXPECT_EQ(encode_cloud_binary(c).size(), 16 + 12 * c.size());
}

TEST(CloudFormat, TextRoundTripIsExact) {
    const PointCloud c = random_cloud(200, 2);
    const std::string path = temp_path("cloud.xyz");
    save_cloud(c, path);
    EXPECT_EQ(load_cloud(path).points, c.points);
    std::filesystem::remove(path);
    EXPECT_TRUE(decode_cloud("# comment\n\n1 2 3\n").size() == 1);
}

TEST(CloudFormat, RejectsBadData) {
    EXPECT_THROW(decode_cloud("1 2\n"), FormatError);
    EXPECT_THROW(decode_cloud("1 2 3 4\n"), FormatError);
    std::string bin = encode_cloud_binary(random_cloud(4, 3));
    bin.pop_back();
    EXPECT_THROW(decode_cloud(bin), FormatError);
    try {
        decode_cloud("1 2 3\nx y z\n", "scene.txt");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("scene.txt:2"), std::string::npos);
    }
}

TEST(FlowFormat, RoundTrip) {
    FlowField f(13, 7);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-30.0, 30.0);
    for (std::size_t i = 0; i < f.valid.size(); i += 2) f.set(i, Vec2(u(rng), u(rng)));
    const FlowField back = decode_flow(encode_flow(f));
    EXPECT_EQ(back.width, 13);
    EXPECT_EQ(back.height, 7);
    EXPECT_EQ(back.du, f.du);
    EXPECT_EQ(back.dv, f.dv);
    EXPECT_EQ(back.valid, f.valid);

    std::string bad = encode_flow(f);
    bad[0] = 'Y';
    EXPECT_THROW(decode_flow(bad), FormatError);
    EXPECT_THROW(decode_flow(encode_flow(f).substr(0, 40)), FormatError);
}

TEST(DepthPgm, RoundTripWithinQuantization) {
    const Scenario sc = testkit::small_scenario(3, 9);
    const CameraIntrinsics k;
    const DepthMap d = render_depth(sc.map.crop(sc.gt.cam_pose(1), CropExtents{}), k, sc.gt.cam_pose(1));
    for (const double scale : {kDefaultDepthScale, 100.0}) {
        const DepthImage img = decode_depth_pgm(encode_depth_pgm(d, scale));
        ASSERT_EQ(img.width, d.width);
        ASSERT_EQ(img.height, d.height);
        EXPECT_EQ(img.scale, scale);
        for (std::size_t i = 0; i < d.depth.size(); ++i) {
            if (!d.valid[i]) {
                EXPECT_EQ(img.depth[i], 0.0);
            } else if (d.depth[i] * scale < 65535.0) {
                EXPECT_LE(std::abs(img.depth[i] - d.depth[i]), 0.5 / scale + 1e-12);
            }
        }
    }
    EXPECT_THROW(encode_depth_pgm(d, 0.0), std::invalid_argument);
    EXPECT_THROW(decode_depth_pgm("P2\n1 1\n255\n0"), FormatError);
    EXPECT_THROW(decode_depth_pgm("P5\n2 2\n65535\n\x01\x02"), FormatError);
}

TEST(Config, DefaultsRoundTrip) {
    RunConfig c = parse_config(json::object());
    c.tracker.episodes.push_back({3, 2, FlowBranch::kC2D, FlowNoiseModel{0.0, 0.0, 0.0, 1.0}});
    c.ablate_modes = {TrackMode::kMultiView};
    c.seed = 42;
    c.derive_seeds();
    const json j = config_to_json(c);
    const RunConfig back = parse_config(j);
    EXPECT_EQ(config_to_json(back).dump(), j.dump());
    EXPECT_EQ(back.tracker.seed, c.tracker.seed);
    ASSERT_EQ(back.tracker.episodes.size(), 1u);
    EXPECT_EQ(back.tracker.episodes[0].noise.dropout_fraction, 1.0);
}

TEST(Config, ManifestIsAcceptedAsConfig) {
    const RunConfig c = parse_config(json::object());
    const json manifest = {{"tool", "mvtrack"}, {"config", config_to_json(c)}};
    EXPECT_EQ(config_to_json(parse_config(manifest)).dump(), config_to_json(c).dump());
}

TEST(Config, ErrorsNameTheField) {
    const auto message = [](const json& j) {
        try {
            parse_config(j);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    EXPECT_EQ(message({{"sede", 1}}).rfind("sede:", 0), 0u);
    EXPECT_EQ(message({{"tracker", {{"ransac", {{"inlier_threshold", "two"}}}}}}).rfind("tracker.ransac.inlier_threshold:", 0), 0u);
    EXPECT_EQ(message({{"trajectory", {{"frame_count", 2.5}}}}).rfind("trajectory.frame_count:", 0), 0u);
    EXPECT_EQ(message({{"tracker", {{"mode", "sideways"}}}}).rfind("tracker.mode:", 0), 0u);
    EXPECT_EQ(message({{"tracker", {{"noise", {{"outlier_fraction", 1.5}}}}}}).rfind("tracker.noise.outlier_fraction:", 0), 0u);
    EXPECT_EQ(message({{"tracker", {{"occlusion", {{"window", 4}}}}}}).rfind("tracker.occlusion.window:", 0), 0u);
    EXPECT_EQ(message({{"seed", -1}}).rfind("seed:", 0), 0u);
    EXPECT_EQ(message({{"ablate_modes", json::array()}}).rfind("ablate_modes:", 0), 0u);
    EXPECT_EQ(message({{"tracker", {{"episodes", json::array({json{{"first_frame", 1}, {"branch", "c2x"}}})}}}}).rfind("tracker.episodes[0].branch:", 0), 0u);
    EXPECT_EQ(message(json::array()), "config: expected an object");
}

TEST(Config, LoadReportsInvalidJson) {
    const std::string path = temp_path("bad.json");
    detail::write_file(path, "{\"seed\": ");
    EXPECT_THROW(load_config(path), ConfigError);
    std::filesystem::remove(path);
    EXPECT_THROW(load_config(temp_path("missing.json")), std::runtime_error);
}
