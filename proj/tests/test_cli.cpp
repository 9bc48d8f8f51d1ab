#include "mvtrack/config.hpp"
#include "mvtrack/io.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using mvtrack::json;

namespace {

fs::path workdir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mvtrack_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run(const std::string& args) {
    const std::string cmd = std::string(MVTRACK_BIN) + " -q " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::size_t line_count(const fs::path& p) {
    const std::string s = slurp(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

json small_config(int frames) {
    return {{"seed", 5},
            {"scene", {{"extent", 160.0}}},
            {"trajectory", {{"frame_count", frames}}},
            {"init_perturbation", {{"max_transl", 0.5}, {"max_rot_deg", 2.0}}}};
}

fs::path write_config(const fs::path& dir, const json& j) {
    const fs::path p = dir / "config.json";
    mvtrack::detail::write_file(p.string(), j.dump(2));
    return p;
}

}  // namespace

TEST(Cli, SynthWritesScenarioAndIsReproducible) {
    const fs::path w = workdir("synth");
    const fs::path cfg = write_config(w, small_config(6));
    ASSERT_EQ(run("synth --config " + cfg.string() + " --out " + (w / "a").string()), 0);
    ASSERT_EQ(run("synth --config " + cfg.string() + " --out " + (w / "b").string()), 0);
    for (const char* f : {"scene.xmpc", "gt_poses.txt", "manifest.json"}) EXPECT_TRUE(fs::is_regular_file(w / "a" / f)) << f;
    EXPECT_EQ(line_count(w / "a" / "gt_poses.txt"), 6u);
    EXPECT_EQ(slurp(w / "a" / "scene.xmpc"), slurp(w / "b" / "scene.xmpc"));
    EXPECT_EQ(slurp(w / "a" / "gt_poses.txt"), slurp(w / "b" / "gt_poses.txt"));

    const json m = json::parse(slurp(w / "a" / "manifest.json"));
    EXPECT_EQ(m.at("command"), "synth");
    EXPECT_EQ(m.at("seeds").at("seed"), 5);

    // A different seed gives a different scene.
    ASSERT_EQ(run("synth --config " + cfg.string() + " --seed 6 --out " + (w / "c").string()), 0);
    EXPECT_NE(slurp(w / "a" / "scene.xmpc"), slurp(w / "c" / "scene.xmpc"));
}

TEST(Cli, InvalidConfigIsAUsageError) {
    const fs::path w = workdir("badcfg");
    json j = small_config(6);
    j["trajectory"]["frame_count"] = 0;
    const fs::path cfg = write_config(w, j);
    EXPECT_EQ(run("synth --config " + cfg.string() + " --out " + (w / "out").string()), 1);
    EXPECT_FALSE(fs::exists(w / "out" / "scene.xmpc"));
    EXPECT_EQ(run("synth"), 1);
    EXPECT_EQ(run("frobnicate"), 1);
}

TEST(Cli, TrackCompletesAndReportsInterruption) {
    const fs::path w = workdir("track");
    json j = small_config(8);
    j["tracker"] = {{"mode", "frame_by_frame"}};
    const fs::path cfg = write_config(w, j);
    const fs::path scen = w / "scenario";
    ASSERT_EQ(run("synth --config " + cfg.string() + " --out " + scen.string()), 0);

    const fs::path out = w / "run";
    ASSERT_EQ(run("track --scenario " + scen.string() + " --out " + out.string()), 0);
    for (const char* f : {"trajectory.txt", "diagnostics.csv", "metrics.csv", "metrics.csv.txt", "plot.csv", "manifest.json"})
        EXPECT_TRUE(fs::is_regular_file(out / f)) << f;
    EXPECT_EQ(line_count(out / "trajectory.txt"), 8u);
    EXPECT_TRUE(json::parse(slurp(out / "manifest.json")).at("complete").get<bool>());

    // Dropping every current-to-depth flow value at frame 3 stops
    // frame-by-frame tracking there.
    j["tracker"]["episodes"] = json::array(
        {json{{"first_frame", 3}, {"frame_count", 1}, {"branch", "c2d"}, {"noise", {{"dropout_fraction", 1.0}}}}});
    const fs::path outage = write_config(w, j);
    const fs::path out2 = w / "run_outage";
    EXPECT_EQ(run("track --config " + outage.string() + " --scenario " + scen.string() + " --out " + out2.string()), 2);
    EXPECT_EQ(line_count(out2 / "trajectory.txt"), 3u);
    const json m = json::parse(slurp(out2 / "manifest.json"));
    EXPECT_FALSE(m.at("complete").get<bool>());
    EXPECT_EQ(m.at("failed_frame"), 3);
    // The same outage is bridged in multi-view mode.
    EXPECT_EQ(run("track --config " + outage.string() + " --mode multi_view --scenario " + scen.string() + " --out " +
                  (w / "run_mv").string()),
              0);
}

TEST(Cli, TrackWithMissingScenarioWritesNothing) {
    const fs::path w = workdir("missing");
    EXPECT_EQ(run("track --scenario " + (w / "nope").string() + " --out " + (w / "out").string()), 1);
    EXPECT_FALSE(fs::exists(w / "out"));
}

TEST(Cli, EvalPrintsAndWritesMetrics) {
    const fs::path w = workdir("eval");
    const fs::path cfg = write_config(w, small_config(6));
    ASSERT_EQ(run("synth --config " + cfg.string() + " --out " + (w / "s").string()), 0);
    const std::string gt = (w / "s" / "gt_poses.txt").string();
    ASSERT_EQ(run("eval --est " + gt + " --gt " + gt + " --out " + (w / "e").string()), 0);
    std::ifstream is(w / "e" / "metrics.csv");
    std::string header, row;
    std::getline(is, header);
    std::getline(is, row);
    EXPECT_EQ(header, mvtrack::kMetricsCsvHeader);
    EXPECT_TRUE(fs::is_regular_file(w / "e" / "plot.csv"));

    // A shorter estimate needs --allow-partial.
    const mvtrack::Trajectory full = mvtrack::load_trajectory(gt);
    mvtrack::Trajectory part = full;
    part.poses.resize(4);
    const fs::path est = w / "part.txt";
    mvtrack::save_trajectory(part, est.string());
    EXPECT_EQ(run("eval --est " + est.string() + " --gt " + gt), 1);
    EXPECT_EQ(run("eval --est " + est.string() + " --gt " + gt + " --allow-partial"), 0);
    EXPECT_EQ(run("eval --est " + gt + " --gt " + gt + " --rpe-delta 0"), 1);
    EXPECT_EQ(run("eval --est " + (w / "absent.txt").string() + " --gt " + gt), 1);
}

TEST(Cli, AblateWritesOneRowPerMode) {
    const fs::path w = workdir("ablate");
    const fs::path cfg = write_config(w, small_config(5));
    ASSERT_EQ(run("ablate --config " + cfg.string() + " --out " + (w / "all").string()), 0);
    EXPECT_EQ(line_count(w / "all" / "ablation.csv"), 4u);
    for (const char* m : {"frame_by_frame", "loose_coupled", "multi_view"})
        EXPECT_TRUE(fs::is_regular_file(w / "all" / (std::string(m) + "_trajectory.txt"))) << m;
    ASSERT_EQ(run("ablate --config " + cfg.string() + " --mode multi_view --out " + (w / "one").string()), 0);
    const std::string one = slurp(w / "one" / "ablation.csv");
    EXPECT_EQ(line_count(w / "one" / "ablation.csv"), 2u);
    EXPECT_NE(one.find("\nmulti_view,"), std::string::npos);
    EXPECT_EQ(slurp(w / "one" / "multi_view_trajectory.txt"), slurp(w / "all" / "multi_view_trajectory.txt"));
}

TEST(Cli, AblateCorrelatedNoiseFavorsMultiView) {
    const fs::path w = workdir("ablate_noisy");
    json j = {{"seed", 7},
              {"scene", {{"extent", 250.0}}},
              {"trajectory", {{"frame_count", 100}, {"profile", "s_curve"}}}};
    j["tracker"]["episodes"] = json::array({json{{"first_frame", 20},
                                                 {"frame_count", 40},
                                                 {"branch", "all"},
                                                 {"noise", {{"gaussian_sigma", 3.0}, {"outlier_fraction", 0.2}}}}});
    const fs::path cfg = write_config(w, j);
    ASSERT_EQ(run("ablate --config " + cfg.string() + " --out " + (w / "out").string()), 0);
    std::istringstream is(slurp(w / "out" / "ablation.csv"));
    std::string line, best;
    double best_err = 1e300;
    std::getline(is, line);
    while (std::getline(is, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
        ASSERT_GE(cells.size(), 5u);
        const double err = std::stod(cells[4]);
        if (err < best_err) {
            best_err = err;
            best = cells[0];
        }
    }
    EXPECT_EQ(best, "multi_view");
}
