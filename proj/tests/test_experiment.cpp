#include <catch2/catch_amalgamated.hpp>

#include "slowfast/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

using namespace slowfast;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "slowfast-tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir.parent_path());
    return dir;
}

std::string slurp(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

Json tiny_converge_config() {
    return Json{{"study", "converge"},
                {"model", "linear"},
                {"seed", 424},
                {"converge",
                 {{"terminal_time_seconds", 0.25},
                  {"dt_seconds", 0.001},
                  {"epsilons", {0.1, 0.05}},
                  {"paths", 64},
                  {"averaged", "analytic"}}}};
}

}  // namespace

TEST_CASE("config schema is strict", "[experiment][config]") {
    SECTION("unknown top-level key names the path") {
        Json cfg{{"study", "qsd"}, {"model", "two-class"}, {"bogus", 1}};
        try {
            run_experiment(cfg, fresh_dir("strict-top"));
            FAIL("expected ConfigError");
        } catch (const ConfigError& err) {
            CHECK(std::string(err.what()).find("$.bogus") != std::string::npos);
        }
    }

    SECTION("unknown study key inside the study object") {
        Json cfg = tiny_converge_config();
        cfg["converge"]["dt"] = 0.001;  // must be dt_seconds
        try {
            run_experiment(cfg, fresh_dir("strict-study"));
            FAIL("expected ConfigError");
        } catch (const ConfigError& err) {
            CHECK(std::string(err.what()).find("$.converge.dt") != std::string::npos);
        }
    }

    SECTION("negative dt is rejected before any output is written") {
        const auto dir = fresh_dir("bad-dt");
        Json cfg{{"study", "simulate"},
                 {"model", "constant"},
                 {"simulate",
                  {{"epsilon", 1.0},
                   {"grid", {{"t0_seconds", 0.0}, {"t1_seconds", 1.0}, {"dt_seconds", -0.001}}}}}};
        try {
            run_experiment(cfg, dir);
            FAIL("expected ConfigError");
        } catch (const ConfigError& err) {
            CHECK(std::string(err.what()).find("dt_seconds") != std::string::npos);
        }
        std::size_t files = 0;
        if (fs::exists(dir)) {
            for (const auto& entry : fs::directory_iterator(dir)) {
                (void)entry;
                ++files;
            }
        }
        CHECK(files == 0);
    }

    SECTION("unknown study name") {
        Json cfg{{"study", "frobnicate"}};
        CHECK_THROWS_AS(run_experiment(cfg, fresh_dir("bad-study")), ConfigError);
    }

    SECTION("unknown benchmark name") {
        Json cfg{{"study", "qsd"}, {"model", "no-such-model"}};
        CHECK_THROWS_AS(run_experiment(cfg, fresh_dir("bad-model")), ConfigError);
    }
}

TEST_CASE("switching override follows the documented schema", "[experiment][config]") {
    Json cfg{{"study", "qsd"},
             {"model", "constant"},
             {"switching",
              {{"class_sizes", {2, 1}},
               {"fast",
                {{"matrices",
                  {{{-1.0, 1.0, 0.0}, {2.0, -2.0, 0.0}, {0.0, 0.0, 0.0}}}}}},
               {"slow",
                {{"matrices",
                  {{{-1.0, 0.0, 1.0}, {0.0, -2.0, 2.0}, {1.0, 1.0, -2.0}}}}}}}}};
    const auto outcome = run_experiment(cfg, fresh_dir("switch-override"));
    CHECK(outcome.summary.at("classes") == 2);
    CHECK(outcome.summary.at("states") == 3);
    // worked aggregated generator lands in the CSV
    const auto csv = slurp(outcome.out_dir / "aggregated_generator.csv");
    CHECK(csv.find("-1.3333333333333") != std::string::npos);

    SECTION("invalid matrices are rejected with the key path") {
        cfg["switching"]["fast"]["matrices"] = {{{-1.0, 2.0}, {1.0, -1.0}}};
        cfg["switching"]["class_sizes"] = {2};
        CHECK_THROWS_AS(run_experiment(cfg, fresh_dir("switch-bad")), std::exception);
    }
}

TEST_CASE("reruns are byte-identical across seeds and job counts", "[experiment][determinism]") {
    const auto cfg = tiny_converge_config();
    const auto dir_a = fresh_dir("det-a");
    const auto dir_b = fresh_dir("det-b");
    const auto dir_c = fresh_dir("det-c");
    const auto a = run_experiment(cfg, dir_a, {}, 1);
    const auto b = run_experiment(cfg, dir_b, {}, 1);
    const auto c = run_experiment(cfg, dir_c, {}, 2);

    const std::vector<std::string> files{"convergence.csv", "convergence.json", "summary.json"};
    for (const auto& name : files) {
        const auto bytes_a = slurp(dir_a / name);
        CHECK(bytes_a == slurp(dir_b / name));
        CHECK(bytes_a == slurp(dir_c / name));
    }

    // manifests agree except for the wall clock
    auto scrub = [](Json manifest) {
        manifest.erase("wall_clock_seconds");
        manifest.erase("jobs");
        return manifest;
    };
    CHECK(scrub(a.manifest) == scrub(b.manifest));
    CHECK(scrub(a.manifest) == scrub(c.manifest));

    SECTION("a different seed changes the outputs") {
        const auto dir_d = fresh_dir("det-d");
        run_experiment(cfg, dir_d, std::uint64_t{777}, 1);
        CHECK(slurp(dir_a / "convergence.csv") != slurp(dir_d / "convergence.csv"));
    }
}

TEST_CASE("converge study emits one row per epsilon and coordinate", "[experiment][converge]") {
    const auto outcome = run_experiment(tiny_converge_config(), fresh_dir("converge-rows"));
    const auto csv = slurp(outcome.out_dir / "convergence.csv");
    std::size_t lines = 0;
    for (char ch : csv) {
        if (ch == '\n') ++lines;
    }
    CHECK(lines == 3);  // header + 2 epsilons x 1 coordinate
    CHECK(outcome.summary.at("rows").size() == 2);

    SECTION("round-trip parse reproduces the values bit-exactly") {
        std::istringstream in(csv);
        std::string line;
        std::getline(in, line);  // header
        std::size_t row_index = 0;
        while (std::getline(in, line)) {
            std::istringstream fields(line);
            std::string field;
            std::vector<std::string> cells;
            while (std::getline(fields, field, ',')) cells.push_back(field);
            REQUIRE(cells.size() == 7);
            const double w1 = std::stod(cells[3]);
            const double expected = outcome.summary.at("rows")[row_index].at("w1").get<double>();
            CHECK(w1 == expected);  // exact: 17 significant digits round-trip
            ++row_index;
        }
    }
}

TEST_CASE("empty epsilon list produces a header-only report", "[experiment][converge]") {
    Json cfg = tiny_converge_config();
    cfg["converge"]["epsilons"] = Json::array();
    const auto outcome = run_experiment(cfg, fresh_dir("converge-empty"));
    const auto csv = slurp(outcome.out_dir / "convergence.csv");
    CHECK(csv ==
          "epsilon,dt_seconds,coordinate,w1,ks,noise_floor_w1,noise_floor_ks\n");
}

TEST_CASE("output formats control emission and the manifest lists every file",
          "[experiment][formats]") {
    Json cfg{{"study", "picard"},
             {"model", "ou-slow"},
             {"seed", 3},
             {"picard",
              {{"iterations", 4},
               {"grid", {{"t0_seconds", 0.0}, {"t1_seconds", 0.5}, {"dt_seconds", 0.01}}}}}};

    SECTION("both formats requested emits both") {
        cfg["output_formats"] = {"csv", "json"};
        const auto outcome = run_experiment(cfg, fresh_dir("fmt-both"));
        std::set<std::string> listed;
        for (const auto& entry : outcome.manifest.at("outputs")) {
            listed.insert(entry.at("file").get<std::string>());
        }
        CHECK(listed.count("picard.csv") == 1);
        CHECK(listed.count("picard.json") == 1);
        CHECK(listed.count("summary.json") == 1);
        // digests in the manifest match the emitted bytes
        for (const auto& entry : outcome.manifest.at("outputs")) {
            const auto file = outcome.out_dir / entry.at("file").get<std::string>();
            CHECK(hex64(fnv1a64(file)) == entry.at("fnv1a64").get<std::string>());
            CHECK(fs::file_size(file) == entry.at("bytes").get<std::uintmax_t>());
        }
    }

    SECTION("csv-only omits the json report") {
        cfg["output_formats"] = {"csv"};
        const auto outcome = run_experiment(cfg, fresh_dir("fmt-csv"));
        CHECK(fs::exists(outcome.out_dir / "picard.csv"));
        CHECK_FALSE(fs::exists(outcome.out_dir / "picard.json"));
        CHECK(fs::exists(outcome.out_dir / "summary.json"));  // always emitted
    }
}

TEST_CASE("studies write only inside the output directory", "[experiment]") {
    const auto parent = fresh_dir("containment");
    fs::create_directories(parent);
    const auto out = parent / "run";
    run_experiment(tiny_converge_config(), out);
    std::size_t entries = 0;
    for (const auto& entry : fs::directory_iterator(parent)) {
        CHECK(entry.path().filename() == "run");
        ++entries;
    }
    CHECK(entries == 1);
}

TEST_CASE("qsd and simulate studies emit their documented files", "[experiment]") {
    SECTION("qsd on the worked example") {
        Json cfg{{"study", "qsd"}, {"model", "two-class"}, {"seed", 1}};
        const auto outcome = run_experiment(cfg, fresh_dir("qsd-files"));
        CHECK(fs::exists(outcome.out_dir / "qsd.csv"));
        CHECK(fs::exists(outcome.out_dir / "aggregated_generator.csv"));
        const auto weights = outcome.summary.at("weights")[0][0];
        CHECK(weights[0].get<double>() == Catch::Approx(2.0 / 3.0).margin(1e-12));
    }

    SECTION("simulate exports path, jump and chain CSVs per path") {
        Json cfg{{"study", "simulate"},
                 {"model", "linear"},
                 {"seed", 9},
                 {"simulate",
                  {{"epsilon", 0.05},
                   {"grid", {{"t0_seconds", 0.0}, {"t1_seconds", 0.2}, {"dt_seconds", 0.01}}},
                   {"paths", 2}}}};
        const auto outcome = run_experiment(cfg, fresh_dir("simulate-files"));
        for (const auto* name : {"path_0.csv", "jumps_0.csv", "chain_0.csv", "path_1.csv"}) {
            CHECK(fs::exists(outcome.out_dir / name));
        }
        const auto header = slurp(outcome.out_dir / "path_0.csv").substr(0, 32);
        CHECK(header.rfind("t_seconds,x_0,xi_0,regime", 0) == 0);
    }
}

TEST_CASE("a run is reproducible from its manifest", "[experiment][determinism]") {
    const auto first = run_experiment(tiny_converge_config(), fresh_dir("manifest-a"));
    // the manifest carries the full config snapshot and seed; replaying it
    // must reproduce every study output byte for byte
    const auto replay =
        run_experiment(first.manifest.at("config"), fresh_dir("manifest-b"),
                       first.manifest.at("seed").get<std::uint64_t>());
    for (const auto& entry : first.manifest.at("outputs")) {
        const auto name = entry.at("file").get<std::string>();
        CHECK(slurp(first.out_dir / name) == slurp(replay.out_dir / name));
    }
}

TEST_CASE("segmented generator schedules parse and drive the qsd study", "[experiment][config]") {
    Json cfg{{"study", "qsd"},
             {"model", "constant"},
             {"switching",
              {{"class_sizes", {2}},
               {"fast",
                {{"breakpoints_seconds", {0.0, 1.0, 2.0}},
                 {"matrices",
                  {{{-1.0, 1.0}, {2.0, -2.0}}, {{-2.0, 2.0}, {1.0, -1.0}}}}}}}}};
    const auto outcome = run_experiment(cfg, fresh_dir("segments"));
    CHECK(outcome.summary.at("segments") == 2);
    const auto& weights = outcome.summary.at("weights");
    CHECK(weights[0][0][0].get<double>() == Catch::Approx(2.0 / 3.0).margin(1e-12));
    CHECK(weights[1][0][0].get<double>() == Catch::Approx(1.0 / 3.0).margin(1e-12));

    SECTION("breakpoint count mismatch is rejected") {
        cfg["switching"]["fast"]["breakpoints_seconds"] = {0.0, 1.0};
        CHECK_THROWS_AS(run_experiment(cfg, fresh_dir("segments-bad")), ConfigError);
    }
}

TEST_CASE("validate study reports assumption estimates", "[experiment]") {
    Json cfg{{"study", "validate"},
             {"model", "linear"},
             {"seed", 23},
             {"validate", {{"half_width", 3.0}, {"pairs", 2000}, {"x_frozen", 1.0}}}};
    const auto outcome = run_experiment(cfg, fresh_dir("validate-run"));
    CHECK(outcome.summary.at("lipschitz_pass").get<bool>());
    CHECK(outcome.summary.at("dissipativity").at("pass").get<bool>());
    CHECK(outcome.summary.at("dissipativity").at("margin").get<double>() > 0.0);
    CHECK(fs::exists(outcome.out_dir / "lipschitz.csv"));
}
