#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "condlab/runner.hpp"

using namespace condlab;
namespace fs = std::filesystem;

namespace {

fs::path config_dir() { return fs::path(CONDLAB_CONFIG_DIR); }

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "condlab_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

nlohmann::json load_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

int run_cli(const std::string& args) {
    const std::string cmd = std::string(CONDLAB_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("simulate subcommand produces a consistent manifest") {
    const fs::path out = fresh_dir("simulate_scalar");
    RunConfig rc;
    rc.subcommand = "simulate";
    rc.config_path = config_dir() / "scalar_blowup.json";
    rc.output_dir = out;
    const RunResult res = run(rc);
    REQUIRE(res.exit_code == 0);

    const nlohmann::json manifest = load_json(out / "manifest.json");
    CHECK(manifest["subcommand"] == "simulate");

    // every artifact in the directory appears in the manifest with a matching
    // hash (the manifest itself is the one exception)
    std::size_t files_on_disk = 0;
    for (const auto& entry : fs::directory_iterator(out)) {
        if (entry.path().filename() == "manifest.json") continue;
        ++files_on_disk;
        bool found = false;
        for (const auto& art : manifest["artifacts"]) {
            if (art["path"] != entry.path().filename().string()) continue;
            found = true;
            const std::string content = slurp(entry.path());
            CHECK(art["bytes"] == content.size());
            CHECK(art["fnv1a64"] == fnv1a64_hex(content));
        }
        CHECK(found);
    }
    CHECK(files_on_disk == manifest["artifacts"].size());

    // the scalar run blows up: final E at the ceiling
    const nlohmann::json report = load_json(out / "report.json");
    CHECK(report["stop_reason"] == "energy_ceiling");
    CHECK(std::abs(report["final_energy"].get<double>()) >= 1e9);
    CHECK(report["bracket"]["upper_time"].get<double>() == Catch::Approx(1.0).margin(1e-4));

    // trajectory.csv final row energy matches the report
    const std::string csv = slurp(out / "trajectory.csv");
    CHECK(csv.rfind("t,E,norm_a,norm_b,norm_c,step", 0) == 0);
}

TEST_CASE("check subcommand on the balanced counterexample") {
    const fs::path out = fresh_dir("check_ex33");
    RunConfig rc;
    rc.subcommand = "check";
    rc.config_path = config_dir() / "balanced_decay.json";
    rc.output_dir = out;
    REQUIRE(run(rc).exit_code == 0);
    const nlohmann::json report = load_json(out / "report.json");
    CHECK(report["assumption_holds"] == false);
    CHECK(report["norm_gap"] == 0.0);
    CHECK(report["energy"] == -1.0);
    CHECK(report["fsc"]["holds"] == false);
}

TEST_CASE("missing config file exits 2 with no partial outputs") {
    const fs::path out = fresh_dir("missing_config");
    fs::remove_all(out);  // the runner should not create it on failure
    RunConfig rc;
    rc.subcommand = "simulate";
    rc.config_path = "/nonexistent/nope.json";
    rc.output_dir = out;
    const RunResult res = run(rc);
    CHECK(res.exit_code == kExitPrecondition);
    CHECK_FALSE(fs::exists(out));
}

TEST_CASE("schema version mismatch exits 2") {
    const fs::path out = fresh_dir("schema_mismatch");
    const fs::path cfg = out / "bad.json";
    std::ofstream(cfg) << R"({"schema_version": 99, "m": 1})";
    RunConfig rc;
    rc.subcommand = "simulate";
    rc.config_path = cfg;
    rc.output_dir = out / "run";
    CHECK(run(rc).exit_code == kExitPrecondition);
    CHECK_FALSE(fs::exists(out / "run"));
}

TEST_CASE("unknown subcommand exits 2") {
    RunConfig rc;
    rc.subcommand = "frobnicate";
    rc.config_path = config_dir() / "scalar_blowup.json";
    rc.output_dir = fresh_dir("unknown_sub");
    CHECK(run(rc).exit_code == kExitPrecondition);
}

TEST_CASE("config overrides apply") {
    const fs::path out = fresh_dir("override");
    RunConfig rc;
    rc.subcommand = "simulate";
    rc.config_path = config_dir() / "scalar_blowup.json";
    rc.output_dir = out;
    rc.overrides = {{"energy_ceiling", "1e3"}};
    REQUIRE(run(rc).exit_code == 0);
    const nlohmann::json report = load_json(out / "report.json");
    const double e = std::abs(report["final_energy"].get<double>());
    CHECK(e >= 1e3);
    CHECK(e < 1e4);
}

TEST_CASE("determinism: identical config and seed give byte-identical CSVs") {
    const fs::path out1 = fresh_dir("det1");
    const fs::path out2 = fresh_dir("det2");
    for (const fs::path& out : {out1, out2}) {
        RunConfig rc;
        rc.subcommand = "simulate";
        rc.config_path = config_dir() / "gaussian_m10.json";
        rc.output_dir = out;
        rc.seed = 123;
        REQUIRE(run(rc).exit_code == 0);
    }
    CHECK(slurp(out1 / "trajectory.csv") == slurp(out2 / "trajectory.csv"));
    CHECK(slurp(out1 / "fsc_series.csv") == slurp(out2 / "fsc_series.csv"));
    CHECK(slurp(out1 / "angle_series.csv") == slurp(out2 / "angle_series.csv"));
}

TEST_CASE("sweep grid handling") {
    SECTION("empty grid exits 2") {
        const fs::path out = fresh_dir("sweep_empty");
        const fs::path cfg = out / "sweep.json";
        std::ofstream(cfg) << R"({"schema_version": 1, "subcommand": "simulate",
            "grid": {"param": "t_end", "values": []}, "base": {}})";
        RunConfig rc;
        rc.subcommand = "sweep";
        rc.config_path = cfg;
        rc.output_dir = out / "run";
        CHECK(run(rc).exit_code == kExitPrecondition);
    }
    SECTION("one-cell sweep matches a single run") {
        const fs::path out = fresh_dir("sweep_one");
        const fs::path cfg = out / "sweep.json";
        std::ofstream(cfg) << R"({"schema_version": 1, "subcommand": "simulate", "seed": 5,
            "grid": {"param": "t_end", "values": [2.0]},
            "summary_metric": "final_energy",
            "base": {"m": 1,
                     "init": {"kind": "explicit", "a": [1.0], "b": [[1.0]], "c": [1.0]},
                     "energy_ceiling": 1e6}})";
        RunConfig rc;
        rc.subcommand = "sweep";
        rc.config_path = cfg;
        rc.output_dir = out / "run";
        REQUIRE(run(rc).exit_code == 0);

        // the cell output equals a standalone simulate run with the derived seed
        const fs::path single_cfg = out / "single.json";
        std::ofstream(single_cfg) << R"({"schema_version": 1, "m": 1, "t_end": 2.0,
            "init": {"kind": "explicit", "a": [1.0], "b": [[1.0]], "c": [1.0]},
            "energy_ceiling": 1e6})";
        RunConfig rs;
        rs.subcommand = "simulate";
        rs.config_path = single_cfg;
        rs.output_dir = out / "single";
        rs.seed = derive_seed(5, 0);
        REQUIRE(run(rs).exit_code == 0);
        CHECK(slurp(out / "run" / "cell_0" / "trajectory.csv") ==
              slurp(out / "single" / "trajectory.csv"));

        const std::string summary = slurp(out / "run" / "sweep_summary.csv");
        CHECK(summary.rfind("t_end,final_energy,exit_code", 0) == 0);
    }
    SECTION("cell failures are recorded and remaining cells run") {
        const fs::path out = fresh_dir("sweep_fail");
        const fs::path cfg = out / "sweep.json";
        // t_end = -1 is an invalid option for the first cell only
        std::ofstream(cfg) << R"({"schema_version": 1, "subcommand": "simulate", "seed": 5,
            "grid": {"param": "t_end", "values": [-1.0, 2.0]},
            "summary_metric": "final_energy",
            "base": {"m": 1,
                     "init": {"kind": "explicit", "a": [1.0], "b": [[1.0]], "c": [1.0]},
                     "energy_ceiling": 1e6}})";
        RunConfig rc;
        rc.subcommand = "sweep";
        rc.config_path = cfg;
        rc.output_dir = out / "run";
        CHECK(run(rc).exit_code == kExitPrecondition);  // worst cell status
        const nlohmann::json report = load_json(out / "run" / "sweep_report.json");
        CHECK(report["cells"][0]["exit_code"] == kExitPrecondition);
        CHECK(report["cells"][1]["exit_code"] == 0);
        CHECK(fs::exists(out / "run" / "cell_1" / "trajectory.csv"));
    }
}

TEST_CASE("CLI binary end to end") {
    const fs::path out = fresh_dir("cli_e2e");
    const std::string cfg = (config_dir() / "scalar_blowup.json").string();
    CHECK(run_cli("simulate --config " + cfg + " --out " + (out / "a").string()) == 0);
    CHECK(fs::exists(out / "a" / "manifest.json"));

    CHECK(run_cli("simulate --config /nonexistent.json --out " + (out / "b").string()) ==
          kExitPrecondition);
    CHECK(run_cli("check --config " + (config_dir() / "balanced_decay.json").string() + " --out " +
                  (out / "c").string()) == 0);

    // --set override is honored through the CLI as well
    CHECK(run_cli("simulate --config " + cfg + " --out " + (out / "d").string() +
                  " --set energy_ceiling=1e3") == 0);
    const nlohmann::json rep = load_json(out / "d" / "report.json");
    CHECK(std::abs(rep["final_energy"].get<double>()) < 1e4);
}
