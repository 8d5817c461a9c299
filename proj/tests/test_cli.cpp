#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct cli_result {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path work_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "dta_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

cli_result run_cli(const std::string& args, const std::string& env_prefix = "") {
    static int counter = 0;
    const fs::path out_file = work_dir() / ("stdout_" + std::to_string(counter) + ".txt");
    const fs::path err_file = work_dir() / ("stderr_" + std::to_string(counter) + ".txt");
    ++counter;
    const std::string cmd = env_prefix + std::string(DTA_CLI_PATH) + " " + args + " >" +
                            out_file.string() + " 2>" + err_file.string();
    const int rc = std::system(cmd.c_str());
    cli_result res;
    res.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    res.out = slurp(out_file);
    res.err = slurp(err_file);
    return res;
}

std::string golden_scenario() { return std::string(DTA_SCENARIO_DIR) + "/golden_ide.json"; }
std::string scenario_path(const std::string& name) {
    return std::string(DTA_SCENARIO_DIR) + "/" + name;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

} // namespace

TEST_CASE("solve writes the full output set and the reference flow") {
    const fs::path dir = work_dir() / "solve_golden";
    const auto res = run_cli("solve " + golden_scenario() + " --out " + dir.string());
    REQUIRE(res.exit_code == 0);

    for (const char* name :
         {"flow.json", "splits.csv", "queues.csv", "diagnostics.json", "manifest.json"}) {
        CHECK(fs::exists(dir / name));
    }

    const json flow = json::parse(slurp(dir / "flow.json"));
    CHECK(flow.at("edges") == 4);
    CHECK(flow.at("commodities") == 1);
    bool found_first_edge = false;
    for (const auto& rec : flow.at("inflows")) {
        if (rec.at("edge") != 0) continue;
        found_first_edge = true;
        const auto& pieces = rec.at("pieces");
        REQUIRE(pieces.size() == 3);
        CHECK(pieces[0][2].get<double>() == doctest::Approx(4.0).epsilon(1e-9));
        CHECK(pieces[1][2].get<double>() == doctest::Approx(2.0).epsilon(1e-9));
        CHECK(pieces[2][2].get<double>() == doctest::Approx(4.0).epsilon(1e-9));
    }
    CHECK(found_first_edge);

    const std::string splits = slurp(dir / "splits.csv");
    CHECK(splits.rfind("theta,node,commodity,edge,fraction\n", 0) == 0);
    CHECK(splits.find("0.66666666666666663") != std::string::npos);

    const json diag = json::parse(slurp(dir / "diagnostics.json"));
    CHECK(diag.at("converged") == true);
    CHECK(diag.at("reached").get<double>() == doctest::Approx(3.0));
    CHECK(diag.at("dpe_gap").get<double>() <= 1e-9);
    CHECK(diag.at("max_conservation_per_unit").get<double>() <= 1e-9);

    const json manifest = json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest.at("command") == "solve");
    CHECK(manifest.at("config").at("routing") == "dpe");
    CHECK(manifest.at("timings").contains("solve_ms"));
}

TEST_CASE("reruns are byte-identical apart from manifest timings") {
    const fs::path a = work_dir() / "rerun_a";
    const fs::path b = work_dir() / "rerun_b";
    REQUIRE(run_cli("solve " + golden_scenario() + " --out " + a.string()).exit_code == 0);
    REQUIRE(run_cli("solve " + golden_scenario() + " --out " + b.string()).exit_code == 0);
    for (const char* name : {"flow.json", "splits.csv", "queues.csv", "diagnostics.json"}) {
        CHECK(slurp(a / name) == slurp(b / name));
    }
    // Thread count must not change any deterministic output either.
    const fs::path c = work_dir() / "rerun_threads";
    REQUIRE(run_cli("solve " + golden_scenario() + " --out " + c.string(), "DTA_THREADS=3 ")
                .exit_code == 0);
    for (const char* name : {"flow.json", "splits.csv", "queues.csv", "diagnostics.json"}) {
        CHECK(slurp(a / name) == slurp(c / name));
    }
}

TEST_CASE("malformed scenario JSON exits 2 with a position") {
    const fs::path bad = work_dir() / "broken.json";
    write_file(bad, "{\"nodes\": [\"a\", }");
    const auto res =
        run_cli("solve " + bad.string() + " --out " + (work_dir() / "broken_out").string());
    CHECK(res.exit_code == 2);
    CHECK(res.err.find("line 1") != std::string::npos);
    CHECK(res.err.find("column") != std::string::npos);
}

TEST_CASE("semantic scenario problems exit 2") {
    const fs::path bad = work_dir() / "negative_capacity.json";
    write_file(bad, R"({
      "nodes": ["s", "t"],
      "edges": [{"from": "s", "to": "t", "capacity": -1, "free_flow_time": 1}],
      "commodities": [{"sink": "t", "inflows": [{"node": "s", "pieces": [[0, 1, 1]]}]}],
      "horizon": 2
    })");
    const auto res =
        run_cli("solve " + bad.string() + " --out " + (work_dir() / "neg_out").string());
    CHECK(res.exit_code == 2);
    CHECK(!res.err.empty());
}

TEST_CASE("bad flag values exit 2") {
    const auto res = run_cli("solve " + golden_scenario() + " --routing banana --out " +
                             (work_dir() / "flag_out").string());
    CHECK(res.exit_code == 2);
    const auto res2 = run_cli("solve " + golden_scenario() + " --no-such-flag --out " +
                              (work_dir() / "flag_out2").string());
    CHECK(res2.exit_code == 2);
    const auto res3 = run_cli("solve " + golden_scenario() + " --predictor perfect --out " +
                              (work_dir() / "flag_out3").string());
    CHECK(res3.exit_code == 2);
    CHECK(res3.err.find("composite") != std::string::npos);
}

TEST_CASE("a failing instance exits 3 and still writes partial outputs") {
    // Queue feedback moves the perceived costs between sweeps, so the first
    // window cannot settle in two iterations; with the step floor equal to
    // the initial step there is no way to shrink it, and the solve must
    // give up at t = 0 while still reporting what it has.
    const fs::path dir = work_dir() / "diverging_out";
    const auto res = run_cli("solve " + scenario_path("stochastic_fig.json") +
                             " --routing stochastic-ide --noise gaussian:0.5"
                             " --mc-samples 500 --fp-tol 1e-9"
                             " --alpha0 0.5 --alpha-min 0.5 --max-iter 2 --out " +
                             dir.string());
    CHECK(res.exit_code == 3);
    REQUIRE(fs::exists(dir / "diagnostics.json"));
    REQUIRE(fs::exists(dir / "flow.json"));
    const json diag = json::parse(slurp(dir / "diagnostics.json"));
    CHECK(diag.at("converged") == false);
    CHECK_FALSE(diag.at("failure").get<std::string>().empty());
    CHECK(diag.at("reached").get<double>() < 1.0);
}

TEST_CASE("zero free-flow edges draw a warning but still solve") {
    const fs::path hard = work_dir() / "instant.json";
    write_file(hard, R"({
      "nodes": ["s", "t"],
      "edges": [
        {"from": "s", "to": "t", "capacity": 0.5, "free_flow_time": 0},
        {"from": "s", "to": "t", "capacity": 0.5, "free_flow_time": 0}
      ],
      "commodities": [{"sink": "t", "inflows": [{"node": "s", "pieces": [[0, 1, 4]]}]}],
      "horizon": 1
    })");
    const fs::path dir = work_dir() / "instant_out";
    const auto res = run_cli("solve " + hard.string() +
                             " --routing stochastic-ide --noise gaussian:0.005"
                             " --mc-samples 2000 --fp-tol 1e-4 --out " +
                             dir.string());
    CHECK(res.exit_code == 0);
    CHECK(res.err.find("zero free-flow time") != std::string::npos);
    const json diag = json::parse(slurp(dir / "diagnostics.json"));
    CHECK(diag.at("converged") == true);
    CHECK(diag.at("reached").get<double>() == doctest::Approx(1.0));
}

TEST_CASE("verify recomputes the solver's residuals") {
    const fs::path dir = work_dir() / "verify_src";
    REQUIRE(run_cli("solve " + golden_scenario() + " --out " + dir.string()).exit_code == 0);
    const auto res = run_cli("verify " + golden_scenario() + " " + (dir / "flow.json").string());
    REQUIRE(res.exit_code == 0);
    const json report = json::parse(res.out);
    CHECK(report.at("conservation_total").get<double>() <= 1e-9);
    CHECK(report.at("consistency_total").get<double>() <= 1e-9);
    CHECK(report.at("dpe_gap").get<double>() <= 1e-9);
    CHECK(report.at("total_inflow_mass").get<double>() == doctest::Approx(18.0));
}

TEST_CASE("verify scores a hand-written equilibrium flow as gap-free") {
    const fs::path flow = work_dir() / "hand_flow.json";
    write_file(flow, R"({
      "edges": 4, "commodities": 1, "horizon": 3.0,
      "inflows": [
        {"edge": 0, "commodity": 0, "pieces": [[0,1,4],[1,2,2],[2,3,4]]},
        {"edge": 1, "commodity": 0, "pieces": [[1,2,4],[2,3,2]]},
        {"edge": 2, "commodity": 0, "pieces": [[0,1,2],[1,2,4],[2,3,2]]},
        {"edge": 3, "commodity": 0, "pieces": [[1,3,2]]}
      ],
      "outflows": [
        {"edge": 0, "commodity": 0, "pieces": [[1,2,4],[2,3,2]]},
        {"edge": 1, "commodity": 0, "pieces": [[2,3,2]]},
        {"edge": 2, "commodity": 0, "pieces": [[1,3,2]]},
        {"edge": 3, "commodity": 0, "pieces": [[2,3,2]]}
      ]
    })");
    const auto res = run_cli("verify " + golden_scenario() + " " + flow.string());
    REQUIRE(res.exit_code == 0);
    const json report = json::parse(res.out);
    CHECK(report.at("dpe_gap").get<double>() <= 1e-9);
    CHECK(report.at("conservation_total").get<double>() <= 1e-9);
    CHECK(report.at("consistency_total").get<double>() <= 1e-9);
}

TEST_CASE("verify reports missing mass for the zero flow") {
    const fs::path flow = work_dir() / "zero_flow.json";
    write_file(flow,
               R"({"edges": 4, "commodities": 1, "horizon": 3.0, "inflows": [], "outflows": []})");
    const auto res = run_cli("verify " + golden_scenario() + " " + flow.string());
    REQUIRE(res.exit_code == 0);
    const json report = json::parse(res.out);
    CHECK(report.at("conservation_total").get<double>() ==
          doctest::Approx(report.at("total_inflow_mass").get<double>()));
    CHECK(report.at("conservation_total").get<double>() == doctest::Approx(18.0));
}

TEST_CASE("verify rejects dimension mismatches with exit 2") {
    const fs::path flow = work_dir() / "mismatch_flow.json";
    write_file(flow, R"({"edges": 9, "commodities": 1, "inflows": [], "outflows": []})");
    const auto res = run_cli("verify " + golden_scenario() + " " + flow.string());
    CHECK(res.exit_code == 2);
    CHECK(res.err.find("do not match") != std::string::npos);

    const fs::path flow2 = work_dir() / "oob_flow.json";
    write_file(flow2, R"({"edges": 4, "commodities": 1,
      "inflows": [{"edge": 7, "commodity": 0, "pieces": [[0,1,1]]}], "outflows": []})");
    const auto res2 = run_cli("verify " + golden_scenario() + " " + flow2.string());
    CHECK(res2.exit_code == 2);
}

TEST_CASE("horizon override flows through solve and verify") {
    const fs::path dir = work_dir() / "horizon_out";
    REQUIRE(run_cli("solve " + golden_scenario() + " --horizon 2 --out " + dir.string())
                .exit_code == 0);
    const json flow = json::parse(slurp(dir / "flow.json"));
    CHECK(flow.at("horizon").get<double>() == doctest::Approx(2.0));

    // Without the matching override the horizons disagree.
    const auto bad = run_cli("verify " + golden_scenario() + " " + (dir / "flow.json").string());
    CHECK(bad.exit_code == 2);
    const auto good = run_cli("verify " + golden_scenario() + " --horizon 2 " +
                              (dir / "flow.json").string());
    CHECK(good.exit_code == 0);
}
