#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "stabscope/pipeline.hpp"

using namespace stabscope;
namespace fs = std::filesystem;

namespace {

const fs::path kData = fs::path(STABSCOPE_SOURCE_DIR) / "data";

// Small but complete 9-bus pipeline configuration: 27 scenarios, 2 fault
// buses, light model and explainer settings.
std::string tiny_config_json(const fs::path& out_dir) {
    nlohmann::ordered_json j;
    j["case"] = (kData / "wscc9.json").string();
    j["out_dir"] = out_dir.string();
    j["master_seed"] = 5;
    j["scenarios"] = {{"demand_min", 0.8},
                      {"demand_max", 1.0},
                      {"demand_step", 0.1},
                      {"s_values", {0.0}},
                      {"r_values", {1.0}},
                      {"displaceable_machines", {"G2", "G3"}},
                      {"res_siting", {{"A1", "R1"}, {"A2", "R2"}, {"A3", "R3"}}}};
    j["fault_buses"] = {"7", "9"};
    j["simulation"] = {{"dt", 0.002}, {"horizon_after_clear", 3.0}};
    j["ml"] = {{"ladder", {"cart", "gradient_boosting"}},
               {"threshold", 0.2},
               {"test_fraction", 0.25},
               {"hyper", {{"gbm_trees", 60}, {"cart_min_leaf", 2}}}};
    j["explain"] = {{"budget", 128}, {"background_max", 8}, {"rows_max", 10}, {"pfi_repeats", 2}};
    j["trends"] = {{"vois", {"sg_p_loading:G2", "res_mva_total"}}};
    j["intervention"] = {{"rule", "forbid_displacement"}, {"machine", "G3"}, {"target_bus", "9"}};
    j["report"] = {{"top_k", 5}};
    return j.dump(2);
}

PipelineConfig write_config(const fs::path& dir, const std::string& content) {
    fs::create_directories(dir);
    const fs::path cfg_path = dir / "config.json";
    write_text_atomic(cfg_path, content);
    return load_pipeline_config(cfg_path);
}

struct SilentLog : std::ostream {
    SilentLog() : std::ostream(&buf) {}
    std::stringbuf buf;
};

void run_all_stages(const PipelineConfig& cfg, unsigned jobs) {
    SilentLog log;
    cmd_scenarios(cfg, jobs, log);
    cmd_simulate(cfg, jobs, log);
    cmd_build_db(cfg, jobs, log);
    cmd_train(cfg, jobs, log);
    cmd_explain(cfg, jobs, log);
    cmd_trends(cfg, jobs, log);
    cmd_intervene(cfg, jobs, log);
    cmd_report(cfg, jobs, log);
}

std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        files[fs::relative(entry.path(), root).string()] = read_text(entry.path());
    }
    return files;
}

} // namespace

TEST_CASE("pipeline: full stage chain produces every artifact" * doctest::timeout(600)) {
    const fs::path base = fs::temp_directory_path() / "stabscope_pipe_full";
    fs::remove_all(base);
    const auto cfg = write_config(base, tiny_config_json(base / "out"));
    run_all_stages(cfg, 2);

    for (const char* f : {"scenarios/scenarios.json", "operating_points/operating_points.json",
                          "cct/cct.csv", "tsdb/features.csv", "tsdb/targets.csv", "tsdb/schema.json",
                          "models/selection_report.csv", "models/model_cct_min.json",
                          "models/model_cct_bus_7.json", "models/model_cct_bus_9.json",
                          "shap_cube/cct_min.csv", "shap_cube/base_values.csv",
                          "shap_cube/summary_cct_min.csv", "shap_cube/pfi_cct_min.csv",
                          "shap_cube/dependence_cct_min_sg_p_loading:G2.csv",
                          "trends/trend_sg_p_loading:G2.csv", "trends/trend_res_mva_total.csv",
                          "report/report.txt", "report/metrics_table.csv",
                          "report/intervention_forbid_displacement_G3_9.csv"})
        CHECK_MESSAGE(fs::exists(cfg.out_dir / f), f);

    // scenario combinatorics for this config
    const auto scenarios = read_scenarios(cfg);
    CHECK(scenarios.size() == 3 * (2 * 4 * 1 * 1) + 3);

    // cct table boundary soundness flags never contradict the cap
    const CsvTable cct = read_csv(cfg.out_dir / "cct" / "cct.csv");
    for (const auto& row : cct.rows) {
        if (row[1] != "yes") continue;
        for (std::size_t b = 0; b < 2; ++b) {
            const std::string& cell = row[2 + 3 * b];
            if (cell.empty()) continue;
            const double c = parse_double(cell);
            CHECK(c >= 0.0);
            CHECK(c <= 1.4 + 1e-12);
        }
    }
    fs::remove_all(base);
}

TEST_CASE("pipeline: stage out of order fails with a prerequisite error") {
    const fs::path base = fs::temp_directory_path() / "stabscope_pipe_order";
    fs::remove_all(base);
    const auto cfg = write_config(base, tiny_config_json(base / "out"));
    SilentLog log;
    CHECK_THROWS_WITH_AS(cmd_trends(cfg, 1, log), doctest::Contains("has not been run"), PipelineError);
    CHECK_THROWS_WITH_AS(cmd_simulate(cfg, 1, log), doctest::Contains("has not been run"), PipelineError);
    fs::remove_all(base);
}

TEST_CASE("pipeline: config change invalidates existing artifacts") {
    const fs::path base = fs::temp_directory_path() / "stabscope_pipe_stale";
    fs::remove_all(base);
    const auto cfg = write_config(base, tiny_config_json(base / "out"));
    SilentLog log;
    cmd_scenarios(cfg, 1, log);

    // same out dir, different scenario grid
    std::string changed = tiny_config_json(base / "out");
    const auto pos = changed.find("0.1");
    changed.replace(pos, 3, "0.2");
    const auto cfg2 = write_config(base / "v2", changed);
    CHECK_THROWS_WITH_AS(cmd_simulate(cfg2, 1, log), doctest::Contains("different config"), PipelineError);
    fs::remove_all(base);
}

TEST_CASE("pipeline: reruns and worker counts are byte-identical" * doctest::timeout(600)) {
    const fs::path base = fs::temp_directory_path() / "stabscope_pipe_det";
    fs::remove_all(base);

    const auto cfg1 = write_config(base / "r1", tiny_config_json(base / "r1" / "out"));
    const auto cfg2 = write_config(base / "r2", tiny_config_json(base / "r2" / "out"));
    run_all_stages(cfg1, 1);
    run_all_stages(cfg2, 4);

    const auto a = snapshot_tree(cfg1.out_dir);
    const auto b = snapshot_tree(cfg2.out_dir);
    REQUIRE(a.size() == b.size());
    for (const auto& [rel, content] : a) {
        REQUIRE_MESSAGE(b.count(rel) == 1, rel);
        CHECK_MESSAGE(content == b.at(rel), "artifact differs: " << rel);
    }

    // re-running one stage in place rewrites the same bytes
    const auto before = read_text(cfg1.out_dir / "models" / "model_cct_min.json");
    SilentLog log;
    cmd_train(cfg1, 1, log);
    CHECK(read_text(cfg1.out_dir / "models" / "model_cct_min.json") == before);
    fs::remove_all(base);
}

TEST_CASE("pipeline config: validation failures") {
    const fs::path base = fs::temp_directory_path() / "stabscope_pipe_cfg";
    fs::remove_all(base);

    auto bad_theta = nlohmann::json::parse(tiny_config_json(base / "out"));
    bad_theta["ml"]["threshold"] = 0.0;
    CHECK_THROWS_WITH_AS(write_config(base / "a", bad_theta.dump(2)),
                         doctest::Contains("threshold"), PipelineError);

    auto bad_bus = nlohmann::json::parse(tiny_config_json(base / "out"));
    bad_bus["fault_buses"] = {"7", "X"};
    const auto cfg = write_config(base / "b", bad_bus.dump(2));
    SilentLog log;
    CHECK_THROWS(cmd_scenarios(cfg, 1, log));
    fs::remove_all(base);
}

#ifdef STABSCOPE_CLI_PATH
namespace {
int run_cli(const std::string& args) {
    const std::string cmd = std::string(STABSCOPE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}
} // namespace

TEST_CASE("cli: exit codes for success, usage errors and stage failures") {
    const fs::path base = fs::temp_directory_path() / "stabscope_pipe_cli";
    fs::remove_all(base);
    fs::create_directories(base);
    const fs::path cfg_path = base / "config.json";
    write_text_atomic(cfg_path, tiny_config_json(base / "out"));

    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("scenarios") == 1);               // missing --config
    CHECK(run_cli("no-such-command --config x") == 1);
    CHECK(run_cli("scenarios --config " + (base / "missing.json").string()) == 1);
    // stage failure: prerequisite not run yet
    CHECK(run_cli("simulate --config " + cfg_path.string()) == 2);
    CHECK(run_cli("scenarios --config " + cfg_path.string()) == 0);
    fs::remove_all(base);
}
#endif

TEST_CASE("trajectory dump: csv layout") {
    const auto net = load_case(kData / "wscc9.json");
    Scenario sc;
    sc.id = 0;
    sc.demand_mult = 0.9;
    const auto d = dispatch(net, sc);
    REQUIRE(d.feasible);
    const auto op = solve_powerflow(net, sc, d);
    REQUIRE(op.converged);
    const auto model = build_dynamic_model(net, sc, op, "7");
    SimConfig sim;
    sim.horizon_after_clear = 0.5;
    const auto res = simulate(model, 0.1, sim, true);

    const fs::path path = fs::temp_directory_path() / "stabscope_traj.csv";
    write_trajectory_csv(model, res, path);
    const CsvTable t = read_csv(path);
    CHECK(t.header == std::vector<std::string>{"t", "delta_G1", "delta_G2", "delta_G3"});
    CHECK(t.rows.size() == res.time.size());
    fs::remove(path);
}
