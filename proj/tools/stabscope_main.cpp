// stabscope CLI: runs the pipeline stage by stage with on-disk handoff.
// Exit codes: 0 success, 1 usage/config error, 2 stage failure.

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <map>
#include <string>

#include "stabscope/pipeline.hpp"

namespace {

using StageFn = void (*)(const stabscope::PipelineConfig&, unsigned, std::ostream&);

int run_stage(StageFn fn, const std::string& config_path, unsigned jobs, const std::string& out_override) {
    stabscope::PipelineConfig cfg;
    try {
        cfg = stabscope::load_pipeline_config(config_path);
        if (!out_override.empty()) cfg.out_dir = out_override;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }
    try {
        fn(cfg, jobs, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "stage error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"stabscope: transient stability databases, location-specific CCT models and SHAP trend analysis"};
    app.require_subcommand(1);

    std::string config_path;
    unsigned jobs = 1;
    std::string out_override;

    const std::map<std::string, std::pair<std::string, StageFn>> stages{
        {"scenarios", {"generate operational scenarios", &stabscope::cmd_scenarios}},
        {"simulate", {"dispatch, power flow and per-bus CCT for every scenario", &stabscope::cmd_simulate}},
        {"build-db", {"assemble feature/target databases", &stabscope::cmd_build_db}},
        {"train", {"run the algorithm selection ladder and write model files", &stabscope::cmd_train}},
        {"explain", {"SHAP cube, summaries, dependence data and PFI", &stabscope::cmd_explain}},
        {"trends", {"covariance trend tables per variable of interest", &stabscope::cmd_trends}},
        {"intervene", {"evaluate the configured operational rule", &stabscope::cmd_intervene}},
        {"report", {"assemble the run report", &stabscope::cmd_report}},
    };

    std::map<std::string, CLI::App*> subs;
    for (const auto& [name, stage] : stages) {
        CLI::App* sub = app.add_subcommand(name, stage.first);
        sub->add_option("--config", config_path, "pipeline config file (JSON)")->required();
        sub->add_option("--jobs", jobs, "worker threads (outputs are identical for any value)");
        sub->add_option("--out", out_override, "override the configured output directory");
        subs[name] = sub;
    }

    // Extra debugging command: dump one swing trajectory as CSV.
    std::string traj_scenario, traj_bus, traj_out;
    double traj_t_clear = 0.1;
    CLI::App* traj = app.add_subcommand("trajectory", "dump rotor angle trajectories for one simulation");
    traj->add_option("--config", config_path, "pipeline config file (JSON)")->required();
    traj->add_option("--scenario", traj_scenario, "scenario id")->required();
    traj->add_option("--bus", traj_bus, "fault bus")->required();
    traj->add_option("--t-clear", traj_t_clear, "clearing time (s)");
    traj->add_option("--out", out_override, "override the configured output directory");
    traj->add_option("--out-file", traj_out, "output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    for (const auto& [name, stage] : stages)
        if (subs.at(name)->parsed()) return run_stage(stage.second, config_path, jobs, out_override);

    if (traj->parsed()) {
        try {
            auto cfg = stabscope::load_pipeline_config(config_path);
            if (!out_override.empty()) cfg.out_dir = out_override;
            const auto net = stabscope::load_and_check_case(cfg);
            const auto scenarios = stabscope::read_scenarios(cfg);
            const stabscope::Scenario* sc = nullptr;
            for (const auto& s : scenarios)
                if (std::to_string(s.id) == traj_scenario) sc = &s;
            if (!sc) throw stabscope::PipelineError("unknown scenario id " + traj_scenario);
            const auto disp = stabscope::dispatch(net, *sc, cfg.loss_allowance);
            const auto op = stabscope::solve_powerflow(net, *sc, disp, cfg.powerflow);
            if (!op.converged) throw stabscope::PipelineError("operating point did not converge");
            const auto model = stabscope::build_dynamic_model(net, *sc, op, traj_bus);
            const auto sim = stabscope::simulate(model, traj_t_clear, cfg.sim, true);
            stabscope::write_trajectory_csv(model, sim, traj_out);
            std::cout << "trajectory: " << (sim.stable ? "stable" : "unstable") << ", written to "
                      << traj_out << "\n";
        } catch (const std::exception& e) {
            std::cerr << "stage error: " << e.what() << "\n";
            return 2;
        }
        return 0;
    }
    return 1;
}
