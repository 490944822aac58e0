#pragma once

// Stage-per-command pipeline with on-disk handoff. Every stage directory
// carries a provenance record tied to the config hash, so a stage refuses to
// run against artifacts produced under a different configuration. All stage
// outputs are deterministic for a fixed config: worker count changes wall
// time only.

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stabscope/dynamics.hpp"
#include "stabscope/intervention.hpp"
#include "stabscope/io.hpp"
#include "stabscope/parallel.hpp"
#include "stabscope/pfi.hpp"
#include "stabscope/selection.hpp"
#include "stabscope/shap.hpp"
#include "stabscope/trends.hpp"
#include "stabscope/tsdb.hpp"

namespace stabscope {

struct PipelineConfig {
    std::filesystem::path config_dir; // directory of the config file, for relative paths
    std::filesystem::path case_path;
    std::filesystem::path out_dir;
    std::uint64_t master_seed = 1;

    ScenarioConfig scenario;
    std::vector<std::string> fault_buses;
    SimConfig sim;
    CctSearchConfig search;
    PowerFlowConfig powerflow;
    double loss_allowance = 0.02;

    SelectionConfig selection;

    std::size_t explain_budget = 0;          // 0 = full enumeration (small M only)
    std::size_t explain_background_max = 0;  // 0 = whole training partition
    std::size_t explain_rows_max = 0;        // 0 = every training row
    std::size_t pfi_repeats = 3;
    std::string dependence_color_voi;        // empty = res_mva_total

    std::vector<std::string> trend_vois;

    std::optional<Rule> rule;
    std::string intervention_bus;

    std::size_t report_top_k = 10;

    std::uint64_t config_hash = 0; // canonical hash, out_dir excluded

    std::uint64_t stage_seed(const std::string& stage) const {
        return derive_seed(master_seed, stage);
    }

    std::filesystem::path resolve(const std::filesystem::path& p) const {
        return p.is_absolute() ? p : config_dir / p;
    }
};

struct PipelineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace pipedetail {

inline Algorithm algo_from_string(const std::string& s) { return algorithm_from_name(s); }

} // namespace pipedetail

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
    } catch (const std::exception& e) {
        throw PipelineError(std::string("config parse: ") + e.what());
    }
    PipelineConfig cfg;
    cfg.config_dir = path.has_parent_path() ? path.parent_path() : ".";
    try {
        cfg.case_path = j.at("case").get<std::string>();
        cfg.out_dir = j.value("out_dir", std::string("out"));
        cfg.master_seed = j.value("master_seed", 1ULL);
        cfg.scenario = scenario_config_from_json(j.at("scenarios"));
        cfg.fault_buses = j.at("fault_buses").get<std::vector<std::string>>();

        if (j.contains("simulation")) {
            const auto& s = j["simulation"];
            cfg.sim.dt = s.value("dt", cfg.sim.dt);
            cfg.sim.horizon_after_clear = s.value("horizon_after_clear", cfg.sim.horizon_after_clear);
            cfg.search.coarse = s.value("coarse", cfg.search.coarse);
            cfg.search.fine = s.value("fine", cfg.search.fine);
            cfg.search.cap = s.value("cap", cfg.search.cap);
        }
        if (j.contains("powerflow")) {
            const auto& p = j["powerflow"];
            cfg.powerflow.tolerance = p.value("tolerance", cfg.powerflow.tolerance);
            cfg.powerflow.max_iterations = p.value("max_iterations", cfg.powerflow.max_iterations);
            cfg.loss_allowance = p.value("loss_allowance", cfg.loss_allowance);
        }
        if (j.contains("ml")) {
            const auto& m = j["ml"];
            if (m.contains("ladder")) {
                cfg.selection.ladder.clear();
                for (const auto& a : m["ladder"])
                    cfg.selection.ladder.push_back(pipedetail::algo_from_string(a.get<std::string>()));
            }
            cfg.selection.threshold = m.value("threshold", cfg.selection.threshold);
            cfg.selection.test_fraction = m.value("test_fraction", cfg.selection.test_fraction);
            if (m.contains("hyper")) {
                const auto& h = m["hyper"];
                auto& hy = cfg.selection.hyper;
                hy.cart.max_depth = h.value("cart_max_depth", hy.cart.max_depth);
                hy.cart.min_leaf = h.value("cart_min_leaf", hy.cart.min_leaf);
                hy.forest.n_trees = h.value("rf_trees", hy.forest.n_trees);
                hy.forest.max_depth = h.value("rf_max_depth", hy.forest.max_depth);
                hy.forest.min_leaf = h.value("rf_min_leaf", hy.forest.min_leaf);
                hy.boost.n_trees = h.value("gbm_trees", hy.boost.n_trees);
                hy.boost.max_depth = h.value("gbm_depth", hy.boost.max_depth);
                hy.boost.learning_rate = h.value("gbm_learning_rate", hy.boost.learning_rate);
                hy.boost.min_leaf = h.value("gbm_min_leaf", hy.boost.min_leaf);
                if (h.contains("mlp_hidden")) hy.mlp.hidden = h["mlp_hidden"].get<std::vector<int>>();
                hy.mlp.learning_rate = h.value("mlp_learning_rate", hy.mlp.learning_rate);
                hy.mlp.momentum = h.value("mlp_momentum", hy.mlp.momentum);
                hy.mlp.epochs = h.value("mlp_epochs", hy.mlp.epochs);
            }
        }
        if (j.contains("explain")) {
            const auto& e = j["explain"];
            cfg.explain_budget = e.value("budget", 0ULL);
            cfg.explain_background_max = e.value("background_max", 0ULL);
            cfg.explain_rows_max = e.value("rows_max", 0ULL);
            cfg.pfi_repeats = e.value("pfi_repeats", cfg.pfi_repeats);
            cfg.dependence_color_voi = e.value("dependence_color_voi", std::string{});
        }
        if (j.contains("trends")) cfg.trend_vois = j["trends"].value("vois", std::vector<std::string>{});
        if (j.contains("intervention")) {
            const auto& iv = j["intervention"];
            Rule rule;
            const std::string kind = iv.at("rule").get<std::string>();
            if (kind == "forbid_displacement") rule.kind = Rule::Kind::ForbidDisplacement;
            else if (kind == "cap_loading") rule.kind = Rule::Kind::CapLoading;
            else throw PipelineError("config: unknown intervention rule '" + kind + "'");
            rule.machine = iv.at("machine").get<std::string>();
            rule.cap_percent = iv.value("cap_percent", 100.0);
            rule.recompute_res = iv.value("recompute_res", true);
            cfg.rule = rule;
            cfg.intervention_bus = iv.at("target_bus").get<std::string>();
        }
        if (j.contains("report")) cfg.report_top_k = j["report"].value("top_k", cfg.report_top_k);
    } catch (const nlohmann::json::exception& e) {
        throw PipelineError(std::string("config: ") + e.what());
    }

    if (cfg.selection.threshold <= 0.0) throw PipelineError("config: ml.threshold must be > 0");
    if (cfg.fault_buses.empty()) throw PipelineError("config: fault_buses must be non-empty");

    nlohmann::json canonical = j;
    canonical.erase("out_dir");
    cfg.config_hash = fnv1a(canonical.dump());
    return cfg;
}

// Validates referenced ids against the case and returns the loaded network.
inline PowerNetwork load_and_check_case(const PipelineConfig& cfg) {
    const PowerNetwork net = load_case(cfg.resolve(cfg.case_path));
    for (const auto& b : cfg.fault_buses) net.bus_index(b);
    for (const auto& m : cfg.scenario.displaceable_machines) net.machine(m);
    for (const auto& [area, res_id] : cfg.scenario.res_siting) {
        bool found = false;
        for (const auto& r : net.res_units)
            if (r.id == res_id) found = true;
        if (!found) throw PipelineError("config: res_siting names unknown res unit '" + res_id + "'");
    }
    if (cfg.rule && !net.has_machine(cfg.rule->machine))
        throw PipelineError("config: intervention rule names unknown machine '" + cfg.rule->machine + "'");
    if (!cfg.intervention_bus.empty()) net.bus_index(cfg.intervention_bus);
    return net;
}

// --- provenance chain -----------------------------------------------------

inline std::string hash_hex(std::uint64_t h) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline void write_provenance(const PipelineConfig& cfg, const std::string& stage,
                             const std::vector<std::string>& parents) {
    nlohmann::ordered_json j;
    j["stage"] = stage;
    j["config_hash"] = hash_hex(cfg.config_hash);
    std::uint64_t chain = fnv1a(stage, cfg.config_hash);
    nlohmann::ordered_json par = nlohmann::ordered_json::array();
    for (const auto& p : parents) {
        const auto pj = nlohmann::json::parse(read_text(cfg.out_dir / p / "provenance.json"));
        par.push_back({{"stage", p}, {"chain", pj.at("chain").get<std::string>()}});
        chain = fnv1a(pj.at("chain").get<std::string>(), chain);
    }
    j["parents"] = par;
    j["chain"] = hash_hex(chain);
    write_text_atomic(cfg.out_dir / stage / "provenance.json", j.dump(2) + "\n");
}

inline void require_stage(const PipelineConfig& cfg, const std::string& stage) {
    const auto path = cfg.out_dir / stage / "provenance.json";
    if (!std::filesystem::exists(path))
        throw PipelineError("stage '" + stage + "' has not been run (missing " + path.string() + ")");
    const auto j = nlohmann::json::parse(read_text(path));
    if (j.at("config_hash").get<std::string>() != hash_hex(cfg.config_hash))
        throw PipelineError("stage '" + stage + "' artifacts were produced under a different config; re-run it");
}

// --- operating point serialization -----------------------------------------

inline nlohmann::ordered_json op_to_json(const OperatingPoint& op) {
    nlohmann::ordered_json j;
    j["scenario_id"] = op.scenario_id;
    j["converged"] = op.converged;
    j["mismatch"] = op.mismatch;
    j["iterations"] = op.iterations;
    j["bus_ids"] = op.bus_ids;
    j["v_mag"] = op.v_mag;
    j["v_ang"] = op.v_ang;
    auto put_map = [&](const char* key, const std::map<std::string, double>& m) {
        nlohmann::ordered_json o = nlohmann::ordered_json::object();
        for (const auto& [k, v] : m) o[k] = v;
        j[key] = o;
    };
    put_map("sg_p", op.sg_p);
    put_map("sg_q", op.sg_q);
    put_map("res_p", op.res_p);
    put_map("res_q", op.res_q);
    nlohmann::ordered_json flows = nlohmann::ordered_json::array();
    for (const auto& f : op.branch_flows) flows.push_back({f.p_from, f.p_to, f.q_from, f.q_to});
    j["branch_flows"] = flows;
    return j;
}

inline OperatingPoint op_from_json(const nlohmann::json& j) {
    OperatingPoint op;
    op.scenario_id = j.at("scenario_id").get<int>();
    op.converged = j.at("converged").get<bool>();
    op.mismatch = j.at("mismatch").get<double>();
    op.iterations = j.value("iterations", 0);
    op.bus_ids = j.at("bus_ids").get<std::vector<std::string>>();
    op.v_mag = j.at("v_mag").get<std::vector<double>>();
    op.v_ang = j.at("v_ang").get<std::vector<double>>();
    auto get_map = [&](const char* key, std::map<std::string, double>& m) {
        for (const auto& [k, v] : j.at(key).items()) m[k] = v.get<double>();
    };
    get_map("sg_p", op.sg_p);
    get_map("sg_q", op.sg_q);
    get_map("res_p", op.res_p);
    get_map("res_q", op.res_q);
    for (const auto& jf : j.at("branch_flows"))
        op.branch_flows.push_back({jf[0].get<double>(), jf[1].get<double>(), jf[2].get<double>(), jf[3].get<double>()});
    return op;
}

// --- stages ----------------------------------------------------------------

inline void cmd_scenarios(const PipelineConfig& cfg, unsigned /*jobs*/ = 1, std::ostream& log = std::cout) {
    const PowerNetwork net = load_and_check_case(cfg);
    const auto scenarios = generate_scenarios(net, cfg.scenario);
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& sc : scenarios) arr.push_back(scenario_to_json(sc));
    write_text_atomic(cfg.out_dir / "scenarios" / "scenarios.json", arr.dump(2) + "\n");
    write_provenance(cfg, "scenarios", {});
    log << "scenarios: " << scenarios.size() << " generated\n";
}

inline std::vector<Scenario> read_scenarios(const PipelineConfig& cfg) {
    const auto j = nlohmann::json::parse(read_text(cfg.out_dir / "scenarios" / "scenarios.json"));
    std::vector<Scenario> out;
    for (const auto& js : j) out.push_back(scenario_from_json(js));
    return out;
}

inline void cmd_simulate(const PipelineConfig& cfg, unsigned jobs = 1, std::ostream& log = std::cout) {
    require_stage(cfg, "scenarios");
    const PowerNetwork net = load_and_check_case(cfg);
    const auto scenarios = read_scenarios(cfg);

    struct Unit {
        OperatingPoint op;
        CctSurface surface;
        bool converged = false;
    };
    std::vector<Unit> results(scenarios.size());
    parallel_for(scenarios.size(), jobs, [&](std::size_t i) {
        const auto& sc = scenarios[i];
        Unit& u = results[i];
        const DispatchResult disp = dispatch(net, sc, cfg.loss_allowance);
        u.op = solve_powerflow(net, sc, disp, cfg.powerflow);
        u.converged = disp.feasible && u.op.converged;
        if (u.converged)
            u.surface = compute_cct_surface(net, sc, u.op, cfg.fault_buses, cfg.search, cfg.sim);
    });

    nlohmann::ordered_json ops = nlohmann::ordered_json::array();
    for (const auto& u : results) ops.push_back(op_to_json(u.op));
    write_text_atomic(cfg.out_dir / "operating_points" / "operating_points.json", ops.dump() + "\n");
    write_provenance(cfg, "operating_points", {"scenarios"});

    CsvTable cct;
    cct.header = {"scenario_id", "converged"};
    for (const auto& b : cfg.fault_buses) {
        cct.header.push_back("cct_bus_" + b);
        cct.header.push_back("capped_bus_" + b);
        cct.header.push_back("evals_bus_" + b);
    }
    cct.header.push_back("cct_min");
    cct.header.push_back("argmin_bus");
    std::size_t n_conv = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& u = results[i];
        std::vector<std::string> row{std::to_string(scenarios[i].id), u.converged ? "yes" : "no"};
        if (u.converged) {
            ++n_conv;
            for (const auto& r : u.surface.per_bus) {
                row.push_back(r.failed ? "" : format_double(r.cct));
                row.push_back(r.capped ? "yes" : "no");
                row.push_back(std::to_string(r.evaluations));
            }
            row.push_back(format_double(u.surface.cct_min));
            row.push_back(u.surface.argmin_bus);
        } else {
            for (std::size_t k = 0; k < cfg.fault_buses.size(); ++k) {
                row.push_back("");
                row.push_back("");
                row.push_back("");
            }
            row.push_back("");
            row.push_back("");
        }
        cct.rows.push_back(std::move(row));
    }
    write_csv(cfg.out_dir / "cct" / "cct.csv", cct);
    write_provenance(cfg, "cct", {"scenarios"});
    log << "simulate: " << n_conv << "/" << scenarios.size() << " scenarios converged\n";
}

inline std::vector<OperatingPoint> read_operating_points(const PipelineConfig& cfg) {
    const auto j = nlohmann::json::parse(read_text(cfg.out_dir / "operating_points" / "operating_points.json"));
    std::vector<OperatingPoint> out;
    for (const auto& jo : j) out.push_back(op_from_json(jo));
    return out;
}

inline void cmd_build_db(const PipelineConfig& cfg, unsigned jobs = 1, std::ostream& log = std::cout) {
    require_stage(cfg, "scenarios");
    require_stage(cfg, "operating_points");
    require_stage(cfg, "cct");
    const PowerNetwork net = load_and_check_case(cfg);
    const auto scenarios = read_scenarios(cfg);
    const auto ops = read_operating_points(cfg);
    const CsvTable cct = read_csv(cfg.out_dir / "cct" / "cct.csv");

    const FeatureSchema schema = build_schema(net);
    std::vector<TsdbRow> rows(scenarios.size());
    parallel_for(scenarios.size(), jobs, [&](std::size_t i) {
        TsdbRow& row = rows[i];
        row.scenario_id = scenarios[i].id;
        if (!ops[i].converged) {
            row.complete = false;
            return;
        }
        row.features = extract_features(net, schema, scenarios[i], ops[i]);
        const auto& csv_row = cct.rows[i];
        for (std::size_t b = 0; b < cfg.fault_buses.size(); ++b) {
            const std::string& cell = csv_row[2 + 3 * b];
            if (cell.empty()) {
                row.complete = false;
                return;
            }
            row.cct_per_bus[cfg.fault_buses[b]] = parse_double(cell);
        }
    });

    std::vector<int> dropped;
    const TSDb db = assemble_databases(schema, std::move(rows), cfg.fault_buses, &dropped);
    nlohmann::ordered_json prov;
    prov["network"] = net.name;
    prov["fault_buses"] = cfg.fault_buses;
    prov["config_hash"] = hash_hex(cfg.config_hash);
    prov["dropped_scenarios"] = dropped;
    prov["generation"] = {{"demand_min", cfg.scenario.demand_min},
                          {"demand_max", cfg.scenario.demand_max},
                          {"demand_step", cfg.scenario.demand_step},
                          {"s_values", cfg.scenario.s_values},
                          {"r_values", cfg.scenario.r_values},
                          {"displaceable_machines", cfg.scenario.displaceable_machines}};
    write_tsdb(db, cfg.out_dir / "tsdb", prov);
    write_provenance(cfg, "tsdb", {"scenarios", "operating_points", "cct"});
    log << "build_db: " << db.rows() << " rows, " << db.schema.size() << " features, "
        << dropped.size() << " dropped\n";
}

inline void cmd_train(const PipelineConfig& cfg, unsigned /*jobs*/ = 1, std::ostream& log = std::cout) {
    require_stage(cfg, "tsdb");
    const TSDb db = read_tsdb(cfg.out_dir / "tsdb");
    const SelectionResult sel = select_algorithm(db, cfg.selection, cfg.stage_seed("train"));

    for (const auto& [target, model] : sel.models)
        write_text_atomic(cfg.out_dir / "models" / ("model_" + target + ".json"),
                          regressor_to_json(model).dump(2) + "\n");
    write_csv(cfg.out_dir / "models" / "selection_report.csv", selection_report_table(sel));

    nlohmann::ordered_json meta;
    meta["selected_algorithm"] = algorithm_name(sel.tiers[sel.selected_tier].algorithm);
    meta["threshold_met"] = sel.threshold_met;
    meta["threshold"] = cfg.selection.threshold;
    meta["train_rows"] = sel.split.train_idx;
    meta["test_rows"] = sel.split.test_idx;
    write_text_atomic(cfg.out_dir / "models" / "selection.json", meta.dump(2) + "\n");
    write_provenance(cfg, "models", {"tsdb"});
    log << "train: selected " << algorithm_name(sel.tiers[sel.selected_tier].algorithm)
        << (sel.threshold_met ? "" : " (threshold unmet)") << "\n";
}

struct LoadedModels {
    std::vector<std::string> targets; // bus order, cct_min last
    std::vector<Regressor> models;
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> test_rows;
};

inline LoadedModels read_models(const PipelineConfig& cfg, const TSDb& db) {
    LoadedModels lm;
    for (const auto& target : db.target_names) {
        lm.targets.push_back(target);
        lm.models.push_back(regressor_from_json(
            nlohmann::json::parse(read_text(cfg.out_dir / "models" / ("model_" + target + ".json")))));
        if (lm.models.back().schema_hash != db.schema.hash())
            throw PipelineError("model for '" + target + "' was trained against a different schema");
    }
    const auto meta = nlohmann::json::parse(read_text(cfg.out_dir / "models" / "selection.json"));
    lm.train_rows = meta.at("train_rows").get<std::vector<std::size_t>>();
    lm.test_rows = meta.at("test_rows").get<std::vector<std::size_t>>();
    return lm;
}

inline void cmd_explain(const PipelineConfig& cfg, unsigned jobs = 1, std::ostream& log = std::cout) {
    require_stage(cfg, "tsdb");
    require_stage(cfg, "models");
    const TSDb db = read_tsdb(cfg.out_dir / "tsdb");
    const LoadedModels lm = read_models(cfg, db);
    const TSDb train_db = subset_rows(db, lm.train_rows);

    // Rows to explain: the training partition (optionally subsampled).
    std::vector<std::size_t> rows(train_db.rows());
    std::iota(rows.begin(), rows.end(), 0);
    if (cfg.explain_rows_max > 0 && rows.size() > cfg.explain_rows_max) {
        Rng rng = make_rng(derive_seed(cfg.stage_seed("explain"), "rows"));
        rows = random_permutation(rows.size(), rng);
        rows.resize(cfg.explain_rows_max);
        std::sort(rows.begin(), rows.end());
    }
    const TSDb explain_db = subset_rows(train_db, rows);
    const auto background = subsample_background(train_db.x, cfg.explain_background_max,
                                                 derive_seed(cfg.stage_seed("explain"), "background"));

    std::vector<std::string> feature_names;
    for (const auto& f : db.schema.features) feature_names.push_back(f.name);

    ShapCube cube;
    cube.locations = lm.targets;
    cube.scenario_ids = explain_db.scenario_ids;
    cube.feature_names = feature_names;
    cube.values.resize(lm.targets.size());
    cube.base_values.resize(lm.targets.size());

    ExplainerConfig ecfg;
    ecfg.method = ExplainerConfig::Method::Kernel;
    ecfg.kernel.budget = cfg.explain_budget;
    ecfg.kernel.seed = derive_seed(cfg.stage_seed("explain"), "kernel");
    parallel_for(lm.targets.size(), jobs, [&](std::size_t l) {
        const Regressor& model = lm.models[l];
        const GlobalShap g = explain_global([&](const std::vector<double>& x) { return model.predict(x); },
                                            explain_db.x, background, ecfg);
        cube.values[l] = g.values;
        cube.base_values[l] = g.base_value;
    });

    const auto dir = cfg.out_dir / "shap_cube";
    for (std::size_t l = 0; l < cube.locations.size(); ++l) {
        CsvTable t;
        t.header = feature_names;
        for (std::size_t r = 0; r < cube.values[l].rows(); ++r) {
            std::vector<std::string> row;
            for (std::size_t c = 0; c < cube.values[l].cols(); ++c)
                row.push_back(format_double(cube.values[l](r, c)));
            t.rows.push_back(std::move(row));
        }
        write_csv(dir / (cube.locations[l] + ".csv"), t);
    }
    {
        CsvTable t;
        t.header = {"location", "base_value"};
        for (std::size_t l = 0; l < cube.locations.size(); ++l)
            t.rows.push_back({cube.locations[l], format_double(cube.base_values[l])});
        write_csv(dir / "base_values.csv", t);
        nlohmann::ordered_json meta;
        meta["scenario_ids"] = cube.scenario_ids;
        meta["locations"] = cube.locations;
        write_text_atomic(dir / "cube.json", meta.dump(2) + "\n");
    }

    // Plot data: summaries, dependences for the configured VOIs, PFI on the
    // held-out partition.
    const TSDb test_db = subset_rows(db, lm.test_rows);
    std::string color_voi = cfg.dependence_color_voi;
    if (color_voi.empty()) color_voi = db.schema.has("res_mva_total") ? "res_mva_total" : feature_names[0];
    for (std::size_t l = 0; l < cube.locations.size(); ++l) {
        const auto& loc = cube.locations[l];
        const auto top = summary_data(cube.values[l], explain_db.x, feature_names,
                                      std::min<std::size_t>(cfg.report_top_k, feature_names.size()));
        CsvTable st;
        st.header = {"rank", "feature", "mean_abs_phi"};
        for (std::size_t k = 0; k < top.size(); ++k)
            st.rows.push_back({std::to_string(k + 1), top[k].feature, format_double(top[k].mean_abs_phi)});
        write_csv(dir / ("summary_" + loc + ".csv"), st);

        for (const auto& voi : cfg.trend_vois) {
            const auto recs = dependence_data(cube.values[l], explain_db.x, feature_names, voi, color_voi);
            CsvTable dt;
            dt.header = {voi, "phi", color_voi};
            for (const auto& rec : recs)
                dt.rows.push_back({format_double(rec.x_value), format_double(rec.phi),
                                   format_double(rec.color_value)});
            write_csv(dir / ("dependence_" + loc + "_" + voi + ".csv"), dt);
        }

        const Regressor& model = lm.models[l];
        const PfiReport rep = pfi([&](const std::vector<double>& x) { return model.predict(x); },
                                  test_db.x, test_db.target(loc), cfg.pfi_repeats,
                                  derive_seed(cfg.stage_seed("explain"), "pfi:" + loc));
        CsvTable pt;
        pt.header = {"feature", "importance"};
        for (std::size_t i = 0; i < feature_names.size(); ++i)
            pt.rows.push_back({feature_names[i], format_double(rep.importance[i])});
        write_csv(dir / ("pfi_" + loc + ".csv"), pt);
    }
    write_provenance(cfg, "shap_cube", {"tsdb", "models"});
    log << "explain: cube " << cube.locations.size() << " x " << explain_db.rows()
        << " x " << feature_names.size() << "\n";
}

inline ShapCube read_shap_cube(const PipelineConfig& cfg) {
    const auto dir = cfg.out_dir / "shap_cube";
    const auto meta = nlohmann::json::parse(read_text(dir / "cube.json"));
    ShapCube cube;
    cube.locations = meta.at("locations").get<std::vector<std::string>>();
    cube.scenario_ids = meta.at("scenario_ids").get<std::vector<int>>();
    const CsvTable bv = read_csv(dir / "base_values.csv");
    for (const auto& row : bv.rows) cube.base_values.push_back(parse_double(row[1]));
    for (const auto& loc : cube.locations) {
        const CsvTable t = read_csv(dir / (loc + ".csv"));
        if (cube.feature_names.empty()) cube.feature_names = t.header;
        RealMatrix m(t.rows.size(), t.header.size());
        for (std::size_t r = 0; r < t.rows.size(); ++r)
            for (std::size_t c = 0; c < t.header.size(); ++c) m(r, c) = parse_double(t.rows[r][c]);
        cube.values.push_back(std::move(m));
    }
    return cube;
}

inline void cmd_trends(const PipelineConfig& cfg, unsigned /*jobs*/ = 1, std::ostream& log = std::cout) {
    require_stage(cfg, "tsdb");
    require_stage(cfg, "models");
    require_stage(cfg, "shap_cube");
    if (cfg.trend_vois.empty()) throw PipelineError("config: trends.vois is empty");
    const TSDb db = read_tsdb(cfg.out_dir / "tsdb");
    const ShapCube cube = read_shap_cube(cfg);

    // Align the database rows with the cube's scenario ids.
    std::vector<std::size_t> idx;
    for (int sid : cube.scenario_ids) {
        bool found = false;
        for (std::size_t i = 0; i < db.scenario_ids.size(); ++i)
            if (db.scenario_ids[i] == sid) {
                idx.push_back(i);
                found = true;
                break;
            }
        if (!found) throw PipelineError("trends: cube row " + std::to_string(sid) + " missing from tsdb");
    }
    const TSDb aligned = subset_rows(db, idx);
    for (const auto& voi : cfg.trend_vois) {
        const TrendReport rep = voi_trend(cube, aligned, voi);
        write_csv(cfg.out_dir / "trends" / ("trend_" + voi + ".csv"), trend_report_table(rep));
    }
    write_provenance(cfg, "trends", {"tsdb", "shap_cube"});
    log << "trends: " << cfg.trend_vois.size() << " VOIs\n";
}

inline void cmd_intervene(const PipelineConfig& cfg, unsigned jobs = 1, std::ostream& log = std::cout) {
    require_stage(cfg, "scenarios");
    require_stage(cfg, "cct");
    if (!cfg.rule) throw PipelineError("config: no intervention rule configured");
    const PowerNetwork net = load_and_check_case(cfg);
    const auto scenarios = read_scenarios(cfg);

    // Stored baseline CCTs at the target bus.
    const CsvTable cct = read_csv(cfg.out_dir / "cct" / "cct.csv");
    const std::size_t col = cct.column("cct_bus_" + cfg.intervention_bus);
    std::map<int, double> baseline;
    for (const auto& row : cct.rows)
        if (!row[col].empty()) baseline[static_cast<int>(parse_double(row[0]))] = parse_double(row[col]);

    const AppliedRule applied = apply_rule(net, scenarios, *cfg.rule);
    if (applied.affected_ids.empty()) throw PipelineError("intervene: rule affects no scenario");
    std::vector<Scenario> affected;
    for (int id : applied.affected_ids)
        for (const auto& sc : scenarios)
            if (sc.id == id) affected.push_back(sc);

    // Pair evaluations are independent; parallelize by pre-computing ruled
    // CCTs into slots, then reuse the sequential aggregation.
    std::vector<std::optional<double>> ruled(affected.size());
    parallel_for(affected.size(), jobs, [&](std::size_t i) {
        ruled[i] = pipeline_cct(net, applied.modified[i], cfg.intervention_bus, cfg.search, cfg.sim,
                                applied.p_max_cap_mw, applied.capped_machine);
    });
    InterventionResult res;
    res.target_bus = cfg.intervention_bus;
    res.rule = cfg.rule->describe();
    res.affected_count = affected.size();
    std::vector<double> base_vals, ruled_vals;
    for (std::size_t i = 0; i < affected.size(); ++i) {
        InterventionPair pair;
        pair.scenario_id = affected[i].id;
        const auto it = baseline.find(pair.scenario_id);
        if (it != baseline.end() && ruled[i]) {
            pair.baseline_cct = it->second;
            pair.ruled_cct = *ruled[i];
            pair.ok = true;
            base_vals.push_back(pair.baseline_cct);
            ruled_vals.push_back(pair.ruled_cct);
        }
        res.pairs.push_back(pair);
    }
    if (base_vals.empty()) throw PipelineError("intervene: no pair converged");
    res.evaluated_count = base_vals.size();
    res.baseline = distribution_stats(base_vals);
    res.ruled = distribution_stats(ruled_vals);
    res.delta_min = res.ruled.min - res.baseline.min;
    res.delta_median = res.ruled.median - res.baseline.median;
    res.delta_max = res.ruled.max - res.baseline.max;

    write_csv(cfg.out_dir / "report" /
                  ("intervention_" + res.rule + "_" + cfg.intervention_bus + ".csv"),
              intervention_table(res));
    write_provenance(cfg, "report_intervention", {"scenarios", "cct"});
    log << "intervene: median " << res.baseline.median << " -> " << res.ruled.median << " s over "
        << res.evaluated_count << " pairs\n";
}

inline void cmd_report(const PipelineConfig& cfg, unsigned /*jobs*/ = 1, std::ostream& log = std::cout) {
    require_stage(cfg, "scenarios");
    require_stage(cfg, "cct");
    require_stage(cfg, "tsdb");
    require_stage(cfg, "models");
    require_stage(cfg, "shap_cube");
    require_stage(cfg, "trends");

    const TSDb db = read_tsdb(cfg.out_dir / "tsdb");
    const auto scenarios = read_scenarios(cfg);
    const auto meta = nlohmann::json::parse(read_text(cfg.out_dir / "models" / "selection.json"));
    const CsvTable sel_table = read_csv(cfg.out_dir / "models" / "selection_report.csv");

    std::ostringstream rep;
    rep << "run summary\n";
    rep << "===========\n";
    rep << "config hash: " << hash_hex(cfg.config_hash) << "\n";
    rep << "scenarios generated: " << scenarios.size() << "\n";
    rep << "database rows (converged): " << db.rows() << "\n";
    rep << "features: " << db.schema.size() << "\n";
    rep << "targets: ";
    for (const auto& t : db.target_names) rep << t << " ";
    rep << "\n\n";

    rep << "cct distribution per target (s)\n";
    for (const auto& t : db.target_names) {
        const auto stats = distribution_stats(db.target(t));
        rep << "  " << t << ": min " << format_double(stats.min) << ", median "
            << format_double(stats.median) << ", max " << format_double(stats.max) << "\n";
    }
    rep << "\nmodel selection (metric rows x algorithm tiers)\n";
    for (const auto& h : sel_table.header) rep << h << "\t";
    rep << "\n";
    for (const auto& row : sel_table.rows) {
        for (const auto& cell : row) rep << cell << "\t";
        rep << "\n";
    }
    rep << "selected: " << meta.at("selected_algorithm").get<std::string>()
        << (meta.at("threshold_met").get<bool>() ? "" : " [threshold unmet]") << "\n\n";

    rep << "top features by mean |phi| per location\n";
    for (const auto& t : db.target_names) {
        const CsvTable st = read_csv(cfg.out_dir / "shap_cube" / ("summary_" + t + ".csv"));
        rep << "  " << t << ":";
        for (std::size_t i = 0; i < std::min<std::size_t>(5, st.rows.size()); ++i)
            rep << " " << st.rows[i][1];
        rep << "\n";
    }
    rep << "\ntrend tables\n";
    for (const auto& voi : cfg.trend_vois) {
        rep << "  voi " << voi << " (location, covariance)\n";
        const CsvTable tt = read_csv(cfg.out_dir / "trends" / ("trend_" + voi + ".csv"));
        for (const auto& row : tt.rows) rep << "    " << row[0] << ", " << row[1] << "\n";
    }
    write_text_atomic(cfg.out_dir / "report" / "report.txt", rep.str());
    write_csv(cfg.out_dir / "report" / "metrics_table.csv", sel_table);
    write_provenance(cfg, "report", {"scenarios", "cct", "tsdb", "models", "shap_cube", "trends"});
    log << "report: written to " << (cfg.out_dir / "report").string() << "\n";
}

// Trajectory dump helper for debugging and plots.
inline void write_trajectory_csv(const DynamicModel& model, const SimResult& sim,
                                 const std::filesystem::path& path) {
    CsvTable t;
    t.header.push_back("t");
    for (const auto& id : model.machine_ids) t.header.push_back("delta_" + id);
    for (std::size_t s = 0; s < sim.time.size(); ++s) {
        std::vector<std::string> row{format_double(sim.time[s])};
        for (std::size_t i = 0; i < model.machine_ids.size(); ++i)
            row.push_back(format_double(sim.delta[i][s]));
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

} // namespace stabscope
