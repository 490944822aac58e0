#pragma once

// Operational scenario generation. Scenarios are the Cartesian product of
// demand levels, SG displacement stages and RES scaling factor pairs, plus
// one displacement-free scenario per demand level.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stabscope/network.hpp"

namespace stabscope {

struct Scenario {
    int id = 0;
    double demand_mult = 1.0;
    std::optional<std::string> displaced_sg;
    int u = 4;           // remaining units, meaningful only when displaced_sg is set
    double s = 0.0;      // decoupling factor
    double r = 1.0;      // penetration factor
    std::map<std::string, double> res_mva; // res unit id -> MVA
};

struct ScenarioConfig {
    double demand_min = 0.6;
    double demand_max = 1.025;
    double demand_step = 0.025;
    std::vector<double> s_values{0.0, -0.05, 0.05};
    std::vector<double> r_values{1.0, 1.4};
    std::vector<std::string> displaceable_machines;
    std::map<std::string, std::string> res_siting; // area id -> res unit id
};

// Remaining-unit derating of the displaced machine.
inline double sg_mva_new(double sg_mva_old, int u) { return u * (sg_mva_old / 4.0); }

// RES capacity replacing the displaced units, before even round-up.
inline double res_mva_raw(double sg_mva_old, int u, double s, double r) {
    return r * ((5 - u) * sg_mva_old / 4.0 + s * sg_mva_old);
}

// Smallest even integer >= x; RES farms aggregate 2 MVA units.
inline double round_up_even(double x) {
    if (x <= 0.0) return 0.0;
    return 2.0 * std::ceil(x / 2.0);
}

inline std::vector<double> demand_levels(const ScenarioConfig& cfg) {
    if (cfg.demand_step <= 0.0) throw std::invalid_argument("scenario config: demand_step must be > 0");
    std::vector<double> levels;
    const int n = static_cast<int>(std::floor((cfg.demand_max - cfg.demand_min) / cfg.demand_step + 1e-9)) + 1;
    for (int i = 0; i < n; ++i) levels.push_back(cfg.demand_min + i * cfg.demand_step);
    return levels;
}

// Deterministic order: demand level, then the no-displacement scenario, then
// (machine, u, s, r) in config order with u ascending.
inline std::vector<Scenario> generate_scenarios(const PowerNetwork& net, const ScenarioConfig& cfg) {
    if (cfg.displaceable_machines.empty())
        throw std::invalid_argument("scenario config: no displaceable machines");
    for (const auto& id : cfg.displaceable_machines) {
        const auto& m = net.machine(id);
        if (m.is_slack) throw std::invalid_argument("scenario config: slack machine '" + id + "' cannot be displaced");
    }

    const auto levels = demand_levels(cfg);
    std::vector<Scenario> out;
    int next_id = 0;
    for (double d : levels) {
        Scenario base;
        base.id = next_id++;
        base.demand_mult = d;
        out.push_back(base);
        for (const auto& mid : cfg.displaceable_machines) {
            const auto& m = net.machine(mid);
            const std::string area = net.area_of_bus(m.bus);
            const auto sit = cfg.res_siting.find(area);
            if (sit == cfg.res_siting.end())
                throw std::invalid_argument("scenario config: no RES siting for area '" + area + "'");
            for (int u = 1; u <= 4; ++u) {
                for (double s : cfg.s_values) {
                    for (double r : cfg.r_values) {
                        Scenario sc;
                        sc.id = next_id++;
                        sc.demand_mult = d;
                        sc.displaced_sg = mid;
                        sc.u = u;
                        sc.s = s;
                        sc.r = r;
                        sc.res_mva[sit->second] = round_up_even(res_mva_raw(m.mva_rating, u, s, r));
                        out.push_back(std::move(sc));
                    }
                }
            }
        }
    }
    return out;
}

// Effective machine parameters under a scenario: the displaced machine keeps
// its per-unit dynamic data while rating, limits and inertia scale with the
// remaining units.
struct EffectiveMachine {
    double mva_rating;
    double p_max;
    double p_min;
    double q_max;
    double q_min;
    int units_online;
};

inline EffectiveMachine effective_machine(const SyncMachine& m, const Scenario& sc) {
    double f = 1.0;
    int units = m.n_units;
    if (sc.displaced_sg && *sc.displaced_sg == m.id) {
        f = static_cast<double>(sc.u) / static_cast<double>(m.n_units);
        units = sc.u;
    }
    return {m.mva_rating * f, m.p_max * f, m.p_min * f, m.q_max * f, m.q_min * f, units};
}

inline double scenario_res_mva(const Scenario& sc, const std::string& res_id) {
    const auto it = sc.res_mva.find(res_id);
    return it == sc.res_mva.end() ? 0.0 : it->second;
}

// --- serialization -----------------------------------------------------

inline nlohmann::ordered_json scenario_to_json(const Scenario& sc) {
    nlohmann::ordered_json j;
    j["id"] = sc.id;
    j["demand_mult"] = sc.demand_mult;
    if (sc.displaced_sg) {
        j["displaced_sg"] = *sc.displaced_sg;
        j["u"] = sc.u;
        j["s"] = sc.s;
        j["r"] = sc.r;
    }
    nlohmann::ordered_json res = nlohmann::ordered_json::object();
    for (const auto& [k, v] : sc.res_mva) res[k] = v;
    j["res_mva"] = res;
    return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
    Scenario sc;
    sc.id = j.at("id").get<int>();
    sc.demand_mult = j.at("demand_mult").get<double>();
    if (j.contains("displaced_sg")) {
        sc.displaced_sg = j.at("displaced_sg").get<std::string>();
        sc.u = j.at("u").get<int>();
        sc.s = j.at("s").get<double>();
        sc.r = j.at("r").get<double>();
    }
    if (j.contains("res_mva"))
        for (const auto& [k, v] : j.at("res_mva").items()) sc.res_mva[k] = v.get<double>();
    return sc;
}

inline ScenarioConfig scenario_config_from_json(const nlohmann::json& j) {
    ScenarioConfig cfg;
    cfg.demand_min = j.value("demand_min", cfg.demand_min);
    cfg.demand_max = j.value("demand_max", cfg.demand_max);
    cfg.demand_step = j.value("demand_step", cfg.demand_step);
    if (j.contains("s_values")) cfg.s_values = j.at("s_values").get<std::vector<double>>();
    if (j.contains("r_values")) cfg.r_values = j.at("r_values").get<std::vector<double>>();
    if (j.contains("displaceable_machines"))
        cfg.displaceable_machines = j.at("displaceable_machines").get<std::vector<std::string>>();
    if (j.contains("res_siting"))
        for (const auto& [k, v] : j.at("res_siting").items()) cfg.res_siting[k] = v.get<std::string>();
    return cfg;
}

} // namespace stabscope
