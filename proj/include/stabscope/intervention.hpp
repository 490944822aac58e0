#pragma once

// Intervention harness: take an operational rule suggested by the SHAP
// analysis, re-run the physical pipeline on the scenarios the rule touches,
// and compare the CCT distributions at a target bus before and after.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stabscope/dynamics.hpp"
#include "stabscope/tsdb.hpp"

namespace stabscope {

struct Rule {
    enum class Kind { ForbidDisplacement, CapLoading } kind = Kind::ForbidDisplacement;
    std::string machine;
    double cap_percent = 100.0; // CapLoading only
    // ForbidDisplacement: recompute the scenario's RES capacity with all
    // units back online, or keep the capacity from the displaced scenario.
    bool recompute_res = true;

    std::string describe() const {
        if (kind == Kind::ForbidDisplacement) return "forbid_displacement_" + machine;
        return "cap_loading_" + machine + "_" + std::to_string(static_cast<int>(cap_percent));
    }
};

struct AppliedRule {
    std::vector<Scenario> modified;    // same ids as the affected originals
    std::vector<int> affected_ids;
    std::optional<double> p_max_cap_mw; // CapLoading: dispatch-time limit
    std::string capped_machine;
};

inline AppliedRule apply_rule(const PowerNetwork& net, const std::vector<Scenario>& scenarios,
                              const Rule& rule) {
    if (!net.has_machine(rule.machine))
        throw std::invalid_argument("apply_rule: unknown machine '" + rule.machine + "'");
    AppliedRule out;
    if (rule.kind == Rule::Kind::ForbidDisplacement) {
        const auto& m = net.machine(rule.machine);
        for (const auto& sc : scenarios) {
            if (!sc.displaced_sg || *sc.displaced_sg != rule.machine) continue;
            Scenario mod = sc;
            mod.u = m.n_units; // all units back online, rating unchanged
            if (rule.recompute_res) {
                for (auto& [res_id, mva] : mod.res_mva)
                    mva = round_up_even(res_mva_raw(m.mva_rating, m.n_units, sc.s, sc.r));
            }
            out.modified.push_back(std::move(mod));
            out.affected_ids.push_back(sc.id);
        }
    } else {
        const auto& m = net.machine(rule.machine);
        out.p_max_cap_mw = rule.cap_percent / 100.0 * m.p_max;
        out.capped_machine = rule.machine;
        for (const auto& sc : scenarios) {
            out.modified.push_back(sc);
            out.affected_ids.push_back(sc.id);
        }
    }
    return out;
}

struct DistStats {
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
    std::size_t n = 0;
};

// Type-7 (linear interpolation) quantile on a sorted sample.
inline double quantile_type7(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw std::invalid_argument("quantile: empty sample");
    if (sorted.size() == 1) return sorted[0];
    const double h = p * (static_cast<double>(sorted.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline DistStats distribution_stats(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    DistStats s;
    s.n = values.size();
    s.min = values.front();
    s.q1 = quantile_type7(values, 0.25);
    s.median = quantile_type7(values, 0.5);
    s.q3 = quantile_type7(values, 0.75);
    s.max = values.back();
    return s;
}

struct InterventionPair {
    int scenario_id = 0;
    double baseline_cct = 0.0;
    double ruled_cct = 0.0;
    bool ok = false;
};

struct InterventionResult {
    std::string target_bus;
    std::string rule;
    DistStats baseline;
    DistStats ruled;
    double delta_min = 0.0;
    double delta_median = 0.0;
    double delta_max = 0.0;
    std::size_t affected_count = 0;
    std::size_t evaluated_count = 0;
    std::vector<InterventionPair> pairs;
};

// Runs dispatch -> power flow -> CCT for one scenario, optionally under a
// dispatch-time active power cap on one machine.
inline std::optional<double> pipeline_cct(const PowerNetwork& net, const Scenario& sc,
                                          const std::string& fault_bus, const CctSearchConfig& search,
                                          const SimConfig& sim_cfg,
                                          const std::optional<double>& p_max_cap_mw = {},
                                          const std::string& capped_machine = {}) {
    PowerNetwork working = net;
    if (p_max_cap_mw) {
        for (auto& m : working.machines)
            if (m.id == capped_machine) m.p_max = std::min(m.p_max, *p_max_cap_mw);
    }
    const DispatchResult disp = dispatch(working, sc);
    if (!disp.feasible) return std::nullopt;
    const OperatingPoint op = solve_powerflow(working, sc, disp);
    if (!op.converged) return std::nullopt;
    const CctResult r = compute_cct(working, sc, op, fault_bus, search, sim_cfg);
    if (r.failed) return std::nullopt;
    return r.cct;
}

// `baseline_cct` carries the pipeline's stored CCTs keyed by scenario id so
// the comparison never drifts from the published database; missing entries
// are recomputed.
inline InterventionResult evaluate_intervention(const PowerNetwork& net,
                                                const std::vector<Scenario>& affected_baseline,
                                                const AppliedRule& applied,
                                                const std::string& target_bus,
                                                const std::map<int, double>& baseline_cct = {},
                                                const CctSearchConfig& search = {},
                                                const SimConfig& sim_cfg = {}) {
    if (affected_baseline.empty()) throw std::invalid_argument("evaluate_intervention: empty affected set");
    if (affected_baseline.size() != applied.modified.size())
        throw std::invalid_argument("evaluate_intervention: baseline/ruled scenario count mismatch");

    InterventionResult res;
    res.target_bus = target_bus;
    res.affected_count = affected_baseline.size();
    std::vector<double> base_vals, ruled_vals;
    for (std::size_t i = 0; i < affected_baseline.size(); ++i) {
        InterventionPair pair;
        pair.scenario_id = affected_baseline[i].id;
        std::optional<double> base;
        const auto it = baseline_cct.find(pair.scenario_id);
        if (it != baseline_cct.end()) base = it->second;
        else base = pipeline_cct(net, affected_baseline[i], target_bus, search, sim_cfg);
        const auto ruled = pipeline_cct(net, applied.modified[i], target_bus, search, sim_cfg,
                                        applied.p_max_cap_mw, applied.capped_machine);
        if (base && ruled) {
            pair.baseline_cct = *base;
            pair.ruled_cct = *ruled;
            pair.ok = true;
            base_vals.push_back(*base);
            ruled_vals.push_back(*ruled);
        }
        res.pairs.push_back(pair);
    }
    if (base_vals.empty())
        throw std::runtime_error("evaluate_intervention: no pair converged");
    res.evaluated_count = base_vals.size();
    res.baseline = distribution_stats(base_vals);
    res.ruled = distribution_stats(ruled_vals);
    res.delta_min = res.ruled.min - res.baseline.min;
    res.delta_median = res.ruled.median - res.baseline.median;
    res.delta_max = res.ruled.max - res.baseline.max;
    return res;
}

inline CsvTable intervention_table(const InterventionResult& r) {
    CsvTable t;
    t.header = {"scenario_id", "baseline_cct", "ruled_cct", "converged"};
    for (const auto& p : r.pairs)
        t.rows.push_back({std::to_string(p.scenario_id), format_double(p.baseline_cct),
                          format_double(p.ruled_cct), p.ok ? "yes" : "no"});
    auto stat_row = [&](const std::string& name, double b, double rl) {
        t.rows.push_back({"stat:" + name, format_double(b), format_double(rl), ""});
    };
    stat_row("min", r.baseline.min, r.ruled.min);
    stat_row("q1", r.baseline.q1, r.ruled.q1);
    stat_row("median", r.baseline.median, r.ruled.median);
    stat_row("q3", r.baseline.q3, r.ruled.q3);
    stat_row("max", r.baseline.max, r.ruled.max);
    return t;
}

} // namespace stabscope
