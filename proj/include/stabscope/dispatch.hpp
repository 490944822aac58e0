#pragma once

// Merit-order economic dispatch: equal incremental cost (lambda) over the
// online machines with limits, found by bisection. RES runs at full scenario
// output with unity power factor; a flat 2% loss allowance is added and the
// slack machine closes the remaining balance inside the power flow.

#include <map>
#include <string>
#include <vector>

#include "stabscope/network.hpp"
#include "stabscope/scenario.hpp"

namespace stabscope {

struct DispatchResult {
    bool feasible = true;
    std::string infeasible_reason;
    std::map<std::string, double> sg_p;  // MW per machine
    std::map<std::string, double> res_p; // MW per res unit
    double lambda = 0.0;
};

namespace dispatchdetail {

struct Unit {
    std::string id;
    CostPoly cost;
    double p_min;
    double p_max;
};

inline double unit_output(const Unit& u, double lambda) {
    double p;
    if (u.cost.c2 > 1e-12) {
        p = (lambda - u.cost.c1) / (2.0 * u.cost.c2);
    } else {
        // Linear cost: a step at lambda = c1; the residual fix-up below
        // handles units sitting exactly on the margin.
        p = lambda >= u.cost.c1 ? u.p_max : u.p_min;
    }
    return std::min(u.p_max, std::max(u.p_min, p));
}

} // namespace dispatchdetail

inline DispatchResult dispatch(const PowerNetwork& net, const Scenario& sc,
                               double loss_allowance_frac = 0.02) {
    DispatchResult out;

    double res_total = 0.0;
    for (const auto& r : net.res_units) {
        const double p = scenario_res_mva(sc, r.id);
        out.res_p[r.id] = p;
        res_total += p;
    }

    double demand = 0.0;
    for (const auto& l : net.loads) demand += l.p_base * sc.demand_mult;
    const double sg_target = demand * (1.0 + loss_allowance_frac) - res_total;

    std::vector<dispatchdetail::Unit> units;
    for (const auto& m : net.machines) {
        const auto eff = effective_machine(m, sc);
        units.push_back({m.id, m.cost, eff.p_min, eff.p_max});
    }
    if (units.empty()) {
        out.feasible = false;
        out.infeasible_reason = "no machines";
        return out;
    }

    double p_min_sum = 0.0, p_max_sum = 0.0;
    for (const auto& u : units) { p_min_sum += u.p_min; p_max_sum += u.p_max; }
    if (sg_target > p_max_sum + 1e-9) {
        out.feasible = false;
        out.infeasible_reason = "demand exceeds dispatchable capacity";
        return out;
    }
    if (sg_target < p_min_sum - 1e-9) {
        out.feasible = false;
        out.infeasible_reason = "RES output exceeds demand minus minimum SG output";
        return out;
    }

    double lo = units[0].cost.c1, hi = units[0].cost.c1;
    for (const auto& u : units) {
        lo = std::min(lo, u.cost.c1 + 2.0 * u.cost.c2 * u.p_min);
        hi = std::max(hi, u.cost.c1 + 2.0 * u.cost.c2 * u.p_max);
    }
    lo -= 1.0;
    hi += 1.0;

    auto total_at = [&](double lambda) {
        double t = 0.0;
        for (const auto& u : units) t += dispatchdetail::unit_output(u, lambda);
        return t;
    };
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (total_at(mid) < sg_target) lo = mid;
        else hi = mid;
    }
    const double lambda = 0.5 * (lo + hi);
    out.lambda = lambda;

    double allocated = 0.0;
    for (const auto& u : units) {
        const double p = dispatchdetail::unit_output(u, lambda);
        out.sg_p[u.id] = p;
        allocated += p;
    }

    // Discontinuous (linear-cost) units can leave a residual at the converged
    // lambda; spread it over marginal units with headroom.
    double residual = sg_target - allocated;
    if (std::fabs(residual) > 1e-7) {
        for (auto& u : units) {
            if (std::fabs(residual) <= 1e-9) break;
            double& p = out.sg_p[u.id];
            const double room = residual > 0.0 ? u.p_max - p : u.p_min - p;
            const double take = std::fabs(residual) < std::fabs(room) ? residual : room;
            p += take;
            residual -= take;
        }
    }
    return out;
}

} // namespace stabscope
