#pragma once

// Newton-Raphson AC power flow in polar form over the dispatched point.
// Loads scale uniformly with the scenario demand multiplier; machine voltage
// setpoints are held fixed across scenarios. Non-slack PV buses switch to PQ
// when their reactive limits bind.

#include <map>
#include <string>
#include <vector>

#include "stabscope/admittance.hpp"
#include "stabscope/dispatch.hpp"
#include "stabscope/linalg.hpp"
#include "stabscope/network.hpp"
#include "stabscope/scenario.hpp"

namespace stabscope {

struct PowerFlowConfig {
    double tolerance = 1e-8; // p.u. max |dS|
    int max_iterations = 20;
    bool enforce_q_limits = true;
};

struct BranchFlow {
    double p_from = 0.0; // MW into the branch at the from end
    double p_to = 0.0;
    double q_from = 0.0; // MVAr
    double q_to = 0.0;
};

struct OperatingPoint {
    int scenario_id = -1;
    std::vector<std::string> bus_ids;
    std::vector<double> v_mag; // p.u.
    std::vector<double> v_ang; // rad
    std::map<std::string, double> sg_p;  // MW
    std::map<std::string, double> sg_q;  // MVAr
    std::map<std::string, double> res_p; // MW
    std::map<std::string, double> res_q; // MVAr
    std::vector<BranchFlow> branch_flows;
    bool converged = false;
    double mismatch = 0.0;
    int iterations = 0;

    Complex voltage(std::size_t i) const { return std::polar(v_mag[i], v_ang[i]); }
    Complex voltage_of(const PowerNetwork& net, const std::string& bus) const {
        return voltage(net.bus_index(bus));
    }
};

namespace pfdetail {

struct BusSpec {
    BusType type;
    double p = 0.0; // p.u. net injection target
    double q = 0.0;
    double v_set = 1.0;
};

inline void newton_solve(const ComplexMatrix& y, std::vector<BusSpec>& spec,
                         std::vector<double>& vm, std::vector<double>& va,
                         const PowerFlowConfig& cfg, bool& converged, double& worst, int& iters) {
    const std::size_t n = spec.size();
    std::vector<double> g(n * n), b(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            g[i * n + j] = y(i, j).real();
            b[i * n + j] = y(i, j).imag();
        }

    auto injections = [&](std::vector<double>& p, std::vector<double>& q) {
        for (std::size_t i = 0; i < n; ++i) {
            double pi = 0.0, qi = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double th = va[i] - va[j];
                const double c = std::cos(th), s = std::sin(th);
                pi += vm[j] * (g[i * n + j] * c + b[i * n + j] * s);
                qi += vm[j] * (g[i * n + j] * s - b[i * n + j] * c);
            }
            p[i] = vm[i] * pi;
            q[i] = vm[i] * qi;
        }
    };

    std::vector<std::size_t> ang_vars, mag_vars;
    for (std::size_t i = 0; i < n; ++i) {
        if (spec[i].type != BusType::Slack) ang_vars.push_back(i);
        if (spec[i].type == BusType::PQ) mag_vars.push_back(i);
    }
    const std::size_t nv = ang_vars.size() + mag_vars.size();

    std::vector<double> p(n), q(n);
    converged = false;
    worst = 0.0;
    iters = 0;
    for (int it = 0; it <= cfg.max_iterations; ++it) {
        injections(p, q);
        std::vector<double> rhs(nv, 0.0);
        worst = 0.0;
        for (std::size_t k = 0; k < ang_vars.size(); ++k) {
            const std::size_t i = ang_vars[k];
            rhs[k] = spec[i].p - p[i];
        }
        for (std::size_t k = 0; k < mag_vars.size(); ++k) {
            const std::size_t i = mag_vars[k];
            rhs[ang_vars.size() + k] = spec[i].q - q[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double dp = spec[i].type != BusType::Slack ? spec[i].p - p[i] : 0.0;
            const double dq = spec[i].type == BusType::PQ ? spec[i].q - q[i] : 0.0;
            worst = std::max(worst, std::hypot(dp, dq));
        }
        iters = it;
        if (worst < cfg.tolerance) { converged = true; return; }
        if (it == cfg.max_iterations) return;

        RealMatrix jac(nv, nv);
        for (std::size_t rk = 0; rk < ang_vars.size(); ++rk) {
            const std::size_t i = ang_vars[rk];
            for (std::size_t ck = 0; ck < ang_vars.size(); ++ck) {
                const std::size_t j = ang_vars[ck];
                if (i == j) {
                    jac(rk, ck) = -q[i] - b[i * n + i] * vm[i] * vm[i];
                } else {
                    const double th = va[i] - va[j];
                    jac(rk, ck) = vm[i] * vm[j] * (g[i * n + j] * std::sin(th) - b[i * n + j] * std::cos(th));
                }
            }
            for (std::size_t ck = 0; ck < mag_vars.size(); ++ck) {
                const std::size_t j = mag_vars[ck];
                if (i == j) {
                    jac(rk, ang_vars.size() + ck) = p[i] / vm[i] + g[i * n + i] * vm[i];
                } else {
                    const double th = va[i] - va[j];
                    jac(rk, ang_vars.size() + ck) = vm[i] * (g[i * n + j] * std::cos(th) + b[i * n + j] * std::sin(th));
                }
            }
        }
        for (std::size_t rk = 0; rk < mag_vars.size(); ++rk) {
            const std::size_t i = mag_vars[rk];
            for (std::size_t ck = 0; ck < ang_vars.size(); ++ck) {
                const std::size_t j = ang_vars[ck];
                if (i == j) {
                    jac(ang_vars.size() + rk, ck) = p[i] - g[i * n + i] * vm[i] * vm[i];
                } else {
                    const double th = va[i] - va[j];
                    jac(ang_vars.size() + rk, ck) = -vm[i] * vm[j] * (g[i * n + j] * std::cos(th) + b[i * n + j] * std::sin(th));
                }
            }
            for (std::size_t ck = 0; ck < mag_vars.size(); ++ck) {
                const std::size_t j = mag_vars[ck];
                if (i == j) {
                    jac(ang_vars.size() + rk, ang_vars.size() + ck) = q[i] / vm[i] - b[i * n + i] * vm[i];
                } else {
                    const double th = va[i] - va[j];
                    jac(ang_vars.size() + rk, ang_vars.size() + ck) = vm[i] * (g[i * n + j] * std::sin(th) - b[i * n + j] * std::cos(th));
                }
            }
        }

        std::vector<double> dx;
        try {
            dx = solve(jac, rhs);
        } catch (const std::runtime_error&) {
            return; // singular Jacobian: report non-convergence
        }
        for (std::size_t k = 0; k < ang_vars.size(); ++k) va[ang_vars[k]] += dx[k];
        for (std::size_t k = 0; k < mag_vars.size(); ++k) vm[mag_vars[k]] += dx[ang_vars.size() + k];
        for (std::size_t i = 0; i < n; ++i)
            if (vm[i] < 0.05) return; // collapsed voltage, hopeless point
    }
}

} // namespace pfdetail

inline OperatingPoint solve_powerflow(const PowerNetwork& net, const Scenario& sc,
                                      const DispatchResult& disp,
                                      const PowerFlowConfig& cfg = {}) {
    OperatingPoint op;
    op.scenario_id = sc.id;
    for (const auto& b : net.buses) op.bus_ids.push_back(b.id);
    const std::size_t n = net.buses.size();
    op.v_mag.assign(n, 1.0);
    op.v_ang.assign(n, 0.0);
    if (!disp.feasible) return op; // converged stays false

    const auto am = build_branch_admittance(net);

    std::vector<pfdetail::BusSpec> spec(n);
    for (std::size_t i = 0; i < n; ++i) spec[i].type = net.buses[i].type;

    // Net scheduled injections in p.u.
    for (const auto& l : net.loads) {
        const std::size_t i = net.bus_index(l.bus);
        spec[i].p -= l.p_base * sc.demand_mult / net.base_mva;
        spec[i].q -= l.q_base * sc.demand_mult / net.base_mva;
    }
    for (const auto& r : net.res_units) {
        const auto it = disp.res_p.find(r.id);
        if (it == disp.res_p.end()) continue;
        spec[net.bus_index(r.bus)].p += it->second / net.base_mva; // unity pf
    }
    for (const auto& m : net.machines) {
        const std::size_t i = net.bus_index(m.bus);
        if (!m.is_slack) spec[i].p += disp.sg_p.at(m.id) / net.base_mva;
        spec[i].v_set = m.v_set;
    }

    std::vector<double>& vm = op.v_mag;
    std::vector<double>& va = op.v_ang;
    for (std::size_t i = 0; i < n; ++i)
        if (spec[i].type != BusType::PQ) vm[i] = spec[i].v_set;

    // Machines indexed per bus for Q allocation and limit checks.
    std::map<std::size_t, std::vector<const SyncMachine*>> machines_at;
    for (const auto& m : net.machines) machines_at[net.bus_index(m.bus)].push_back(&m);

    bool converged = false;
    double worst = 0.0;
    int iters = 0;
    const int max_q_rounds = 8;
    for (int round = 0; round < max_q_rounds; ++round) {
        pfdetail::newton_solve(am.y, spec, vm, va, cfg, converged, worst, iters);
        op.iterations += iters;
        if (!converged || !cfg.enforce_q_limits) break;

        // Reactive limit check at non-slack PV buses; pin violators at the
        // limit and drop them to PQ.
        bool switched = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (spec[i].type != BusType::PV) continue;
            const auto mit = machines_at.find(i);
            if (mit == machines_at.end()) continue;
            double q_min = 0.0, q_max = 0.0;
            for (const auto* m : mit->second) {
                const auto eff = effective_machine(*m, sc);
                q_min += eff.q_min;
                q_max += eff.q_max;
            }
            // Machine Q = bus injection + local load - local RES Q (RES q=0).
            Complex s_inj{};
            const Complex vi = std::polar(vm[i], va[i]);
            Complex acc{};
            for (std::size_t j = 0; j < n; ++j) acc += am.y(i, j) * std::polar(vm[j], va[j]);
            s_inj = vi * std::conj(acc);
            double q_load = 0.0;
            for (const auto& l : net.loads)
                if (net.bus_index(l.bus) == i) q_load += l.q_base * sc.demand_mult / net.base_mva;
            const double q_gen = s_inj.imag() + q_load;
            const double lo = q_min / net.base_mva, hi = q_max / net.base_mva;
            if (q_gen > hi + 1e-9 || q_gen < lo - 1e-9) {
                spec[i].type = BusType::PQ;
                spec[i].q = (q_gen > hi ? hi : lo) - q_load;
                switched = true;
            }
        }
        if (!switched) break;
    }
    op.converged = converged && worst < cfg.tolerance;
    op.mismatch = worst;

    // Recover machine and RES outputs from the solution.
    std::vector<Complex> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::polar(vm[i], va[i]);
    for (const auto& r : net.res_units) {
        op.res_p[r.id] = disp.res_p.count(r.id) ? disp.res_p.at(r.id) : 0.0;
        op.res_q[r.id] = 0.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto mit = machines_at.find(i);
        if (mit == machines_at.end()) continue;
        Complex acc{};
        for (std::size_t j = 0; j < n; ++j) acc += am.y(i, j) * v[j];
        const Complex s_inj = v[i] * std::conj(acc); // p.u. net injection
        double p_load = 0.0, q_load = 0.0, p_res = 0.0;
        for (const auto& l : net.loads)
            if (net.bus_index(l.bus) == i) {
                p_load += l.p_base * sc.demand_mult;
                q_load += l.q_base * sc.demand_mult;
            }
        for (const auto& r : net.res_units)
            if (net.bus_index(r.bus) == i) p_res += op.res_p.at(r.id);
        const double p_gen = s_inj.real() * net.base_mva + p_load - p_res;
        const double q_gen = s_inj.imag() * net.base_mva + q_load;
        // Allocate across co-located machines proportional to effective rating.
        double rating_sum = 0.0;
        for (const auto* m : mit->second) rating_sum += effective_machine(*m, sc).mva_rating;
        for (const auto* m : mit->second) {
            const double w = effective_machine(*m, sc).mva_rating / rating_sum;
            op.sg_p[m->id] = p_gen * w;
            op.sg_q[m->id] = q_gen * w;
        }
    }

    // Branch flows at both ends.
    op.branch_flows.resize(net.branches.size());
    for (std::size_t k = 0; k < net.branches.size(); ++k) {
        const auto& br = net.branches[k];
        const std::size_t f = net.bus_index(br.from);
        const std::size_t t = net.bus_index(br.to);
        const Complex ys = 1.0 / Complex(br.r, br.x);
        const Complex ysh(0.0, br.b_shunt / 2.0);
        const double a = br.tap;
        const Complex i_f = (ys + ysh) / (a * a) * v[f] - ys / a * v[t];
        const Complex i_t = (ys + ysh) * v[t] - ys / a * v[f];
        const Complex s_f = v[f] * std::conj(i_f) * net.base_mva;
        const Complex s_t = v[t] * std::conj(i_t) * net.base_mva;
        op.branch_flows[k] = {s_f.real(), s_t.real(), s_f.imag(), s_t.imag()};
    }
    return op;
}

// Bus admittance matrix for dynamic studies: branch elements plus every load
// folded in as a constant admittance at its solved voltage.
inline AdmittanceMatrix build_admittance(const PowerNetwork& net, double demand_mult,
                                         const OperatingPoint& op) {
    if (!op.converged) throw std::runtime_error("build_admittance: operating point not converged");
    AdmittanceMatrix am = build_branch_admittance(net);
    for (const auto& l : net.loads) {
        const Complex s(l.p_base * demand_mult / net.base_mva,
                        l.q_base * demand_mult / net.base_mva);
        add_load_admittance(am, l.bus, s, op.voltage_of(net, l.bus));
    }
    return am;
}

// Classical-model initialization: internal EMF behind the transient reactance
// from the solved terminal conditions. Returns (|E|, angle) in p.u. / rad.
inline std::pair<double, double> internal_emf(const PowerNetwork& net, const OperatingPoint& op,
                                              const SyncMachine& m, const Scenario& sc) {
    const auto eff = effective_machine(m, sc);
    if (eff.units_online < 1 || eff.mva_rating <= 0.0)
        throw std::runtime_error("internal_emf: machine '" + m.id + "' offline");
    const Complex v = op.voltage_of(net, m.bus);
    const Complex s(op.sg_p.at(m.id) / net.base_mva, op.sg_q.at(m.id) / net.base_mva);
    const Complex i = std::conj(s / v);
    const double xd_sys = m.xd_prime * net.base_mva / eff.mva_rating;
    const Complex e = v + Complex(0.0, xd_sys) * i;
    return {std::abs(e), std::arg(e)};
}

// System-base machine constants under a scenario.
inline double machine_h_system_base(const PowerNetwork& net, const SyncMachine& m, const Scenario& sc) {
    return m.h * effective_machine(m, sc).mva_rating / net.base_mva;
}

inline double machine_d_system_base(const PowerNetwork& net, const SyncMachine& m, const Scenario& sc) {
    return m.d * effective_machine(m, sc).mva_rating / net.base_mva;
}

inline double machine_xd_system_base(const PowerNetwork& net, const SyncMachine& m, const Scenario& sc) {
    return m.xd_prime * net.base_mva / effective_machine(m, sc).mva_rating;
}

} // namespace stabscope
