#pragma once

// Classical multi-machine RMS simulation: swing equations over the Kron-
// reduced network, loss-of-synchronism detection on pairwise rotor angle
// separation, and the coarse/fine critical clearing time search.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "stabscope/admittance.hpp"
#include "stabscope/powerflow.hpp"

namespace stabscope {

struct DynamicModel {
    std::vector<std::string> machine_ids;
    std::vector<double> h;  // s, system base
    std::vector<double> d;  // p.u., system base
    std::vector<double> pm; // p.u. mechanical power
    std::vector<double> e;  // internal EMF magnitude, p.u.
    std::vector<double> delta0; // rad
    AdmittanceMatrix y_pre;   // reduced to internal nodes
    AdmittanceMatrix y_fault; // same, fault bus grounded first
    // Reduced Norton currents from RES units held at pre-fault output; zero
    // when the network carries no RES.
    std::vector<Complex> i_pre;
    std::vector<Complex> i_fault;
    double omega_s = 2.0 * 3.14159265358979323846 * 60.0;
};

struct SimConfig {
    double dt = 1e-3;            // s, fixed RK4 step
    double horizon_after_clear = 5.0; // s simulated beyond fault clearing
};

struct SimResult {
    std::vector<double> time;
    std::vector<std::vector<double>> delta; // [machine][step], rad
    bool stable = true;
    std::optional<double> los_time;
    double max_pairwise_sep = 0.0;
};

struct CctResult {
    std::string fault_bus;
    double cct = 0.0;
    bool capped = false;
    bool failed = false;
    std::string failure;
    int evaluations = 0;
};

struct CctSearchConfig {
    double coarse = 0.1;
    double fine = 0.01;
    double cap = 1.40;
};

namespace dyndetail {

// Pe_i = Re{ E_i * conj( (Y E)_i + I_i ) } with E_j = e_j * exp(j delta_j).
inline void electrical_power(const ComplexMatrix& y, const std::vector<Complex>& inj,
                             const std::vector<double>& e, const std::vector<double>& delta,
                             std::vector<double>& pe) {
    const std::size_t m = e.size();
    for (std::size_t i = 0; i < m; ++i) {
        const Complex ei = std::polar(e[i], delta[i]);
        Complex acc = inj.empty() ? Complex{} : inj[i];
        for (std::size_t j = 0; j < m; ++j) acc += y(i, j) * std::polar(e[j], delta[j]);
        pe[i] = (ei * std::conj(acc)).real();
    }
}

struct Derivs {
    const DynamicModel* model;
    const ComplexMatrix* y;
    const std::vector<Complex>* inj;
    mutable std::vector<double> pe;

    void operator()(const std::vector<double>& delta, const std::vector<double>& omega,
                    std::vector<double>& ddelta, std::vector<double>& domega) const {
        const std::size_t m = delta.size();
        electrical_power(*y, *inj, model->e, delta, pe);
        for (std::size_t i = 0; i < m; ++i) {
            ddelta[i] = omega[i];
            domega[i] = model->omega_s / (2.0 * model->h[i]) *
                        (model->pm[i] - pe[i] - model->d[i] * omega[i] / model->omega_s);
        }
    }
};

} // namespace dyndetail

// Fixed-step RK4 over [0, t_clear + horizon]; the network switches to the
// fault-on matrix at t = 0 and back to the pre-fault matrix at t = t_clear
// (self-clearing fault, so post-fault equals pre-fault). Stability means the
// largest pairwise |delta_i - delta_j| stays within pi over the whole run.
inline SimResult simulate(const DynamicModel& model, double t_clear, const SimConfig& cfg = {},
                          bool record_trajectories = false) {
    if (t_clear < 0.0) throw std::invalid_argument("simulate: t_clear < 0");
    const std::size_t m = model.machine_ids.size();
    const double t_end = t_clear + cfg.horizon_after_clear;
    const std::size_t steps = static_cast<std::size_t>(std::ceil(t_end / cfg.dt - 1e-12));

    SimResult res;
    std::vector<double> delta = model.delta0;
    std::vector<double> omega(m, 0.0);

    dyndetail::Derivs fault_f{&model, &model.y_fault.y, &model.i_fault, std::vector<double>(m)};
    dyndetail::Derivs post_f{&model, &model.y_pre.y, &model.i_pre, std::vector<double>(m)};

    std::vector<double> k1d(m), k1w(m), k2d(m), k2w(m), k3d(m), k3w(m), k4d(m), k4w(m);
    std::vector<double> td(m), tw(m);

    auto record = [&](double t) {
        if (!record_trajectories) return;
        res.time.push_back(t);
        if (res.delta.empty()) res.delta.resize(m);
        for (std::size_t i = 0; i < m; ++i) res.delta[i].push_back(delta[i]);
    };

    auto check_separation = [&](double t) -> bool {
        double sep = 0.0;
        bool finite = true;
        for (std::size_t i = 0; i < m; ++i) {
            if (!std::isfinite(delta[i]) || !std::isfinite(omega[i])) finite = false;
            for (std::size_t j = i + 1; j < m; ++j)
                sep = std::max(sep, std::fabs(delta[i] - delta[j]));
        }
        res.max_pairwise_sep = std::max(res.max_pairwise_sep, sep);
        if (!finite || sep > 3.14159265358979323846) {
            res.stable = false;
            if (!res.los_time) res.los_time = t;
            return false;
        }
        return true;
    };

    record(0.0);
    if (!check_separation(0.0)) return res;

    for (std::size_t step = 0; step < steps; ++step) {
        const double t = step * cfg.dt;
        const double dt = std::min(cfg.dt, t_end - t);
        // dt is fixed except possibly the last step closing the horizon.
        const bool fault_on = t < t_clear - 1e-12;
        const dyndetail::Derivs& f = fault_on ? fault_f : post_f;

        // Step splitting at the clearing instant keeps the switch exact.
        double h = dt;
        if (fault_on && t + dt > t_clear + 1e-12) h = t_clear - t;

        f(delta, omega, k1d, k1w);
        for (std::size_t i = 0; i < m; ++i) { td[i] = delta[i] + 0.5 * h * k1d[i]; tw[i] = omega[i] + 0.5 * h * k1w[i]; }
        f(td, tw, k2d, k2w);
        for (std::size_t i = 0; i < m; ++i) { td[i] = delta[i] + 0.5 * h * k2d[i]; tw[i] = omega[i] + 0.5 * h * k2w[i]; }
        f(td, tw, k3d, k3w);
        for (std::size_t i = 0; i < m; ++i) { td[i] = delta[i] + h * k3d[i]; tw[i] = omega[i] + h * k3w[i]; }
        f(td, tw, k4d, k4w);
        for (std::size_t i = 0; i < m; ++i) {
            delta[i] += h / 6.0 * (k1d[i] + 2.0 * k2d[i] + 2.0 * k3d[i] + k4d[i]);
            omega[i] += h / 6.0 * (k1w[i] + 2.0 * k2w[i] + 2.0 * k3w[i] + k4w[i]);
        }

        const double t_next = (h < dt) ? t + h : t + dt;
        record(t_next);
        if (!check_separation(t_next)) return res;
        if (h < dt) {
            // Finish the remainder of this nominal step on the post-fault
            // network so the time grid stays aligned.
            const double rem = dt - h;
            if (rem > 1e-12) {
                const dyndetail::Derivs& f2 = post_f;
                f2(delta, omega, k1d, k1w);
                for (std::size_t i = 0; i < m; ++i) { td[i] = delta[i] + 0.5 * rem * k1d[i]; tw[i] = omega[i] + 0.5 * rem * k1w[i]; }
                f2(td, tw, k2d, k2w);
                for (std::size_t i = 0; i < m; ++i) { td[i] = delta[i] + 0.5 * rem * k2d[i]; tw[i] = omega[i] + 0.5 * rem * k2w[i]; }
                f2(td, tw, k3d, k3w);
                for (std::size_t i = 0; i < m; ++i) { td[i] = delta[i] + rem * k3d[i]; tw[i] = omega[i] + rem * k3w[i]; }
                f2(td, tw, k4d, k4w);
                for (std::size_t i = 0; i < m; ++i) {
                    delta[i] += rem / 6.0 * (k1d[i] + 2.0 * k2d[i] + 2.0 * k3d[i] + k4d[i]);
                    omega[i] += rem / 6.0 * (k1w[i] + 2.0 * k2w[i] + 2.0 * k3w[i] + k4w[i]);
                }
                record(t + dt);
                if (!check_separation(t + dt)) return res;
            }
        }
    }
    return res;
}

// Assembles the reduced dynamic model for one fault location from a solved
// operating point: loads fold in as constant admittances at their solved
// voltage, RES units as Norton current sources at their pre-fault output,
// machines as EMFs behind transient reactance on appended internal nodes.
inline DynamicModel build_dynamic_model(const PowerNetwork& net, const Scenario& sc,
                                        const OperatingPoint& op, const std::string& fault_bus) {
    if (!op.converged) throw std::runtime_error("build_dynamic_model: operating point not converged");

    AdmittanceMatrix am = build_admittance(net, sc.demand_mult, op);

    // Norton currents for RES units at their solved output.
    std::vector<Complex> inj(am.nodes.size(), Complex{});
    for (const auto& r : net.res_units) {
        const double p = op.res_p.count(r.id) ? op.res_p.at(r.id) : 0.0;
        const double q = op.res_q.count(r.id) ? op.res_q.at(r.id) : 0.0;
        if (p == 0.0 && q == 0.0) continue;
        const Complex s(p / net.base_mva, q / net.base_mva);
        const Complex v = op.voltage_of(net, r.bus);
        inj[am.index(r.bus)] += std::conj(s / v);
    }

    DynamicModel model;
    model.omega_s = net.omega_s();

    // Append machine internal nodes.
    std::vector<std::string> internal_nodes;
    const std::size_t nb = am.nodes.size();
    const std::size_t nm = net.machines.size();
    AdmittanceMatrix full;
    full.nodes = am.nodes;
    for (const auto& m : net.machines) {
        full.nodes.push_back("emf:" + m.id);
        internal_nodes.push_back("emf:" + m.id);
    }
    full.y = ComplexMatrix(nb + nm, nb + nm);
    for (std::size_t i = 0; i < nb; ++i)
        for (std::size_t j = 0; j < nb; ++j) full.y(i, j) = am.y(i, j);
    for (std::size_t k = 0; k < nm; ++k) {
        const auto& m = net.machines[k];
        const double xd = machine_xd_system_base(net, m, sc);
        const Complex yg = 1.0 / Complex(0.0, xd);
        const std::size_t t = am.index(m.bus);
        const std::size_t g = nb + k;
        full.y(g, g) += yg;
        full.y(t, t) += yg;
        full.y(g, t) -= yg;
        full.y(t, g) -= yg;

        model.machine_ids.push_back(m.id);
        model.h.push_back(machine_h_system_base(net, m, sc));
        model.d.push_back(machine_d_system_base(net, m, sc));
        const auto [e, d0] = internal_emf(net, op, m, sc);
        model.e.push_back(e);
        model.delta0.push_back(d0);
    }
    std::vector<Complex> full_inj(nb + nm, Complex{});
    for (std::size_t i = 0; i < nb; ++i) full_inj[i] = inj[i];

    // kron_reduce_injections returns the equivalent external injection
    // I_r - Y_re Y_ee^-1 I_e; the machine stator current is
    // I = Y_red E + Y_re Y_ee^-1 I_e, so the model stores the negation.
    auto machine_side = [](std::vector<Complex> v) {
        for (auto& c : v) c = -c;
        return v;
    };
    model.y_pre = kron_reduce(full, internal_nodes);
    model.i_pre = machine_side(kron_reduce_injections(full, internal_nodes, full_inj));

    if (!full.has_node(fault_bus))
        throw std::runtime_error("build_dynamic_model: unknown fault bus '" + fault_bus + "'");
    const AdmittanceMatrix grounded = apply_fault(full, fault_bus);
    std::vector<Complex> grounded_inj;
    grounded_inj.reserve(grounded.nodes.size());
    for (const auto& node : grounded.nodes) grounded_inj.push_back(full_inj[full.index(node)]);
    model.y_fault = kron_reduce(grounded, internal_nodes);
    model.i_fault = machine_side(kron_reduce_injections(grounded, internal_nodes, grounded_inj));

    // Mechanical power balances the pre-fault electrical power at delta0.
    std::vector<double> pe(nm);
    dyndetail::electrical_power(model.y_pre.y, model.i_pre, model.e, model.delta0, pe);
    model.pm = pe;
    return model;
}

// Search mechanics over any stability predicate: coarse sweep until the first
// unstable duration, then fine refinement. Durations are k*fine quantized.
inline CctResult search_cct(const std::function<bool(double)>& stable_at, const CctSearchConfig& cfg = {},
                            const std::string& fault_bus = {}) {
    CctResult res;
    res.fault_bus = fault_bus;
    const long coarse_per_fine = std::lround(cfg.coarse / cfg.fine);
    const long cap_steps = std::lround(cfg.cap / cfg.fine);

    long first_unstable = -1;
    for (long k = coarse_per_fine; k <= cap_steps; k += coarse_per_fine) {
        ++res.evaluations;
        if (!stable_at(k * cfg.fine)) { first_unstable = k; break; }
    }
    if (first_unstable < 0) {
        res.cct = cap_steps * cfg.fine;
        res.capped = true;
        return res;
    }

    long last_stable = first_unstable - coarse_per_fine; // 0 means no fault held stable
    for (long k = last_stable + 1; k < first_unstable; ++k) {
        ++res.evaluations;
        if (!stable_at(k * cfg.fine)) break;
        last_stable = k;
    }
    res.cct = last_stable * cfg.fine;
    return res;
}

inline CctResult compute_cct(const PowerNetwork& net, const Scenario& sc, const OperatingPoint& op,
                             const std::string& fault_bus, const CctSearchConfig& search = {},
                             const SimConfig& sim_cfg = {}) {
    try {
        const DynamicModel model = build_dynamic_model(net, sc, op, fault_bus);
        return search_cct([&](double t) { return simulate(model, t, sim_cfg).stable; }, search, fault_bus);
    } catch (const std::exception& e) {
        CctResult res;
        res.fault_bus = fault_bus;
        res.failed = true;
        res.failure = e.what();
        return res;
    }
}

struct CctSurface {
    std::vector<CctResult> per_bus;
    double cct_min = 0.0;
    std::string argmin_bus;
};

// Minimum over the successful per-bus results; ties break toward the earliest
// entry (fault lists are kept in ascending bus order by the callers).
inline void select_cct_min(CctSurface& surf) {
    bool any = false;
    for (const auto& r : surf.per_bus) {
        if (r.failed) continue;
        if (!any || r.cct < surf.cct_min) {
            surf.cct_min = r.cct;
            surf.argmin_bus = r.fault_bus;
            any = true;
        }
    }
    if (!any) {
        surf.cct_min = std::numeric_limits<double>::quiet_NaN();
        surf.argmin_bus.clear();
    }
}

inline CctSurface compute_cct_surface(const PowerNetwork& net, const Scenario& sc,
                                      const OperatingPoint& op, const std::vector<std::string>& fault_buses,
                                      const CctSearchConfig& search = {}, const SimConfig& sim_cfg = {}) {
    if (fault_buses.empty()) throw std::invalid_argument("compute_cct_surface: no fault buses");
    CctSurface surf;
    for (const auto& bus : fault_buses)
        surf.per_bus.push_back(compute_cct(net, sc, op, bus, search, sim_cfg));
    select_cct_min(surf);
    return surf;
}

} // namespace stabscope
