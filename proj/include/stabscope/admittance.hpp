#pragma once

// Bus admittance matrix construction, bolted-fault application and Kron
// reduction. Nodes are tracked by string id so generator internal nodes can
// be appended next to bus nodes before reduction.

#include <algorithm>
#include <string>
#include <vector>

#include "stabscope/linalg.hpp"
#include "stabscope/network.hpp"

namespace stabscope {

struct AdmittanceMatrix {
    std::vector<std::string> nodes;
    ComplexMatrix y;

    std::size_t index(const std::string& node) const {
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i] == node) return i;
        throw std::runtime_error("admittance: unknown node '" + node + "'");
    }

    bool has_node(const std::string& node) const {
        return std::find(nodes.begin(), nodes.end(), node) != nodes.end();
    }
};

// Branch-only admittance matrix (series elements, charging, taps); loads and
// machines are folded in by the callers that know the operating point.
inline AdmittanceMatrix build_branch_admittance(const PowerNetwork& net) {
    AdmittanceMatrix am;
    am.nodes.reserve(net.buses.size());
    for (const auto& b : net.buses) am.nodes.push_back(b.id);
    am.y = ComplexMatrix(am.nodes.size(), am.nodes.size());

    for (const auto& br : net.branches) {
        if (br.x == 0.0) throw std::runtime_error("degenerate branch (x = 0): " + br.from + "-" + br.to);
        const std::size_t f = am.index(br.from);
        const std::size_t t = am.index(br.to);
        const Complex ys = 1.0 / Complex(br.r, br.x);
        const Complex ysh(0.0, br.b_shunt / 2.0);
        const double a = br.tap;
        am.y(f, f) += (ys + ysh) / (a * a);
        am.y(t, t) += ys + ysh;
        am.y(f, t) -= ys / a;
        am.y(t, f) -= ys / a;
    }
    return am;
}

// Load fold-in: y_L = conj(S_L) / |V|^2 at the solved voltage.
inline void add_load_admittance(AdmittanceMatrix& am, const std::string& bus, Complex s_load_pu,
                                Complex v_solved) {
    const double vm2 = std::norm(v_solved);
    if (vm2 <= 0.0) throw std::runtime_error("load fold-in at zero voltage on bus " + bus);
    am.y(am.index(bus), am.index(bus)) += std::conj(s_load_pu) / vm2;
}

// Grounds the faulted node: row and column removed, equivalent to V = 0 there.
inline AdmittanceMatrix apply_fault(const AdmittanceMatrix& am, const std::string& fault_bus) {
    const std::size_t k = am.index(fault_bus);
    AdmittanceMatrix out;
    out.nodes.reserve(am.nodes.size() - 1);
    for (std::size_t i = 0; i < am.nodes.size(); ++i)
        if (i != k) out.nodes.push_back(am.nodes[i]);
    out.y = ComplexMatrix(out.nodes.size(), out.nodes.size());
    std::size_t r = 0;
    for (std::size_t i = 0; i < am.nodes.size(); ++i) {
        if (i == k) continue;
        std::size_t c = 0;
        for (std::size_t j = 0; j < am.nodes.size(); ++j) {
            if (j == k) continue;
            out.y(r, c) = am.y(i, j);
            ++c;
        }
        ++r;
    }
    return out;
}

// Y_red = Y_rr - Y_re * Y_ee^-1 * Y_er over the retained node set. Retained
// node order follows the order given by `retained`.
inline AdmittanceMatrix kron_reduce(const AdmittanceMatrix& am, const std::vector<std::string>& retained) {
    std::vector<std::size_t> r_idx;
    r_idx.reserve(retained.size());
    for (const auto& n : retained) r_idx.push_back(am.index(n));

    std::vector<std::size_t> e_idx;
    for (std::size_t i = 0; i < am.nodes.size(); ++i)
        if (std::find(r_idx.begin(), r_idx.end(), i) == r_idx.end()) e_idx.push_back(i);

    AdmittanceMatrix out;
    out.nodes = retained;
    const std::size_t nr = r_idx.size();
    const std::size_t ne = e_idx.size();
    out.y = ComplexMatrix(nr, nr);
    for (std::size_t i = 0; i < nr; ++i)
        for (std::size_t j = 0; j < nr; ++j)
            out.y(i, j) = am.y(r_idx[i], r_idx[j]);
    if (ne == 0) return out;

    ComplexMatrix yee(ne, ne), yer(ne, nr);
    for (std::size_t i = 0; i < ne; ++i) {
        for (std::size_t j = 0; j < ne; ++j) yee(i, j) = am.y(e_idx[i], e_idx[j]);
        for (std::size_t j = 0; j < nr; ++j) yer(i, j) = am.y(e_idx[i], r_idx[j]);
    }
    ComplexMatrix x;
    try {
        x = solve_multi(yee, yer); // Y_ee^-1 * Y_er
    } catch (const std::runtime_error&) {
        throw std::runtime_error("kron_reduce: singular eliminated block");
    }
    for (std::size_t i = 0; i < nr; ++i)
        for (std::size_t j = 0; j < nr; ++j) {
            Complex acc{};
            for (std::size_t k = 0; k < ne; ++k) acc += am.y(r_idx[i], e_idx[k]) * x(k, j);
            out.y(i, j) -= acc;
        }
    return out;
}

// Reduces a current-injection vector alongside the matrix:
// I_red = I_r - Y_re * Y_ee^-1 * I_e. Needed when eliminated nodes carry
// Norton sources (RES units held at their pre-fault output).
inline std::vector<Complex> kron_reduce_injections(const AdmittanceMatrix& am,
                                                   const std::vector<std::string>& retained,
                                                   const std::vector<Complex>& injections) {
    if (injections.size() != am.nodes.size())
        throw std::invalid_argument("kron_reduce_injections: size mismatch");
    std::vector<std::size_t> r_idx;
    for (const auto& n : retained) r_idx.push_back(am.index(n));
    std::vector<std::size_t> e_idx;
    for (std::size_t i = 0; i < am.nodes.size(); ++i)
        if (std::find(r_idx.begin(), r_idx.end(), i) == r_idx.end()) e_idx.push_back(i);

    std::vector<Complex> out(r_idx.size());
    for (std::size_t i = 0; i < r_idx.size(); ++i) out[i] = injections[r_idx[i]];
    if (e_idx.empty()) return out;

    ComplexMatrix yee(e_idx.size(), e_idx.size());
    std::vector<Complex> ie(e_idx.size());
    for (std::size_t i = 0; i < e_idx.size(); ++i) {
        ie[i] = injections[e_idx[i]];
        for (std::size_t j = 0; j < e_idx.size(); ++j) yee(i, j) = am.y(e_idx[i], e_idx[j]);
    }
    const auto w = solve(yee, ie); // Y_ee^-1 * I_e
    for (std::size_t i = 0; i < r_idx.size(); ++i) {
        Complex acc{};
        for (std::size_t k = 0; k < e_idx.size(); ++k) acc += am.y(r_idx[i], e_idx[k]) * w[k];
        out[i] -= acc;
    }
    return out;
}

} // namespace stabscope
