#pragma once

// Static network description and the JSON case loader. Electrical quantities
// are per-unit on the system base except machine MVA ratings and H (machine
// base), mirroring common case-file conventions.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "stabscope/io.hpp"

namespace stabscope {

enum class BusType { Slack, PV, PQ };

struct Bus {
    std::string id;
    double nominal_kv = 0.0;
    BusType type = BusType::PQ;
};

struct Branch {
    std::string from;
    std::string to;
    double r = 0.0;       // p.u. series resistance
    double x = 0.0;       // p.u. series reactance
    double b_shunt = 0.0; // p.u. total line charging
    double tap = 1.0;     // off-nominal ratio on the from side
};

struct CostPoly {
    double c2 = 0.0;
    double c1 = 0.0;
    double c0 = 0.0;
};

struct SyncMachine {
    std::string id;
    std::string bus;
    double mva_rating = 0.0; // MVA
    double h = 0.0;          // s, machine base
    double xd_prime = 0.0;   // p.u., machine base
    double d = 0.0;          // p.u. damping, machine base
    double p_max = 0.0;      // MW
    double p_min = 0.0;      // MW
    double q_max = 0.0;      // MVAr
    double q_min = 0.0;      // MVAr
    double v_set = 1.0;      // p.u.
    CostPoly cost;
    int n_units = 4;
    bool is_slack = false;
};

struct ResUnit {
    std::string id;
    std::string bus;
    double mva_rating = 0.0; // MVA; scenario-dependent
    double unit_size = 2.0;  // MVA per parallel turbine
    std::string area;
};

struct Load {
    std::string id;
    std::string bus;
    double p_base = 0.0; // MW at demand level 1.0
    double q_base = 0.0; // MVAr at demand level 1.0
};

struct Area {
    std::string id;
    std::vector<std::string> buses;
};

struct PowerNetwork {
    std::string name;
    double base_mva = 100.0;
    double base_freq_hz = 60.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<SyncMachine> machines;
    std::vector<ResUnit> res_units;
    std::vector<Load> loads;
    std::vector<Area> areas;

    std::size_t bus_index(const std::string& id) const {
        for (std::size_t i = 0; i < buses.size(); ++i)
            if (buses[i].id == id) return i;
        throw std::runtime_error("unknown bus: " + id);
    }

    const SyncMachine& machine(const std::string& id) const {
        for (const auto& m : machines)
            if (m.id == id) return m;
        throw std::runtime_error("unknown machine: " + id);
    }

    bool has_machine(const std::string& id) const {
        for (const auto& m : machines)
            if (m.id == id) return true;
        return false;
    }

    const std::string& area_of_bus(const std::string& bus) const {
        for (const auto& a : areas)
            for (const auto& b : a.buses)
                if (b == bus) return a.id;
        throw std::runtime_error("bus not in any area: " + bus);
    }

    const SyncMachine& slack_machine() const {
        for (const auto& m : machines)
            if (m.is_slack) return m;
        throw std::runtime_error("no slack machine");
    }

    double omega_s() const { return 2.0 * 3.14159265358979323846 * base_freq_hz; }
};

struct CaseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace casedetail {

inline void validate(const PowerNetwork& net) {
    auto fail = [](const std::string& msg) { throw CaseError("case validation: " + msg); };

    if (net.base_mva <= 0.0) fail("base_mva must be > 0");
    if (net.base_freq_hz <= 0.0) fail("base_freq_hz must be > 0");
    if (net.buses.empty()) fail("no buses");

    std::set<std::string> bus_ids;
    int slack_count = 0;
    for (const auto& b : net.buses) {
        if (!bus_ids.insert(b.id).second) fail("duplicate bus id '" + b.id + "'");
        if (b.type == BusType::Slack) ++slack_count;
    }
    if (slack_count != 1) fail("exactly one slack bus required, found " + std::to_string(slack_count));

    for (const auto& br : net.branches) {
        if (!bus_ids.count(br.from)) fail("branch endpoint '" + br.from + "' is not a declared bus");
        if (!bus_ids.count(br.to)) fail("branch endpoint '" + br.to + "' is not a declared bus");
        if (br.x == 0.0) fail("branch " + br.from + "-" + br.to + " has x = 0");
        if (br.tap <= 0.0) fail("branch " + br.from + "-" + br.to + " has tap <= 0");
    }

    std::set<std::string> machine_ids;
    int slack_machines = 0;
    for (const auto& m : net.machines) {
        if (!machine_ids.insert(m.id).second) fail("duplicate machine id '" + m.id + "'");
        if (!bus_ids.count(m.bus)) fail("machine '" + m.id + "' on undeclared bus '" + m.bus + "'");
        if (m.h <= 0.0) fail("machine '" + m.id + "' has h <= 0");
        if (m.xd_prime <= 0.0) fail("machine '" + m.id + "' has xd_prime <= 0");
        if (m.p_min > m.p_max) fail("machine '" + m.id + "' has p_min > p_max");
        if (m.n_units < 1) fail("machine '" + m.id + "' has n_units < 1");
        if (m.mva_rating <= 0.0) fail("machine '" + m.id + "' has mva_rating <= 0");
        if (m.is_slack) ++slack_machines;
    }
    if (!net.machines.empty() && slack_machines != 1)
        fail("exactly one slack machine required, found " + std::to_string(slack_machines));

    for (const auto& r : net.res_units) {
        if (!bus_ids.count(r.bus)) fail("res unit '" + r.id + "' on undeclared bus '" + r.bus + "'");
        if (r.mva_rating < 0.0) fail("res unit '" + r.id + "' has negative mva_rating");
    }
    for (const auto& l : net.loads) {
        if (!bus_ids.count(l.bus)) fail("load '" + l.id + "' on undeclared bus '" + l.bus + "'");
    }

    // each bus belongs to exactly one area
    std::map<std::string, int> area_hits;
    for (const auto& a : net.areas)
        for (const auto& b : a.buses) {
            if (!bus_ids.count(b)) fail("area '" + a.id + "' lists undeclared bus '" + b + "'");
            area_hits[b]++;
        }
    if (!net.areas.empty()) {
        for (const auto& b : net.buses) {
            const auto it = area_hits.find(b.id);
            if (it == area_hits.end()) fail("bus '" + b.id + "' belongs to no area");
            if (it->second != 1) fail("bus '" + b.id + "' belongs to multiple areas");
        }
    }
    for (const auto& r : net.res_units) {
        bool found = false;
        for (const auto& a : net.areas)
            if (a.id == r.area) found = true;
        if (!found && !net.areas.empty()) fail("res unit '" + r.id + "' references unknown area '" + r.area + "'");
    }
}

inline double jnum(const nlohmann::json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key)) throw CaseError("case parse: missing '" + std::string(key) + "' in " + ctx);
    if (!j[key].is_number()) throw CaseError("case parse: '" + std::string(key) + "' in " + ctx + " is not a number");
    return j[key].get<double>();
}

inline std::string jstr(const nlohmann::json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key)) throw CaseError("case parse: missing '" + std::string(key) + "' in " + ctx);
    if (!j[key].is_string()) throw CaseError("case parse: '" + std::string(key) + "' in " + ctx + " is not a string");
    return j[key].get<std::string>();
}

} // namespace casedetail

inline PowerNetwork parse_case(const nlohmann::json& j) {
    using casedetail::jnum;
    using casedetail::jstr;

    PowerNetwork net;
    net.name = j.value("name", "unnamed");
    net.base_mva = jnum(j, "base_mva", "case");
    net.base_freq_hz = jnum(j, "base_freq_hz", "case");

    for (const auto& jb : j.value("buses", nlohmann::json::array())) {
        Bus b;
        b.id = jstr(jb, "id", "bus");
        b.nominal_kv = jnum(jb, "nominal_kv", "bus " + b.id);
        const std::string t = jstr(jb, "type", "bus " + b.id);
        if (t == "slack") b.type = BusType::Slack;
        else if (t == "PV") b.type = BusType::PV;
        else if (t == "PQ") b.type = BusType::PQ;
        else throw CaseError("case parse: bus " + b.id + " has unknown type '" + t + "'");
        net.buses.push_back(std::move(b));
    }
    for (const auto& jb : j.value("branches", nlohmann::json::array())) {
        Branch br;
        br.from = jstr(jb, "from", "branch");
        br.to = jstr(jb, "to", "branch");
        const std::string ctx = "branch " + br.from + "-" + br.to;
        br.r = jnum(jb, "r", ctx);
        br.x = jnum(jb, "x", ctx);
        br.b_shunt = jb.value("b_shunt", 0.0);
        br.tap = jb.value("tap", 1.0);
        net.branches.push_back(std::move(br));
    }
    for (const auto& jm : j.value("machines", nlohmann::json::array())) {
        SyncMachine m;
        m.id = jstr(jm, "id", "machine");
        const std::string ctx = "machine " + m.id;
        m.bus = jstr(jm, "bus", ctx);
        m.mva_rating = jnum(jm, "mva_rating", ctx);
        m.h = jnum(jm, "h", ctx);
        m.xd_prime = jnum(jm, "xd_prime", ctx);
        m.d = jm.value("d", 0.0);
        m.p_max = jnum(jm, "p_max", ctx);
        m.p_min = jnum(jm, "p_min", ctx);
        m.q_max = jnum(jm, "q_max", ctx);
        m.q_min = jnum(jm, "q_min", ctx);
        m.v_set = jnum(jm, "v_set", ctx);
        if (jm.contains("cost")) {
            const auto& jc = jm["cost"];
            if (!jc.is_array() || jc.size() != 3)
                throw CaseError("case parse: " + ctx + " cost must be [c2, c1, c0]");
            m.cost = {jc[0].get<double>(), jc[1].get<double>(), jc[2].get<double>()};
        }
        m.n_units = jm.value("n_units", 4);
        m.is_slack = jm.value("is_slack", false);
        net.machines.push_back(std::move(m));
    }
    for (const auto& jr : j.value("res_units", nlohmann::json::array())) {
        ResUnit r;
        r.id = jstr(jr, "id", "res unit");
        r.bus = jstr(jr, "bus", "res unit " + r.id);
        r.mva_rating = jr.value("mva_rating", 0.0);
        r.unit_size = jr.value("unit_size", 2.0);
        r.area = jr.value("area", std::string{});
        net.res_units.push_back(std::move(r));
    }
    for (const auto& jl : j.value("loads", nlohmann::json::array())) {
        Load l;
        l.id = jstr(jl, "id", "load");
        l.bus = jstr(jl, "bus", "load " + l.id);
        l.p_base = jnum(jl, "p_base", "load " + l.id);
        l.q_base = jnum(jl, "q_base", "load " + l.id);
        net.loads.push_back(std::move(l));
    }
    for (const auto& ja : j.value("areas", nlohmann::json::array())) {
        Area a;
        a.id = jstr(ja, "id", "area");
        if (!ja.contains("buses") || !ja["buses"].is_array())
            throw CaseError("case parse: area " + a.id + " missing buses[]");
        for (const auto& b : ja["buses"]) a.buses.push_back(b.get<std::string>());
        net.areas.push_back(std::move(a));
    }

    casedetail::validate(net);
    return net;
}

inline PowerNetwork load_case(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw CaseError("case parse: " + path.string() + ": " + e.what());
    }
    return parse_case(j);
}

} // namespace stabscope
