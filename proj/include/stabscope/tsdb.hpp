#pragma once

// Transient stability database: Table-driven pre-fault feature extraction,
// target assembly (one CCT column per fault bus plus the minimum), and the
// CSV/JSON persistence layer.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "stabscope/io.hpp"
#include "stabscope/powerflow.hpp"
#include "stabscope/rng.hpp"
#include "stabscope/scenario.hpp"

namespace stabscope {

enum class FeatureCategory { SG, RES, System };

struct FeatureDescriptor {
    std::string name;
    FeatureCategory category;
    std::string unit;
};

struct FeatureSchema {
    std::vector<FeatureDescriptor> features;
    std::vector<std::size_t> monitored_branches; // indices into net.branches

    std::size_t size() const { return features.size(); }

    std::size_t index(const std::string& name) const {
        for (std::size_t i = 0; i < features.size(); ++i)
            if (features[i].name == name) return i;
        throw std::runtime_error("schema: no feature named '" + name + "'");
    }

    bool has(const std::string& name) const {
        for (const auto& f : features)
            if (f.name == name) return true;
        return false;
    }

    std::uint64_t hash() const {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (const auto& f : features) {
            h = fnv1a(f.name, h);
            h = fnv1a("|", h);
            h = fnv1a(f.unit, h);
            h = fnv1a(";", h);
        }
        return h;
    }
};

// Expanded Table-style schema size: 9 per machine + 2 per area + 2 global SG
// entries, 3 per RES unit + 1 per area + 3 global RES entries, 2 per load,
// 2 per bus and 4 per monitored branch.
inline std::size_t schema_size_formula(std::size_t machines, std::size_t res_units, std::size_t areas,
                                       std::size_t loads, std::size_t buses, std::size_t branches) {
    return 9 * machines + 2 * areas + 2 + 3 * res_units + areas + 3 + 2 * loads + 2 * buses + 4 * branches;
}

inline FeatureSchema build_schema(const PowerNetwork& net,
                                  std::optional<std::vector<std::size_t>> monitored_branches = {}) {
    FeatureSchema sch;
    if (monitored_branches) {
        sch.monitored_branches = *monitored_branches;
    } else {
        for (std::size_t i = 0; i < net.branches.size(); ++i) sch.monitored_branches.push_back(i);
    }
    auto add = [&](std::string name, FeatureCategory cat, std::string unit) {
        sch.features.push_back({std::move(name), cat, std::move(unit)});
    };

    for (const auto& m : net.machines) add("sg_p:" + m.id, FeatureCategory::SG, "MW");
    for (const auto& m : net.machines) add("sg_q:" + m.id, FeatureCategory::SG, "MVAr");
    for (const auto& m : net.machines) add("sg_mva:" + m.id, FeatureCategory::SG, "MVA");
    for (const auto& a : net.areas) add("sg_mva_area:" + a.id, FeatureCategory::SG, "MVA");
    add("sg_mva_total", FeatureCategory::SG, "MVA");
    for (const auto& m : net.machines) add("sg_h:" + m.id, FeatureCategory::SG, "MWs");
    for (const auto& a : net.areas) add("sg_h_area:" + a.id, FeatureCategory::SG, "MWs");
    add("sg_h_total", FeatureCategory::SG, "MWs");
    for (const auto& m : net.machines) add("sg_p_max:" + m.id, FeatureCategory::SG, "MW");
    for (const auto& m : net.machines) add("sg_p_min:" + m.id, FeatureCategory::SG, "MW");
    for (const auto& m : net.machines) add("sg_q_max:" + m.id, FeatureCategory::SG, "MVAr");
    for (const auto& m : net.machines) add("sg_q_min:" + m.id, FeatureCategory::SG, "MVAr");
    for (const auto& m : net.machines) add("sg_p_loading:" + m.id, FeatureCategory::SG, "%");

    for (const auto& r : net.res_units) add("res_p:" + r.id, FeatureCategory::RES, "MW");
    for (const auto& r : net.res_units) add("res_q:" + r.id, FeatureCategory::RES, "MVAr");
    for (const auto& r : net.res_units) add("res_mva:" + r.id, FeatureCategory::RES, "MVA");
    add("res_mva_total", FeatureCategory::RES, "MVA");
    add("res_sg_mva_ratio", FeatureCategory::RES, "1");
    for (const auto& a : net.areas) add("res_sg_mva_ratio_area:" + a.id, FeatureCategory::RES, "1");
    add("res_sg_p_ratio", FeatureCategory::RES, "MVA/MW");

    for (const auto& l : net.loads) add("load_p:" + l.id, FeatureCategory::System, "MW");
    for (const auto& l : net.loads) add("load_q:" + l.id, FeatureCategory::System, "MVAr");
    for (const auto& b : net.buses) add("v_mag:" + b.id, FeatureCategory::System, "pu");
    for (const auto& b : net.buses) add("v_ang:" + b.id, FeatureCategory::System, "rad");
    for (std::size_t i : sch.monitored_branches) {
        const auto& br = net.branches[i];
        const std::string tag = std::to_string(i) + ":" + br.from + "-" + br.to;
        add("p_from:" + tag, FeatureCategory::System, "MW");
    }
    for (std::size_t i : sch.monitored_branches) {
        const auto& br = net.branches[i];
        const std::string tag = std::to_string(i) + ":" + br.from + "-" + br.to;
        add("p_to:" + tag, FeatureCategory::System, "MW");
    }
    for (std::size_t i : sch.monitored_branches) {
        const auto& br = net.branches[i];
        const std::string tag = std::to_string(i) + ":" + br.from + "-" + br.to;
        add("q_from:" + tag, FeatureCategory::System, "MVAr");
    }
    for (std::size_t i : sch.monitored_branches) {
        const auto& br = net.branches[i];
        const std::string tag = std::to_string(i) + ":" + br.from + "-" + br.to;
        add("q_to:" + tag, FeatureCategory::System, "MVAr");
    }
    return sch;
}

// Zero-denominator penetration ratios collapse to 0: no capacity of the
// reference kind means no meaningful penetration of that kind.
inline double guarded_ratio(double num, double den) {
    return den == 0.0 ? 0.0 : num / den;
}

inline std::vector<double> extract_features(const PowerNetwork& net, const FeatureSchema& sch,
                                            const Scenario& sc, const OperatingPoint& op) {
    if (!op.converged) throw std::runtime_error("extract_features: operating point not converged");
    std::vector<double> x;
    x.reserve(sch.size());

    std::map<std::string, double> area_sg_mva, area_sg_h, area_res_mva;
    for (const auto& a : net.areas) {
        area_sg_mva[a.id] = 0.0;
        area_sg_h[a.id] = 0.0;
        area_res_mva[a.id] = 0.0;
    }
    double sg_mva_total = 0.0, sg_h_total = 0.0, sg_p_total = 0.0, res_mva_total = 0.0;
    for (const auto& m : net.machines) {
        const auto eff = effective_machine(m, sc);
        const std::string& area = net.area_of_bus(m.bus);
        area_sg_mva[area] += eff.mva_rating;
        area_sg_h[area] += m.h * eff.mva_rating;
        sg_mva_total += eff.mva_rating;
        sg_h_total += m.h * eff.mva_rating;
        sg_p_total += op.sg_p.at(m.id);
    }
    for (const auto& r : net.res_units) {
        const double mva = scenario_res_mva(sc, r.id);
        area_res_mva[r.area] += mva;
        res_mva_total += mva;
    }

    for (const auto& m : net.machines) x.push_back(op.sg_p.at(m.id));
    for (const auto& m : net.machines) x.push_back(op.sg_q.at(m.id));
    for (const auto& m : net.machines) x.push_back(effective_machine(m, sc).mva_rating);
    for (const auto& a : net.areas) x.push_back(area_sg_mva.at(a.id));
    x.push_back(sg_mva_total);
    for (const auto& m : net.machines) x.push_back(m.h * effective_machine(m, sc).mva_rating);
    for (const auto& a : net.areas) x.push_back(area_sg_h.at(a.id));
    x.push_back(sg_h_total);
    for (const auto& m : net.machines) x.push_back(effective_machine(m, sc).p_max);
    for (const auto& m : net.machines) x.push_back(effective_machine(m, sc).p_min);
    for (const auto& m : net.machines) x.push_back(effective_machine(m, sc).q_max);
    for (const auto& m : net.machines) x.push_back(effective_machine(m, sc).q_min);
    for (const auto& m : net.machines)
        x.push_back(100.0 * guarded_ratio(op.sg_p.at(m.id), effective_machine(m, sc).p_max));

    for (const auto& r : net.res_units) x.push_back(op.res_p.count(r.id) ? op.res_p.at(r.id) : 0.0);
    for (const auto& r : net.res_units) x.push_back(op.res_q.count(r.id) ? op.res_q.at(r.id) : 0.0);
    for (const auto& r : net.res_units) x.push_back(scenario_res_mva(sc, r.id));
    x.push_back(res_mva_total);
    x.push_back(guarded_ratio(res_mva_total, sg_mva_total));
    for (const auto& a : net.areas)
        x.push_back(guarded_ratio(area_res_mva.at(a.id), area_sg_mva.at(a.id)));
    x.push_back(guarded_ratio(res_mva_total, sg_p_total));

    for (const auto& l : net.loads) x.push_back(l.p_base * sc.demand_mult);
    for (const auto& l : net.loads) x.push_back(l.q_base * sc.demand_mult);
    for (const auto& b : net.buses) x.push_back(op.v_mag[net.bus_index(b.id)]);
    for (const auto& b : net.buses) x.push_back(op.v_ang[net.bus_index(b.id)]);
    for (std::size_t i : sch.monitored_branches) x.push_back(op.branch_flows[i].p_from);
    for (std::size_t i : sch.monitored_branches) x.push_back(op.branch_flows[i].p_to);
    for (std::size_t i : sch.monitored_branches) x.push_back(op.branch_flows[i].q_from);
    for (std::size_t i : sch.monitored_branches) x.push_back(op.branch_flows[i].q_to);

    if (x.size() != sch.size()) throw std::logic_error("extract_features: schema size mismatch");
    return x;
}

struct TSDb {
    FeatureSchema schema;
    std::vector<int> scenario_ids;
    std::vector<std::vector<double>> x; // N rows, M features each
    std::vector<std::string> target_names;
    std::map<std::string, std::vector<double>> targets;

    std::size_t rows() const { return x.size(); }

    const std::vector<double>& target(const std::string& name) const {
        const auto it = targets.find(name);
        if (it == targets.end()) throw std::runtime_error("tsdb: no target '" + name + "'");
        return it->second;
    }

    std::vector<double> feature_column(const std::string& name) const {
        const std::size_t j = schema.index(name);
        std::vector<double> col(rows());
        for (std::size_t i = 0; i < rows(); ++i) col[i] = x[i][j];
        return col;
    }
};

struct TsdbRow {
    int scenario_id = 0;
    std::vector<double> features;
    std::map<std::string, double> cct_per_bus; // fault bus -> cct, complete rows only
    bool complete = true;
};

// One shared feature matrix, a target column per fault bus plus cct_min.
// Rows missing any target are dropped; assembly keeps scenario-id order.
inline TSDb assemble_databases(const FeatureSchema& schema, std::vector<TsdbRow> rows,
                               const std::vector<std::string>& fault_buses,
                               std::vector<int>* dropped = nullptr) {
    std::sort(rows.begin(), rows.end(),
              [](const TsdbRow& a, const TsdbRow& b) { return a.scenario_id < b.scenario_id; });
    TSDb db;
    db.schema = schema;
    for (const auto& bus : fault_buses) db.target_names.push_back("cct_bus_" + bus);
    db.target_names.push_back("cct_min");
    for (const auto& name : db.target_names) db.targets[name] = {};

    for (auto& row : rows) {
        bool ok = row.complete;
        for (const auto& bus : fault_buses)
            if (!row.cct_per_bus.count(bus)) ok = false;
        if (!ok) {
            if (dropped) dropped->push_back(row.scenario_id);
            continue;
        }
        db.scenario_ids.push_back(row.scenario_id);
        db.x.push_back(std::move(row.features));
        double cmin = std::numeric_limits<double>::infinity();
        for (const auto& bus : fault_buses) {
            const double c = row.cct_per_bus.at(bus);
            db.targets["cct_bus_" + bus].push_back(c);
            cmin = std::min(cmin, c);
        }
        db.targets["cct_min"].push_back(cmin);
    }
    return db;
}

inline TSDb subset_rows(const TSDb& db, const std::vector<std::size_t>& idx) {
    TSDb out;
    out.schema = db.schema;
    out.target_names = db.target_names;
    for (const auto& name : db.target_names) out.targets[name] = {};
    for (std::size_t i : idx) {
        out.scenario_ids.push_back(db.scenario_ids[i]);
        out.x.push_back(db.x[i]);
        for (const auto& name : db.target_names) out.targets[name].push_back(db.targets.at(name)[i]);
    }
    return out;
}

// --- persistence --------------------------------------------------------

inline nlohmann::ordered_json schema_to_json(const FeatureSchema& sch) {
    nlohmann::ordered_json j;
    j["schema_hash"] = sch.hash();
    nlohmann::ordered_json feats = nlohmann::ordered_json::array();
    for (const auto& f : sch.features) {
        nlohmann::ordered_json jf;
        jf["name"] = f.name;
        jf["category"] = f.category == FeatureCategory::SG ? "SG"
                         : f.category == FeatureCategory::RES ? "RES" : "System";
        jf["unit"] = f.unit;
        feats.push_back(jf);
    }
    j["features"] = feats;
    j["monitored_branches"] = sch.monitored_branches;
    return j;
}

inline FeatureSchema schema_from_json(const nlohmann::json& j) {
    FeatureSchema sch;
    for (const auto& jf : j.at("features")) {
        FeatureDescriptor f;
        f.name = jf.at("name").get<std::string>();
        const std::string c = jf.at("category").get<std::string>();
        f.category = c == "SG" ? FeatureCategory::SG : c == "RES" ? FeatureCategory::RES : FeatureCategory::System;
        f.unit = jf.at("unit").get<std::string>();
        sch.features.push_back(std::move(f));
    }
    if (j.contains("monitored_branches"))
        sch.monitored_branches = j.at("monitored_branches").get<std::vector<std::size_t>>();
    return sch;
}

inline void write_tsdb(const TSDb& db, const std::filesystem::path& dir,
                       const nlohmann::ordered_json& provenance = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    CsvTable feats;
    for (const auto& f : db.schema.features) feats.header.push_back(f.name);
    for (const auto& row : db.x) {
        std::vector<std::string> r;
        r.reserve(row.size());
        for (double v : row) r.push_back(format_double(v));
        feats.rows.push_back(std::move(r));
    }
    write_csv(dir / "features.csv", feats);

    CsvTable targ;
    targ.header = db.target_names;
    for (std::size_t i = 0; i < db.rows(); ++i) {
        std::vector<std::string> r;
        for (const auto& name : db.target_names) r.push_back(format_double(db.targets.at(name)[i]));
        targ.rows.push_back(std::move(r));
    }
    write_csv(dir / "targets.csv", targ);

    nlohmann::ordered_json j = schema_to_json(db.schema);
    j["scenario_ids"] = db.scenario_ids;
    j["target_names"] = db.target_names;
    if (!provenance.is_null() && !provenance.empty()) j["provenance"] = provenance;
    write_text_atomic(dir / "schema.json", j.dump(2) + "\n");
}

inline TSDb read_tsdb(const std::filesystem::path& dir) {
    const auto j = nlohmann::json::parse(read_text(dir / "schema.json"));
    TSDb db;
    db.schema = schema_from_json(j);
    const std::uint64_t recorded = j.at("schema_hash").get<std::uint64_t>();
    if (recorded != db.schema.hash())
        throw std::runtime_error("tsdb: schema hash mismatch in " + dir.string());
    db.scenario_ids = j.at("scenario_ids").get<std::vector<int>>();
    db.target_names = j.at("target_names").get<std::vector<std::string>>();

    const CsvTable feats = read_csv(dir / "features.csv");
    if (feats.header.size() != db.schema.size())
        throw std::runtime_error("tsdb: features.csv header does not match schema");
    for (std::size_t i = 0; i < feats.header.size(); ++i)
        if (feats.header[i] != db.schema.features[i].name)
            throw std::runtime_error("tsdb: features.csv header does not match schema");
    for (const auto& row : feats.rows) {
        std::vector<double> r;
        r.reserve(row.size());
        for (const auto& s : row) r.push_back(parse_double(s));
        db.x.push_back(std::move(r));
    }

    const CsvTable targ = read_csv(dir / "targets.csv");
    if (targ.header != db.target_names)
        throw std::runtime_error("tsdb: targets.csv header does not match recorded target names");
    for (const auto& name : db.target_names) db.targets[name] = {};
    for (const auto& row : targ.rows)
        for (std::size_t c = 0; c < row.size(); ++c)
            db.targets[db.target_names[c]].push_back(parse_double(row[c]));

    if (db.x.size() != db.scenario_ids.size())
        throw std::runtime_error("tsdb: row count mismatch between features and scenario ids");
    for (const auto& name : db.target_names)
        if (db.targets[name].size() != db.x.size())
            throw std::runtime_error("tsdb: target length mismatch");
    return db;
}

} // namespace stabscope
