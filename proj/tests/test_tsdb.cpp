#include <doctest.h>

#include <chrono>
#include <filesystem>

#include "stabscope/tsdb.hpp"

using namespace stabscope;

namespace {

const std::filesystem::path kData = std::filesystem::path(STABSCOPE_SOURCE_DIR) / "data";

struct NineBusFixture {
    PowerNetwork net;
    FeatureSchema schema;
    Scenario scenario;
    OperatingPoint op;

    NineBusFixture() {
        net = load_case(kData / "wscc9.json");
        schema = build_schema(net);
        scenario.id = 3;
        scenario.demand_mult = 0.9;
        const auto d = dispatch(net, scenario);
        REQUIRE(d.feasible);
        op = solve_powerflow(net, scenario, d);
        REQUIRE(op.converged);
    }
};

std::filesystem::path temp_dir(const std::string& tag) {
    const auto dir = std::filesystem::temp_directory_path() / ("stabscope_test_" + tag);
    std::filesystem::remove_all(dir);
    return dir;
}

} // namespace

TEST_CASE("schema size matches the closed-form count") {
    const NineBusFixture fx;
    // 3 machines, 3 res units, 3 areas, 3 loads, 9 buses, 9 branches
    CHECK(fx.schema.size() == schema_size_formula(3, 3, 3, 3, 9, 9));
    const auto x = extract_features(fx.net, fx.schema, fx.scenario, fx.op);
    CHECK(x.size() == fx.schema.size());

    // independent recount straight from the Table structure
    const std::size_t expected = 9 * 3 + 2 * 3 + 2   // SG columns
                                 + 3 * 3 + 3 + 3     // RES columns
                                 + 2 * 3 + 2 * 9 + 4 * 9; // system columns
    CHECK(fx.schema.size() == expected);
}

TEST_CASE("schema names are unique and categories partition them") {
    const NineBusFixture fx;
    std::set<std::string> names;
    for (const auto& f : fx.schema.features) names.insert(f.name);
    CHECK(names.size() == fx.schema.size());
}

TEST_CASE("loading feature follows the scaled maximum") {
    const NineBusFixture fx;
    const auto x = extract_features(fx.net, fx.schema, fx.scenario, fx.op);
    const double p = fx.op.sg_p.at("G2");
    CHECK(x[fx.schema.index("sg_p_loading:G2")] ==
          doctest::Approx(100.0 * p / 180.0).epsilon(1e-12));

    // displaced machine: effective maximum shrinks with remaining units
    Scenario displaced = fx.scenario;
    displaced.displaced_sg = "G2";
    displaced.u = 2;
    const auto x2 = extract_features(fx.net, fx.schema, displaced, fx.op);
    CHECK(x2[fx.schema.index("sg_p_loading:G2")] ==
          doctest::Approx(100.0 * p / 90.0).epsilon(1e-12));
    CHECK(x2[fx.schema.index("sg_mva:G2")] == doctest::Approx(96.0));
}

TEST_CASE("penetration ratios guard zero denominators") {
    const NineBusFixture fx;
    const auto x = extract_features(fx.net, fx.schema, fx.scenario, fx.op);
    // no RES anywhere in this scenario
    CHECK(x[fx.schema.index("res_mva_total")] == 0.0);
    CHECK(x[fx.schema.index("res_sg_mva_ratio")] == 0.0);
    CHECK(x[fx.schema.index("res_sg_mva_ratio_area:A2")] == 0.0);
    for (double v : x) CHECK(std::isfinite(v));
}

TEST_CASE("features carry only pre-fault quantities") {
    const NineBusFixture fx;
    for (const auto& f : fx.schema.features) {
        CHECK(f.name.rfind("cct", 0) == std::string::npos);
        CHECK(f.name.find("los") == std::string::npos);
    }
    // extraction does not depend on any simulation outcome by construction:
    // the signature has no access to SimResult; spot-check determinism
    const auto a = extract_features(fx.net, fx.schema, fx.scenario, fx.op);
    const auto b = extract_features(fx.net, fx.schema, fx.scenario, fx.op);
    CHECK(a == b);
}

TEST_CASE("assemble_databases: shared X, one target per bus plus the minimum") {
    FeatureSchema schema;
    schema.features = {{"f1", FeatureCategory::System, "1"}, {"f2", FeatureCategory::System, "1"}};
    std::vector<TsdbRow> rows;
    for (int i = 0; i < 3; ++i) {
        TsdbRow r;
        r.scenario_id = 10 - i; // out of order on purpose
        r.features = {static_cast<double>(i), 2.0 * i};
        r.cct_per_bus = {{"7", 0.3 + i * 0.1}, {"9", 0.25 + i * 0.1}};
        rows.push_back(r);
    }
    const TSDb db = assemble_databases(schema, rows, {"7", "9"});
    CHECK(db.rows() == 3);
    CHECK(db.target_names == std::vector<std::string>{"cct_bus_7", "cct_bus_9", "cct_min"});
    CHECK(db.scenario_ids == std::vector<int>{8, 9, 10}); // sorted by scenario id
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(db.targets.at("cct_min")[i] ==
              doctest::Approx(std::min(db.targets.at("cct_bus_7")[i], db.targets.at("cct_bus_9")[i])));
}

TEST_CASE("assemble_databases: incomplete rows are dropped and reported") {
    FeatureSchema schema;
    schema.features = {{"f1", FeatureCategory::System, "1"}};
    std::vector<TsdbRow> rows(3);
    rows[0] = {0, {1.0}, {{"7", 0.5}}, true};
    rows[1] = {1, {2.0}, {}, false}; // failed simulation
    rows[2] = {2, {3.0}, {{"9", 0.4}}, true}; // missing bus 7 target
    std::vector<int> dropped;
    const TSDb db = assemble_databases(schema, rows, {"7"}, &dropped);
    CHECK(db.rows() == 1);
    CHECK(dropped == std::vector<int>{1, 2});
}

TEST_CASE("tsdb round trip is bit exact") {
    FeatureSchema schema;
    for (int i = 0; i < 10; ++i)
        schema.features.push_back({"f" + std::to_string(i), FeatureCategory::System, "1"});
    TSDb db;
    db.schema = schema;
    db.target_names = {"cct_bus_4", "cct_min"};
    Rng rng = make_rng(7);
    for (int r = 0; r < 5; ++r) {
        db.scenario_ids.push_back(r);
        std::vector<double> row;
        for (int c = 0; c < 10; ++c) row.push_back(uniform_real(rng) * 3.0 - 1.0);
        db.x.push_back(row);
        db.targets["cct_bus_4"].push_back(uniform_real(rng));
        db.targets["cct_min"].push_back(uniform_real(rng));
    }
    const auto dir = temp_dir("roundtrip");
    write_tsdb(db, dir);
    const TSDb back = read_tsdb(dir);
    CHECK(back.x == db.x); // bit-exact
    CHECK(back.targets == db.targets);
    CHECK(back.scenario_ids == db.scenario_ids);
    std::filesystem::remove_all(dir);
}

TEST_CASE("tsdb read rejects an edited header") {
    FeatureSchema schema;
    schema.features = {{"a", FeatureCategory::System, "1"}, {"b", FeatureCategory::System, "1"}};
    TSDb db;
    db.schema = schema;
    db.target_names = {"cct_min"};
    db.scenario_ids = {0};
    db.x = {{1.0, 2.0}};
    db.targets["cct_min"] = {0.3};
    const auto dir = temp_dir("editedheader");
    write_tsdb(db, dir);

    auto csv = read_text(dir / "features.csv");
    csv.replace(csv.find("a,b"), 3, "a,c");
    write_text_atomic(dir / "features.csv", csv);
    CHECK_THROWS_WITH_AS(read_tsdb(dir), doctest::Contains("header"), std::runtime_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("tsdb read rejects a schema hash mismatch") {
    FeatureSchema schema;
    schema.features = {{"a", FeatureCategory::System, "1"}};
    TSDb db;
    db.schema = schema;
    db.target_names = {"cct_min"};
    db.scenario_ids = {0};
    db.x = {{1.0}};
    db.targets["cct_min"] = {0.3};
    const auto dir = temp_dir("hashmismatch");
    write_tsdb(db, dir);

    auto sj = nlohmann::json::parse(read_text(dir / "schema.json"));
    sj["schema_hash"] = sj["schema_hash"].get<std::uint64_t>() + 1;
    write_text_atomic(dir / "schema.json", sj.dump(2));
    CHECK_THROWS_WITH_AS(read_tsdb(dir), doctest::Contains("hash"), std::runtime_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("full-scale database round trip stays within the time budget") {
    // 3906 rows x ~150 columns, the full 39-bus volume
    FeatureSchema schema;
    for (int i = 0; i < 150; ++i)
        schema.features.push_back({"f" + std::to_string(i), FeatureCategory::System, "1"});
    TSDb db;
    db.schema = schema;
    db.target_names = {"cct_bus_4", "cct_bus_7", "cct_bus_9", "cct_min"};
    Rng rng = make_rng(3);
    for (int r = 0; r < 3906; ++r) {
        db.scenario_ids.push_back(r);
        std::vector<double> row(150);
        for (auto& v : row) v = uniform_real(rng);
        db.x.push_back(std::move(row));
        for (const auto& t : db.target_names) db.targets[t].push_back(uniform_real(rng));
    }
    const auto dir = temp_dir("fullscale");
    const auto start = std::chrono::steady_clock::now();
    write_tsdb(db, dir);
    const TSDb back = read_tsdb(dir);
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(back.x == db.x);
    CHECK(elapsed < 5.0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("deterministic row order regardless of input order") {
    FeatureSchema schema;
    schema.features = {{"f", FeatureCategory::System, "1"}};
    std::vector<TsdbRow> fwd, rev;
    for (int i = 0; i < 6; ++i) {
        TsdbRow r{i, {static_cast<double>(i)}, {{"4", 0.1 * i}}, true};
        fwd.push_back(r);
        rev.insert(rev.begin(), r);
    }
    const TSDb a = assemble_databases(schema, fwd, {"4"});
    const TSDb b = assemble_databases(schema, rev, {"4"});
    CHECK(a.x == b.x);
    CHECK(a.scenario_ids == b.scenario_ids);
    CHECK(a.targets == b.targets);
}
