#include <doctest.h>

#include <filesystem>

#include "helpers/oracles.hpp"
#include "stabscope/dynamics.hpp"

using namespace stabscope;

namespace {

const std::filesystem::path kData = std::filesystem::path(STABSCOPE_SOURCE_DIR) / "data";
constexpr double kOmegaS = 2.0 * oracles::kPi * 60.0;

// Machine against an effectively infinite bus over a lossless tie with
// transfer power pmax = 1/x. Fault at the machine terminal kills Pe.
DynamicModel smib_model(double h, double pm, double x) {
    DynamicModel m;
    m.machine_ids = {"m", "inf"};
    m.h = {h, 1e8};
    m.d = {0.0, 0.0};
    m.e = {1.0, 1.0};
    const double pmax = 1.0 / x;
    const double delta0 = std::asin(pm / pmax);
    m.delta0 = {delta0, 0.0};
    m.pm = {pm, -pm};
    m.y_pre.nodes = {"m", "inf"};
    m.y_pre.y = ComplexMatrix(2, 2);
    m.y_pre.y(0, 0) = Complex(0.0, -1.0 / x);
    m.y_pre.y(1, 1) = Complex(0.0, -1.0 / x);
    m.y_pre.y(0, 1) = m.y_pre.y(1, 0) = Complex(0.0, 1.0 / x);
    m.y_fault.nodes = m.y_pre.nodes;
    m.y_fault.y = ComplexMatrix(2, 2); // no transfer, no conductance
    m.omega_s = kOmegaS;
    return m;
}

OperatingPoint solved_nine_bus_point(const PowerNetwork& net, const Scenario& sc) {
    const auto d = dispatch(net, sc);
    REQUIRE(d.feasible);
    auto op = solve_powerflow(net, sc, d);
    REQUIRE(op.converged);
    return op;
}

} // namespace

TEST_CASE("simulate: no fault keeps the system at equilibrium") {
    const auto model = smib_model(4.0, 0.8, 0.5);
    SimConfig cfg;
    cfg.horizon_after_clear = 5.0;
    const auto res = simulate(model, 0.0, cfg, true);
    CHECK(res.stable);
    for (std::size_t s = 0; s < res.time.size(); ++s)
        CHECK(std::fabs(res.delta[0][s] - model.delta0[0]) < 1e-6);
}

TEST_CASE("simulate: fault-on trajectory matches the closed form") {
    const double h = 5.0, pm = 0.9, x = 0.4;
    const auto model = smib_model(h, pm, x);
    SimConfig cfg;
    cfg.horizon_after_clear = 0.05;
    const auto res = simulate(model, 0.1, cfg, true);
    // find the sample at t = 0.1 s
    std::size_t k = 0;
    for (std::size_t s = 0; s < res.time.size(); ++s)
        if (std::fabs(res.time[s] - 0.1) < 1e-9) k = s;
    REQUIRE(k > 0);
    const double expected = oracles::fault_on_delta(h, pm, model.delta0[0], kOmegaS, 0.1);
    CHECK(std::fabs(res.delta[0][k] - expected) < 1e-6);
}

TEST_CASE("simulate: equal-area criterion separates stable from unstable clearing") {
    const double h = 4.0, pm = 0.8, x = 0.5;
    const auto model = smib_model(h, pm, x);
    const auto ea = oracles::equal_area_critical(h, pm, model.delta0[0], kOmegaS);
    CHECK(simulate(model, ea.t_cr - 0.02).stable);
    const auto unstable = simulate(model, ea.t_cr + 0.02);
    CHECK_FALSE(unstable.stable);
    CHECK(unstable.los_time.has_value());
}

TEST_CASE("simulate: blow-up is classified unstable, not an error") {
    auto model = smib_model(0.05, 0.99, 1.0); // near the nose, light machine
    const auto res = simulate(model, 1.0);
    CHECK_FALSE(res.stable);
}

TEST_CASE("search_cct: mechanics on a monotone stub") {
    int evals = 0;
    const auto res = search_cct([&](double t) {
        ++evals;
        return t < 0.237;
    });
    CHECK(res.cct == doctest::Approx(0.23).epsilon(1e-12));
    CHECK_FALSE(res.capped);
    CHECK(res.evaluations == evals);
}

TEST_CASE("search_cct: all-stable sweep caps at the limit") {
    const auto res = search_cct([](double) { return true; });
    CHECK(res.capped);
    CHECK(res.cct == doctest::Approx(1.40));
}

TEST_CASE("search_cct: instability below the first fine step yields zero") {
    const auto res = search_cct([](double t) { return t < 0.005; });
    CHECK(res.cct == doctest::Approx(0.0));
    CHECK_FALSE(res.capped);
}

TEST_CASE("compute_cct: SMIB within a fine step of the equal-area oracle") {
    struct Params {
        double h, pm, x;
    };
    for (const Params& p : {Params{4.0, 0.8, 0.5}, Params{6.5, 0.7, 0.4}}) {
        const auto model = smib_model(p.h, p.pm, p.x);
        const auto ea = oracles::equal_area_critical(p.h, p.pm, model.delta0[0], kOmegaS);
        const auto res = search_cct([&](double t) { return simulate(model, t).stable; });
        REQUIRE_FALSE(res.capped);
        CHECK(std::fabs(res.cct - ea.t_cr) <= 0.01 + 0.002);
        // boundary soundness at the reported value
        CHECK(simulate(model, res.cct).stable);
        CHECK_FALSE(simulate(model, res.cct + 0.01).stable);
    }
}

TEST_CASE("simulate: step halving changes the trajectory below 1e-5 rad") {
    const auto model = smib_model(4.0, 0.8, 0.5);
    SimConfig full, half;
    full.dt = 1e-3;
    half.dt = 5e-4;
    full.horizon_after_clear = half.horizon_after_clear = 3.0;
    const auto a = simulate(model, 0.1, full, true);
    const auto b = simulate(model, 0.1, half, true);
    REQUIRE(a.stable);
    REQUIRE(b.stable);
    CHECK(std::fabs(a.delta[0].back() - b.delta[0].back()) < 1e-5);
}

TEST_CASE("simulate: lossless first integral is conserved without damping") {
    auto model = smib_model(4.0, 0.8, 0.5);
    model.delta0[0] += 0.2; // start away from equilibrium
    SimConfig cfg;
    cfg.horizon_after_clear = 5.0;
    const auto res = simulate(model, 0.0, cfg, true);
    REQUIRE(res.stable);

    const double b12 = model.y_pre.y(0, 1).imag();
    auto energy = [&](std::size_t s0, std::size_t s1) {
        // kinetic term from finite-difference speed, potential from the
        // lossless power-angle curve
        const double dt = res.time[s1] - res.time[s0];
        const double w1 = (res.delta[0][s1] - res.delta[0][s0]) / dt;
        const double w2 = (res.delta[1][s1] - res.delta[1][s0]) / dt;
        const double mid1 = 0.5 * (res.delta[0][s1] + res.delta[0][s0]);
        const double mid2 = 0.5 * (res.delta[1][s1] + res.delta[1][s0]);
        const double ke = model.h[0] * w1 * w1 / model.omega_s + model.h[1] * w2 * w2 / model.omega_s;
        const double pe = -model.pm[0] * mid1 - model.pm[1] * mid2 - b12 * std::cos(mid1 - mid2);
        return ke + pe;
    };
    const double e0 = energy(0, 1);
    const double e1 = energy(res.time.size() - 2, res.time.size() - 1);
    CHECK(std::fabs(e1 - e0) < 1e-5);
}

TEST_CASE("simulate: shifting the angle reference leaves separations unchanged") {
    auto base = smib_model(4.0, 0.8, 0.5);
    auto shifted = base;
    const double c = 0.7;
    shifted.delta0[0] += c;
    shifted.delta0[1] += c;
    SimConfig cfg;
    cfg.horizon_after_clear = 2.0;
    const auto a = simulate(base, 0.15, cfg, true);
    const auto b = simulate(shifted, 0.15, cfg, true);
    REQUIRE(a.time.size() == b.time.size());
    for (std::size_t s = 0; s < a.time.size(); ++s) {
        const double sep_a = a.delta[0][s] - a.delta[1][s];
        const double sep_b = b.delta[0][s] - b.delta[1][s];
        CHECK(std::fabs(sep_a - sep_b) < 1e-9);
    }
}

TEST_CASE("build_dynamic_model: mechanical power balances the solved dispatch") {
    const auto net = load_case(kData / "wscc9.json");
    Scenario sc;
    sc.id = 0;
    sc.demand_mult = 0.9;
    const auto op = solved_nine_bus_point(net, sc);
    const auto model = build_dynamic_model(net, sc, op, "7");
    for (std::size_t i = 0; i < model.machine_ids.size(); ++i) {
        const double dispatched = op.sg_p.at(model.machine_ids[i]) / net.base_mva;
        CHECK(std::fabs(model.pm[i] - dispatched) < 1e-6);
    }
}

TEST_CASE("build_dynamic_model: equilibrium also holds with RES injections") {
    const auto net = load_case(kData / "wscc9.json");
    Scenario sc;
    sc.id = 1;
    sc.demand_mult = 0.9;
    sc.displaced_sg = "G2";
    sc.u = 2;
    sc.s = 0.05;
    sc.r = 1.0;
    sc.res_mva = {{"R2", round_up_even(res_mva_raw(192.0, 2, 0.05, 1.0))}};
    const auto op = solved_nine_bus_point(net, sc);
    const auto model = build_dynamic_model(net, sc, op, "7");
    for (std::size_t i = 0; i < model.machine_ids.size(); ++i) {
        const double dispatched = op.sg_p.at(model.machine_ids[i]) / net.base_mva;
        CHECK(std::fabs(model.pm[i] - dispatched) < 1e-6);
    }
    // and a no-fault run holds the equilibrium
    SimConfig cfg;
    cfg.horizon_after_clear = 2.0;
    const auto res = simulate(model, 0.0, cfg, true);
    CHECK(res.stable);
    for (std::size_t i = 0; i < model.machine_ids.size(); ++i)
        CHECK(std::fabs(res.delta[i].back() - model.delta0[i]) < 1e-4);
}

TEST_CASE("build_dynamic_model: machine-terminal fault removes the transfer path") {
    // two-bus system: test machine behind its reactance at bus 1, stiff
    // machine at bus 2; a bus-1 fault isolates the internal node
    PowerNetwork net;
    net.base_mva = 100.0;
    net.base_freq_hz = 60.0;
    net.buses.push_back({"1", 230.0, BusType::PV});
    net.buses.push_back({"2", 230.0, BusType::Slack});
    net.branches.push_back({"1", "2", 0.0, 0.2, 0.0, 1.0});
    SyncMachine a;
    a.id = "M";
    a.bus = "1";
    a.mva_rating = 100.0;
    a.h = 4.0;
    a.xd_prime = 0.3;
    a.p_max = 100.0;
    a.p_min = 0.0;
    a.q_max = 100.0;
    a.q_min = -100.0;
    a.v_set = 1.0;
    SyncMachine b = a;
    b.id = "INF";
    b.bus = "2";
    b.mva_rating = 1e6; // effectively infinite
    b.h = 10.0;
    b.xd_prime = 0.3;
    b.is_slack = true;
    net.machines = {a, b};

    Scenario sc;
    sc.demand_mult = 1.0;
    DispatchResult d;
    d.feasible = true;
    d.sg_p["M"] = 60.0;
    const auto op = solve_powerflow(net, sc, d);
    REQUIRE(op.converged);
    const auto model = build_dynamic_model(net, sc, op, "1");
    CHECK(std::abs(model.y_fault.y(0, 1)) < 1e-12);
    CHECK(std::fabs(model.y_fault.y(0, 0).real()) < 1e-12); // no conductance, Pe = 0
}

TEST_CASE("build_dynamic_model: identical machines see a symmetric reduced network") {
    PowerNetwork net;
    net.base_mva = 100.0;
    net.base_freq_hz = 60.0;
    net.buses.push_back({"1", 230.0, BusType::Slack});
    net.buses.push_back({"2", 230.0, BusType::PV});
    net.buses.push_back({"3", 230.0, BusType::PQ});
    net.branches.push_back({"1", "3", 0.0, 0.2, 0.0, 1.0});
    net.branches.push_back({"2", "3", 0.0, 0.2, 0.0, 1.0});
    SyncMachine a;
    a.id = "A";
    a.bus = "1";
    a.mva_rating = 100.0;
    a.h = 4.0;
    a.xd_prime = 0.3;
    a.p_max = 100.0;
    a.p_min = 0.0;
    a.q_max = 100.0;
    a.q_min = -100.0;
    a.v_set = 1.0;
    a.is_slack = true;
    SyncMachine b = a;
    b.id = "B";
    b.bus = "2";
    b.is_slack = false;
    net.machines = {a, b};
    net.loads.push_back({"L", "3", 80.0, 10.0});

    Scenario sc;
    sc.demand_mult = 1.0;
    DispatchResult d;
    d.feasible = true;
    d.sg_p["B"] = 40.0;
    const auto op = solve_powerflow(net, sc, d);
    REQUIRE(op.converged);
    const auto model = build_dynamic_model(net, sc, op, "3");
    CHECK(std::abs(model.y_pre.y(0, 0) - model.y_pre.y(1, 1)) < 1e-9);
    CHECK(std::abs(model.y_pre.y(0, 1) - model.y_pre.y(1, 0)) < 1e-12);
}

TEST_CASE("select_cct_min: minimum, single entry and tie rules") {
    CctSurface surf;
    surf.per_bus = {{"B1", 0.3, false, false, "", 10},
                    {"B2", 0.2, false, false, "", 10},
                    {"B3", 0.5, false, false, "", 10}};
    select_cct_min(surf);
    CHECK(surf.cct_min == doctest::Approx(0.2));
    CHECK(surf.argmin_bus == "B2");

    CctSurface single;
    single.per_bus = {{"B9", 0.44, false, false, "", 3}};
    select_cct_min(single);
    CHECK(single.cct_min == doctest::Approx(0.44));
    CHECK(single.argmin_bus == "B9");

    CctSurface tie;
    tie.per_bus = {{"B4", 0.2, false, false, "", 5}, {"B7", 0.2, false, false, "", 5}};
    select_cct_min(tie);
    CHECK(tie.argmin_bus == "B4");

    CctSurface with_failure;
    with_failure.per_bus = {{"B1", 0.0, false, true, "boom", 0}, {"B2", 0.6, false, false, "", 5}};
    select_cct_min(with_failure);
    CHECK(with_failure.cct_min == doctest::Approx(0.6));
    CHECK(with_failure.argmin_bus == "B2");
}

TEST_CASE("compute_cct on the nine-bus case satisfies boundary soundness") {
    const auto net = load_case(kData / "wscc9.json");
    Scenario sc;
    sc.id = 0;
    sc.demand_mult = 1.0;
    const auto op = solved_nine_bus_point(net, sc);
    const auto model = build_dynamic_model(net, sc, op, "7");
    const auto res = compute_cct(net, sc, op, "7");
    REQUIRE_FALSE(res.failed);
    if (!res.capped) {
        CHECK(simulate(model, res.cct).stable);
        CHECK_FALSE(simulate(model, res.cct + 0.01).stable);
    }
    CHECK(res.cct >= 0.0);
    CHECK(res.cct <= 1.40);
}
