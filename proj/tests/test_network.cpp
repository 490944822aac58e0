#include <doctest.h>

#include <filesystem>

#include "stabscope/admittance.hpp"
#include "stabscope/network.hpp"
#include "stabscope/rng.hpp"

using namespace stabscope;

namespace {

const std::filesystem::path kData = std::filesystem::path(STABSCOPE_SOURCE_DIR) / "data";

PowerNetwork two_bus_case() {
    nlohmann::json j = {
        {"name", "two_bus"},
        {"base_mva", 100.0},
        {"base_freq_hz", 60.0},
        {"buses", {{{"id", "1"}, {"nominal_kv", 230.0}, {"type", "slack"}},
                   {{"id", "2"}, {"nominal_kv", 230.0}, {"type", "PQ"}}}},
        {"branches", {{{"from", "1"}, {"to", "2"}, {"r", 0.0}, {"x", 0.1}}}},
    };
    return parse_case(j);
}

} // namespace

TEST_CASE("load_case: minimal two-bus file") {
    const auto net = two_bus_case();
    CHECK(net.buses.size() == 2);
    CHECK(net.branches.size() == 1);
    CHECK(net.base_mva == 100.0);
}

TEST_CASE("load_case: shipped WSCC 9-bus case") {
    const auto net = load_case(kData / "wscc9.json");
    CHECK(net.buses.size() == 9);
    CHECK(net.machines.size() == 3);
    CHECK(net.branches.size() == 9);
    CHECK(net.loads.size() == 3);
    CHECK(net.areas.size() == 3);
    CHECK(net.slack_machine().id == "G1");
}

TEST_CASE("load_case: shipped IEEE 39-bus case") {
    const auto net = load_case(kData / "ieee39.json");
    CHECK(net.buses.size() == 39);
    CHECK(net.machines.size() == 10);
    CHECK(net.branches.size() == 46);
    CHECK(net.loads.size() == 19);
    CHECK(net.slack_machine().id == "G01");
}

TEST_CASE("load_case: machine on undeclared bus is a validation error") {
    nlohmann::json j = {
        {"name", "bad"},
        {"base_mva", 100.0},
        {"base_freq_hz", 60.0},
        {"buses", {{{"id", "1"}, {"nominal_kv", 230.0}, {"type", "slack"}}}},
        {"machines", {{{"id", "G1"}, {"bus", "nope"}, {"mva_rating", 100.0}, {"h", 3.0},
                       {"xd_prime", 0.3}, {"p_max", 100.0}, {"p_min", 0.0}, {"q_max", 50.0},
                       {"q_min", -50.0}, {"v_set", 1.0}, {"is_slack", true}}}},
    };
    CHECK_THROWS_WITH_AS(parse_case(j), doctest::Contains("undeclared bus"), CaseError);
}

TEST_CASE("load_case: two slack buses rejected") {
    nlohmann::json j = {
        {"name", "bad"},
        {"base_mva", 100.0},
        {"base_freq_hz", 60.0},
        {"buses", {{{"id", "1"}, {"nominal_kv", 230.0}, {"type", "slack"}},
                   {{"id", "2"}, {"nominal_kv", 230.0}, {"type", "slack"}}}},
    };
    CHECK_THROWS_AS(parse_case(j), CaseError);
}

TEST_CASE("build_admittance: single series element") {
    const auto net = two_bus_case();
    const auto am = build_branch_admittance(net);
    CHECK(std::abs(am.y(0, 0) - Complex(0.0, -10.0)) < 1e-12);
    CHECK(std::abs(am.y(0, 1) - Complex(0.0, 10.0)) < 1e-12);
    CHECK(std::abs(am.y(1, 0) - Complex(0.0, 10.0)) < 1e-12);
    CHECK(std::abs(am.y(1, 1) - Complex(0.0, -10.0)) < 1e-12);
}

TEST_CASE("build_admittance: load fold-in adds conj(S)/|V|^2") {
    const auto net = two_bus_case();
    auto am = build_branch_admittance(net);
    add_load_admittance(am, "2", Complex(1.0, 0.0), Complex(1.0, 0.0));
    CHECK(std::abs(am.y(1, 1) - Complex(1.0, -10.0)) < 1e-12);
}

TEST_CASE("build_admittance: 9-bus row sums equal shunt totals per node") {
    const auto net = load_case(kData / "wscc9.json");
    const auto am = build_branch_admittance(net);
    // independent summation: expected row sum at node i is the total charging
    // connected there (taps are all 1 in this case)
    for (std::size_t i = 0; i < am.nodes.size(); ++i) {
        Complex expected{};
        for (const auto& br : net.branches) {
            if (br.from == am.nodes[i] || br.to == am.nodes[i])
                expected += Complex(0.0, br.b_shunt / 2.0);
        }
        Complex row{};
        for (std::size_t j = 0; j < am.nodes.size(); ++j) row += am.y(i, j);
        CHECK(std::abs(row - expected) < 1e-9);
    }
}

TEST_CASE("admittance symmetry for tap = 1 networks") {
    const auto net = load_case(kData / "wscc9.json");
    const auto am = build_branch_admittance(net);
    for (std::size_t i = 0; i < am.nodes.size(); ++i)
        for (std::size_t j = 0; j < am.nodes.size(); ++j)
            CHECK(std::abs(am.y(i, j) - am.y(j, i)) < 1e-12);
}

TEST_CASE("kron_reduce: series chain collapses to the series equivalent") {
    // j0.1 + j0.1 chain, middle node eliminated -> -j5 off-diagonal
    AdmittanceMatrix am;
    am.nodes = {"a", "m", "b"};
    am.y = ComplexMatrix(3, 3);
    const Complex y1(0.0, -10.0); // 1/(j0.1)
    am.y(0, 0) = y1;
    am.y(1, 1) = 2.0 * y1;
    am.y(2, 2) = y1;
    am.y(0, 1) = am.y(1, 0) = -y1;
    am.y(1, 2) = am.y(2, 1) = -y1;

    const auto red = kron_reduce(am, {"a", "b"});
    CHECK(red.nodes.size() == 2);
    CHECK(std::abs(red.y(0, 1) - Complex(0.0, 5.0)) < 1e-12);
    CHECK(std::abs(red.y(0, 0) - Complex(0.0, -5.0)) < 1e-12);
}

TEST_CASE("kron_reduce: retaining all nodes is the identity") {
    const auto net = load_case(kData / "wscc9.json");
    const auto am = build_branch_admittance(net);
    const auto red = kron_reduce(am, am.nodes);
    CHECK(max_abs_diff(red.y, am.y) < 1e-15);
}

TEST_CASE("kron_reduce: eliminating an isolated shunt-only node changes nothing") {
    AdmittanceMatrix am;
    am.nodes = {"a", "b", "iso"};
    am.y = ComplexMatrix(3, 3);
    am.y(0, 0) = Complex(1.0, -5.0);
    am.y(1, 1) = Complex(1.0, -5.0);
    am.y(0, 1) = am.y(1, 0) = Complex(-1.0, 5.0);
    am.y(2, 2) = Complex(0.2, 0.7); // own shunt only, no coupling

    const auto red = kron_reduce(am, {"a", "b"});
    CHECK(std::abs(red.y(0, 0) - am.y(0, 0)) < 1e-12);
    CHECK(std::abs(red.y(0, 1) - am.y(0, 1)) < 1e-12);
    CHECK(std::abs(red.y(1, 1) - am.y(1, 1)) < 1e-12);
}

TEST_CASE("kron_reduce preserves terminal behavior on random 5-node systems") {
    Rng rng = make_rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        // random connected-ish network with shunts so Y_ee is invertible
        AdmittanceMatrix am;
        am.nodes = {"0", "1", "2", "3", "4"};
        am.y = ComplexMatrix(5, 5);
        for (std::size_t i = 0; i < 5; ++i) {
            for (std::size_t j = i + 1; j < 5; ++j) {
                if (uniform_real(rng) < 0.4 && !(i == 0 && j == 1)) continue;
                const Complex ys(0.2 + uniform_real(rng), -(1.0 + 4.0 * uniform_real(rng)));
                am.y(i, j) -= ys;
                am.y(j, i) -= ys;
                am.y(i, i) += ys;
                am.y(j, j) += ys;
            }
            am.y(i, i) += Complex(0.01, 0.05 + 0.2 * uniform_real(rng));
        }
        const std::vector<std::string> retained{"0", "1"};
        const auto red = kron_reduce(am, retained);

        // arbitrary injection at retained nodes, zero elsewhere
        std::vector<Complex> inj_full(5, Complex{});
        inj_full[0] = Complex(1.0 + uniform_real(rng), -0.3);
        inj_full[1] = Complex(-0.4, 0.2 * uniform_real(rng));
        const auto v_full = solve(am.y, inj_full);
        const auto v_red = solve(red.y, std::vector<Complex>{inj_full[0], inj_full[1]});
        CHECK(std::abs(v_full[0] - v_red[0]) < 1e-9);
        CHECK(std::abs(v_full[1] - v_red[1]) < 1e-9);
    }
}

TEST_CASE("kron_reduce: singular eliminated block is reported") {
    AdmittanceMatrix am;
    am.nodes = {"a", "b"};
    am.y = ComplexMatrix(2, 2);
    am.y(0, 0) = Complex(1.0, -3.0); // node b is fully decoupled and shuntless
    CHECK_THROWS_WITH_AS(kron_reduce(am, {"a"}), doctest::Contains("singular"), std::runtime_error);
}

TEST_CASE("apply_fault: two-node system reduces to Y11") {
    const auto net = two_bus_case();
    const auto am = build_branch_admittance(net);
    const auto faulted = apply_fault(am, "2");
    CHECK(faulted.nodes.size() == 1);
    CHECK(faulted.nodes[0] == "1");
    CHECK(std::abs(faulted.y(0, 0) - am.y(0, 0)) < 1e-15);
}

TEST_CASE("apply_fault: unknown bus throws") {
    const auto net = two_bus_case();
    const auto am = build_branch_admittance(net);
    CHECK_THROWS(apply_fault(am, "nope"));
}

TEST_CASE("apply_fault then kron_reduce commutes with reducing the grounded matrix") {
    const auto net = load_case(kData / "wscc9.json");
    const auto am = build_branch_admittance(net);
    const std::vector<std::string> retained{"1", "2", "3"};
    const auto a = kron_reduce(apply_fault(am, "5"), retained);
    const auto b = [&] {
        // same operation spelled as one expression over the grounded matrix
        const auto grounded = apply_fault(am, "5");
        return kron_reduce(grounded, retained);
    }();
    CHECK(max_abs_diff(a.y, b.y) < 1e-9);
}

TEST_CASE("fault with no coupling to the retained set leaves the reduction unchanged") {
    AdmittanceMatrix am;
    am.nodes = {"a", "b", "x"};
    am.y = ComplexMatrix(3, 3);
    const Complex ys(1.0, -8.0);
    am.y(0, 0) = ys + Complex(0.0, 0.02);
    am.y(1, 1) = ys + Complex(0.0, 0.03);
    am.y(0, 1) = am.y(1, 0) = -ys;
    am.y(2, 2) = Complex(0.5, -2.0); // isolated node

    const auto base = kron_reduce(am, {"a", "b"});
    const auto faulted = kron_reduce(apply_fault(am, "x"), {"a", "b"});
    CHECK(max_abs_diff(base.y, faulted.y) < 1e-12);
}
