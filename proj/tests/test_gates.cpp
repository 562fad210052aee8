#include "fluidlogic/gate_io.hpp"
#include "fluidlogic/gates.hpp"
#include "oracle.hpp"

#include <catch_amalgamated.hpp>

#include <fstream>
#include <random>
#include <sstream>

using namespace fluidlogic;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::string slurp(const std::string& name) {
    std::ifstream in(std::string(FLUIDLOGIC_DATA_DIR) + "/" + name);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

GateSpec kind_of(GateSpec s, GateKind k, Composition c = Composition::direct) {
    s.kind = k;
    s.composition = c;
    return s;
}

GateSpec latch_spec(Composition c = Composition::direct) {
    auto s = kind_of(calibrated_not_spec(), GateKind::SR_LATCH, c);
    s.valve.gain_model = GainModel::pre_stressed(1.75);
    return s;
}

const LogicLevels kReferenceLevels{Pressure{0.0}, reference_device::input_high};

std::vector<int> q_bits(const std::vector<LatchStep>& steps) {
    std::vector<int> out;
    for (const auto& s : steps) out.push_back(s.q ? int(*s.q) : -1);
    return out;
}

}  // namespace

TEST_CASE("calibration against the measured inverter levels") {
    const auto cal = calibrate({Pressure{1770.0}, Pressure{1460.0}, 2.7}, Resistance{8.75e8}, Resistance{5.89e7});
    CHECK_THAT(cal.supply.pa, WithinRel(1558.27885714286, 1e-12));
    CHECK_THAT(cal.seal_margin.pa, WithinRel(211.72114285714, 1e-10));
    CHECK_THAT(cal.tau_close, WithinRel(1.1725951011387798, 1e-14));
}

TEST_CASE("calibration boundaries") {
    const Resistance rr{8.75e8}, rs{5.89e7};
    const double supply = 1460.0 * (8.75e8 + 5.89e7) / 8.75e8;
    const auto edge = calibrate({Pressure{supply}, Pressure{1460.0}, 1.0}, rr, rs);
    CHECK(edge.seal_margin.pa == 0.0);
    CHECK_THROWS_AS(calibrate({Pressure{1500.0}, Pressure{1460.0}, 1.0}, rr, rs), CalibrationInfeasible);
    CHECK_THROWS_AS(calibrate({Pressure{-1.0}, Pressure{1460.0}, 1.0}, rr, rs), std::invalid_argument);
}

TEST_CASE("calibration inverts a forward simulation") {
    GateSpec s;
    s.supply = Pressure{2000.0};
    s.pull_up = Resistance{6e8};
    s.valve.open_resistance = Resistance{4e7};
    s.valve.seal_margin = Pressure{150.0};
    const auto g = synthesize(s);
    const auto ec = elaborate(g.circuit);
    const double p_o = expect_stable(solve_static(ec, {{"Pi", Pressure{0.0}}})).probe("Po").pa;
    const double p_i = closing_requirement(s).pa;
    const auto cal = calibrate({Pressure{p_i}, Pressure{p_o}, 0.5 * std::log(10.0)}, s.pull_up, s.valve.open_resistance);
    CHECK_THAT(cal.supply.pa, WithinRel(2000.0, 1e-12));
    CHECK_THAT(cal.seal_margin.pa, WithinRel(150.0, 1e-10));
    CHECK_THAT(cal.tau_close, WithinRel(0.5, 1e-14));
}

TEST_CASE("inverter synthesis reproduces the reference netlist") {
    GateSpec s;
    s.supply = Pressure{1558.0};
    s.pull_up = Resistance{8.75e8};
    s.valve.open_resistance = Resistance{5.89e7};
    s.valve.seal_margin = Pressure{190.0};
    s.valve.tau_close = 1.1725951011387798;
    const auto g = synthesize(s);
    auto fixture = *parse(slurp("not_gate.net")).circuit;
    fixture.waveforms["w1"] = Waveform::constant(Pressure{0.0});
    CHECK(g.circuit == fixture);
    CHECK(g.inputs == std::vector<std::string>{"Pi"});
    CHECK(g.output() == "Po");
}

TEST_CASE("synthesized topologies") {
    const auto base = calibrated_not_spec();
    auto counts = [](const GateCircuit& g) {
        return std::pair{g.circuit.count<Valve>(), g.circuit.count<Resistor>()};
    };
    CHECK(counts(synthesize(base)) == std::pair<std::size_t, std::size_t>{1, 1});
    CHECK(counts(synthesize(kind_of(base, GateKind::NAND))) == std::pair<std::size_t, std::size_t>{2, 1});
    CHECK(counts(synthesize(kind_of(base, GateKind::NOR))) == std::pair<std::size_t, std::size_t>{2, 1});
    CHECK(counts(synthesize(latch_spec())) == std::pair<std::size_t, std::size_t>{4, 2});
    CHECK(counts(synthesize(kind_of(base, GateKind::NAND, Composition::not_gates))) ==
          std::pair<std::size_t, std::size_t>{2, 2});

    // NAND valves share both ends; NOR valves chain through a middle node.
    const auto nand = synthesize(kind_of(base, GateKind::NAND)).circuit.elements_of<Valve>();
    CHECK(nand[0]->flow_in == nand[1]->flow_in);
    CHECK(nand[0]->flow_out == nand[1]->flow_out);
    const auto nor = synthesize(kind_of(base, GateKind::NOR)).circuit.elements_of<Valve>();
    CHECK(nor[0]->flow_out == nor[1]->flow_in);

    // Latch outputs feed the opposite NOR.
    const auto latch = synthesize(latch_spec());
    CHECK(latch.outputs == std::vector<std::string>{"Q", "Qn"});
    std::map<std::string, std::string> ctrl;
    for (const auto* v : latch.circuit.elements_of<Valve>()) ctrl[v->label] = v->control;
    CHECK(ctrl["VQ"] == latch.circuit.find_probe("Q")->node);
    CHECK(ctrl["VQn"] == latch.circuit.find_probe("Qn")->node);
}

TEST_CASE("spec validation") {
    auto s = calibrated_not_spec();
    s.supply = Pressure{-1.0};
    CHECK_THROWS_AS(synthesize(s), InvalidGateSpec);
    s = calibrated_not_spec();
    s.logic_threshold = Pressure{5000.0};
    CHECK_THROWS_AS(synthesize(s), InvalidGateSpec);
    s.logic_threshold = Pressure{500.0};
    CHECK_NOTHROW(synthesize(s));
    CHECK_THROWS_AS(truth_table(calibrated_not_spec(), {Pressure{0.0}, Pressure{1500.0}}), std::invalid_argument);
}

TEST_CASE("inverter truth table") {
    const auto t = truth_table(calibrated_not_spec(), kReferenceLevels);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].output == true);
    CHECK(t.rows[1].output == false);
    CHECK_THAT(t.rows[0].output_pressure.pa, WithinRel(1460.0, 1e-12));
    CHECK(t.rows[1].output_pressure.pa == 0.0);
    CHECK_THAT(t.threshold.pa, WithinRel(730.0, 1e-12));
    CHECK(t.matches());
}

TEST_CASE("NAND and NOR on a descending rail") {
    for (auto comp : {Composition::direct, Composition::not_gates}) {
        for (auto k : {GateKind::NAND, GateKind::NOR}) {
            const auto plan = plan_cascade({calibrated_not_spec(), kind_of(calibrated_not_spec(), k, comp)},
                                           CascadeStrategy::descending_rails);
            REQUIRE(plan.feasible);
            const auto t = truth_table(plan.stages[1].spec, {Pressure{0.0}, plan.stages[0].output_high});
            INFO(to_string(k) << (comp == Composition::direct ? " direct" : " not_gates"));
            REQUIRE(t.rows.size() == 4);
            CHECK(t.matches());
            if (k == GateKind::NAND) {
                CHECK(t.rows[0].output);
                CHECK_FALSE(t.rows[3].output);
            } else {
                CHECK(t.rows[0].output);
                CHECK_FALSE(t.rows[1].output);
            }
        }
    }
}

TEST_CASE("NAND with both inputs low is high at the nominal rail") {
    const auto t = truth_table(kind_of(calibrated_not_spec(), GateKind::NAND), kReferenceLevels);
    CHECK(t.rows[0].inputs == std::vector<bool>{false, false});
    CHECK(t.rows[0].output);
    CHECK(t.matches());
}

TEST_CASE("latch sequences") {
    for (auto comp : {Composition::direct, Composition::not_gates}) {
        const auto spec = latch_spec(comp);
        const std::vector<std::pair<bool, bool>> seq{{true, false}, {false, false}, {false, true}, {false, false}};
        CHECK(q_bits(latch_sequence(spec, seq, kReferenceLevels)) == std::vector<int>{1, 1, 0, 0});
        const std::vector<std::pair<bool, bool>> hold{{false, false}};
        CHECK(q_bits(latch_sequence(spec, hold, kReferenceLevels, false)) == std::vector<int>{0});
        CHECK(q_bits(latch_sequence(spec, hold, kReferenceLevels, true)) == std::vector<int>{1});
        const std::vector<std::pair<bool, bool>> both{{true, true}};
        CHECK(q_bits(latch_sequence(spec, both, kReferenceLevels)) == std::vector<int>{-1});
        const auto t = truth_table(spec, kReferenceLevels);
        CHECK(t.rows.size() == 8);
        CHECK(t.matches());
    }
}

TEST_CASE("both latch states are fixed points of the exhaustive oracle") {
    const auto g = synthesize(latch_spec());
    const InputLevels released{{"S", Pressure{0.0}}, {"R", Pressure{0.0}}};
    const auto fps = oracle::fixed_points(g.circuit, released);
    std::vector<ValveStates> oracle_states;
    for (const auto& fp : fps) oracle_states.push_back(oracle::as_states(g.circuit, fp));
    const auto ec = elaborate(g.circuit);
    for (bool q : {false, true}) {
        const auto seed = latch_states(q);
        CHECK(std::find(oracle_states.begin(), oracle_states.end(), seed) != oracle_states.end());
        const auto s = expect_stable(solve_static(ec, released, seed));
        CHECK(s.valve_states() == seed);
        CHECK((s.probe("Q").pa > logic_threshold(latch_spec()).pa) == q);
    }
    CHECK(fps.size() == 2);
}

TEST_CASE("standard-gain latch cannot hold a set state") {
    auto spec = latch_spec();
    spec.valve.gain_model = GainModel::standard();
    const auto g = synthesize(spec);
    const InputLevels released{{"S", Pressure{0.0}}, {"R", Pressure{0.0}}};
    const auto fps = oracle::fixed_points(g.circuit, released);
    REQUIRE(fps.size() == 1);
    for (bool closed : fps.front().closed) CHECK_FALSE(closed);
}

TEST_CASE("measured gain of the calibrated inverter") {
    const auto r = measure_gain(calibrated_not_spec(), {Pressure{0.0}, Pressure{10000.0}});
    CHECK_THAT(r.gain, WithinAbs(0.825, 0.01));
    CHECK_THAT(r.p_o_high.pa, WithinRel(1460.0, 1e-12));
    CHECK(r.p_i_high_min.pa >= 1770.0 * (1 - 1e-12));
    CHECK(r.p_i_high_min.pa <= 1771.0);
    CHECK(r.gain * r.p_i_high_min.pa == Catch::Approx(r.p_o_high.pa).epsilon(1e-15));
}

TEST_CASE("seal-free gain approaches the divider ratio from below") {
    auto s = calibrated_not_spec();
    s.valve.seal_margin = Pressure{0.0};
    const auto r = measure_gain(s, {Pressure{0.0}, Pressure{10000.0}});
    const double ratio = 8.75e8 / (8.75e8 + 5.89e7);
    CHECK_THAT(r.gain, WithinAbs(0.937, 0.001));
    CHECK(r.gain <= ratio);
    CHECK_THAT(r.theoretical_gain, WithinAbs(ratio, 1e-3));
}

TEST_CASE("gain is invariant to resistance scale") {
    auto s = calibrated_not_spec();
    const auto a = measure_gain(s, {Pressure{0.0}, Pressure{10000.0}});
    s.pull_up = s.pull_up * 2.0;
    s.valve.open_resistance = s.valve.open_resistance * 2.0;
    const auto b = measure_gain(s, {Pressure{0.0}, Pressure{10000.0}});
    CHECK_THAT(b.gain, WithinRel(a.gain, 1e-12));
}

TEST_CASE("gain bracket must straddle the switching point") {
    const auto s = calibrated_not_spec();
    CHECK_THROWS_AS(measure_gain(s, {Pressure{2000.0}, Pressure{3000.0}}), BracketInvalid);
    CHECK_THROWS_AS(measure_gain(s, {Pressure{0.0}, Pressure{100.0}}), BracketInvalid);
    CHECK_THROWS_AS(measure_gain(s, {Pressure{3000.0}, Pressure{0.0}}), BracketInvalid);
}

TEST_CASE("cascade strategies for two calibrated inverters") {
    const auto n = calibrated_not_spec();
    const auto same = plan_cascade({n, n}, CascadeStrategy::same_rail);
    CHECK_FALSE(same.feasible);
    REQUIRE(same.first_failing_stage);
    CHECK(*same.first_failing_stage == 1);
    CHECK_THAT(same.stages[0].output_high.pa, WithinRel(1460.0, 1e-12));
    CHECK_THAT(same.stages[1].closing_requirement.pa, WithinRel(1770.0, 1e-12));
    CHECK_THAT(same.stages[1].slack->pa, WithinRel(-310.0, 1e-9));
    CHECK_FALSE(verify_cascade(same).passed);

    const auto desc = plan_cascade({n, n}, CascadeStrategy::descending_rails);
    CHECK(desc.feasible);
    CHECK(desc.rail(1).pa <= 1460.0 / 1.05);
    CHECK(desc.stages[1].slack->pa >= 0.05 * desc.rail(1).pa * (1 - 1e-12));
    const auto check = verify_cascade(desc);
    CHECK(check.passed);
    REQUIRE(check.table.rows.size() == 2);
    CHECK(check.table.rows[0].output == false);  // NOT(NOT(0)) = 0
    CHECK(check.table.rows[1].output == true);

    const auto hg = plan_cascade({n, n}, CascadeStrategy::high_gain_valves);
    CHECK(hg.feasible);
    CHECK(hg.rail(0) == hg.rail(1));
    CHECK_THAT(hg.stages[1].closing_requirement.pa, WithinRel(1770.0 / 1.75, 1e-12));
    CHECK(verify_cascade(hg).passed);
}

TEST_CASE("inverted NAND behaves as AND") {
    const auto n = calibrated_not_spec();
    const auto plan = plan_cascade({kind_of(n, GateKind::NAND), n}, CascadeStrategy::descending_rails);
    REQUIRE(plan.feasible);
    const auto check = verify_cascade(plan);
    CHECK(check.passed);
    for (const auto& r : check.table.rows) CHECK(r.output == (r.inputs[0] && r.inputs[1]));
}

TEST_CASE("every feasible plan passes the end-to-end check") {
    std::mt19937_64 rng(11);
    const std::array kinds{GateKind::NOT, GateKind::NAND, GateKind::NOR};
    const std::array strategies{CascadeStrategy::same_rail, CascadeStrategy::descending_rails,
                                CascadeStrategy::high_gain_valves};
    int feasible = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t len = 2 + rng() % 3;
        std::vector<GateSpec> stages;
        for (std::size_t k = 0; k < len; ++k) {
            stages.push_back(kind_of(calibrated_not_spec(), kinds[rng() % 3],
                                     rng() % 2 ? Composition::direct : Composition::not_gates));
        }
        const auto plan = plan_cascade(stages, strategies[rng() % 3]);
        if (!plan.feasible) continue;
        ++feasible;
        INFO("trial " << trial);
        CHECK(verify_cascade(plan).passed);
    }
    CHECK(feasible > 10);
}

TEST_CASE("cascade preconditions") {
    const auto n = calibrated_not_spec();
    CHECK_THROWS_AS(plan_cascade({n}, CascadeStrategy::same_rail), std::invalid_argument);
    CHECK_THROWS_AS(plan_cascade({n, latch_spec()}, CascadeStrategy::same_rail), InvalidGateSpec);
}

TEST_CASE("gate spec JSON round trip") {
    auto s = latch_spec(Composition::not_gates);
    s.logic_threshold = Pressure{600.0};
    const auto back = gate_spec_from_json(nlohmann::json::parse(to_json(s).dump()));
    CHECK(back.kind == s.kind);
    CHECK(back.supply == s.supply);
    CHECK(back.pull_up == s.pull_up);
    CHECK(back.valve == s.valve);
    CHECK(back.logic_threshold == s.logic_threshold);
    CHECK(back.composition == s.composition);
    CHECK_THROWS_AS(gate_spec_from_json(nlohmann::json::parse(R"({"kind":"XOR","supply_Pa":1})")), InvalidGateSpec);
    CHECK_THROWS_AS(gate_spec_from_json(nlohmann::json::parse(R"({"kind":"NOT"})")), InvalidGateSpec);
    const auto file = gate_spec_from_json(nlohmann::json::parse(slurp("nand_gate.json")));
    CHECK(file.kind == GateKind::NAND);
}

TEST_CASE("truth table text and CSV") {
    const auto t = truth_table(calibrated_not_spec(), kReferenceLevels);
    std::ostringstream csv;
    write_truth_table_csv(csv, t);
    CHECK(csv.str() == "Pi,Po,Po_Pa,expected\n0,1,1460,1\n1,0,0,0\n");
    std::ostringstream txt;
    write_truth_table_text(txt, t);
    CHECK(txt.str().find("NOT") == 0);
}
