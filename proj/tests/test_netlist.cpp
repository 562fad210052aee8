#include "fluidlogic/netlist.hpp"

#include <catch_amalgamated.hpp>

#include <fstream>
#include <random>
#include <sstream>

using namespace fluidlogic;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinRel;

namespace {

std::string slurp(const std::string& name) {
    std::ifstream in(std::string(FLUIDLOGIC_DATA_DIR) + "/" + name);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<Diagnostic> diagnostics_of(std::string_view text) {
    auto r = parse(text);
    REQUIRE_FALSE(r.ok());
    return r.diagnostics;
}

bool has(const std::vector<Diagnostic>& d, DiagnosticKind k, int line, const std::string& fragment) {
    for (const auto& x : d) {
        if (x.kind == k && x.line == line && x.message.find(fragment) != std::string::npos) return true;
    }
    return false;
}

constexpr const char* kHeader = "fluid air\natm gnd\n";

}  // namespace

TEST_CASE("reference inverter netlist parses") {
    const auto r = parse(slurp("not_gate.net"));
    REQUIRE(r.ok());
    const auto& c = *r.circuit;
    CHECK(c.fluid == Fluid::air());
    CHECK(c.atmosphere == "gnd");
    CHECK(c.nodes == std::vector<std::string>{"gnd", "n1", "nc", "n2"});
    CHECK(c.count<Supply>() == 1);
    CHECK(c.count<Input>() == 1);
    CHECK(c.count<Valve>() == 1);
    CHECK(c.count<Resistor>() == 1);
    CHECK(c.count<Vent>() == 1);
    const auto& v = *c.elements_of<Valve>().front();
    CHECK(v.flow_in == "n1");
    CHECK(v.flow_out == "n2");
    CHECK(v.control == "nc");
    CHECK(v.params.open_resistance.value == 5.89e7);
    CHECK(v.params.seal_margin.pa == Catch::Approx(190.0));
    CHECK(v.params.tau_open == 0.0);
    CHECK_FALSE(v.params.gain_model.is_prestressed());
    CHECK(c.elements_of<Supply>().front()->pressure.pa == Catch::Approx(1558.0));
    const auto& w = c.waveforms.at("w1");
    CHECK(w.at(0.0).pa == 0.0);
    CHECK(w.at(9.999).pa == 0.0);
    CHECK(w.at(10.0).pa == Catch::Approx(1770.0));
    REQUIRE(c.find_probe("Po") != nullptr);
    CHECK(c.find_probe("Po")->node == "n2");
}

TEST_CASE("all shipped netlists except the malformed one parse") {
    for (const char* f : {"not_gate.net", "not_gate_4cycles.net", "ring3.net"}) {
        INFO(f);
        CHECK(parse(slurp(f)).ok());
    }
    CHECK_FALSE(parse(slurp("bad.net")).ok());
}

TEST_CASE("units are required on pressures and accepted on lengths") {
    auto d = diagnostics_of(std::string(kHeader) + "supply Ps n1 P=1.558\nresistor R n1 gnd R=1e8\n");
    CHECK(has(d, DiagnosticKind::unit, 3, "kPa"));

    auto ok = parse(std::string(kHeader) +
                    "supply Ps a P=2kPa\nchannel C1 a b L=23.5mm w=400um h=0.3mm\nresistor R b gnd R=1e8Pa.s/m3\n");
    REQUIRE(ok.ok());
    const auto& ch = *ok.circuit->elements_of<Channel>().front();
    CHECK(ch.geom.length() == Catch::Approx(0.0235));
    CHECK(ch.geom.width() == Catch::Approx(4e-4));
    CHECK(ch.geom.height() == Catch::Approx(3e-4));
    CHECK(ok.circuit->elements_of<Supply>().front()->pressure.pa == 2000.0);
}

TEST_CASE("diagnostics carry line and column") {
    const std::string text = std::string(kHeader) +
                             "supply Ps n1 P=1kPa\n"
                             "valve V1 flow=n1,n2 ctrl=nc colour=red\n"
                             "resistor Rr n2 gnd R=8.75e8\n";
    auto d = diagnostics_of(text);
    REQUIRE(has(d, DiagnosticKind::lexical, 4, "unknown key 'colour'"));
    for (const auto& x : d) {
        if (x.message.find("colour") != std::string::npos) CHECK(x.column == 29);
    }
    CHECK_THAT(d.front().str(), ContainsSubstring("4:29"));
}

TEST_CASE("structural errors") {
    SECTION("missing atmosphere") {
        auto d = diagnostics_of("fluid air\nsupply Ps a P=1kPa\nresistor R a b R=1e8\nvent b\n");
        CHECK(has(d, DiagnosticKind::missing_atmosphere, 0, "atmosphere"));
    }
    SECTION("duplicate labels") {
        auto d = diagnostics_of(std::string(kHeader) + "supply Ps a P=1kPa\nresistor R a gnd R=1e8\n"
                                                       "resistor R a gnd R=2e8\n");
        CHECK(has(d, DiagnosticKind::duplicate, 5, "'R'"));
    }
    SECTION("duplicate explicit node") {
        auto d = diagnostics_of(std::string(kHeader) + "node a\nnode a\nresistor R a gnd R=1e8\n");
        CHECK(has(d, DiagnosticKind::duplicate, 4, "'a'"));
    }
    SECTION("valve ports must be distinct") {
        auto d = diagnostics_of(std::string(kHeader) + "supply Ps a P=1kPa\nvalve V a,gnd ctrl=a\n");
        CHECK_FALSE(d.empty());
        auto d2 = diagnostics_of(std::string(kHeader) + "supply Ps a P=1kPa\nvalve V flow=a,gnd ctrl=a\n");
        CHECK(has(d2, DiagnosticKind::invalid, 4, "distinct"));
    }
    SECTION("undefined waveform") {
        auto d = diagnostics_of(std::string(kHeader) + "input Pi a wave=w9\nresistor R a gnd R=1e8\n");
        CHECK(has(d, DiagnosticKind::reference, 3, "w9"));
    }
    SECTION("waveform must start at zero and increase") {
        auto d = diagnostics_of(std::string(kHeader) +
                                "input Pi a wave=w\nwave w t=1:P=0kPa t=1:P=1kPa\nresistor R a gnd R=1e8\n");
        CHECK(d.size() >= 1);
    }
    SECTION("node without a pressure reference") {
        auto d = diagnostics_of(std::string(kHeader) + "supply Ps a P=1kPa\nresistor R1 a gnd R=1e8\n"
                                                       "resistor R2 x y R=1e8\n");
        CHECK(has(d, DiagnosticKind::invalid, 0, "no pressure reference"));
    }
    SECTION("two sources on one node") {
        auto d = diagnostics_of(std::string(kHeader) + "supply P1 a P=1kPa\nsupply P2 a P=2kPa\n"
                                                       "resistor R a gnd R=1e8\n");
        CHECK_FALSE(d.empty());
    }
    SECTION("negative resistance") {
        auto d = diagnostics_of(std::string(kHeader) + "supply Ps a P=1kPa\nresistor R a gnd R=-5\n");
        CHECK_FALSE(d.empty());
    }
    SECTION("probe on an unknown node") {
        auto d = diagnostics_of(std::string(kHeader) + "supply Ps a P=1kPa\nresistor R a gnd R=1e8\nprobe P zz\n");
        CHECK_FALSE(d.empty());
    }
}

TEST_CASE("elaboration converts channels to resistors") {
    const auto r = parse(std::string(kHeader) + "supply Ps a P=1kPa\n"
                                                "channel Cr a gnd L=0.023554161120389379336m w=0.4mm h=0.3mm\n");
    REQUIRE(r.ok());
    const auto ec = elaborate(*r.circuit);
    REQUIRE(ec.circuit().count<Channel>() == 0);
    REQUIRE(ec.circuit().count<Resistor>() == 1);
    const auto& res = *ec.circuit().elements_of<Resistor>().front();
    CHECK(res.label == "Cr");
    CHECK_THAT(res.resistance.value, WithinRel(8.75e8, 1e-6));
}

TEST_CASE("elaboration rejects invalid circuits") {
    Circuit c;
    c.add(Resistor{"R", "a", "b", Resistance{1e8}});
    CHECK_THROWS_AS(elaborate(c), InvalidCircuit);
}

TEST_CASE("serialize then parse reproduces the fixture") {
    const auto a = parse(slurp("not_gate_4cycles.net"));
    REQUIRE(a.ok());
    const auto text = serialize(*a.circuit);
    const auto b = parse(text);
    INFO(text);
    REQUIRE(b.ok());
    CHECK(*b.circuit == *a.circuit);
    CHECK(serialize(*b.circuit) == text);
}

TEST_CASE("round trip over 200 random circuits") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        Circuit c;
        const int pick = trial % 3;
        c.fluid = pick == 0 ? Fluid::air() : pick == 1 ? Fluid::water() : Fluid{"custom", 1e-4 * (1 + u(rng))};
        c.set_atmosphere("gnd");
        const int n = 2 + static_cast<int>(u(rng) * 6);
        std::vector<std::string> nodes{"gnd"};
        for (int i = 0; i < n; ++i) {
            const auto name = "n" + std::to_string(i);
            const auto& parent = nodes[static_cast<std::size_t>(u(rng) * nodes.size())];
            if (u(rng) < 0.5) {
                c.add(Resistor{"R" + std::to_string(i), name, parent, Resistance{1e7 + 1e9 * u(rng)}});
            } else {
                c.add(Channel{"C" + std::to_string(i), name, parent,
                              ChannelGeometry(1e-3 + 0.05 * u(rng), 1e-5 + 1e-3 * u(rng), 1e-5 + 1e-3 * u(rng))});
            }
            nodes.push_back(name);
        }
        c.add(Supply{"Ps", "n0", Pressure{1000.0 + 5000.0 * u(rng)}});
        if (n > 2) {
            Waveform w;
            double t = 0.0;
            for (int k = 0; k < 3; ++k) {
                w.steps.push_back(WaveStep{t, Pressure{3000.0 * u(rng)}});
                t += 0.1 + 10.0 * u(rng);
            }
            c.waveforms["w"] = w;
            c.add(Input{"Pi", "n1", "w"});
        }
        const auto a = nodes[1 + static_cast<std::size_t>(u(rng) * n)];
        auto b = nodes[static_cast<std::size_t>(u(rng) * (n + 1))];
        if (b == a) b = "gnd";
        std::string ctrl = "n" + std::to_string(n - 1);
        if (ctrl == a || ctrl == b) ctrl = "vc";
        ValveParams p;
        p.open_resistance = Resistance{1e6 + 1e8 * u(rng)};
        p.seal_margin = Pressure{500.0 * u(rng)};
        p.tau_close = 3.0 * u(rng);
        p.tau_open = u(rng) < 0.5 ? 0.0 : u(rng);
        if (u(rng) < 0.3) p.gain_model = GainModel::pre_stressed(1.0 + u(rng));
        c.add(Valve{"V", a, b, ctrl, p});
        if (ctrl == "vc") c.add(Resistor{"Rvc", "vc", "gnd", Resistance{1e8}});
        if (u(rng) < 0.5) c.add(Vent{"gnd"});
        c.add_probe("P" + std::to_string(trial), nodes.back());

        REQUIRE(validate(c).empty());
        const auto text = serialize(c);
        const auto parsed = parse(text);
        INFO(text);
        for (const auto& d : parsed.diagnostics) INFO(d.str());
        REQUIRE(parsed.ok());
        CHECK(*parsed.circuit == c);
    }
}
