#pragma once

// Gate-level layer: netlist synthesis for NOT / NAND / NOR / SR latch,
// truth-table and latch-sequence evaluation, gain measurement, calibration
// against measured logic levels, and multi-stage cascade planning.
//
// Every gate follows the same pattern: valves sit on the flow path between a
// supply rail and the output node, and a pull-up channel drains the output to
// atmosphere. The output is high while a flow path is open, so a single valve
// inverts its control input. Valves in parallel give NAND, valves in series
// give NOR.

#include "fluidlogic/format.hpp"
#include "fluidlogic/netlist.hpp"
#include "fluidlogic/solver.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fluidlogic {

enum class GateKind { NOT, NAND, NOR, SR_LATCH };

inline const char* to_string(GateKind k) {
    switch (k) {
        case GateKind::NOT: return "NOT";
        case GateKind::NAND: return "NAND";
        case GateKind::NOR: return "NOR";
        case GateKind::SR_LATCH: return "SR_LATCH";
    }
    return "?";
}

inline std::optional<GateKind> gate_kind_from_string(std::string_view s) {
    std::string lower;
    for (char ch : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (lower == "not") return GateKind::NOT;
    if (lower == "nand") return GateKind::NAND;
    if (lower == "nor") return GateKind::NOR;
    if (lower == "sr-latch" || lower == "sr_latch" || lower == "latch") return GateKind::SR_LATCH;
    return std::nullopt;
}

/// How multi-input gates are wired. `direct` puts the valves in parallel
/// (NAND) or series (NOR) under one pull-up. `not_gates` builds them from
/// complete inverters: NAND ties two inverter outputs together, NOR powers
/// the second inverter from the first one's output.
enum class Composition { direct, not_gates };

struct GateSpec {
    GateKind kind = GateKind::NOT;
    Pressure supply;
    Resistance pull_up;
    ValveParams valve;
    std::optional<Pressure> logic_threshold;  // half the logic-high output when unset
    Composition composition = Composition::direct;
};

class InvalidGateSpec : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Values reported for the fabricated inverter: pull-up and open supply-path
/// resistances, measured logic-high input and output, and closing delay.
namespace reference_device {
inline constexpr Resistance pull_up{8.75e8};
inline constexpr Resistance supply_path{5.89e7};
inline constexpr Pressure input_high{1770.0};
inline constexpr Pressure output_high{1460.0};
inline constexpr double closing_delay = 2.7;  // s
}  // namespace reference_device

inline std::size_t input_count(GateKind k) { return k == GateKind::NOT ? 1 : 2; }

/// Boolean function of a combinational gate.
inline bool gate_function(GateKind k, std::span<const bool> in) {
    switch (k) {
        case GateKind::NOT: return !in[0];
        case GateKind::NAND: return !(in[0] && in[1]);
        case GateKind::NOR: return !(in[0] || in[1]);
        case GateKind::SR_LATCH: break;
    }
    throw std::invalid_argument("SR latch has no combinational function");
}

/// A synthesized circuit plus the names needed to drive and read it.
struct GateCircuit {
    Circuit circuit;
    std::vector<std::string> inputs;   // input labels, truth-table order
    std::vector<std::string> outputs;  // probe labels; the first is the gate output
    const std::string& output() const { return outputs.front(); }
};

namespace detail {

struct GatePorts {
    std::vector<std::string> inputs;
    std::string output_node;
    std::string output_probe;
};

/// Appends one gate to `c`. With `driver` set, every control port is tied to
/// that node instead of getting its own input source.
class GateBuilder {
public:
    GateBuilder(Circuit& c, const GateSpec& spec, std::string prefix, std::optional<std::string> driver)
        : c_(c), spec_(spec), prefix_(std::move(prefix)), driver_(std::move(driver)) {}

    GatePorts build() {
        switch (spec_.kind) {
            case GateKind::NOT: return build_not();
            case GateKind::NAND:
            case GateKind::NOR: return build_two_input();
            case GateKind::SR_LATCH: return build_latch();
        }
        throw std::logic_error("unreachable");
    }

private:
    std::string n(const std::string& name) const { return prefix_ + name; }

    void supply(const std::string& node) { c_.add(Supply{n("Ps"), n(node), spec_.supply}); }

    // Returns the control node for a logical input.
    std::string input(const std::string& label, const std::string& node, const std::string& wave) {
        if (driver_) return *driver_;
        c_.waveforms[n(wave)] = Waveform::constant(Pressure{0.0});
        c_.add(Input{n(label), n(node), n(wave)});
        ports_.inputs.push_back(n(label));
        return n(node);
    }

    void valve(const std::string& label, const std::string& from, const std::string& to, const std::string& ctrl) {
        c_.add(Valve{n(label), from, to, ctrl, spec_.valve});
    }

    void pull_up(const std::string& label, const std::string& node) {
        c_.add(Resistor{n(label), node, c_.atmosphere, spec_.pull_up});
    }

    void output(const std::string& probe, const std::string& node) {
        ports_.output_node = node;
        ports_.output_probe = n(probe);
        c_.add_probe(n(probe), node);
    }

    GatePorts build_not() {
        supply("n1");
        const auto ctrl = input("Pi", "nc", "w1");
        valve("V1", n("n1"), n("n2"), ctrl);
        pull_up("Rr", n("n2"));
        output("Po", n("n2"));
        return ports_;
    }

    // Two-input block between `rail` and `out`; names get `tag` appended.
    void two_input_block(GateKind kind, const std::string& rail, const std::array<std::string, 2>& ctrl,
                         const std::array<std::string, 2>& valve_labels, const std::string& out,
                         const std::string& tag) {
        const bool nand = kind == GateKind::NAND;
        if (spec_.composition == Composition::direct) {
            if (nand) {
                valve(valve_labels[0], rail, out, ctrl[0]);
                valve(valve_labels[1], rail, out, ctrl[1]);
            } else {
                const auto mid = n("nm" + tag);
                valve(valve_labels[0], rail, mid, ctrl[0]);
                valve(valve_labels[1], mid, out, ctrl[1]);
            }
            pull_up("Rr" + tag, out);
        } else if (nand) {
            valve(valve_labels[0], rail, out, ctrl[0]);
            pull_up("RrA" + tag, out);
            valve(valve_labels[1], rail, out, ctrl[1]);
            pull_up("RrB" + tag, out);
        } else {
            const auto first = n("no" + tag);
            valve(valve_labels[0], rail, first, ctrl[0]);
            pull_up("RrA" + tag, first);
            valve(valve_labels[1], first, out, ctrl[1]);
            pull_up("RrB" + tag, out);
        }
    }

    GatePorts build_two_input() {
        supply("n1");
        const auto a = input("A", "na", "wA");
        const auto b = input("B", "nb", "wB");
        two_input_block(spec_.kind, n("n1"), {a, b}, {"VA", "VB"}, n("n2"), "");
        output("Y", n("n2"));
        return ports_;
    }

    // Cross-coupled NOR pair: Q = NOR(R, Qn), Qn = NOR(S, Q).
    GatePorts build_latch() {
        if (driver_) throw InvalidGateSpec("an SR latch cannot be a driven cascade stage");
        supply("n1");
        const auto s = input("S", "ns", "wS");
        const auto r = input("R", "nr", "wR");
        const auto q = n("q");
        const auto qn = n("qn");
        two_input_block(GateKind::NOR, n("n1"), {r, qn}, {"VR", "VQn"}, q, "Q");
        two_input_block(GateKind::NOR, n("n1"), {s, q}, {"VS", "VQ"}, qn, "Qn");
        output("Q", q);
        c_.add_probe(n("Qn"), qn);
        return ports_;
    }

    Circuit& c_;
    const GateSpec& spec_;
    std::string prefix_;
    std::optional<std::string> driver_;
    GatePorts ports_;
};

inline GateCircuit standalone(const GateSpec& spec) {
    GateCircuit g;
    g.circuit.set_atmosphere("gnd");
    auto ports = GateBuilder(g.circuit, spec, "", std::nullopt).build();
    g.circuit.add(Vent{"gnd"});
    g.inputs = ports.inputs;
    for (const auto& p : g.circuit.probes) g.outputs.push_back(p.label);
    return g;
}

inline bool is_finite_positive(double x) { return std::isfinite(x) && x > 0.0; }

}  // namespace detail

/// Worst-case logic-high output as a fraction of the supply: the lowest
/// output over input rows whose expected output is 1, with high inputs
/// driven hard enough to seal their valves.
inline double output_high_ratio(const GateSpec& spec) {
    GateSpec probe_spec = spec;
    probe_spec.logic_threshold.reset();
    if (spec.kind == GateKind::SR_LATCH) probe_spec.kind = GateKind::NOR;
    const auto g = detail::standalone(probe_spec);
    const Network net(elaborate(g.circuit));
    const Pressure strong =
        Pressure{4.0 * (spec.supply.pa + spec.valve.seal_margin.pa) / spec.valve.gain_model.factor() + 1.0};
    const std::size_t k = g.inputs.size();
    double ratio = std::numeric_limits<double>::infinity();
    for (unsigned row = 0; row < (1u << k); ++row) {
        bool in[2] = {false, false};
        InputLevels levels;
        for (std::size_t i = 0; i < k; ++i) {
            in[i] = (row >> (k - 1 - i)) & 1u;
            levels[g.inputs[i]] = in[i] ? strong : Pressure{0.0};
        }
        if (!gate_function(probe_spec.kind, std::span<const bool>(in, k))) continue;
        const auto sol = expect_stable(solve_static(net, levels));
        ratio = std::min(ratio, sol.probe(g.output()).pa / spec.supply.pa);
    }
    return ratio;
}

inline Pressure output_high(const GateSpec& spec) { return spec.supply * output_high_ratio(spec); }

/// Control pressure that seals a valve whose flow side sits at the rail.
inline Pressure closing_requirement(const GateSpec& spec) {
    return (spec.supply + spec.valve.seal_margin) / spec.valve.gain_model.factor();
}

inline Pressure logic_threshold(const GateSpec& spec) {
    return spec.logic_threshold.value_or(output_high(spec) * 0.5);
}

inline void validate_spec(const GateSpec& spec) {
    if (!detail::is_finite_positive(spec.supply.pa)) throw InvalidGateSpec("gate supply must be > 0");
    if (!detail::is_finite_positive(spec.pull_up.value)) throw InvalidGateSpec("pull-up resistance must be > 0");
    const auto& v = spec.valve;
    if (!detail::is_finite_positive(v.open_resistance.value)) throw InvalidGateSpec("valve Ropen must be > 0");
    if (!(std::isfinite(v.seal_margin.pa) && v.seal_margin.pa >= 0.0)) throw InvalidGateSpec("seal margin must be >= 0");
    if (!(v.tau_close >= 0.0 && v.tau_open >= 0.0)) throw InvalidGateSpec("valve time constants must be >= 0");
    if (v.gain_model.is_prestressed() && !detail::is_finite_positive(v.gain_model.factor())) {
        throw InvalidGateSpec("valve gain factor must be > 0");
    }
    if (spec.logic_threshold) {
        const auto high = output_high(spec);
        if (!(spec.logic_threshold->pa > 0.0 && *spec.logic_threshold < high)) {
            throw InvalidGateSpec("logic threshold must lie strictly between 0 and the output high level (" +
                                  format_number(high.pa, 6) + " Pa)");
        }
    }
}

/// Builds the gate's netlist. Inputs are driven by constant-0 waveforms.
inline GateCircuit synthesize(const GateSpec& spec) {
    validate_spec(spec);
    auto g = detail::standalone(spec);
    if (auto diags = validate(g.circuit); !diags.empty()) throw InvalidCircuit(std::move(diags));
    return g;
}

struct LogicLevels {
    Pressure low{0.0};
    Pressure high;
};

struct TruthRow {
    std::vector<bool> inputs;
    bool output = false;
    Pressure output_pressure;
    std::optional<bool> expected;  // empty for rows with no defined value
};

struct TruthTable {
    std::string title;
    std::vector<std::string> input_labels;
    std::string output_label;
    Pressure threshold;
    std::vector<TruthRow> rows;

    bool matches() const {
        return std::all_of(rows.begin(), rows.end(),
                           [](const TruthRow& r) { return !r.expected || *r.expected == r.output; });
    }
};

using BooleanFunction = std::function<bool(std::span<const bool>)>;

/// Solves a combinational circuit for every input combination (first input
/// is the most significant bit) and reads the output against `threshold`.
inline TruthTable evaluate_truth_table(const GateCircuit& g, LogicLevels levels, Pressure threshold,
                                       const BooleanFunction& expected) {
    const Network net(elaborate(g.circuit));
    TruthTable table;
    table.input_labels = g.inputs;
    table.output_label = g.output();
    table.threshold = threshold;
    const std::size_t k = g.inputs.size();
    if (k > 8) throw std::invalid_argument("truth tables are limited to 8 inputs");
    for (unsigned row = 0; row < (1u << k); ++row) {
        TruthRow r;
        InputLevels in;
        std::array<bool, 8> raw{};  // vector<bool> cannot back a span
        for (std::size_t i = 0; i < k; ++i) {
            const bool bit = (row >> (k - 1 - i)) & 1u;
            r.inputs.push_back(bit);
            raw[i] = bit;
            in[g.inputs[i]] = bit ? levels.high : levels.low;
        }
        const auto sol = expect_stable(solve_static(net, in));
        r.output_pressure = sol.probe(g.output());
        r.output = r.output_pressure > threshold;
        r.expected = expected(std::span<const bool>(raw.data(), k));
        table.rows.push_back(std::move(r));
    }
    return table;
}

struct LatchStep {
    bool set = false;
    bool reset = false;
    std::optional<bool> q;  // empty when S and R are both asserted
    Pressure q_pressure;
    Pressure qn_pressure;
    ValveStates states;
};

/// Valve states of a latch holding `q` with both inputs released.
inline ValveStates latch_states(bool q) {
    return ValveStates{{"VR", ValveState::open},
                       {"VS", ValveState::open},
                       {"VQn", q ? ValveState::open : ValveState::closed},
                       {"VQ", q ? ValveState::closed : ValveState::open}};
}

/// Applies (S, R) events in order; each step's converged valve states seed
/// the next solve. Throws NoStableStateError when a step has no fixed point
/// reachable from the previous state.
inline std::vector<LatchStep> latch_sequence(const GateSpec& spec, std::span<const std::pair<bool, bool>> events,
                                             LogicLevels levels, bool initial_q = false) {
    if (spec.kind != GateKind::SR_LATCH) throw InvalidGateSpec("latch_sequence needs an SR latch spec");
    const auto g = synthesize(spec);
    const Network net(elaborate(g.circuit));
    const Pressure threshold = logic_threshold(spec);
    ValveStates states = latch_states(initial_q);
    std::vector<LatchStep> out;
    for (const auto& [s, r] : events) {
        const InputLevels in{{"S", s ? levels.high : levels.low}, {"R", r ? levels.high : levels.low}};
        const auto sol = expect_stable(solve_static(net, in, states));
        LatchStep step;
        step.set = s;
        step.reset = r;
        step.q_pressure = sol.probe("Q");
        step.qn_pressure = sol.probe("Qn");
        if (!(s && r)) step.q = step.q_pressure > threshold;
        step.states = sol.valve_states();
        states = step.states;
        out.push_back(std::move(step));
    }
    return out;
}

enum class LatchCommand { hold, set, reset, both };

inline std::optional<LatchCommand> latch_command_from_string(std::string_view s) {
    if (s == "hold") return LatchCommand::hold;
    if (s == "set") return LatchCommand::set;
    if (s == "reset") return LatchCommand::reset;
    if (s == "both" || s == "forbidden") return LatchCommand::both;
    return std::nullopt;
}

inline std::pair<bool, bool> latch_inputs(LatchCommand c) {
    switch (c) {
        case LatchCommand::hold: return {false, false};
        case LatchCommand::set: return {true, false};
        case LatchCommand::reset: return {false, true};
        case LatchCommand::both: return {true, true};
    }
    return {false, false};
}

namespace detail {
inline void check_levels(const GateSpec& spec, LogicLevels levels) {
    const auto need = closing_requirement(spec);
    if (levels.high.pa < need.pa * (1.0 - kSwitchSlack)) {
        throw std::invalid_argument("logic-high input " + format_number(levels.high.pa, 6) +
                                    " Pa cannot seal the gate's valves (needs " + format_number(need.pa, 6) +
                                    " Pa)");
    }
}
}  // namespace detail

/// Truth table of a gate. For an SR latch the rows are (Q_prev, S, R) and
/// the output is the next Q; S = R = 1 rows carry no expected value.
inline TruthTable truth_table(const GateSpec& spec, LogicLevels levels) {
    detail::check_levels(spec, levels);
    if (spec.kind != GateKind::SR_LATCH) {
        const auto g = synthesize(spec);
        auto t = evaluate_truth_table(g, levels, logic_threshold(spec),
                                      [k = spec.kind](std::span<const bool> in) { return gate_function(k, in); });
        t.title = to_string(spec.kind);
        return t;
    }
    TruthTable t;
    t.title = to_string(spec.kind);
    t.input_labels = {"Q_prev", "S", "R"};
    t.output_label = "Q";
    t.threshold = logic_threshold(spec);
    for (bool q0 : {false, true}) {
        for (auto cmd : {LatchCommand::hold, LatchCommand::reset, LatchCommand::set, LatchCommand::both}) {
            const auto ev = latch_inputs(cmd);
            const auto step = latch_sequence(spec, std::span(&ev, 1), levels, q0).front();
            TruthRow r;
            r.inputs = {q0, ev.first, ev.second};
            r.output_pressure = step.q_pressure;
            r.output = step.q_pressure > t.threshold;
            switch (cmd) {
                case LatchCommand::hold: r.expected = q0; break;
                case LatchCommand::set: r.expected = true; break;
                case LatchCommand::reset: r.expected = false; break;
                case LatchCommand::both: break;
            }
            t.rows.push_back(std::move(r));
        }
    }
    return t;
}

struct GainReport {
    Pressure p_o_high;
    Pressure p_i_high_min;  // smallest input found to seal the valve
    double gain = 0.0;
    double theoretical_gain = 0.0;
};

struct SearchBracket {
    Pressure lo;
    Pressure hi;
};

class BracketInvalid : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Gain of an inverter-style circuit: bisects the input pressure until the
/// valve driven by `input` seals, to `resolution`. `divider_ratio` is the
/// ideal open-valve output fraction of `supply`.
inline GainReport measure_gain(const ElaboratedCircuit& c, const std::string& input, const std::string& output_probe,
                               SearchBracket bracket, Pressure supply, double divider_ratio,
                               Pressure resolution = Pressure{1.0}) {
    const Network net(c);
    const auto& in_elem = std::find_if(net.inputs().begin(), net.inputs().end(),
                                       [&](const Network::Source& s) { return s.label == input; });
    if (in_elem == net.inputs().end()) throw std::invalid_argument("no input named '" + input + "'");
    std::vector<std::size_t> driven;
    for (std::size_t k = 0; k < net.valves().size(); ++k) {
        if (net.valves()[k].control == in_elem->node) driven.push_back(k);
    }
    if (driven.size() != 1) throw std::invalid_argument("input '" + input + "' must control exactly one valve");
    const auto& valve_label = net.valves()[driven.front()].label;
    auto levels_for = [&](Pressure p) {
        InputLevels lv;
        for (const auto& s : net.inputs()) lv[s.label] = s.label == input ? p : Pressure{0.0};
        return lv;
    };
    auto seals = [&](Pressure p) {
        const auto sol = expect_stable(solve_static(net, levels_for(p)));
        return sol.valves.at(valve_label).state == ValveState::closed;
    };
    Pressure lo = bracket.lo;
    Pressure hi = bracket.hi;
    if (!(lo < hi) || seals(lo) || !seals(hi)) {
        throw BracketInvalid("search bracket [" + format_number(lo.pa, 6) + ", " + format_number(hi.pa, 6) +
                             "] Pa must open the valve at its low end and seal it at its high end");
    }
    while ((hi - lo) > resolution) {
        const Pressure mid = (lo + hi) * 0.5;
        (seals(mid) ? hi : lo) = mid;
    }
    GainReport g;
    g.p_i_high_min = hi;
    g.p_o_high = expect_stable(solve_static(net, levels_for(Pressure{0.0}))).probe(output_probe);
    g.gain = g.p_o_high / g.p_i_high_min;
    g.theoretical_gain = divider_ratio * (supply / g.p_i_high_min);
    return g;
}

inline GainReport measure_gain(const GateSpec& spec, SearchBracket bracket, Pressure resolution = Pressure{1.0}) {
    if (spec.kind != GateKind::NOT) throw InvalidGateSpec("gain is measured on a NOT gate");
    const auto g = synthesize(spec);
    const double ratio = spec.pull_up / (spec.valve.open_resistance + spec.pull_up);
    return measure_gain(elaborate(g.circuit), g.inputs.front(), g.output(), bracket, spec.supply, ratio, resolution);
}

struct CalibrationTargets {
    Pressure p_i_high;
    Pressure p_o_high;
    double delay = 0.0;  // s
};

struct Calibration {
    Pressure supply;
    Pressure seal_margin;
    double tau_close = 0.0;
};

class CalibrationInfeasible : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Inverts the inverter model: the divider sets the supply from the output
/// high level, the input high level minus the supply is the seal margin, and
/// the first-order actuation model turns the delay into tau_close.
inline Calibration calibrate(CalibrationTargets targets, Resistance pull_up, Resistance supply_path,
                             double threshold = 0.9) {
    if (!(targets.p_i_high.pa > 0.0 && targets.p_o_high.pa > 0.0 && targets.delay >= 0.0)) {
        throw std::invalid_argument("calibration targets must be positive");
    }
    Calibration out;
    out.supply = targets.p_o_high * ((supply_path + pull_up) / pull_up);
    out.seal_margin = targets.p_i_high - out.supply;
    if (out.seal_margin.pa < 0.0) {
        throw CalibrationInfeasible("input high " + format_number(targets.p_i_high.pa, 6) +
                                    " Pa is below the implied supply " + format_number(out.supply.pa, 6) + " Pa");
    }
    out.tau_close = targets.delay / std::log(1.0 / (1.0 - threshold));
    return out;
}

/// Inverter spec calibrated to the reference device's measurements.
inline GateSpec calibrated_not_spec() {
    const auto cal = calibrate({reference_device::input_high, reference_device::output_high,
                                reference_device::closing_delay},
                               reference_device::pull_up, reference_device::supply_path);
    GateSpec s;
    s.kind = GateKind::NOT;
    s.supply = cal.supply;
    s.pull_up = reference_device::pull_up;
    s.valve.open_resistance = reference_device::supply_path;
    s.valve.seal_margin = cal.seal_margin;
    s.valve.tau_close = cal.tau_close;
    s.valve.tau_open = 0.0;
    return s;
}

enum class CascadeStrategy { same_rail, descending_rails, high_gain_valves };

inline const char* to_string(CascadeStrategy s) {
    switch (s) {
        case CascadeStrategy::same_rail: return "same_rail";
        case CascadeStrategy::descending_rails: return "descending_rails";
        case CascadeStrategy::high_gain_valves: return "high_gain_valves";
    }
    return "?";
}

struct CascadeOptions {
    double margin_fraction = 0.05;  // required slack, as a fraction of the driven stage's rail
    double gain_factor = 1.75;      // used by high_gain_valves
};

struct StageReport {
    GateSpec spec;  // with the planned rail (and valve gain) applied
    Pressure output_high;
    Pressure closing_requirement;
    std::optional<Pressure> slack;  // driver high minus this stage's requirement; none for stage 0
};

struct CascadePlan {
    CascadeStrategy strategy = CascadeStrategy::same_rail;
    std::vector<StageReport> stages;
    bool feasible = false;
    std::optional<std::size_t> first_failing_stage;

    Pressure rail(std::size_t k) const { return stages.at(k).spec.supply; }
};

/// Assigns supply rails (and for high_gain_valves, pre-stressed valves) to a
/// chain of gates where each stage's output drives every input of the next.
inline CascadePlan plan_cascade(std::vector<GateSpec> stages, CascadeStrategy strategy,
                                const CascadeOptions& opts = {}) {
    if (stages.size() < 2) throw std::invalid_argument("a cascade needs at least two stages");
    for (const auto& s : stages) {
        if (s.kind == GateKind::SR_LATCH) throw InvalidGateSpec("SR latches cannot be cascade stages");
        validate_spec(s);
    }
    CascadePlan plan;
    plan.strategy = strategy;
    const Pressure rail0 = stages.front().supply;
    std::vector<double> ratio(stages.size());

    for (std::size_t k = 0; k < stages.size(); ++k) {
        auto& s = stages[k];
        s.logic_threshold.reset();
        if (strategy != CascadeStrategy::descending_rails) s.supply = rail0;
        if (strategy == CascadeStrategy::high_gain_valves) s.valve.gain_model = GainModel::pre_stressed(opts.gain_factor);
        ratio[k] = output_high_ratio(s);
        if (strategy == CascadeStrategy::descending_rails && k > 0) {
            // Largest rail with driver_high - (rail + seal)/g >= margin * rail.
            const double g = s.valve.gain_model.factor();
            const double driver_high = ratio[k - 1] * stages[k - 1].supply.pa;
            const double bound = (driver_high - s.valve.seal_margin.pa / g) / (1.0 / g + opts.margin_fraction);
            if (bound > 0.0) s.supply = Pressure{std::min(s.supply.pa, bound)};
        }
    }
    for (std::size_t k = 0; k < stages.size(); ++k) {
        StageReport r;
        r.spec = stages[k];
        r.output_high = stages[k].supply * ratio[k];
        r.closing_requirement = closing_requirement(stages[k]);
        if (k > 0) r.slack = plan.stages[k - 1].output_high - r.closing_requirement;
        plan.stages.push_back(std::move(r));
    }
    for (std::size_t k = 1; k < plan.stages.size(); ++k) {
        if (plan.stages[k].slack->pa < 0.0) {
            plan.first_failing_stage = k;
            break;
        }
    }
    plan.feasible = !plan.first_failing_stage.has_value();
    return plan;
}

/// Composite netlist of a cascade: stage k is prefixed "s<k+1>_", shares the
/// atmosphere node, and has its control ports tied to stage k-1's output.
inline GateCircuit compose_cascade(const std::vector<GateSpec>& stages) {
    GateCircuit g;
    g.circuit.set_atmosphere("gnd");
    std::optional<std::string> driver;
    std::vector<std::string> probes;
    for (std::size_t k = 0; k < stages.size(); ++k) {
        auto ports = detail::GateBuilder(g.circuit, stages[k], "s" + std::to_string(k + 1) + "_", driver).build();
        if (k == 0) g.inputs = ports.inputs;
        driver = ports.output_node;
        probes.push_back(ports.output_probe);
    }
    g.circuit.add(Vent{"gnd"});
    g.outputs.push_back(probes.back());
    for (std::size_t k = 0; k + 1 < probes.size(); ++k) g.outputs.push_back(probes[k]);
    if (auto diags = validate(g.circuit); !diags.empty()) throw InvalidCircuit(std::move(diags));
    return g;
}

inline GateCircuit compose_cascade(const CascadePlan& plan) {
    std::vector<GateSpec> specs;
    for (const auto& s : plan.stages) specs.push_back(s.spec);
    return compose_cascade(specs);
}

/// Boolean function of the whole chain.
inline bool cascade_function(const std::vector<GateKind>& kinds, std::span<const bool> in) {
    bool v = gate_function(kinds.front(), in);
    for (std::size_t k = 1; k < kinds.size(); ++k) {
        const bool tied[2] = {v, v};
        v = gate_function(kinds[k], std::span<const bool>(tied, input_count(kinds[k])));
    }
    return v;
}

struct CascadeCheck {
    TruthTable table;
    bool passed = false;
};

/// End-to-end check of a plan: solves the composite netlist for every
/// primary input combination and compares with the chained boolean function.
/// The default logic-high input seals stage 0 with the plan's margin.
inline CascadeCheck verify_cascade(const CascadePlan& plan, std::optional<Pressure> input_high = std::nullopt,
                                   const CascadeOptions& opts = {}) {
    const auto g = compose_cascade(plan);
    std::vector<GateKind> kinds;
    for (const auto& s : plan.stages) kinds.push_back(s.spec.kind);
    const Pressure high = input_high.value_or(plan.stages.front().closing_requirement * (1.0 + opts.margin_fraction));
    const Pressure threshold = plan.stages.back().output_high * 0.5;
    CascadeCheck check;
    check.table = evaluate_truth_table(g, LogicLevels{Pressure{0.0}, high}, threshold,
                                       [&](std::span<const bool> in) { return cascade_function(kinds, in); });
    check.table.title = "cascade";
    check.passed = check.table.matches();
    return check;
}

}  // namespace fluidlogic
