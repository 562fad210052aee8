// fluidlogic: command-line front end.
//
// Exit codes: 0 success, 1 user error (bad arguments, diagnostics, invalid
// spec), 2 physics outcome (no stable state, livelock, infeasible plan,
// truth-table mismatch under --expect).

#include "fluidlogic/gate_io.hpp"
#include "fluidlogic/gates.hpp"
#include "fluidlogic/materials.hpp"
#include "fluidlogic/netlist.hpp"
#include "fluidlogic/solver.hpp"
#include "fluidlogic/trace_io.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace fluidlogic;

namespace {

constexpr int kOk = 0;
constexpr int kUserError = 1;
constexpr int kPhysics = 2;

struct UserError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UserError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Writes to `path`, or stdout for "" / "-".
template <class F>
void with_output(const std::string& path, F&& write) {
    if (path.empty() || path == "-") {
        write(std::cout);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UserError("cannot write '" + path + "'");
    write(out);
}

Circuit load_netlist(const std::string& path) {
    auto res = parse(read_file(path));
    if (!res.ok()) {
        for (const auto& d : res.diagnostics) std::cerr << path << ":" << d.str() << "\n";
        throw UserError(path + ": " + std::to_string(res.diagnostics.size()) + " diagnostic(s)");
    }
    return *res.circuit;
}

GateSpec seal_free_not_spec() {
    auto s = calibrated_not_spec();
    s.valve.seal_margin = Pressure{0.0};
    return s;
}

GateSpec preset_for(GateKind kind) {
    auto s = calibrated_not_spec();
    s.kind = kind;
    // Same-rail feedback cannot seal a standard valve, so the latch uses
    // pre-stressed valves.
    if (kind == GateKind::SR_LATCH) s.valve.gain_model = GainModel::pre_stressed(1.75);
    return s;
}

std::vector<std::pair<bool, bool>> parse_sequence(const std::string& text) {
    std::vector<std::pair<bool, bool>> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto cmd = latch_command_from_string(item);
        if (!cmd) throw UserError("unknown latch event '" + item + "' (use set, reset, hold, both)");
        out.push_back(latch_inputs(*cmd));
    }
    if (out.empty()) throw UserError("empty latch sequence");
    return out;
}

std::optional<CascadeStrategy> strategy_from_string(const std::string& s) {
    if (s == "same_rail" || s == "same-rail") return CascadeStrategy::same_rail;
    if (s == "descending_rails" || s == "descending-rails") return CascadeStrategy::descending_rails;
    if (s == "high_gain_valves" || s == "high-gain-valves") return CascadeStrategy::high_gain_valves;
    return std::nullopt;
}

void print_spec(std::ostream& os, const GateSpec& s) {
    os << to_string(s.kind) << ": supply " << format_number(s.supply.pa, 6) << " Pa, pull-up "
       << format_number(s.pull_up.value, 6) << " Pa.s/m3, Ropen " << format_number(s.valve.open_resistance.value, 6)
       << " Pa.s/m3, seal " << format_number(s.valve.seal_margin.pa, 6) << " Pa";
    if (s.valve.gain_model.is_prestressed()) os << ", gain " << format_number(s.valve.gain_model.factor(), 6);
    os << "\n";
}

// ---- run -------------------------------------------------------------------

struct RunArgs {
    std::string netlist;
    double t_end = 60.0;
    double dt_max = 0.5;
    std::string out;
    std::string format = "csv";
};

int cmd_run(const RunArgs& a) {
    if (!(a.t_end > 0.0)) throw UserError("--t-end must be > 0");
    if (!(a.dt_max > 0.0)) throw UserError("--dt-max must be > 0");
    const auto ec = elaborate(load_netlist(a.netlist));
    const auto trace = solve_transient(ec, a.t_end, a.dt_max);
    with_output(a.out, [&](std::ostream& os) {
        if (a.format == "json") write_trace_json(os, trace);
        else write_trace_csv(os, trace);
    });
    return kOk;
}

// ---- validate --------------------------------------------------------------

int cmd_validate(const std::string& path) {
    const auto c = load_netlist(path);
    std::cout << path << ": ok (" << c.nodes.size() << " nodes, " << c.elements.size() << " elements, "
              << c.probes.size() << " probes)\n";
    return kOk;
}

// ---- truth-table -----------------------------------------------------------

struct TruthArgs {
    std::string gate = "not";
    std::string spec_path;
    std::string composition = "direct";
    std::optional<double> high;
    std::string sequence;
    std::string csv;
    bool expect = false;
};

int run_latch(const GateSpec& spec, const std::string& sequence, LogicLevels levels, bool initial_q,
              const std::string& expected_bits) {
    const auto events = parse_sequence(sequence);
    const auto steps = latch_sequence(spec, events, levels, initial_q);
    std::string bits;
    for (const auto& s : steps) {
        if (!bits.empty()) bits += ",";
        bits += s.q ? (*s.q ? "1" : "0") : "x";
    }
    std::cout << "S R | Q  Q_Pa  Qn_Pa\n";
    for (const auto& s : steps) {
        std::cout << s.set << " " << s.reset << " | " << (s.q ? (*s.q ? "1" : "0") : "x") << "  "
                  << format_number(s.q_pressure.pa, 6) << "  " << format_number(s.qn_pressure.pa, 6) << "\n";
    }
    std::cout << "Q: " << bits << "\n";
    if (!expected_bits.empty() && expected_bits != bits) {
        std::cerr << "expected Q " << expected_bits << ", got " << bits << "\n";
        return kPhysics;
    }
    return kOk;
}

int cmd_truth_table(const TruthArgs& a) {
    GateSpec spec;
    bool have_high = a.high.has_value();
    Pressure high{a.high.value_or(0.0)};
    if (!a.spec_path.empty()) {
        spec = gate_spec_from_json(nlohmann::json::parse(read_file(a.spec_path)));
    } else {
        const auto kind = gate_kind_from_string(a.gate);
        if (!kind) throw UserError("unknown gate '" + a.gate + "' (not, nand, nor, sr-latch)");
        spec = preset_for(*kind);
        if (a.composition == "not_gates" || a.composition == "not-gates") spec.composition = Composition::not_gates;
        else if (a.composition != "direct") throw UserError("--composition must be direct or not_gates");
        if (*kind == GateKind::NAND || *kind == GateKind::NOR) {
            // Rail chosen so a calibrated inverter's output can drive it.
            const auto plan = plan_cascade({calibrated_not_spec(), spec}, CascadeStrategy::descending_rails);
            spec = plan.stages[1].spec;
            if (!have_high) high = plan.stages[0].output_high;
            have_high = true;
            std::cout << "rail " << format_number(spec.supply.pa, 6) << " Pa (descending from a "
                      << format_number(plan.stages[0].spec.supply.pa, 6) << " Pa inverter driver)\n";
        } else if (!have_high) {
            high = reference_device::input_high;
            have_high = true;
        }
    }
    const Pressure in_high = have_high ? high : closing_requirement(spec) * 1.05;
    print_spec(std::cout, spec);
    std::cout << "input high " << format_number(in_high.pa, 6) << " Pa\n";
    if (spec.kind == GateKind::SR_LATCH && !a.sequence.empty()) {
        return run_latch(spec, a.sequence, {Pressure{0.0}, in_high}, false, "");
    }
    const auto table = truth_table(spec, {Pressure{0.0}, in_high});
    write_truth_table_text(std::cout, table);
    if (!a.csv.empty()) with_output(a.csv, [&](std::ostream& os) { write_truth_table_csv(os, table); });
    if (a.expect && !table.matches()) {
        std::cerr << "truth table deviates from " << to_string(spec.kind) << "\n";
        return kPhysics;
    }
    return kOk;
}

// ---- latch -----------------------------------------------------------------

struct LatchArgs {
    std::string sequence = "set,hold,reset,hold";
    std::string spec_path;
    std::optional<double> high;
    int initial_q = 0;
    std::string expect;
};

int cmd_latch(const LatchArgs& a) {
    GateSpec spec = a.spec_path.empty() ? preset_for(GateKind::SR_LATCH)
                                        : gate_spec_from_json(nlohmann::json::parse(read_file(a.spec_path)));
    if (spec.kind != GateKind::SR_LATCH) throw UserError("latch needs an SR_LATCH spec");
    const Pressure high = a.high ? Pressure{*a.high} : reference_device::input_high;
    print_spec(std::cout, spec);
    return run_latch(spec, a.sequence, {Pressure{0.0}, high}, a.initial_q != 0, a.expect);
}

// ---- gain ------------------------------------------------------------------

struct GainArgs {
    std::string preset = "paper-not";
    std::string netlist;
    std::string input = "Pi";
    std::string probe = "Po";
    double lo = 0.0;
    double hi = 10000.0;
    double resolution = 1.0;
};

int cmd_gain(const GainArgs& a) {
    GainReport r;
    if (!a.netlist.empty()) {
        const auto ec = elaborate(load_netlist(a.netlist));
        const auto supplies = ec.circuit().elements_of<Supply>();
        if (supplies.size() != 1) throw UserError("gain needs a netlist with exactly one supply");
        const Pressure ps = supplies.front()->pressure;
        // Ideal divider ratio read from the open-valve solve.
        InputLevels zero;
        for (const auto& in : ec.circuit().elements_of<Input>()) zero[in->label] = Pressure{0.0};
        const double ratio = expect_stable(solve_static(ec, zero)).probe(a.probe) / ps;
        r = measure_gain(ec, a.input, a.probe, {Pressure{a.lo}, Pressure{a.hi}}, ps, ratio, Pressure{a.resolution});
    } else {
        GateSpec spec;
        if (a.preset == "paper-not") {
            spec = calibrated_not_spec();
            std::cout << "preset paper-not: inverter calibrated to measured levels 1.77 kPa in / 1.46 kPa out\n";
        } else if (a.preset == "seal-0") {
            spec = seal_free_not_spec();
            std::cout << "preset seal-0: calibrated inverter with the seal margin removed\n";
        } else {
            throw UserError("unknown preset '" + a.preset + "' (paper-not, seal-0)");
        }
        print_spec(std::cout, spec);
        r = measure_gain(spec, {Pressure{a.lo}, Pressure{a.hi}}, Pressure{a.resolution});
    }
    std::cout << "p_o_high_Pa " << format_number(r.p_o_high.pa, 9) << "\n"
              << "p_i_high_min_Pa " << format_number(r.p_i_high_min.pa, 9) << "\n"
              << "gain " << format_number(r.gain, 6) << "\n"
              << "theoretical_gain " << format_number(r.theoretical_gain, 6) << "\n";
    return kOk;
}

// ---- cascade-plan ----------------------------------------------------------

struct CascadeArgs {
    std::string stages = "not,not";
    std::string strategy = "same_rail";
    double margin = 0.05;
    double gain_factor = 1.75;
    bool verify = false;
};

int cmd_cascade(const CascadeArgs& a) {
    const auto strategy = strategy_from_string(a.strategy);
    if (!strategy) throw UserError("unknown strategy '" + a.strategy + "'");
    std::vector<GateSpec> stages;
    std::stringstream ss(a.stages);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto kind = gate_kind_from_string(item);
        if (!kind) throw UserError("unknown stage gate '" + item + "'");
        auto s = calibrated_not_spec();
        s.kind = *kind;
        stages.push_back(s);
    }
    const CascadeOptions opts{a.margin, a.gain_factor};
    const auto plan = plan_cascade(stages, *strategy, opts);
    std::cout << "strategy " << to_string(plan.strategy) << "\n";
    std::cout << "stage  gate  rail_Pa  gain  output_high_Pa  closing_req_Pa  slack_Pa\n";
    for (std::size_t k = 0; k < plan.stages.size(); ++k) {
        const auto& st = plan.stages[k];
        std::cout << k + 1 << "  " << to_string(st.spec.kind) << "  " << format_number(st.spec.supply.pa, 6) << "  "
                  << format_number(st.spec.valve.gain_model.factor(), 4) << "  "
                  << format_number(st.output_high.pa, 6) << "  " << format_number(st.closing_requirement.pa, 6)
                  << "  " << (st.slack ? format_number(st.slack->pa, 6) : "-") << "\n";
    }
    if (!plan.feasible) {
        const auto k = *plan.first_failing_stage;
        std::cout << "infeasible: stage " << k + 1 << " needs " << format_number(plan.stages[k].closing_requirement.pa, 6)
                  << " Pa but stage " << k << " delivers " << format_number(plan.stages[k - 1].output_high.pa, 6)
                  << " Pa\n";
        return kPhysics;
    }
    std::cout << "feasible\n";
    if (a.verify) {
        const auto check = verify_cascade(plan, std::nullopt, opts);
        write_truth_table_text(std::cout, check.table);
        std::cout << (check.passed ? "verified" : "verification FAILED") << "\n";
        if (!check.passed) return kPhysics;
    }
    return kOk;
}

// ---- materials -------------------------------------------------------------

struct MaterialsArgs {
    std::string csv;
    std::string criteria;
    std::string out;
    std::string trail;
};

int cmd_materials(const MaterialsArgs& a) {
    std::ifstream in(a.csv, std::ios::binary);
    if (!in) throw UserError("cannot open '" + a.csv + "'");
    const auto ingested = materials::ingest(in);
    for (const auto& d : ingested.diagnostics) std::cerr << a.csv << ": " << d.str() << " (skipped)\n";
    const auto criteria = a.criteria.empty()
                              ? materials::default_criteria(ingested.records)
                              : materials::criteria_from_json(nlohmann::json::parse(read_file(a.criteria)),
                                                              ingested.records);
    const auto result = materials::screen(ingested.records, criteria);
    with_output(a.trail, [&](std::ostream& os) { materials::write_decision_trail(os, result, criteria); });
    if (!a.out.empty()) with_output(a.out, [&](std::ostream& os) { materials::write_ranked_csv(os, result); });
    else if (!a.trail.empty()) materials::write_ranked_csv(std::cout, result);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pneumatic/fluidic logic circuit simulator. Pressures in Pa unless suffixed, resistances in "
                 "Pa.s/m3, times in s."};
    app.require_subcommand(1);

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "Transient simulation of a netlist; writes the event trace");
    run_cmd->add_option("netlist", run.netlist, "Netlist file")->required();
    run_cmd->add_option("--t-end", run.t_end, "End time [s]")->capture_default_str();
    run_cmd->add_option("--dt-max", run.dt_max, "Largest step between samples [s]")->capture_default_str();
    run_cmd->add_option("-o,--out", run.out, "Trace output path (default stdout); pressures in Pa");
    run_cmd->add_option("--format", run.format, "Trace format")->check(CLI::IsMember({"csv", "json"}))
        ->capture_default_str();

    std::string validate_path;
    auto* val_cmd = app.add_subcommand("validate", "Parse and validate a netlist (units: kPa/Pa, mm/um/m, s)");
    val_cmd->add_option("netlist", validate_path, "Netlist file")->required();

    TruthArgs tt;
    auto* tt_cmd = app.add_subcommand("truth-table", "Truth table of a gate preset or JSON gate spec");
    tt_cmd->add_option("--gate", tt.gate, "Preset gate: not, nand, nor, sr-latch")->capture_default_str();
    tt_cmd->add_option("--spec", tt.spec_path, "JSON gate spec (pressures in Pa, resistances in Pa.s/m3)");
    tt_cmd->add_option("--composition", tt.composition, "direct or not_gates")->capture_default_str();
    tt_cmd->add_option("--high", tt.high, "Logic-high input pressure [Pa]");
    tt_cmd->add_option("--sequence", tt.sequence, "SR latch events, e.g. set,hold,reset,hold");
    tt_cmd->add_option("--csv", tt.csv, "Also write the table as CSV (pressures in Pa)");
    tt_cmd->add_flag("--expect", tt.expect, "Exit 2 if any row deviates from the gate's boolean function");

    LatchArgs latch;
    auto* latch_cmd = app.add_subcommand("latch", "Run an SR latch through a sequence of events");
    latch_cmd->add_option("--sequence", latch.sequence, "Events: set, reset, hold, both")->capture_default_str();
    latch_cmd->add_option("--spec", latch.spec_path, "JSON SR_LATCH spec (pressures in Pa)");
    latch_cmd->add_option("--high", latch.high, "Logic-high input pressure [Pa]");
    latch_cmd->add_option("--initial-q", latch.initial_q, "Stored bit before the first event (0 or 1)")
        ->check(CLI::Range(0, 1))->capture_default_str();
    latch_cmd->add_option("--expect", latch.expect, "Expected Q bits, e.g. 1,1,0,0; exit 2 on mismatch");

    GainArgs gain;
    auto* gain_cmd = app.add_subcommand("gain", "Control gain of an inverter by bisection on the input pressure");
    gain_cmd->add_option("--preset", gain.preset, "paper-not or seal-0")->capture_default_str();
    gain_cmd->add_option("--netlist", gain.netlist, "Inverter netlist instead of a preset");
    gain_cmd->add_option("--input", gain.input, "Input label (netlist mode)")->capture_default_str();
    gain_cmd->add_option("--probe", gain.probe, "Output probe label (netlist mode)")->capture_default_str();
    gain_cmd->add_option("--lo", gain.lo, "Bracket low end [Pa]; must leave the valve open")->capture_default_str();
    gain_cmd->add_option("--hi", gain.hi, "Bracket high end [Pa]; must seal the valve")->capture_default_str();
    gain_cmd->add_option("--resolution", gain.resolution, "Bisection resolution [Pa]")->capture_default_str();

    CascadeArgs casc;
    auto* casc_cmd = app.add_subcommand("cascade-plan", "Plan supply rails for a chain of calibrated gates");
    casc_cmd->add_option("--stages", casc.stages, "Comma-separated gates, e.g. not,not or nand,not")
        ->capture_default_str();
    casc_cmd->add_option("--strategy", casc.strategy, "same_rail, descending_rails or high_gain_valves")
        ->capture_default_str();
    casc_cmd->add_option("--margin", casc.margin, "Required slack as a fraction of the driven rail")
        ->capture_default_str();
    casc_cmd->add_option("--gain-factor", casc.gain_factor, "Valve gain for high_gain_valves (dimensionless)")
        ->capture_default_str();
    casc_cmd->add_flag("--verify", casc.verify, "Solve the composed netlist and check its truth table");

    MaterialsArgs mat;
    auto* mat_cmd = app.add_subcommand("materials", "Screen and rank structural materials from a property CSV");
    mat_cmd->add_option("csv", mat.csv, "Property table (TS in MPa, EB and water absorption in %)")->required();
    mat_cmd->add_option("--criteria", mat.criteria, "JSON criteria (window in MPa and %); default PDMS +/- 50%");
    mat_cmd->add_option("-o,--out", mat.out, "Ranked CSV output path");
    mat_cmd->add_option("--trail", mat.trail, "Decision trail output path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUserError;
    }

    try {
        if (*run_cmd) return cmd_run(run);
        if (*val_cmd) return cmd_validate(validate_path);
        if (*tt_cmd) return cmd_truth_table(tt);
        if (*latch_cmd) return cmd_latch(latch);
        if (*gain_cmd) return cmd_gain(gain);
        if (*casc_cmd) return cmd_cascade(casc);
        if (*mat_cmd) return cmd_materials(mat);
    } catch (const InvalidCircuit& e) {
        std::cerr << e.what() << "\n";
        return kUserError;
    } catch (const NoStableStateError& e) {
        std::cerr << e.what() << "\n";
        return kPhysics;
    } catch (const SolverError& e) {
        std::cerr << e.what() << "\n";
        return kPhysics;
    } catch (const CalibrationInfeasible& e) {
        std::cerr << e.what() << "\n";
        return kPhysics;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "JSON: " << e.what() << "\n";
        return kUserError;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return kUserError;
    }
    return kUserError;
}
