#pragma once

// Trace export. CSV carries probes and valve states per event; JSON carries
// the full solution per event. Pressures use 9 significant digits.

#include "fluidlogic/format.hpp"
#include "fluidlogic/solver.hpp"

#include <nlohmann/json.hpp>

#include <ostream>
#include <string>

namespace fluidlogic {

inline void write_trace_csv(std::ostream& os, const Trace& trace) {
    os << "time_s";
    for (const auto& p : trace.probe_labels) os << "," << p << "_Pa";
    for (const auto& v : trace.valve_labels) os << "," << v << "_state";
    os << "\n";
    for (const auto& s : trace.samples) {
        os << format_number(s.time, 9);
        for (const auto& p : trace.probe_labels) os << "," << format_number(s.solution.probe(p).pa, 9);
        for (const auto& v : trace.valve_labels) os << "," << to_string(s.solution.valves.at(v).state);
        os << "\n";
    }
}

namespace detail {
/// Rounds to 9 significant digits so the JSON text matches the CSV digits.
inline double round9(double x) { return std::stod(format_number(x, 9)); }
}  // namespace detail

inline nlohmann::ordered_json solution_to_json(const PressureSolution& s) {
    nlohmann::ordered_json j;
    auto& nodes = j["node_pressures_Pa"] = nlohmann::ordered_json::object();
    for (const auto& [n, p] : s.node_pressures) nodes[n] = detail::round9(p.pa);
    auto& probes = j["probe_pressures_Pa"] = nlohmann::ordered_json::object();
    for (const auto& [n, p] : s.probe_pressures) probes[n] = detail::round9(p.pa);
    auto& flows = j["element_flows_m3_per_s"] = nlohmann::ordered_json::object();
    for (const auto& [e, q] : s.element_flows) flows[e] = detail::round9(q);
    auto& valves = j["valves"] = nlohmann::ordered_json::object();
    for (const auto& [v, st] : s.valves) {
        valves[v] = {{"state", to_string(st.state)}, {"progress", detail::round9(st.progress)}};
    }
    j["isolated_nodes"] = s.isolated_nodes;
    return j;
}

inline nlohmann::ordered_json trace_to_json(const Trace& trace) {
    nlohmann::ordered_json j;
    j["probes"] = trace.probe_labels;
    j["valves"] = trace.valve_labels;
    auto& samples = j["samples"] = nlohmann::ordered_json::array();
    for (const auto& s : trace.samples) {
        nlohmann::ordered_json row;
        row["time_s"] = detail::round9(s.time);
        row["solution"] = solution_to_json(s.solution);
        samples.push_back(std::move(row));
    }
    return j;
}

inline void write_trace_json(std::ostream& os, const Trace& trace) { os << trace_to_json(trace).dump(2) << "\n"; }

}  // namespace fluidlogic
