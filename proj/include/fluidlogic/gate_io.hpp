#pragma once

// Gate-spec JSON documents and truth-table output (aligned text and CSV).
//
//   {"kind": "NAND", "supply_Pa": 1558.3, "pull_up_Pa_s_per_m3": 8.75e8,
//    "valve": {"open_resistance_Pa_s_per_m3": 5.89e7, "seal_margin_Pa": 211.7,
//              "tau_close_s": 1.1726, "tau_open_s": 0, "gain_factor": 1.75},
//    "logic_threshold_Pa": 700, "composition": "direct"}
//
// Everything except kind and supply_Pa is optional.

#include "fluidlogic/format.hpp"
#include "fluidlogic/gates.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <ostream>
#include <string>

namespace fluidlogic {

inline GateSpec gate_spec_from_json(const nlohmann::json& j) {
    GateSpec s;
    s.pull_up = reference_device::pull_up;
    s.valve.open_resistance = reference_device::supply_path;
    try {
        const auto kind = gate_kind_from_string(j.at("kind").get<std::string>());
        if (!kind) throw InvalidGateSpec("unknown gate kind '" + j.at("kind").get<std::string>() + "'");
        s.kind = *kind;
        s.supply = Pressure{j.at("supply_Pa").get<double>()};
        if (j.contains("pull_up_Pa_s_per_m3")) s.pull_up = Resistance{j.at("pull_up_Pa_s_per_m3").get<double>()};
        if (j.contains("valve")) {
            const auto& v = j.at("valve");
            if (v.contains("open_resistance_Pa_s_per_m3")) {
                s.valve.open_resistance = Resistance{v.at("open_resistance_Pa_s_per_m3").get<double>()};
            }
            if (v.contains("seal_margin_Pa")) s.valve.seal_margin = Pressure{v.at("seal_margin_Pa").get<double>()};
            if (v.contains("tau_close_s")) s.valve.tau_close = v.at("tau_close_s").get<double>();
            if (v.contains("tau_open_s")) s.valve.tau_open = v.at("tau_open_s").get<double>();
            if (v.contains("gain_factor")) s.valve.gain_model = GainModel::pre_stressed(v.at("gain_factor").get<double>());
        }
        if (j.contains("logic_threshold_Pa")) s.logic_threshold = Pressure{j.at("logic_threshold_Pa").get<double>()};
        if (j.contains("composition")) {
            const auto c = j.at("composition").get<std::string>();
            if (c == "direct") s.composition = Composition::direct;
            else if (c == "not_gates") s.composition = Composition::not_gates;
            else throw InvalidGateSpec("composition must be 'direct' or 'not_gates'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidGateSpec(std::string("gate spec: ") + e.what());
    }
    validate_spec(s);
    return s;
}

inline nlohmann::ordered_json to_json(const GateSpec& s) {
    nlohmann::ordered_json j;
    j["kind"] = to_string(s.kind);
    j["supply_Pa"] = s.supply.pa;
    j["pull_up_Pa_s_per_m3"] = s.pull_up.value;
    auto& v = j["valve"];
    v["open_resistance_Pa_s_per_m3"] = s.valve.open_resistance.value;
    v["seal_margin_Pa"] = s.valve.seal_margin.pa;
    v["tau_close_s"] = s.valve.tau_close;
    v["tau_open_s"] = s.valve.tau_open;
    if (s.valve.gain_model.is_prestressed()) v["gain_factor"] = s.valve.gain_model.factor();
    if (s.logic_threshold) j["logic_threshold_Pa"] = s.logic_threshold->pa;
    j["composition"] = s.composition == Composition::direct ? "direct" : "not_gates";
    return j;
}

inline void write_truth_table_text(std::ostream& os, const TruthTable& t) {
    auto pad = [&os](const std::string& text, std::size_t w) {
        os << std::string(w > text.size() ? w - text.size() : 0, ' ') << text;
    };
    std::vector<std::size_t> width;
    for (const auto& l : t.input_labels) width.push_back(std::max<std::size_t>(l.size(), 1));
    const std::string pa_label = t.output_label + "_Pa";
    std::size_t pa_width = pa_label.size();
    for (const auto& r : t.rows) pa_width = std::max(pa_width, format_number(r.output_pressure.pa, 6).size());

    os << t.title << "  (threshold " << format_number(t.threshold.pa, 6) << " Pa)\n";
    for (std::size_t i = 0; i < t.input_labels.size(); ++i) {
        pad(t.input_labels[i], width[i]);
        os << "  ";
    }
    os << "| " << t.output_label << "  ";
    pad(pa_label, pa_width);
    os << "  expected\n";
    for (const auto& r : t.rows) {
        for (std::size_t i = 0; i < r.inputs.size(); ++i) {
            pad(r.inputs[i] ? "1" : "0", width[i]);
            os << "  ";
        }
        os << "| ";
        pad(r.output ? "1" : "0", t.output_label.size());
        os << "  ";
        pad(format_number(r.output_pressure.pa, 6), pa_width);
        os << "  ";
        if (!r.expected) os << "undefined";
        else os << (*r.expected ? '1' : '0') << (*r.expected == r.output ? "" : "  MISMATCH");
        os << "\n";
    }
}

inline void write_truth_table_csv(std::ostream& os, const TruthTable& t) {
    for (const auto& l : t.input_labels) os << l << ",";
    os << t.output_label << "," << t.output_label << "_Pa,expected\n";
    for (const auto& r : t.rows) {
        for (bool b : r.inputs) os << (b ? 1 : 0) << ",";
        os << (r.output ? 1 : 0) << "," << format_number(r.output_pressure.pa, 9) << ",";
        if (r.expected) os << (*r.expected ? 1 : 0);
        os << "\n";
    }
}

}  // namespace fluidlogic
