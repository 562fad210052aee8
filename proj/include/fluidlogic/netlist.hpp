#pragma once

// Circuit data model and the line-oriented netlist format.
//
//   fluid <air|water|custom mu=<val>Pa.s>
//   node <label>
//   atm <node>
//   supply <label> <node> P=<val><Pa|kPa>
//   input <label> <node> wave=<wavelabel>
//   wave <wavelabel> t=<s>:P=<val><Pa|kPa> ...
//   channel <label> <nodeA> <nodeB> L=<len> w=<len> h=<len>      (m, mm, um)
//   resistor <label> <nodeA> <nodeB> R=<val>                       (Pa*s/m^3)
//   valve <label> flow=<a>,<b> ctrl=<c> [Ropen=] [seal=] [tau_close=] [tau_open=] [gain=]
//   vent <node>
//   probe <label> <node>
//
// '#' starts a comment. Nodes are declared on first use by any element
// statement; probes must name an existing node.

#include "fluidlogic/core.hpp"
#include "fluidlogic/format.hpp"

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <variant>
#include <vector>

namespace fluidlogic {

/// Valve control-gain model. A pre-stressed membrane multiplies the effective
/// control pressure by its gain factor.
struct GainModel {
    std::optional<double> prestressed_gain;

    static GainModel standard() { return {}; }
    static GainModel pre_stressed(double gain_factor) { return {gain_factor}; }

    bool is_prestressed() const { return prestressed_gain.has_value(); }
    double factor() const { return prestressed_gain.value_or(1.0); }

    friend bool operator==(const GainModel&, const GainModel&) = default;
};

struct ValveParams {
    Resistance open_resistance{5.89e7};
    Pressure seal_margin{0.0};  // extra control pressure needed to close
    double tau_close = 0.0;     // s
    double tau_open = 0.0;      // s
    GainModel gain_model;

    friend bool operator==(const ValveParams&, const ValveParams&) = default;
};

struct WaveStep {
    double time = 0.0;  // s
    Pressure pressure;

    friend bool operator==(const WaveStep&, const WaveStep&) = default;
};

/// Piecewise-constant, right-continuous pressure schedule.
struct Waveform {
    std::vector<WaveStep> steps;

    static Waveform constant(Pressure p) { return Waveform{{WaveStep{0.0, p}}}; }

    Pressure at(double t) const {
        Pressure value = steps.empty() ? Pressure{} : steps.front().pressure;
        for (const auto& s : steps) {
            if (s.time > t) {
                break;
            }
            value = s.pressure;
        }
        return value;
    }

    friend bool operator==(const Waveform&, const Waveform&) = default;
};

struct Supply {
    std::string label;
    std::string node;
    Pressure pressure;
    friend bool operator==(const Supply&, const Supply&) = default;
};

struct Input {
    std::string label;
    std::string node;
    std::string wave;
    friend bool operator==(const Input&, const Input&) = default;
};

struct Channel {
    std::string label;
    std::string a;
    std::string b;
    ChannelGeometry geom;
    friend bool operator==(const Channel&, const Channel&) = default;
};

struct Resistor {
    std::string label;
    std::string a;
    std::string b;
    Resistance resistance;
    friend bool operator==(const Resistor&, const Resistor&) = default;
};

struct Valve {
    std::string label;
    std::string flow_in;
    std::string flow_out;
    std::string control;
    ValveParams params;
    friend bool operator==(const Valve&, const Valve&) = default;
};

struct Vent {
    std::string node;
    friend bool operator==(const Vent&, const Vent&) = default;
};

using Element = std::variant<Supply, Input, Channel, Resistor, Valve, Vent>;

inline std::string element_label(const Element& e) {
    return std::visit(
        [](const auto& el) -> std::string {
            using T = std::decay_t<decltype(el)>;
            if constexpr (std::is_same_v<T, Vent>) {
                return "vent:" + el.node;
            } else {
                return el.label;
            }
        },
        e);
}

/// Nodes an element touches, flow ports first.
inline std::vector<std::string> element_nodes(const Element& e) {
    return std::visit(
        [](const auto& el) -> std::vector<std::string> {
            using T = std::decay_t<decltype(el)>;
            if constexpr (std::is_same_v<T, Channel> || std::is_same_v<T, Resistor>) {
                return {el.a, el.b};
            } else if constexpr (std::is_same_v<T, Valve>) {
                return {el.flow_in, el.flow_out, el.control};
            } else {
                return {el.node};
            }
        },
        e);
}

/// Dead-end observation point: reads a node's pressure, carries no flow.
struct Probe {
    std::string label;
    std::string node;
    friend bool operator==(const Probe&, const Probe&) = default;
};

struct Circuit {
    Fluid fluid = Fluid::air();
    std::vector<std::string> nodes;
    std::string atmosphere;
    std::vector<Element> elements;
    std::map<std::string, Waveform> waveforms;
    std::vector<Probe> probes;

    friend bool operator==(const Circuit&, const Circuit&) = default;

    bool has_node(std::string_view n) const {
        return std::find(nodes.begin(), nodes.end(), n) != nodes.end();
    }

    void declare_node(const std::string& n) {
        if (!n.empty() && !has_node(n)) {
            nodes.push_back(n);
        }
    }

    /// Appends an element, declaring any nodes it mentions.
    Circuit& add(Element e) {
        for (const auto& n : element_nodes(e)) {
            declare_node(n);
        }
        elements.push_back(std::move(e));
        return *this;
    }

    Circuit& set_atmosphere(const std::string& n) {
        declare_node(n);
        atmosphere = n;
        return *this;
    }

    Circuit& add_probe(std::string label, std::string node) {
        probes.push_back(Probe{std::move(label), std::move(node)});
        return *this;
    }

    const Probe* find_probe(std::string_view label) const {
        auto it = std::find_if(probes.begin(), probes.end(),
                               [&](const Probe& p) { return p.label == label; });
        return it == probes.end() ? nullptr : &*it;
    }

    template <class T>
    std::vector<const T*> elements_of() const {
        std::vector<const T*> out;
        for (const auto& e : elements) {
            if (const auto* p = std::get_if<T>(&e)) {
                out.push_back(p);
            }
        }
        return out;
    }

    template <class T>
    std::size_t count() const {
        return elements_of<T>().size();
    }
};

enum class DiagnosticKind { lexical, reference, duplicate, missing_atmosphere, unit, invalid };

inline const char* to_string(DiagnosticKind k) {
    switch (k) {
        case DiagnosticKind::lexical: return "lexical error";
        case DiagnosticKind::reference: return "reference error";
        case DiagnosticKind::duplicate: return "duplicate label";
        case DiagnosticKind::missing_atmosphere: return "missing atmosphere";
        case DiagnosticKind::unit: return "unit error";
        case DiagnosticKind::invalid: return "invalid circuit";
    }
    return "error";
}

struct Diagnostic {
    DiagnosticKind kind;
    int line = 0;  // 1-based; 0 when not tied to source text
    int column = 0;
    std::string message;

    std::string str() const {
        std::string out;
        if (line > 0) {
            out += std::to_string(line) + ":" + std::to_string(column) + ": ";
        }
        out += to_string(kind);
        out += ": ";
        out += message;
        return out;
    }
};

class InvalidCircuit : public std::invalid_argument {
public:
    explicit InvalidCircuit(std::vector<Diagnostic> diags)
        : std::invalid_argument(summarize(diags)), diagnostics_(std::move(diags)) {}

    const std::vector<Diagnostic>& diagnostics() const { return diagnostics_; }

private:
    static std::string summarize(const std::vector<Diagnostic>& diags) {
        std::string s = "invalid circuit";
        for (const auto& d : diags) {
            s += "\n  " + d.str();
        }
        return s;
    }

    std::vector<Diagnostic> diagnostics_;
};

namespace detail {

struct SourceLoc {
    int line = 0;
    int column = 0;
};

inline bool is_fixed_pressure(const Element& e) {
    return std::holds_alternative<Supply>(e) || std::holds_alternative<Input>(e) ||
           std::holds_alternative<Vent>(e);
}

inline const std::string* fixed_node(const Element& e) {
    if (const auto* s = std::get_if<Supply>(&e)) return &s->node;
    if (const auto* i = std::get_if<Input>(&e)) return &i->node;
    if (const auto* v = std::get_if<Vent>(&e)) return &v->node;
    return nullptr;
}

inline bool finite_positive(double x) { return std::isfinite(x) && x > 0.0; }
inline bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }

}  // namespace detail

/// Checks every structural invariant of a circuit. `element_locs` and
/// `probe_locs`, when given, attach source positions to the diagnostics.
inline std::vector<Diagnostic> validate(const Circuit& c,
                                        std::span<const detail::SourceLoc> element_locs = {},
                                        std::span<const detail::SourceLoc> probe_locs = {}) {
    std::vector<Diagnostic> out;
    auto at = [&](std::size_t i) {
        return i < element_locs.size() ? element_locs[i] : detail::SourceLoc{};
    };
    auto report = [&](DiagnosticKind k, detail::SourceLoc loc, std::string msg) {
        out.push_back(Diagnostic{k, loc.line, loc.column, std::move(msg)});
    };

    if (c.atmosphere.empty()) {
        report(DiagnosticKind::missing_atmosphere, {}, "missing atmosphere node");
    } else if (!c.has_node(c.atmosphere)) {
        report(DiagnosticKind::reference, {}, "atmosphere node '" + c.atmosphere + "' is not declared");
    }

    std::set<std::string> seen_nodes;
    for (const auto& n : c.nodes) {
        if (n.empty()) {
            report(DiagnosticKind::invalid, {}, "empty node label");
        } else if (!seen_nodes.insert(n).second) {
            report(DiagnosticKind::duplicate, {}, "node '" + n + "' declared twice");
        }
    }

    std::set<std::string> labels;
    std::map<std::string, std::string> fixed_by;  // node -> fixing element
    if (!c.atmosphere.empty()) {
        fixed_by[c.atmosphere] = "atmosphere";
    }

    for (std::size_t i = 0; i < c.elements.size(); ++i) {
        const auto& e = c.elements[i];
        const auto label = element_label(e);
        const auto loc = at(i);
        if (!labels.insert(label).second) {
            report(DiagnosticKind::duplicate, loc, "element label '" + label + "' used twice");
        }
        for (const auto& n : element_nodes(e)) {
            if (!c.has_node(n)) {
                report(DiagnosticKind::reference, loc,
                       "element '" + label + "' references undeclared node '" + n + "'");
            }
        }
        std::visit(
            [&](const auto& el) {
                using T = std::decay_t<decltype(el)>;
                if constexpr (std::is_same_v<T, Valve>) {
                    if (el.flow_in == el.flow_out || el.flow_in == el.control ||
                        el.flow_out == el.control) {
                        report(DiagnosticKind::invalid, loc,
                               "valve '" + el.label + "': valve ports must be distinct");
                    }
                    const auto& p = el.params;
                    if (!detail::finite_positive(p.open_resistance.value)) {
                        report(DiagnosticKind::invalid, loc, "valve '" + el.label + "': Ropen must be > 0");
                    }
                    if (!detail::finite_nonneg(p.seal_margin.pa)) {
                        report(DiagnosticKind::invalid, loc, "valve '" + el.label + "': seal must be >= 0");
                    }
                    if (!detail::finite_nonneg(p.tau_close) || !detail::finite_nonneg(p.tau_open)) {
                        report(DiagnosticKind::invalid, loc,
                               "valve '" + el.label + "': time constants must be >= 0");
                    }
                    if (p.gain_model.is_prestressed() &&
                        !detail::finite_positive(*p.gain_model.prestressed_gain)) {
                        report(DiagnosticKind::invalid, loc, "valve '" + el.label + "': gain must be > 0");
                    }
                } else if constexpr (std::is_same_v<T, Channel> || std::is_same_v<T, Resistor>) {
                    if (el.a == el.b) {
                        report(DiagnosticKind::invalid, loc,
                               "'" + el.label + "': channel/resistor ports must be distinct");
                    }
                    if constexpr (std::is_same_v<T, Resistor>) {
                        if (!detail::finite_positive(el.resistance.value)) {
                            report(DiagnosticKind::invalid, loc, "resistor '" + el.label + "': R must be > 0");
                        }
                    }
                } else if constexpr (std::is_same_v<T, Supply>) {
                    if (!std::isfinite(el.pressure.pa)) {
                        report(DiagnosticKind::invalid, loc, "supply '" + el.label + "': pressure not finite");
                    }
                } else if constexpr (std::is_same_v<T, Input>) {
                    if (!c.waveforms.contains(el.wave)) {
                        report(DiagnosticKind::reference, loc,
                               "input '" + el.label + "' references undeclared wave '" + el.wave + "'");
                    }
                }
            },
            e);

        if (const auto* n = detail::fixed_node(e)) {
            const bool vent = std::holds_alternative<Vent>(e);
            auto it = fixed_by.find(*n);
            if (it == fixed_by.end()) {
                fixed_by[*n] = label;
            } else if (!(vent && it->second == "atmosphere")) {
                report(DiagnosticKind::invalid, loc,
                       "node '" + *n + "' is driven by both '" + it->second + "' and '" + label + "'");
            }
        }
    }

    for (const auto& [name, wave] : c.waveforms) {
        if (wave.steps.empty() || wave.steps.front().time != 0.0) {
            report(DiagnosticKind::invalid, {}, "wave '" + name + "' must start at t=0");
        }
        for (std::size_t k = 1; k < wave.steps.size(); ++k) {
            if (!(wave.steps[k].time > wave.steps[k - 1].time)) {
                report(DiagnosticKind::invalid, {}, "wave '" + name + "' times must strictly increase");
                break;
            }
        }
        for (const auto& s : wave.steps) {
            if (!std::isfinite(s.pressure.pa) || !std::isfinite(s.time)) {
                report(DiagnosticKind::invalid, {}, "wave '" + name + "' has a non-finite value");
                break;
            }
        }
    }

    std::set<std::string> probe_labels;
    for (std::size_t i = 0; i < c.probes.size(); ++i) {
        const auto& p = c.probes[i];
        const auto loc = i < probe_locs.size() ? probe_locs[i] : detail::SourceLoc{};
        if (!probe_labels.insert(p.label).second) {
            report(DiagnosticKind::duplicate, loc, "probe label '" + p.label + "' used twice");
        }
        if (!c.has_node(p.node)) {
            report(DiagnosticKind::reference, loc,
                   "probe '" + p.label + "' references undeclared node '" + p.node + "'");
        }
    }

    // Every node must reach a pressure reference through flow paths, taking
    // all valves as open. Control ports carry no flow.
    std::map<std::string, std::vector<std::string>> adj;
    for (const auto& e : c.elements) {
        if (const auto* ch = std::get_if<Channel>(&e)) {
            adj[ch->a].push_back(ch->b);
            adj[ch->b].push_back(ch->a);
        } else if (const auto* r = std::get_if<Resistor>(&e)) {
            adj[r->a].push_back(r->b);
            adj[r->b].push_back(r->a);
        } else if (const auto* v = std::get_if<Valve>(&e)) {
            adj[v->flow_in].push_back(v->flow_out);
            adj[v->flow_out].push_back(v->flow_in);
        }
    }
    std::set<std::string> reached;
    std::deque<std::string> queue;
    for (const auto& [node, by] : fixed_by) {
        if (reached.insert(node).second) {
            queue.push_back(node);
        }
    }
    while (!queue.empty()) {
        auto n = queue.front();
        queue.pop_front();
        for (const auto& m : adj[n]) {
            if (reached.insert(m).second) {
                queue.push_back(m);
            }
        }
    }
    for (const auto& n : c.nodes) {
        if (!reached.contains(n)) {
            report(DiagnosticKind::invalid, {}, "node '" + n + "' has no pressure reference");
        }
    }
    return out;
}

struct ParseResult {
    std::optional<Circuit> circuit;
    std::vector<Diagnostic> diagnostics;

    bool ok() const { return circuit.has_value(); }
};

namespace detail {

struct Token {
    std::string_view text;
    int column;
};

inline std::vector<Token> tokenize(std::string_view line) {
    std::vector<Token> toks;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        if (i >= line.size()) break;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        toks.push_back(Token{line.substr(i, j - i), static_cast<int>(i) + 1});
        i = j;
    }
    return toks;
}

inline std::optional<double> parse_number(std::string_view s) {
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
        return std::nullopt;
    }
    return v;
}

inline bool strip_suffix(std::string_view& s, std::string_view suffix) {
    if (s.size() > suffix.size() && s.ends_with(suffix)) {
        s.remove_suffix(suffix.size());
        return true;
    }
    return false;
}

struct QuantityError {
    std::string message;
};

template <class T>
using Parsed = std::variant<T, QuantityError>;

inline Parsed<Pressure> parse_pressure(std::string_view s) {
    double scale = 0.0;
    if (strip_suffix(s, "kPa")) {
        scale = 1e3;
    } else if (strip_suffix(s, "Pa")) {
        scale = 1.0;
    } else {
        return QuantityError{"pressure needs a Pa or kPa suffix"};
    }
    auto v = parse_number(s);
    if (!v) return QuantityError{"unparsable pressure value '" + std::string(s) + "'"};
    return Pressure{*v * scale};
}

inline Parsed<double> parse_length(std::string_view s) {
    double scale = 0.0;
    if (strip_suffix(s, "mm")) {
        scale = 1e-3;
    } else if (strip_suffix(s, "um")) {
        scale = 1e-6;
    } else if (strip_suffix(s, "m")) {
        scale = 1.0;
    } else {
        return QuantityError{"length needs an m, mm or um suffix"};
    }
    auto v = parse_number(s);
    if (!v) return QuantityError{"unparsable length value '" + std::string(s) + "'"};
    return *v * scale;
}

inline Parsed<double> parse_plain(std::string_view s, std::string_view optional_suffix,
                                  std::string_view what) {
    strip_suffix(s, optional_suffix);
    auto v = parse_number(s);
    if (!v) return QuantityError{"unparsable " + std::string(what) + " '" + std::string(s) + "'"};
    return *v;
}

class Parser {
public:
    ParseResult run(std::string_view text) {
        int line_no = 0;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            auto end = text.find('\n', pos);
            if (end == std::string_view::npos) end = text.size();
            auto line = text.substr(pos, end - pos);
            ++line_no;
            if (auto hash = line.find('#'); hash != std::string_view::npos) {
                line = line.substr(0, hash);
            }
            statement(line_no, tokenize(line));
            pos = end + 1;
        }
        if (diags_.empty()) {
            auto more = validate(circuit_, element_locs_, probe_locs_);
            diags_.insert(diags_.end(), more.begin(), more.end());
        }
        ParseResult result;
        if (diags_.empty()) {
            result.circuit = std::move(circuit_);
        }
        result.diagnostics = std::move(diags_);
        return result;
    }

private:
    void error(DiagnosticKind k, int line, int col, std::string msg) {
        diags_.push_back(Diagnostic{k, line, col, std::move(msg)});
    }

    void statement(int line, const std::vector<Token>& toks) {
        if (toks.empty()) return;
        const auto kw = toks[0].text;
        if (kw == "fluid") {
            fluid(line, toks);
        } else if (kw == "node") {
            if (!expect_args(line, toks, 2, "node <label>")) return;
            const std::string n(toks[1].text);
            if (!explicit_nodes_.insert(n).second) {
                error(DiagnosticKind::duplicate, line, toks[1].column, "node '" + n + "' declared twice");
            }
            circuit_.declare_node(n);
        } else if (kw == "atm") {
            if (!expect_args(line, toks, 2, "atm <node>")) return;
            if (!circuit_.atmosphere.empty()) {
                error(DiagnosticKind::duplicate, line, toks[0].column, "atmosphere node declared twice");
                return;
            }
            circuit_.set_atmosphere(std::string(toks[1].text));
        } else if (kw == "supply") {
            supply(line, toks);
        } else if (kw == "input") {
            input(line, toks);
        } else if (kw == "wave") {
            wave(line, toks);
        } else if (kw == "channel") {
            channel(line, toks);
        } else if (kw == "resistor") {
            resistor(line, toks);
        } else if (kw == "valve") {
            valve(line, toks);
        } else if (kw == "vent") {
            if (!expect_args(line, toks, 2, "vent <node>")) return;
            add(Vent{std::string(toks[1].text)}, line, toks[0].column);
        } else if (kw == "probe") {
            if (!expect_args(line, toks, 3, "probe <label> <node>")) return;
            circuit_.add_probe(std::string(toks[1].text), std::string(toks[2].text));
            probe_locs_.push_back(SourceLoc{line, toks[0].column});
        } else {
            error(DiagnosticKind::lexical, line, toks[0].column, "unknown statement '" + std::string(kw) + "'");
        }
    }

    bool expect_args(int line, const std::vector<Token>& toks, std::size_t n, std::string_view usage) {
        if (toks.size() < n) {
            error(DiagnosticKind::lexical, line, toks.back().column,
                  "too few fields, expected '" + std::string(usage) + "'");
            return false;
        }
        if (toks.size() > n) {
            error(DiagnosticKind::lexical, line, toks[n].column,
                  "unexpected token '" + std::string(toks[n].text) + "'");
            return false;
        }
        return true;
    }

    void add(Element e, int line, int col) {
        circuit_.add(std::move(e));
        element_locs_.push_back(SourceLoc{line, col});
    }

    // key=value arguments; unknown or repeated keys are errors.
    std::optional<std::map<std::string, std::pair<std::string_view, int>>> keyvals(
        int line, const std::vector<Token>& toks, std::size_t first, std::initializer_list<std::string_view> allowed,
        std::initializer_list<std::string_view> required) {
        std::map<std::string, std::pair<std::string_view, int>> kv;
        bool ok = true;
        for (std::size_t i = first; i < toks.size(); ++i) {
            const auto t = toks[i].text;
            const auto eq = t.find('=');
            if (eq == std::string_view::npos || eq == 0) {
                error(DiagnosticKind::lexical, line, toks[i].column, "expected key=value, got '" + std::string(t) + "'");
                ok = false;
                continue;
            }
            const std::string key(t.substr(0, eq));
            if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
                error(DiagnosticKind::lexical, line, toks[i].column, "unknown key '" + key + "'");
                ok = false;
                continue;
            }
            if (!kv.emplace(key, std::pair{t.substr(eq + 1), toks[i].column + static_cast<int>(eq) + 1}).second) {
                error(DiagnosticKind::duplicate, line, toks[i].column, "key '" + key + "' given twice");
                ok = false;
            }
        }
        for (auto r : required) {
            if (!kv.contains(std::string(r))) {
                error(DiagnosticKind::lexical, line, toks[0].column, "missing required key '" + std::string(r) + "'");
                ok = false;
            }
        }
        if (!ok) return std::nullopt;
        return kv;
    }

    template <class T>
    std::optional<T> unwrap(Parsed<T> p, int line, int col) {
        if (auto* err = std::get_if<QuantityError>(&p)) {
            error(DiagnosticKind::unit, line, col, err->message);
            return std::nullopt;
        }
        return std::get<T>(p);
    }

    void fluid(int line, const std::vector<Token>& toks) {
        if (fluid_seen_) {
            error(DiagnosticKind::duplicate, line, toks[0].column, "fluid declared twice");
            return;
        }
        fluid_seen_ = true;
        if (toks.size() < 2) {
            error(DiagnosticKind::lexical, line, toks[0].column, "fluid needs air, water or custom mu=<val>Pa.s");
            return;
        }
        const auto kind = toks[1].text;
        if (kind == "air" || kind == "water") {
            if (toks.size() > 2) {
                error(DiagnosticKind::lexical, line, toks[2].column, "unexpected token '" + std::string(toks[2].text) + "'");
                return;
            }
            circuit_.fluid = kind == "air" ? Fluid::air() : Fluid::water();
        } else if (kind == "custom") {
            auto kv = keyvals(line, toks, 2, {"mu"}, {"mu"});
            if (!kv) return;
            auto [text, col] = kv->at("mu");
            auto mu = unwrap(parse_plain(text, "Pa.s", "viscosity"), line, col);
            if (!mu) return;
            if (*mu <= 0.0) {
                error(DiagnosticKind::unit, line, col, "viscosity must be > 0");
                return;
            }
            circuit_.fluid = Fluid{"custom", *mu};
        } else {
            error(DiagnosticKind::lexical, line, toks[1].column, "unknown fluid '" + std::string(kind) + "'");
        }
    }

    void supply(int line, const std::vector<Token>& toks) {
        if (toks.size() < 3) {
            error(DiagnosticKind::lexical, line, toks[0].column, "expected 'supply <label> <node> P=<val><Pa|kPa>'");
            return;
        }
        auto kv = keyvals(line, toks, 3, {"P"}, {"P"});
        if (!kv) return;
        auto [text, col] = kv->at("P");
        auto p = unwrap(parse_pressure(text), line, col);
        if (!p) return;
        add(Supply{std::string(toks[1].text), std::string(toks[2].text), *p}, line, toks[0].column);
    }

    void input(int line, const std::vector<Token>& toks) {
        if (toks.size() < 3) {
            error(DiagnosticKind::lexical, line, toks[0].column, "expected 'input <label> <node> wave=<wave>'");
            return;
        }
        auto kv = keyvals(line, toks, 3, {"wave"}, {"wave"});
        if (!kv) return;
        add(Input{std::string(toks[1].text), std::string(toks[2].text), std::string(kv->at("wave").first)}, line,
            toks[0].column);
    }

    void wave(int line, const std::vector<Token>& toks) {
        if (toks.size() < 3) {
            error(DiagnosticKind::lexical, line, toks[0].column, "expected 'wave <label> (t=<s>:P=<val><Pa|kPa>)+'");
            return;
        }
        const std::string label(toks[1].text);
        if (circuit_.waveforms.contains(label)) {
            error(DiagnosticKind::duplicate, line, toks[1].column, "wave '" + label + "' declared twice");
            return;
        }
        Waveform w;
        for (std::size_t i = 2; i < toks.size(); ++i) {
            const auto t = toks[i].text;
            const auto colon = t.find(':');
            if (!t.starts_with("t=") || colon == std::string_view::npos ||
                !t.substr(colon + 1).starts_with("P=")) {
                error(DiagnosticKind::lexical, line, toks[i].column, "expected t=<s>:P=<val>, got '" + std::string(t) + "'");
                return;
            }
            auto time = unwrap(parse_plain(t.substr(2, colon - 2), "s", "time"), line, toks[i].column);
            auto p = unwrap(parse_pressure(t.substr(colon + 3)), line, toks[i].column);
            if (!time || !p) return;
            w.steps.push_back(WaveStep{*time, *p});
        }
        circuit_.waveforms.emplace(label, std::move(w));
    }

    void channel(int line, const std::vector<Token>& toks) {
        if (toks.size() < 4) {
            error(DiagnosticKind::lexical, line, toks[0].column, "expected 'channel <label> <a> <b> L= w= h='");
            return;
        }
        auto kv = keyvals(line, toks, 4, {"L", "w", "h"}, {"L", "w", "h"});
        if (!kv) return;
        std::optional<double> dims[3];
        const char* keys[3] = {"L", "w", "h"};
        for (int k = 0; k < 3; ++k) {
            auto [text, col] = kv->at(keys[k]);
            dims[k] = unwrap(parse_length(text), line, col);
            if (!dims[k]) return;
        }
        try {
            add(Channel{std::string(toks[1].text), std::string(toks[2].text), std::string(toks[3].text),
                        ChannelGeometry(*dims[0], *dims[1], *dims[2])},
                line, toks[0].column);
        } catch (const InvalidGeometry& e) {
            error(DiagnosticKind::invalid, line, toks[0].column, e.what());
        }
    }

    void resistor(int line, const std::vector<Token>& toks) {
        if (toks.size() < 4) {
            error(DiagnosticKind::lexical, line, toks[0].column, "expected 'resistor <label> <a> <b> R=<val>'");
            return;
        }
        auto kv = keyvals(line, toks, 4, {"R"}, {"R"});
        if (!kv) return;
        auto [text, col] = kv->at("R");
        auto r = unwrap(parse_plain(text, "Pa.s/m3", "resistance"), line, col);
        if (!r) return;
        add(Resistor{std::string(toks[1].text), std::string(toks[2].text), std::string(toks[3].text), Resistance{*r}},
            line, toks[0].column);
    }

    void valve(int line, const std::vector<Token>& toks) {
        if (toks.size() < 2) {
            error(DiagnosticKind::lexical, line, toks[0].column, "expected 'valve <label> flow=<a>,<b> ctrl=<c> ...'");
            return;
        }
        auto kv = keyvals(line, toks, 2, {"flow", "ctrl", "Ropen", "seal", "tau_close", "tau_open", "gain"},
                          {"flow", "ctrl"});
        if (!kv) return;
        Valve v;
        v.label = std::string(toks[1].text);
        {
            auto [text, col] = kv->at("flow");
            const auto comma = text.find(',');
            if (comma == std::string_view::npos || comma == 0 || comma + 1 == text.size() ||
                text.find(',', comma + 1) != std::string_view::npos) {
                error(DiagnosticKind::lexical, line, col, "flow= needs two nodes separated by a comma");
                return;
            }
            v.flow_in = std::string(text.substr(0, comma));
            v.flow_out = std::string(text.substr(comma + 1));
        }
        v.control = std::string(kv->at("ctrl").first);
        bool ok = true;
        if (auto it = kv->find("Ropen"); it != kv->end()) {
            auto r = unwrap(parse_plain(it->second.first, "Pa.s/m3", "resistance"), line, it->second.second);
            ok = ok && r;
            if (r) v.params.open_resistance = Resistance{*r};
        }
        if (auto it = kv->find("seal"); it != kv->end()) {
            auto p = unwrap(parse_pressure(it->second.first), line, it->second.second);
            ok = ok && p;
            if (p) v.params.seal_margin = *p;
        }
        if (auto it = kv->find("tau_close"); it != kv->end()) {
            auto t = unwrap(parse_plain(it->second.first, "s", "time"), line, it->second.second);
            ok = ok && t;
            if (t) v.params.tau_close = *t;
        }
        if (auto it = kv->find("tau_open"); it != kv->end()) {
            auto t = unwrap(parse_plain(it->second.first, "s", "time"), line, it->second.second);
            ok = ok && t;
            if (t) v.params.tau_open = *t;
        }
        if (auto it = kv->find("gain"); it != kv->end()) {
            auto g = unwrap(parse_plain(it->second.first, "", "gain"), line, it->second.second);
            ok = ok && g;
            if (g) v.params.gain_model = GainModel::pre_stressed(*g);
        }
        if (ok) {
            add(std::move(v), line, toks[0].column);
        }
    }

    Circuit circuit_;
    bool fluid_seen_ = false;
    std::set<std::string> explicit_nodes_;
    std::vector<Diagnostic> diags_;
    std::vector<SourceLoc> element_locs_;
    std::vector<SourceLoc> probe_locs_;
};

}  // namespace detail

/// Parses netlist text. Never throws on malformed input: the result holds
/// either a validated circuit or the diagnostics.
inline ParseResult parse(std::string_view text) {
    try {
        return detail::Parser{}.run(text);
    } catch (const std::exception& e) {
        ParseResult r;
        r.diagnostics.push_back(Diagnostic{DiagnosticKind::invalid, 0, 0, e.what()});
        return r;
    }
}

/// Canonical text form; parse(serialize(c)) == c for any valid circuit whose
/// fluid is air, water, or named "custom".
inline std::string serialize(const Circuit& c) {
    std::ostringstream os;
    if (c.fluid == Fluid::air()) {
        os << "fluid air\n";
    } else if (c.fluid == Fluid::water()) {
        os << "fluid water\n";
    } else {
        os << "fluid custom mu=" << format_exact(c.fluid.dynamic_viscosity) << "Pa.s\n";
    }
    for (const auto& n : c.nodes) {
        os << "node " << n << "\n";
    }
    os << "atm " << c.atmosphere << "\n";
    for (const auto& [label, w] : c.waveforms) {
        os << "wave " << label;
        for (const auto& s : w.steps) {
            os << " t=" << format_exact(s.time) << ":P=" << format_exact(s.pressure.pa) << "Pa";
        }
        os << "\n";
    }
    for (const auto& e : c.elements) {
        std::visit(
            [&](const auto& el) {
                using T = std::decay_t<decltype(el)>;
                if constexpr (std::is_same_v<T, Supply>) {
                    os << "supply " << el.label << " " << el.node << " P=" << format_exact(el.pressure.pa) << "Pa";
                } else if constexpr (std::is_same_v<T, Input>) {
                    os << "input " << el.label << " " << el.node << " wave=" << el.wave;
                } else if constexpr (std::is_same_v<T, Channel>) {
                    os << "channel " << el.label << " " << el.a << " " << el.b
                       << " L=" << format_exact(el.geom.length()) << "m"
                       << " w=" << format_exact(el.geom.width()) << "m"
                       << " h=" << format_exact(el.geom.height()) << "m";
                } else if constexpr (std::is_same_v<T, Resistor>) {
                    os << "resistor " << el.label << " " << el.a << " " << el.b
                       << " R=" << format_exact(el.resistance.value);
                } else if constexpr (std::is_same_v<T, Valve>) {
                    const auto& p = el.params;
                    os << "valve " << el.label << " flow=" << el.flow_in << "," << el.flow_out
                       << " ctrl=" << el.control << " Ropen=" << format_exact(p.open_resistance.value)
                       << " seal=" << format_exact(p.seal_margin.pa) << "Pa"
                       << " tau_close=" << format_exact(p.tau_close)
                       << " tau_open=" << format_exact(p.tau_open);
                    if (p.gain_model.is_prestressed()) {
                        os << " gain=" << format_exact(*p.gain_model.prestressed_gain);
                    }
                } else if constexpr (std::is_same_v<T, Vent>) {
                    os << "vent " << el.node;
                }
            },
            e);
        os << "\n";
    }
    for (const auto& p : c.probes) {
        os << "probe " << p.label << " " << p.node << "\n";
    }
    return os.str();
}

/// A circuit whose channels have all been lumped into resistors.
class ElaboratedCircuit {
public:
    const Circuit& circuit() const { return circuit_; }
    const Circuit* operator->() const { return &circuit_; }

    friend bool operator==(const ElaboratedCircuit&, const ElaboratedCircuit&) = default;

private:
    explicit ElaboratedCircuit(Circuit c) : circuit_(std::move(c)) {}
    friend ElaboratedCircuit elaborate(const Circuit& c);

    Circuit circuit_;
};

/// Validates `c` and replaces every channel with its series-formula resistor.
/// Throws InvalidCircuit when an invariant does not hold.
inline ElaboratedCircuit elaborate(const Circuit& c) {
    if (auto diags = validate(c); !diags.empty()) {
        throw InvalidCircuit(std::move(diags));
    }
    Circuit out = c;
    for (auto& e : out.elements) {
        if (const auto* ch = std::get_if<Channel>(&e)) {
            e = Resistor{ch->label, ch->a, ch->b, rectangular_channel_resistance(ch->geom, c.fluid)};
        }
    }
    return ElaboratedCircuit(std::move(out));
}

inline ElaboratedCircuit elaborate(const ElaboratedCircuit& c) { return elaborate(c.circuit()); }

}  // namespace fluidlogic
