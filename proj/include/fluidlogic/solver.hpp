#pragma once

// Steady-state and quasi-static transient solution of an elaborated circuit.
//
// Channels and open valves are linear resistors; a closed valve conducts
// nothing. Supplies, inputs, vents and the atmosphere node pin pressures.
// Valve states depend on the pressures they produce, so a static solve is a
// fixed-point iteration over the state vector with one dense linear solve per
// iterate. Transients add only valve actuation lag: between events the
// network is at steady state.

#include "fluidlogic/netlist.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace fluidlogic {

enum class ValveState { open, closed };

inline const char* to_string(ValveState s) { return s == ValveState::open ? "open" : "closed"; }

using ValveStates = std::map<std::string, ValveState>;
using InputLevels = std::map<std::string, Pressure>;

struct ValveStatus {
    ValveState state = ValveState::open;
    double progress = 1.0;  // fraction of the way to the commanded state
    friend bool operator==(const ValveStatus&, const ValveStatus&) = default;
};

struct PressureSolution {
    std::map<std::string, Pressure> node_pressures;
    std::map<std::string, double> element_flows;  // m^3/s, + from a/flow_in to b/flow_out
    std::map<std::string, ValveStatus> valves;
    std::map<std::string, Pressure> probe_pressures;
    /// Nodes sealed off from every pressure reference by closed valves; held at 0.
    std::vector<std::string> isolated_nodes;

    Pressure at(const std::string& node) const { return node_pressures.at(node); }
    Pressure probe(const std::string& label) const { return probe_pressures.at(label); }
    double flow(const std::string& element) const { return element_flows.at(element); }

    ValveStates valve_states() const {
        ValveStates s;
        for (const auto& [label, v] : valves) s[label] = v.state;
        return s;
    }
};

/// Fixed-point iteration revisited a state vector without converging.
struct NoStableState {
    std::vector<ValveStates> cycle;
    bool iteration_limit = false;

    std::string describe() const {
        std::string s = iteration_limit ? "no stable valve state (iteration limit reached)"
                                        : "no stable valve state; cycle of length " + std::to_string(cycle.size());
        for (std::size_t k = 0; k < cycle.size(); ++k) {
            s += "\n  [" + std::to_string(k) + "]";
            for (const auto& [label, st] : cycle[k]) {
                s += " " + label + "=" + to_string(st);
            }
        }
        return s;
    }
};

using StaticResult = std::variant<PressureSolution, NoStableState>;

class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SingularSystem : public SolverError {
public:
    explicit SingularSystem(std::vector<std::string> nodes)
        : SolverError(message(nodes)), nodes_(std::move(nodes)) {}
    const std::vector<std::string>& nodes() const { return nodes_; }

private:
    static std::string message(const std::vector<std::string>& nodes) {
        std::string s = "singular system: no pressure reference for";
        for (const auto& n : nodes) s += " " + n;
        return s;
    }
    std::vector<std::string> nodes_;
};

class NoStableStateError : public SolverError {
public:
    explicit NoStableStateError(NoStableState detail)
        : SolverError(detail.describe()), detail_(std::move(detail)) {}
    const NoStableState& detail() const { return detail_; }

private:
    NoStableState detail_;
};

class Livelock : public SolverError {
public:
    Livelock(double time, std::vector<std::string> valves)
        : SolverError(message(time, valves)), time_(time), valves_(std::move(valves)) {}
    double time() const { return time_; }
    const std::vector<std::string>& valves() const { return valves_; }

private:
    static std::string message(double t, const std::vector<std::string>& valves) {
        std::string s = "zero-delay livelock near t=" + format_number(t, 9) + " s; valves:";
        for (const auto& v : valves) s += " " + v;
        return s;
    }
    double time_;
    std::vector<std::string> valves_;
};

/// Relative slack on the closing comparison, absorbing round-off when a
/// control pressure is set exactly at its threshold.
inline constexpr double kSwitchSlack = 1e-12;

/// Closed iff the effective control pressure reaches the larger flow-port
/// pressure plus the seal margin.
inline ValveState valve_commanded_state(Pressure control, Pressure flow_max, const ValveParams& params) {
    const double effective = params.gain_model.factor() * control.pa;
    const double needed = flow_max.pa + params.seal_margin.pa;
    return effective >= needed - kSwitchSlack * std::abs(needed) ? ValveState::closed : ValveState::open;
}

namespace detail {
inline bool debug_logging() {
    static const bool on = [] {
        const char* v = std::getenv("FLUIDLOG");
        return v != nullptr && std::string(v) == "debug";
    }();
    return on;
}
}  // namespace detail

/// Index-based form of an elaborated circuit, built once per solve series.
class Network {
public:
    struct Branch {
        int a;
        int b;
        double conductance;
        std::size_t element;
    };

    struct ValveRef {
        int in;
        int out;
        int control;
        double conductance;
        ValveParams params;
        std::string label;
        std::size_t element;
    };

    struct Source {
        std::string label;
        int node;
        std::size_t element;
    };

    explicit Network(const ElaboratedCircuit& ec) : circuit_(ec.circuit()) {
        const auto& c = circuit_;
        for (std::size_t i = 0; i < c.nodes.size(); ++i) {
            index_[c.nodes[i]] = static_cast<int>(i);
        }
        fixed_.assign(c.nodes.size(), Fixed::none);
        fixed_value_.assign(c.nodes.size(), 0.0);
        fixed_source_.assign(c.nodes.size(), -1);
        fixed_[node(c.atmosphere)] = Fixed::zero;
        for (std::size_t i = 0; i < c.elements.size(); ++i) {
            const auto& e = c.elements[i];
            if (const auto* s = std::get_if<Supply>(&e)) {
                const int n = node(s->node);
                fixed_[n] = Fixed::supply;
                fixed_value_[n] = s->pressure.pa;
                fixed_source_[n] = static_cast<int>(i);
                supplies_.push_back(Source{s->label, n, i});
            } else if (const auto* in = std::get_if<Input>(&e)) {
                const int n = node(in->node);
                fixed_[n] = Fixed::input;
                fixed_source_[n] = static_cast<int>(i);
                inputs_.push_back(Source{in->label, n, i});
            } else if (const auto* v = std::get_if<Vent>(&e)) {
                const int n = node(v->node);
                if (fixed_[n] == Fixed::none) fixed_[n] = Fixed::zero;
                vents_.push_back(Source{element_label(e), n, i});
            } else if (const auto* r = std::get_if<Resistor>(&e)) {
                resistors_.push_back(Branch{node(r->a), node(r->b), r->resistance.conductance(), i});
            } else if (const auto* v = std::get_if<Valve>(&e)) {
                valves_.push_back(ValveRef{node(v->flow_in), node(v->flow_out), node(v->control),
                                           v->params.open_resistance.conductance(), v->params, v->label, i});
            } else {
                throw SolverError("circuit must be elaborated before solving");
            }
        }
        check_references();
    }

    const Circuit& circuit() const { return circuit_; }
    std::size_t node_count() const { return circuit_.nodes.size(); }
    const std::vector<ValveRef>& valves() const { return valves_; }
    const std::vector<Source>& inputs() const { return inputs_; }

    int node(const std::string& label) const { return index_.at(label); }

    std::vector<ValveState> to_vector(const ValveStates& states) const {
        std::vector<ValveState> out(valves_.size(), ValveState::open);
        for (std::size_t k = 0; k < valves_.size(); ++k) {
            if (auto it = states.find(valves_[k].label); it != states.end()) {
                out[k] = it->second;
            } else {
                throw std::invalid_argument("no state given for valve '" + valves_[k].label + "'");
            }
        }
        return out;
    }

    ValveStates to_map(const std::vector<ValveState>& states) const {
        ValveStates out;
        for (std::size_t k = 0; k < valves_.size(); ++k) out[valves_[k].label] = states[k];
        return out;
    }

    /// Input pressures in network order; every input must be assigned.
    std::vector<double> input_vector(const InputLevels& levels) const {
        std::vector<double> out;
        out.reserve(inputs_.size());
        for (const auto& in : inputs_) {
            auto it = levels.find(in.label);
            if (it == levels.end()) {
                throw std::invalid_argument("input '" + in.label + "' has no assigned pressure");
            }
            out.push_back(it->second.pa);
        }
        for (const auto& [label, p] : levels) {
            if (std::none_of(inputs_.begin(), inputs_.end(), [&](const Source& s) { return s.label == label; })) {
                throw std::invalid_argument("no input named '" + label + "'");
            }
        }
        return out;
    }

    std::vector<double> inputs_at(double t) const {
        std::vector<double> out;
        for (const auto& in : inputs_) {
            const auto& wave = std::get<Input>(circuit_.elements[in.element]).wave;
            out.push_back(circuit_.waveforms.at(wave).at(t).pa);
        }
        return out;
    }

    /// Node pressures for fixed valve states: one dense linear solve.
    /// `scale` multiplies every supply and input (used for linearity checks).
    std::vector<double> node_pressures(const std::vector<double>& input_p, const std::vector<ValveState>& states,
                                       std::vector<bool>* isolated = nullptr, double scale = 1.0) const {
        const std::size_t n = node_count();
        std::vector<double> p(n, 0.0);
        std::vector<bool> known(n, false);
        for (std::size_t i = 0; i < n; ++i) {
            if (fixed_[i] != Fixed::none) {
                known[i] = true;
                p[i] = scale * fixed_value_[i];
            }
        }
        for (std::size_t k = 0; k < inputs_.size(); ++k) {
            p[inputs_[k].node] = scale * input_p[k];
        }

        struct Edge {
            int a;
            int b;
            double g;
        };
        std::vector<Edge> edges;
        std::vector<std::vector<int>> incident(n);
        auto add_edge = [&](int a, int b, double g) {
            incident[a].push_back(static_cast<int>(edges.size()));
            incident[b].push_back(static_cast<int>(edges.size()));
            edges.push_back(Edge{a, b, g});
        };
        for (const auto& r : resistors_) add_edge(r.a, r.b, r.conductance);
        for (std::size_t k = 0; k < valves_.size(); ++k) {
            if (states[k] == ValveState::open) add_edge(valves_[k].in, valves_[k].out, valves_[k].conductance);
        }

        // Nodes with no conducting path to a fixed pressure.
        std::vector<bool> referenced(n, false);
        std::deque<int> queue;
        for (std::size_t i = 0; i < n; ++i) {
            if (known[i]) {
                referenced[i] = true;
                queue.push_back(static_cast<int>(i));
            }
        }
        while (!queue.empty()) {
            const int u = queue.front();
            queue.pop_front();
            for (int e : incident[u]) {
                const int v = edges[e].a == u ? edges[e].b : edges[e].a;
                if (!referenced[v]) {
                    referenced[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if (isolated) isolated->assign(n, false);
        for (std::size_t i = 0; i < n; ++i) {
            if (!referenced[i]) {
                known[i] = true;
                p[i] = 0.0;
                if (isolated) (*isolated)[i] = true;
            }
        }

        // Strip dead-end chains: a free node with a single conducting edge
        // carries no flow and takes its neighbour's pressure.
        std::vector<bool> removed(edges.size(), false);
        std::vector<int> degree(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            if (!known[i]) degree[i] = static_cast<int>(incident[i].size());
        }
        std::vector<std::pair<int, int>> eliminated;  // (node, attachment)
        std::vector<bool> pruned(n, false);
        std::deque<int> leaves;
        for (std::size_t i = 0; i < n; ++i) {
            if (!known[i] && degree[i] == 1) leaves.push_back(static_cast<int>(i));
        }
        while (!leaves.empty()) {
            const int u = leaves.front();
            leaves.pop_front();
            if (pruned[u] || degree[u] != 1) continue;
            int via = -1;
            for (int e : incident[u]) {
                if (!removed[e]) via = e;
            }
            removed[via] = true;
            pruned[u] = true;
            const int v = edges[via].a == u ? edges[via].b : edges[via].a;
            eliminated.emplace_back(u, v);
            if (!known[v] && !pruned[v] && --degree[v] == 1) leaves.push_back(v);
        }

        std::vector<int> unknown_index(n, -1);
        int m = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!known[i] && !pruned[i]) unknown_index[i] = m++;
        }
        if (m > 0) {
            Eigen::MatrixXd G = Eigen::MatrixXd::Zero(m, m);
            Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
            for (std::size_t e = 0; e < edges.size(); ++e) {
                if (removed[e]) continue;
                const auto [a, b, g] = edges[e];
                const int ia = unknown_index[a];
                const int ib = unknown_index[b];
                if (ia >= 0) G(ia, ia) += g;
                if (ib >= 0) G(ib, ib) += g;
                if (ia >= 0 && ib >= 0) {
                    G(ia, ib) -= g;
                    G(ib, ia) -= g;
                } else if (ia >= 0) {
                    rhs(ia) += g * p[b];
                } else if (ib >= 0) {
                    rhs(ib) += g * p[a];
                }
            }
            const Eigen::VectorXd x = G.partialPivLu().solve(rhs);
            for (std::size_t i = 0; i < n; ++i) {
                if (unknown_index[i] >= 0) p[i] = x(unknown_index[i]);
            }
        }
        for (auto it = eliminated.rbegin(); it != eliminated.rend(); ++it) {
            p[it->first] = p[it->second];
        }
        return p;
    }

    std::vector<ValveState> commanded(const std::vector<double>& p) const {
        std::vector<ValveState> out;
        out.reserve(valves_.size());
        for (const auto& v : valves_) {
            out.push_back(valve_commanded_state(Pressure{p[v.control]}, Pressure{std::max(p[v.in], p[v.out])},
                                                v.params));
        }
        return out;
    }

    PressureSolution solution(const std::vector<double>& p, const std::vector<ValveState>& states,
                              const std::vector<bool>& isolated) const {
        const auto& c = circuit_;
        PressureSolution sol;
        for (std::size_t i = 0; i < c.nodes.size(); ++i) {
            sol.node_pressures[c.nodes[i]] = Pressure{p[i]};
            if (isolated[i]) sol.isolated_nodes.push_back(c.nodes[i]);
        }
        std::vector<double> outflow(node_count(), 0.0);  // net flow leaving each node via branches
        auto branch = [&](int a, int b, double q, std::size_t element) {
            sol.element_flows[element_label(c.elements[element])] = q;
            outflow[a] += q;
            outflow[b] -= q;
        };
        for (const auto& r : resistors_) branch(r.a, r.b, (p[r.a] - p[r.b]) * r.conductance, r.element);
        for (std::size_t k = 0; k < valves_.size(); ++k) {
            const auto& v = valves_[k];
            const double q = states[k] == ValveState::open ? (p[v.in] - p[v.out]) * v.conductance : 0.0;
            branch(v.in, v.out, q, v.element);
            sol.valves[v.label] = ValveStatus{states[k], 1.0};
        }
        for (const auto& s : supplies_) sol.element_flows[s.label] = outflow[s.node];
        for (const auto& s : inputs_) sol.element_flows[s.label] = outflow[s.node];
        for (const auto& s : vents_) {
            const bool owns = fixed_source_[s.node] < 0;
            sol.element_flows[s.label] = owns ? -outflow[s.node] : 0.0;
        }
        for (const auto& pr : c.probes) sol.probe_pressures[pr.label] = Pressure{p[node(pr.node)]};
        return sol;
    }

    PressureSolution solve(const std::vector<double>& input_p, const std::vector<ValveState>& states) const {
        std::vector<bool> isolated;
        auto p = node_pressures(input_p, states, &isolated);
        return solution(p, states, isolated);
    }

private:
    enum class Fixed { none, zero, supply, input };

    void check_references() const {
        // With every valve open, each node must reach a pinned pressure.
        const std::size_t n = node_count();
        std::vector<std::vector<int>> adj(n);
        for (const auto& r : resistors_) {
            adj[r.a].push_back(r.b);
            adj[r.b].push_back(r.a);
        }
        for (const auto& v : valves_) {
            adj[v.in].push_back(v.out);
            adj[v.out].push_back(v.in);
        }
        std::vector<bool> seen(n, false);
        std::deque<int> queue;
        for (std::size_t i = 0; i < n; ++i) {
            if (fixed_[i] != Fixed::none) {
                seen[i] = true;
                queue.push_back(static_cast<int>(i));
            }
        }
        while (!queue.empty()) {
            const int u = queue.front();
            queue.pop_front();
            for (int v : adj[u]) {
                if (!seen[v]) {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        std::vector<std::string> floating;
        for (std::size_t i = 0; i < n; ++i) {
            if (!seen[i]) floating.push_back(circuit_.nodes[i]);
        }
        if (!floating.empty()) throw SingularSystem(std::move(floating));
    }

    Circuit circuit_;
    std::map<std::string, int> index_;
    std::vector<Fixed> fixed_;
    std::vector<double> fixed_value_;
    std::vector<int> fixed_source_;
    std::vector<Branch> resistors_;
    std::vector<ValveRef> valves_;
    std::vector<Source> supplies_;
    std::vector<Source> inputs_;
    std::vector<Source> vents_;
};

struct StaticOptions {
    /// Cap on state-vector visits; the default is min(2 * 2^valves, 4096).
    std::optional<std::size_t> max_visits;
};

namespace detail {

inline std::size_t default_visit_limit(std::size_t valves) {
    if (valves >= 11) return 4096;
    return std::min<std::size_t>(std::size_t{2} << valves, 4096);
}

inline void log_states(std::size_t iter, const Network& net, const std::vector<ValveState>& s) {
    std::clog << "[fluidlogic] iteration " << iter << ":";
    for (std::size_t k = 0; k < s.size(); ++k) std::clog << " " << net.valves()[k].label << "=" << to_string(s[k]);
    std::clog << "\n";
}

inline StaticResult fixed_point(const Network& net, const std::vector<double>& inputs,
                                std::vector<ValveState> states, const StaticOptions& opts) {
    const std::size_t limit = opts.max_visits.value_or(default_visit_limit(net.valves().size()));
    std::vector<std::vector<ValveState>> visited;
    std::map<std::vector<ValveState>, std::size_t> first_seen;
    for (std::size_t iter = 0;; ++iter) {
        if (debug_logging()) log_states(iter, net, states);
        first_seen.emplace(states, visited.size());
        visited.push_back(states);

        std::vector<bool> isolated;
        const auto p = net.node_pressures(inputs, states, &isolated);
        auto next = net.commanded(p);
        if (next == states) {
            return net.solution(p, states, isolated);
        }
        if (auto it = first_seen.find(next); it != first_seen.end()) {
            NoStableState fail;
            for (std::size_t k = it->second; k < visited.size(); ++k) fail.cycle.push_back(net.to_map(visited[k]));
            return fail;
        }
        if (visited.size() >= limit) {
            NoStableState fail;
            fail.iteration_limit = true;
            fail.cycle.push_back(net.to_map(next));
            return fail;
        }
        states = std::move(next);
    }
}

}  // namespace detail

/// Jacobi fixed-point iteration over valve states, starting from
/// `initial_states` (all open when absent). Returns the converged solution, or
/// NoStableState with the repeating state sequence.
inline StaticResult solve_static(const Network& net, const InputLevels& inputs,
                                 const std::optional<ValveStates>& initial_states = std::nullopt,
                                 const StaticOptions& opts = {}) {
    auto start = initial_states ? net.to_vector(*initial_states)
                                : std::vector<ValveState>(net.valves().size(), ValveState::open);
    return detail::fixed_point(net, net.input_vector(inputs), std::move(start), opts);
}

inline StaticResult solve_static(const ElaboratedCircuit& c, const InputLevels& inputs,
                                 const std::optional<ValveStates>& initial_states = std::nullopt,
                                 const StaticOptions& opts = {}) {
    return solve_static(Network(c), inputs, initial_states, opts);
}

/// Solution for explicitly frozen valve states (no iteration).
inline PressureSolution solve_with_states(const ElaboratedCircuit& c, const InputLevels& inputs,
                                          const ValveStates& states) {
    const Network net(c);
    return net.solve(net.input_vector(inputs), net.to_vector(states));
}

/// Unwraps a static result, throwing NoStableStateError on failure.
inline PressureSolution expect_stable(StaticResult r) {
    if (auto* fail = std::get_if<NoStableState>(&r)) throw NoStableStateError(std::move(*fail));
    return std::get<PressureSolution>(std::move(r));
}

struct TraceSample {
    double time = 0.0;
    PressureSolution solution;
};

struct Trace {
    std::vector<TraceSample> samples;
    std::vector<std::string> probe_labels;
    std::vector<std::string> valve_labels;
};

struct TransientOptions {
    /// Actuation progress at which a valve's hydraulic state flips.
    double threshold = 0.9;
    /// Valve flips allowed within any one simulated second.
    std::size_t max_events_per_second = 10000;
};

/// Event-driven quasi-static transient. Each valve carries a closure level
/// c in [0,1] that relaxes first-order toward its commanded state with
/// tau_close or tau_open; the valve conducts until c rises past the threshold
/// and seals until c falls below 1 - threshold. A first-order approach from
/// rest therefore switches after tau * ln(1 / (1 - threshold)).
inline Trace solve_transient(const ElaboratedCircuit& c, double t_end, double dt_max,
                             const TransientOptions& opts = {}) {
    if (!(t_end > 0.0)) throw std::invalid_argument("t_end must be > 0");
    if (!(dt_max > 0.0)) throw std::invalid_argument("dt_max must be > 0");
    if (!(opts.threshold > 0.5 && opts.threshold < 1.0)) {
        throw std::invalid_argument("actuation threshold must lie in (0.5, 1)");
    }
    const Network net(c);
    const auto& valves = net.valves();
    const std::size_t nv = valves.size();
    const double theta = opts.threshold;

    std::set<double> step_times;
    for (const auto& in : net.inputs()) {
        const auto& wave = c->waveforms.at(std::get<Input>(c->elements[in.element]).wave);
        for (const auto& s : wave.steps) {
            if (s.time > 0.0 && s.time <= t_end) step_times.insert(s.time);
        }
    }

    Trace trace;
    for (const auto& p : c->probes) trace.probe_labels.push_back(p.label);
    for (const auto& v : valves) trace.valve_labels.push_back(v.label);

    auto initial = detail::fixed_point(net, net.inputs_at(0.0), std::vector<ValveState>(nv, ValveState::open), {});
    if (auto* fail = std::get_if<NoStableState>(&initial)) throw NoStableStateError(std::move(*fail));

    std::vector<ValveState> state = net.to_vector(std::get<PressureSolution>(initial).valve_states());
    std::vector<double> closure(nv);
    std::vector<ValveState> target = state;
    for (std::size_t k = 0; k < nv; ++k) closure[k] = state[k] == ValveState::closed ? 1.0 : 0.0;

    auto tau_toward = [&](std::size_t k, ValveState s) {
        return s == ValveState::closed ? valves[k].params.tau_close : valves[k].params.tau_open;
    };

    std::deque<std::pair<double, std::size_t>> recent;  // (time, valve) of recent flips
    auto note_flip = [&](double t, std::size_t k) {
        recent.emplace_back(t, k);
        while (!recent.empty() && recent.front().first < t - 1.0) recent.pop_front();
        if (recent.size() > opts.max_events_per_second) {
            std::set<std::string> names;
            for (const auto& [time, v] : recent) names.insert(valves[v].label);
            throw Livelock(t, {names.begin(), names.end()});
        }
    };

    // Solve at instant t, applying zero-delay flips until nothing changes.
    auto settle = [&](double t) {
        const auto inputs = net.inputs_at(t);
        for (;;) {
            std::vector<bool> isolated;
            const auto p = net.node_pressures(inputs, state, &isolated);
            target = net.commanded(p);
            bool flipped = false;
            for (std::size_t k = 0; k < nv; ++k) {
                if (tau_toward(k, target[k]) == 0.0) {
                    closure[k] = target[k] == ValveState::closed ? 1.0 : 0.0;
                }
                if (state[k] == target[k]) continue;
                const bool past = target[k] == ValveState::closed ? closure[k] >= theta : closure[k] <= 1.0 - theta;
                if (past) {
                    state[k] = target[k];
                    flipped = true;
                    note_flip(t, k);
                }
            }
            if (!flipped) {
                auto sol = net.solution(p, state, isolated);
                for (std::size_t k = 0; k < nv; ++k) {
                    const double goal = target[k] == ValveState::closed ? 1.0 : 0.0;
                    sol.valves[valves[k].label].progress = 1.0 - std::abs(goal - closure[k]);
                }
                if (detail::debug_logging()) {
                    std::clog << "[fluidlogic] t=" << format_number(t, 9);
                    for (std::size_t k = 0; k < nv; ++k) {
                        std::clog << " " << valves[k].label << "=" << to_string(state[k]) << "("
                                  << format_number(closure[k], 4) << ")";
                    }
                    std::clog << "\n";
                }
                return sol;
            }
        }
    };

    double t = 0.0;
    trace.samples.push_back(TraceSample{t, settle(t)});
    constexpr double inf = std::numeric_limits<double>::infinity();

    while (t < t_end) {
        std::vector<double> crossing(nv, inf);
        for (std::size_t k = 0; k < nv; ++k) {
            if (state[k] == target[k]) continue;
            const double tau = tau_toward(k, target[k]);
            const double dt = target[k] == ValveState::closed ? tau * std::log((1.0 - closure[k]) / (1.0 - theta))
                                                              : tau * std::log(closure[k] / (1.0 - theta));
            crossing[k] = t + std::max(dt, 0.0);
        }
        double t_next = std::min(t + dt_max, t_end);
        if (auto it = step_times.upper_bound(t); it != step_times.end()) t_next = std::min(t_next, *it);
        for (double x : crossing) t_next = std::min(t_next, x);
        if (!(t_next > t)) t_next = std::nextafter(t, inf);

        const double dt = t_next - t;
        for (std::size_t k = 0; k < nv; ++k) {
            const double tau = tau_toward(k, target[k]);
            const double decay = tau > 0.0 ? std::exp(-dt / tau) : 0.0;
            if (target[k] == ValveState::closed) {
                closure[k] = 1.0 - (1.0 - closure[k]) * decay;
            } else {
                closure[k] *= decay;
            }
            if (crossing[k] <= t_next) {
                closure[k] = target[k] == ValveState::closed ? std::max(closure[k], theta)
                                                             : std::min(closure[k], 1.0 - theta);
                state[k] = target[k];
                note_flip(t_next, k);
            }
        }
        t = t_next;
        trace.samples.push_back(TraceSample{t, settle(t)});
    }
    return trace;
}

}  // namespace fluidlogic
