#pragma once

// Exhaustive valve-state reference shared by the test binaries. Every
// assignment of open/closed is solved with a nodal system assembled here
// from the element list and kept when each valve's switching rule reproduces
// its own state. Nodes cut off from every fixed pressure are held at 0 Pa.

#include "fluidlogic/netlist.hpp"
#include "fluidlogic/solver.hpp"

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace oracle {

using namespace fluidlogic;

struct FixedPoint {
    std::vector<bool> closed;  // element order of the valves
    std::map<std::string, double> pressure;
};

inline std::map<std::string, double> pressures(const Circuit& c, const InputLevels& in,
                                               const std::vector<bool>& closed) {
    std::map<std::string, double> fixed{{c.atmosphere, 0.0}};
    for (const auto* s : c.elements_of<Supply>()) fixed[s->node] = s->pressure.pa;
    for (const auto* s : c.elements_of<Input>()) fixed[s->node] = in.at(s->label).pa;
    for (const auto* v : c.elements_of<Vent>()) fixed.emplace(v->node, 0.0);

    struct Edge {
        std::string a, b;
        double g;
    };
    std::vector<Edge> edges;
    for (const auto* r : c.elements_of<Resistor>()) edges.push_back({r->a, r->b, 1.0 / r->resistance.value});
    std::size_t k = 0;
    for (const auto* v : c.elements_of<Valve>()) {
        if (!closed[k++]) edges.push_back({v->flow_in, v->flow_out, 1.0 / v->params.open_resistance.value});
    }

    // Union-find over conducting edges marks the referenced components.
    std::map<std::string, std::string> parent;
    for (const auto& n : c.nodes) parent[n] = n;
    std::function<std::string(const std::string&)> root = [&](const std::string& n) {
        return parent[n] == n ? n : parent[n] = root(parent[n]);
    };
    for (const auto& e : edges) parent[root(e.a)] = root(e.b);
    std::map<std::string, bool> grounded;
    for (const auto& [n, p] : fixed) grounded[root(n)] = true;

    std::map<std::string, double> p = fixed;
    std::map<std::string, int> idx;
    for (const auto& n : c.nodes) {
        if (fixed.count(n)) continue;
        if (!grounded[root(n)]) p[n] = 0.0;
        else idx.emplace(n, static_cast<int>(idx.size()));
    }
    const int m = static_cast<int>(idx.size());
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
    for (const auto& e : edges) {
        for (auto [x, y] : {std::pair{e.a, e.b}, std::pair{e.b, e.a}}) {
            if (!idx.count(x)) continue;
            G(idx[x], idx[x]) += e.g;
            if (idx.count(y)) G(idx[x], idx[y]) -= e.g;
            else b(idx[x]) += e.g * p[y];
        }
    }
    if (m > 0) {
        const Eigen::VectorXd x = G.colPivHouseholderQr().solve(b);
        for (const auto& [n, i] : idx) p[n] = x(i);
    }
    return p;
}

inline std::vector<FixedPoint> fixed_points(const Circuit& c, const InputLevels& in) {
    const auto valves = c.elements_of<Valve>();
    std::vector<FixedPoint> out;
    for (unsigned mask = 0; mask < (1u << valves.size()); ++mask) {
        std::vector<bool> closed(valves.size());
        for (std::size_t k = 0; k < valves.size(); ++k) closed[k] = (mask >> k) & 1u;
        const auto p = pressures(c, in, closed);
        bool consistent = true;
        for (std::size_t k = 0; k < valves.size(); ++k) {
            const auto& v = *valves[k];
            const double lhs = v.params.gain_model.factor() * p.at(v.control);
            const double rhs = std::max(p.at(v.flow_in), p.at(v.flow_out)) + v.params.seal_margin.pa;
            consistent = consistent && ((lhs >= rhs) == closed[k]);
        }
        if (consistent) out.push_back({closed, p});
    }
    return out;
}

inline ValveStates as_states(const Circuit& c, const FixedPoint& fp) {
    ValveStates s;
    const auto valves = c.elements_of<Valve>();
    for (std::size_t k = 0; k < valves.size(); ++k) {
        s[valves[k]->label] = fp.closed[k] ? ValveState::closed : ValveState::open;
    }
    return s;
}

}  // namespace oracle
