#pragma once

#include "riccilab/coupling.hpp"
#include "riccilab/space.hpp"
#include "riccilab/transport.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

namespace ricci {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Potentials

/// Named potential from a space spec. `table` interpolates the given site
/// values piecewise linearly so midpoint evaluations stay consistent.
struct PotentialSpec {
    std::string name = "zero";   // zero | quadratic | double_well | cosine | table
    double a = 1.0;
    double b = 1.0;
    std::vector<double> values;  // table only

    double operator()(double x) const {
        if (name == "zero") return 0.0;
        if (name == "quadratic") return 0.5 * a * x * x;
        if (name == "double_well") return 0.25 * a * x * x * x * x - 0.5 * b * x * x;
        if (name == "cosine") return a * std::cos(x);
        throw input_error("potential '" + name + "' has no closed form");
    }

    /// Analytic second derivative where available (the model curvature).
    double curvature(double x) const {
        if (name == "zero") return 0.0;
        if (name == "quadratic") return a;
        if (name == "double_well") return 3 * a * x * x - b;
        if (name == "cosine") return -a * std::cos(x);
        throw input_error("potential '" + name + "' has no analytic curvature");
    }
};

namespace detail {

inline void reject_unknown_keys(const json& obj, const std::vector<std::string>& allowed,
                                const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw input_error("unknown key '" + key + "' in " + where);
    }
}

inline PotentialSpec parse_potential(const json& j) {
    PotentialSpec p;
    if (j.is_null()) return p;
    reject_unknown_keys(j, {"name", "params"}, "potential");
    p.name = j.value("name", "zero");
    const json params = j.value("params", json::object());
    if (p.name == "zero") {
        reject_unknown_keys(params, {}, "potential.params");
    } else if (p.name == "quadratic" || p.name == "cosine") {
        reject_unknown_keys(params, {"a"}, "potential.params");
        p.a = params.value("a", 1.0);
    } else if (p.name == "double_well") {
        reject_unknown_keys(params, {"a", "b"}, "potential.params");
        p.a = params.value("a", 1.0);
        p.b = params.value("b", 1.0);
    } else if (p.name == "table") {
        reject_unknown_keys(params, {"values"}, "potential.params");
        if (!params.contains("values")) throw input_error("table potential needs values");
        p.values = params["values"].get<std::vector<double>>();
    } else {
        throw input_error("unknown potential '" + p.name + "'");
    }
    return p;
}

/// Piecewise-linear interpolant of per-site values along sorted coordinates.
inline std::function<double(double)> table_interpolant(std::vector<double> coords,
                                                       std::vector<double> values) {
    return [coords = std::move(coords), values = std::move(values)](double x) {
        if (x <= coords.front()) return values.front();
        if (x >= coords.back()) return values.back();
        const auto it = std::upper_bound(coords.begin(), coords.end(), x);
        const std::size_t j = static_cast<std::size_t>(it - coords.begin());
        const double t = (x - coords[j - 1]) / (coords[j] - coords[j - 1]);
        return (1 - t) * values[j - 1] + t * values[j];
    };
}

} // namespace detail

/// Parsed space specification; keeps the potential so experiments can ask for
/// its analytic curvature.
struct SpaceSpec {
    DiscreteSpace space;
    PotentialSpec potential;                  // top-level (interval/circle)
    std::vector<PotentialSpec> factor_potentials;  // product factors
};

/// Space from its JSON document:
///   {kind: "interval"|"circle", n, L|R, potential: {name, params}}
///   {kind: "product", factors: [spec, spec]}
///   {kind: "graph", n, edges: [[i, j, weight, length], ...], measure: [...]}
inline SpaceSpec parse_space_spec(const json& j) {
    if (!j.is_object()) throw input_error("space spec must be an object");
    const std::string kind = j.value("kind", "");
    SpaceSpec out;
    if (kind == "interval" || kind == "circle") {
        detail::reject_unknown_keys(j, {"kind", "n", "L", "R", "potential"}, "space");
        const int n = j.value("n", 0);
        out.potential = detail::parse_potential(j.value("potential", json()));
        std::function<double(double)> V;
        if (out.potential.name == "table") {
            // table values are per-site; build coordinates first
            std::vector<double> coords(n);
            if (kind == "interval") {
                const double L = j.value("L", 0.0);
                if (n < 3 || !(L > 0)) throw input_error("interval needs n >= 3 and L > 0");
                for (int i = 0; i < n; ++i) coords[i] = -L + 2 * L * i / (n - 1);
            } else {
                const double R = j.value("R", 0.0);
                if (n < 3 || !(R > 0)) throw input_error("circle needs n >= 3 and R > 0");
                for (int i = 0; i < n; ++i)
                    coords[i] = 2 * std::numbers::pi * i / n;  // angle for circles
            }
            if (static_cast<int>(out.potential.values.size()) != n)
                throw input_error("table potential needs exactly n values");
            V = detail::table_interpolant(coords, out.potential.values);
        } else {
            V = [p = out.potential](double x) { return p(x); };
        }
        out.space = (kind == "interval") ? build_interval_space(n, j.value("L", 0.0), V)
                                         : build_circle_space(n, j.value("R", 0.0), V);
    } else if (kind == "product") {
        detail::reject_unknown_keys(j, {"kind", "factors"}, "space");
        if (!j.contains("factors") || j["factors"].size() != 2)
            throw input_error("product space needs exactly two factors");
        auto a = parse_space_spec(j["factors"][0]);
        auto b = parse_space_spec(j["factors"][1]);
        out.space = product_space(a.space, b.space);
        out.factor_potentials = {a.potential, b.potential};
    } else if (kind == "graph") {
        detail::reject_unknown_keys(j, {"kind", "n", "edges", "measure"}, "space");
        const int n = j.value("n", 0);
        std::vector<GraphEdge> edges;
        for (const auto& e : j.value("edges", json::array())) {
            if (!e.is_array() || e.size() < 2) throw input_error("graph edge needs [i, j, w?, len?]");
            GraphEdge ge;
            ge.i = e[0].get<int>();
            ge.j = e[1].get<int>();
            if (e.size() > 2) ge.weight = e[2].get<double>();
            if (e.size() > 3) ge.length = e[3].get<double>();
            edges.push_back(ge);
        }
        Vec masses;
        if (j.contains("measure")) {
            const auto mv = j["measure"].get<std::vector<double>>();
            masses = Eigen::Map<const Vec>(mv.data(), static_cast<Eigen::Index>(mv.size()));
        }
        out.space = build_graph_space(n, edges, masses);
    } else {
        throw input_error("unknown space kind '" + kind + "'");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serializers

inline json space_to_json(const DiscreteSpace& s) {
    json j;
    j["kind"] = to_string(s.kind);
    j["n"] = s.size();
    j["labels"] = s.labels;
    j["coords"] = s.coords;
    j["measure"] = std::vector<double>(s.measure.begin(), s.measure.end());
    json metric = json::array(), weights = json::array();
    for (int i = 0; i < s.size(); ++i) {
        metric.push_back(std::vector<double>(s.metric.row(i).begin(), s.metric.row(i).end()));
        weights.push_back(
            std::vector<double>(s.edge_weights.row(i).begin(), s.edge_weights.row(i).end()));
    }
    j["metric"] = metric;
    j["edge_weights"] = weights;
    return j;
}

inline json plan_to_json(const DiscreteSpace& s, const CouplingPlan& plan,
                         double mass_floor = 1e-15) {
    json atoms = json::array();
    for (int i = 0; i < plan.mass.rows(); ++i)
        for (int j = 0; j < plan.mass.cols(); ++j)
            if (plan.mass(i, j) > mass_floor)
                atoms.push_back({i, j, plan.mass(i, j), s.metric(i, j)});
    return json{{"atoms", atoms}, {"columns", {"from", "to", "mass", "distance"}}};
}

inline json geodesic_to_json(const GeodesicPlan& plan) {
    json atoms = json::array();
    for (const auto& a : plan.atoms)
        atoms.push_back({{"weight", a.weight}, {"speed", a.speed}, {"path", a.path}});
    return json{{"segments", plan.segments}, {"atoms", atoms}};
}

/// Binary-free kernel table with explicit pair indices.
inline json kernel_to_json(const CoupledKernel& qk) {
    json rows = json::array();
    for (int pr = 0; pr < qk.pair_count(); ++pr) {
        json entries = json::array();
        for (const auto& e : qk.rows[pr]) entries.push_back({e.pair, e.mass});
        rows.push_back({{"pair", pr},
                        {"x", qk.first_of(pr)},
                        {"y", qk.second_of(pr)},
                        {"slack", qk.slack[pr]},
                        {"entries", entries}});
    }
    return json{{"delta", qk.delta},
                {"K", qk.rate_K},
                {"epsilon", qk.epsilon},
                {"sites", qk.sites()},
                {"rows", rows}};
}

// ---------------------------------------------------------------------------
// CSV helpers. Numbers are serialized through the JSON number writer, so
// every CSV value is byte-identical to its counterpart in report.json.

inline std::string csv_number(double v) { return json(v).dump(); }

inline void write_action_trace(std::ostream& os, const GeodesicPlan& plan, const Vec& k,
                               double t) {
    os << "s,t,green,integrand\n";
    const int S = plan.segments;
    for (int step = 0; step <= S; ++step) {
        const double sv = static_cast<double>(step) / S;
        double integrand = 0.0;
        for (const auto& atom : plan.atoms)
            integrand += atom.weight * atom.speed * atom.speed * k[atom.path[step]];
        os << csv_number(sv) << ',' << csv_number(t) << ','
           << csv_number(green_function(sv, t)) << ','
           << csv_number(green_function(sv, t) * integrand) << '\n';
    }
}

inline void write_semigroup_trace(std::ostream& os, const std::vector<double>& times,
                                  const std::vector<Vec>& values) {
    os << "site,t,value\n";
    for (std::size_t it = 0; it < times.size(); ++it)
        for (int x = 0; x < values[it].size(); ++x)
            os << x << ',' << csv_number(times[it]) << ',' << csv_number(values[it][x]) << '\n';
}

inline void write_trajectories(std::ostream& os, const DiscreteSpace& space,
                               const std::vector<CoupledTrajectory>& trajectories) {
    os << "path,time,x,y,distance\n";
    for (std::size_t ip = 0; ip < trajectories.size(); ++ip) {
        const auto& tr = trajectories[ip];
        for (int i = 0; i <= tr.steps(); ++i)
            os << ip << ',' << csv_number(tr.process_time(i)) << ',' << tr.first[i] << ','
               << tr.second[i] << ',' << csv_number(space.metric(tr.first[i], tr.second[i]))
               << '\n';
    }
}

} // namespace ricci
