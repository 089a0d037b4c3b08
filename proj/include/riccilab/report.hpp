#pragma once

#include <json.hpp>

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

namespace ricci {

/// Outcome of one inequality check. Margins use the sign convention
/// "margin >= -tolerance means pass"; witnesses hold whatever inputs achieved
/// the minimum so the number can be reproduced exactly.
struct CheckReport {
    std::string name;
    nlohmann::ordered_json parameters = nlohmann::ordered_json::object();
    std::vector<double> residuals;
    double min_margin = std::numeric_limits<double>::infinity();
    double tolerance = 0.0;
    bool pass = false;
    nlohmann::ordered_json witnesses = nlohmann::ordered_json::object();

    void record(double margin) {
        residuals.push_back(margin);
        min_margin = std::min(min_margin, margin);
    }

    void finalize() { pass = min_margin >= -tolerance; }

    /// Three-valued classification kept alongside the binary verdict:
    /// strictly nonnegative margins pass outright, small negatives sit inside
    /// the discretization budget, anything below -tolerance fails.
    std::string classification() const {
        if (min_margin >= 0.0) return "pass";
        if (min_margin >= -tolerance) return "inconclusive-within-budget";
        return "fail";
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["name"] = name;
        j["parameters"] = parameters;
        j["residuals"] = residuals;
        j["min_margin"] = min_margin;
        j["tolerance"] = tolerance;
        j["verdict"] = pass ? "pass" : "fail";
        j["classification"] = classification();
        j["witnesses"] = witnesses;
        return j;
    }
};

} // namespace ricci
