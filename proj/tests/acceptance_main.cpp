// Acceptance suite: one binary, one pass/fail line per criterion.
// Every tolerance is pinned here or in riccilab/tolerances.hpp; the
// discretization constants come from the committed refinement study
// (data/refinement_budget.json, regenerated by the refine-study experiment).

#include "riccilab/checks.hpp"
#include "riccilab/coupling.hpp"
#include "riccilab/experiments.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

using namespace ricci;

namespace {

int g_failures = 0;

void criterion(int number, const std::string& label, const std::function<bool(std::string&)>& fn) {
    const auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
        ok = fn(detail);
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %2d: %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", number,
                label.c_str(), secs, detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

double zero_potential(double) { return 0.0; }
double quadratic(double x) { return 0.5 * x * x; }
double double_well(double x) { return 0.25 * x * x * x * x - 0.5 * x * x; }

Vec double_well_curvature(const DiscreteSpace& s) {
    Vec k(s.size());
    for (int i = 0; i < s.size(); ++i) k[i] = 3 * s.coords[i] * s.coords[i] - 1;
    return k;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

/// Double-well space obtained the acceptance way: tilting the certified-flat
/// uniform interval.
std::pair<DiscreteSpace, Vec> tilted_double_well(int n, double L = 3.0) {
    const auto flat = build_interval_space(n, L, zero_potential);
    Vec V(n), lambda(n);
    for (int i = 0; i < n; ++i) {
        V[i] = double_well(flat.coords[i]);
        lambda[i] = 3 * flat.coords[i] * flat.coords[i] - 1;
    }
    auto [space, field] = change_of_measure(flat, Vec::Zero(n), V, lambda);
    return {std::move(space), field.values};
}

} // namespace

int main() {
    std::printf("ricci-lab acceptance suite\n");

    // ------------------------------------------------------------------ 1
    criterion(1, "constant-curvature reduction of the action integral", [](std::string& d) {
        const auto s = build_interval_space(101, 5.0, quadratic);
        const SpectralCache heat(s);
        const double K = 1.7;
        const int S = 200;
        double worst = 0.0;
        for (int rep = 0; rep < 10; ++rep) {
            const auto mu0 = mollified_density(s, heat, 100 + 2 * rep);
            const auto mu1 = mollified_density(s, heat, 101 + 2 * rep);
            const auto plan = displacement_geodesic(s, mu0, mu1, S);
            const double w2sq = plan_w2_squared(plan);
            for (double t : {0.1, 0.35, 0.5, 0.75, 0.9}) {  // all on the s-grid
                const double act = action_integral(plan, Vec::Constant(101, K), t);
                const double exact = K * t * (1 - t) / 2 * w2sq;
                worst = std::max(worst, std::abs(act - exact) / (std::abs(K) * w2sq));
            }
        }
        d = "max relative deviation " + fmt(worst);
        return worst <= 1e-6;
    });

    // ------------------------------------------------------------------ 2
    criterion(2, "BE sharpness on the OU interval (k=1 passes, k=1.2 fails at n=401)",
              [](std::string& d) {
        FamilySpec fam;
        fam.kind = FamilyKind::low_eigenfunctions;
        fam.count = 6;
        std::vector<double> violation_by_n;
        bool pass_all = true;
        for (int n : {101, 201, 401}) {
            const auto s = build_interval_space(n, 5.0, quadratic);
            const auto rep = be_scan(s, Vec::Ones(n), fam);
            pass_all = pass_all && rep.pass;
            violation_by_n.push_back(std::max(0.0, -rep.min_margin));
        }
        // margins improve at least linearly in h (h halves at each step)
        bool improves = true;
        for (std::size_t i = 0; i + 1 < violation_by_n.size(); ++i)
            improves = improves && violation_by_n[i + 1] <= violation_by_n[i] / 2 + 1e-12;

        const auto s401 = build_interval_space(401, 5.0, quadratic);
        const auto sharp = be_scan(s401, Vec::Constant(401, 1.2), fam);
        d = "violations " + fmt(violation_by_n[0]) + "/" + fmt(violation_by_n[1]) + "/" +
            fmt(violation_by_n[2]) + ", k=1.2 margin " + fmt(sharp.min_margin);
        return pass_all && improves && !sharp.pass;
    });

    // ------------------------------------------------------------------ 3
    criterion(3, "variable-curvature gradient estimate on the double well", [](std::string& d) {
        const auto s = build_interval_space(201, 3.0, double_well);
        const Vec k = double_well_curvature(s);
        const SpectralCache heat(s);
        const SpectralCache schro(s, k);
        const SpectralCache schro_up(s, (k.array() + 0.5).matrix());
        FamilySpec fam{FamilyKind::random_smooth, 20, 42, 0.1};
        const auto us = generate_test_family(s, heat, fam);
        const std::vector<double> times{0.05, 0.1, 0.2};
        double worst = 1e9, worst_up = 1e9;
        for (const auto& u : us) {
            worst = std::min(worst,
                             gradient_estimate_check(s, k, u, times, heat, schro).min_margin);
            worst_up = std::min(worst_up,
                                gradient_estimate_check(s, (k.array() + 0.5).matrix(), u, times,
                                                        heat, schro_up)
                                    .min_margin);
        }
        d = "min margin " + fmt(worst) + " (budget -5e-3), k+0.5 margin " + fmt(worst_up);
        return worst >= -budget::kGradientBudget && worst_up < -budget::kGradientBudget;
    });

    // ------------------------------------------------------------------ 4
    criterion(4, "W_p contraction on the OU interval, p in {1,2,inf}", [](std::string& d) {
        const auto s = build_interval_space(201, 5.0, quadratic);
        const SpectralCache heat(s);
        std::vector<std::pair<ProbMeasure, ProbMeasure>> pairs;
        for (int rep = 0; rep < 20; ++rep)
            pairs.emplace_back(mollified_density(s, heat, 400 + 2 * rep),
                               mollified_density(s, heat, 401 + 2 * rep));
        const std::vector<double> times{0.1, 0.5, 1.0};
        double worst = 1e9;
        for (double p : {1.0, 2.0, std::numeric_limits<double>::infinity()}) {
            const auto rep = wp_contraction_check(s, 1.0, pairs, times, p, heat);
            worst = std::min(worst, rep.min_margin);
        }
        d = "min relative margin " + fmt(worst) + " (budget -1e-3)";
        return worst >= -budget::kWpBudget;
    });

    // ------------------------------------------------------------------ 5
    criterion(5, "CD(k) entropy convexity on the tilted double well, refinement-budgeted",
              [](std::string& d) {
        // the base space must first be certified flat
        {
            const auto flat = build_interval_space(201, 3.0, zero_potential);
            FamilySpec fam;
            fam.kind = FamilyKind::polynomial;
            fam.count = 4;
            if (!be_scan(flat, Vec::Zero(201), fam).pass) {
                d = "flat base space failed its k=0 certification";
                return false;
            }
        }
        const std::vector<double> t_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
        std::vector<double> tau_by_n;
        double worst_excess = 1e9;  // margin + tau_geo, must stay >= 0
        for (int n : {101, 201, 401}) {
            auto [dw, k] = tilted_double_well(n);
            const SpectralCache heat(dw);
            double tau_max = 0.0;
            for (int rep = 0; rep < 10; ++rep) {
                const auto mu0 = mollified_density(dw, heat, 500 + 2 * rep);
                const auto mu1 = mollified_density(dw, heat, 501 + 2 * rep);
                const auto report = cd_check(dw, k, mu0, mu1, t_grid, 200);
                worst_excess = std::min(worst_excess, report.min_margin + report.tolerance);
                tau_max = std::max(tau_max, report.tolerance);
            }
            tau_by_n.push_back(tau_max);
        }
        const bool budgets_decay = tau_by_n[2] <= tau_by_n[1] + 1e-6;
        d = "worst margin+tau " + fmt(worst_excess) + ", tau(201)=" + fmt(tau_by_n[1]) +
            " tau(401)=" + fmt(tau_by_n[2]);
        return worst_excess >= 0.0 && budgets_decay;
    });

    // ------------------------------------------------------------------ 6
    criterion(6, "EVI_k along the heat flow on the tilted double well", [](std::string& d) {
        auto [dw, k] = tilted_double_well(201);
        const SpectralCache heat(dw);
        const std::vector<double> times{0.1, 0.3, 1.0};
        const double eta = 2e-6;
        double worst = 1e9, worst_slope_rel = 0.0;
        for (int rep = 0; rep < 5; ++rep) {
            const auto mu0 = mollified_density(dw, heat, 600 + 2 * rep);
            const auto nu = mollified_density(dw, heat, 601 + 2 * rep);
            const auto report = evi_check(dw, k, mu0, nu, times, 200, heat, eta);
            worst = std::min(worst, report.min_margin + report.tolerance);
            const auto resid = report.parameters["richardson_residuals"].get<std::vector<double>>();
            const auto w2sq = report.parameters["w2_sq"].get<std::vector<double>>();
            for (std::size_t i = 0; i < resid.size(); ++i)
                worst_slope_rel =
                    std::max(worst_slope_rel, budget::kSlopeFactor * resid[i] / w2sq[i]);
        }
        d = "worst margin+tau " + fmt(worst) + ", max tau_slope/W2^2 " + fmt(worst_slope_rel);
        return worst >= 0.0 && worst_slope_rel <= 1e-4;
    });

    // ------------------------------------------------------------------ 7
    criterion(7, "Duhamel identity residual and node-halving ratio", [](std::string& d) {
        const auto s = build_interval_space(51, 5.0, quadratic);
        Vec k(51);
        for (int i = 0; i < 51; ++i) k[i] = 1.0 + 0.3 * std::sin(s.coords[i]);
        const double r64 = duhamel_residual(s, k, 0.5, 64);
        const double r32 = duhamel_residual(s, k, 0.5, 32);
        d = "residual(64) " + fmt(r64) + ", ratio " + fmt(r32 / r64);
        return r64 <= 1e-8 && r32 / r64 >= 12.0;
    });

    // ------------------------------------------------------------------ 8
    criterion(8, "Feynman-Kac consistency and Monte Carlo error scaling", [](std::string& d) {
        const auto s = build_interval_space(51, 3.0, double_well);
        const Vec k = double_well_curvature(s);
        Vec u(51);
        for (int i = 0; i < 51; ++i) u[i] = std::cos(s.coords[i]);
        const double t = 0.2;
        const Vec exact = schrodinger_apply(s, k, u, t);
        const auto mc = feynman_kac_mc(s, k, u, t, 10000, 2026);
        int within = 0;
        for (int i = 0; i < 51; ++i)
            if (std::abs(mc.estimate[i] - exact[i]) <= 3 * mc.standard_error[i]) ++within;
        const double coverage = within / 51.0;

        std::vector<double> lx, ly;
        for (int np : {100, 1000, 10000}) {
            const auto probe = feynman_kac_mc(s, k, u, t, np, 2027);
            lx.push_back(std::log(static_cast<double>(np)));
            ly.push_back(std::log(probe.standard_error.mean()));
        }
        const double mx = (lx[0] + lx[1] + lx[2]) / 3, my = (ly[0] + ly[1] + ly[2]) / 3;
        double num = 0, den = 0;
        for (int i = 0; i < 3; ++i) {
            num += (lx[i] - mx) * (ly[i] - my);
            den += (lx[i] - mx) * (lx[i] - mx);
        }
        const double slope = num / den;
        d = "coverage " + fmt(coverage) + ", SE slope " + fmt(slope);
        return coverage >= 0.99 && std::abs(slope + 0.5) <= 0.1;
    });

    // ------------------------------------------------------------------ 9
    criterion(9, "coupled Brownian pipeline: support, marginals, slack, coalescence",
              [](std::string& d) {
        const auto s = build_interval_space(51, 5.0, quadratic);
        const double K = 1.0, delta = 1.0 / 128;
        const auto qk = build_qstar(s, K, delta);

        double max_slack = 0.0;
        for (int pr = 0; pr < qk.pair_count(); ++pr)
            max_slack = std::max(max_slack, qk.slack[pr] * std::exp(K * delta));
        const double slack_bound = 1.0 + 5.5 * s.mesh;  // C from the refinement table

        const int steps = 128;
        const Mat composed = compose_kernel(qk, steps);
        const Mat expected = markov_kernel(s, steps * delta);
        double marg_err = 0.0;
        const int n = s.size();
        for (int x = 0; x < n; ++x)
            for (int y = 0; y < n; ++y) {
                Vec first = Vec::Zero(n), second = Vec::Zero(n);
                const int pr = qk.pair_index(x, y);
                for (int q = 0; q < qk.pair_count(); ++q) {
                    first[qk.first_of(q)] += composed(pr, q);
                    second[qk.second_of(q)] += composed(pr, q);
                }
                marg_err = std::max(marg_err,
                                    (first.transpose() - expected.row(x)).cwiseAbs().maxCoeff());
                marg_err = std::max(marg_err,
                                    (second.transpose() - expected.row(y)).cwiseAbs().maxCoeff());
            }

        const SpectralCache heat(s);
        const auto mu = mollified_density(s, heat, 900);
        const auto nu = mollified_density(s, heat, 901);
        const Mat alpha = mu.masses(s) * nu.masses(s).transpose();
        const auto paths = sample_coupled_paths(qk, alpha, 1.0, 10000, 902);
        const auto stats = pathwise_contraction_stats(qk, paths, K);
        const long violations = stats.parameters["violations"].get<long>();
        const long breaks = stats.parameters["coalescence_breaks"].get<long>();

        d = "slack " + fmt(max_slack) + " (bound " + fmt(slack_bound) + "), marginal err " +
            fmt(marg_err) + ", violations " + std::to_string(violations) + ", breaks " +
            std::to_string(breaks);
        return violations == 0 && breaks == 0 && marg_err <= 1e-10 && max_slack <= slack_bound;
    });

    // ----------------------------------------------------------------- 10
    criterion(10, "change of measure and tensorized curvature on products", [](std::string& d) {
        const int n = 21;
        const auto flat = build_interval_space(n, 4.0, zero_potential);
        FamilySpec fam;
        fam.count = 10;
        fam.seed = 5;
        fam.mollify_time = 0.05;

        // flat x flat with tensor field min{0,0,0} = 0
        const auto flat_prod = product_space(flat, flat);
        const auto zero_field = tensor_curvature(flat_prod, Vec::Zero(n), Vec::Zero(n));
        const auto flat_report = be_scan(flat_prod, zero_field.values, fam);

        // tilt each factor by x^2/2 with lambda = 1
        Vec V(n);
        for (int i = 0; i < n; ++i) V[i] = quadratic(flat.coords[i]);
        auto [ou_factor, factor_field] = change_of_measure(flat, Vec::Zero(n), V, Vec::Ones(n));
        FamilySpec eig_fam;
        eig_fam.kind = FamilyKind::low_eigenfunctions;
        eig_fam.count = 5;
        const auto factor_report = be_scan(ou_factor, factor_field.values, eig_fam);

        const auto ou_prod = product_space(ou_factor, ou_factor);
        const auto field = tensor_curvature(ou_prod, factor_field.values, factor_field.values);
        const bool field_is_zero =
            field.values.minCoeff() == 0.0 && field.values.maxCoeff() == 0.0;
        const auto prod_report = be_scan(ou_prod, field.values, fam);

        d = "flat product margin " + fmt(flat_report.min_margin) + ", factor margin " +
            fmt(factor_report.min_margin) + ", OU product margin " + fmt(prod_report.min_margin);
        return flat_report.pass && factor_report.pass && field_is_zero && prod_report.pass;
    });

    // ----------------------------------------------------------------- 11
    criterion(11, "W_inf as the large-p limit of W_p on random 10-site instances",
              [](std::string& d) {
        double worst_gap = 0.0;
        bool ordered = true;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            CounterRng rng(3000 + seed);
            std::vector<GraphEdge> edges;
            const int n = 10;
            for (int i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1, 1.0, 0.2 + rng.uniform()});
            for (int extra = 0; extra < 4; ++extra) {
                const int i = static_cast<int>(rng.uniform() * n);
                const int j = static_cast<int>(rng.uniform() * n);
                if (i != j) edges.push_back({std::min(i, j), std::max(i, j), 1.0,
                                             0.2 + 2 * rng.uniform()});
            }
            const auto g = build_graph_space(n, edges);
            auto atoms = [&](std::uint64_t s2) {
                CounterRng r2(s2);
                Vec mass = Vec::Zero(n);
                for (int a = 0; a < 3; ++a)
                    mass[static_cast<int>(r2.uniform() * n)] += 1.0 / 3;
                return measure_from_masses(g, mass);
            };
            const auto mu = atoms(7000 + 2 * seed), nu = atoms(7001 + 2 * seed);
            const double w32 = wasserstein_p(g, mu, nu, 32.0).first;
            const double winf = wasserstein_inf(g, mu, nu).first;
            ordered = ordered && w32 <= winf + 1e-9;
            worst_gap = std::max(worst_gap, (winf - w32) / g.diameter());
        }
        d = "max (W_inf - W_32)/diam " + fmt(worst_gap);
        return ordered && worst_gap <= 0.05;
    });

    std::printf("%d of 11 criteria passed\n", 11 - g_failures);
    return g_failures == 0 ? 0 : 1;
}
