#pragma once

#include "riccilab/report.hpp"
#include "riccilab/rng.hpp"
#include "riccilab/semigroup.hpp"
#include "riccilab/space.hpp"
#include "riccilab/tolerances.hpp"
#include "riccilab/transport.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace ricci {

// ---------------------------------------------------------------------------
// Test-function families

enum class FamilyKind { low_eigenfunctions, random_smooth, polynomial };

struct FamilySpec {
    FamilyKind kind = FamilyKind::random_smooth;
    int count = 20;
    std::uint64_t seed = 1;
    /// Heat-mollification time applied to the seeded Gaussian vectors.
    double mollify_time = 0.01;
};

inline std::vector<Vec> generate_test_family(const DiscreteSpace& space,
                                             const SpectralCache& heat, const FamilySpec& spec) {
    if (spec.count < 1) throw input_error("generate_test_family: empty family");
    const int n = space.size();
    std::vector<Vec> out;
    out.reserve(spec.count);
    switch (spec.kind) {
        case FamilyKind::random_smooth: {
            CounterRng root(spec.seed);
            for (int j = 0; j < spec.count; ++j) {
                auto rng = root.substream(static_cast<std::uint64_t>(j));
                Vec g(n);
                for (int i = 0; i < n; ++i) g[i] = rng.normal();
                Vec u = heat.apply(g, spec.mollify_time);
                const double norm = std::sqrt(inner_m(space, u, u));
                if (norm > 0) u /= norm;
                out.push_back(std::move(u));
            }
            break;
        }
        case FamilyKind::low_eigenfunctions: {
            const Mat basis = heat.eigenbasis();
            // eigenvalues ascend (most negative first); skip the constant mode
            const int last = n - 1;
            for (int j = 1; j <= spec.count && j < n; ++j) out.push_back(basis.col(last - j));
            break;
        }
        case FamilyKind::polynomial: {
            // powers of the (centered, scaled) coordinate; on circles the
            // periodic analogues cos and sin of multiples of the angle
            if (space.kind == SpaceKind::circle) {
                for (int j = 1; j <= (spec.count + 1) / 2; ++j) {
                    Vec c(n), s(n);
                    for (int i = 0; i < n; ++i) {
                        const double th = 2 * std::numbers::pi * space.coords[i] /
                                          space.circumference;
                        c[i] = std::cos(j * th);
                        s[i] = std::sin(j * th);
                    }
                    out.push_back(c);
                    if (static_cast<int>(out.size()) < spec.count) out.push_back(s);
                }
            } else if (space.kind == SpaceKind::interval) {
                const double scale = std::max(std::abs(space.coords.front()),
                                              std::abs(space.coords.back()));
                for (int j = 1; j <= spec.count; ++j) {
                    Vec u(n);
                    for (int i = 0; i < n; ++i) u[i] = std::pow(space.coords[i] / scale, j);
                    out.push_back(u);
                }
            } else {
                throw input_error("polynomial family needs an interval or circle space");
            }
            break;
        }
    }
    if (out.empty()) throw input_error("generate_test_family: empty family");
    return out;
}

/// Nonnegative test functions for the Bochner inequality: the constant 1, a
/// heat-kernel bump squared at the heaviest site (localizes the inequality
/// away from any boundary), then squares of mollified noise, each normalized
/// to sup 1.
inline std::vector<Vec> nonneg_test_family(const DiscreteSpace& space, const SpectralCache& heat,
                                           int count, std::uint64_t seed) {
    const int n = space.size();
    std::vector<Vec> out;
    out.push_back(Vec::Ones(n));
    if (count > 1) {
        // metric 1-center: the site minimizing the largest distance
        int center = 0;
        double best = std::numeric_limits<double>::infinity();
        for (int x = 0; x < n; ++x) {
            const double ecc = space.metric.row(x).maxCoeff();
            if (ecc < best) {
                best = ecc;
                center = x;
            }
        }
        Vec delta = Vec::Zero(n);
        delta[center] = 1.0;
        Vec phi = heat.apply(delta, 0.05).cwiseAbs2();
        phi /= phi.maxCoeff();
        out.push_back(std::move(phi));
    }
    CounterRng root(seed);
    for (int j = 2; j < count; ++j) {
        auto rng = root.substream(static_cast<std::uint64_t>(j), 0x9e3779b9ULL);
        Vec g(n);
        for (int i = 0; i < n; ++i) g[i] = rng.normal();
        Vec phi = heat.apply(g, 0.01).cwiseAbs2();
        phi /= phi.maxCoeff();
        out.push_back(std::move(phi));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bochner / Bakry-Emery

/// Margin of the variable-curvature Bochner inequality
///   ∫ (½Δ - k) φ · Γ(u) dm  >=  ∫ φ · Γ(u, Δu) dm,
/// all integrals exact m-weighted sums. φ must be nonnegative.
inline double be_check(const DiscreteSpace& space, const Vec& k, const Vec& u, const Vec& phi,
                       const Mat& lap) {
    if ((phi.array() < 0).any()) throw input_error("be_check: phi must be nonnegative");
    const Vec gu = gamma(space, u);
    const Vec lhs_density = 0.5 * (lap * phi) - k.cwiseProduct(phi);
    const double lhs = inner_m(space, lhs_density, gu);
    const double rhs = inner_m(space, phi, gamma(space, u, lap * u));
    return lhs - rhs;
}

inline double be_check(const DiscreteSpace& space, const Vec& k, const Vec& u, const Vec& phi) {
    return be_check(space, k, u, phi, laplacian(space));
}

/// Scans the Bochner margin over a u-family and a nonnegative φ-family.
/// Margins are normalized by ||Γ(u)||_inf; tolerance 10 h².
inline CheckReport be_scan(const DiscreteSpace& space, const Vec& k, const FamilySpec& family,
                           int phi_count = 4) {
    const SpectralCache heat(space);
    const Mat lap = laplacian(space);
    const auto us = generate_test_family(space, heat, family);
    const auto phis = nonneg_test_family(space, heat, phi_count, family.seed + 0x9e37);

    CheckReport report;
    report.name = "be_scan";
    const double h = space.mesh;
    report.tolerance = budget::kBeScanFactor * h * h;
    report.parameters = {{"n", space.size()},
                         {"h", h},
                         {"family_count", us.size()},
                         {"phi_count", phis.size()},
                         {"seed", family.seed},
                         {"mollify_time", family.mollify_time}};

    int wu = -1, wphi = -1;
    for (std::size_t iu = 0; iu < us.size(); ++iu) {
        const double scale = std::max(gamma(space, us[iu]).maxCoeff(), 1e-300);
        for (std::size_t ip = 0; ip < phis.size(); ++ip) {
            const double margin = be_check(space, k, us[iu], phis[ip], lap) / scale;
            if (margin < report.min_margin) {
                wu = static_cast<int>(iu);
                wphi = static_cast<int>(ip);
            }
            report.record(margin);
        }
    }
    report.witnesses = {{"u_index", wu},
                        {"phi_index", wphi},
                        {"u", std::vector<double>(us[wu].begin(), us[wu].end())},
                        {"phi", std::vector<double>(phis[wphi].begin(), phis[wphi].end())}};
    report.finalize();
    return report;
}

// ---------------------------------------------------------------------------
// Gradient estimate  Γ(T_t u) <= T_t^{2k} Γ(u)

inline CheckReport gradient_estimate_check(const DiscreteSpace& space, const Vec& k, const Vec& u,
                                           const std::vector<double>& times,
                                           const SpectralCache& heat,
                                           const SpectralCache& schrodinger) {
    CheckReport report;
    report.name = "gradient_estimate";
    report.tolerance = budget::kGradientBudget;
    const Vec gu = gamma(space, u);
    const double scale = std::max(gu.maxCoeff(), 1e-300);
    double worst_t = 0.0;
    int worst_site = -1;
    for (double t : times) {
        if (!(t > 0)) throw input_error("gradient_estimate_check: times must be positive");
        const Vec lhs = gamma(space, heat.apply(u, t));
        const Vec rhs = schrodinger.apply(gu, t);
        for (int x = 0; x < space.size(); ++x) {
            const double margin = (rhs[x] - lhs[x]) / scale;
            if (margin < report.min_margin) {
                worst_t = t;
                worst_site = x;
            }
            report.record(margin);
        }
    }
    report.parameters = {{"times", times}, {"gamma_scale", scale}};
    report.witnesses = {{"t", worst_t},
                        {"site", worst_site},
                        {"u", std::vector<double>(u.begin(), u.end())}};
    report.finalize();
    return report;
}

inline CheckReport gradient_estimate_check(const DiscreteSpace& space, const Vec& k, const Vec& u,
                                           const std::vector<double>& times) {
    return gradient_estimate_check(space, k, u, times, SpectralCache(space),
                                   SpectralCache(space, k));
}

// ---------------------------------------------------------------------------
// W_p contraction  W_p(P_t μ, P_t ν) <= e^{-Kt} W_p(μ, ν)

/// `p` may be infinity. Margins are relative to W_p(μ, ν) whenever that is
/// positive, raw otherwise.
inline CheckReport wp_contraction_check(const DiscreteSpace& space, double K,
                                        const std::vector<std::pair<ProbMeasure, ProbMeasure>>& pairs,
                                        const std::vector<double>& times, double p,
                                        const SpectralCache& heat) {
    CheckReport report;
    report.name = "wp_contraction";
    report.tolerance = budget::kWpBudget;
    const bool inf_case = std::isinf(p);
    auto dist = [&](const ProbMeasure& a, const ProbMeasure& b) {
        return inf_case ? wasserstein_inf(space, a, b).first : wasserstein_p(space, a, b, p).first;
    };
    int worst_pair = -1;
    double worst_t = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const double w0 = dist(pairs[i].first, pairs[i].second);
        for (double t : times) {
            const auto at = heat_flow_measure(heat, pairs[i].first, t);
            const auto bt = heat_flow_measure(heat, pairs[i].second, t);
            const double wt = dist(at, bt);
            double margin = std::exp(-K * t) * w0 - wt;
            if (w0 > 1e-15) margin /= w0;
            if (margin < report.min_margin) {
                worst_pair = static_cast<int>(i);
                worst_t = t;
            }
            report.record(margin);
        }
    }
    report.parameters = {{"K", K},
                         {"p", inf_case ? "inf" : std::to_string(p)},
                         {"times", times},
                         {"pairs", pairs.size()}};
    report.witnesses = {{"pair_index", worst_pair}, {"t", worst_t}};
    report.finalize();
    return report;
}

inline CheckReport wp_contraction_check(const DiscreteSpace& space, double K,
                                        const std::vector<std::pair<ProbMeasure, ProbMeasure>>& pairs,
                                        const std::vector<double>& times, double p) {
    return wp_contraction_check(space, K, pairs, times, p, SpectralCache(space));
}

// ---------------------------------------------------------------------------
// Entropy convexity CD(k, ∞)

/// Per-t margin of
///   Ent(μ_t) <= (1-t) Ent(μ0) + t Ent(μ1) - ∫∫ g(s,t) k(γ_s) |γ̇|² dΘ ds
/// along the displacement geodesic. tau_geo = C · h · (1 + W2²).
inline CheckReport cd_check(const DiscreteSpace& space, const Vec& k, const ProbMeasure& mu0,
                            const ProbMeasure& mu1, const std::vector<double>& t_grid, int S) {
    const auto plan = displacement_geodesic(space, mu0, mu1, S);
    const double w2sq = plan_w2_squared(plan);
    const double e0 = entropy(space, mu0);
    const double e1 = entropy(space, mu1);

    CheckReport report;
    report.name = "cd";
    report.tolerance = budget::kCdFactor * space.mesh * (1.0 + w2sq);
    double worst_t = 0.0;
    for (double t : t_grid) {
        const double action = action_integral(plan, k, t);
        const double ent_t = entropy(space, evaluate_at(space, plan, t));
        const double margin = (1 - t) * e0 + t * e1 - action - ent_t;
        if (margin < report.min_margin) worst_t = t;
        report.record(margin);
    }
    report.parameters = {{"t_grid", t_grid}, {"S", S}, {"W2_sq", w2sq}, {"h", space.mesh}};
    report.witnesses = {{"t", worst_t}};
    report.finalize();
    return report;
}

// ---------------------------------------------------------------------------
// Entropy slope along a geodesic plan

enum class SlopeDirection { forward, reverse };

namespace detail {

/// Splits every atom's mass linearly between the two sites straddling its
/// exact position at parameter r, so r ↦ Ent((e_r)Θ) is differentiable for
/// small r (nearest-site deposits are step functions in r).
inline void split_deposit(const DiscreteSpace& space, int from, int to, double r, double weight,
                          Vec& mass) {
    switch (space.kind) {
        case SpaceKind::interval: {
            const double pos = (1 - r) * space.coords[from] + r * space.coords[to];
            const double f = (pos - space.coords[0]) / space.mesh;
            const int i0 = std::clamp(static_cast<int>(std::floor(f)), 0, space.size() - 1);
            const int i1 = std::min(i0 + 1, space.size() - 1);
            const double frac = std::clamp(f - i0, 0.0, 1.0);
            mass[i0] += weight * (1 - frac);
            mass[i1] += weight * frac;
            break;
        }
        case SpaceKind::circle: {
            const int n = space.size();
            const double circ = space.circumference;
            double delta = space.coords[to] - space.coords[from];
            if (delta > 0.5 * circ) delta -= circ;
            if (delta < -0.5 * circ) delta += circ;
            double pos = std::fmod(std::fmod(space.coords[from] + r * delta, circ) + circ, circ);
            const double f = pos / space.mesh;
            const int i0 = static_cast<int>(std::floor(f)) % n;
            const int i1 = (i0 + 1) % n;
            const double frac = f - std::floor(f);
            mass[i0] += weight * (1 - frac);
            mass[i1] += weight * frac;
            break;
        }
        case SpaceKind::product: {
            if (!space.factor_a || !space.factor_b)
                throw unsupported_geometry_error("split_deposit: product factors unavailable");
            const int nb = space.factor_b->size();
            Vec ma = Vec::Zero(space.factor_a->size());
            Vec mb = Vec::Zero(nb);
            split_deposit(*space.factor_a, space.factor_a_index(from), space.factor_a_index(to),
                          r, 1.0, ma);
            split_deposit(*space.factor_b, space.factor_b_index(from), space.factor_b_index(to),
                          r, 1.0, mb);
            for (int ia = 0; ia < ma.size(); ++ia)
                if (ma[ia] > 0)
                    for (int ib = 0; ib < nb; ++ib)
                        if (mb[ib] > 0) mass[ia * nb + ib] += weight * ma[ia] * mb[ib];
            break;
        }
        case SpaceKind::graph:
            throw unsupported_geometry_error("split_deposit: graph geometry unsupported");
    }
}

inline double entropy_along(const DiscreteSpace& space, const GeodesicPlan& plan, double r) {
    Vec mass = Vec::Zero(space.size());
    for (const auto& atom : plan.atoms)
        split_deposit(space, atom.path.front(), atom.path.back(), r, atom.weight, mass);
    return entropy(space, ProbMeasure{mass.cwiseQuotient(space.measure)});
}

} // namespace detail

struct SlopeCheckResult {
    double margin = 0.0;
    double slope = 0.0;
    double rhs = 0.0;
    double richardson_residual = 0.0;
};

/// Margin of d⁺/dr Ent((e_r)Θ)|_0 <= Ent(η1) - Ent(η0) - ∫∫ (1-s) k(γ_s) |γ̇|² dΘ ds.
/// The forward slope uses steps {η, η/2} with Richardson extrapolation;
/// `direction` = reverse swaps the roles of the endpoints.
inline SlopeCheckResult ent_slope_check(const DiscreteSpace& space, const Vec& k,
                                        const GeodesicPlan& plan, SlopeDirection direction,
                                        double eta = budget::kDefaultSlopeStep) {
    GeodesicPlan work = plan;
    if (direction == SlopeDirection::reverse)
        for (auto& atom : work.atoms) std::reverse(atom.path.begin(), atom.path.end());

    const double e0 = detail::entropy_along(space, work, 0.0);
    const double e_eta = detail::entropy_along(space, work, eta);
    const double e_half = detail::entropy_along(space, work, eta / 2);
    if (!std::isfinite(e0) || !std::isfinite(e_eta) || !std::isfinite(e_half))
        throw numeric_error("ent_slope_check: entropy evaluation failed along the geodesic");
    const double d1 = (e_eta - e0) / eta;
    const double d2 = (e_half - e0) / (eta / 2);

    SlopeCheckResult res;
    res.slope = 2 * d2 - d1;
    res.richardson_residual = std::abs(d2 - d1);
    const double e_end = detail::entropy_along(space, work, 1.0);
    res.rhs = e_end - e0 - evi_action_integral(work, k);
    res.margin = res.rhs - res.slope;
    return res;
}

// ---------------------------------------------------------------------------
// Evolution-variation inequality EVI_k

/// Per-t margin of
///   d⁺/dt ½W2²(μ_t, ν) + ∫∫ (1-s) k(γ_s) |γ̇|² dΘ_t ds <= Ent(ν) - Ent(μ_t)
/// with μ_t = P_t μ0 and Θ_t the geodesic plan from μ_t to ν, recomputed at
/// each t. tau = tau_geo + 10 · (worst Richardson residual).
inline CheckReport evi_check(const DiscreteSpace& space, const Vec& k, const ProbMeasure& mu0,
                             const ProbMeasure& nu, const std::vector<double>& t_grid, int S,
                             const SpectralCache& heat, double eta = budget::kDefaultSlopeStep) {
    if (nu.density.minCoeff() <= 0)
        throw input_error("evi_check: nu must have strictly positive density");
    const double ent_nu = entropy(space, nu);

    CheckReport report;
    report.name = "evi";
    double worst_t = 0.0;
    double max_resid = 0.0;
    double max_w2sq = 0.0;
    std::vector<double> resid_by_t, w2sq_by_t;
    auto half_w2sq = [&](double tau) {
        const auto m = heat_flow_measure(heat, mu0, tau);
        const double w = wasserstein_p(space, m, nu, 2.0).first;
        return 0.5 * w * w;
    };
    for (double t : t_grid) {
        if (!(t > 0)) throw input_error("evi_check: times must be positive");
        const auto mu_t = heat_flow_measure(heat, mu0, t);
        const double f0 = half_w2sq(t);
        const double d1 = (half_w2sq(t + eta) - f0) / eta;
        const double d2 = (half_w2sq(t + eta / 2) - f0) / (eta / 2);
        const double slope = 2 * d2 - d1;
        max_resid = std::max(max_resid, std::abs(d2 - d1));
        resid_by_t.push_back(std::abs(d2 - d1));
        const auto plan = displacement_geodesic(space, mu_t, nu, S);
        w2sq_by_t.push_back(plan_w2_squared(plan));
        max_w2sq = std::max(max_w2sq, w2sq_by_t.back());
        const double integral = evi_action_integral(plan, k);
        const double margin = ent_nu - entropy(space, mu_t) - slope - integral;
        if (margin < report.min_margin) worst_t = t;
        report.record(margin);
    }
    const double tau_geo = budget::kCdFactor * space.mesh * (1.0 + max_w2sq);
    const double tau_slope = budget::kSlopeFactor * max_resid;
    report.tolerance = tau_geo + tau_slope;
    report.parameters = {{"t_grid", t_grid},
                         {"S", S},
                         {"eta", eta},
                         {"tau_geo", tau_geo},
                         {"tau_slope", tau_slope},
                         {"richardson_residuals", resid_by_t},
                         {"w2_sq", w2sq_by_t},
                         {"h", space.mesh}};
    report.witnesses = {{"t", worst_t}};
    report.finalize();
    return report;
}

inline CheckReport evi_check(const DiscreteSpace& space, const Vec& k, const ProbMeasure& mu0,
                             const ProbMeasure& nu, const std::vector<double>& t_grid, int S,
                             double eta = budget::kDefaultSlopeStep) {
    return evi_check(space, k, mu0, nu, t_grid, S, SpectralCache(space), eta);
}

// ---------------------------------------------------------------------------
// Pathwise convexity

/// Per-path margin of
///   log ρ_t(γ_t) <= (1-t) log ρ0(γ0) + t log ρ1(γ1) - ∫ g(s,t) k(γ_s) |γ̇|² ds
/// with ρ_t the density of (e_t)_*Θ. Paths hitting a zero density are skipped
/// and counted, as are dust atoms below the mass floor (their rounded
/// log-densities are grid noise; the Θ-integrated margins still reproduce
/// cd_check because the floor is far below its tolerance).
/// tau = C · h · (1 + speed²) per path.
inline CheckReport pathwise_convexity_check(const DiscreteSpace& space, const Vec& k,
                                            const GeodesicPlan& plan,
                                            const std::vector<double>& t_grid,
                                            double mass_floor = 1e-12) {
    CheckReport report;
    report.name = "pathwise_convexity";
    const Vec rho0 = evaluate_at(space, plan, 0.0).density;
    const Vec rho1 = evaluate_at(space, plan, 1.0).density;
    int skipped = 0;
    int dust = 0;
    double max_speed_sq = 0.0;
    for (const auto& atom : plan.atoms)
        max_speed_sq = std::max(max_speed_sq, atom.speed * atom.speed);
    report.tolerance = budget::kPathwiseFactor * space.mesh * (1.0 + max_speed_sq);

    const int S = plan.segments;
    int worst_atom = -1;
    double worst_t = 0.0;
    for (double t : t_grid) {
        const int step = static_cast<int>(std::lround(t * S));
        const Vec rho_t = evaluate_at(space, plan, t).density;
        for (std::size_t ia = 0; ia < plan.atoms.size(); ++ia) {
            const auto& atom = plan.atoms[ia];
            if (atom.weight < mass_floor) {
                ++dust;
                continue;
            }
            const double r0 = rho0[atom.path.front()];
            const double r1 = rho1[atom.path.back()];
            const double rt = rho_t[atom.path[step]];
            if (r0 <= 0 || r1 <= 0 || rt <= 0) {
                ++skipped;
                continue;
            }
            double quad = 0.0;
            for (int s = 0; s <= S; ++s) {
                const double sv = static_cast<double>(s) / S;
                const double wq = (s == 0 || s == S) ? 0.5 / S : 1.0 / S;
                quad += wq * green_function(sv, t) * k[atom.path[s]];
            }
            const double margin = (1 - t) * std::log(r0) + t * std::log(r1) -
                                  atom.speed * atom.speed * quad - std::log(rt);
            if (margin < report.min_margin) {
                worst_atom = static_cast<int>(ia);
                worst_t = t;
            }
            report.record(margin);
        }
    }
    report.parameters = {{"t_grid", t_grid},
                         {"atoms", plan.atoms.size()},
                         {"skipped_zero_density", skipped},
                         {"skipped_below_mass_floor", dust},
                         {"mass_floor", mass_floor},
                         {"h", space.mesh}};
    report.witnesses = {{"atom_index", worst_atom}, {"t", worst_t}};
    report.finalize();
    return report;
}

// ---------------------------------------------------------------------------
// Change of measure and tensorization

/// Tilts the reference measure by e^{-V} (renormalized) and rebuilds the edge
/// weights with the same midpoint rule, here realized through the geometric
/// mean e^{-(V(x)+V(y))/2}; the curvature field shifts from k to k + λ.
inline std::pair<DiscreteSpace, CurvatureField> change_of_measure(const DiscreteSpace& space,
                                                                  const Vec& k, const Vec& V,
                                                                  const Vec& lambda) {
    const int n = space.size();
    if (V.size() != n || lambda.size() != n || k.size() != n)
        throw input_error("change_of_measure: size mismatch");
    DiscreteSpace out = space;
    const Vec tilt = (-V.array()).exp().matrix();
    const double z = space.measure.cwiseProduct(tilt).sum();
    out.measure = space.measure.cwiseProduct(tilt) / z;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (space.edge_weights(i, j) > 0)
                out.edge_weights(i, j) =
                    space.edge_weights(i, j) * std::exp(-0.5 * (V[i] + V[j])) / z;
    // a tilted product does not factorize in general
    out.factor_a.reset();
    out.factor_b.reset();
    return {std::move(out), make_curvature_field(k + lambda)};
}

/// Tensorized curvature field on a binary product:
/// k(x_a, x_b) = min{0, k_a(x_a), k_b(x_b)}.
inline CurvatureField tensor_curvature(const DiscreteSpace& product, const Vec& ka,
                                       const Vec& kb) {
    if (product.kind != SpaceKind::product || !product.factor_a || !product.factor_b)
        throw input_error("tensor_curvature: needs a product space");
    if (ka.size() != product.factor_a->size() || kb.size() != product.factor_b->size())
        throw input_error("tensor_curvature: factor field size mismatch");
    Vec field(product.size());
    for (int s = 0; s < product.size(); ++s)
        field[s] = std::min({0.0, ka[product.factor_a_index(s)], kb[product.factor_b_index(s)]});
    return make_curvature_field(std::move(field));
}

// ---------------------------------------------------------------------------
// Strong λ-convexity of a potential

/// Margin of V(γ_t) <= (1-t) V(γ0) + t V(γ1) - ∫ g(s,t) λ(γ_s) |γ̇|² ds over
/// the given discrete paths.
inline CheckReport lambda_convexity_check(const DiscreteSpace& space, const Vec& V,
                                          const Vec& lambda, const GeodesicPlan& paths,
                                          const std::vector<double>& t_grid) {
    CheckReport report;
    report.name = "lambda_convexity";
    // the dominant grid error is the rounding of γ_t inside V, bounded by
    // Lip(V)·h/2; the λ-rounding inside the s-integral oscillates and cancels
    double lip = 0.0;
    for (int i = 0; i < space.size(); ++i)
        for (int j = 0; j < space.size(); ++j)
            if (space.edge_weights(i, j) > 0)
                lip = std::max(lip, std::abs(V[i] - V[j]) / space.metric(i, j));
    report.tolerance = budget::kLambdaFactor * space.mesh * lip;

    const int S = paths.segments;
    int worst_atom = -1;
    double worst_t = 0.0;
    for (double t : t_grid) {
        const int step = static_cast<int>(std::lround(t * S));
        for (std::size_t ia = 0; ia < paths.atoms.size(); ++ia) {
            const auto& atom = paths.atoms[ia];
            double quad = 0.0;
            for (int s = 0; s <= S; ++s) {
                const double sv = static_cast<double>(s) / S;
                const double wq = (s == 0 || s == S) ? 0.5 / S : 1.0 / S;
                quad += wq * green_function(sv, t) * lambda[atom.path[s]];
            }
            const double margin = (1 - t) * V[atom.path.front()] + t * V[atom.path.back()] -
                                  atom.speed * atom.speed * quad - V[atom.path[step]];
            if (margin < report.min_margin) {
                worst_atom = static_cast<int>(ia);
                worst_t = t;
            }
            report.record(margin);
        }
    }
    report.parameters = {{"t_grid", t_grid}, {"paths", paths.atoms.size()}, {"h", space.mesh}};
    report.witnesses = {{"atom_index", worst_atom}, {"t", worst_t}};
    report.finalize();
    return report;
}

// ---------------------------------------------------------------------------
// Deterministic instance helpers shared by experiments and the acceptance
// suite: mollified strictly positive densities.

inline ProbMeasure mollified_density(const DiscreteSpace& space, const SpectralCache& heat,
                                     std::uint64_t seed, double sharpness = 0.8,
                                     double mollify_time = 0.05) {
    CounterRng rng(seed);
    Vec g(space.size());
    for (int i = 0; i < space.size(); ++i) g[i] = rng.normal();
    g = heat.apply(g, mollify_time);
    g /= std::max(g.cwiseAbs().maxCoeff(), 1e-300);
    Vec rho = (sharpness * g).array().exp();
    rho /= rho.cwiseProduct(space.measure).sum();
    return ProbMeasure{std::move(rho)};
}

} // namespace ricci
