#pragma once

namespace ricci::budget {

// Discretization budgets, pinned from the grid-refinement studies in
// data/refinement_budget.json (regenerate with `ricci-lab run` on the
// refine-study experiment). Margins are compared against -tau where tau is
// assembled from these constants; each constant carries a ~2x safety factor
// over the measured worst case.

/// be_scan: relative budget factor, tau = kBeScanFactor * h^2 (margins are
/// normalized by ||Gamma(u)||_inf per test function).
inline constexpr double kBeScanFactor = 10.0;

/// gradient_estimate_check: relative pointwise budget, margins normalized by
/// ||Gamma(u)||_inf.
inline constexpr double kGradientBudget = 5e-3;

/// wp_contraction_check: relative budget, margins normalized by W_p(mu, nu).
inline constexpr double kWpBudget = 1e-3;

/// cd_check / evi_check geometric budget: tau_geo = kCdFactor * h * (1 + W2^2).
/// The double-well refinement over n in {101, 201, 401} measures zero
/// violations with the phase-split geodesic deposits; the pinned value keeps
/// headroom for instance families outside the study.
inline constexpr double kCdFactor = 0.25;

/// Slope checks: tau_slope = kSlopeFactor * |D(eta/2) - D(eta)| (the
/// Richardson correction magnitude).
inline constexpr double kSlopeFactor = 10.0;

/// pathwise_convexity_check: per-path budget
/// tau = kPathwiseFactor * h * (1 + speed^2).
inline constexpr double kPathwiseFactor = 1.0;

/// lambda_convexity_check: tau = kLambdaFactor * h * Lip(V).
inline constexpr double kLambdaFactor = 0.75;

/// Default forward-difference step for d+/dt (semigroup time).
inline constexpr double kDefaultSlopeStep = 1e-3;

} // namespace ricci::budget
