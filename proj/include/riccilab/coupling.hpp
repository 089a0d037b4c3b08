#pragma once

#include "riccilab/report.hpp"
#include "riccilab/rng.hpp"
#include "riccilab/semigroup.hpp"
#include "riccilab/space.hpp"
#include "riccilab/transport.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

namespace ricci {

/// One-step kernel e^{tΔ} by uniformization: with Λ the largest exit rate and
/// P = I + Δ/Λ (substochastic-free, entrywise nonnegative),
/// e^{tΔ} = Σ_k e^{-Λt} (Λt)^k / k! · P^k. Unlike the spectral route this
/// keeps every entry nonnegative and gives genuine (not roundoff) tail masses,
/// which the threshold couplings below depend on.
inline Mat markov_kernel_uniformized(const DiscreteSpace& space, double t) {
    if (t < 0) throw input_error("markov_kernel_uniformized: t must be >= 0");
    const int n = space.size();
    const Mat gen = laplacian(space);
    if (t == 0) return Mat::Identity(n, n);
    double rate = 0.0;
    for (int i = 0; i < n; ++i) rate = std::max(rate, -gen(i, i));
    if (rate == 0.0) return Mat::Identity(n, n);
    const double lam = rate * (1.0 + 1e-12);
    const Mat P = Mat::Identity(n, n) + gen / lam;

    const double a = lam * t;
    double coeff = std::exp(-a);  // Poisson(0)
    Mat power = Mat::Identity(n, n);
    Mat out = coeff * power;
    double cumulative = coeff;
    const int hard_cap = 64 + static_cast<int>(4 * a + 40 * std::sqrt(a + 1));
    for (int k = 1; k <= hard_cap && cumulative < 1.0 - 1e-16; ++k) {
        power = power * P;
        coeff *= a / k;
        out += coeff * power;
        cumulative += coeff;
    }
    return out;
}

/// One-step coupled kernel q*: for every ordered site pair (x, y), a coupling
/// of the rows p_δ(x,·) and p_δ(y,·) supported on
/// {(x', y') : d(x', y') <= λ(x,y) · d(x,y)}, with λ(x,y) the smallest
/// feasible multiplier on the grid {e^{-Kδ}(1 + jε)}. Diagonal pairs carry
/// the identity coupling, so coalesced chains never separate.
struct CoupledKernel {
    struct Entry {
        int pair;     // target pair index x'·n + y'
        double mass;
    };

    std::shared_ptr<const DiscreteSpace> space;
    double delta = 0.0;   // semigroup-time step; process-time step is 2δ
    double rate_K = 0.0;
    double epsilon = 1e-3;
    Mat p_delta;          // one-step single-chain kernel (uniformized)
    std::vector<std::vector<Entry>> rows;  // indexed by pair = x·n + y
    Vec slack;            // λ per pair

    int sites() const { return space ? space->size() : 0; }
    int pair_count() const { return static_cast<int>(rows.size()); }
    int pair_index(int x, int y) const { return x * sites() + y; }
    int first_of(int pair) const { return pair / sites(); }
    int second_of(int pair) const { return pair % sites(); }
};

struct SlackPolicy {
    double epsilon = 1e-3;
    /// Construction fails for a pair once λ·d(x,y) would exceed this multiple
    /// of the diameter.
    double max_threshold_factor = 1.0;
};

namespace detail {

/// Monotone coupling of two kernel rows on a 1D space; returns the atom list
/// and the largest displacement it carries. Optimal for the sup-displacement
/// cost on the line, so the smallest feasible threshold is exactly this
/// displacement.
inline std::pair<std::vector<QuantileAtom>, double> monotone_row_coupling(
    const DiscreteSpace& space, const Vec& row_x, const Vec& row_y) {
    auto atoms = quantile_coupling(row_x, row_y);
    double dmax = 0.0;
    for (const auto& at : atoms) dmax = std::max(dmax, space.metric(at.i, at.j));
    return {std::move(atoms), dmax};
}

} // namespace detail

inline CoupledKernel build_qstar(const DiscreteSpace& space, double K, double delta,
                                 const SlackPolicy& policy = {}) {
    if (!(delta > 0)) throw input_error("build_qstar: delta must be > 0");
    const int n = space.size();
    CoupledKernel qk;
    qk.space = std::make_shared<DiscreteSpace>(space);
    qk.delta = delta;
    qk.rate_K = K;
    qk.epsilon = policy.epsilon;
    qk.p_delta = markov_kernel_uniformized(space, delta);
    qk.rows.resize(static_cast<std::size_t>(n) * n);
    qk.slack.resize(static_cast<Eigen::Index>(n) * n);

    const double base = std::exp(-K * delta);
    const double diameter = space.diameter();

    for (int x = 0; x < n; ++x) {
        for (int y = 0; y < n; ++y) {
            const int pr = qk.pair_index(x, y);
            auto& row = qk.rows[pr];
            if (x == y) {
                for (int z = 0; z < n; ++z)
                    if (qk.p_delta(x, z) > 0) row.push_back({qk.pair_index(z, z), qk.p_delta(x, z)});
                qk.slack[pr] = base;
                continue;
            }
            const double dxy = space.metric(x, y);
            const Vec row_x = qk.p_delta.row(x).transpose();
            const Vec row_y = qk.p_delta.row(y).transpose();
            if (space.kind == SpaceKind::interval) {
                // the monotone coupling is sup-displacement optimal on the
                // line, so the smallest feasible threshold is its largest
                // displacement; the grid multiplier rounds it up
                auto [atoms, dmax] = detail::monotone_row_coupling(space, row_x, row_y);
                if (dmax > policy.max_threshold_factor * diameter * (1 + 1e-12))
                    throw numeric_error("build_qstar: no feasible threshold for pair (" +
                                        space.labels[x] + ", " + space.labels[y] + ")");
                const double needed = dmax / dxy;
                int j = 0;
                if (needed > base)
                    j = static_cast<int>(std::ceil((needed / base - 1.0) / policy.epsilon - 1e-12));
                for (const auto& at : atoms) row.push_back({qk.pair_index(at.i, at.j), at.mass});
                qk.slack[pr] = base * (1.0 + j * policy.epsilon);
            } else {
                // general geometry: walk the multiplier grid with a max-flow
                // feasibility test at each candidate threshold; once the
                // threshold covers the whole space every coupling qualifies,
                // so an infeasible exit can only come from mass defects
                const Vec &a = row_x, &b = row_y;
                bool found = false;
                bool covered_all = false;
                for (int j = 0; !covered_all; ++j) {
                    const double lambda = base * (1.0 + j * policy.epsilon);
                    const double c = lambda * dxy;
                    covered_all = c >= policy.max_threshold_factor * diameter * (1 - 1e-12);
                    std::vector<std::vector<bool>> allow(n, std::vector<bool>(n, false));
                    for (int i = 0; i < n; ++i)
                        for (int l = 0; l < n; ++l)
                            allow[i][l] = space.metric(i, l) <= c + 1e-13 * (1 + c);
                    auto q = detail::threshold_coupling(a, b, allow);
                    if (q) {
                        for (int i = 0; i < n; ++i)
                            for (int l = 0; l < n; ++l)
                                if ((*q)(i, l) > 0) row.push_back({qk.pair_index(i, l), (*q)(i, l)});
                        qk.slack[pr] = lambda;
                        found = true;
                        break;
                    }
                }
                if (!found)
                    throw numeric_error("build_qstar: no feasible threshold for pair (" +
                                        space.labels[x] + ", " + space.labels[y] + ")");
            }
        }
    }
    return qk;
}

/// Exact composition over the paired state space: the kernel at time steps·δ
/// as a dense (n² × n²) stochastic matrix. Guarded by a pair-count cap; above
/// it, use sample_coupled_paths instead.
inline Mat compose_kernel(const CoupledKernel& qk, int steps, int pair_cap = 4096) {
    if (steps < 1) throw input_error("compose_kernel: steps must be >= 1");
    const int N = qk.pair_count();
    if (N > pair_cap)
        throw input_error("compose_kernel: " + std::to_string(N) +
                          " pair states exceed the cap " + std::to_string(pair_cap) +
                          "; use sample_coupled_paths");
    Mat one = Mat::Zero(N, N);
    for (int pr = 0; pr < N; ++pr)
        for (const auto& e : qk.rows[pr]) one(pr, e.pair) += e.mass;

    // binary exponentiation keeps the roundoff accumulation logarithmic
    Mat result;
    bool have = false;
    Mat power = one;
    int remaining = steps;
    while (remaining > 0) {
        if (remaining & 1) {
            result = have ? Mat(result * power) : power;
            have = true;
        }
        remaining >>= 1;
        if (remaining > 0) power = power * power;
    }
    return result;
}

/// Coupled trajectory on the dyadic grid: states at process times 2δ·k.
struct CoupledTrajectory {
    std::vector<int> first, second;
    double delta = 0.0;
    std::uint64_t stream_key = 0;

    int steps() const { return static_cast<int>(first.size()) - 1; }
    double process_time(int k) const { return 2.0 * delta * k; }
};

/// Samples coupled chains: each step draws (x', y') from q*((x, y), ·).
/// `alpha` is the initial pair distribution as a joint mass matrix. The
/// horizon is in process time and must be a multiple of 2δ. Path j uses
/// substream (seed, j); the per-step support bound is asserted during
/// sampling.
inline std::vector<CoupledTrajectory> sample_coupled_paths(const CoupledKernel& qk,
                                                           const Mat& alpha, double horizon,
                                                           int n_paths, std::uint64_t seed) {
    const int n = qk.sites();
    if (alpha.rows() != n || alpha.cols() != n)
        throw input_error("sample_coupled_paths: alpha size mismatch");
    const double steps_real = horizon / (2.0 * qk.delta);
    const int steps = static_cast<int>(std::lround(steps_real));
    if (steps < 0 || std::abs(steps_real - steps) > 1e-9)
        throw input_error("sample_coupled_paths: horizon must be a multiple of 2*delta");
    if (n_paths < 1) throw input_error("sample_coupled_paths: n_paths must be >= 1");

    // flattened initial distribution and per-row cumulative tables
    std::vector<double> alpha_flat(static_cast<std::size_t>(n) * n);
    for (int x = 0; x < n; ++x)
        for (int y = 0; y < n; ++y) alpha_flat[static_cast<std::size_t>(x) * n + y] = alpha(x, y);
    const double alpha_total = alpha.sum();
    if (alpha_total <= 0) throw input_error("sample_coupled_paths: alpha has no mass");

    std::vector<std::vector<double>> cum(qk.rows.size());
    std::vector<double> row_total(qk.rows.size(), 0.0);
    for (std::size_t pr = 0; pr < qk.rows.size(); ++pr) {
        double acc = 0.0;
        cum[pr].reserve(qk.rows[pr].size());
        for (const auto& e : qk.rows[pr]) {
            acc += e.mass;
            cum[pr].push_back(acc);
        }
        row_total[pr] = acc;
    }

    const CounterRng root(seed);
    std::vector<CoupledTrajectory> out;
    out.reserve(n_paths);
    for (int j = 0; j < n_paths; ++j) {
        auto rng = root.substream(static_cast<std::uint64_t>(j));
        CoupledTrajectory traj;
        traj.delta = qk.delta;
        traj.stream_key = rng.key();

        int pair = rng.discrete(alpha_flat, alpha_total);
        traj.first.push_back(qk.first_of(pair));
        traj.second.push_back(qk.second_of(pair));
        for (int step = 0; step < steps; ++step) {
            const auto& row = qk.rows[pair];
            const auto& c = cum[pair];
            const double u = rng.uniform() * row_total[pair];
            const auto it = std::lower_bound(c.begin(), c.end(), u);
            const std::size_t idx =
                std::min(static_cast<std::size_t>(it - c.begin()), row.size() - 1);
            const int next = row[idx].pair;

            const int x = qk.first_of(pair), y = qk.second_of(pair);
            const int xn = qk.first_of(next), yn = qk.second_of(next);
            const double bound = qk.slack[pair] * qk.space->metric(x, y);
            if (qk.space->metric(xn, yn) > bound + 1e-12 * (1 + bound))
                throw numeric_error("sample_coupled_paths: support invariant violated");
            traj.first.push_back(xn);
            traj.second.push_back(yn);
            pair = next;
        }
        out.push_back(std::move(traj));
    }
    return out;
}

/// Pathwise contraction statistics over all dyadic time pairs s < s + t:
/// margin = e^{-K_stat·t/2} · d(B_s) · (per-step λ budget) - d(B_{s+t}).
/// With K_stat equal to the kernel's rate the margins are nonnegative by
/// construction; the report carries the violation count and the distribution
/// of the contraction ratio.
inline CheckReport pathwise_contraction_stats(const CoupledKernel& qk,
                                              const std::vector<CoupledTrajectory>& trajectories,
                                              double K_stat) {
    CheckReport report;
    report.name = "pathwise_contraction";
    report.tolerance = 1e-12;
    const auto& space = *qk.space;
    const double log_step = qk.rate_K * qk.delta;  // per-step log of e^{K δ}

    long violations = 0;
    long coalescence_breaks = 0;
    std::vector<double> ratios;
    int worst_path = -1, worst_s = 0, worst_t = 0;
    for (std::size_t ip = 0; ip < trajectories.size(); ++ip) {
        const auto& tr = trajectories[ip];
        const int m = tr.steps();
        // prefix of log(λ e^{Kδ}) along the path and distances
        std::vector<double> prefix(m + 1, 0.0), dist(m + 1, 0.0);
        for (int i = 0; i <= m; ++i) dist[i] = space.metric(tr.first[i], tr.second[i]);
        for (int i = 0; i < m; ++i) {
            const int pr = qk.pair_index(tr.first[i], tr.second[i]);
            prefix[i + 1] = prefix[i] + std::log(qk.slack[pr]) + log_step;
        }
        for (int s = 0; s <= m; ++s) {
            for (int e = s + 1; e <= m; ++e) {
                if (dist[s] == 0.0) {
                    if (dist[e] != 0.0) ++coalescence_breaks;
                    continue;
                }
                const double dt_semigroup = qk.delta * (e - s);  // = process t / 2
                const double budget = std::exp(prefix[e] - prefix[s]);
                const double bound = std::exp(-K_stat * dt_semigroup) * dist[s] * budget;
                const double margin = (bound - dist[e]) / dist[s];
                if (margin < report.min_margin) {
                    worst_path = static_cast<int>(ip);
                    worst_s = s;
                    worst_t = e;
                }
                report.record(margin);
                if (margin < -1e-12) ++violations;
                ratios.push_back(dist[e] / (std::exp(-K_stat * dt_semigroup) * dist[s]));
            }
        }
    }
    std::sort(ratios.begin(), ratios.end());
    auto quantile = [&](double q) {
        if (ratios.empty()) return 0.0;
        const std::size_t i = static_cast<std::size_t>(q * (ratios.size() - 1));
        return ratios[i];
    };
    report.parameters = {{"K_stat", K_stat},
                         {"paths", trajectories.size()},
                         {"violations", violations},
                         {"coalescence_breaks", coalescence_breaks},
                         {"ratio_median", quantile(0.5)},
                         {"ratio_p99", quantile(0.99)},
                         {"ratio_max", ratios.empty() ? 0.0 : ratios.back()}};
    report.witnesses = {{"path", worst_path}, {"s_step", worst_s}, {"t_step", worst_t}};
    report.finalize();
    return report;
}

/// Exact finite-dimensional distribution of the coupled chain over the time
/// list J (process times, multiples of 2δ): a flat table over (X²)^{|J|} in
/// row-major order. Refuses when the table exceeds the cap.
struct FiniteDimDistribution {
    std::vector<int> steps;       // J in units of one kernel step
    std::vector<double> table;    // size pair_count^{|J|}
    int pair_count = 0;

    std::size_t flat_index(const std::vector<int>& pairs) const {
        std::size_t idx = 0;
        for (int p : pairs) idx = idx * static_cast<std::size_t>(pair_count) + p;
        return idx;
    }

    /// Marginalizes out the time at position `drop`, yielding the
    /// distribution for J minus that time.
    FiniteDimDistribution marginalize(int drop) const {
        const int r = static_cast<int>(steps.size());
        FiniteDimDistribution out;
        out.pair_count = pair_count;
        for (int i = 0; i < r; ++i)
            if (i != drop) out.steps.push_back(steps[i]);
        const std::size_t n_out = out.steps.empty()
                                      ? 1
                                      : static_cast<std::size_t>(std::pow(pair_count, r - 1));
        out.table.assign(n_out, 0.0);
        std::vector<int> idx(r, 0);
        for (std::size_t flat = 0; flat < table.size(); ++flat) {
            std::size_t rest = flat;
            for (int i = r - 1; i >= 0; --i) {
                idx[i] = static_cast<int>(rest % pair_count);
                rest /= pair_count;
            }
            std::size_t oflat = 0;
            for (int i = 0; i < r; ++i)
                if (i != drop) oflat = oflat * pair_count + idx[i];
            out.table[oflat] += table[flat];
        }
        return out;
    }
};

inline FiniteDimDistribution finite_dim_distribution(const CoupledKernel& qk, const Mat& alpha,
                                                     const std::vector<double>& times,
                                                     std::size_t cap = 20'000'000) {
    const int n = qk.sites();
    const int N = qk.pair_count();
    if (times.empty()) throw input_error("finite_dim_distribution: empty time list");
    FiniteDimDistribution out;
    out.pair_count = N;
    for (double t : times) {
        const double steps_real = t / (2.0 * qk.delta);
        const int st = static_cast<int>(std::lround(steps_real));
        if (st < 1 || std::abs(steps_real - st) > 1e-9)
            throw input_error("finite_dim_distribution: times must be positive multiples of 2*delta");
        if (!out.steps.empty() && st <= out.steps.back())
            throw input_error("finite_dim_distribution: times must be strictly increasing");
        out.steps.push_back(st);
    }
    const int r = static_cast<int>(times.size());
    double table_size = 1.0;
    for (int i = 0; i < r; ++i) table_size *= N;
    if (table_size > static_cast<double>(cap))
        throw input_error("finite_dim_distribution: table exceeds the configured cap");

    // kernels between consecutive listed times
    std::vector<Mat> kernels;
    kernels.push_back(compose_kernel(qk, out.steps[0], N));
    for (int i = 1; i < r; ++i)
        kernels.push_back(compose_kernel(qk, out.steps[i] - out.steps[i - 1], N));

    std::vector<double> alpha_flat(static_cast<std::size_t>(N));
    for (int x = 0; x < n; ++x)
        for (int y = 0; y < n; ++y) alpha_flat[static_cast<std::size_t>(x) * n + y] = alpha(x, y);

    // distribution at the first listed time
    std::vector<double> first(static_cast<std::size_t>(N), 0.0);
    for (int p0 = 0; p0 < N; ++p0)
        if (alpha_flat[p0] > 0)
            for (int p1 = 0; p1 < N; ++p1) first[p1] += alpha_flat[p0] * kernels[0](p0, p1);

    out.table.assign(static_cast<std::size_t>(table_size), 0.0);
    std::vector<int> idx(r, 0);
    for (std::size_t flat = 0; flat < out.table.size(); ++flat) {
        std::size_t rest = flat;
        for (int i = r - 1; i >= 0; --i) {
            idx[i] = static_cast<int>(rest % N);
            rest /= N;
        }
        double w = first[idx[0]];
        for (int i = 1; i < r && w != 0.0; ++i) w *= kernels[i](idx[i - 1], idx[i]);
        out.table[flat] = w;
    }
    return out;
}

} // namespace ricci
