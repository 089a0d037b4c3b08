#pragma once

#include "riccilab/rng.hpp"
#include "riccilab/space.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <utility>
#include <vector>

namespace ricci {

/// Eigendecomposition of a generator G = Δ - 2k (k may be zero) that is
/// self-adjoint in L²(m). Stored in the symmetrized frame
/// A = M^{1/2} G M^{-1/2}, so e^{tG} u = M^{-1/2} Q e^{tΛ} Qᵀ M^{1/2} u and
/// T_t stays exactly m-symmetric for every t. Immutable and shareable.
class SpectralCache {
  public:
    explicit SpectralCache(const DiscreteSpace& space, const Vec& k = Vec())
        : sqrt_m_(space.measure.cwiseSqrt()) {
        const int n = space.size();
        Mat gen = laplacian(space);
        if (k.size() != 0) {
            if (k.size() != n) throw input_error("SpectralCache: potential size mismatch");
            gen -= 2.0 * k.asDiagonal();
        }
        Mat sym = (sqrt_m_.asDiagonal() * gen) * sqrt_m_.cwiseInverse().asDiagonal();
        sym = 0.5 * (sym + sym.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<Mat> es(sym);
        if (es.info() != Eigen::Success) throw numeric_error("SpectralCache: eigensolver failed");
        eigenvalues_ = es.eigenvalues();
        q_ = es.eigenvectors();
    }

    const Vec& eigenvalues() const { return eigenvalues_; }

    /// m-orthonormal eigenvectors of the generator, as columns.
    Mat eigenbasis() const { return sqrt_m_.cwiseInverse().asDiagonal() * q_; }

    Vec apply(const Vec& u, double t) const {
        if (t < 0) throw input_error("semigroup: t must be >= 0");
        if (t == 0) return u;
        const Vec c = q_.transpose() * sqrt_m_.cwiseProduct(u);
        const Vec scaled = (eigenvalues_.array() * t).exp().matrix().cwiseProduct(c);
        return sqrt_m_.cwiseInverse().cwiseProduct(q_ * scaled);
    }

    /// Full matrix of e^{tG} acting on function values.
    Mat matrix(double t) const {
        if (t < 0) throw input_error("semigroup: t must be >= 0");
        Mat mid = q_ * (eigenvalues_.array() * t).exp().matrix().asDiagonal() * q_.transpose();
        return sqrt_m_.cwiseInverse().asDiagonal() * mid * sqrt_m_.asDiagonal();
    }

    /// Largest nonzero eigenvalue magnitude (spectral gap for the heat case).
    double spectral_gap() const {
        double gap = 0.0;
        for (int i = 0; i < eigenvalues_.size(); ++i) {
            const double lam = -eigenvalues_[i];
            if (lam > 1e-12 && (gap == 0.0 || lam < gap)) gap = lam;
        }
        return gap;
    }

  private:
    Vec sqrt_m_;
    Vec eigenvalues_;
    Mat q_;
};

inline Vec heat_apply(const DiscreteSpace& space, const Vec& u, double t) {
    return SpectralCache(space).apply(u, t);
}

inline Vec heat_apply(const SpectralCache& heat, const Vec& u, double t) {
    return heat.apply(u, t);
}

/// Dual flow on measures, P_t(ρ m) = (T_t ρ) m; stays a probability measure.
inline ProbMeasure heat_flow_measure(const SpectralCache& heat, const ProbMeasure& mu, double t) {
    return ProbMeasure{heat.apply(mu.density, t)};
}

inline ProbMeasure heat_flow_measure(const DiscreteSpace& space, const ProbMeasure& mu, double t) {
    return heat_flow_measure(SpectralCache(space), mu, t);
}

/// Markov kernel rows p_t(x,·) = P_t δ_x as site masses; each row sums to 1
/// and m(x) p_t(x,y) = m(y) p_t(y,x).
inline Mat markov_kernel(const SpectralCache& heat, double t) { return heat.matrix(t); }

inline Mat markov_kernel(const DiscreteSpace& space, double t) {
    return SpectralCache(space).matrix(t);
}

inline Vec schrodinger_apply(const DiscreteSpace& space, const Vec& k, const Vec& u, double t) {
    return SpectralCache(space, k).apply(u, t);
}

// ---------------------------------------------------------------------------
// Feynman-Kac Monte Carlo

/// One continuous-time chain trajectory with generator ½Δ, kept for
/// diagnostics: exact jump times, visited sites, the exact piecewise-constant
/// integral ∫ k ds, and the substream key that produced it.
struct PathSample {
    std::vector<double> jump_times;
    std::vector<int> sites;
    double potential_integral = 0.0;
    int terminal_site = 0;
    std::uint64_t stream_key = 0;
};

struct FeynmanKacResult {
    Vec estimate;
    Vec standard_error;
    std::uint64_t seed = 0;
    int n_paths = 0;
};

namespace detail {

struct JumpTable {
    std::vector<double> exit_rate;              // ½ Σ_y w(x,y)/m(x)
    std::vector<std::vector<double>> weights;   // neighbor weights
    std::vector<std::vector<int>> neighbors;
    std::vector<double> weight_sum;
};

inline JumpTable make_jump_table(const DiscreteSpace& space) {
    const int n = space.size();
    JumpTable jt;
    jt.exit_rate.resize(n);
    jt.weights.resize(n);
    jt.neighbors.resize(n);
    jt.weight_sum.resize(n);
    for (int x = 0; x < n; ++x) {
        double wsum = 0.0;
        for (int y = 0; y < n; ++y) {
            const double w = space.edge_weights(x, y);
            if (w > 0) {
                jt.neighbors[x].push_back(y);
                jt.weights[x].push_back(w);
                wsum += w;
            }
        }
        jt.weight_sum[x] = wsum;
        jt.exit_rate[x] = 0.5 * wsum / space.measure[x];
    }
    return jt;
}

/// Simulates the chain with generator ½Δ from `start` up to `horizon`,
/// accumulating ∫ k ds exactly over the holding intervals.
inline PathSample simulate_path(const JumpTable& jt, const Vec& k, int start, double horizon,
                                CounterRng rng) {
    PathSample p;
    p.stream_key = rng.key();
    p.sites.push_back(start);
    int x = start;
    double t = 0.0;
    while (true) {
        const double rate = jt.exit_rate[x];
        const double hold = (rate > 0) ? rng.exponential(rate) : std::numeric_limits<double>::infinity();
        if (t + hold >= horizon) {
            p.potential_integral += (horizon - t) * k[x];
            break;
        }
        t += hold;
        p.potential_integral += hold * k[x];
        x = jt.neighbors[x][static_cast<std::size_t>(
            rng.discrete(jt.weights[x], jt.weight_sum[x]))];
        p.jump_times.push_back(t);
        p.sites.push_back(x);
    }
    p.terminal_site = x;
    return p;
}

} // namespace detail

/// Unbiased Monte Carlo estimator of T_t^{2k}u via the Feynman-Kac
/// representation T_t^{2k}u(x) = E_x[ e^{-∫_0^{2t} k(B_s) ds} u(B_{2t}) ],
/// where B has generator ½Δ and runs to process time 2t. Path j from site x
/// uses substream (seed, x, j); the estimator's only error is Monte Carlo.
inline FeynmanKacResult feynman_kac_mc(const DiscreteSpace& space, const Vec& k, const Vec& u,
                                       double t, int n_paths, std::uint64_t seed) {
    if (n_paths < 1) throw input_error("feynman_kac_mc: n_paths must be >= 1");
    if (t < 0) throw input_error("feynman_kac_mc: t must be >= 0");
    const int n = space.size();
    if (k.size() != n || u.size() != n) throw input_error("feynman_kac_mc: size mismatch");

    const auto jt = detail::make_jump_table(space);
    const double horizon = 2.0 * t;
    FeynmanKacResult out;
    out.estimate.resize(n);
    out.standard_error.resize(n);
    out.seed = seed;
    out.n_paths = n_paths;
    const CounterRng root(seed);

    for (int x = 0; x < n; ++x) {
        double mean = 0.0, m2 = 0.0;  // Welford
        for (int j = 0; j < n_paths; ++j) {
            const auto path = detail::simulate_path(
                jt, k, x, horizon,
                root.substream(static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(j)));
            const double val = std::exp(-path.potential_integral) * u[path.terminal_site];
            const double delta = val - mean;
            mean += delta / (j + 1);
            m2 += delta * (val - mean);
        }
        out.estimate[x] = mean;
        out.standard_error[x] =
            (n_paths > 1) ? std::sqrt(m2 / (static_cast<double>(n_paths) - 1) / n_paths) : 0.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Duhamel identity

/// Operator-norm residual of T_t - T_t^{2k} = ∫_0^t T_r (2k · T_{t-r}^{2k}) dr
/// with composite Simpson on [0, t]; `quad_nodes` counts subintervals
/// (rounded up to even). Fourth-order in the node count.
inline double duhamel_residual(const DiscreteSpace& space, const Vec& k, double t,
                               int quad_nodes) {
    if (quad_nodes < 2) throw input_error("duhamel_residual: quad_nodes must be >= 2");
    const int N = quad_nodes + (quad_nodes % 2);
    const SpectralCache heat(space);
    const SpectralCache schro(space, k);

    const double dr = t / N;
    const int n = space.size();
    Mat integral = Mat::Zero(n, n);
    for (int i = 0; i <= N; ++i) {
        const double r = i * dr;
        const double w = (i == 0 || i == N) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        const Mat term = heat.matrix(r) * (2.0 * k.asDiagonal()) * schro.matrix(t - r);
        integral += (w * dr / 3.0) * term;
    }
    const Mat residual = heat.matrix(t) - schro.matrix(t) - integral;
    return residual.jacobiSvd().singularValues()(0);
}

} // namespace ricci
