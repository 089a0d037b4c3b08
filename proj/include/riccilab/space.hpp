#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace ricci {

struct input_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct unsupported_geometry_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class SpaceKind { interval, circle, product, graph };

inline const char* to_string(SpaceKind k) {
    switch (k) {
        case SpaceKind::interval: return "interval";
        case SpaceKind::circle: return "circle";
        case SpaceKind::product: return "product";
        case SpaceKind::graph: return "graph";
    }
    return "?";
}

/// Finite metric measure space: sites with a metric, a probability reference
/// measure m, and symmetric nonnegative Dirichlet-form weights w. The
/// generator is (Δu)(x) = (1/m(x)) Σ_y w(x,y)(u(y)-u(x)); it is self-adjoint
/// in L²(m) and annihilates constants by construction.
struct DiscreteSpace {
    SpaceKind kind = SpaceKind::graph;
    std::vector<std::string> labels;
    /// 1D coordinate of each site (interval: position; circle: arc length
    /// from site 0). Products keep per-factor coordinates in the factors.
    std::vector<double> coords;
    Mat metric;
    Vec measure;
    Mat edge_weights;

    /// Uniform grid spacing for interval/circle; smallest edge length else.
    double mesh = 0.0;
    /// Circumference 2πR for circle spaces.
    double circumference = 0.0;

    std::shared_ptr<const DiscreteSpace> factor_a, factor_b;

    int size() const { return static_cast<int>(measure.size()); }
    double d(int x, int y) const { return metric(x, y); }
    double diameter() const { return metric.maxCoeff(); }

    /// Row-major pairing for products: site = ia * nB + ib.
    int pair_index(int ia, int ib) const { return ia * factor_b->size() + ib; }
    int factor_a_index(int s) const { return s / factor_b->size(); }
    int factor_b_index(int s) const { return s % factor_b->size(); }
};

/// Probability measure given by its density ρ relative to the reference
/// measure: mass at x is ρ(x)·m(x).
struct ProbMeasure {
    Vec density;

    Vec masses(const DiscreteSpace& space) const {
        return density.cwiseProduct(space.measure);
    }
};

inline ProbMeasure make_prob_measure(const DiscreteSpace& space, Vec density) {
    if (density.size() != space.measure.size())
        throw input_error("make_prob_measure: density size mismatch");
    if ((density.array() < 0).any())
        throw input_error("make_prob_measure: negative density entry");
    const double total = density.cwiseProduct(space.measure).sum();
    if (std::abs(total - 1.0) > 1e-12)
        throw input_error("make_prob_measure: total mass " + std::to_string(total) + " != 1");
    return ProbMeasure{std::move(density)};
}

/// Normalizes a nonnegative vector of site masses into a ProbMeasure.
inline ProbMeasure measure_from_masses(const DiscreteSpace& space, const Vec& masses) {
    if ((masses.array() < 0).any()) throw input_error("measure_from_masses: negative mass");
    const double total = masses.sum();
    if (total <= 0) throw input_error("measure_from_masses: zero total mass");
    return ProbMeasure{(masses / total).cwiseQuotient(space.measure)};
}

struct CurvatureField {
    Vec values;
    double lower_bound = 0.0;
};

inline CurvatureField make_curvature_field(Vec values) {
    CurvatureField f;
    f.lower_bound = values.minCoeff();
    f.values = std::move(values);
    return f;
}

inline CurvatureField constant_curvature(int n, double K) {
    return CurvatureField{Vec::Constant(n, K), K};
}

// ---------------------------------------------------------------------------
// Builders

namespace detail {

inline void finalize_mesh(DiscreteSpace& s) {
    double mn = std::numeric_limits<double>::infinity();
    const int n = s.size();
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (s.edge_weights(i, j) > 0.0) mn = std::min(mn, s.metric(i, j));
    s.mesh = std::isfinite(mn) ? mn : 0.0;
}

} // namespace detail

/// Uniform grid on [-L, L] with reference measure ∝ e^{-V} and
/// midpoint-weighted finite-difference Dirichlet form. The resulting
/// generator converges to u'' - V'u' (the weighted Laplacian of e^{-V}dx),
/// so the model curvature is V''.
inline DiscreteSpace build_interval_space(int n, double half_width,
                                          const std::function<double(double)>& potential) {
    if (n < 3) throw input_error("build_interval_space: n must be >= 3");
    if (!(half_width > 0)) throw input_error("build_interval_space: L must be > 0");

    DiscreteSpace s;
    s.kind = SpaceKind::interval;
    const double h = 2.0 * half_width / (n - 1);
    s.coords.resize(n);
    s.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        s.coords[i] = -half_width + i * h;
        s.labels[i] = "x" + std::to_string(i);
    }

    Vec ew(n);
    for (int i = 0; i < n; ++i) ew[i] = std::exp(-potential(s.coords[i]));
    const double Z = ew.sum();
    s.measure = ew / Z;

    s.edge_weights = Mat::Zero(n, n);
    for (int i = 0; i + 1 < n; ++i) {
        const double mid = 0.5 * (s.coords[i] + s.coords[i + 1]);
        const double w = std::exp(-potential(mid)) / (h * h * Z);
        s.edge_weights(i, i + 1) = s.edge_weights(i + 1, i) = w;
    }

    s.metric.resize(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) s.metric(i, j) = std::abs(s.coords[i] - s.coords[j]);
    s.mesh = h;
    return s;
}

/// n equispaced sites on a circle of radius R; arc-length metric, periodic
/// midpoint-weighted Dirichlet form. The potential is a function of the
/// angle θ ∈ [0, 2π).
inline DiscreteSpace build_circle_space(int n, double radius,
                                        const std::function<double(double)>& potential) {
    if (n < 3) throw input_error("build_circle_space: n must be >= 3");
    if (!(radius > 0)) throw input_error("build_circle_space: R must be > 0");

    DiscreteSpace s;
    s.kind = SpaceKind::circle;
    const double circ = 2.0 * std::numbers::pi * radius;
    const double h = circ / n;
    s.circumference = circ;
    s.coords.resize(n);
    s.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        s.coords[i] = i * h;
        s.labels[i] = "theta" + std::to_string(i);
    }

    Vec ew(n);
    for (int i = 0; i < n; ++i) ew[i] = std::exp(-potential(s.coords[i] / radius));
    const double Z = ew.sum();
    s.measure = ew / Z;

    s.edge_weights = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        const int j = (i + 1) % n;
        const double mid_angle = (s.coords[i] + 0.5 * h) / radius;
        const double w = std::exp(-potential(mid_angle)) / (h * h * Z);
        s.edge_weights(i, j) = s.edge_weights(j, i) = w;
    }

    s.metric.resize(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double along = std::abs(s.coords[i] - s.coords[j]);
            s.metric(i, j) = std::min(along, circ - along);
        }
    s.mesh = h;
    return s;
}

/// Cartesian product: metric √(d_A² + d_B²), measure m_A ⊗ m_B, Laplacian the
/// Kronecker sum (edges only within one factor at a time). Site (ia, ib) maps
/// to index ia * nB + ib.
inline DiscreteSpace product_space(const DiscreteSpace& a, const DiscreteSpace& b) {
    DiscreteSpace s;
    s.kind = SpaceKind::product;
    s.factor_a = std::make_shared<DiscreteSpace>(a);
    s.factor_b = std::make_shared<DiscreteSpace>(b);
    const int na = a.size(), nb = b.size(), n = na * nb;

    s.labels.resize(n);
    s.measure.resize(n);
    for (int ia = 0; ia < na; ++ia)
        for (int ib = 0; ib < nb; ++ib) {
            const int idx = ia * nb + ib;
            s.labels[idx] = "(" + a.labels[ia] + "," + b.labels[ib] + ")";
            s.measure[idx] = a.measure[ia] * b.measure[ib];
        }

    s.metric.resize(n, n);
    for (int ia = 0; ia < na; ++ia)
        for (int ib = 0; ib < nb; ++ib)
            for (int ja = 0; ja < na; ++ja)
                for (int jb = 0; jb < nb; ++jb)
                    s.metric(ia * nb + ib, ja * nb + jb) =
                        std::hypot(a.metric(ia, ja), b.metric(ib, jb));

    // Kronecker sum: w((ia,ib),(ja,ib)) = w_A(ia,ja)·m_B(ib) and symmetrically,
    // so (1/m) w reproduces the factor generator on each slice.
    s.edge_weights = Mat::Zero(n, n);
    for (int ib = 0; ib < nb; ++ib)
        for (int ia = 0; ia < na; ++ia)
            for (int ja = 0; ja < na; ++ja)
                if (ia != ja && a.edge_weights(ia, ja) > 0)
                    s.edge_weights(ia * nb + ib, ja * nb + ib) =
                        a.edge_weights(ia, ja) * b.measure[ib];
    for (int ia = 0; ia < na; ++ia)
        for (int ib = 0; ib < nb; ++ib)
            for (int jb = 0; jb < nb; ++jb)
                if (ib != jb && b.edge_weights(ib, jb) > 0)
                    s.edge_weights(ia * nb + ib, ia * nb + jb) =
                        b.edge_weights(ib, jb) * a.measure[ia];

    detail::finalize_mesh(s);
    return s;
}

struct GraphEdge {
    int i = 0, j = 0;
    double weight = 1.0;  // Dirichlet-form weight
    double length = 1.0;  // metric edge length
};

/// General weighted graph; the metric is the all-pairs shortest-path closure
/// of the edge lengths, which satisfies the triangle inequality by
/// construction. `site_masses` defaults to uniform and is normalized.
inline DiscreteSpace build_graph_space(int n, const std::vector<GraphEdge>& edges,
                                       Vec site_masses = Vec()) {
    if (n < 1) throw input_error("build_graph_space: n must be >= 1");
    DiscreteSpace s;
    s.kind = SpaceKind::graph;
    s.labels.resize(n);
    s.coords.assign(n, 0.0);
    for (int i = 0; i < n; ++i) s.labels[i] = "v" + std::to_string(i);

    if (site_masses.size() == 0) site_masses = Vec::Constant(n, 1.0);
    if (site_masses.size() != n) throw input_error("build_graph_space: measure size mismatch");
    if ((site_masses.array() <= 0).any())
        throw input_error("build_graph_space: measure must be strictly positive");
    s.measure = site_masses / site_masses.sum();

    s.edge_weights = Mat::Zero(n, n);
    constexpr double inf = std::numeric_limits<double>::infinity();
    Mat dist = Mat::Constant(n, n, inf);
    for (int i = 0; i < n; ++i) dist(i, i) = 0.0;
    for (const auto& e : edges) {
        if (e.i < 0 || e.i >= n || e.j < 0 || e.j >= n || e.i == e.j)
            throw input_error("build_graph_space: bad edge endpoints");
        if (e.weight < 0 || !(e.length > 0))
            throw input_error("build_graph_space: bad edge weight/length");
        s.edge_weights(e.i, e.j) = s.edge_weights(e.j, e.i) = e.weight;
        dist(e.i, e.j) = dist(e.j, e.i) = std::min(dist(e.i, e.j), e.length);
    }
    // Floyd-Warshall closure.
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                dist(i, j) = std::min(dist(i, j), dist(i, k) + dist(k, j));
    if (!dist.allFinite()) throw input_error("build_graph_space: graph is disconnected");
    s.metric = dist;
    detail::finalize_mesh(s);
    return s;
}

// ---------------------------------------------------------------------------
// Operators

/// Full matrix of (Δu)(x) = (1/m(x)) Σ_y w(x,y)(u(y)-u(x)).
inline Mat laplacian(const DiscreteSpace& space) {
    const int n = space.size();
    Mat L = space.edge_weights.array().colwise() / space.measure.array();
    for (int i = 0; i < n; ++i) {
        L(i, i) = 0.0;
        L(i, i) = -L.row(i).sum();
    }
    return L;
}

/// Carré du champ Γ(u,v)(x) = (1/2m(x)) Σ_y w(x,y)(u(y)-u(x))(v(y)-v(x)).
inline Vec gamma(const DiscreteSpace& space, const Vec& u, const Vec& v) {
    const int n = space.size();
    if (u.size() != n || v.size() != n) throw input_error("gamma: size mismatch");
    Vec out(n);
    for (int x = 0; x < n; ++x) {
        double acc = 0.0;
        for (int y = 0; y < n; ++y) {
            const double w = space.edge_weights(x, y);
            if (w > 0) acc += w * (u[y] - u[x]) * (v[y] - v[x]);
        }
        out[x] = 0.5 * acc / space.measure[x];
    }
    return out;
}

inline Vec gamma(const DiscreteSpace& space, const Vec& u) { return gamma(space, u, u); }

/// Boltzmann entropy Ent(μ) = Σ ρ log ρ · m with 0·log 0 = 0; densities below
/// 1e-300 are treated as zero before the logarithm.
inline double entropy(const DiscreteSpace& space, const ProbMeasure& mu) {
    double acc = 0.0;
    for (int x = 0; x < space.size(); ++x) {
        const double rho = mu.density[x];
        if (rho > 1e-300) acc += rho * std::log(rho) * space.measure[x];
    }
    return acc;
}

/// m-weighted inner product Σ u v m.
inline double inner_m(const DiscreteSpace& space, const Vec& u, const Vec& v) {
    return u.cwiseProduct(v).cwiseProduct(space.measure).sum();
}

} // namespace ricci
