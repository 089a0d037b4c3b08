#include "riccilab/coupling.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace ricci;

namespace {

double quadratic(double x) { return 0.5 * x * x; }

/// chi-square 99% quantile by the Wilson-Hilferty cube-root approximation,
/// accurate to ~1% for the degrees of freedom used here.
double chi2_q99(int df) {
    const double z = 2.3263478740408408;  // Phi^{-1}(0.99)
    const double a = 2.0 / (9.0 * df);
    const double c = 1.0 - a + z * std::sqrt(a);
    return df * c * c * c;
}

} // namespace

TEST_CASE("uniformized kernel matches the spectral kernel", "[coupling]") {
    const auto s = build_interval_space(31, 3.0, quadratic);
    const SpectralCache heat(s);
    for (double t : {0.0, 0.01, 0.2}) {
        const Mat a = markov_kernel_uniformized(s, t);
        const Mat b = markov_kernel(heat, t);
        REQUIRE((a - b).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE(a.minCoeff() >= 0.0);  // the point of the uniformized route
        for (int x = 0; x < 31; ++x) REQUIRE(a.row(x).sum() == Catch::Approx(1.0).margin(1e-13));
    }
}

TEST_CASE("build_qstar: diagonal pairs move identically", "[coupling]") {
    const auto s = build_interval_space(21, 3.0, quadratic);
    const auto qk = build_qstar(s, 1.0, 1.0 / 64);
    for (int x = 0; x < 21; ++x) {
        const auto& row = qk.rows[qk.pair_index(x, x)];
        double total = 0.0;
        for (const auto& e : row) {
            REQUIRE(qk.first_of(e.pair) == qk.second_of(e.pair));
            total += e.mass;
        }
        REQUIRE(total == Catch::Approx(1.0).margin(1e-12));
        REQUIRE(qk.slack[qk.pair_index(x, x)] == Catch::Approx(std::exp(-qk.delta)));
    }
}

TEST_CASE("build_qstar: marginals and support bound on every pair", "[coupling]") {
    const auto s = build_interval_space(15, 3.0, quadratic);
    const double delta = 1.0 / 64;
    const auto qk = build_qstar(s, 1.0, delta);
    for (int x = 0; x < 15; ++x)
        for (int y = 0; y < 15; ++y) {
            const int pr = qk.pair_index(x, y);
            Vec first = Vec::Zero(15), second = Vec::Zero(15);
            const double bound = qk.slack[pr] * s.metric(x, y);
            for (const auto& e : qk.rows[pr]) {
                const int xn = qk.first_of(e.pair), yn = qk.second_of(e.pair);
                first[xn] += e.mass;
                second[yn] += e.mass;
                REQUIRE(s.metric(xn, yn) <= bound + 1e-12 * (1 + bound));
            }
            REQUIRE((first.transpose() - qk.p_delta.row(x)).cwiseAbs().maxCoeff() < 1e-10);
            REQUIRE((second.transpose() - qk.p_delta.row(y)).cwiseAbs().maxCoeff() < 1e-10);
        }
}

TEST_CASE("build_qstar on a 2-site space is threshold-minimal (exhaustive oracle)",
          "[coupling]") {
    const auto s = build_graph_space(2, {{0, 1, 1.0, 1.0}});
    const double delta = 0.05;
    const auto qk = build_qstar(s, 0.5, delta, {1e-4, 1.0});
    // Oracle: couplings of the two rows form a one-parameter family; the
    // minimal feasible sup-displacement threshold is found by scanning it.
    const Vec a = qk.p_delta.row(0), b = qk.p_delta.row(1);
    const double lo = std::max(0.0, a[0] + b[0] - 1.0), hi = std::min(a[0], b[0]);
    double best = 1e9;
    for (int i = 0; i <= 200000; ++i) {
        const double z = lo + (hi - lo) * i / 200000.0;
        // q = [[z, a0-z], [b0-z, 1-a0-b0+z]]; threshold = max distance carried
        double thresh = 0.0;
        if (a[0] - z > 1e-15) thresh = std::max(thresh, s.metric(0, 1));
        if (b[0] - z > 1e-15) thresh = std::max(thresh, s.metric(1, 0));
        best = std::min(best, thresh);
    }
    const double got = qk.slack[qk.pair_index(0, 1)] * s.metric(0, 1);
    // minimal threshold within one epsilon step of the oracle
    REQUIRE(got >= best - 1e-12);
    REQUIRE(got <= best * (1 + 2e-4) + 1e-12);
}

TEST_CASE("compose_kernel: one step identity, marginal property, support propagation",
          "[coupling]") {
    const auto s = build_interval_space(11, 3.0, quadratic);
    const double delta = 1.0 / 32;
    const auto qk = build_qstar(s, 1.0, delta);
    const int N = qk.pair_count();

    const Mat one = compose_kernel(qk, 1);
    Mat direct = Mat::Zero(N, N);
    for (int pr = 0; pr < N; ++pr)
        for (const auto& e : qk.rows[pr]) direct(pr, e.pair) += e.mass;
    REQUIRE((one - direct).cwiseAbs().maxCoeff() == 0.0);

    const int steps = 16;
    const Mat composed = compose_kernel(qk, steps);
    const Mat expected = markov_kernel_uniformized(s, steps * delta);
    for (int x = 0; x < 11; ++x)
        for (int y = 0; y < 11; ++y) {
            const int pr = qk.pair_index(x, y);
            Vec first = Vec::Zero(11), second = Vec::Zero(11);
            for (int q = 0; q < N; ++q) {
                first[qk.first_of(q)] += composed(pr, q);
                second[qk.second_of(q)] += composed(pr, q);
            }
            REQUIRE((first.transpose() - expected.row(x)).cwiseAbs().maxCoeff() < 1e-10);
            REQUIRE((second.transpose() - expected.row(y)).cwiseAbs().maxCoeff() < 1e-10);
        }

    // support propagation oracle: reachable pairs after `steps` steps stay
    // within the product of per-step slacks times the initial distance
    const double lam_max = qk.slack.maxCoeff();
    for (int x = 0; x < 11; ++x)
        for (int y = 0; y < 11; ++y) {
            const int pr = qk.pair_index(x, y);
            const double bound =
                std::pow(lam_max, steps) * s.metric(x, y) + 1e-9;
            for (int q = 0; q < N; ++q)
                if (composed(pr, q) > 1e-12)
                    REQUIRE(s.metric(qk.first_of(q), qk.second_of(q)) <= bound);
        }

    REQUIRE_THROWS_AS(compose_kernel(qk, 4, 16), input_error);
}

TEST_CASE("sampling: diagonal start stays coalesced forever", "[coupling]") {
    const auto s = build_interval_space(11, 3.0, quadratic);
    const auto qk = build_qstar(s, 1.0, 1.0 / 32);
    Mat alpha = Mat::Zero(11, 11);
    for (int x = 0; x < 11; ++x) alpha(x, x) = s.measure[x];
    const auto paths = sample_coupled_paths(qk, alpha, 0.5, 200, 7);
    for (const auto& tr : paths)
        for (int i = 0; i <= tr.steps(); ++i) REQUIRE(tr.first[i] == tr.second[i]);
}

TEST_CASE("sampling: seed determinism and horizon validation", "[coupling]") {
    const auto s = build_interval_space(9, 2.0, quadratic);
    const auto qk = build_qstar(s, 1.0, 1.0 / 16);
    Mat alpha = Mat::Zero(9, 9);
    alpha(1, 7) = 1.0;
    const auto a = sample_coupled_paths(qk, alpha, 0.5, 50, 11);
    const auto b = sample_coupled_paths(qk, alpha, 0.5, 50, 11);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].first == b[i].first);
        REQUIRE(a[i].second == b[i].second);
    }
    REQUIRE_THROWS_AS(sample_coupled_paths(qk, alpha, 0.3, 10, 1), input_error);
}

TEST_CASE("sampling: empirical marginal matches the kernel row", "[coupling][slow]") {
    const auto s = build_interval_space(9, 2.0, quadratic);
    const double delta = 1.0 / 16;
    const auto qk = build_qstar(s, 1.0, delta);
    Mat alpha = Mat::Zero(9, 9);
    alpha(2, 6) = 1.0;
    const int n_paths = 20000;
    const double horizon = 0.5;  // 4 steps
    const auto paths = sample_coupled_paths(qk, alpha, horizon, n_paths, 21);

    // empirical law of the first coordinate at the final time vs the exact row
    Vec empirical = Vec::Zero(9);
    for (const auto& tr : paths) empirical[tr.first.back()] += 1.0 / n_paths;
    const Mat pt = markov_kernel_uniformized(s, horizon / 2.0);
    double tv = 0.5 * (empirical.transpose() - pt.row(2)).cwiseAbs().sum();
    REQUIRE(tv <= 3.0 * std::sqrt(9.0 / n_paths));
}

TEST_CASE("sampling: one-step joint matches the q* table (chi-square 1%)",
          "[coupling][slow]") {
    const auto s = build_interval_space(5, 2.0, quadratic);
    const auto qk = build_qstar(s, 1.0, 1.0 / 8);
    Mat alpha = Mat::Zero(5, 5);
    alpha(0, 4) = 1.0;
    const int n_paths = 100000;
    const auto paths = sample_coupled_paths(qk, alpha, 2.0 / 8, n_paths, 5);

    const auto& row = qk.rows[qk.pair_index(0, 4)];
    std::vector<long> counts(row.size(), 0);
    for (const auto& tr : paths) {
        const int pair = qk.pair_index(tr.first[1], tr.second[1]);
        for (std::size_t i = 0; i < row.size(); ++i)
            if (row[i].pair == pair) {
                ++counts[i];
                break;
            }
    }
    double stat = 0.0;
    int df = 0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        const double expect = row[i].mass * n_paths;
        if (expect < 5.0) continue;  // standard cell-merging rule
        stat += (counts[i] - expect) * (counts[i] - expect) / expect;
        ++df;
    }
    REQUIRE(df >= 3);
    REQUIRE(stat <= chi2_q99(df - 1));
}

TEST_CASE("pathwise contraction: no violations at the kernel rate, sharp at K+1",
          "[coupling][slow]") {
    const auto s = build_interval_space(21, 3.0, quadratic);
    const double K = 1.0;
    const auto qk = build_qstar(s, K, 1.0 / 32);
    Mat alpha = Mat::Zero(21, 21);
    alpha(2, 18) = 0.6;
    alpha(5, 9) = 0.4;
    const auto paths = sample_coupled_paths(qk, alpha, 1.0, 400, 3);

    const auto stats = pathwise_contraction_stats(qk, paths, K);
    REQUIRE(stats.pass);
    REQUIRE(stats.parameters["violations"].get<long>() == 0);
    REQUIRE(stats.parameters["coalescence_breaks"].get<long>() == 0);

    const auto probe = pathwise_contraction_stats(qk, paths, K + 1.0);
    REQUIRE(probe.parameters["violations"].get<long>() > 0);
}

TEST_CASE("finite-dimensional distributions: consistency and projections",
          "[coupling]") {
    const auto s = build_interval_space(5, 2.0, quadratic);
    const double delta = 1.0 / 8;
    const auto qk = build_qstar(s, 1.0, delta);
    Mat alpha = Mat::Zero(5, 5);
    alpha(0, 3) = 0.5;
    alpha(2, 2) = 0.5;

    // J = {t1}: equals alpha integrated against the composed kernel
    const auto single = finite_dim_distribution(qk, alpha, {2 * delta});
    const Mat k1 = compose_kernel(qk, 1);
    for (int p = 0; p < qk.pair_count(); ++p) {
        double expect = 0.0;
        for (int x = 0; x < 5; ++x)
            for (int y = 0; y < 5; ++y)
                expect += alpha(x, y) * k1(qk.pair_index(x, y), p);
        REQUIRE(single.table[p] == Catch::Approx(expect).margin(1e-14));
    }

    // consistency under marginalization: J = {t1, t2} -> {t1} and -> {t2}
    const auto joint = finite_dim_distribution(qk, alpha, {2 * delta, 6 * delta});
    const auto keep_first = joint.marginalize(1);
    for (int p = 0; p < qk.pair_count(); ++p)
        REQUIRE(keep_first.table[p] == Catch::Approx(single.table[p]).margin(1e-12));
    const auto at_t2 = finite_dim_distribution(qk, alpha, {6 * delta});
    const auto keep_second = joint.marginalize(0);
    for (int p = 0; p < qk.pair_count(); ++p)
        REQUIRE(keep_second.table[p] == Catch::Approx(at_t2.table[p]).margin(1e-12));

    // coordinate projection equals the single-chain law
    const Mat pt = markov_kernel_uniformized(s, delta);
    Vec first_coord = Vec::Zero(5);
    for (int p = 0; p < qk.pair_count(); ++p) first_coord[qk.first_of(p)] += single.table[p];
    Vec expect_first = Vec::Zero(5);
    for (int x = 0; x < 5; ++x)
        for (int y = 0; y < 5; ++y)
            if (alpha(x, y) > 0) expect_first += alpha(x, y) * pt.row(x).transpose();
    REQUIRE((first_coord - expect_first).cwiseAbs().maxCoeff() < 1e-12);

    REQUIRE_THROWS_AS(finite_dim_distribution(qk, alpha, {delta}), input_error);
    REQUIRE_THROWS_AS(finite_dim_distribution(qk, alpha, {2 * delta, 2 * delta}), input_error);
}

TEST_CASE("slack refinement: halving delta does not worsen the slack budget",
          "[coupling][slow]") {
    const auto s = build_interval_space(21, 4.0, quadratic);
    double prev = 1e9;
    for (double delta : {1.0 / 32, 1.0 / 64, 1.0 / 128, 1.0 / 256}) {
        const auto qk = build_qstar(s, 1.0, delta);
        double worst = 0.0;
        for (int pr = 0; pr < qk.pair_count(); ++pr)
            worst = std::max(worst, qk.slack[pr] * std::exp(qk.rate_K * delta));
        REQUIRE(worst <= prev * (1 + 1e-9));
        prev = worst;
    }
}
