#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "otna/csv_io.hpp"
#include "otna/discrete_ot.hpp"
#include "otna/generators.hpp"
#include "otna/serialize.hpp"

using namespace otna;

namespace {

MatrixXd random_points(Eigen::Index n, Eigen::Index d, Rng& rng)
{
    MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    return x;
}

MatrixXd random_costs(Eigen::Index n, Eigen::Index m, Rng& rng)
{
    MatrixXd c(n, m);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = rng.uniform();
    return c;
}

// Minimum over permutation matchings, divided by n.
double brute_force_assignment(const MatrixXd& c)
{
    std::vector<int> perm(c.rows());
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double total = 0;
        for (Eigen::Index i = 0; i < c.rows(); ++i) total += c(i, perm[i]);
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best / double(c.rows());
}

// Enumerates every basis of n + m - 1 cells, keeps the feasible basic
// solutions, and returns the cheapest. Tiny instances only.
double vertex_enumeration(const MatrixXd& c)
{
    const Eigen::Index n = c.rows(), m = c.cols(), cells = n * m, k = n + m - 1;
    VectorXd rhs(n + m);
    rhs << VectorXd::Constant(n, 1.0 / n), VectorXd::Constant(m, 1.0 / m);
    std::vector<bool> pick(cells, false);
    std::fill(pick.begin(), pick.begin() + k, true);
    double best = std::numeric_limits<double>::infinity();
    do {
        std::vector<Eigen::Index> chosen;
        for (Eigen::Index t = 0; t < cells; ++t)
            if (pick[t]) chosen.push_back(t);
        MatrixXd a = MatrixXd::Zero(n + m, k);
        for (Eigen::Index s = 0; s < k; ++s) {
            a(chosen[s] / m, s) = 1.0;
            a(n + chosen[s] % m, s) = 1.0;
        }
        const Eigen::FullPivLU<MatrixXd> lu(a);
        if (lu.rank() < k) continue;
        const VectorXd x = lu.solve(rhs);
        if ((a * x - rhs).norm() > 1e-10 || x.minCoeff() < -1e-12) continue;
        double total = 0;
        for (Eigen::Index s = 0; s < k; ++s) total += x(s) * c(chosen[s] / m, chosen[s] % m);
        best = std::min(best, total);
    } while (std::prev_permutation(pick.begin(), pick.end()));
    return best;
}

// Equality-constrained Newton on <P, C> + eps sum P log P with uniform marginals.
MatrixXd entropic_newton(const MatrixXd& c, double eps)
{
    const Eigen::Index n = c.rows(), m = c.cols(), v = n * m;
    // Marginal constraints; the last column constraint is implied by the others.
    const Eigen::Index rows = n + m - 1;
    MatrixXd a = MatrixXd::Zero(rows, v);
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index i = 0; i < n; ++i) {
            a(i, j * n + i) = 1.0;
            if (j < m - 1) a(n + j, j * n + i) = 1.0;
        }
    VectorXd p = VectorXd::Constant(v, 1.0 / double(v));
    const VectorXd cv = Eigen::Map<const VectorXd>(c.data(), v);
    auto objective = [&](const VectorXd& q) { return cv.dot(q) + eps * (q.array() * q.array().log()).sum(); };
    for (int it = 0; it < 100; ++it) {
        const VectorXd grad = cv + eps * (p.array().log() + 1.0).matrix();
        MatrixXd kkt = MatrixXd::Zero(v + rows, v + rows);
        kkt.topLeftCorner(v, v) = (eps * p.cwiseInverse()).asDiagonal();
        kkt.topRightCorner(v, rows) = a.transpose();
        kkt.bottomLeftCorner(rows, v) = a;
        VectorXd rhs = VectorXd::Zero(v + rows);
        rhs.head(v) = -grad;
        const VectorXd step = kkt.fullPivLu().solve(rhs).head(v);
        if (step.norm() < 1e-15) break;
        double t = 1.0;
        while ((p + t * step).minCoeff() <= 0.0) t *= 0.5;
        const double f0 = objective(p);
        while (objective(p + t * step) > f0 + 1e-4 * t * grad.dot(step) && t > 1e-20) t *= 0.5;
        p += t * step;
    }
    return Eigen::Map<const MatrixXd>(p.data(), n, m);
}

} // namespace

TEST_CASE("cost_matrix: examples")
{
    MatrixXd x(1, 2), y(1, 2);
    x << 0, 0;
    y << 1, 1;
    CHECK(cost_matrix<double>(x, y, MatrixXd::Identity(2, 2)).entries(0, 0) == 2.0);

    Rng rng(1);
    const MatrixXd z = random_points(5, 3, rng);
    const auto self = squared_euclidean_cost(z, z);
    CHECK(self.entries.diagonal().isZero(0.0));
    CHECK(self.c_min == 0.0);
    CHECK(self.c_max == self.entries.maxCoeff());
}

TEST_CASE("cost_matrix: matches a triple loop")
{
    Rng rng(2);
    const MatrixXd x = random_points(7, 4, rng), y = random_points(9, 4, rng);
    const MatrixXd l = random_points(4, 4, rng);
    const MatrixXd metric = l * l.transpose();
    const auto c = cost_matrix(x, y, metric);
    for (Eigen::Index i = 0; i < 7; ++i)
        for (Eigen::Index j = 0; j < 9; ++j) {
            double v = 0;
            for (Eigen::Index a = 0; a < 4; ++a)
                for (Eigen::Index b = 0; b < 4; ++b) v += (x(i, a) - y(j, a)) * metric(a, b) * (x(i, b) - y(j, b));
            CHECK(std::abs(c.entries(i, j) - v) < 1e-12 * std::max(1.0, v));
        }
}

TEST_CASE("cost_matrix: validates the metric")
{
    const MatrixXd x = MatrixXd::Zero(2, 2);
    MatrixXd bad(2, 2);
    bad << 1, 0, 0, -1;
    CHECK_THROWS_AS(cost_matrix<double>(x, x, bad), DomainError);
    bad << 1, 1, 0, 1;
    CHECK_THROWS_AS(cost_matrix<double>(x, x, bad), DomainError);
    CHECK_THROWS_AS(cost_matrix<double>(x, MatrixXd::Zero(2, 3), MatrixXd::Identity(2, 2)), DimensionError);
}

TEST_CASE("exact OT: trivial instances")
{
    const auto one = solve_exact_ot(CostMatrix<double>::from_entries(MatrixXd::Constant(1, 1, 3.5)));
    CHECK(one.coupling.plan(0, 0) == 1.0);
    CHECK(one.value == 3.5);

    MatrixXd pts(2, 1);
    pts << 0, 1;
    const auto line = solve_exact_ot(squared_euclidean_cost(pts, pts));
    CHECK(line.value == 0.0);
    CHECK(line.coupling.plan(0, 0) == 0.5);
    CHECK(line.converged);
}

TEST_CASE("exact OT: brute-force permutation oracle for n = m <= 6")
{
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
        const Eigen::Index n = 1 + t % 6;
        const auto c = CostMatrix<double>::from_entries(random_costs(n, n, rng));
        const auto sol = solve_exact_ot(c);
        CHECK(sol.converged);
        CHECK(std::abs(sol.value - brute_force_assignment(c.entries)) < 1e-9);
        CHECK(sol.coupling.marginal_violation() < 1e-12);
    }
}

TEST_CASE("exact OT: vertex enumeration oracle for n != m")
{
    Rng rng(4);
    for (int t = 0; t < 40; ++t) {
        const Eigen::Index n = 1 + t % 3, m = 1 + (t / 3) % 4;
        const auto c = CostMatrix<double>::from_entries(random_costs(n, m, rng));
        const auto sol = solve_exact_ot(c);
        CHECK(sol.converged);
        CHECK(std::abs(sol.value - vertex_enumeration(c.entries)) < 1e-9);
        CHECK(sol.coupling.marginal_violation() < 1e-12);
        CHECK(sol.coupling.plan.minCoeff() >= 0.0);
    }
}

TEST_CASE("exact OT: degenerate and tied costs")
{
    const auto flat = solve_exact_ot(CostMatrix<double>::from_entries(MatrixXd::Constant(30, 30, 2.0)));
    CHECK(flat.converged);
    CHECK(flat.value == doctest::Approx(2.0));
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        MatrixXd c(12, 12);
        for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = double(rng.index(3));
        const auto sol = solve_exact_ot(CostMatrix<double>::from_entries(c));
        CHECK(sol.converged);
        CHECK(sol.coupling.marginal_violation() < 1e-12);
        // Sinkhorn plans are feasible, so they cannot beat the exact value.
        const auto sk = sinkhorn(CostMatrix<double>::from_entries(c), 0.05);
        CHECK(sol.value <= sk.transport_cost + 1e-9);
    }
}

TEST_CASE("exact OT: larger instance is optimal against its own dual certificate")
{
    // Every Sinkhorn plan gives an upper bound; a feasible dual gives a lower one.
    Rng rng(6);
    const MatrixXd x = random_points(150, 3, rng), y = random_points(120, 3, rng);
    const auto c = squared_euclidean_cost(x, y);
    const auto sol = solve_exact_ot(c);
    CHECK(sol.converged);
    CHECK(sol.coupling.marginal_violation() < 1e-12);
    const auto sk = sinkhorn(c, 0.01);
    CHECK(sol.value <= sk.transport_cost + 1e-12);
    CHECK(sk.transport_cost - sol.value < 0.01 * std::log(150.0 * 120.0));
}

TEST_CASE("sinkhorn: trivial and large-eps limits")
{
    const auto one = sinkhorn(CostMatrix<double>::from_entries(MatrixXd::Constant(1, 1, 2.0)), 0.5);
    CHECK(one.coupling.plan(0, 0) == doctest::Approx(1.0));
    CHECK(one.value == doctest::Approx(2.0));
    CHECK(one.entropy == doctest::Approx(0.0));

    Rng rng(7);
    // Deviation from uniform is about |C_ij - mean C| / (eps nm) <= 1e-4 / nm.
    const auto c = CostMatrix<double>::from_entries(random_costs(10, 12, rng));
    const auto wide = sinkhorn(c, 1e4 * c.c_max);
    CHECK((wide.coupling.plan.array() - 1.0 / 120.0).abs().maxCoeff() < 1e-6);
}

TEST_CASE("sinkhorn: marginals, positivity and monotone dual")
{
    Rng rng(8);
    for (int t = 0; t < 20; ++t) {
        const Eigen::Index n = 3 + t, m = 5 + 2 * t;
        const auto c = squared_euclidean_cost(random_points(n, 2, rng), random_points(m, 2, rng));
        SinkhornOptions opts;
        opts.record_dual = true;
        const double eps = 0.05 * c.c_max * (1 + t % 3);
        const auto sol = sinkhorn(c, eps, opts);
        REQUIRE(sol.converged);
        CHECK(sol.coupling.marginal_violation() < 1e-8);
        CHECK(sol.coupling.plan.minCoeff() > 0.0);
        for (std::size_t k = 1; k < sol.dual_trace.size(); ++k)
            CHECK(sol.dual_trace[k] >= sol.dual_trace[k - 1] - 1e-12 * std::abs(sol.dual_trace[k]));
        CHECK(sol.value == doctest::Approx(sol.transport_cost + eps * sol.entropy));
    }
}

TEST_CASE("sinkhorn: small eps stays finite in the log domain")
{
    Rng rng(9);
    const auto c = squared_euclidean_cost(random_points(30, 2, rng), random_points(30, 2, rng));
    const auto sol = sinkhorn(c, 1e-3 * c.c_max);
    CHECK(sol.converged);
    CHECK(std::isfinite(sol.value));
    CHECK(sol.coupling.marginal_violation() < 1e-8);
    const double exact = solve_exact_ot(c).value;
    CHECK(sol.transport_cost >= exact - 1e-12);
    CHECK(sol.transport_cost - exact < 1e-3 * c.c_max * std::log(900.0));
}

TEST_CASE("sinkhorn: n = m = 4 agrees with a dense Newton solve of the primal")
{
    Rng rng(10);
    for (int t = 0; t < 10; ++t) {
        const auto c = CostMatrix<double>::from_entries(random_costs(4, 4, rng));
        const double eps = 0.05 + 0.1 * t;
        const auto sol = sinkhorn(c, eps);
        const MatrixXd oracle = entropic_newton(c.entries, eps);
        CHECK((sol.coupling.plan - oracle).cwiseAbs().maxCoeff() < 1e-7);
        const double oracle_value = oracle.cwiseProduct(c.entries).sum() + eps * (oracle.array() * oracle.array().log()).sum();
        CHECK(sol.value == doctest::Approx(oracle_value).epsilon(1e-9));
        // Bounds against the exact value: the exact plan (a permutation / 4) is feasible.
        const double exact = solve_exact_ot(c).value;
        CHECK(sol.transport_cost >= exact - 1e-12);
        CHECK(sol.value <= exact - eps * std::log(4.0) + 1e-12);
        CHECK(sol.value >= exact + eps * sol.entropy - 1e-12);
    }
}

TEST_CASE("sinkhorn: iteration cap reports non-convergence")
{
    Rng rng(11);
    const auto c = squared_euclidean_cost(random_points(20, 2, rng), random_points(20, 2, rng));
    SinkhornOptions opts;
    opts.max_iter = 2;
    opts.tol = 1e-15;
    const auto sol = sinkhorn(c, 0.01, opts);
    CHECK_FALSE(sol.converged);
    CHECK(sol.iterations == 2);
    CHECK(std::isfinite(sol.value));
    CHECK_THROWS_AS(sinkhorn(c, 0.0), DomainError);
}

TEST_CASE("mutual_information_value adds eps log(nm)")
{
    Rng rng(12);
    const auto c = CostMatrix<double>::from_entries(random_costs(3, 5, rng));
    const auto sol = sinkhorn(c, 0.3);
    CHECK(mutual_information_value(sol, 0.3) == doctest::Approx(sol.value + 0.3 * std::log(15.0)));
    // Large eps: the plan is the product, so the KL term vanishes.
    const auto wide = sinkhorn(c, 1e6);
    CHECK(mutual_information_value(wide, 1e6) == doctest::Approx(c.entries.mean()).epsilon(1e-5));
}

TEST_CASE("coupling_kl")
{
    Coupling<double> p{(MatrixXd(2, 2) << 0.5, 0, 0, 0.5).finished()};
    Coupling<double> q{(MatrixXd(2, 2) << 0.4, 0.1, 0.1, 0.4).finished()};
    CHECK(coupling_kl(p, q) == doctest::Approx(std::log(0.5 / 0.4)));
    CHECK(coupling_kl(p, q) == doctest::Approx(0.2231).epsilon(1e-3));
    CHECK(coupling_kl(q, q) == 0.0);
    CHECK_THROWS_AS(coupling_kl(q, p), DomainError);

    Rng rng(13);
    const auto sol = sinkhorn(CostMatrix<double>::from_entries(random_costs(4, 6, rng)), 0.2);
    const Coupling<double> uniform{MatrixXd::Constant(4, 6, 1.0 / 24.0)};
    CHECK(coupling_kl(uniform, sol.coupling) >= 0.0);
    CHECK(coupling_kl(sol.coupling, uniform) >= 0.0);
}

TEST_CASE("implicit_cost: p = q = 1 reproduces the cost")
{
    Rng rng(14);
    const MatrixXd x = random_points(4, 3, rng), y = random_points(5, 3, rng);
    const VectorXd one = VectorXd::Ones(3);
    const MatrixXd metric = MatrixXd::Identity(3, 3);
    const auto c = cost_matrix(x, y, metric);
    CHECK((implicit_cost(x, y, metric, one, one).entries - c.entries).norm() < 1e-12);
    CHECK((implicit_cost(x, y, metric, one, one, ImplicitCostForm::cross_term).entries - c.entries).norm() < 1e-12);
    CHECK(implicit_metric_gap(metric, one, one).isZero(0.0));
}

TEST_CASE("implicit_cost: equals the expectation over all masks")
{
    // d = 2: four masks per side, enumerated with their probabilities.
    Rng rng(15);
    const Eigen::Index d = 2;
    const MatrixXd x = random_points(3, d, rng), y = random_points(4, d, rng);
    const MatrixXd l = random_points(d, d, rng);
    const MatrixXd metric = l * l.transpose() + MatrixXd::Identity(d, d);
    VectorXd p(2), q(2);
    p << 0.3, 0.8;
    q << 0.6, 0.45;
    MatrixXd expected = MatrixXd::Zero(3, 4);
    for (int mx = 0; mx < 4; ++mx)
        for (int my = 0; my < 4; ++my) {
            double w = 1.0;
            VectorXd ox(d), oy(d);
            for (Eigen::Index k = 0; k < d; ++k) {
                ox(k) = (mx >> k) & 1;
                oy(k) = (my >> k) & 1;
                w *= (ox(k) ? p(k) : 1 - p(k)) * (oy(k) ? q(k) : 1 - q(k));
            }
            const MatrixXd xm = x * ox.asDiagonal(), ym = y * oy.asDiagonal();
            expected += w * cost_matrix(xm, ym, metric).entries;
        }
    const auto ic = implicit_cost(x, y, metric, p, q);
    CHECK((ic.entries - expected).cwiseAbs().maxCoeff() < 1e-12);

    // The cross-term form drops terms depending on i or j alone: same plans,
    // values shifted by the mean row term plus the mean column term.
    const auto cross = implicit_cost(x, y, metric, p, q, ImplicitCostForm::cross_term);
    const MatrixXd diff = ic.entries - cross.entries;
    const VectorXd row = diff.col(0) - VectorXd::Constant(3, diff(0, 0));
    const MatrixXd separable = diff - (row * Eigen::RowVectorXd::Ones(4)) - VectorXd::Ones(3) * diff.row(0);
    CHECK(separable.cwiseAbs().maxCoeff() < 1e-12);
    const double shift = diff.rowwise().mean().mean();
    CHECK(solve_exact_ot(ic).value == doctest::Approx(solve_exact_ot(cross).value + shift));
}

TEST_CASE("implicit_cost: p = q = 0 gives the zero cost")
{
    // Everything is imputed to 0, so every pair costs 0 in expectation.
    MatrixXd x(2, 1), y(2, 1);
    x << 1, 2;
    y << -1, 3;
    const VectorXd zero = VectorXd::Zero(1);
    CHECK(implicit_cost<double>(x, y, MatrixXd::Identity(1, 1), zero, zero).entries.isZero(0.0));
    // Cross-term form: (x - y)^2 + 2xy = x^2 + y^2.
    const auto cross = implicit_cost<double>(x, y, MatrixXd::Identity(1, 1), zero, zero, ImplicitCostForm::cross_term);
    CHECK(cross.entries(0, 0) == doctest::Approx(2.0));
    CHECK(cross.entries(1, 1) == doctest::Approx(13.0));
}

TEST_CASE("implicit_cost: Monte-Carlo masked costs converge to it")
{
    Rng rng(16);
    const MatrixXd x = random_points(5, 3, rng), y = random_points(5, 3, rng);
    const MatrixXd metric = MatrixXd::Identity(3, 3);
    const VectorXd p = VectorXd::Constant(3, 0.6), q = VectorXd::Constant(3, 0.8);
    const int reps = 4000;
    MatrixXd sum = MatrixXd::Zero(5, 5), sq = MatrixXd::Zero(5, 5);
    for (int r = 0; r < reps; ++r) {
        const auto dx = apply_mask_zero_impute(x, generate_mcar_mask<double>(5, 3, p, 2 * r), p);
        const auto dy = apply_mask_zero_impute(y, generate_mcar_mask<double>(5, 3, q, 2 * r + 1), q);
        const MatrixXd c = cost_matrix(dx.values(), dy.values(), metric).entries;
        sum += c;
        sq += c.cwiseAbs2();
    }
    const MatrixXd mean = sum / reps;
    const MatrixXd se = ((sq / reps - mean.cwiseAbs2()) / (reps - 1)).cwiseSqrt();
    const MatrixXd ic = implicit_cost(x, y, metric, p, q).entries;
    for (Eigen::Index i = 0; i < 5; ++i)
        for (Eigen::Index j = 0; j < 5; ++j) CHECK(std::abs(mean(i, j) - ic(i, j)) < 4.5 * se(i, j) + 1e-12);
}

TEST_CASE("sensitivity constants: examples")
{
    CHECK(sensitivity_constants(0.0, 1.0, 1.0).k_eps == doctest::Approx(std::exp(2.0)));
    CHECK(sensitivity_constants(0.0, 1.0, 1.0).k_eps == doctest::Approx(7.389).epsilon(1e-4));
    CHECK(sensitivity_constants(0.7, 0.7, 0.5).k_eps == doctest::Approx(std::exp(0.7 / 0.5)));
    CHECK(sensitivity_constants(0.0, 1.0, 1.0).k_eps_prime == doctest::Approx(std::exp(1.5)));
    const auto huge = sensitivity_constants(0.0, 1000.0, 1e-3);
    CHECK(std::isinf(huge.k_eps));
    CHECK(huge.log_k_eps == doctest::Approx(2e6));
    CHECK_THROWS_AS(sensitivity_constants(0.0, 1.0, 0.0), DomainError);
}

TEST_CASE("sensitivity bounds hold on random cost pairs")
{
    Rng rng(17);
    for (int t = 0; t < 100; ++t) {
        const Eigen::Index n = 3 + t % 8, m = 2 + t % 7;
        const MatrixXd x = random_points(n, 2, rng), y = random_points(m, 2, rng);
        const auto c1 = squared_euclidean_cost(x, y);
        const MatrixXd noise = 0.1 * random_points(n, 2, rng);
        const auto c2 = squared_euclidean_cost(MatrixXd(x + noise), y);
        const double eps = 0.5 + t % 5;
        const auto s1 = sinkhorn(c1, eps), s2 = sinkhorn(c2, eps);
        const auto k = sensitivity_constants(c1, c2, eps);
        const double gap = (c1.entries - c2.entries).norm() / std::sqrt(double(n * m));
        CHECK(std::abs(s1.value - s2.value) <= k.k_eps * gap);
        const double kl = coupling_kl(s1.coupling, s2.coupling);
        CHECK(kl <= k.k_eps / eps * gap + k.k_eps_prime * std::sqrt(gap / (eps * eps)));
    }
}

TEST_CASE("coupling edges keep the top quantile")
{
    Coupling<double> c{(MatrixXd(2, 2) << 0.4, 0.1, 0.1, 0.4).finished()};
    std::ostringstream out;
    write_coupling_edges(out, c, 0.75);
    const std::string s = out.str();
    CHECK(s.find("i,j,mass") == 0);
    CHECK(s.find("0,0,0.4") != std::string::npos);
    CHECK(s.find("1,1,0.4") != std::string::npos);
    CHECK(s.find("0,1,") == std::string::npos);
    std::ostringstream all;
    write_coupling_edges(all, c, 0.0);
    const std::string lines = all.str();
    CHECK(std::count(lines.begin(), lines.end(), '\n') == 5);
}
