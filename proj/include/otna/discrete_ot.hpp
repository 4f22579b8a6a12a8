#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "otna/types.hpp"

namespace otna {

/// Pairwise costs (x_i - y_j)^T M (x_i - y_j).
template <typename Scalar>
struct CostMatrix {
    Matrix<Scalar> entries;
    Matrix<Scalar> metric;
    Scalar c_min{};
    Scalar c_max{};

    static CostMatrix from_entries(Matrix<Scalar> c, Matrix<Scalar> metric = {})
    {
        require(c.size() > 0, "empty cost matrix");
        require(c.allFinite(), "cost matrix has non-finite entries");
        CostMatrix out;
        out.c_min = c.minCoeff();
        out.c_max = c.maxCoeff();
        out.entries = std::move(c);
        out.metric = std::move(metric);
        return out;
    }

    Eigen::Index rows() const noexcept { return entries.rows(); }
    Eigen::Index cols() const noexcept { return entries.cols(); }
};

/// Transport plan with row sums 1/n and column sums 1/m (total mass 1).
template <typename Scalar>
struct Coupling {
    Matrix<Scalar> plan;

    Scalar row_violation() const
    {
        const Scalar target = Scalar(1) / Scalar(plan.rows());
        return (plan.rowwise().sum().array() - target).abs().maxCoeff();
    }
    Scalar col_violation() const
    {
        const Scalar target = Scalar(1) / Scalar(plan.cols());
        return (plan.colwise().sum().array() - target).abs().maxCoeff();
    }
    Scalar marginal_violation() const { return std::max(row_violation(), col_violation()); }
};

template <typename Scalar>
struct OtSolution {
    Coupling<Scalar> coupling;
    /// <plan, C> for exact OT; <plan, C> + eps sum plan log plan for entropic OT.
    Scalar value{};
    Scalar transport_cost{};
    /// sum plan log plan (0 for the exact solver's report).
    Scalar entropy{};
    bool converged = false;
    std::size_t iterations = 0;
    /// Dual objective after every Sinkhorn iteration, when requested.
    std::vector<Scalar> dual_trace;
};

template <typename Scalar>
CostMatrix<Scalar> cost_matrix(const Matrix<Scalar>& x, const Matrix<Scalar>& y, const Matrix<Scalar>& metric)
{
    const Eigen::Index d = x.cols();
    require_dims(y.cols() == d && metric.rows() == d && metric.cols() == d, "cost inputs have mismatched dimensions");
    require(x.rows() > 0 && y.rows() > 0, "cost matrix of an empty sample");
    require((metric - metric.transpose()).cwiseAbs().maxCoeff() <= Scalar(1e-10) * std::max(Scalar(1), metric.cwiseAbs().maxCoeff()),
            "metric must be symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(metric, Eigen::EigenvaluesOnly);
    require(eig.eigenvalues()(0) >= Scalar(-1e-10) * std::max(Scalar(1), eig.eigenvalues().cwiseAbs().maxCoeff()),
            "metric must be positive semidefinite");
    Matrix<Scalar> c(x.rows(), y.rows());
    Vector<Scalar> diff(d);
    for (Eigen::Index j = 0; j < y.rows(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            diff = x.row(i).transpose() - y.row(j).transpose();
            c(i, j) = std::max(Scalar(0), diff.dot(metric * diff));
        }
    return CostMatrix<Scalar>::from_entries(std::move(c), metric);
}

template <typename Scalar>
CostMatrix<Scalar> squared_euclidean_cost(const Matrix<Scalar>& x, const Matrix<Scalar>& y)
{
    return cost_matrix<Scalar>(x, y, Matrix<Scalar>::Identity(x.cols(), x.cols()));
}

namespace detail {

/// Primal transportation simplex on the complete bipartite graph.
///
/// Masses are scaled to integers (each row ships m units, each column
/// receives n units) so flows are exact. The basis is a spanning tree of
/// n + m - 1 cells rooted at row 0; potentials are recomputed from the tree
/// after each pivot. Entering cells are priced in blocks (most negative
/// reduced cost within the first block that has one). The tree is kept
/// strongly feasible (zero-flow arcs point toward the root) by taking the
/// last blocking arc met when walking the cycle from its apex, which rules
/// out cycling on degenerate pivots.
template <typename Scalar>
class TransportSimplex {
public:
    explicit TransportSimplex(const Matrix<Scalar>& cost) : c_(cost), n_(cost.rows()), m_(cost.cols()) {}

    bool solve(std::size_t max_pivots)
    {
        initial_basis();
        const Scalar scale = std::max(Scalar(1), c_.cwiseAbs().maxCoeff());
        const Scalar tol = Scalar(64) * std::numeric_limits<Scalar>::epsilon() * scale;
        const std::int64_t cells = static_cast<std::int64_t>(n_) * m_;
        const std::int64_t block = std::max<std::int64_t>(16, static_cast<std::int64_t>(std::sqrt(double(cells))));
        std::int64_t cursor = 0;

        for (pivots_ = 0; pivots_ < max_pivots; ++pivots_) {
            compute_tree();
            std::int64_t entering = -1;
            Scalar best = -tol;
            std::int64_t scanned = 0;
            while (scanned < cells) {
                const std::int64_t stop = std::min(cells, scanned + block);
                for (; scanned < stop; ++scanned) {
                    std::int64_t k = cursor + scanned;
                    if (k >= cells) k -= cells;
                    if (basis_slot_[k] >= 0) continue;
                    const Scalar rc = reduced(k);
                    if (rc < best) {
                        best = rc;
                        entering = k;
                    }
                }
                if (entering >= 0) break;
            }
            if (entering < 0) return true;
            cursor = (entering + 1) % cells;
            pivot(entering);
        }
        compute_tree();
        return false;
    }

    std::size_t pivots() const noexcept { return pivots_; }

    Matrix<Scalar> plan() const
    {
        Matrix<Scalar> p = Matrix<Scalar>::Zero(n_, m_);
        const Scalar total = Scalar(n_) * Scalar(m_);
        for (const auto& arc : arcs_) p(arc.row, arc.col) = Scalar(arc.flow) / total;
        return p;
    }

private:
    struct Arc {
        Eigen::Index row;
        Eigen::Index col;
        std::int64_t flow;
    };

    Scalar reduced(std::int64_t k) const
    {
        const Eigen::Index i = k / m_, j = k % m_;
        return c_(i, j) - u_[i] - v_[j];
    }

    std::int64_t cell(Eigen::Index i, Eigen::Index j) const { return static_cast<std::int64_t>(i) * m_ + j; }

    void add_arc(Eigen::Index i, Eigen::Index j, std::int64_t flow)
    {
        const int slot = static_cast<int>(arcs_.size());
        arcs_.push_back({i, j, flow});
        basis_slot_[cell(i, j)] = slot;
        adjacency_[i].push_back(slot);
        adjacency_[n_ + j].push_back(slot);
    }

    // North-west corner rule; degenerate steps keep zero-flow cells so the
    // basis is always a spanning tree.
    void initial_basis()
    {
        basis_slot_.assign(static_cast<std::size_t>(n_ * m_), -1);
        adjacency_.assign(static_cast<std::size_t>(n_ + m_), {});
        arcs_.clear();
        std::vector<std::int64_t> supply(n_, m_), demand(m_, n_);
        Eigen::Index i = 0, j = 0;
        while (i < n_ && j < m_) {
            const std::int64_t x = std::min(supply[i], demand[j]);
            add_arc(i, j, x);
            supply[i] -= x;
            demand[j] -= x;
            // On ties move down: the zero-flow arc then points from a new row
            // up to its parent column, as strong feasibility requires.
            if (supply[i] == 0 && i + 1 < n_)
                ++i;
            else
                ++j;
        }
        u_.assign(n_, Scalar(0));
        v_.assign(m_, Scalar(0));
    }

    // Potentials u_i + v_j = c_ij on tree arcs, rooted at row 0; also parent links for cycle search.
    void compute_tree()
    {
        const Eigen::Index nodes = n_ + m_;
        parent_arc_.assign(nodes, -1);
        depth_.assign(nodes, -1);
        order_.clear();
        order_.push_back(0);
        depth_[0] = 0;
        u_[0] = Scalar(0);
        for (std::size_t head = 0; head < order_.size(); ++head) {
            const Eigen::Index node = order_[head];
            for (const int slot : adjacency_[node]) {
                const Arc& arc = arcs_[slot];
                const Eigen::Index other = node < n_ ? n_ + arc.col : arc.row;
                if (depth_[other] >= 0) continue;
                depth_[other] = depth_[node] + 1;
                parent_arc_[other] = slot;
                if (other < n_)
                    u_[other] = c_(arc.row, arc.col) - v_[arc.col];
                else
                    v_[arc.col] = c_(arc.row, arc.col) - u_[arc.row];
                order_.push_back(other);
            }
        }
    }

    Eigen::Index parent_node(Eigen::Index node) const
    {
        const Arc& arc = arcs_[parent_arc_[node]];
        return node < n_ ? n_ + arc.col : arc.row;
    }

    void pivot(std::int64_t entering)
    {
        const Eigen::Index ei = entering / m_, ej = entering % m_;
        // Tree paths from column node ej and row node ei up to their apex.
        from_col_.clear();
        from_row_.clear();
        Eigen::Index a = n_ + ej, b = ei;
        while (depth_[a] > depth_[b]) {
            from_col_.push_back(parent_arc_[a]);
            a = parent_node(a);
        }
        while (depth_[b] > depth_[a]) {
            from_row_.push_back(parent_arc_[b]);
            b = parent_node(b);
        }
        while (a != b) {
            from_col_.push_back(parent_arc_[a]);
            a = parent_node(a);
            from_row_.push_back(parent_arc_[b]);
            b = parent_node(b);
        }
        // Cycle orientation: apex -> ei (from_row_ reversed), ei -> ej, ej -> apex.
        // Arcs next to the entering cell decrease, then signs alternate.
        std::int64_t theta = std::numeric_limits<std::int64_t>::max();
        int leaving = -1;
        for (std::size_t k = from_row_.size(); k-- > 0;)
            if (k % 2 == 0 && arcs_[from_row_[k]].flow <= theta) {
                theta = arcs_[from_row_[k]].flow;
                leaving = from_row_[k];
            }
        for (std::size_t k = 0; k < from_col_.size(); ++k)
            if (k % 2 == 0 && arcs_[from_col_[k]].flow <= theta) {
                theta = arcs_[from_col_[k]].flow;
                leaving = from_col_[k];
            }
        for (std::size_t k = 0; k < from_row_.size(); ++k) arcs_[from_row_[k]].flow += (k % 2 == 0) ? -theta : theta;
        for (std::size_t k = 0; k < from_col_.size(); ++k) arcs_[from_col_[k]].flow += (k % 2 == 0) ? -theta : theta;

        Arc& out = arcs_[leaving];
        basis_slot_[cell(out.row, out.col)] = -1;
        erase_slot(adjacency_[out.row], leaving);
        erase_slot(adjacency_[n_ + out.col], leaving);
        out = {ei, ej, theta};
        basis_slot_[entering] = leaving;
        adjacency_[ei].push_back(leaving);
        adjacency_[n_ + ej].push_back(leaving);
    }

    static void erase_slot(std::vector<int>& list, int slot)
    {
        const auto it = std::find(list.begin(), list.end(), slot);
        *it = list.back();
        list.pop_back();
    }

    const Matrix<Scalar>& c_;
    Eigen::Index n_, m_;
    std::vector<Arc> arcs_;
    std::vector<int> basis_slot_;
    std::vector<std::vector<int>> adjacency_;
    std::vector<Scalar> u_, v_;
    std::vector<int> parent_arc_;
    std::vector<Eigen::Index> depth_;
    std::vector<Eigen::Index> order_;
    std::vector<int> from_col_, from_row_;
    std::size_t pivots_ = 0;
};

template <typename Scalar>
Scalar log_sum_exp(const Scalar* data, Eigen::Index n, Eigen::Index stride = 1)
{
    Scalar top = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index k = 0; k < n; ++k) top = std::max(top, data[k * stride]);
    if (!std::isfinite(top)) return top;
    Scalar acc(0);
    for (Eigen::Index k = 0; k < n; ++k) acc += std::exp(data[k * stride] - top);
    return top + std::log(acc);
}

} // namespace detail

/// Exact uniform-marginal transportation problem. `converged` is false when
/// the pivot cap is hit; the returned plan is then the last feasible basis.
template <typename Scalar>
OtSolution<Scalar> solve_exact_ot(const CostMatrix<Scalar>& cost, std::size_t max_pivots = 0)
{
    require(cost.entries.size() > 0 && cost.entries.allFinite(), "exact OT needs finite, nonempty costs");
    if (max_pivots == 0) max_pivots = 1000 * static_cast<std::size_t>(cost.rows() + cost.cols()) + 100000;
    detail::TransportSimplex<Scalar> simplex(cost.entries);
    OtSolution<Scalar> sol;
    sol.converged = simplex.solve(max_pivots);
    sol.iterations = simplex.pivots();
    sol.coupling.plan = simplex.plan();
    sol.transport_cost = sol.coupling.plan.cwiseProduct(cost.entries).sum();
    sol.value = sol.transport_cost;
    return sol;
}

struct SinkhornOptions {
    double tol = 1e-9;
    std::size_t max_iter = 100000;
    bool record_dual = false;
    /// Warm-start from a geometric eps schedule (factor 4) starting at the
    /// cost range; intermediate stages stop at a loose tolerance.
    bool eps_scaling = true;
    /// When the final stage has not converged after this many iterations and
    /// n + m <= newton_max_size, switch to Newton steps on the dual.
    std::size_t newton_after = 1000;
    std::size_t newton_max_size = 1500;
};

/// Log-domain Sinkhorn for min <P, C> + eps sum P log P over uniform-marginal couplings.
///
/// Iterates on potentials f, g with P = exp((f_i + g_j - C_ij) / eps);
/// stops once the row-marginal violation (columns are exact after each
/// g-update) drops below tol. `iterations` counts all stages of the eps
/// schedule; the dual trace covers the final stage only.
template <typename Scalar>
OtSolution<Scalar> sinkhorn(const CostMatrix<Scalar>& cost, Scalar eps, const SinkhornOptions& opts = {})
{
    require(eps > Scalar(0), "Sinkhorn needs a positive regularization");
    const Eigen::Index n = cost.rows(), m = cost.cols();
    const Matrix<Scalar>& c = cost.entries;
    const Scalar log_a = -std::log(Scalar(n)), log_b = -std::log(Scalar(m));
    const Scalar a = Scalar(1) / Scalar(n), b = Scalar(1) / Scalar(m);

    Vector<Scalar> f = Vector<Scalar>::Zero(n), g = Vector<Scalar>::Zero(m);
    OtSolution<Scalar> sol;

    // Current potentials act as the log-sum-exp shift; when the shifted sums
    // leave the floating range the update is redone with a max shift.
    // Column-at-a-time loops keep exp vectorized.
    Scalar stage_eps = eps;
    Scalar inv = Scalar(1) / eps;
    ColArray<Scalar> shifted(n);
    auto ok = [](const auto& v) { return (v > Scalar(0)).all() && v.isFinite().all(); };
    auto update_g = [&] {
        RowArray<Scalar> sums(m);
        for (Eigen::Index j = 0; j < m; ++j)
            sums(j) = ((f.array() + g(j) - c.col(j).array()) * inv).exp().sum();
        if (ok(sums)) {
            g += (stage_eps * (log_b - sums.log())).transpose().matrix();
            return;
        }
        for (Eigen::Index j = 0; j < m; ++j) {
            shifted = (f.array() - c.col(j).array()) * inv;
            const Scalar top = shifted.maxCoeff();
            g(j) = stage_eps * (log_b - (top + std::log((shifted - top).exp().sum())));
        }
    };
    // Returns the row sums of the current plan before the update.
    auto update_f = [&]() -> ColArray<Scalar> {
        ColArray<Scalar> sums = ColArray<Scalar>::Zero(n);
        for (Eigen::Index j = 0; j < m; ++j) sums += ((f.array() + g(j) - c.col(j).array()) * inv).exp();
        if (ok(sums)) {
            f += (stage_eps * (log_a - sums.log())).matrix();
            return sums;
        }
        ColArray<Scalar> top = ColArray<Scalar>::Constant(n, -std::numeric_limits<Scalar>::infinity());
        for (Eigen::Index j = 0; j < m; ++j) top = top.max((g(j) - c.col(j).array()) * inv);
        ColArray<Scalar> acc = ColArray<Scalar>::Zero(n);
        for (Eigen::Index j = 0; j < m; ++j) acc += ((g(j) - c.col(j).array()) * inv - top).exp();
        const ColArray<Scalar> lse = top + acc.log();
        const ColArray<Scalar> old = f.array();
        f = (stage_eps * (log_a - lse)).matrix();
        return (old * inv + lse).exp();
    };

    auto run = [&](Scalar tol, std::size_t budget, bool record) {
        update_g();
        for (std::size_t it = 0; it < budget; ++it, ++sol.iterations) {
            if (record) sol.dual_trace.push_back(a * f.sum() + b * g.sum());
            const Vector<Scalar> f_prev = f;
            const Scalar violation = (update_f() - a).abs().maxCoeff();
            if (violation < tol) {
                f = f_prev;
                return true;
            }
            update_g();
        }
        return false;
    };

    // Damped Newton ascent on the dual a.f + b.g - eps sum exp((f + g - C) / eps),
    // with g_{m-1} pinned; backtracking keeps the dual nondecreasing.
    auto dual = [&](const Vector<Scalar>& ff, const Vector<Scalar>& gg) {
        const Scalar mass = ((((-c).colwise() + ff).rowwise() + gg.transpose()).array() * inv).exp().sum();
        return a * ff.sum() + b * gg.sum() - eps * mass;
    };
    auto newton = [&](Scalar tol, std::size_t budget, bool record) {
        const Eigen::Index k = n + m - 1;
        for (std::size_t it = 0; it < budget; ++it, ++sol.iterations) {
            const Matrix<Scalar> plan = ((((-c).colwise() + f).rowwise() + g.transpose()).array() * inv).exp().matrix();
            const Vector<Scalar> rows = plan.rowwise().sum(), cols = plan.colwise().sum().transpose();
            if (record) sol.dual_trace.push_back(a * f.sum() + b * g.sum() - eps * rows.sum() + eps);
            const Scalar violation = std::max((rows.array() - a).abs().maxCoeff(), (cols.array() - b).abs().maxCoeff());
            if (violation < tol) return true;
            Vector<Scalar> grad(k);
            grad << (Vector<Scalar>::Constant(n, a) - rows), (Vector<Scalar>::Constant(m - 1, b) - cols.head(m - 1));
            Matrix<Scalar> hess = Matrix<Scalar>::Zero(k, k);
            hess.diagonal() << rows, cols.head(m - 1);
            hess.topRightCorner(n, m - 1) = plan.leftCols(m - 1);
            hess.bottomLeftCorner(m - 1, n) = plan.leftCols(m - 1).transpose();
            const Eigen::LDLT<Matrix<Scalar>> ldlt(hess);
            if (ldlt.info() != Eigen::Success) return false;
            const Vector<Scalar> step = eps * ldlt.solve(grad);
            const Scalar base = dual(f, g), slope = grad.dot(step);
            if (!(slope > Scalar(0))) return false;
            Scalar t(1);
            Vector<Scalar> ft, gt;
            for (int ls = 0; ls < 60; ++ls, t /= Scalar(2)) {
                ft = f + t * step.head(n);
                gt = g;
                gt.head(m - 1) += t * step.tail(m - 1);
                const Scalar trial = dual(ft, gt);
                if (std::isfinite(trial) && trial >= base + Scalar(1e-4) * t * slope) break;
            }
            f = ft;
            g = gt;
        }
        return false;
    };

    std::vector<Scalar> schedule;
    if (opts.eps_scaling)
        for (Scalar e = cost.c_max - cost.c_min; e > Scalar(4) * eps; e /= Scalar(4)) schedule.push_back(e);
    for (const Scalar e : schedule) {
        stage_eps = e;
        inv = Scalar(1) / e;
        run(std::max(Scalar(opts.tol), Scalar(1e-3) * a), opts.max_iter - sol.iterations, false);
    }
    stage_eps = eps;
    inv = Scalar(1) / eps;
    const bool polish = n + m <= static_cast<Eigen::Index>(opts.newton_max_size) && m > 1;
    const std::size_t first = polish ? std::min(opts.newton_after, opts.max_iter - sol.iterations) : opts.max_iter - sol.iterations;
    sol.converged = run(Scalar(opts.tol), first, opts.record_dual);
    if (!sol.converged && polish) {
        sol.converged = newton(Scalar(opts.tol), std::min<std::size_t>(100, opts.max_iter - sol.iterations), opts.record_dual);
        if (!sol.converged) sol.converged = run(Scalar(opts.tol), opts.max_iter - sol.iterations, opts.record_dual);
    }

    const Matrix<Scalar> log_plan = ((-c).colwise() + f).rowwise() + g.transpose();
    sol.coupling.plan = (log_plan / eps).array().exp().matrix();
    sol.transport_cost = sol.coupling.plan.cwiseProduct(c).sum();
    sol.entropy = sol.coupling.plan.cwiseProduct(log_plan / eps).sum();
    sol.value = sol.transport_cost + eps * sol.entropy;
    return sol;
}

/// Entropic value under the KL(P | a x b) convention: plain value + eps log(nm).
template <typename Scalar>
Scalar mutual_information_value(const OtSolution<Scalar>& sol, Scalar eps)
{
    return sol.value + eps * std::log(Scalar(sol.coupling.plan.rows()) * Scalar(sol.coupling.plan.cols()));
}

/// sum p_ij log(p_ij / q_ij) with 0 log 0 = 0.
template <typename Scalar>
Scalar coupling_kl(const Coupling<Scalar>& p, const Coupling<Scalar>& q)
{
    require_dims(p.plan.rows() == q.plan.rows() && p.plan.cols() == q.plan.cols(), "couplings have different shapes");
    Scalar total(0);
    for (Eigen::Index j = 0; j < p.plan.cols(); ++j)
        for (Eigen::Index i = 0; i < p.plan.rows(); ++i) {
            const Scalar pv = p.plan(i, j);
            if (pv <= Scalar(0)) continue;
            require(q.plan(i, j) > Scalar(0), "reference coupling vanishes where the first one has mass");
            total += pv * std::log(pv / q.plan(i, j));
        }
    return total;
}

/// M - P M Q, entry (k, l) = (1 - p_k q_l) M_kl.
template <typename Scalar>
Matrix<Scalar> implicit_metric_gap(const Matrix<Scalar>& metric, const Vector<Scalar>& p, const Vector<Scalar>& q)
{
    return metric - p.asDiagonal() * metric * q.asDiagonal();
}

enum class ImplicitCostForm {
    /// E[C^NA_ij | X, Y] entrywise: row and column terms included.
    expected,
    /// C_ij + 2 x_i^T (M - PMQ) y_j: the expectation with row-only and
    /// column-only terms dropped; same optimal couplings, different value.
    cross_term,
};

/// Cost that zero-imputation under MCAR(p), MCAR(q) optimizes on average.
///
///   E[|x^NA - y^NA|_M^2] = x^T (PMP + P(I-P) diag M) x + y^T (QMQ + Q(I-Q) diag M) y - 2 x^T PMQ y
///                        = C + 2 x^T (M - PMQ) y + (row term) + (column term).
/// Entries may be negative for the cross_term form.
template <typename Scalar>
CostMatrix<Scalar> implicit_cost(const Matrix<Scalar>& x, const Matrix<Scalar>& y, const Matrix<Scalar>& metric,
                                 const Vector<Scalar>& p, const Vector<Scalar>& q,
                                 ImplicitCostForm form = ImplicitCostForm::expected)
{
    const Eigen::Index d = x.cols();
    require_dims(p.size() == d && q.size() == d, "probability vectors must have length d");
    const CostMatrix<Scalar> base = cost_matrix(x, y, metric);
    if (form == ImplicitCostForm::cross_term) {
        Matrix<Scalar> c = base.entries + Scalar(2) * x * implicit_metric_gap(metric, p, q) * y.transpose();
        return CostMatrix<Scalar>::from_entries(std::move(c), metric);
    }
    const Vector<Scalar> diag_m = metric.diagonal();
    Matrix<Scalar> quad_x = p.asDiagonal() * metric * p.asDiagonal();
    quad_x.diagonal() += p.cwiseProduct(Vector<Scalar>::Ones(d) - p).cwiseProduct(diag_m);
    Matrix<Scalar> quad_y = q.asDiagonal() * metric * q.asDiagonal();
    quad_y.diagonal() += q.cwiseProduct(Vector<Scalar>::Ones(d) - q).cwiseProduct(diag_m);
    const Vector<Scalar> row = (x * quad_x).cwiseProduct(x).rowwise().sum();
    const Vector<Scalar> col = (y * quad_y).cwiseProduct(y).rowwise().sum();
    Matrix<Scalar> c = Scalar(-2) * x * p.asDiagonal() * metric * q.asDiagonal() * y.transpose();
    c.colwise() += row;
    c.rowwise() += col.transpose();
    return CostMatrix<Scalar>::from_entries(std::move(c), metric);
}

template <typename Scalar>
struct SensitivityConstants {
    Scalar log_k_eps{};
    Scalar log_k_eps_prime{};
    /// +inf when exp would overflow; the log fields stay exact.
    Scalar k_eps{};
    Scalar k_eps_prime{};
};

/// K_eps = exp((2 c_max - c_min) / eps), K'_eps = exp((3 c_max - 7 c_min) / (2 eps)).
template <typename Scalar>
SensitivityConstants<Scalar> sensitivity_constants(Scalar c_min, Scalar c_max, Scalar eps)
{
    require(eps > Scalar(0), "sensitivity constants need a positive regularization");
    SensitivityConstants<Scalar> out;
    out.log_k_eps = (Scalar(2) * c_max - c_min) / eps;
    out.log_k_eps_prime = (Scalar(3) * c_max - Scalar(7) * c_min) / (Scalar(2) * eps);
    const Scalar limit = std::log(std::numeric_limits<Scalar>::max());
    out.k_eps = out.log_k_eps < limit ? std::exp(out.log_k_eps) : std::numeric_limits<Scalar>::infinity();
    out.k_eps_prime = out.log_k_eps_prime < limit ? std::exp(out.log_k_eps_prime) : std::numeric_limits<Scalar>::infinity();
    return out;
}

template <typename Scalar>
SensitivityConstants<Scalar> sensitivity_constants(const CostMatrix<Scalar>& cost, Scalar eps)
{
    return sensitivity_constants(cost.c_min, cost.c_max, eps);
}

/// Constants valid for a pair of costs: extremes taken over both matrices.
template <typename Scalar>
SensitivityConstants<Scalar> sensitivity_constants(const CostMatrix<Scalar>& a, const CostMatrix<Scalar>& b, Scalar eps)
{
    return sensitivity_constants(std::min(a.c_min, b.c_min), std::max(a.c_max, b.c_max), eps);
}

} // namespace otna
