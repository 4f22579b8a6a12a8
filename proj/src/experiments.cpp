#include "otna/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

#include "otna/csv_io.hpp"
#include "otna/generators.hpp"
#include "otna/logistic.hpp"
#include "otna/serialize.hpp"

namespace otna {

namespace fs = std::filesystem;

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

enum Tag : std::uint64_t {
    tag_convergence = 1,
    tag_sweep = 2,
    tag_mnar = 3,
    tag_da = 4,
    tag_selection = 5,
};

template <typename T>
void read_field(const Json& j, const char* key, T& field)
{
    if (j.contains(key)) {
        try {
            field = j.at(key).get<T>();
        } catch (const Json::exception& e) {
            throw Error(std::string("config field '") + key + "': " + e.what());
        }
    }
}

/// Every key of `j` must be a field of the parsed config (as echoed by to_json).
void reject_unknown(const Json& j, const Json& known)
{
    if (!j.is_object()) throw Error("config must be a JSON object");
    for (const auto& item : j.items())
        if (!known.contains(item.key())) throw Error("unknown config field '" + item.key() + "'");
}

void require_positive(std::int64_t v, const char* name)
{
    if (v <= 0) throw Error(std::string("config field '") + name + "' must be positive");
}

void require_probs(const std::vector<double>& p, const char* name)
{
    for (double v : p)
        if (!(v > 0.0 && v <= 1.0)) throw Error(std::string("config field '") + name + "' must lie in (0, 1]");
}

VectorXd to_vector(const std::vector<double>& v) { return Eigen::Map<const VectorXd>(v.data(), Eigen::Index(v.size())); }

std::ofstream open_out(const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    return out;
}

std::string fmt(double v) { return std::isfinite(v) ? format_double(v) : (std::isnan(v) ? "NA" : (v > 0 ? "inf" : "-inf")); }

CompletionConfig completion_of(const std::string& name)
{
    CompletionConfig c;
    if (name == "soft_impute")
        c.method = Completer::soft_impute;
    else if (name == "isvt")
        c.method = Completer::isvt;
    else
        throw Error("unknown completer: " + name);
    return c;
}

double relative_error(double estimate, double truth)
{
    return truth != 0.0 ? std::abs(estimate - truth) / std::abs(truth) : std::abs(estimate - truth);
}

} // namespace

std::uint64_t replicate_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t r)
{
    return splitmix64(splitmix64(base ^ (tag * 0x9e3779b97f4a7c15ULL)) + r);
}

Quartiles quartiles(std::vector<double> values)
{
    values.erase(std::remove_if(values.begin(), values.end(), [](double v) { return std::isnan(v); }), values.end());
    Quartiles q;
    q.count = values.size();
    if (values.empty()) {
        q.q25 = q.median = q.q75 = nan;
        return q;
    }
    std::sort(values.begin(), values.end());
    auto at = [&](double frac) {
        const double pos = frac * double(values.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, values.size() - 1);
        const double w = pos - double(lo);
        return values[lo] + w * (values[hi] - values[lo]);
    };
    q.q25 = at(0.25);
    q.median = at(0.5);
    q.q75 = at(0.75);
    return q;
}

// ---------------------------------------------------------------- two-step OT

OtSolution<double> solve_ot(const CostMatrix<double>& cost, double eps)
{
    require(eps >= 0.0, "regularization must be nonnegative");
    return eps == 0.0 ? solve_exact_ot(cost) : sinkhorn(cost, eps);
}

TwoStepResult two_step_entropic_ot(const MaskedDataset<double>& x, const MaskedDataset<double>& y, double lambda_x,
                                   double lambda_y, double eps, const MatrixXd& metric,
                                   const CompletionConfig& completion, const MatrixXd* truth_x, const MatrixXd* truth_y)
{
    require(eps >= 0.0, "regularization must be nonnegative");
    require(lambda_x >= 0.0 && lambda_y >= 0.0, "thresholds must be nonnegative");
    auto fill = [&](const MaskedDataset<double>& data, double lambda) -> MatrixXd {
        // Nothing to impute on a full mask.
        if (data.mask().observed_count() == data.rows() * data.cols()) return data.values();
        const auto r = complete(data, lambda, completion);
        if (!r.converged) throw Error("matrix completion did not converge");
        return r.completed;
    };
    TwoStepResult out;
    out.completed_x = fill(x, lambda_x);
    out.completed_y = fill(y, lambda_y);
    out.cost = cost_matrix(out.completed_x, out.completed_y, metric);
    out.solution = solve_ot(out.cost, eps);
    if (truth_x && truth_y) out.cost_error = (out.cost.entries - cost_matrix(*truth_x, *truth_y, metric).entries).norm();
    return out;
}

// ---------------------------------------------------------------- configs

ConvergenceConfig convergence_config(const Json& j)
{
    ConvergenceConfig c;
    read_field(j, "d", c.d);
    read_field(j, "sizes", c.sizes);
    read_field(j, "replicates", c.replicates);
    read_field(j, "mean_scale", c.mean_scale);
    read_field(j, "cov_lo", c.cov_lo);
    read_field(j, "cov_hi", c.cov_hi);
    read_field(j, "diagonal", c.diagonal);
    read_field(j, "p_lo", c.p_lo);
    read_field(j, "p_hi", c.p_hi);
    read_field(j, "probs_x", c.probs_x);
    read_field(j, "probs_y", c.probs_y);
    read_field(j, "y_complete", c.y_complete);
    read_field(j, "uniform_p", c.uniform_p);
    read_field(j, "sweep_replicates", c.sweep_replicates);
    read_field(j, "sweep_n", c.sweep_n);
    read_field(j, "use_estimated_probs", c.use_estimated_probs);
    require_positive(c.d, "d");
    require_positive(c.replicates, "replicates");
    require_positive(c.sweep_replicates, "sweep_replicates");
    require_positive(c.sweep_n, "sweep_n");
    for (auto n : c.sizes) require_positive(n - 1, "sizes (each at least 2)");
    require(c.cov_lo > 0.0 && c.cov_hi >= c.cov_lo, "covariance spectrum range must be positive");
    require(c.p_lo > 0.0 && c.p_hi <= 1.0 && c.p_lo <= c.p_hi, "probability range must lie in (0, 1]");
    require_probs(c.probs_x, "probs_x");
    require_probs(c.probs_y, "probs_y");
    require_probs(c.uniform_p, "uniform_p");
    require(c.probs_x.empty() || std::int64_t(c.probs_x.size()) == c.d, "probs_x length must equal d");
    require(c.probs_y.empty() || std::int64_t(c.probs_y.size()) == c.d, "probs_y length must equal d");
    reject_unknown(j, to_json(c));
    return c;
}

Json to_json(const ConvergenceConfig& c)
{
    return {{"d", c.d},
            {"sizes", c.sizes},
            {"replicates", c.replicates},
            {"mean_scale", c.mean_scale},
            {"cov_lo", c.cov_lo},
            {"cov_hi", c.cov_hi},
            {"diagonal", c.diagonal},
            {"p_lo", c.p_lo},
            {"p_hi", c.p_hi},
            {"probs_x", c.probs_x},
            {"probs_y", c.probs_y},
            {"y_complete", c.y_complete},
            {"uniform_p", c.uniform_p},
            {"sweep_replicates", c.sweep_replicates},
            {"sweep_n", c.sweep_n},
            {"use_estimated_probs", c.use_estimated_probs}};
}

MnarConfig mnar_config(const Json& j)
{
    MnarConfig c;
    read_field(j, "d", c.d);
    read_field(j, "n", c.n);
    read_field(j, "replicates", c.replicates);
    read_field(j, "eps_grid", c.eps_grid);
    read_field(j, "p_grid", c.p_grid);
    read_field(j, "alpha", c.alpha);
    read_field(j, "mean_scale", c.mean_scale);
    read_field(j, "cov_lo", c.cov_lo);
    read_field(j, "cov_hi", c.cov_hi);
    read_field(j, "use_estimated_probs", c.use_estimated_probs);
    require_positive(c.d, "d");
    require_positive(c.n - 1, "n (at least 2)");
    require_positive(c.replicates, "replicates");
    require(!c.eps_grid.empty() && !c.p_grid.empty(), "eps_grid and p_grid must be nonempty");
    for (double e : c.eps_grid) require(e >= 0.0 && e <= 1.0, "eps_grid values must lie in [0, 1]");
    require_probs(c.p_grid, "p_grid");
    require(c.alpha > 0.0, "alpha must be positive");
    require(c.cov_lo > 0.0 && c.cov_hi >= c.cov_lo, "covariance spectrum range must be positive");
    reject_unknown(j, to_json(c));
    return c;
}

Json to_json(const MnarConfig& c)
{
    return {{"d", c.d},         {"n", c.n},           {"replicates", c.replicates}, {"eps_grid", c.eps_grid},
            {"p_grid", c.p_grid}, {"alpha", c.alpha}, {"mean_scale", c.mean_scale}, {"cov_lo", c.cov_lo},
            {"cov_hi", c.cov_hi}, {"use_estimated_probs", c.use_estimated_probs}};
}

DomainAdaptationConfig domain_adaptation_config(const Json& j)
{
    DomainAdaptationConfig c;
    read_field(j, "d", c.d);
    read_field(j, "n_labeled", c.n_labeled);
    read_field(j, "n_target", c.n_target);
    read_field(j, "n_align", c.n_align);
    read_field(j, "p", c.p);
    read_field(j, "replicates", c.replicates);
    read_field(j, "shifts", c.shifts);
    read_field(j, "mechanisms", c.mechanisms);
    read_field(j, "mnar_eps", c.mnar_eps);
    read_field(j, "alpha", c.alpha);
    read_field(j, "clusters_per_class", c.clusters_per_class);
    read_field(j, "class_sep", c.class_sep);
    read_field(j, "informative", c.informative);
    read_field(j, "redundant", c.redundant);
    read_field(j, "l2", c.l2);
    read_field(j, "shift_lo", c.shift_lo);
    read_field(j, "shift_hi", c.shift_hi);
    read_field(j, "shift_offset", c.shift_offset);
    require_positive(c.d, "d");
    require_positive(c.n_labeled, "n_labeled");
    require_positive(c.n_target, "n_target");
    require_positive(c.n_align - 1, "n_align (at least 2)");
    require_positive(c.replicates, "replicates");
    require_positive(c.clusters_per_class, "clusters_per_class");
    require_positive(c.informative, "informative");
    require(c.redundant >= 0, "config field 'redundant' must be nonnegative");
    require(c.p > 0.0 && c.p <= 1.0, "p must lie in (0, 1]");
    require(c.mnar_eps >= 0.0 && c.mnar_eps <= 1.0, "mnar_eps must lie in [0, 1]");
    require(c.alpha > 0.0 && c.l2 >= 0.0, "alpha must be positive and l2 nonnegative");
    require(c.shift_lo > 0.0 && c.shift_hi >= c.shift_lo, "shift spectrum range must be positive");
    for (const auto& s : c.shifts) require(s == "linear" || s == "nonlinear" || s == "none", "unknown shift: " + s);
    for (const auto& m : c.mechanisms) require(m == "mcar" || m == "mnar", "unknown mechanism: " + m);
    reject_unknown(j, to_json(c));
    return c;
}

Json to_json(const DomainAdaptationConfig& c)
{
    return {{"d", c.d},
            {"n_labeled", c.n_labeled},
            {"n_target", c.n_target},
            {"n_align", c.n_align},
            {"p", c.p},
            {"replicates", c.replicates},
            {"shifts", c.shifts},
            {"mechanisms", c.mechanisms},
            {"mnar_eps", c.mnar_eps},
            {"alpha", c.alpha},
            {"clusters_per_class", c.clusters_per_class},
            {"class_sep", c.class_sep},
            {"informative", c.informative},
            {"redundant", c.redundant},
            {"l2", c.l2},
            {"shift_lo", c.shift_lo},
            {"shift_hi", c.shift_hi},
            {"shift_offset", c.shift_offset}};
}

SelectionBenchmarkConfig selection_config(const Json& j)
{
    SelectionBenchmarkConfig c;
    read_field(j, "mode", c.mode);
    require(c.mode == "random_projection" || c.mode == "two_clouds" || c.mode == "dataset",
            "unknown selection mode: " + c.mode);
    // Mode-specific defaults, overridable field by field.
    if (c.mode == "two_clouds") {
        c.d = 5;
        c.n_per_class = 200;
        c.p_x = 0.5;
        c.p_y = 0.3;
        c.ot_eps = {0.1, 1.0, 10.0};
        c.criteria = {"bw"};
        c.heatmap = false;
    } else if (c.mode == "dataset") {
        c.replicates = 20;
    }
    read_field(j, "replicates", c.replicates);
    read_field(j, "lambda_grid", c.lambda_grid);
    read_field(j, "criteria", c.criteria);
    read_field(j, "completer", c.completer);
    read_field(j, "delta_val", c.delta_val);
    read_field(j, "folds", c.folds);
    read_field(j, "warm_start", c.warm_start);
    read_field(j, "estimate_probs", c.estimate_probs);
    read_field(j, "ot_eps", c.ot_eps);
    read_field(j, "criterion_eps", c.criterion_eps);
    read_field(j, "minmax", c.minmax);
    read_field(j, "heatmap", c.heatmap);
    read_field(j, "n_per_class", c.n_per_class);
    read_field(j, "d", c.d);
    read_field(j, "moons_noise", c.moons_noise);
    read_field(j, "p_x", c.p_x);
    read_field(j, "p_y", c.p_y);
    read_field(j, "class_sep", c.class_sep);
    read_field(j, "csv", c.csv);
    read_field(j, "label_column", c.label_column);
    read_field(j, "positive_label", c.positive_label);
    read_field(j, "p_pos", c.p_pos);
    read_field(j, "p_neg", c.p_neg);
    if (c.lambda_grid.empty()) c.lambda_grid = default_lambda_grid();
    require_positive(c.replicates, "replicates");
    require_positive(c.folds, "folds");
    require_positive(c.n_per_class - 1, "n_per_class (at least 2)");
    require_positive(c.d, "d");
    for (double l : c.lambda_grid) require(l >= 0.0 && std::isfinite(l), "lambda_grid values must be finite and >= 0");
    for (double e : c.ot_eps) require(e >= 0.0, "ot_eps values must be nonnegative");
    for (const auto& name : c.criteria) criterion_from_string(name);
    completion_of(c.completer);
    require(c.delta_val > 0.0 && c.delta_val < 1.0, "delta_val must lie in (0, 1)");
    require(c.criterion_eps >= 0.0, "criterion_eps must be nonnegative");
    require(c.p_x > 0.0 && c.p_x <= 1.0 && c.p_y > 0.0 && c.p_y <= 1.0, "p_x and p_y must lie in (0, 1]");
    require(c.p_pos >= 0.0 && c.p_pos < 1.0 && c.p_neg >= 0.0 && c.p_neg < 1.0,
            "removal probabilities p_pos and p_neg must lie in [0, 1)");
    if (c.mode == "dataset") require(!c.csv.empty(), "dataset mode needs a 'csv' path");
    reject_unknown(j, to_json(c));
    return c;
}

Json to_json(const SelectionBenchmarkConfig& c)
{
    return {{"mode", c.mode},
            {"replicates", c.replicates},
            {"lambda_grid", c.lambda_grid},
            {"criteria", c.criteria},
            {"completer", c.completer},
            {"delta_val", c.delta_val},
            {"folds", c.folds},
            {"warm_start", c.warm_start},
            {"estimate_probs", c.estimate_probs},
            {"ot_eps", c.ot_eps},
            {"criterion_eps", c.criterion_eps},
            {"minmax", c.minmax},
            {"heatmap", c.heatmap},
            {"n_per_class", c.n_per_class},
            {"d", c.d},
            {"moons_noise", c.moons_noise},
            {"p_x", c.p_x},
            {"p_y", c.p_y},
            {"class_sep", c.class_sep},
            {"csv", c.csv},
            {"label_column", c.label_column},
            {"positive_label", c.positive_label},
            {"p_pos", c.p_pos},
            {"p_neg", c.p_neg}};
}

// ---------------------------------------------------------------- convergence

namespace {

struct BwPair {
    GaussianSummary<double> x, y;
    VectorXd px, py;
};

void fill_terms(ConvergenceRow& row, const BwReport<double>& est, const BwReport<double>& truth)
{
    row.bw_error = std::abs(est.squared_distance - truth.squared_distance);
    row.mean_term = std::abs(est.mean_term - truth.mean_term);
    row.trace_term = std::abs(est.trace_term - truth.trace_term);
    row.cross_term = std::abs(est.cross_term - truth.cross_term);
}

// Debiased and naive rows for one mask draw on fixed samples.
std::array<ConvergenceRow, 2> convergence_rows(const MatrixXd& x, const MatrixXd& y, const VectorXd& px,
                                               const VectorXd& py, std::uint64_t seed, bool estimate,
                                               const BwReport<double>& truth)
{
    auto masked = [&](const MatrixXd& data, const VectorXd& p, std::uint64_t s) {
        auto ds = apply_mask_zero_impute(data, generate_mcar_mask(data.rows(), data.cols(), p, s), p);
        return estimate ? ds.with_probs(estimate_missingness<double>(ds.mask())) : ds;
    };
    const auto dx = masked(x, px, seed);
    const auto dy = masked(y, py, splitmix64(seed));
    std::array<ConvergenceRow, 2> rows;
    rows[0].estimator = "debiased";
    fill_terms(rows[0], debiased_bw(dx, dy), truth);
    rows[1].estimator = "naive";
    fill_terms(rows[1], naive_bw(dx, dy), truth);
    return rows;
}

} // namespace

ConvergenceReport run_convergence(const ConvergenceConfig& cfg, const RunContext& ctx)
{
    const Eigen::Index d = cfg.d;
    Rng model(ctx.seed, tag_convergence);
    BwPair pair;
    pair.x = random_gaussian(d, cfg.mean_scale, cfg.cov_lo, cfg.cov_hi, cfg.diagonal, model);
    pair.y = cfg.y_complete ? pair.x : random_gaussian(d, cfg.mean_scale, cfg.cov_lo, cfg.cov_hi, cfg.diagonal, model);
    pair.px = cfg.probs_x.empty() ? random_probs(d, cfg.p_lo, cfg.p_hi, model) : to_vector(cfg.probs_x);
    pair.py = cfg.y_complete ? VectorXd::Ones(d)
                             : (cfg.probs_y.empty() ? random_probs(d, cfg.p_lo, cfg.p_hi, model) : to_vector(cfg.probs_y));

    ConvergenceReport report;
    const auto truth = bures_wasserstein(pair.x, pair.y);
    report.population_bw = truth.squared_distance;
    if (cfg.y_complete && cfg.diagonal)
        report.naive_lower_bound = na_bias_lower_bound<double>(pair.x.mean, pair.x.cov.diagonal().cwiseSqrt(), pair.px,
                                                               VectorXd::Ones(d));

    // Fixed samples per size; fresh masks per replicate.
    const std::size_t sizes = cfg.sizes.size(), reps = static_cast<std::size_t>(cfg.replicates);
    std::vector<MatrixXd> xs(sizes), ys(sizes);
    for (std::size_t k = 0; k < sizes; ++k) {
        Rng rx(ctx.seed, 100 + 2 * k), ry(ctx.seed, 101 + 2 * k);
        xs[k] = sample_gaussian(pair.x, cfg.sizes[k], rx);
        ys[k] = sample_gaussian(pair.y, cfg.sizes[k], ry);
    }
    std::vector<std::array<ConvergenceRow, 2>> cells(sizes * reps);
    parallel_for(cells.size(), ctx.threads, [&](std::size_t idx) {
        const std::size_t k = idx / reps, r = idx % reps;
        cells[idx] = convergence_rows(xs[k], ys[k], pair.px, pair.py, replicate_seed(ctx.seed, tag_convergence, idx),
                                      cfg.use_estimated_probs, truth);
        for (auto& row : cells[idx]) {
            row.n = cfg.sizes[k];
            row.replicate = std::int64_t(r);
        }
    });
    for (const auto& c : cells) report.rows.insert(report.rows.end(), c.begin(), c.end());

    if (!cfg.uniform_p.empty()) {
        const std::size_t sweep_reps = static_cast<std::size_t>(cfg.sweep_replicates);
        Rng rx(ctx.seed, 98), ry(ctx.seed, 99);
        const MatrixXd x = sample_gaussian(pair.x, cfg.sweep_n, rx);
        const MatrixXd y = sample_gaussian(pair.y, cfg.sweep_n, ry);
        std::vector<std::array<ConvergenceRow, 2>> sweep(cfg.uniform_p.size() * sweep_reps);
        parallel_for(sweep.size(), ctx.threads, [&](std::size_t idx) {
            const std::size_t k = idx / sweep_reps, r = idx % sweep_reps;
            const VectorXd p = VectorXd::Constant(d, cfg.uniform_p[k]);
            const VectorXd q = cfg.y_complete ? VectorXd::Ones(d) : p;
            sweep[idx] =
                convergence_rows(x, y, p, q, replicate_seed(ctx.seed, tag_sweep, idx), cfg.use_estimated_probs, truth);
            for (auto& row : sweep[idx]) {
                row.p = cfg.uniform_p[k];
                row.n = cfg.sweep_n;
                row.replicate = std::int64_t(r);
            }
        });
        for (const auto& c : sweep) report.sweep_rows.insert(report.sweep_rows.end(), c.begin(), c.end());
    }
    return report;
}

// ---------------------------------------------------------------- MNAR

MnarReport run_mnar_robustness(const MnarConfig& cfg, const RunContext& ctx)
{
    const Eigen::Index d = cfg.d;
    Rng model(ctx.seed, tag_mnar);
    const auto gx = random_gaussian(d, cfg.mean_scale, cfg.cov_lo, cfg.cov_hi, false, model);
    const auto gy = random_gaussian(d, cfg.mean_scale, cfg.cov_lo, cfg.cov_hi, false, model);
    const double truth = bures_wasserstein(gx, gy).squared_distance;
    Rng rx(ctx.seed, 100), ry(ctx.seed, 101);
    const MatrixXd x = sample_gaussian(gx, cfg.n, rx);
    const MatrixXd y = sample_gaussian(gy, cfg.n, ry);

    const std::size_t ne = cfg.eps_grid.size(), np = cfg.p_grid.size(), reps = std::size_t(cfg.replicates);
    // errors[cell][replicate] = {debiased, naive}
    std::vector<std::array<double, 2>> errors(ne * np * reps);
    parallel_for(errors.size(), ctx.threads, [&](std::size_t idx) {
        const std::size_t cell = idx / reps, r = idx % reps;
        const std::size_t ie = cell / np, ip = cell % np;
        const VectorXd p = VectorXd::Constant(d, cfg.p_grid[ip]);
        // Same mask seeds across eps: the contamination level is the only change along a row.
        const std::uint64_t seed = replicate_seed(ctx.seed, tag_mnar, ip * reps + r);
        auto masked = [&](const MatrixXd& data, std::uint64_t s) {
            auto ds = apply_mask_zero_impute(data, generate_mnar_mask(data, p, cfg.eps_grid[ie], cfg.alpha, s), p);
            return cfg.use_estimated_probs ? ds.with_probs(estimate_missingness<double>(ds.mask())) : ds;
        };
        const auto dx = masked(x, seed), dy = masked(y, splitmix64(seed));
        errors[idx] = {std::abs(debiased_bw(dx, dy).squared_distance - truth),
                       std::abs(naive_bw(dx, dy).squared_distance - truth)};
    });

    MnarReport report;
    for (std::size_t cell = 0; cell < ne * np; ++cell) {
        for (int e = 0; e < 2; ++e) {
            std::vector<double> v;
            for (std::size_t r = 0; r < reps; ++r) v.push_back(errors[cell * reps + r][e]);
            MnarCell c;
            c.eps = cfg.eps_grid[cell / np];
            c.p = cfg.p_grid[cell % np];
            c.estimator = e == 0 ? "debiased" : "naive";
            c.error = quartiles(std::move(v));
            report.cells.push_back(std::move(c));
        }
    }
    return report;
}

// ---------------------------------------------------------------- domain adaptation

namespace {

MatrixXd mean_impute(const MaskedDataset<double>& data)
{
    MatrixXd out = data.values();
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
        double sum = 0.0;
        Eigen::Index count = 0;
        for (Eigen::Index i = 0; i < data.rows(); ++i)
            if (data.mask().observed(i, j)) {
                sum += data.values()(i, j);
                ++count;
            }
        const double mean = count ? sum / double(count) : 0.0;
        for (Eigen::Index i = 0; i < data.rows(); ++i)
            if (!data.mask().observed(i, j)) out(i, j) = mean;
    }
    return out;
}

bool well_conditioned(const MatrixXd& cov)
{
    const auto eig = detail::symmetric_eigen(cov);
    const double top = eig.values.cwiseAbs().maxCoeff();
    return top > 0.0 && eig.values.minCoeff() > 1e-10 * top;
}

} // namespace

DaReport run_domain_adaptation(const DomainAdaptationConfig& cfg, const RunContext& ctx)
{
    const Eigen::Index d = cfg.d;
    const std::size_t reps = std::size_t(cfg.replicates), ns = cfg.shifts.size();
    std::vector<std::vector<DaRow>> blocks(reps * ns);

    parallel_for(blocks.size(), ctx.threads, [&](std::size_t idx) {
        const std::size_t r = idx / ns, s = idx % ns;
        const std::string& shift = cfg.shifts[s];
        // The source task is shared by all shifts of a replicate.
        Rng rng(replicate_seed(ctx.seed, tag_da, r));
        const ClusterModel model =
            make_cluster_model(d, cfg.clusters_per_class, cfg.class_sep, rng, cfg.informative, cfg.redundant);
        const LabeledSample labeled = model.sample(cfg.n_labeled, rng);
        const LinearClassifier clf = train_logistic(labeled.x, labeled.labels, cfg.l2);

        Rng srng = rng.split(1 + s);
        std::function<MatrixXd(const MatrixXd&)> apply_shift = [](const MatrixXd& x) { return x; };
        if (shift == "linear") {
            const MatrixXd a = random_spd(d, cfg.shift_lo, cfg.shift_hi, srng);
            VectorXd b(d);
            for (Eigen::Index k = 0; k < d; ++k) b(k) = srng.uniform(-cfg.shift_offset, cfg.shift_offset);
            apply_shift = [a, b](const MatrixXd& x) -> MatrixXd { return (x * a.transpose()).rowwise() + b.transpose(); };
        } else if (shift == "nonlinear") {
            apply_shift = [](const MatrixXd& x) -> MatrixXd { return x.array().cos().matrix(); };
        }
        const LabeledSample target = model.sample(cfg.n_target, srng);
        const MatrixXd target_x = apply_shift(target.x);
        const auto target_summary = empirical_summary(target_x);
        // Small unlabeled sample from the source domain; this is the one with missing values.
        const MatrixXd small_source = model.sample(cfg.n_align, srng).x;
        const double unaligned = clf.accuracy(target_x, target.labels);

        for (std::size_t m = 0; m < cfg.mechanisms.size(); ++m) {
            const std::string& mech = cfg.mechanisms[m];
            const VectorXd p = VectorXd::Constant(d, cfg.p);
            const std::uint64_t mseed = splitmix64(replicate_seed(ctx.seed, tag_da, r) + 7919 * (s * 16 + m + 1));
            const Mask mask = mech == "mcar" ? generate_mcar_mask(small_source.rows(), d, p, mseed)
                                             : generate_mnar_mask(small_source, p, cfg.mnar_eps, cfg.alpha, mseed);
            auto data = apply_mask_zero_impute(small_source, mask, p);
            if (mech == "mnar") data = data.with_probs(estimate_missingness<double>(mask));

            auto row = [&](const std::string& method, double acc, const std::string& status) {
                blocks[idx].push_back({std::int64_t(r), shift, mech, method, acc, status});
            };
            // Target samples are pushed onto the estimated source distribution, then classified.
            auto evaluate = [&](const GaussianSummary<double>& source_estimate) {
                return clf.accuracy(linear_monge_map(target_summary, source_estimate).apply(target_x), target.labels);
            };

            try {
                row("debiased", evaluate(debiased_moments(data).projected), "ok");
            } catch (const Error&) {
                row("debiased", nan, "failed");
            }
            try {
                row("mean_imputation", evaluate(empirical_summary(mean_impute(data))), "ok");
            } catch (const Error&) {
                row("mean_imputation", nan, "failed");
            }
            if (mech == "mnar") {
                row("complete_case", nan, "not_reported_mnar");
            } else {
                const auto cc = complete_case_filter(data);
                if (cc.rows.rows() < d + 1)
                    row("complete_case", nan, "too_few_rows");
                else if (const auto summary = empirical_summary(cc.rows); !well_conditioned(summary.cov))
                    row("complete_case", nan, "singular_covariance");
                else
                    row("complete_case", evaluate(summary), "ok");
            }
            row("unaligned", unaligned, "ok");
        }
    });

    DaReport report;
    for (auto& b : blocks) report.rows.insert(report.rows.end(), b.begin(), b.end());
    return report;
}

// ---------------------------------------------------------------- selection benchmark

namespace {

struct SelectionInstance {
    MatrixXd truth_x, truth_y;
    MaskedDataset<double> x, y;
};

SelectionInstance selection_instance(const SelectionBenchmarkConfig& cfg, const Table* table, std::uint64_t seed)
{
    Rng rng(seed, 0);
    MatrixXd tx, ty;
    double px = cfg.p_x, py = cfg.p_y;
    if (cfg.mode == "random_projection") {
        const LabeledSample moons = make_moons(2 * cfg.n_per_class, cfg.moons_noise, rng);
        const MatrixXd proj = random_projection(2, cfg.d, rng);
        tx = rows_with_label(moons, 1.0) * proj;
        ty = rows_with_label(moons, -1.0) * proj;
    } else if (cfg.mode == "two_clouds") {
        const LabeledSample s = make_classification(2 * cfg.n_per_class, cfg.d, 2, cfg.class_sep, rng);
        tx = rows_with_label(s, 1.0);
        ty = rows_with_label(s, -1.0);
    } else {
        const auto label_it = std::find(table->names.begin(), table->names.end(), cfg.label_column);
        require(label_it != table->names.end(), "label column '" + cfg.label_column + "' not found");
        require(table->mask.observed_count() == table->values.size(), "dataset mode expects a complete table");
        const Eigen::Index lc = label_it - table->names.begin();
        std::vector<Eigen::Index> features;
        for (Eigen::Index j = 0; j < table->values.cols(); ++j)
            if (j != lc) features.push_back(j);
        std::vector<Eigen::Index> pos, neg;
        for (Eigen::Index i = 0; i < table->values.rows(); ++i)
            (table->values(i, lc) == cfg.positive_label ? pos : neg).push_back(i);
        require(pos.size() >= 2 && neg.size() >= 2, "each class needs at least two rows");
        tx = table->values(pos, features);
        ty = table->values(neg, features);
        px = 1.0 - cfg.p_pos;
        py = 1.0 - cfg.p_neg;
    }
    const VectorXd pvx = VectorXd::Constant(tx.cols(), px), pvy = VectorXd::Constant(ty.cols(), py);
    auto x = apply_mask_zero_impute(tx, generate_mcar_mask(tx.rows(), tx.cols(), pvx, splitmix64(seed + 1)), pvx);
    auto y = apply_mask_zero_impute(ty, generate_mcar_mask(ty.rows(), ty.cols(), pvy, splitmix64(seed + 2)), pvy);
    if (cfg.minmax) {
        auto [sx, parx] = minmax_scale(x);
        auto [sy, pary] = minmax_scale(y);
        tx = minmax_apply(tx, parx);
        ty = minmax_apply(ty, pary);
        x = std::move(sx);
        y = std::move(sy);
    }
    return {std::move(tx), std::move(ty), std::move(x), std::move(y)};
}

double ot_value(const CostMatrix<double>& cost, double eps)
{
    const auto sol = solve_ot(cost, eps);
    return eps == 0.0 ? sol.value : mutual_information_value(sol, eps);
}

} // namespace

SelectionBenchmarkReport run_selection_benchmark(const SelectionBenchmarkConfig& cfg, const RunContext& ctx)
{
    std::optional<Table> table;
    if (cfg.mode == "dataset") {
        if (!fs::exists(cfg.csv)) throw Error("input CSV not found: " + cfg.csv);
        table = read_csv(cfg.csv);
    }
    const auto& grid = cfg.lambda_grid;
    const std::size_t reps = std::size_t(cfg.replicates), ng = grid.size();
    SelectionConfig scfg;
    scfg.completion = completion_of(cfg.completer);
    scfg.delta_val = cfg.delta_val;
    scfg.folds = std::size_t(cfg.folds);
    scfg.eps = cfg.criterion_eps;
    scfg.estimate_probs = cfg.estimate_probs;
    scfg.warm_start = cfg.warm_start;

    std::vector<SelectionBenchmarkReport> parts(reps);
    parallel_for(reps, ctx.threads, [&](std::size_t r) {
        auto& part = parts[r];
        const std::uint64_t seed = replicate_seed(ctx.seed, tag_selection, r);
        const SelectionInstance inst = selection_instance(cfg, table ? &*table : nullptr, seed);
        const MatrixXd metric = MatrixXd::Identity(inst.truth_x.cols(), inst.truth_x.cols());
        SelectionConfig rc = scfg;
        rc.seed = seed;

        const auto path_x = complete_path(inst.x, grid, rc.completion, rc.warm_start);
        const auto path_y = complete_path(inst.y, grid, rc.completion, rc.warm_start);
        const auto singles = single_grid(grid);

        // Score curves; chosen (lambda_x, lambda_y) per criterion.
        std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> chosen;
        auto record = [&](const std::string& dataset, SelectionReport rep) {
            const std::string name = to_string(rep.criterion);
            part.curves.push_back({std::int64_t(r), dataset, name, std::move(rep)});
        };
        for (const auto& name : cfg.criteria) {
            const Criterion crit = criterion_from_string(name);
            if (crit == Criterion::frobenius) {
                auto rx = select(singles, crit, rc, inst.x);
                auto ry = select(singles, crit, rc, inst.y);
                chosen.push_back({name, {rx.chosen, ry.chosen}});
                record("x", std::move(rx));
                record("y", std::move(ry));
            } else if (crit == Criterion::bw) {
                auto score = [&](const MaskedDataset<double>& data, const std::vector<MatrixXd>& path) {
                    SelectionReport rep;
                    rep.criterion = crit;
                    rep.grid = singles;
                    rep.replicate_seed = seed;
                    const auto reference = raw_summary(data, rc.estimate_probs);
                    for (std::size_t k = 0; k < ng; ++k)
                        rep.scores.push_back(gaussian_score(empirical_summary(path[k]), reference, rc.eps));
                    rep.chosen = argmin_score(rep.grid, rep.scores);
                    return rep;
                };
                auto rx = score(inst.x, path_x);
                auto ry = score(inst.y, path_y);
                chosen.push_back({name, {rx.chosen, ry.chosen}});
                record("x", std::move(rx));
                record("y", std::move(ry));
            } else {
                SelectionReport rep;
                rep.criterion = crit;
                rep.grid = pair_grid(grid, grid);
                rep.replicate_seed = seed;
                const double debiased = gaussian_score(raw_summary(inst.x, rc.estimate_probs),
                                                       raw_summary(inst.y, rc.estimate_probs), rc.eps);
                std::vector<GaussianSummary<double>> sx, sy;
                for (std::size_t k = 0; k < ng; ++k) {
                    sx.push_back(empirical_summary(path_x[k]));
                    sy.push_back(empirical_summary(path_y[k]));
                }
                for (std::size_t i = 0; i < ng; ++i)
                    for (std::size_t j = 0; j < ng; ++j)
                        rep.scores.push_back(std::abs(gaussian_score(sx[i], sy[j], rc.eps) - debiased));
                rep.chosen = argmin_score(rep.grid, rep.scores);
                chosen.push_back({name, {rep.chosen / ng, rep.chosen % ng}});
                record("xy", std::move(rep));
            }
        }

        // True relative Frobenius error along the grid.
        for (int side = 0; side < 2; ++side) {
            const auto& path = side == 0 ? path_x : path_y;
            const MatrixXd& truth = side == 0 ? inst.truth_x : inst.truth_y;
            SelectionReport rep;
            rep.criterion = Criterion::frobenius;
            rep.grid = singles;
            rep.replicate_seed = seed;
            for (std::size_t k = 0; k < ng; ++k) rep.scores.push_back((path[k] - truth).norm() / truth.norm());
            rep.chosen = argmin_score(rep.grid, rep.scores);
            part.curves.push_back({std::int64_t(r), side == 0 ? "x" : "y", "true_frobenius", std::move(rep)});
        }

        for (double eps : cfg.ot_eps) {
            const double truth = ot_value(cost_matrix(inst.truth_x, inst.truth_y, metric), eps);
            const double naive = relative_error(ot_value(cost_matrix(inst.x.values(), inst.y.values(), metric), eps), truth);
            part.baseline.push_back({std::int64_t(r), "zero_imputation", 0.0, 0.0, eps, naive});
            std::map<std::pair<std::size_t, std::size_t>, double> cache;
            auto pair_error = [&](std::size_t i, std::size_t j) {
                auto it = cache.find({i, j});
                if (it != cache.end()) return it->second;
                const double e = relative_error(ot_value(cost_matrix(path_x[i], path_y[j], metric), eps), truth);
                cache[{i, j}] = e;
                return e;
            };
            for (const auto& [name, ij] : chosen)
                part.outcomes.push_back(
                    {std::int64_t(r), name, grid[ij.first], grid[ij.second], eps, pair_error(ij.first, ij.second)});
            if (cfg.heatmap) {
                SelectionOutcome best{std::int64_t(r), "oracle", 0.0, 0.0, eps, std::numeric_limits<double>::infinity()};
                for (std::size_t i = 0; i < ng; ++i)
                    for (std::size_t j = 0; j < ng; ++j) {
                        const double e = pair_error(i, j);
                        part.heatmap.push_back({std::int64_t(r), eps, grid[i], grid[j], e, naive,
                                                naive > 0.0 ? e / naive : std::numeric_limits<double>::infinity()});
                        if (e < best.relative_error) best = {std::int64_t(r), "oracle", grid[i], grid[j], eps, e};
                    }
                part.oracle.push_back(best);
            }
        }
    });

    SelectionBenchmarkReport report;
    report.lambda_grid = grid;
    for (auto& p : parts) {
        auto append = [](auto& dst, auto& src) { dst.insert(dst.end(), src.begin(), src.end()); };
        append(report.outcomes, p.outcomes);
        append(report.curves, p.curves);
        append(report.heatmap, p.heatmap);
        append(report.baseline, p.baseline);
        append(report.oracle, p.oracle);
    }
    return report;
}

// ---------------------------------------------------------------- output

std::string experiment_dir(const RunContext& ctx, const std::string& experiment)
{
    const fs::path dir = fs::path(ctx.out_dir) / experiment;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
    return dir.string();
}

void write_manifest(const std::string& dir, const std::string& experiment, const Json& config, const RunContext& ctx,
                    const std::vector<std::string>& files, const Json& extra)
{
    Json j{{"experiment", experiment},
           {"version", version_string},
           {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                         std::to_string(EIGEN_MINOR_VERSION)},
           {"seed", ctx.seed},
           {"config", config},
           {"files", files}};
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    write_json((fs::path(dir) / "manifest.json").string(), j);
}

namespace {

void write_convergence_rows(const std::string& path, const std::vector<ConvergenceRow>& rows, bool with_p)
{
    auto out = open_out(path);
    out << (with_p ? "p," : "") << "n,replicate,estimator,bw_error,mean_term,trace_term,cross_term\n";
    for (const auto& r : rows) {
        if (with_p) out << fmt(r.p) << ',';
        out << r.n << ',' << r.replicate << ',' << r.estimator << ',' << fmt(r.bw_error) << ',' << fmt(r.mean_term)
            << ',' << fmt(r.trace_term) << ',' << fmt(r.cross_term) << '\n';
    }
}

void write_convergence_summary(const std::string& path, const std::vector<ConvergenceRow>& rows, bool with_p)
{
    std::map<std::tuple<double, std::int64_t, std::string>, std::vector<double>> groups;
    for (const auto& r : rows) groups[{r.p, r.n, r.estimator}].push_back(r.bw_error);
    auto out = open_out(path);
    out << (with_p ? "p," : "") << "n,estimator,median,q25,q75,count\n";
    for (auto& [key, values] : groups) {
        const auto q = quartiles(values);
        if (with_p) out << fmt(std::get<0>(key)) << ',';
        out << std::get<1>(key) << ',' << std::get<2>(key) << ',' << fmt(q.median) << ',' << fmt(q.q25) << ','
            << fmt(q.q75) << ',' << q.count << '\n';
    }
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

} // namespace

std::vector<std::string> write_report(const ConvergenceReport& r, const std::string& dir)
{
    std::vector<std::string> files{"convergence.csv", "convergence_summary.csv"};
    write_convergence_rows(join(dir, files[0]), r.rows, false);
    write_convergence_summary(join(dir, files[1]), r.rows, false);
    if (!r.sweep_rows.empty()) {
        files.push_back("uniform_p.csv");
        files.push_back("uniform_p_summary.csv");
        write_convergence_rows(join(dir, files[2]), r.sweep_rows, true);
        write_convergence_summary(join(dir, files[3]), r.sweep_rows, true);
    }
    return files;
}

std::vector<std::string> write_report(const MnarReport& r, const std::string& dir)
{
    auto out = open_out(join(dir, "mnar.csv"));
    out << "eps,p,estimator,median,q25,q75,count\n";
    for (const auto& c : r.cells)
        out << fmt(c.eps) << ',' << fmt(c.p) << ',' << c.estimator << ',' << fmt(c.error.median) << ','
            << fmt(c.error.q25) << ',' << fmt(c.error.q75) << ',' << c.error.count << '\n';
    return {"mnar.csv"};
}

std::vector<std::string> write_report(const DaReport& r, const std::string& dir)
{
    {
        auto out = open_out(join(dir, "accuracy.csv"));
        out << "replicate,shift,mechanism,method,accuracy,status\n";
        for (const auto& row : r.rows)
            out << row.replicate << ',' << row.shift << ',' << row.mechanism << ',' << row.method << ','
                << fmt(row.accuracy) << ',' << row.status << '\n';
    }
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> groups;
    std::vector<std::tuple<std::string, std::string, std::string>> order;
    for (const auto& row : r.rows) {
        const auto key = std::make_tuple(row.shift, row.mechanism, row.method);
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(row.accuracy);
    }
    auto out = open_out(join(dir, "accuracy_summary.csv"));
    out << "shift,mechanism,method,median,q25,q75,count\n";
    for (const auto& key : order) {
        const auto q = quartiles(groups[key]);
        out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ',' << fmt(q.median) << ','
            << fmt(q.q25) << ',' << fmt(q.q75) << ',' << q.count << '\n';
    }
    return {"accuracy.csv", "accuracy_summary.csv"};
}

std::vector<std::string> write_report(const SelectionBenchmarkReport& r, const std::string& dir)
{
    std::vector<std::string> files{"chosen.csv", "curves.csv", "errors_summary.csv"};
    {
        auto out = open_out(join(dir, files[0]));
        out << "replicate,criterion,lambda_x,lambda_y,eps,relative_error\n";
        auto emit = [&](const std::vector<SelectionOutcome>& v) {
            for (const auto& o : v)
                out << o.replicate << ',' << o.criterion << ',' << fmt(o.lambda_x) << ',' << fmt(o.lambda_y) << ','
                    << fmt(o.eps) << ',' << fmt(o.relative_error) << '\n';
        };
        emit(r.outcomes);
        emit(r.baseline);
        emit(r.oracle);
    }
    {
        auto out = open_out(join(dir, files[1]));
        out << "replicate,dataset,criterion,lambda,lambda_y,fold,score\n";
        for (const auto& curve : r.curves) {
            const auto& c = curve.report;
            for (std::size_t g = 0; g < c.grid.size(); ++g) {
                const std::string lx = fmt(c.grid[g][0]), ly = c.grid[g].size() > 1 ? fmt(c.grid[g][1]) : "NA";
                const std::string prefix =
                    std::to_string(curve.replicate) + ',' + curve.dataset + ',' + curve.name + ',' + lx + ',' + ly + ',';
                out << prefix << "mean," << fmt(c.scores[g]) << '\n';
                if (g < c.fold_scores.size())
                    for (std::size_t f = 0; f < c.fold_scores[g].size(); ++f)
                        out << prefix << f << ',' << fmt(c.fold_scores[g][f]) << '\n';
            }
        }
    }
    {
        std::map<std::pair<std::string, double>, std::vector<double>> groups;
        std::vector<std::pair<std::string, double>> order;
        auto add = [&](const std::vector<SelectionOutcome>& v) {
            for (const auto& o : v) {
                const auto key = std::make_pair(o.criterion, o.eps);
                if (!groups.count(key)) order.push_back(key);
                groups[key].push_back(o.relative_error);
            }
        };
        add(r.outcomes);
        add(r.baseline);
        add(r.oracle);
        auto out = open_out(join(dir, files[2]));
        out << "criterion,eps,median,q25,q75,count\n";
        for (const auto& key : order) {
            const auto q = quartiles(groups[key]);
            out << key.first << ',' << fmt(key.second) << ',' << fmt(q.median) << ',' << fmt(q.q25) << ','
                << fmt(q.q75) << ',' << q.count << '\n';
        }
    }
    if (!r.heatmap.empty()) {
        files.push_back("heatmap.csv");
        auto out = open_out(join(dir, files.back()));
        out << "replicate,eps,lambda_x,lambda_y,relative_error,naive_error,ratio\n";
        for (const auto& h : r.heatmap)
            out << h.replicate << ',' << fmt(h.eps) << ',' << fmt(h.lambda_x) << ',' << fmt(h.lambda_y) << ','
                << fmt(h.relative_error) << ',' << fmt(h.naive_error) << ',' << fmt(h.ratio) << '\n';
        // Replicate mean per grid cell.
        std::map<std::tuple<double, double, double>, std::pair<double, double>> sums;
        std::map<std::tuple<double, double, double>, std::size_t> counts;
        for (const auto& h : r.heatmap) {
            const auto key = std::make_tuple(h.eps, h.lambda_x, h.lambda_y);
            sums[key].first += h.relative_error;
            sums[key].second += h.ratio;
            ++counts[key];
        }
        files.push_back("heatmap_mean.csv");
        auto mean_out = open_out(join(dir, files.back()));
        mean_out << "eps,lambda_x,lambda_y,relative_error,ratio\n";
        for (const auto& [key, s] : sums) {
            const double c = double(counts[key]);
            mean_out << fmt(std::get<0>(key)) << ',' << fmt(std::get<1>(key)) << ',' << fmt(std::get<2>(key)) << ','
                     << fmt(s.first / c) << ',' << fmt(s.second / c) << '\n';
        }
    }
    return files;
}

} // namespace otna
