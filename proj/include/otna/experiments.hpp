#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "otna/discrete_ot.hpp"
#include "otna/selection.hpp"

namespace otna {

using Json = nlohmann::json;

/// Global run options shared by every experiment.
struct RunContext {
    std::string out_dir = "results";
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

/// Distinct, reproducible seed for replicate `r` of a run.
std::uint64_t replicate_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t r);

/// Runs fn(0..count-1) on up to `threads` workers. fn must only write to
/// per-index state; exceptions are rethrown for the lowest failing index.
template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn)
{
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, count));
    std::vector<std::exception_ptr> errors(count);
    auto body = [&](std::size_t w) {
        for (std::size_t k = w; k < count; k += workers) {
            try {
                fn(k);
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        body(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body, w);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Median and quartiles (linear interpolation between order statistics).
struct Quartiles {
    double q25 = 0.0;
    double median = 0.0;
    double q75 = 0.0;
    std::size_t count = 0;
};

Quartiles quartiles(std::vector<double> values);

// ---------------------------------------------------------------- two-step OT

struct TwoStepResult {
    OtSolution<double> solution;
    MatrixXd completed_x;
    MatrixXd completed_y;
    CostMatrix<double> cost;
    /// ||C^ - C||_F when ground truth was supplied.
    std::optional<double> cost_error;
};

/// Completes both datasets, then solves OT on the cost of the completions.
/// eps == 0 routes to the exact solver. Lambdas of 0 with full masks leave
/// the data untouched.
TwoStepResult two_step_entropic_ot(const MaskedDataset<double>& x, const MaskedDataset<double>& y, double lambda_x,
                                   double lambda_y, double eps, const MatrixXd& metric,
                                   const CompletionConfig& completion = {}, const MatrixXd* truth_x = nullptr,
                                   const MatrixXd* truth_y = nullptr);

/// Exact (eps == 0) or Sinkhorn OT on a cost matrix.
OtSolution<double> solve_ot(const CostMatrix<double>& cost, double eps);

// ---------------------------------------------------------------- configs

struct ConvergenceConfig {
    std::int64_t d = 5;
    std::vector<std::int64_t> sizes{64, 128, 256, 512, 1024, 2048, 4096};
    std::int64_t replicates = 50;
    double mean_scale = 1.0;
    double cov_lo = 0.5;
    double cov_hi = 2.0;
    bool diagonal = false;
    double p_lo = 0.3;
    double p_hi = 0.9;
    /// Explicit probabilities; empty means drawn from [p_lo, p_hi].
    std::vector<double> probs_x;
    std::vector<double> probs_y;
    /// Second side fully observed and drawn from the first Gaussian (bias-bound instance).
    bool y_complete = false;
    /// Fig. 4 variant: uniform p values swept on both sides.
    std::vector<double> uniform_p;
    std::int64_t sweep_replicates = 100;
    std::int64_t sweep_n = 1000;
    bool use_estimated_probs = false;
};

struct MnarConfig {
    std::int64_t d = 5;
    std::int64_t n = 1000;
    std::int64_t replicates = 20;
    std::vector<double> eps_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    std::vector<double> p_grid{0.3, 0.5, 0.7, 0.9};
    double alpha = 2.0;
    double mean_scale = 1.0;
    double cov_lo = 0.5;
    double cov_hi = 2.0;
    bool use_estimated_probs = false;
};

struct DomainAdaptationConfig {
    std::int64_t d = 5;
    std::int64_t n_labeled = 5000;
    std::int64_t n_target = 6000;
    /// n_s: small unlabeled source-domain sample, the one with missing values.
    std::int64_t n_align = 200;
    double p = 0.5;
    std::int64_t replicates = 100;
    std::vector<std::string> shifts{"linear", "nonlinear"};
    std::vector<std::string> mechanisms{"mcar", "mnar"};
    double mnar_eps = 1.0;
    double alpha = 2.0;
    std::int64_t clusters_per_class = 2;
    double class_sep = 1.0;
    /// make_classification layout: informative and redundant feature counts.
    std::int64_t informative = 2;
    std::int64_t redundant = 2;
    double l2 = 1e-3;
    /// Linear shift x -> A x + b: A symmetric with spectrum in [shift_lo, shift_hi],
    /// b uniform in [-shift_offset, shift_offset].
    double shift_lo = 0.5;
    double shift_hi = 2.0;
    double shift_offset = 1.0;
};

struct SelectionBenchmarkConfig {
    /// random_projection (moons lifted to d dims), two_clouds (two-class clusters) or dataset (CSV).
    std::string mode = "random_projection";
    std::int64_t replicates = 10;
    std::vector<double> lambda_grid;
    std::vector<std::string> criteria{"frobenius", "bw", "cross_bw"};
    std::string completer = "soft_impute";
    double delta_val = 0.2;
    std::int64_t folds = 3;
    bool warm_start = true;
    bool estimate_probs = true;
    /// OT regularizations evaluated for the chosen lambdas (0 = exact).
    std::vector<double> ot_eps{0.0};
    /// Gaussian-criterion regularization.
    double criterion_eps = 0.0;
    bool minmax = true;
    bool heatmap = true;
    // random_projection / two_clouds
    std::int64_t n_per_class = 100;
    std::int64_t d = 10;
    double moons_noise = 0.1;
    double p_x = 0.5;
    double p_y = 0.9;
    double class_sep = 1.0;
    // dataset
    std::string csv;
    std::string label_column = "Outcome";
    double positive_label = 1.0;
    double p_pos = 0.7;
    double p_neg = 0.3;
};

ConvergenceConfig convergence_config(const Json& j);
MnarConfig mnar_config(const Json& j);
DomainAdaptationConfig domain_adaptation_config(const Json& j);
SelectionBenchmarkConfig selection_config(const Json& j);

Json to_json(const ConvergenceConfig& c);
Json to_json(const MnarConfig& c);
Json to_json(const DomainAdaptationConfig& c);
Json to_json(const SelectionBenchmarkConfig& c);

// ---------------------------------------------------------------- experiments

struct ConvergenceRow {
    double p = 0.0; ///< uniform p for the sweep variant, 0 otherwise
    std::int64_t n = 0;
    std::int64_t replicate = 0;
    std::string estimator;
    double bw_error = 0.0;
    double mean_term = 0.0;
    double trace_term = 0.0;
    double cross_term = 0.0;
};

struct ConvergenceReport {
    std::vector<ConvergenceRow> rows;
    std::vector<ConvergenceRow> sweep_rows;
    double population_bw = 0.0;
    /// na_bias_lower_bound; set for the y_complete diagonal instance.
    std::optional<double> naive_lower_bound;
};

ConvergenceReport run_convergence(const ConvergenceConfig& cfg, const RunContext& ctx);

struct MnarCell {
    double eps = 0.0;
    double p = 0.0;
    std::string estimator;
    Quartiles error;
};

struct MnarReport {
    std::vector<MnarCell> cells;
};

MnarReport run_mnar_robustness(const MnarConfig& cfg, const RunContext& ctx);

struct DaRow {
    std::int64_t replicate = 0;
    std::string shift;
    std::string mechanism;
    std::string method;
    /// NaN when skipped.
    double accuracy = 0.0;
    std::string status = "ok";
};

struct DaReport {
    std::vector<DaRow> rows;
};

DaReport run_domain_adaptation(const DomainAdaptationConfig& cfg, const RunContext& ctx);

struct SelectionOutcome {
    std::int64_t replicate = 0;
    std::string criterion;
    double lambda_x = 0.0;
    double lambda_y = 0.0;
    double eps = 0.0;
    double relative_error = 0.0;
};

struct HeatmapCell {
    std::int64_t replicate = 0;
    double eps = 0.0;
    double lambda_x = 0.0;
    double lambda_y = 0.0;
    double relative_error = 0.0;
    double naive_error = 0.0;
    double ratio = 0.0;
};

/// One score curve: a selection criterion, or the true relative Frobenius
/// error ("true_frobenius"), for dataset x, y, or the pair xy.
struct ScoreCurve {
    std::int64_t replicate = 0;
    std::string dataset;
    std::string name;
    SelectionReport report;
};

struct SelectionBenchmarkReport {
    std::vector<SelectionOutcome> outcomes;
    std::vector<ScoreCurve> curves;
    std::vector<HeatmapCell> heatmap;
    /// Zero-imputation baseline per (replicate, eps).
    std::vector<SelectionOutcome> baseline;
    /// Best relative error over the grid, per (replicate, eps).
    std::vector<SelectionOutcome> oracle;
    std::vector<double> lambda_grid;
};

SelectionBenchmarkReport run_selection_benchmark(const SelectionBenchmarkConfig& cfg, const RunContext& ctx);

// ---------------------------------------------------------------- output

/// Creates <out>/<experiment> and returns its path.
std::string experiment_dir(const RunContext& ctx, const std::string& experiment);

/// manifest.json: config echo, version, seeds, produced files.
void write_manifest(const std::string& dir, const std::string& experiment, const Json& config, const RunContext& ctx,
                    const std::vector<std::string>& files, const Json& extra = Json::object());

std::vector<std::string> write_report(const ConvergenceReport& r, const std::string& dir);
std::vector<std::string> write_report(const MnarReport& r, const std::string& dir);
std::vector<std::string> write_report(const DaReport& r, const std::string& dir);
std::vector<std::string> write_report(const SelectionBenchmarkReport& r, const std::string& dir);

inline constexpr const char* version_string = "0.1.0";

} // namespace otna
