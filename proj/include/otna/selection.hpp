#pragma once

#include <algorithm>
#include <concepts>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "otna/completion.hpp"
#include "otna/gaussian_ot.hpp"

namespace otna {

enum class Completer { isvt, soft_impute };

struct CompletionConfig {
    Completer method = Completer::isvt;
    double rel_tol = 1e-5;
    std::size_t max_iter = 500;
    StopNorm stop_norm = StopNorm::spectral;
};

template <typename Scalar>
CompletionResult<Scalar> complete(const MaskedDataset<Scalar>& data, Scalar lambda, const CompletionConfig& cfg,
                                  const std::optional<Matrix<Scalar>>& warm_start = std::nullopt)
{
    if (cfg.method == Completer::soft_impute) {
        SoftImputeOptions<Scalar> opts;
        opts.rel_tol = Scalar(cfg.rel_tol);
        opts.max_iter = cfg.max_iter;
        opts.warm_start = warm_start;
        return soft_impute(data, lambda, opts);
    }
    IsvtOptions<Scalar> opts;
    opts.max_iter = cfg.max_iter;
    opts.stop_norm = cfg.stop_norm;
    return isvt(data, lambda, opts);
}

/// Log-spaced grid, lo and hi included.
inline std::vector<double> log_grid(double lo, double hi, std::size_t count)
{
    require(lo > 0.0 && hi >= lo && count >= 1, "invalid log grid");
    std::vector<double> g(count);
    if (count == 1) {
        g[0] = lo;
        return g;
    }
    const double a = std::log10(lo), b = std::log10(hi);
    for (std::size_t k = 0; k < count; ++k) g[k] = std::pow(10.0, a + (b - a) * double(k) / double(count - 1));
    return g;
}

/// Default candidate set: 20 log-spaced values in [1e-2, 1e2].
inline std::vector<double> default_lambda_grid() { return log_grid(1e-2, 1e2, 20); }

/// Training/validation split of the observed entries.
struct HoldoutSplit {
    Mask train;
    Mask validation;
};

/// Moves round(share * #observed) observed entries, chosen uniformly at random, into a validation mask.
inline HoldoutSplit holdout_split(const Mask& mask, double share, Rng& rng)
{
    require(share >= 0.0 && share < 1.0, "validation share must lie in [0, 1)");
    std::vector<Eigen::Index> observed;
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
        for (Eigen::Index i = 0; i < mask.rows(); ++i)
            if (mask.observed(i, j)) observed.push_back(j * mask.rows() + i);
    const auto take = static_cast<std::size_t>(std::llround(share * double(observed.size())));
    // Partial Fisher-Yates.
    for (std::size_t k = 0; k < take; ++k) {
        const std::size_t pick = k + static_cast<std::size_t>(rng.index(observed.size() - k));
        std::swap(observed[k], observed[pick]);
    }
    MaskMatrix train = mask.entries();
    MaskMatrix val = MaskMatrix::Zero(mask.rows(), mask.cols());
    for (std::size_t k = 0; k < take; ++k) {
        const Eigen::Index i = observed[k] % mask.rows(), j = observed[k] / mask.rows();
        train(i, j) = 0;
        val(i, j) = 1;
    }
    return {Mask(std::move(train)), Mask(std::move(val))};
}

/// Relative Frobenius error on held-out entries, averaged over folds.
/// Returns +inf when a fold has no validation entries or a zero denominator.
template <typename Scalar, typename CompleteFn>
    requires std::invocable<CompleteFn&, const MaskedDataset<Scalar>&>
Scalar frobenius_cv_score(const MaskedDataset<Scalar>& data, double delta_val, std::size_t folds, std::uint64_t seed,
                          CompleteFn&& completer, std::vector<Scalar>* per_fold = nullptr)
{
    require(delta_val > 0.0 && delta_val < 1.0, "validation share must lie in (0, 1)");
    require(folds >= 1, "at least one fold is required");
    const Scalar inf = std::numeric_limits<Scalar>::infinity();
    Scalar total(0);
    for (std::size_t f = 0; f < folds; ++f) {
        Rng rng(seed, 1000 + f);
        const HoldoutSplit split = holdout_split(data.mask(), delta_val, rng);
        const Matrix<Scalar> val = split.validation.template as<Scalar>();
        const Scalar denom = val.cwiseProduct(data.values()).norm();
        Scalar score = inf;
        if (split.validation.observed_count() > 0 && denom > Scalar(0)) {
            const MaskedDataset<Scalar> train(data.values().cwiseProduct(split.train.template as<Scalar>()), split.train,
                                              data.probs());
            const Matrix<Scalar> filled = completer(train);
            score = val.cwiseProduct(filled - data.values()).norm() / denom;
        }
        if (per_fold) per_fold->push_back(score);
        total += score;
    }
    return total / Scalar(folds);
}

template <typename Scalar>
Scalar frobenius_cv_score(const MaskedDataset<Scalar>& data, Scalar lambda, double delta_val, std::size_t folds,
                          std::uint64_t seed, const CompletionConfig& cfg = {}, std::vector<Scalar>* per_fold = nullptr)
{
    return frobenius_cv_score(
        data, delta_val, folds, seed,
        [&](const MaskedDataset<Scalar>& train) { return complete(train, lambda, cfg).completed; }, per_fold);
}

/// Debiased moments of the raw masked sample, with estimated or stored probabilities.
template <typename Scalar>
GaussianSummary<Scalar> raw_summary(const MaskedDataset<Scalar>& data, bool estimate_probs)
{
    const MaskedDataset<Scalar> used = estimate_probs ? data.with_probs(estimate_missingness<Scalar>(data.mask())) : data;
    return debiased_moments(used).projected;
}

/// Plain BW (eps == 0) or entropic Gaussian OT (eps > 0) between two summaries.
template <typename Scalar>
Scalar gaussian_score(const GaussianSummary<Scalar>& a, const GaussianSummary<Scalar>& b, Scalar eps)
{
    return eps > Scalar(0) ? entropic_gaussian_ot(a, b, eps) : bures_wasserstein(a, b).squared_distance;
}

/// Validation-free criterion: Gaussian OT between the completed matrix
/// (fully observed) and the debiased summary of the masked input.
template <typename Scalar>
Scalar bw_score_of(const Matrix<Scalar>& completed, const MaskedDataset<Scalar>& data, Scalar eps, bool estimate_probs = true)
{
    return gaussian_score(empirical_summary(completed), raw_summary(data, estimate_probs), eps);
}

template <typename Scalar>
Scalar bw_score(const MaskedDataset<Scalar>& data, Scalar lambda, Scalar eps, const CompletionConfig& cfg = {},
                bool estimate_probs = true)
{
    require(eps >= Scalar(0), "regularization must be nonnegative");
    return bw_score_of(complete(data, lambda, cfg).completed, data, eps, estimate_probs);
}

/// |BW(completed x, completed y) - BW^(x, y)|.
template <typename Scalar>
Scalar cross_bw_score_of(const Matrix<Scalar>& completed_x, const Matrix<Scalar>& completed_y,
                         const MaskedDataset<Scalar>& x, const MaskedDataset<Scalar>& y, Scalar eps = Scalar(0),
                         bool estimate_probs = true)
{
    const Scalar imputed = gaussian_score(empirical_summary(completed_x), empirical_summary(completed_y), eps);
    const Scalar debiased = gaussian_score(raw_summary(x, estimate_probs), raw_summary(y, estimate_probs), eps);
    return std::abs(imputed - debiased);
}

template <typename Scalar>
Scalar cross_bw_score(const MaskedDataset<Scalar>& x, const MaskedDataset<Scalar>& y, Scalar lambda_x, Scalar lambda_y,
                      const CompletionConfig& cfg = {}, Scalar eps = Scalar(0), bool estimate_probs = true)
{
    return cross_bw_score_of(complete(x, lambda_x, cfg).completed, complete(y, lambda_y, cfg).completed, x, y, eps,
                             estimate_probs);
}

enum class Criterion { frobenius, bw, cross_bw };

inline std::string to_string(Criterion c)
{
    switch (c) {
    case Criterion::frobenius: return "frobenius";
    case Criterion::bw: return "bw";
    case Criterion::cross_bw: return "cross_bw";
    }
    return "unknown";
}

inline Criterion criterion_from_string(const std::string& s)
{
    if (s == "frobenius") return Criterion::frobenius;
    if (s == "bw") return Criterion::bw;
    if (s == "cross_bw") return Criterion::cross_bw;
    throw Error("unknown selection criterion: " + s);
}

struct SelectionConfig {
    CompletionConfig completion;
    double delta_val = 0.2;
    std::size_t folds = 3;
    /// Regularization of the Gaussian criteria; 0 for plain BW.
    double eps = 0.0;
    bool estimate_probs = true;
    std::uint64_t seed = 0;
    /// Reuse the previous solution along a descending grid (soft-impute only).
    bool warm_start = false;
};

/// One candidate: a single lambda, or (lambda_x, lambda_y) for cross_bw.
using GridPoint = std::vector<double>;

struct SelectionReport {
    Criterion criterion = Criterion::bw;
    std::vector<GridPoint> grid;
    std::vector<double> scores;
    /// Per-fold scores (frobenius only).
    std::vector<std::vector<double>> fold_scores;
    std::size_t chosen = 0;
    std::uint64_t replicate_seed = 0;
};

/// Argmin with ties resolved toward the lexicographically smallest grid point.
inline std::size_t argmin_score(const std::vector<GridPoint>& grid, const std::vector<double>& scores)
{
    require(!scores.empty() && scores.size() == grid.size(), "scores and grid disagree");
    std::size_t best = scores.size();
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (!std::isfinite(scores[k])) continue;
        if (best == scores.size() || scores[k] < scores[best] || (scores[k] == scores[best] && grid[k] < grid[best]))
            best = k;
    }
    if (best == scores.size()) throw Error("every candidate has an infinite score");
    return best;
}

/// Pair grid for cross_bw: every (lambda_x, lambda_y) combination.
inline std::vector<GridPoint> pair_grid(const std::vector<double>& gx, const std::vector<double>& gy)
{
    std::vector<GridPoint> out;
    for (double a : gx)
        for (double b : gy) out.push_back({a, b});
    return out;
}

inline std::vector<GridPoint> single_grid(const std::vector<double>& g)
{
    std::vector<GridPoint> out;
    for (double a : g) out.push_back({a});
    return out;
}

/// Completions of one dataset for each lambda of a grid. With warm starts,
/// lambdas are visited in decreasing order and each solve starts from the
/// previous solution.
template <typename Scalar>
std::vector<Matrix<Scalar>> complete_path(const MaskedDataset<Scalar>& data, const std::vector<double>& lambdas,
                                          const CompletionConfig& cfg, bool warm_start)
{
    std::vector<Matrix<Scalar>> out(lambdas.size());
    std::vector<std::size_t> order(lambdas.size());
    std::iota(order.begin(), order.end(), 0);
    if (!(warm_start && cfg.method == Completer::soft_impute)) {
        for (std::size_t k : order) out[k] = complete(data, Scalar(lambdas[k]), cfg).completed;
        return out;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lambdas[a] > lambdas[b]; });
    std::optional<Matrix<Scalar>> warm;
    for (std::size_t k : order) {
        out[k] = complete(data, Scalar(lambdas[k]), cfg, warm).completed;
        warm = out[k];
    }
    return out;
}

/// Scores every grid point under one criterion and picks the minimizer.
/// cross_bw needs `y` and pair grid points; the other criteria use `x` only.
template <typename Scalar>
SelectionReport select(const std::vector<GridPoint>& grid, Criterion criterion, const SelectionConfig& cfg,
                       const MaskedDataset<Scalar>& x, const MaskedDataset<Scalar>* y = nullptr)
{
    require(!grid.empty(), "selection grid is empty");
    SelectionReport rep;
    rep.criterion = criterion;
    rep.grid = grid;
    rep.replicate_seed = cfg.seed;
    rep.scores.resize(grid.size());
    const Scalar eps(cfg.eps);

    if (criterion == Criterion::cross_bw) {
        require(y != nullptr, "cross_bw needs two datasets");
        std::vector<double> lx, ly;
        for (const auto& p : grid) {
            require(p.size() == 2, "cross_bw grid points are (lambda_x, lambda_y) pairs");
            lx.push_back(p[0]);
            ly.push_back(p[1]);
        }
        auto unique = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
            return v;
        };
        const auto ux = unique(lx), uy = unique(ly);
        const auto cx = complete_path(x, ux, cfg.completion, cfg.warm_start);
        const auto cy = complete_path(*y, uy, cfg.completion, cfg.warm_start);
        const Scalar debiased = gaussian_score(raw_summary(x, cfg.estimate_probs), raw_summary(*y, cfg.estimate_probs), eps);
        for (std::size_t k = 0; k < grid.size(); ++k) {
            const auto ix = std::lower_bound(ux.begin(), ux.end(), lx[k]) - ux.begin();
            const auto iy = std::lower_bound(uy.begin(), uy.end(), ly[k]) - uy.begin();
            const Scalar imputed = gaussian_score(empirical_summary(cx[ix]), empirical_summary(cy[iy]), eps);
            rep.scores[k] = static_cast<double>(std::abs(imputed - debiased));
        }
    } else {
        std::vector<double> lambdas;
        for (const auto& p : grid) {
            require(p.size() == 1, "single-dataset criteria take scalar grid points");
            lambdas.push_back(p[0]);
        }
        if (criterion == Criterion::bw) {
            const auto path = complete_path(x, lambdas, cfg.completion, cfg.warm_start);
            const auto reference = raw_summary(x, cfg.estimate_probs);
            for (std::size_t k = 0; k < grid.size(); ++k)
                rep.scores[k] = static_cast<double>(gaussian_score(empirical_summary(path[k]), reference, eps));
        } else {
            rep.fold_scores.resize(grid.size());
            for (std::size_t k = 0; k < grid.size(); ++k) {
                std::vector<Scalar> folds;
                rep.scores[k] = static_cast<double>(frobenius_cv_score(x, Scalar(lambdas[k]), cfg.delta_val, cfg.folds,
                                                                       cfg.seed, cfg.completion, &folds));
                rep.fold_scores[k].assign(folds.begin(), folds.end());
            }
        }
    }
    rep.chosen = argmin_score(rep.grid, rep.scores);
    return rep;
}

} // namespace otna
