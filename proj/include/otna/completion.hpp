#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/SVD>

#include "otna/data_model.hpp"

namespace otna {

template <typename Scalar>
struct CompletionResult {
    Matrix<Scalar> completed;
    std::size_t iterations = 0;
    bool converged = false;
    Eigen::Index final_rank = 0;
    Scalar lambda{};
    /// L-infinity clip bound (ISVT); +inf for soft-impute.
    Scalar clip_bound{};
    /// Fixed-point residual |X - S_lambda(X^NA + (1 - Omega) * X)|_F of the returned matrix.
    Scalar residual{};
    /// Objective 0.5 |Omega (X - Z)|_F^2 + lambda |Z|_* per iteration (soft-impute, on request).
    std::vector<Scalar> objective_trace;
};

template <typename Scalar>
struct ThresholdedSvd {
    Matrix<Scalar> matrix;
    Eigen::Index rank = 0;
    Scalar nuclear_norm{};
};

/// U diag((s_i - lambda)_+) V^T.
template <typename Scalar>
ThresholdedSvd<Scalar> soft_threshold(const Matrix<Scalar>& a, Scalar lambda)
{
    require(lambda >= Scalar(0), "threshold must be nonnegative");
    require(a.allFinite(), "soft-thresholding needs finite input");
    ThresholdedSvd<Scalar> out;
    if (a.size() == 0) return out;
    Eigen::BDCSVD<Matrix<Scalar>> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector<Scalar> shrunk = (svd.singularValues().array() - lambda).cwiseMax(Scalar(0)).matrix();
    Eigen::Index rank = 0;
    while (rank < shrunk.size() && shrunk(rank) > Scalar(0)) ++rank;
    out.rank = rank;
    out.nuclear_norm = shrunk.sum();
    out.matrix = svd.matrixU().leftCols(rank) * shrunk.head(rank).asDiagonal() * svd.matrixV().leftCols(rank).transpose();
    if (rank == 0) out.matrix = Matrix<Scalar>::Zero(a.rows(), a.cols());
    return out;
}

template <typename Scalar>
Matrix<Scalar> soft_threshold_svd(const Matrix<Scalar>& a, Scalar lambda)
{
    return soft_threshold(a, lambda).matrix;
}

enum class StopNorm { spectral, frobenius };

template <typename Scalar>
struct IsvtOptions {
    /// Bound on |X|_inf; defaults to 1.05 x the largest observed magnitude.
    std::optional<Scalar> clip_bound;
    std::size_t max_iter = 500;
    StopNorm stop_norm = StopNorm::spectral;
    /// Change threshold as a fraction of lambda (default 1/3).
    Scalar stop_fraction = Scalar(1) / Scalar(3);
    /// Relative Frobenius change below which the iteration counts as stalled (converged).
    Scalar stall_tol = Scalar(1e-12);
};

namespace detail {

template <typename Scalar>
Scalar largest_observed_magnitude(const MaskedDataset<Scalar>& data)
{
    Scalar top(0);
    for (Eigen::Index j = 0; j < data.cols(); ++j)
        for (Eigen::Index i = 0; i < data.rows(); ++i)
            if (data.mask().observed(i, j)) top = std::max(top, std::abs(data.values()(i, j)));
    return top;
}

template <typename Scalar>
Matrix<Scalar> clip(const Matrix<Scalar>& x, Scalar bound)
{
    return x.cwiseMax(-bound).cwiseMin(bound);
}

template <typename Scalar>
Scalar spectral_norm(const Matrix<Scalar>& x)
{
    if (x.size() == 0) return Scalar(0);
    Eigen::BDCSVD<Matrix<Scalar>> svd(x);
    return svd.singularValues()(0);
}

} // namespace detail

/// Iterative singular value thresholding with L-infinity clipping.
///
///   X_new <- S_lambda(X^NA + (1 - Omega) * X_old),   X_old <- clip_a(X_new)
///
/// Stops when consecutive iterates satisfy |(1 - Omega) * dX| < lambda / 3
/// (spectral norm and 1/3 by default) and |dX|_inf < a. Observed entries are
/// re-estimated by the low-rank model as well. The returned matrix is clipped.
template <typename Scalar>
CompletionResult<Scalar> isvt(const MaskedDataset<Scalar>& data, Scalar lambda, const IsvtOptions<Scalar>& opts = {})
{
    require(lambda >= Scalar(0), "ISVT threshold must be nonnegative");
    require(data.values().allFinite(), "ISVT needs finite input");
    const Scalar top = detail::largest_observed_magnitude(data);
    const Scalar bound = opts.clip_bound.value_or(top > Scalar(0) ? Scalar(1.05) * top : Scalar(1));
    require(bound > Scalar(0) && bound >= top, "ISVT clip bound is below the observed data range");

    const Matrix<Scalar>& observed = data.values();
    const Matrix<Scalar> missing = Matrix<Scalar>::Ones(data.rows(), data.cols()) - data.mask().template as<Scalar>();
    auto step = [&](const Matrix<Scalar>& previous) {
        return soft_threshold<Scalar>(observed + missing.cwiseProduct(previous), lambda);
    };

    CompletionResult<Scalar> res;
    res.lambda = lambda;
    res.clip_bound = bound;
    Matrix<Scalar> old_iterate = Matrix<Scalar>::Zero(data.rows(), data.cols());
    ThresholdedSvd<Scalar> current = soft_threshold<Scalar>(observed, lambda);
    std::size_t it = 1;
    for (;; ++it) {
        const Matrix<Scalar> delta = current.matrix - old_iterate;
        const Matrix<Scalar> masked = missing.cwiseProduct(delta);
        const Scalar masked_norm =
            opts.stop_norm == StopNorm::spectral ? detail::spectral_norm(masked) : masked.norm();
        const bool small_change = masked_norm < opts.stop_fraction * lambda || masked_norm == Scalar(0);
        const bool bounded = delta.size() == 0 || delta.cwiseAbs().maxCoeff() < bound;
        const Scalar scale = std::max(current.matrix.norm(), std::numeric_limits<Scalar>::min());
        const bool stalled = it > 1 && delta.norm() <= opts.stall_tol * scale;
        if ((small_change && bounded) || stalled) {
            res.converged = true;
            break;
        }
        if (it >= opts.max_iter) break;
        old_iterate = detail::clip(current.matrix, bound);
        current = step(old_iterate);
    }
    res.iterations = it;
    res.final_rank = current.rank;
    res.completed = detail::clip(current.matrix, bound);
    res.residual = (res.completed - step(res.completed).matrix).norm();
    return res;
}

template <typename Scalar>
struct SoftImputeOptions {
    Scalar rel_tol = Scalar(1e-5);
    std::size_t max_iter = 500;
    std::optional<Matrix<Scalar>> warm_start;
    bool record_objective = false;
};

/// Soft-impute: Z <- S_lambda(Omega * X + (1 - Omega) * Z) until the
/// relative Frobenius change drops below rel_tol. No clipping.
template <typename Scalar>
CompletionResult<Scalar> soft_impute(const MaskedDataset<Scalar>& data, Scalar lambda,
                                     const SoftImputeOptions<Scalar>& opts = {})
{
    require(lambda >= Scalar(0), "soft-impute threshold must be nonnegative");
    require(data.values().allFinite(), "soft-impute needs finite input");
    const Matrix<Scalar>& observed = data.values();
    const Matrix<Scalar> mask = data.mask().template as<Scalar>();
    const Matrix<Scalar> missing = Matrix<Scalar>::Ones(data.rows(), data.cols()) - mask;

    CompletionResult<Scalar> res;
    res.lambda = lambda;
    res.clip_bound = std::numeric_limits<Scalar>::infinity();
    Matrix<Scalar> z = opts.warm_start ? *opts.warm_start : Matrix<Scalar>::Zero(data.rows(), data.cols());
    require_dims(z.rows() == data.rows() && z.cols() == data.cols(), "warm start has the wrong shape");

    ThresholdedSvd<Scalar> next;
    std::size_t it = 0;
    while (it < opts.max_iter) {
        next = soft_threshold<Scalar>(observed + missing.cwiseProduct(z), lambda);
        ++it;
        if (opts.record_objective) {
            const Scalar fit = mask.cwiseProduct(observed - next.matrix).squaredNorm() / Scalar(2);
            res.objective_trace.push_back(fit + lambda * next.nuclear_norm);
        }
        const Scalar change = (next.matrix - z).norm();
        const Scalar denom = std::max(z.norm(), std::numeric_limits<Scalar>::min());
        z = next.matrix;
        if (change == Scalar(0) || change / denom < opts.rel_tol) {
            res.converged = true;
            break;
        }
    }
    res.iterations = it;
    res.final_rank = next.rank;
    res.completed = z;
    res.residual = (z - soft_threshold<Scalar>(observed + missing.cwiseProduct(z), lambda).matrix).norm();
    return res;
}

} // namespace otna
