#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "otna/random.hpp"
#include "otna/types.hpp"

namespace otna {

/// Observation pattern of an n x d dataset.
class Mask {
public:
    Mask() = default;

    explicit Mask(MaskMatrix entries) : entries_(std::move(entries))
    {
        for (Eigen::Index i = 0; i < entries_.size(); ++i)
            require(entries_.data()[i] <= 1, "mask entries must be 0 or 1");
    }

    static Mask full(Eigen::Index n, Eigen::Index d) { return Mask(MaskMatrix::Ones(n, d)); }

    Eigen::Index rows() const noexcept { return entries_.rows(); }
    Eigen::Index cols() const noexcept { return entries_.cols(); }
    bool observed(Eigen::Index i, Eigen::Index j) const { return entries_(i, j) != 0; }
    const MaskMatrix& entries() const noexcept { return entries_; }

    template <typename Scalar>
    Matrix<Scalar> as() const
    {
        return entries_.template cast<Scalar>();
    }

    Eigen::Index observed_count() const { return entries_.template cast<Eigen::Index>().sum(); }

    bool operator==(const Mask& other) const { return entries_ == other.entries_; }

private:
    MaskMatrix entries_;
};

/// Zero-imputed data together with its mask and per-feature observation
/// probabilities. values(i, j) == 0 wherever the mask says missing.
template <typename Scalar>
class MaskedDataset {
public:
    MaskedDataset() = default;

    MaskedDataset(Matrix<Scalar> values, Mask mask, Vector<Scalar> probs)
        : values_(std::move(values)), mask_(std::move(mask)), probs_(std::move(probs))
    {
        require_dims(values_.rows() == mask_.rows() && values_.cols() == mask_.cols(),
                     "values and mask shapes differ");
        require_dims(probs_.size() == values_.cols(), "probability vector length must equal the number of features");
        for (Eigen::Index j = 0; j < probs_.size(); ++j)
            require(probs_(j) > Scalar(0) && probs_(j) <= Scalar(1), "observation probabilities must lie in (0, 1]");
        for (Eigen::Index j = 0; j < values_.cols(); ++j)
            for (Eigen::Index i = 0; i < values_.rows(); ++i)
                require(mask_.observed(i, j) || values_(i, j) == Scalar(0), "missing entries must be stored as 0");
    }

    Eigen::Index rows() const noexcept { return values_.rows(); }
    Eigen::Index cols() const noexcept { return values_.cols(); }
    const Matrix<Scalar>& values() const noexcept { return values_; }
    const Mask& mask() const noexcept { return mask_; }
    const Vector<Scalar>& probs() const noexcept { return probs_; }

    MaskedDataset with_probs(Vector<Scalar> probs) const { return MaskedDataset(values_, mask_, std::move(probs)); }

private:
    Matrix<Scalar> values_;
    Mask mask_;
    Vector<Scalar> probs_;
};

template <typename Scalar>
struct ScalingParams {
    Vector<Scalar> min;
    Vector<Scalar> max;
    /// Feature had max == min; its observed entries were mapped to 0.
    std::vector<bool> constant;
    /// Feature had no observed entry and was left untouched.
    std::vector<bool> unscaled;
};

template <typename Scalar>
struct CompleteCases {
    Matrix<Scalar> rows;
    double retained_fraction = 0.0;
};

/// Entry (i, j) observed independently with probability p(j).
template <typename Scalar>
Mask generate_mcar_mask(Eigen::Index n, Eigen::Index d, const Vector<Scalar>& p, std::uint64_t seed)
{
    require_dims(p.size() == d, "probability vector length must equal d");
    for (Eigen::Index j = 0; j < d; ++j)
        require(p(j) > Scalar(0) && p(j) <= Scalar(1), "MCAR probabilities must lie in (0, 1]");
    Rng rng(seed, 0);
    MaskMatrix m(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            m(i, j) = rng.uniform() < static_cast<double>(p(j)) ? 1 : 0;
    return Mask(std::move(m));
}

/// Contamination model: each row is drawn MCAR(p) with probability 1 - eps,
/// otherwise entry (i, j) is observed with probability 1 / (1 + alpha exp(-X(i, j))).
///
/// Entry uniforms come from the same stream as generate_mcar_mask and the
/// row selector from a separate one, so eps == 0 reproduces the MCAR mask
/// for the same seed exactly.
template <typename Scalar>
Mask generate_mnar_mask(const Matrix<Scalar>& x, const Vector<Scalar>& p, double eps, double alpha, std::uint64_t seed)
{
    const Eigen::Index n = x.rows(), d = x.cols();
    require_dims(p.size() == d, "probability vector length must equal d");
    require(eps >= 0.0 && eps <= 1.0, "contamination level must lie in [0, 1]");
    require(alpha > 0.0, "sigmoid scale alpha must be positive");
    for (Eigen::Index j = 0; j < d; ++j)
        require(p(j) > Scalar(0) && p(j) <= Scalar(1), "MCAR probabilities must lie in (0, 1]");
    Rng entries(seed, 0);
    Rng selector(seed, 1);
    MaskMatrix m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const bool mnar_row = selector.uniform() < eps;
        for (Eigen::Index j = 0; j < d; ++j) {
            double prob = static_cast<double>(p(j));
            if (mnar_row) prob = 1.0 / (1.0 + alpha * std::exp(-static_cast<double>(x(i, j))));
            m(i, j) = entries.uniform() < prob ? 1 : 0;
        }
    }
    return Mask(std::move(m));
}

template <typename Scalar>
MaskedDataset<Scalar> apply_mask_zero_impute(const Matrix<Scalar>& x, const Mask& mask, const Vector<Scalar>& probs)
{
    require_dims(x.rows() == mask.rows() && x.cols() == mask.cols(), "data and mask shapes differ");
    return MaskedDataset<Scalar>(x.cwiseProduct(mask.as<Scalar>()), mask, probs);
}

/// Empirical observation rate per column, clamped below at 1/(2n).
template <typename Scalar = double>
Vector<Scalar> estimate_missingness(const Mask& mask)
{
    const Eigen::Index n = mask.rows();
    require(n >= 1, "cannot estimate missingness from an empty mask");
    const Scalar floor = Scalar(1) / Scalar(2 * n);
    Vector<Scalar> p = mask.as<Scalar>().colwise().mean().transpose();
    return p.cwiseMax(floor).cwiseMin(Scalar(1));
}

template <typename Scalar>
CompleteCases<Scalar> complete_case_filter(const MaskedDataset<Scalar>& data)
{
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < data.rows(); ++i)
        if (data.mask().entries().row(i).minCoeff() == 1) keep.push_back(i);
    CompleteCases<Scalar> out;
    out.rows.resize(static_cast<Eigen::Index>(keep.size()), data.cols());
    for (std::size_t k = 0; k < keep.size(); ++k) out.rows.row(static_cast<Eigen::Index>(k)) = data.values().row(keep[k]);
    out.retained_fraction = data.rows() > 0 ? static_cast<double>(keep.size()) / static_cast<double>(data.rows()) : 0.0;
    return out;
}

/// Maps observed entries of every feature to [0, 1] using the observed range.
template <typename Scalar>
std::pair<MaskedDataset<Scalar>, ScalingParams<Scalar>> minmax_scale(const MaskedDataset<Scalar>& data)
{
    const Eigen::Index n = data.rows(), d = data.cols();
    ScalingParams<Scalar> params;
    params.min = Vector<Scalar>::Zero(d);
    params.max = Vector<Scalar>::Zero(d);
    params.constant.assign(static_cast<std::size_t>(d), false);
    params.unscaled.assign(static_cast<std::size_t>(d), false);
    Matrix<Scalar> out = data.values();
    for (Eigen::Index j = 0; j < d; ++j) {
        Scalar lo = std::numeric_limits<Scalar>::infinity();
        Scalar hi = -std::numeric_limits<Scalar>::infinity();
        for (Eigen::Index i = 0; i < n; ++i)
            if (data.mask().observed(i, j)) {
                lo = std::min(lo, data.values()(i, j));
                hi = std::max(hi, data.values()(i, j));
            }
        if (lo > hi) {
            params.unscaled[static_cast<std::size_t>(j)] = true;
            continue;
        }
        params.min(j) = lo;
        params.max(j) = hi;
        const bool flat = !(hi > lo);
        params.constant[static_cast<std::size_t>(j)] = flat;
        for (Eigen::Index i = 0; i < n; ++i)
            if (data.mask().observed(i, j)) out(i, j) = flat ? Scalar(0) : (data.values()(i, j) - lo) / (hi - lo);
    }
    return {MaskedDataset<Scalar>(std::move(out), data.mask(), data.probs()), std::move(params)};
}

/// Applies fitted scaling to a complete matrix (e.g. ground truth of the same features).
template <typename Scalar>
Matrix<Scalar> minmax_apply(const Matrix<Scalar>& x, const ScalingParams<Scalar>& params)
{
    Matrix<Scalar> out = x;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const auto k = static_cast<std::size_t>(j);
        if (params.unscaled[k]) continue;
        if (params.constant[k])
            out.col(j).setZero();
        else
            out.col(j) = (x.col(j).array() - params.min(j)) / (params.max(j) - params.min(j));
    }
    return out;
}

/// Inverse of minmax_scale on observed entries; missing entries stay 0.
template <typename Scalar>
MaskedDataset<Scalar> minmax_unscale(const MaskedDataset<Scalar>& data, const ScalingParams<Scalar>& params)
{
    Matrix<Scalar> out = data.values();
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
        const auto k = static_cast<std::size_t>(j);
        if (params.unscaled[k]) continue;
        for (Eigen::Index i = 0; i < data.rows(); ++i)
            if (data.mask().observed(i, j))
                out(i, j) = params.min(j) + data.values()(i, j) * (params.max(j) - params.min(j));
    }
    return MaskedDataset<Scalar>(std::move(out), data.mask(), data.probs());
}

} // namespace otna
