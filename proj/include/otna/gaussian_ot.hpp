#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

#include "otna/moments.hpp"

namespace otna {

/// T(z) = offset_target + linear (z - offset_source).
///
/// input_scale, when non-empty, is the per-feature factor applied to
/// zero-imputed inputs by apply_masked (1/p for debiased maps).
template <typename Scalar>
struct AffineMap {
    Matrix<Scalar> linear;
    Vector<Scalar> offset_target;
    Vector<Scalar> offset_source;
    Vector<Scalar> input_scale;

    Vector<Scalar> operator()(const Vector<Scalar>& z) const { return offset_target + linear * (z - offset_source); }

    /// Row-wise application to an n x d sample.
    Matrix<Scalar> apply(const Matrix<Scalar>& rows) const
    {
        return ((rows.rowwise() - offset_source.transpose()) * linear.transpose()).rowwise() + offset_target.transpose();
    }

    Matrix<Scalar> apply_masked(const Matrix<Scalar>& imputed_rows) const
    {
        if (input_scale.size() == 0) return apply(imputed_rows);
        return apply(imputed_rows * input_scale.asDiagonal());
    }
};

template <typename Scalar>
struct BwReport {
    Scalar squared_distance{};
    Scalar mean_term{};
    Scalar trace_term{};
    Scalar cross_term{};
};

namespace detail {

template <typename Scalar>
struct SymmetricEigen {
    Vector<Scalar> values;
    Matrix<Scalar> vectors;

    template <typename F>
    Matrix<Scalar> apply(F&& f) const
    {
        const Vector<Scalar> mapped = values.unaryExpr(std::forward<F>(f));
        return symmetrize(vectors * mapped.asDiagonal() * vectors.transpose());
    }
};

template <typename Derived>
SymmetricEigen<typename Derived::Scalar> symmetric_eigen(const Eigen::MatrixBase<Derived>& m)
{
    using Scalar = typename Derived::Scalar;
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(symmetrize(m));
    require(eig.info() == Eigen::Success, "symmetric eigendecomposition failed");
    return {eig.eigenvalues(), eig.eigenvectors()};
}

/// Eigenvalues raised to at least rel_floor * ||m||_op (absolute rel_floor for the zero matrix).
template <typename Scalar>
SymmetricEigen<Scalar> floored_eigen(const Matrix<Scalar>& m, Scalar rel_floor)
{
    auto eig = symmetric_eigen(m);
    const Scalar top = eig.values.size() ? eig.values.cwiseAbs().maxCoeff() : Scalar(0);
    const Scalar floor = top > Scalar(0) ? rel_floor * top : rel_floor;
    eig.values = eig.values.cwiseMax(floor);
    return eig;
}

template <typename Scalar>
void check_summary(const GaussianSummary<Scalar>& s)
{
    require_dims(s.cov.rows() == s.cov.cols() && s.cov.rows() == s.mean.size(), "summary dimensions disagree");
    require(s.cov.allFinite() && s.mean.allFinite(), "summary has non-finite entries");
}

} // namespace detail

/// Principal square root of a symmetric PSD matrix. Eigenvalues in [-tol, 0)
/// are clipped to zero; anything below -tol is rejected.
template <typename Derived>
Matrix<typename Derived::Scalar> psd_sqrt(const Eigen::MatrixBase<Derived>& m, typename Derived::Scalar tol = 1e-10)
{
    using Scalar = typename Derived::Scalar;
    require(m.rows() == m.cols(), "square root of a non-square matrix");
    const auto eig = detail::symmetric_eigen(m);
    if (eig.values.size() == 0) return Matrix<Scalar>(0, 0);
    const Scalar scale = std::max(Scalar(1), eig.values.cwiseAbs().maxCoeff());
    require(eig.values(0) >= -tol * scale, "matrix is not positive semidefinite");
    return eig.apply([](Scalar v) { return v > Scalar(0) ? std::sqrt(v) : Scalar(0); });
}

/// Squared Bures-Wasserstein distance with its three-term breakdown:
///   |m_a - m_b|^2 + Tr(S_a + S_b) - 2 Tr[(S_a^1/2 S_b S_a^1/2)^1/2].
template <typename Scalar>
BwReport<Scalar> bures_wasserstein(const GaussianSummary<Scalar>& a, const GaussianSummary<Scalar>& b)
{
    detail::check_summary(a);
    detail::check_summary(b);
    require_dims(a.mean.size() == b.mean.size(), "summaries have different dimensions");
    BwReport<Scalar> r;
    r.mean_term = (a.mean - b.mean).squaredNorm();
    r.trace_term = a.cov.trace() + b.cov.trace();
    if (a.mean == b.mean && a.cov == b.cov) {
        r.cross_term = r.trace_term / Scalar(2);
        r.squared_distance = Scalar(0);
        return r;
    }
    const Matrix<Scalar> root_a = psd_sqrt(a.cov);
    psd_sqrt(b.cov); // rejects non-PSD b
    const auto inner = detail::symmetric_eigen(root_a * b.cov * root_a);
    // Eigenvalues below the rounding floor are zero; their square roots are not.
    const Scalar floor = Scalar(inner.values.size()) * std::numeric_limits<Scalar>::epsilon() * inner.values.cwiseAbs().maxCoeff();
    r.cross_term = (inner.values.array() > floor).select(inner.values.cwiseMax(Scalar(0)).cwiseSqrt(), Scalar(0)).sum();
    r.squared_distance = r.mean_term + r.trace_term - Scalar(2) * r.cross_term;
    if (r.squared_distance < Scalar(0) && r.squared_distance >= Scalar(-1e-8)) r.squared_distance = Scalar(0);
    return r;
}

/// BW between the debiased (PSD-projected) moment estimates of two masked samples.
template <typename Scalar>
BwReport<Scalar> debiased_bw(const MaskedDataset<Scalar>& x, const MaskedDataset<Scalar>& y)
{
    require(x.rows() >= 2 && y.rows() >= 2, "debiased BW needs at least two rows per side");
    return bures_wasserstein(debiased_moments(x).projected, debiased_moments(y).projected);
}

/// BW between the moments of the zero-imputed samples, ignoring missingness.
template <typename Scalar>
BwReport<Scalar> naive_bw(const MaskedDataset<Scalar>& x, const MaskedDataset<Scalar>& y)
{
    return bures_wasserstein(empirical_summary(x.values()), empirical_summary(y.values()));
}

/// Closed-form entropic OT between Gaussians for the squared Euclidean cost,
///   min_pi E_pi |x - y|^2 + eps KL(pi | a x b),
/// i.e. the mutual-information convention. With s = eps / 2:
///   |m_a - m_b|^2 + Tr A + Tr B - Tr D + d s (1 - log 2s) + s log det(D + s I),
///   D = (4 A^1/2 B A^1/2 + s^2 I)^1/2.
/// Covariances are floored at 1e-10 ||.||_op before use. Tends to the
/// squared BW distance as eps -> 0 and is nondecreasing in eps.
template <typename Scalar>
Scalar entropic_gaussian_ot(const GaussianSummary<Scalar>& a, const GaussianSummary<Scalar>& b, Scalar eps)
{
    require(eps > Scalar(0), "entropic regularization must be positive");
    detail::check_summary(a);
    detail::check_summary(b);
    require_dims(a.mean.size() == b.mean.size(), "summaries have different dimensions");
    const Eigen::Index d = a.mean.size();
    const Scalar s = eps / Scalar(2);
    const auto ea = detail::floored_eigen(a.cov, Scalar(1e-10));
    const auto eb = detail::floored_eigen(b.cov, Scalar(1e-10));
    const Matrix<Scalar> root_a = ea.apply([](Scalar v) { return std::sqrt(v); });
    const Matrix<Scalar> cov_b = eb.apply([](Scalar v) { return v; });
    const auto inner = detail::symmetric_eigen(root_a * cov_b * root_a);
    const Vector<Scalar> dvals =
        (Scalar(4) * inner.values.cwiseMax(Scalar(0)) + Vector<Scalar>::Constant(d, s * s)).cwiseSqrt();
    const Scalar log_det = (dvals.array() + s).log().sum();
    return (a.mean - b.mean).squaredNorm() + ea.values.sum() + eb.values.sum() - dvals.sum() +
           Scalar(d) * s * (Scalar(1) - std::log(Scalar(2) * s)) + s * log_det;
}

/// Optimal affine map pushing N(src) onto N(tgt):
///   A = S^-1/2 (S^1/2 T S^1/2)^1/2 S^-1/2, so that A S A = T.
template <typename Scalar>
AffineMap<Scalar> linear_monge_map(const GaussianSummary<Scalar>& src, const GaussianSummary<Scalar>& tgt)
{
    detail::check_summary(src);
    detail::check_summary(tgt);
    require_dims(src.mean.size() == tgt.mean.size(), "summaries have different dimensions");
    const auto es = detail::symmetric_eigen(src.cov);
    require(es.values.size() > 0 && es.values.cwiseAbs().maxCoeff() > Scalar(0), "source covariance is singular");
    const auto floored = detail::floored_eigen(src.cov, Scalar(1e-10));
    const Matrix<Scalar> root = floored.apply([](Scalar v) { return std::sqrt(v); });
    const Matrix<Scalar> inv_root = floored.apply([](Scalar v) { return Scalar(1) / std::sqrt(v); });
    const Matrix<Scalar> middle = psd_sqrt(detail::symmetrize(root * psd_projection(tgt.cov) * root));
    AffineMap<Scalar> map;
    map.linear = detail::symmetrize(inv_root * middle * inv_root);
    map.offset_target = tgt.mean;
    map.offset_source = src.mean;
    return map;
}

/// Monge map estimated from a masked source sample and a complete target
/// sample. The returned map expects debiased inputs; apply_masked rescales
/// zero-imputed rows by 1/p first.
template <typename Scalar>
AffineMap<Scalar> debiased_monge_map(const MaskedDataset<Scalar>& src, const Matrix<Scalar>& tgt_full)
{
    require(src.rows() >= 2 && tgt_full.rows() >= 1, "Monge map needs nonempty samples");
    require_dims(src.cols() == tgt_full.cols(), "source and target dimensions differ");
    auto map = linear_monge_map(debiased_moments(src).projected, empirical_summary(tgt_full));
    map.input_scale = src.probs().cwiseInverse();
    return map;
}

/// Lower bound on W2^2 between a diagonal Gaussian and its zero-imputed
/// version under MCAR(p), for the metric diag(weights):
///   sum_i w_i (1 - p_i)^2 m_i^2 + sum_i w_i (sigma_i - sqrt(p_i) sqrt(sigma_i^2 + (1 - p_i) m_i^2))^2.
template <typename Scalar>
Scalar na_bias_lower_bound(const Vector<Scalar>& m, const Vector<Scalar>& sigma, const Vector<Scalar>& p,
                           const Vector<Scalar>& weights)
{
    const Eigen::Index d = m.size();
    require_dims(sigma.size() == d && p.size() == d && weights.size() == d, "bound inputs have mismatched lengths");
    Scalar total(0);
    for (Eigen::Index i = 0; i < d; ++i) {
        require(sigma(i) > Scalar(0), "standard deviations must be positive");
        require(weights(i) >= Scalar(0), "metric weights must be nonnegative");
        require(p(i) >= Scalar(0) && p(i) <= Scalar(1), "probabilities must lie in [0, 1]");
        const Scalar shift = (p(i) - Scalar(1)) * m(i);
        const Scalar spread =
            sigma(i) - std::sqrt(p(i)) * std::sqrt(sigma(i) * sigma(i) + (Scalar(1) - p(i)) * m(i) * m(i));
        total += weights(i) * (shift * shift + spread * spread);
    }
    return total;
}

} // namespace otna
