#pragma once

#include <Eigen/Eigenvalues>

#include "otna/data_model.hpp"

namespace otna {

template <typename Scalar>
struct GaussianSummary {
    Vector<Scalar> mean;
    Matrix<Scalar> cov;
    bool psd_certified = false;
};

struct MomentDiagnostics {
    double effective_rank = 1.0;
    double operator_norm = 0.0;
    double min_eigenvalue = 0.0;
};

/// Raw and PSD-projected output of the debiased covariance estimator.
template <typename Scalar>
struct DebiasedMoments {
    GaussianSummary<Scalar> raw;
    GaussianSummary<Scalar> projected;
    Scalar min_eigenvalue{};
};

namespace detail {

template <typename Scalar>
void check_probs(const Vector<Scalar>& p)
{
    for (Eigen::Index j = 0; j < p.size(); ++j) require(p(j) > Scalar(0), "observation probabilities must be positive");
}

template <typename Derived>
Matrix<typename Derived::Scalar> symmetrize(const Eigen::MatrixBase<Derived>& m)
{
    return (m + m.transpose()) / typename Derived::Scalar(2);
}

} // namespace detail

/// Sets negative eigenvalues to zero.
template <typename Derived>
Matrix<typename Derived::Scalar> psd_projection(const Eigen::MatrixBase<Derived>& m)
{
    using Scalar = typename Derived::Scalar;
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(detail::symmetrize(m));
    const Vector<Scalar> clipped = eig.eigenvalues().cwiseMax(Scalar(0));
    return detail::symmetrize(eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose());
}

template <typename Scalar>
Vector<Scalar> imputed_mean(const MaskedDataset<Scalar>& data)
{
    require(data.rows() >= 1, "mean of an empty dataset");
    return data.values().colwise().mean().transpose();
}

/// Covariance of the zero-imputed rows with 1/n normalization.
template <typename Scalar>
Matrix<Scalar> imputed_covariance(const MaskedDataset<Scalar>& data)
{
    require(data.rows() >= 2, "covariance needs at least two rows");
    const Vector<Scalar> m = imputed_mean(data);
    const Matrix<Scalar> centered = data.values().rowwise() - m.transpose();
    return detail::symmetrize(centered.transpose() * centered / Scalar(data.rows()));
}

template <typename Scalar>
Vector<Scalar> debiased_mean(const MaskedDataset<Scalar>& data)
{
    detail::check_probs(data.probs());
    return imputed_mean(data).cwiseQuotient(data.probs());
}

/// Inverse-probability debiasing of the zero-imputed covariance:
///   P^-1 S P^-1 + P^-1 (I - P^-1) (diag(S) + diag(m m^T))
/// with S the imputed covariance and m the imputed mean.
template <typename Scalar>
DebiasedMoments<Scalar> debiased_moments(const MaskedDataset<Scalar>& data)
{
    detail::check_probs(data.probs());
    const Matrix<Scalar> s = imputed_covariance(data);
    const Vector<Scalar> m = imputed_mean(data);
    const Vector<Scalar> inv_p = data.probs().cwiseInverse();
    const Vector<Scalar> correction =
        inv_p.cwiseProduct(Vector<Scalar>::Ones(inv_p.size()) - inv_p).cwiseProduct(s.diagonal() + m.cwiseAbs2());

    Matrix<Scalar> cov = inv_p.asDiagonal() * s * inv_p.asDiagonal();
    cov.diagonal() += correction;
    cov = detail::symmetrize(cov);

    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(cov, Eigen::EigenvaluesOnly);
    DebiasedMoments<Scalar> out;
    out.min_eigenvalue = eig.eigenvalues().size() ? eig.eigenvalues()(0) : Scalar(0);
    out.raw.mean = m.cwiseQuotient(data.probs());
    out.raw.cov = cov;
    out.raw.psd_certified = out.min_eigenvalue >= Scalar(-1e-10);
    out.projected.mean = out.raw.mean;
    out.projected.cov = out.raw.psd_certified ? cov : psd_projection(cov);
    out.projected.psd_certified = true;
    return out;
}

template <typename Scalar>
GaussianSummary<Scalar> debiased_covariance(const MaskedDataset<Scalar>& data)
{
    return debiased_moments(data).raw;
}

/// Plain empirical moments of a complete sample (1/n covariance).
template <typename Scalar>
GaussianSummary<Scalar> empirical_summary(const Matrix<Scalar>& x)
{
    require(x.rows() >= 1, "summary of an empty sample");
    GaussianSummary<Scalar> out;
    out.mean = x.colwise().mean().transpose();
    const Matrix<Scalar> centered = x.rowwise() - out.mean.transpose();
    out.cov = detail::symmetrize(centered.transpose() * centered / Scalar(x.rows()));
    out.psd_certified = true;
    return out;
}

/// Population covariance of X * omega for omega_j ~ Bernoulli(p_j) independent:
///   P S P + P (I - P) (diag(S) + diag(m)^2).
template <typename Scalar>
Matrix<Scalar> forward_masked_covariance(const GaussianSummary<Scalar>& summary, const Vector<Scalar>& p)
{
    require_dims(p.size() == summary.mean.size() && summary.cov.rows() == p.size(), "dimension mismatch");
    const Vector<Scalar> one_minus = Vector<Scalar>::Ones(p.size()) - p;
    Matrix<Scalar> out = p.asDiagonal() * summary.cov * p.asDiagonal();
    out.diagonal() += p.cwiseProduct(one_minus).cwiseProduct(summary.cov.diagonal() + summary.mean.cwiseAbs2());
    return detail::symmetrize(out);
}

/// Population mean of X * omega.
template <typename Scalar>
Vector<Scalar> forward_masked_mean(const GaussianSummary<Scalar>& summary, const Vector<Scalar>& p)
{
    return summary.mean.cwiseProduct(p);
}

/// Inverse of forward_masked_covariance given the masked mean and covariance.
template <typename Scalar>
Matrix<Scalar> backward_masked_covariance(const Matrix<Scalar>& masked_cov, const Vector<Scalar>& masked_mean,
                                          const Vector<Scalar>& p)
{
    detail::check_probs(p);
    const Vector<Scalar> inv_p = p.cwiseInverse();
    Matrix<Scalar> out = inv_p.asDiagonal() * masked_cov * inv_p.asDiagonal();
    out.diagonal() += inv_p.cwiseProduct(Vector<Scalar>::Ones(p.size()) - inv_p)
                          .cwiseProduct(masked_cov.diagonal() + masked_mean.cwiseAbs2());
    return detail::symmetrize(out);
}

template <typename Derived>
MomentDiagnostics effective_rank(const Eigen::MatrixBase<Derived>& cov)
{
    using Scalar = typename Derived::Scalar;
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(detail::symmetrize(cov), Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues();
    require(ev.size() > 0, "effective rank of an empty matrix");
    const double top = static_cast<double>(ev.cwiseAbs().maxCoeff());
    require(top > 0.0, "effective rank of the zero matrix is undefined");
    MomentDiagnostics out;
    out.operator_norm = top;
    out.min_eigenvalue = static_cast<double>(ev(0));
    out.effective_rank = static_cast<double>(cov.trace()) / top;
    return out;
}

} // namespace otna
