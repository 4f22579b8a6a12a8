#include "otna/generators.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/QR>

#include "otna/gaussian_ot.hpp"

namespace otna {

namespace {

MatrixXd standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng)
{
    MatrixXd z(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) z(i, j) = rng.normal();
    return z;
}

MatrixXd haar_orthogonal(Eigen::Index d, Rng& rng)
{
    Eigen::HouseholderQR<MatrixXd> qr(standard_normal(d, d, rng));
    MatrixXd q = qr.householderQ();
    const VectorXd signs = qr.matrixQR().diagonal().unaryExpr([](double v) { return v < 0 ? -1.0 : 1.0; });
    return q * signs.asDiagonal();
}

} // namespace

MatrixXd sample_gaussian(const GaussianSummary<double>& summary, Eigen::Index n, Rng& rng)
{
    const Eigen::Index d = summary.mean.size();
    const MatrixXd root = psd_sqrt(summary.cov);
    MatrixXd x = standard_normal(n, d, rng) * root;
    x.rowwise() += summary.mean.transpose();
    return x;
}

MatrixXd random_spd(Eigen::Index d, double lo, double hi, Rng& rng)
{
    const MatrixXd q = haar_orthogonal(d, rng);
    VectorXd s(d);
    for (Eigen::Index k = 0; k < d; ++k) s(k) = rng.uniform(lo, hi);
    const MatrixXd m = q * s.asDiagonal() * q.transpose();
    return (m + m.transpose()) / 2.0;
}

GaussianSummary<double> random_gaussian(Eigen::Index d, double mean_scale, double lo, double hi, bool diagonal, Rng& rng)
{
    GaussianSummary<double> g;
    g.mean.resize(d);
    for (Eigen::Index k = 0; k < d; ++k) g.mean(k) = rng.uniform(-mean_scale, mean_scale);
    if (diagonal) {
        g.cov = MatrixXd::Zero(d, d);
        for (Eigen::Index k = 0; k < d; ++k) g.cov(k, k) = rng.uniform(lo, hi);
    } else {
        g.cov = random_spd(d, lo, hi, rng);
    }
    g.psd_certified = true;
    return g;
}

VectorXd random_probs(Eigen::Index d, double lo, double hi, Rng& rng)
{
    VectorXd p(d);
    for (Eigen::Index k = 0; k < d; ++k) p(k) = rng.uniform(lo, hi);
    return p;
}

MatrixXd low_rank_matrix(Eigen::Index n, Eigen::Index d, Eigen::Index rank, Rng& rng)
{
    return standard_normal(n, rank, rng) * standard_normal(d, rank, rng).transpose();
}

ClusterModel make_cluster_model(Eigen::Index d, Eigen::Index clusters_per_class, double class_sep, Rng& rng,
                                Eigen::Index informative, Eigen::Index redundant)
{
    require(d >= 1 && clusters_per_class >= 1 && informative >= 1 && redundant >= 0, "invalid cluster layout");
    const Eigen::Index inf = std::min(informative, d), red = std::min(redundant, d - inf);
    const Eigen::Index total = 2 * clusters_per_class;
    require(inf >= 63 || (Eigen::Index(1) << inf) >= total, "not enough hypercube vertices for the requested clusters");
    // Distinct vertices of the informative hypercube, drawn without replacement.
    std::vector<std::uint64_t> vertices;
    while (static_cast<Eigen::Index>(vertices.size()) < total) {
        std::uint64_t v = 0;
        for (Eigen::Index k = 0; k < std::min<Eigen::Index>(inf, 63); ++k)
            if (rng.uniform() < 0.5) v |= (std::uint64_t(1) << k);
        if (std::find(vertices.begin(), vertices.end(), v) == vertices.end()) vertices.push_back(v);
    }
    auto uniform_matrix = [&](Eigen::Index r, Eigen::Index c) {
        MatrixXd m(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
        return m;
    };
    // Redundant features are one shared linear combination of the informative ones.
    const MatrixXd b = uniform_matrix(inf, red);
    MatrixXd lift = MatrixXd::Zero(inf, inf + red);
    lift.leftCols(inf).setIdentity();
    lift.rightCols(red) = b;

    ClusterModel model;
    for (Eigen::Index c = 0; c < total; ++c) {
        VectorXd centre(inf);
        for (Eigen::Index k = 0; k < inf; ++k) centre(k) = (k < 63 && (vertices[c] >> k) & 1U) ? class_sep : -class_sep;
        // Rows z A with z ~ N(0, I): covariance A^T A.
        const MatrixXd a = uniform_matrix(inf, inf);
        const MatrixXd s = a.transpose() * a;
        GaussianSummary<double> g;
        g.mean = VectorXd::Zero(d);
        g.mean.head(inf + red) = lift.transpose() * centre;
        g.cov = MatrixXd::Identity(d, d);
        g.cov.topLeftCorner(inf + red, inf + red) = lift.transpose() * s * lift;
        g.cov = detail::symmetrize(g.cov);
        g.psd_certified = true;
        model.clusters.push_back(std::move(g));
        model.labels.push_back(c < clusters_per_class ? -1.0 : 1.0);
    }
    return model;
}

LabeledSample ClusterModel::sample(Eigen::Index n, Rng& rng) const
{
    const auto k = static_cast<Eigen::Index>(clusters.size());
    const Eigen::Index d = clusters.front().mean.size();
    LabeledSample out;
    out.x.resize(n, d);
    out.labels.resize(n);
    Eigen::Index row = 0;
    for (Eigen::Index c = 0; c < k; ++c) {
        const Eigen::Index count = n / k + (c < n % k ? 1 : 0);
        if (count == 0) continue;
        out.x.middleRows(row, count) = sample_gaussian(clusters[c], count, rng);
        out.labels.segment(row, count).setConstant(labels[c]);
        row += count;
    }
    return out;
}

LabeledSample make_classification(Eigen::Index n, Eigen::Index d, Eigen::Index clusters_per_class, double class_sep,
                                  Rng& rng, Eigen::Index informative, Eigen::Index redundant)
{
    return make_cluster_model(d, clusters_per_class, class_sep, rng, informative, redundant).sample(n, rng);
}

LabeledSample make_moons(Eigen::Index n, double noise, Rng& rng)
{
    const Eigen::Index upper = n / 2 + n % 2, lower = n / 2;
    LabeledSample out;
    out.x.resize(n, 2);
    out.labels.resize(n);
    const double pi = std::numbers::pi;
    for (Eigen::Index i = 0; i < upper; ++i) {
        const double t = upper > 1 ? pi * double(i) / double(upper - 1) : 0.0;
        out.x(i, 0) = std::cos(t);
        out.x(i, 1) = std::sin(t);
        out.labels(i) = 1.0;
    }
    for (Eigen::Index i = 0; i < lower; ++i) {
        const double t = lower > 1 ? pi * double(i) / double(lower - 1) : 0.0;
        out.x(upper + i, 0) = 1.0 - std::cos(t);
        out.x(upper + i, 1) = 0.5 - std::sin(t);
        out.labels(upper + i) = -1.0;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        out.x(i, 0) += noise * rng.normal();
        out.x(i, 1) += noise * rng.normal();
    }
    return out;
}

MatrixXd random_projection(Eigen::Index in_dim, Eigen::Index out_dim, Rng& rng)
{
    return standard_normal(in_dim, out_dim, rng);
}

MatrixXd rows_with_label(const LabeledSample& s, double label)
{
    const Eigen::Index count = (s.labels.array() == label).count();
    MatrixXd out(count, s.x.cols());
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < s.x.rows(); ++i)
        if (s.labels(i) == label) out.row(r++) = s.x.row(i);
    return out;
}

} // namespace otna
