#include "otna/logistic.hpp"

#include <cmath>

#include <Eigen/Cholesky>

namespace otna {

namespace {

// log(1 + exp(t)) without overflow.
double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double sigmoid(double t)
{
    if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

void check_inputs(const MatrixXd& x, const VectorXd& labels)
{
    require_dims(x.rows() == labels.size(), "one label per row is required");
    require(x.allFinite(), "features must be finite");
    for (Eigen::Index i = 0; i < labels.size(); ++i)
        require(labels(i) == 1.0 || labels(i) == -1.0, "labels must be -1 or +1");
}

} // namespace

VectorXd LinearClassifier::scores(const MatrixXd& x) const { return (x * weights).array() + bias; }

VectorXd LinearClassifier::predict(const MatrixXd& x) const
{
    return scores(x).unaryExpr([](double s) { return s >= 0.0 ? 1.0 : -1.0; });
}

double LinearClassifier::accuracy(const MatrixXd& x, const VectorXd& labels) const
{
    if (labels.size() == 0) return 0.0;
    const VectorXd pred = predict(x);
    return (pred.array() == labels.array()).cast<double>().mean();
}

double logistic_objective(const MatrixXd& x, const VectorXd& labels, const VectorXd& weights, double bias, double l2)
{
    const VectorXd margins = labels.cwiseProduct((x * weights).array().matrix() + VectorXd::Constant(x.rows(), bias));
    double loss = 0.0;
    for (Eigen::Index i = 0; i < margins.size(); ++i) loss += softplus(-margins(i));
    return loss / double(x.rows()) + 0.5 * l2 * weights.squaredNorm();
}

VectorXd logistic_gradient(const MatrixXd& x, const VectorXd& labels, const VectorXd& weights, double bias, double l2)
{
    const Eigen::Index n = x.rows(), d = x.cols();
    const VectorXd margins = labels.cwiseProduct(x * weights + VectorXd::Constant(n, bias));
    VectorXd coef(n);
    for (Eigen::Index i = 0; i < n; ++i) coef(i) = -labels(i) * sigmoid(-margins(i)) / double(n);
    VectorXd g(d + 1);
    g.head(d) = x.transpose() * coef + l2 * weights;
    g(d) = coef.sum();
    return g;
}

LinearClassifier train_logistic(const MatrixXd& x, const VectorXd& labels, double l2, std::size_t max_iter)
{
    check_inputs(x, labels);
    require(l2 >= 0.0, "L2 penalty must be nonnegative");
    require((labels.array() > 0).any() && (labels.array() < 0).any(), "both classes must be present");
    const Eigen::Index n = x.rows(), d = x.cols();

    MatrixXd design(n, d + 1);
    design << x, VectorXd::Ones(n);
    VectorXd theta = VectorXd::Zero(d + 1);
    auto objective = [&](const VectorXd& t) { return logistic_objective(x, labels, t.head(d), t(d), l2); };
    auto gradient = [&](const VectorXd& t) { return logistic_gradient(x, labels, t.head(d), t(d), l2); };

    LinearClassifier clf;
    VectorXd g = gradient(theta);
    std::size_t it = 0;
    for (; it < max_iter && g.norm() >= 1e-6; ++it) {
        const VectorXd margins = labels.cwiseProduct(design * theta);
        VectorXd curvature(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double s = sigmoid(margins(i));
            curvature(i) = s * (1.0 - s) / double(n);
        }
        MatrixXd hessian = design.transpose() * curvature.asDiagonal() * design;
        hessian.diagonal().head(d).array() += l2;
        // Separable data with l2 = 0 has no finite optimum; a tiny ridge keeps steps defined.
        hessian.diagonal().array() += 1e-10;
        const VectorXd step = hessian.ldlt().solve(-g);

        const double f0 = objective(theta);
        double t = 1.0;
        VectorXd candidate = theta + step;
        while (objective(candidate) > f0 + 1e-4 * t * g.dot(step) && t > 1e-10) {
            t *= 0.5;
            candidate = theta + t * step;
        }
        theta = candidate;
        g = gradient(theta);
    }
    clf.weights = theta.head(d);
    clf.bias = theta(d);
    clf.iterations = it;
    clf.gradient_norm = g.norm();
    return clf;
}

} // namespace otna
