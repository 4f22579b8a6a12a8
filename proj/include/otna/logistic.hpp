#pragma once

#include "otna/types.hpp"

namespace otna {

/// decision(x) = sign(w^T x + b), labels in {-1, +1}.
struct LinearClassifier {
    VectorXd weights;
    double bias = 0.0;
    std::size_t iterations = 0;
    double gradient_norm = 0.0;

    VectorXd scores(const MatrixXd& x) const;
    VectorXd predict(const MatrixXd& x) const;
    double accuracy(const MatrixXd& x, const VectorXd& labels) const;
};

/// Mean logistic loss + (l2 / 2) |w|^2; the bias is not penalized.
double logistic_objective(const MatrixXd& x, const VectorXd& labels, const VectorXd& weights, double bias, double l2);

/// Gradient of logistic_objective stacked as (dw, db).
VectorXd logistic_gradient(const MatrixXd& x, const VectorXd& labels, const VectorXd& weights, double bias, double l2);

/// Damped Newton on the L2-regularized logistic loss until the gradient
/// norm drops below 1e-6 or max_iter is reached.
LinearClassifier train_logistic(const MatrixXd& x, const VectorXd& labels, double l2, std::size_t max_iter = 100);

} // namespace otna
