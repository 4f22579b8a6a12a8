#pragma once

#include "otna/moments.hpp"
#include "otna/random.hpp"

namespace otna {

/// n draws from N(summary.mean, summary.cov).
MatrixXd sample_gaussian(const GaussianSummary<double>& summary, Eigen::Index n, Rng& rng);

/// Q diag(s) Q^T with Haar-random Q and s uniform in [lo, hi].
MatrixXd random_spd(Eigen::Index d, double lo, double hi, Rng& rng);

/// Random Gaussian with mean entries uniform in [-mean_scale, mean_scale]
/// and covariance spectrum in [lo, hi]; diagonal covariance on request.
GaussianSummary<double> random_gaussian(Eigen::Index d, double mean_scale, double lo, double hi, bool diagonal, Rng& rng);

/// Uniform probabilities in [lo, hi] per feature.
VectorXd random_probs(Eigen::Index d, double lo, double hi, Rng& rng);

/// n x d matrix of rank `rank`: U V^T with standard normal factors.
MatrixXd low_rank_matrix(Eigen::Index n, Eigen::Index d, Eigen::Index rank, Rng& rng);

struct LabeledSample {
    MatrixXd x;
    /// +1 / -1
    VectorXd labels;
};

/// Two-class Gaussian-cluster data laid out like scikit-learn's
/// make_classification with its defaults: every class owns
/// `clusters_per_class` clusters centred on distinct vertices of the
/// hypercube [-sep, sep]^informative, each with its own random linear
/// distortion; `redundant` features are a fixed random linear combination of
/// the informative ones and the remaining features are N(0, 1) noise.
/// Classes are balanced; no label flipping.
LabeledSample make_classification(Eigen::Index n, Eigen::Index d, Eigen::Index clusters_per_class, double class_sep,
                                  Rng& rng, Eigen::Index informative = 2, Eigen::Index redundant = 2);

/// Fixed cluster geometry, so that several samples share one distribution.
struct ClusterModel {
    std::vector<GaussianSummary<double>> clusters;
    std::vector<double> labels;

    LabeledSample sample(Eigen::Index n, Rng& rng) const;
};

ClusterModel make_cluster_model(Eigen::Index d, Eigen::Index clusters_per_class, double class_sep, Rng& rng,
                                Eigen::Index informative = 2, Eigen::Index redundant = 2);

/// Two interleaving half circles in 2-D (scikit-learn make_moons layout)
/// with isotropic Gaussian noise; label +1 for the upper moon.
LabeledSample make_moons(Eigen::Index n, double noise, Rng& rng);

/// Gaussian random projection matrix of shape in_dim x out_dim.
MatrixXd random_projection(Eigen::Index in_dim, Eigen::Index out_dim, Rng& rng);

/// Rows of `x` whose label equals `label`.
MatrixXd rows_with_label(const LabeledSample& s, double label);

} // namespace otna
