#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "otna/data_model.hpp"

namespace otna {

/// A numeric table read from CSV. Missing cells (empty or `NA`) are stored
/// as 0 in `values` and flagged in `mask`.
struct Table {
    std::vector<std::string> names;
    MatrixXd values;
    Mask mask;

    MaskedDataset<double> dataset(const VectorXd& probs) const { return MaskedDataset<double>(values, mask, probs); }
    /// Dataset with probabilities estimated from the mask.
    MaskedDataset<double> dataset() const { return dataset(estimate_missingness<double>(mask)); }
};

Table parse_csv(std::istream& in);
Table read_csv(const std::string& path);

/// Writes a header row and one line per row; masked-out cells are written as `NA`.
void write_csv(std::ostream& out, const std::vector<std::string>& names, const MatrixXd& values, const Mask& mask);
void write_csv(const std::string& path, const std::vector<std::string>& names, const MatrixXd& values, const Mask& mask);
void write_csv(const std::string& path, const std::vector<std::string>& names, const MatrixXd& values);

Mask parse_mask_csv(std::istream& in);
Mask read_mask_csv(const std::string& path);
void write_mask_csv(std::ostream& out, const Mask& mask);
void write_mask_csv(const std::string& path, const Mask& mask);

/// Header-less dense matrix, full precision.
void write_matrix_csv(std::ostream& out, const MatrixXd& m);
void write_matrix_csv(const std::string& path, const MatrixXd& m);

/// Shortest decimal representation that reads back to the same double.
std::string format_double(double v);

/// Default feature names x0, x1, ...
std::vector<std::string> default_names(Eigen::Index d, const std::string& prefix = "x");

} // namespace otna
