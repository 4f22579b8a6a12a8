#pragma once

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "otna/completion.hpp"
#include "otna/discrete_ot.hpp"
#include "otna/gaussian_ot.hpp"
#include "otna/selection.hpp"

namespace otna {

using Json = nlohmann::json;

Json to_json(const GaussianSummary<double>& s);
GaussianSummary<double> summary_from_json(const Json& j);

Json to_json(const BwReport<double>& r);
Json to_json(const AffineMap<double>& m);

/// Sidecar metadata for an exported completion (the matrix itself goes to CSV).
Json completion_sidecar(const CompletionResult<double>& r);

Json to_json(const SelectionReport& r);
/// Long format: criterion,lambda,lambda_y,fold,score. lambda_y is NA for
/// single-lambda criteria; fold is 0 when the criterion has no folds.
void write_selection_csv(std::ostream& out, const SelectionReport& r, bool header = true);

Json to_json(const OtSolution<double>& s);

/// Dense coupling export.
void write_coupling_csv(std::ostream& out, const Coupling<double>& c);
/// Edge list i,j,mass of entries at or above the given quantile of all masses
/// (quantile 0.75 keeps the top 25% links).
void write_coupling_edges(std::ostream& out, const Coupling<double>& c, double quantile);

Json vector_json(const VectorXd& v);
Json matrix_json(const MatrixXd& m);
VectorXd vector_from_json(const Json& j);
MatrixXd matrix_from_json(const Json& j);

void write_json(const std::string& path, const Json& j);
Json read_json(const std::string& path);

} // namespace otna
