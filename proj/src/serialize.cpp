#include "otna/serialize.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include "otna/csv_io.hpp"

namespace otna {

Json vector_json(const VectorXd& v)
{
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Json matrix_json(const MatrixXd& m)
{
    Json out = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        out.push_back(std::move(row));
    }
    return out;
}

VectorXd vector_from_json(const Json& j)
{
    if (!j.is_array()) throw Error("expected a JSON array");
    VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

MatrixXd matrix_from_json(const Json& j)
{
    if (!j.is_array()) throw Error("expected a JSON array of rows");
    const auto n = static_cast<Eigen::Index>(j.size());
    const auto d = n ? static_cast<Eigen::Index>(j[0].size()) : 0;
    MatrixXd m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != d) throw Error("ragged JSON matrix");
        for (Eigen::Index k = 0; k < d; ++k) m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
    }
    return m;
}

Json to_json(const GaussianSummary<double>& s) { return {{"mean", vector_json(s.mean)}, {"cov", matrix_json(s.cov)}}; }

GaussianSummary<double> summary_from_json(const Json& j)
{
    GaussianSummary<double> s;
    s.mean = vector_from_json(j.at("mean"));
    s.cov = matrix_from_json(j.at("cov"));
    require_dims(s.cov.rows() == s.mean.size() && s.cov.cols() == s.mean.size(), "summary dimensions disagree");
    return s;
}

Json to_json(const BwReport<double>& r)
{
    return {{"squared_distance", r.squared_distance},
            {"mean_term", r.mean_term},
            {"trace_term", r.trace_term},
            {"cross_term", r.cross_term}};
}

Json to_json(const AffineMap<double>& m)
{
    Json j{{"linear", matrix_json(m.linear)},
           {"offset_target", vector_json(m.offset_target)},
           {"offset_source", vector_json(m.offset_source)}};
    if (m.input_scale.size()) j["input_scale"] = vector_json(m.input_scale);
    return j;
}

Json completion_sidecar(const CompletionResult<double>& r)
{
    Json j{{"lambda", r.lambda},
           {"iterations", r.iterations},
           {"converged", r.converged},
           {"final_rank", r.final_rank},
           {"residual", r.residual}};
    if (std::isfinite(r.clip_bound)) j["clip_bound"] = r.clip_bound;
    return j;
}

Json to_json(const SelectionReport& r)
{
    Json scores = Json::array();
    for (double s : r.scores) scores.push_back(std::isfinite(s) ? Json(s) : Json(nullptr));
    return {{"criterion", to_string(r.criterion)},
            {"grid", r.grid},
            {"scores", scores},
            {"chosen", r.chosen},
            {"chosen_point", r.grid.at(r.chosen)},
            {"replicate_seed", r.replicate_seed}};
}

void write_selection_csv(std::ostream& out, const SelectionReport& r, bool header)
{
    if (header) out << "criterion,lambda,lambda_y,fold,score\n";
    const std::string name = to_string(r.criterion);
    for (std::size_t k = 0; k < r.grid.size(); ++k) {
        const auto& p = r.grid[k];
        const std::string lx = format_double(p.at(0));
        const std::string ly = p.size() > 1 ? format_double(p[1]) : std::string("NA");
        if (k < r.fold_scores.size() && !r.fold_scores[k].empty()) {
            for (std::size_t f = 0; f < r.fold_scores[k].size(); ++f)
                out << name << ',' << lx << ',' << ly << ',' << f << ',' << format_double(r.fold_scores[k][f]) << '\n';
        } else {
            out << name << ',' << lx << ',' << ly << ",0," << format_double(r.scores[k]) << '\n';
        }
    }
}

Json to_json(const OtSolution<double>& s)
{
    return {{"value", s.value},
            {"transport_cost", s.transport_cost},
            {"entropy", s.entropy},
            {"converged", s.converged},
            {"iterations", s.iterations},
            {"marginal_violation", s.coupling.marginal_violation()}};
}

void write_coupling_csv(std::ostream& out, const Coupling<double>& c) { write_matrix_csv(out, c.plan); }

void write_coupling_edges(std::ostream& out, const Coupling<double>& c, double quantile)
{
    require(quantile >= 0.0 && quantile <= 1.0, "quantile must lie in [0, 1]");
    std::vector<double> masses(c.plan.data(), c.plan.data() + c.plan.size());
    std::sort(masses.begin(), masses.end());
    double cut = 0.0;
    if (!masses.empty()) {
        const auto k = static_cast<std::size_t>(quantile * double(masses.size() - 1));
        cut = masses[k];
    }
    out << "i,j,mass\n";
    for (Eigen::Index i = 0; i < c.plan.rows(); ++i)
        for (Eigen::Index j = 0; j < c.plan.cols(); ++j)
            if (c.plan(i, j) > 0.0 && c.plan(i, j) >= cut) out << i << ',' << j << ',' << format_double(c.plan(i, j)) << '\n';
}

void write_json(const std::string& path, const Json& j)
{
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << j.dump(2) << '\n';
}

Json read_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw Error(path + ": " + e.what());
    }
}

} // namespace otna
