#include "otna/csv_io.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace otna {

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s)
{
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
    return s;
}

std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') quoted = !quoted;
        if (ch == ',' && !quoted) {
            cells.push_back(trim(cell));
            cell.clear();
        } else {
            cell.push_back(ch);
        }
    }
    cells.push_back(trim(cell));
    return cells;
}

double parse_number(const std::string& cell, std::size_t line)
{
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    if (!cell.empty() && cell.front() == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw Error("CSV line " + std::to_string(line) + ": cannot parse '" + cell + "' as a number");
    return v;
}

bool is_missing(const std::string& cell) { return cell.empty() || cell == "NA"; }

std::ifstream open_in(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return in;
}

std::ofstream open_out(const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    return out;
}

} // namespace

std::string format_double(double v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw Error("number formatting failed");
    return std::string(buf, ptr);
}

std::vector<std::string> default_names(Eigen::Index d, const std::string& prefix)
{
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < d; ++j) names.push_back(prefix + std::to_string(j));
    return names;
}

Table parse_csv(std::istream& in)
{
    std::string line;
    std::size_t line_no = 0;
    Table t;
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) break;
    }
    if (line_no == 0 || trim(line).empty()) throw Error("CSV input has no header row");
    for (auto& name : split(line)) t.names.push_back(unquote(name));
    const std::size_t d = t.names.size();

    std::vector<std::vector<double>> values;
    std::vector<std::vector<unsigned char>> observed;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split(line);
        if (cells.size() != d)
            throw Error("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(d) + " cells, found " +
                        std::to_string(cells.size()));
        std::vector<double> row(d, 0.0);
        std::vector<unsigned char> obs(d, 0);
        for (std::size_t j = 0; j < d; ++j) {
            if (is_missing(cells[j])) continue;
            row[j] = parse_number(cells[j], line_no);
            obs[j] = 1;
        }
        values.push_back(std::move(row));
        observed.push_back(std::move(obs));
    }
    const auto n = static_cast<Eigen::Index>(values.size());
    t.values.resize(n, static_cast<Eigen::Index>(d));
    MaskMatrix m(n, static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            t.values(i, static_cast<Eigen::Index>(j)) = values[i][j];
            m(i, static_cast<Eigen::Index>(j)) = observed[i][j];
        }
    t.mask = Mask(std::move(m));
    return t;
}

Table read_csv(const std::string& path)
{
    auto in = open_in(path);
    return parse_csv(in);
}

void write_csv(std::ostream& out, const std::vector<std::string>& names, const MatrixXd& values, const Mask& mask)
{
    require_dims(static_cast<Eigen::Index>(names.size()) == values.cols(), "one name per column is required");
    require_dims(mask.rows() == values.rows() && mask.cols() == values.cols(), "values and mask shapes differ");
    for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
    out << '\n';
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index j = 0; j < values.cols(); ++j) {
            if (j) out << ',';
            out << (mask.observed(i, j) ? format_double(values(i, j)) : std::string("NA"));
        }
        out << '\n';
    }
}

void write_csv(const std::string& path, const std::vector<std::string>& names, const MatrixXd& values, const Mask& mask)
{
    auto out = open_out(path);
    write_csv(out, names, values, mask);
}

void write_csv(const std::string& path, const std::vector<std::string>& names, const MatrixXd& values)
{
    write_csv(path, names, values, Mask::full(values.rows(), values.cols()));
}

Mask parse_mask_csv(std::istream& in)
{
    std::string line;
    std::vector<std::vector<unsigned char>> rows;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<unsigned char> row;
        for (const auto& cell : split(line)) {
            if (cell != "0" && cell != "1")
                throw Error("mask line " + std::to_string(line_no) + ": entries must be 0 or 1");
            row.push_back(cell == "1" ? 1 : 0);
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw Error("mask line " + std::to_string(line_no) + ": ragged row");
        rows.push_back(std::move(row));
    }
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto d = n ? static_cast<Eigen::Index>(rows.front().size()) : 0;
    MaskMatrix m(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rows[i][j];
    return Mask(std::move(m));
}

Mask read_mask_csv(const std::string& path)
{
    auto in = open_in(path);
    return parse_mask_csv(in);
}

void write_mask_csv(std::ostream& out, const Mask& mask)
{
    for (Eigen::Index i = 0; i < mask.rows(); ++i) {
        for (Eigen::Index j = 0; j < mask.cols(); ++j) out << (j ? "," : "") << (mask.observed(i, j) ? '1' : '0');
        out << '\n';
    }
}

void write_mask_csv(const std::string& path, const Mask& mask)
{
    auto out = open_out(path);
    write_mask_csv(out, mask);
}

void write_matrix_csv(std::ostream& out, const MatrixXd& m)
{
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << format_double(m(i, j));
        out << '\n';
    }
}

void write_matrix_csv(const std::string& path, const MatrixXd& m)
{
    auto out = open_out(path);
    write_matrix_csv(out, m);
}

} // namespace otna
