#include "meanfield/csv.hpp"

#include "meanfield/errors.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace meanfield {

namespace {

void ensure_parent(const std::filesystem::path& path) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s) {
    if (s == "nan") return std::nan("");
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw IoError("malformed number '" + s + "'");
    return v;
}

}  // namespace

std::vector<double> CsvTable::column(const std::string& name) const {
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (columns[c] != name) continue;
        std::vector<double> out;
        for (const auto& r : rows) out.push_back(r[c]);
        return out;
    }
    throw std::out_of_range("no column '" + name + "'");
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& columns,
               const std::vector<std::vector<double>>& rows) {
    std::string text;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (c) text += ',';
        text += columns[c];
    }
    text += '\n';
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < r.size(); ++c) {
            if (c) text += ',';
            text += format_double(r[c]);
        }
        text += '\n';
    }
    write_text(path, text);
}

void emit_csv(const TrajectoryRecord& record, const std::filesystem::path& path) {
    write_csv(path, record.columns, record.rows);
}

void write_state(const std::filesystem::path& path, const Eigen::MatrixXd& theta) {
    std::vector<std::string> cols = {"a"};
    for (Eigen::Index j = 1; j < theta.rows(); ++j) cols.push_back("w" + std::to_string(j));
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(theta.cols()));
    for (Eigen::Index i = 0; i < theta.cols(); ++i)
        rows[static_cast<std::size_t>(i)].assign(theta.col(i).data(), theta.col(i).data() + theta.rows());
    write_csv(path, cols, rows);
}

Eigen::MatrixXd read_state(const std::filesystem::path& path) {
    const CsvTable t = read_csv(path);
    Eigen::MatrixXd theta(static_cast<Eigen::Index>(t.columns.size()), static_cast<Eigen::Index>(t.rows.size()));
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        for (std::size_t j = 0; j < t.columns.size(); ++j)
            theta(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = t.rows[i][j];
    return theta;
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty csv " + path.string());
    t.columns = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != t.columns.size()) throw IoError("ragged row in " + path.string());
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) row.push_back(parse_double(c));
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace meanfield
