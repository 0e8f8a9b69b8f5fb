#pragma once

#include "meanfield/dynamics.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace meanfield {

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::vector<double> column(const std::string& name) const;
};

/// %.17g, so a parse of the text gives back the same double.
std::string format_double(double v);

/// Header + rows, LF line endings. Creates the parent directory; throws IoError.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& columns,
               const std::vector<std::vector<double>>& rows);
void emit_csv(const TrajectoryRecord& record, const std::filesystem::path& path);

/// One row per particle: a, w_1, ..., w_d.
void write_state(const std::filesystem::path& path, const Eigen::MatrixXd& theta);
Eigen::MatrixXd read_state(const std::filesystem::path& path);

CsvTable read_csv(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace meanfield
