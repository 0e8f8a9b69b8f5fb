#pragma once

#include "meanfield/csv.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace meanfield {

using Json = nlohmann::ordered_json;

enum class Source { Default, File, Flag };

const char* to_string(Source s);

/// Experiments the command line can dispatch.
const std::vector<std::string>& experiment_names();

/// Fully resolved configuration tree with the origin of every leaf.
struct RunConfig {
    std::string experiment;
    Json values;
    std::map<std::string, Source> provenance;  // dotted leaf path -> origin

    const Json& at(const std::string& path) const;
    double number(const std::string& path) const;
    std::size_t count(const std::string& path) const;
    std::uint64_t seed_value(const std::string& path) const;
    bool flag(const std::string& path) const;
    std::string text(const std::string& path) const;
    std::vector<double> numbers(const std::string& path) const;
    std::filesystem::path out_dir() const;
};

/// Default tree for one experiment (shared defaults plus its own overlay).
Json default_config(const std::string& experiment);

/// Merges file (may be empty path) and "key.path=value" overrides over the
/// defaults, then checks every invariant. Throws ConfigError naming the path.
RunConfig parse_and_validate(const std::string& experiment, const std::filesystem::path& file,
                             const std::vector<std::string>& overrides);

/// Pretty JSON of the resolved tree; feeding it back with --config reproduces the run.
std::string resolved_json(const RunConfig& cfg);
std::string provenance_json(const RunConfig& cfg);

struct RunOutputs {
    std::vector<std::filesystem::path> files;
    CsvTable summary;
};

/// Writes config.json, provenance.json, the data CSVs and summary.csv under io.out_dir.
RunOutputs run_experiment(const RunConfig& cfg);

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitIo = 3, kExitDivergence = 4 };

/// Maps the in-flight exception to an exit code and a one-line message.
int exit_code_for_current_exception(std::string& message);

}  // namespace meanfield
