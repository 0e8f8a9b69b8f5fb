#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace meanfield {

/// Invalid or inconsistent configuration. `path` names the offending key
/// (dotted form) when one is known.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what, std::string path = {})
        : std::runtime_error(what), path_(std::move(path)) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

/// A valid request this build does not support (e.g. Gauss-Hermite for a
/// non-Gaussian data model).
class UnsupportedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A trajectory left the finite region; carries the step where it happened.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::int64_t step)
        : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}
    std::int64_t step() const { return step_; }

private:
    std::int64_t step_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace meanfield
