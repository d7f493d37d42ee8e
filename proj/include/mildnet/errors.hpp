#pragma once

#include <stdexcept>
#include <string>

namespace mild {

// Bad shapes, bad hyperparameters, malformed configs. CLI exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing/unreadable/mismatched input files. CLI exit code 3.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf in a computation; carries the name of the op/layer that produced it.
// CLI exit code 4.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mild
