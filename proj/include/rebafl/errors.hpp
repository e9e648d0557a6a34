#pragma once

#include <stdexcept>
#include <string>

namespace rebafl {

// Invalid configuration: bad shapes, option ranges, file references.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (files, labels, partitions).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// A loss evaluated in a regime where it is undefined, e.g. a batch label
// whose prior probability is exactly zero.
struct DegenerateLossError : std::runtime_error {
    explicit DegenerateLossError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or failed numerical validation at runtime.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Internal consistency violation: mismatched caches, impossible states.
struct InternalError : std::logic_error {
    explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace rebafl
