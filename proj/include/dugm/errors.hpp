#pragma once

#include <stdexcept>
#include <string>

namespace dugm {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RangeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Raised when a training run produces a non-finite loss.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

} // namespace dugm
