#pragma once

#include <stdexcept>

namespace izsd {

// Invalid argument values (non-finite inputs, out-of-range labels, empty samples).
struct DomainError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Operand shape mismatch.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Not enough tail mass above the threshold to support a GPD fit.
struct InsufficientTailError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed configuration or missing referenced files.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Unreadable or malformed data files.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Optimization diverged (loss became non-finite).
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incremental schedule violated (step inputs inconsistent with the split).
struct ProtocolError : std::logic_error {
    using std::logic_error::logic_error;
};

}  // namespace izsd
