#pragma once

#include <stdexcept>
#include <string>

namespace dynalab {

// Error taxonomy used across the library. All carry a human-readable
// message naming the offending entity (layer index, parameter, buffer).

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller broke a contract (empty buffer, out-of-range index, stale tape).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Optimization produced non-finite values.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad external input (NaN action, malformed file).
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace dynalab
