#pragma once

#include <stdexcept>
#include <string>

namespace deepcuts {

// Base for everything the library throws. Subclasses map to CLI exit codes:
// ConfigError -> 2, DataError -> 3, NumericError -> 4, InfeasibleError -> 5,
// anything else -> 1.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration file, key, or flag value.
struct ConfigError : Error {
    using Error::Error;
};

// Dataset or artifact content problems (empty stream, bad record, ...).
struct DataError : Error {
    using Error::Error;
};

// Non-finite values, diverging losses.
struct NumericError : Error {
    using Error::Error;
};

// Requested compression ratio cannot be met by the prunable set.
struct InfeasibleError : Error {
    using Error::Error;
};

// Shape / coverage mismatches between tensors, masks, and models.
struct ShapeError : Error {
    using Error::Error;
};

// API called out of order (backward without forward, missing cache, ...).
struct StateError : Error {
    using Error::Error;
};

// On-disk container corruption: bad magic, version, truncation.
struct FormatError : Error {
    using Error::Error;
};

// Argument outside its documented domain.
struct ValidationError : Error {
    using Error::Error;
};

}  // namespace deepcuts
