#pragma once

#include <stdexcept>
#include <string>

namespace mixcl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input data (bad record, schema violation, duplicate id).
struct DataError : Error {
    using Error::Error;
};

/// Bad or inconsistent configuration. CLI exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

/// A pipeline stage was started before its inputs exist. CLI exit code 3.
struct DependencyError : Error {
    using Error::Error;
};

/// Non-finite loss or similar numerical failure. CLI exit code 4.
struct NumericalError : Error {
    using Error::Error;
};

}  // namespace mixcl
