#pragma once

#include <stdexcept>
#include <string>

namespace dmvt {

// Error taxonomy. Callers that need to distinguish failure classes catch the
// subtype; the CLI maps them onto exit codes.
struct Error : std::runtime_error {
    explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes / extents.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid configuration (geometry, thresholds, unknown config keys).
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

// A documented call contract was violated (e.g. non-binary mask entries).
struct ContractError : Error {
    using Error::Error;
};

// Malformed binary file (bad magic, truncation, out-of-range payload).
struct FormatError : Error {
    using Error::Error;
};

// Malformed text input (manifest / config file), message carries line numbers.
struct ParseError : Error {
    using Error::Error;
};

// Filesystem failure.
struct IoError : Error {
    using Error::Error;
};

}  // namespace dmvt
