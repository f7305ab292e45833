#pragma once

#include <stdexcept>
#include <string>

namespace kvsim {

// Error taxonomy used across the library. The CLI maps ConfigError to exit
// code 3 and every other Error to 4; usage errors never reach this layer.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct ArgumentError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct IndexError : Error {
    using Error::Error;
};

// Violation of a stateful protocol, e.g. replacing a cache entry that just hit.
struct ContractError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace kvsim
