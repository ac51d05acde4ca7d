#pragma once

#include <stdexcept>
#include <string>

namespace sri {

// Error taxonomy is kept small on purpose. The C wrapper maps each type to a
// stable status code, so adding a type here means extending sri.h as well.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller handed us something that violates a documented precondition.
struct InvalidArgument : Error {
    using Error::Error;
};

// Input file or text could not be parsed; message names the offending row.
struct ParseError : Error {
    using Error::Error;
};

// A numerical procedure failed (singular matrix, identification failure,
// degenerate training split). Message says which one and where.
struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace sri
