#pragma once

#include <stdexcept>
#include <string>

namespace pivot {

// Caller handed an operation something that violates its preconditions.
struct InvalidInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Stored or loaded data fails a structural invariant.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A configured resource cap would be exceeded.
struct ResourceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A file could not be parsed; the message names the offending line.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace pivot
