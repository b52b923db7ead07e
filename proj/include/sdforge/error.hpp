#pragma once

#include <stdexcept>
#include <string>

namespace sdforge {

// Input that is well-formed but violates a domain invariant (bad range,
// unknown simulator id, out-of-range index). The CLI maps it to exit code 1.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input that could not be parsed at all (malformed JSON/CSV).
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical failure inside an algorithm, e.g. a kernel matrix that stays
// indefinite after the maximum jitter.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace sdforge
