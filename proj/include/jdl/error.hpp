#pragma once

#include <stdexcept>
#include <string>

namespace jdl {

// Malformed or truncated input files (PPM, raw tensors, table/model JSON).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad arguments or violated preconditions.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A loaded value violates a domain invariant (e.g. a non-positive step size).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace jdl
