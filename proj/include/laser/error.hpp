#pragma once

#include <stdexcept>
#include <string>

namespace laser {

// Precondition violated by the caller (bad shape, out-of-range rank, unknown name).
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// An iterative numerical routine failed to converge.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input file: container, dataset, plan or config.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace laser
