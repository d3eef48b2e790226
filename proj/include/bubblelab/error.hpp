#pragma once

#include <stdexcept>
#include <string>

namespace bubblelab {

// Raised when an input violates a documented precondition or invariant.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised when a computation produces a value that cannot be trusted
// (non-finite output, CFL violation, positivity lost).
class NumericalFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A requested method cannot evaluate the given asset/family combination.
class IncompatibleMethod : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

inline void require(bool condition, const std::string& message)
{
    if (!condition) {
        throw InvalidArgument(message);
    }
}

} // namespace bubblelab
