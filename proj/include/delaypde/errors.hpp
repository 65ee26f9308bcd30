#pragma once

#include <stdexcept>
#include <string>

namespace delaypde {

/// Rejected user input: bad configuration value, inconsistent dimensions,
/// parameters outside their admissible range.  CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical breakdown inside a solver: iteration caps exceeded, singular
/// systems, residual checks failed.  CLI maps this to exit code 2.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace delaypde
