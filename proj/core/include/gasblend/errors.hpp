#pragma once

#include <stdexcept>
#include <string>

namespace gasblend {

/// Malformed or inconsistent input documents (networks, scenarios, profiles).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failures: Newton non-convergence, step-size collapse,
/// nonpositive densities, singular operators.  Carries the failure
/// location (time, row, node) in the message.
class NumericsError : public std::runtime_error {
public:
    explicit NumericsError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace gasblend
