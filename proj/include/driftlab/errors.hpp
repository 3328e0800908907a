#pragma once

#include <stdexcept>
#include <string>

namespace driftlab {

// Bad inputs: malformed configs, violated preconditions. The CLI maps this to exit code 1.
class ValidationError : public std::invalid_argument {
public:
    ValidationError(std::string key, const std::string& message)
        : std::invalid_argument(message), key_(std::move(key)) {}
    explicit ValidationError(const std::string& message) : std::invalid_argument(message) {}

    // Dotted config key or parameter name the error refers to; may be empty.
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

// Iterative solver ran out of budget (Jacobi sweeps, Newton steps, power iteration, ...).
class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// An iterate left the finite range.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace driftlab
