#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cml {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Construction or configuration parameters violate a documented precondition.
class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed external input (CSV, config file). Carries the offending line when known.
class InputError : public std::invalid_argument {
public:
    InputError(const std::string& what, std::size_t line = 0)
        : std::invalid_argument(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// An internal invariant of the sampler was broken; the run is aborted.
class ConsistencyError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A run exceeded its elementary-move or iteration budget.
class RunawayError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Iterative linear solver did not reach the requested residual.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, double residual)
        : std::runtime_error(what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

} // namespace cml
