#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace asag {

/// Shape or dimensionality disagreement between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed or non-finite input data (files, costs, marginals).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Gradient requested for a tensor that never entered the tape.
class MissingGradientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// NaN/Inf produced during a numerical procedure.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::size_t step)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

}  // namespace asag
