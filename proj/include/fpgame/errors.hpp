#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fpgame {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid input: shapes, ranges, malformed configuration. The CLI maps it to exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A computation was rejected on numerical grounds. The CLI maps it to exit code 3.
class NumericalError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public NumericalError {
public:
    DivergenceError(const std::string& what, std::size_t step)
        : NumericalError(what), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

class ConditioningError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Mass escaped the computational box beyond the accepted leakage.
class DomainEscapeError : public NumericalError {
public:
    DomainEscapeError(const std::string& what, std::size_t cell, double leakage)
        : NumericalError(what), cell_(cell), leakage_(leakage) {}
    std::size_t cell() const noexcept { return cell_; }
    double leakage() const noexcept { return leakage_; }

private:
    std::size_t cell_;
    double leakage_;
};

class NonConvergenceError : public NumericalError {
public:
    NonConvergenceError(const std::string& what, std::size_t iterations, double residual)
        : NumericalError(what), iterations_(iterations), residual_(residual) {}
    std::size_t iterations() const noexcept { return iterations_; }
    double residual() const noexcept { return residual_; }

private:
    std::size_t iterations_;
    double residual_;
};

/// A density puts mass where the reference density vanishes.
class SupportError : public NumericalError {
public:
    SupportError(const std::string& what, std::size_t cell)
        : NumericalError(what), cell_(cell) {}
    std::size_t cell() const noexcept { return cell_; }

private:
    std::size_t cell_;
};

/// Every candidate of a channel was rejected by the admissibility filters.
class EmptyStrategyError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace fpgame
