#pragma once

#include <stdexcept>
#include <string>

namespace riempat {

/// Base class for all riempat exceptions.
class error : public std::runtime_error {
public:
    explicit error(const std::string& message) : std::runtime_error(message) {}
};

/// Caller-side contract violation: bad arguments, invalid configuration,
/// preconditions that do not hold.
class contract_error : public error {
public:
    using error::error;
};

/// Dimension or length mismatch between operands.
class shape_error : public contract_error {
public:
    using contract_error::contract_error;
};

/// Structurally valid input that is degenerate for the requested operation
/// (zero trace, constant targets, zero predicted variance, ...).
class degenerate_error : public contract_error {
public:
    using contract_error::contract_error;
};

/// Too few observations to estimate the requested quantity.
class insufficient_data_error : public contract_error {
public:
    using contract_error::contract_error;
};

/// Runtime numerical failure (eigensolver breakdown, loss of definiteness, ...).
class numerical_error : public error {
public:
    using error::error;
};

/// A matrix that must be symmetric positive definite is not.
class not_positive_definite_error : public numerical_error {
public:
    using numerical_error::numerical_error;
};

/// A linear solve or inversion hit a numerically singular matrix.
class rank_error : public numerical_error {
public:
    using numerical_error::numerical_error;
};

/// An iterative scheme stopped before reaching its tolerance.
class convergence_error : public numerical_error {
public:
    convergence_error(const std::string& message, double final_residual)
        : numerical_error(message), final_residual_(final_residual) {}

    double final_residual() const noexcept { return final_residual_; }

private:
    double final_residual_;
};

/// Malformed files, unknown format versions, unreadable paths.
class io_error : public error {
public:
    using error::error;
};

}  // namespace riempat
