#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Core>

namespace iarqp
{
    /// Raised when a caller breaks a documented precondition (shape, range).
    class ContractViolation : public std::invalid_argument
    {
    public:
        using std::invalid_argument::invalid_argument;
    };

    /// Raised for invalid algorithm or sweep configuration.
    class ConfigError : public std::invalid_argument
    {
    public:
        using std::invalid_argument::invalid_argument;
    };

    /// A dense linear-algebra kernel failed (eigensolver did not converge, non-finite data).
    class NumericalError : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    /// The step computation exhausted its inner budget before the step tests held.
    /// Carries the best inner iterate so callers can inspect it.
    class InnerSolverFailure : public std::runtime_error
    {
    public:
        InnerSolverFailure(const std::string& what, Eigen::VectorXd best, double best_ratio, int iterations)
            : std::runtime_error(what), best_(std::move(best)), best_ratio_(best_ratio), iterations_(iterations)
        {
        }

        const Eigen::VectorXd& best_iterate() const { return best_; }
        /// max_j phi_bar_j / threshold_j at the best iterate (> 1 means the tests fail).
        double best_ratio() const { return best_ratio_; }
        int iterations() const { return iterations_; }

    private:
        Eigen::VectorXd best_;
        double best_ratio_;
        int iterations_;
    };

    inline void require(bool condition, const char* message)
    {
        if (!condition)
            throw ContractViolation(message);
    }
}
