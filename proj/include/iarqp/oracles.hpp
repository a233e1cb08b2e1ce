#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "iarqp/tensor_taylor.hpp"

namespace iarqp
{
    using Rng = std::mt19937_64;

    /// Smooth test function with analytic derivatives up to order three.
    ///
    /// Lipschitz constants are valid on the box ||x||_inf <= 10 and may be conservative.
    class Problem
    {
    public:
        virtual ~Problem() = default;

        virtual std::string name() const = 0;
        virtual Eigen::Index dim() const = 0;
        virtual int degree_available() const { return kMaxOrder; }
        virtual double value(const Eigen::VectorXd& x) const = 0;
        /// order-th derivative tensor, order in 1..degree_available().
        virtual SymmetricTensor<double> derivative(const Eigen::VectorXd& x, int order) const = 0;
        virtual double f_low() const = 0;
        /// Lipschitz constant of the p-th derivative.
        virtual double lipschitz(int p) const = 0;

        /// Exact bundle of degree p at x.
        virtual DerivativeBundle<double> bundle(const Eigen::VectorXd& x, int p) const;
    };

    /// f(x) = 1/m sum_i f_i(x); derivatives can be averaged over a subset of the terms.
    class FiniteSumProblem : public Problem
    {
    public:
        virtual Eigen::Index num_terms() const = 0;
        /// Bundle averaged over the listed terms (marked inexact unless the batch is every term).
        virtual DerivativeBundle<double> batch_bundle(const Eigen::VectorXd& x, int p,
                                                      const std::vector<Eigen::Index>& terms) const = 0;
    };

    using ProblemPtr = std::shared_ptr<const Problem>;

    /// Names accepted by make_problem.
    std::vector<std::string> builtin_problem_names();

    /// quadratic, rosenbrock (even dim), quartic, cubic (dim 1), least_squares.
    /// least_squares reads rows "a_1 ... a_n b" from data_path when given, otherwise uses
    /// a fixed synthetic data set; dim is then taken from the file.
    ProblemPtr make_problem(const std::string& name, Eigen::Index dim, const std::string& data_path = {});

    /// One instance of every builtin problem at (roughly) the requested dimension.
    std::vector<ProblemPtr> builtin_problems(Eigen::Index dim = 4);

    enum class EstimateMode
    {
        random,
        adversarial
    };

    /// Where the estimate is taken; adversarial mode pushes the two ends apart.
    enum class EstimateSite
    {
        current,
        trial
    };

    /// f(x) perturbed by at most abs_tol. Random mode draws uniformly on [-abs_tol, abs_tol];
    /// adversarial mode returns f + abs_tol at the current point and f - abs_tol at the trial point.
    double function_estimate(const Problem& problem, const Eigen::VectorXd& x, double abs_tol, EstimateMode mode,
                             EstimateSite site, Rng& rng);

    struct NoiseSpec
    {
        enum class Kind
        {
            none,
            gaussian_relative,
            adversarial_sign,
            subsample
        };

        Kind kind = Kind::none;
        double p_star = 1.0;       // target joint accuracy probability, in (1/2, 1]
        double magnitude = 0.0;    // fixed per-order budget in open-loop mode
        double batch_fraction = 1; // subsample only

        void validate() const;
    };

    NoiseSpec::Kind parse_noise_kind(const std::string& name);
    std::string to_string(NoiseSpec::Kind kind);

    /// Absolute error budgets xi_l on the induced norm of the order-l derivative error.
    struct AccuracyTargets
    {
        std::vector<double> per_order;
    };

    /// xi_l = max(floor, omega dt_min / (6 tau^l)), l = 1..p; floor alone when either proxy is not positive.
    AccuracyTargets accuracy_targets_from_proxy(double omega, int p, double tau, double dt_min, double floor);

    /// Inexact degree-p bundle at x.
    ///
    /// gaussian_relative: each order gets an independent symmetrized gaussian perturbation scaled so
    /// that its norm is within xi_l with probability p_star^(1/p). adversarial_sign: with the same
    /// probability a rank-one perturbation of norm below xi_l in a random direction, otherwise one of
    /// norm 10 xi_l aligned with the exact gradient so that the model overstates the available decrease.
    /// subsample: averages a random batch of terms of a finite-sum problem.
    DerivativeBundle<double> sample_derivatives(const Problem& problem, const NoiseSpec& noise,
                                                const Eigen::VectorXd& x, int p, const AccuracyTargets& targets,
                                                Rng& rng);

    /// Quantile at level prob of the tensor norm of a symmetrized standard gaussian order-l tensor on R^n.
    /// Monte Carlo on a fixed seed, cached per (n, l, prob); safe to call from several threads.
    double gaussian_norm_quantile(Eigen::Index n, int order, double prob);

    /// Symmetrized tensor with iid standard normal raw entries.
    SymmetricTensor<double> gaussian_tensor(int order, Eigen::Index n, Rng& rng);
}
