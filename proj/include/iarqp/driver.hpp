#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "iarqp/oracles.hpp"
#include "iarqp/reg_model.hpp"

namespace iarqp
{
    enum class NoiseMode
    {
        open_loop,
        closed_loop
    };

    enum class Termination
    {
        converged,
        budget_exhausted,
        inner_failure
    };

    std::string to_string(Termination t);
    std::string to_string(NoiseMode m);
    NoiseMode parse_noise_mode(const std::string& name);
    EstimateMode parse_estimate_mode(const std::string& name);
    std::string to_string(EstimateMode m);

    /// Algorithm constants and run controls. validate() throws ConfigError on any violation.
    struct Config
    {
        int p = 2;
        int q = 1;
        std::vector<double> epsilon{1e-3}; // one per order j = 1..q
        double theta = 0.25;
        double eta = 0.1;
        double gamma = 2.0;
        double sigma0 = 1.0;
        double sigma_min = 1e-8;
        double omega = default_omega(0.1);
        double alpha = 0.5; // accepted and stored, plays no role in the iteration
        int max_iterations = 500;
        int inner_budget = 200;

        NoiseSpec noise;
        NoiseMode noise_mode = NoiseMode::open_loop;
        double budget_floor = 1e-8;
        EstimateMode f_estimate_mode = EstimateMode::random;
        std::uint64_t seed = 0;
        bool instrument_events = true;
        /// Stop on the measures of the sampled model at s = 0 instead of the exact ones.
        bool stop_on_model = false;

        /// 0.9 min((1 - eta)/3, eta/2)
        static double default_omega(double eta);
        void validate() const;
    };

    struct EventFlags
    {
        bool m1 = true;
        std::vector<bool> m2; // per j = 1..q
        std::vector<bool> m3;
        bool mk = true;
    };

    /// Event flags together with the step-time quantities tau_k and the smallest inexact decrement.
    struct EventReport
    {
        EventFlags flags;
        double tau = 0.0;
        double dt_min = 0.0;
    };

    struct IterationRecord
    {
        int k = 0;
        double sigma = 0.0;
        double sigma_next = 0.0;
        double step_norm = 0.0;
        double rho = -std::numeric_limits<double>::infinity();
        bool success = false;
        double dt_bar = 0.0;
        std::vector<double> phi_bar;
        std::vector<double> radii;
        double f_exact_before = 0.0;
        double f_exact_after = 0.0; // at the trial point x_k + s_k
        double f_bar_before = std::numeric_limits<double>::quiet_NaN();
        double f_bar_after = std::numeric_limits<double>::quiet_NaN();
        double f_tolerance = 0.0;
        std::vector<double> budgets; // derivative error budgets handed to the oracle
        std::optional<EventFlags> events;
        double tau = 0.0;
        double dt_min = 0.0;
        int inner_iterations = 0;
    };

    struct CategoryCounts
    {
        long n_lambda = 0;
        long n_not_lambda = 0;
        long n_I = 0;
        long n_A = 0;
        long n_AS = 0;
        long n_AU = 0;
        long n_IS = 0;
        long n_S = 0;
        long n_U = 0;

        friend bool operator==(const CategoryCounts&, const CategoryCounts&) = default;
    };

    struct RunResult
    {
        std::optional<int> n_epsilon;
        std::vector<IterationRecord> trace;
        Eigen::VectorXd final_point;
        Termination termination = Termination::budget_exhausted;
        std::optional<CategoryCounts> counts;
        long deriv_evals = 0;
        long f_evals = 0;
        std::string message;
    };

    struct TheoryConstants
    {
        double sigma_s = 0.0;
        double varpi = 0.0;
        double psi_sigma_s = 0.0;
        double kappa_p_star = 0.0;
        double bound_on_expected_N = 0.0;
    };

    /// Accuracy events of one iteration: compares the exact and sampled models at the step along
    /// s_k, the exact-model maximizers d_{k,j} and the sampled-model maximizers. Uses exact
    /// derivatives, so it is instrumentation and is not counted as an oracle call.
    EventReport detect_events(const Problem& problem, const Eigen::VectorXd& x, const DerivativeBundle<double>& inexact,
                              const StepResult<double>& step, const Config& config, double sigma);

    /// tau and the smallest decrement computed from the sampled model only (s_k and the maximizers
    /// of the inexact model); what a deployed run can use to set the next error budgets.
    EventReport deployable_proxy(const DerivativeBundle<double>& inexact, const StepResult<double>& step,
                                 const Config& config, double sigma);

    RunResult run(const Problem& problem, const Eigen::VectorXd& x0, const Config& config);

    /// Lambda_k: sigma_k < sigma_s; closure: sigma_k <= sigma_s. Throws ContractViolation on an
    /// uninstrumented trace.
    CategoryCounts count_categories(const std::vector<IterationRecord>& trace, double sigma_s);

    /// beta = 2; p_* is taken from the noise spec (1 when there is no noise).
    TheoryConstants theory_constants(const Problem& problem, const Config& config, const Eigen::VectorXd& x0);

    /// Exact-derivative stopping test at x with the given radii.
    bool exact_stopping_test(const Problem& problem, const Eigen::VectorXd& x, const Config& config,
                             const std::vector<double>& radii);

    /// One JSON object per line with stable field names; rho = -inf is written as null.
    std::string trace_to_jsonl(const std::vector<IterationRecord>& trace);
}
