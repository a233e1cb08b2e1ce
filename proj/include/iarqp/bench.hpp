#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "iarqp/driver.hpp"

namespace iarqp
{
    /// A grid of runs: every epsilon in `epsilons` against every seed.
    ///
    /// Each seed fixes its own starting point (drawn uniformly from the ball of radius x0_radius
    /// unless x0 is given) and its own oracle stream, both independent of epsilon.
    struct SweepSpec
    {
        std::string problem = "quadratic";
        Eigen::Index dim = 0; // 0: the problem's default (2, 1 for cubic, the data width for a data file)
        std::string data_path;
        std::optional<Eigen::VectorXd> x0;
        double x0_radius = 1.0;
        std::vector<double> epsilons{1e-2};
        std::vector<std::uint64_t> seeds{0};
        int threads = 1;
        Config base; // epsilon is overwritten per row, uniformly across orders
        /// Per-order accuracies from [algorithm] epsilon; used by single runs in place of epsilons[0].
        std::optional<std::vector<double>> per_order_epsilon;
    };

    /// The problem a spec refers to.
    ProblemPtr spec_problem(const SweepSpec& spec);

    struct SweepRow
    {
        double epsilon = 0.0;
        long n_runs = 0;
        double mean_N = 0.0; // over converged runs
        double median_N = 0.0;
        double stddev_N = 0.0;
        double mean_deriv_evals = 0.0;
        double mean_f_evals = 0.0;
        double frac_converged = 0.0;
        double empirical_p_star = 0.0; // fraction of instrumented iterations where every event held
        long n_inner_failures = 0;     // not part of the emitted table

        friend bool operator==(const SweepRow&, const SweepRow&) = default;
    };

    struct SlopeFit
    {
        double slope = 0.0;
        double intercept = 0.0;
        double r_squared = 0.0;
    };

    /// Reads an INI file with sections [problem], [algorithm], [noise] and [sweep].
    /// Unknown sections or keys are configuration errors.
    SweepSpec load_spec(const std::string& path);
    SweepSpec parse_spec(const std::string& text);

    /// Non-fatal remarks about a spec (for example epsilons not strictly decreasing).
    std::vector<std::string> spec_warnings(const SweepSpec& spec);

    Eigen::VectorXd starting_point(const SweepSpec& spec, std::uint64_t seed);
    std::uint64_t run_seed(std::uint64_t seed);

    /// One single run of the spec: the first epsilon and the given seed.
    RunResult run_single(const SweepSpec& spec, std::uint64_t seed);

    std::vector<SweepRow> run_sweep(const SweepSpec& spec);

    /// Least squares of log(mean_N) against log(1/epsilon). Needs three or more fully converged rows.
    SlopeFit fit_slope(const std::vector<SweepRow>& rows);

    inline constexpr const char* kCsvHeader =
        "epsilon,n_runs,mean_N,median_N,stddev_N,mean_deriv_evals,mean_f_evals,frac_converged,empirical_p_star";

    std::string rows_to_csv(const std::vector<SweepRow>& rows);
    std::vector<SweepRow> rows_from_csv(const std::string& text);
    std::string rows_to_json(const std::vector<SweepRow>& rows);
    std::vector<SweepRow> rows_from_json(const std::string& text);

    /// format is "csv" or "json"; throws std::runtime_error when the file cannot be written.
    void emit(const std::vector<SweepRow>& rows, const std::string& path, const std::string& format);
}
