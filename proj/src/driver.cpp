#include "iarqp/driver.hpp"

#include <algorithm>
#include <cmath>

#include "iarqp/criticality.hpp"
#include "iarqp/errors.hpp"

namespace iarqp
{
    using Eigen::VectorXd;

    std::string to_string(Termination t)
    {
        switch (t)
        {
        case Termination::converged:
            return "converged";
        case Termination::budget_exhausted:
            return "budget_exhausted";
        default:
            return "inner_failure";
        }
    }

    std::string to_string(NoiseMode m) { return m == NoiseMode::open_loop ? "open_loop" : "closed_loop"; }

    NoiseMode parse_noise_mode(const std::string& name)
    {
        if (name == "open_loop")
            return NoiseMode::open_loop;
        if (name == "closed_loop")
            return NoiseMode::closed_loop;
        throw ConfigError("unknown noise mode '" + name + "'");
    }

    EstimateMode parse_estimate_mode(const std::string& name)
    {
        if (name == "random")
            return EstimateMode::random;
        if (name == "adversarial")
            return EstimateMode::adversarial;
        throw ConfigError("unknown f-estimate mode '" + name + "'");
    }

    std::string to_string(EstimateMode m) { return m == EstimateMode::random ? "random" : "adversarial"; }

    double Config::default_omega(double eta) { return 0.9 * std::min((1.0 - eta) / 3.0, eta / 2.0); }

    void Config::validate() const
    {
        auto fail = [](const std::string& what) { throw ConfigError("config: " + what); };
        if (p < 1 || p > kMaxOrder)
            fail("p must be 1, 2 or 3");
        if (q < 1 || q > 2 || q > p)
            fail("q must be 1 or 2 and at most p");
        if (static_cast<int>(epsilon.size()) != q)
            fail("epsilon needs exactly q entries");
        for (double e : epsilon)
            if (!(e > 0.0 && e <= 1.0))
                fail("epsilon entries must lie in (0, 1]");
        if (!(theta > 0.0 && theta < 0.5))
            fail("theta must lie in (0, 1/2)");
        if (!(eta > 0.0 && eta < 1.0))
            fail("eta must lie in (0, 1)");
        if (!(gamma > 1.0) || !std::isfinite(gamma))
            fail("gamma must be greater than 1");
        if (!(sigma0 > 0.0) || !std::isfinite(sigma0))
            fail("sigma0 must be positive");
        if (!(sigma_min > 0.0 && sigma_min < sigma0))
            fail("sigma_min must lie in (0, sigma0)");
        const double omega_max = std::min((1.0 - eta) / 3.0, eta / 2.0);
        if (!(omega > 0.0 && omega < omega_max))
            fail("omega must lie in (0, min((1-eta)/3, eta/2)) = (0, " + std::to_string(omega_max) + ")");
        if (!(alpha > 0.0 && alpha < 1.0))
            fail("alpha must lie in (0, 1)");
        if (max_iterations < 0)
            fail("max_iterations must be nonnegative");
        if (inner_budget < 0)
            fail("inner_budget must be nonnegative");
        if (!(budget_floor > 0.0) || !std::isfinite(budget_floor))
            fail("budget floor must be positive");
        noise.validate();
        const bool budgeted = noise.kind == NoiseSpec::Kind::gaussian_relative
                              || noise.kind == NoiseSpec::Kind::adversarial_sign;
        if (budgeted && noise_mode == NoiseMode::open_loop && !(noise.magnitude > 0.0))
            fail("open-loop noise needs a positive magnitude");
    }

    namespace
    {
        std::vector<double> radii_or_ones(const StepResult<double>& step, int q)
        {
            if (static_cast<int>(step.radii.size()) >= q)
                return step.radii;
            return std::vector<double>(static_cast<std::size_t>(q), 1.0);
        }
    }

    EventReport deployable_proxy(const DerivativeBundle<double>& inexact, const StepResult<double>& step,
                                 const Config& config, double sigma)
    {
        const RegModel<double> model{inexact, sigma};
        const std::vector<double> radii = radii_or_ones(step, config.q);
        const DerivativeBundle<double> shifted = model_shifted_bundle(model, step.step, config.q);
        EventReport r;
        r.tau = step.step.norm();
        r.dt_min = taylor_decrement(inexact, step.step);
        for (int j = 1; j <= config.q; ++j)
        {
            const DerivativeBundle<double> bj = shifted.truncated(j);
            const VectorXd dbar = phi_measure(bj, j, radii[static_cast<std::size_t>(j - 1)]).direction;
            r.tau = std::max(r.tau, dbar.norm());
            r.dt_min = std::min(r.dt_min, taylor_decrement(bj, dbar));
        }
        return r;
    }

    EventReport detect_events(const Problem& problem, const VectorXd& x, const DerivativeBundle<double>& inexact,
                              const StepResult<double>& step, const Config& config, double sigma)
    {
        const int p = config.p;
        const int q = config.q;
        const double omega = config.omega;
        require(inexact.degree() == p, "detect_events: bundle degree does not match p");
        const DerivativeBundle<double> exact = problem.bundle(x, p);
        const RegModel<double> exact_model{exact, sigma};
        const RegModel<double> inexact_model{inexact, sigma};
        const VectorXd& s = step.step;
        const std::vector<double> radii = radii_or_ones(step, q);

        auto close = [omega](double bar, double truth) { return std::abs(bar - truth) <= omega * bar; };

        EventReport r;
        const double dt_bar = taylor_decrement(inexact, s);
        r.flags.m1 = close(dt_bar, taylor_decrement(exact, s));
        r.tau = s.norm();
        r.dt_min = dt_bar;

        const DerivativeBundle<double> exact_shift = model_shifted_bundle(exact_model, s, q);
        const DerivativeBundle<double> inexact_shift = model_shifted_bundle(inexact_model, s, q);
        for (int j = 1; j <= q; ++j)
        {
            const double delta = radii[static_cast<std::size_t>(j - 1)];
            const DerivativeBundle<double> ej = exact_shift.truncated(j);
            const DerivativeBundle<double> ij = inexact_shift.truncated(j);
            const VectorXd d = phi_measure(ej, j, delta).direction;
            const VectorXd dbar = phi_measure(ij, j, delta).direction;
            const double along_d = taylor_decrement(ij, d);
            const double along_dbar = taylor_decrement(ij, dbar);
            r.flags.m2.push_back(close(along_d, taylor_decrement(ej, d)));
            r.flags.m3.push_back(close(along_dbar, taylor_decrement(ej, dbar)));
            r.tau = std::max({r.tau, d.norm(), dbar.norm()});
            r.dt_min = std::min({r.dt_min, along_d, along_dbar});
        }
        r.flags.mk = r.flags.m1;
        for (int j = 0; j < q; ++j)
            r.flags.mk = r.flags.mk && r.flags.m2[static_cast<std::size_t>(j)] && r.flags.m3[static_cast<std::size_t>(j)];
        return r;
    }

    bool exact_stopping_test(const Problem& problem, const VectorXd& x, const Config& config,
                             const std::vector<double>& radii)
    {
        return termination_test(problem.bundle(x, config.q), radii, config.epsilon, config.q);
    }

    RunResult run(const Problem& problem, const VectorXd& x0, const Config& config)
    {
        config.validate();
        if (x0.size() != problem.dim())
            throw ConfigError("run: starting point has dimension " + std::to_string(x0.size()) + ", problem '"
                              + problem.name() + "' has " + std::to_string(problem.dim()));
        if (config.p > problem.degree_available())
            throw ConfigError("run: problem does not provide derivatives of order p");

        Rng rng(config.seed);
        const int p = config.p;
        const int q = config.q;
        StepOptions options;
        options.inner_budget = config.inner_budget;

        RunResult result;
        VectorXd x = x0;
        double sigma = config.sigma0;
        std::vector<double> radii(static_cast<std::size_t>(q), 1.0);
        std::optional<EventReport> previous_proxy;

        for (int k = 0;; ++k)
        {
            if (!config.stop_on_model && exact_stopping_test(problem, x, config, radii))
            {
                result.n_epsilon = k;
                result.termination = Termination::converged;
                break;
            }
            if (k >= config.max_iterations)
            {
                result.termination = Termination::budget_exhausted;
                result.message = "iteration limit of " + std::to_string(config.max_iterations) + " reached";
                break;
            }

            // Step 1: derivative estimates within the current budgets
            AccuracyTargets targets;
            if (config.noise_mode == NoiseMode::open_loop)
                targets.per_order.assign(static_cast<std::size_t>(p), std::max(config.noise.magnitude, config.budget_floor));
            else if (previous_proxy)
                targets = accuracy_targets_from_proxy(config.omega, p, previous_proxy->tau, previous_proxy->dt_min,
                                                      config.budget_floor);
            else
                targets.per_order.assign(static_cast<std::size_t>(p), config.budget_floor);
            const DerivativeBundle<double> bundle = sample_derivatives(problem, config.noise, x, p, targets, rng);
            ++result.deriv_evals;

            if (config.stop_on_model && termination_test(bundle, radii, config.epsilon, q))
            {
                result.n_epsilon = k;
                result.termination = Termination::converged;
                break;
            }

            // Step 2: step computation
            const RegModel<double> model{bundle, sigma};
            StepResult<double> step;
            try
            {
                step = compute_step(model, config.epsilon, config.theta, q, options);
            }
            catch (const InnerSolverFailure& e)
            {
                result.termination = Termination::inner_failure;
                result.message = std::string(e.what()) + " at iteration " + std::to_string(k);
                break;
            }

            IterationRecord rec;
            rec.k = k;
            rec.sigma = sigma;
            rec.step_norm = step.step.norm();
            rec.dt_bar = step.model_decrement;
            rec.phi_bar = step.phi_bar;
            rec.radii = step.radii;
            rec.budgets = targets.per_order;
            rec.inner_iterations = step.inner_iterations;

            const EventReport proxy = deployable_proxy(bundle, step, config, sigma);
            if (config.instrument_events)
            {
                const EventReport ev = detect_events(problem, x, bundle, step, config, sigma);
                rec.events = ev.flags;
                rec.tau = ev.tau;
                rec.dt_min = ev.dt_min;
            }
            else
            {
                rec.tau = proxy.tau;
                rec.dt_min = proxy.dt_min;
            }
            previous_proxy = proxy;

            // Steps 3-4: function estimates and acceptance
            const VectorXd trial = x + step.step;
            rec.f_exact_before = problem.value(x);
            rec.f_exact_after = problem.value(trial);
            if (rec.dt_bar > 0.0)
            {
                rec.f_tolerance = config.omega * rec.dt_bar;
                rec.f_bar_before = function_estimate(problem, x, rec.f_tolerance, config.f_estimate_mode,
                                                     EstimateSite::current, rng);
                rec.f_bar_after = function_estimate(problem, trial, rec.f_tolerance, config.f_estimate_mode,
                                                    EstimateSite::trial, rng);
                result.f_evals += 2;
                rec.rho = (rec.f_bar_before - rec.f_bar_after) / rec.dt_bar;
            }
            rec.success = rec.rho >= config.eta;

            // Step 5: regularization update
            sigma = rec.success ? std::max(config.sigma_min, sigma / config.gamma) : config.gamma * sigma;
            rec.sigma_next = sigma;
            if (rec.success)
                x = trial;
            radii = step.radii;
            result.trace.push_back(std::move(rec));
        }

        result.final_point = x;
        if (config.instrument_events)
            result.counts = count_categories(result.trace, theory_constants(problem, config, x0).sigma_s);
        return result;
    }

    CategoryCounts count_categories(const std::vector<IterationRecord>& trace, double sigma_s)
    {
        CategoryCounts c;
        for (const auto& rec : trace)
        {
            require(rec.events.has_value(), "count_categories: trace is not instrumented");
            const bool lambda = rec.sigma < sigma_s;
            const bool closure = rec.sigma <= sigma_s;
            const bool accurate = rec.events->mk;
            const bool success = rec.success;
            c.n_lambda += lambda;
            c.n_not_lambda += !lambda;
            c.n_I += closure && !accurate;
            c.n_A += closure && accurate;
            c.n_AS += closure && accurate && success;
            c.n_AU += lambda && accurate && !success;
            c.n_IS += closure && !accurate && success;
            c.n_S += closure && success;
            c.n_U += lambda && !success;
        }
        return c;
    }

    TheoryConstants theory_constants(const Problem& problem, const Config& config, const VectorXd& x0)
    {
        config.validate();
        const int p = config.p;
        const int q = config.q;
        const double beta = 2.0;
        const double lip = problem.lipschitz(p);
        require(std::isfinite(lip) && lip >= 0.0, "theory_constants: Lipschitz constant must be finite");

        TheoryConstants t;
        t.sigma_s = std::max(beta * config.sigma0, lip / (1.0 - config.eta - 3.0 * config.omega));
        t.varpi = static_cast<double>(p + 1) / static_cast<double>(p - q + 1);
        t.psi_sigma_s = std::min(
            1.0, std::pow((1.0 - 2.0 * config.theta) * factorial(p - q + 1) / (factorial(q) * (lip + t.sigma_s)), t.varpi));
        const double p_star = config.noise.kind == NoiseSpec::Kind::none ? 1.0 : config.noise.p_star;
        t.kappa_p_star = 2.0 * p_star / ((2.0 * p_star - 1.0) * (2.0 * p_star - 1.0));
        const double eps_min = *std::min_element(config.epsilon.begin(), config.epsilon.end());
        const double gap = problem.value(x0) - problem.f_low();
        const double log_term = std::ceil(std::log(t.sigma_s / config.sigma0) / std::log(config.gamma));
        t.bound_on_expected_N =
            t.kappa_p_star
            * (2.0 * gap * factorial(p + 1) / ((config.eta - 2.0 * config.omega) * config.sigma_min * t.psi_sigma_s)
                   * std::pow(eps_min, -t.varpi)
               + log_term + 2.0);
        return t;
    }
}
