// Acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <thread>
#include <vector>

#include <Eigen/Eigenvalues>

#include "event_trials.hpp"
#include "iarqp/bench.hpp"
#include "iarqp/criticality.hpp"
#include "iarqp/driver.hpp"
#include "test_support.hpp"

using namespace iarqp;
using iarqp::testing::Random;
using iarqp::testing::rel_err;
using Vec = Eigen::VectorXd;

namespace
{
    struct Outcome
    {
        bool pass = false;
        std::string detail;
    };

    std::string fmt(const char* f, auto... args)
    {
        char buf[512];
        std::snprintf(buf, sizeof buf, f, args...);
        return buf;
    }

    Config make_config(int p, int q, double eps)
    {
        Config c;
        c.p = p;
        c.q = q;
        c.epsilon.assign(static_cast<std::size_t>(q), eps);
        return c;
    }

    Vec uniform_box(Random& rng, Eigen::Index n, double r)
    {
        Vec x(n);
        for (Eigen::Index i = 0; i < n; ++i)
            x(i) = rng.uniform(-r, r);
        return x;
    }

    int threads() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

    // 1. decrease, step and sigma-update invariants over 50 mixed runs
    Outcome lemma_invariants()
    {
        struct Setup
        {
            std::string problem;
            Eigen::Index n;
            int p, q;
            NoiseSpec::Kind noise;
            NoiseMode mode;
            EstimateMode fmode;
        };
        using K = NoiseSpec::Kind;
        const NoiseMode open = NoiseMode::open_loop, closed = NoiseMode::closed_loop;
        const EstimateMode rnd = EstimateMode::random, adv = EstimateMode::adversarial;
        const std::vector<Setup> setups{
            {"quadratic", 4, 2, 1, K::none, open, rnd},
            {"rosenbrock", 2, 2, 1, K::none, open, adv},
            {"quartic", 6, 3, 2, K::none, open, rnd},
            {"quartic", 4, 2, 1, K::gaussian_relative, closed, rnd},
            {"rosenbrock", 4, 3, 1, K::gaussian_relative, open, adv},
            {"quartic", 3, 1, 1, K::adversarial_sign, closed, rnd},
            {"least_squares", 5, 2, 2, K::subsample, open, rnd},
            {"least_squares", 3, 1, 1, K::none, open, adv},
            {"quadratic", 3, 3, 2, K::gaussian_relative, closed, rnd},
            {"quartic", 10, 2, 2, K::adversarial_sign, closed, adv},
        };
        long runs = 0, iterations = 0, successes = 0, violations = 0, failures = 0, converged = 0;
        Random rng(1001);
        for (const auto& s : setups)
        {
            const ProblemPtr pb = make_problem(s.problem, s.n);
            for (std::uint64_t seed = 0; seed < 5; ++seed)
            {
                Config c = make_config(s.p, s.q, 1e-3);
                c.max_iterations = 500;
                c.noise.kind = s.noise;
                c.noise.p_star = 0.8;
                c.noise.magnitude = 1e-3;
                c.noise.batch_fraction = 0.5;
                c.noise_mode = s.mode;
                c.f_estimate_mode = s.fmode;
                c.seed = seed;
                const RunResult r = run(*pb, uniform_box(rng, pb->dim(), 2.0), c);
                ++runs;
                failures += r.termination == Termination::inner_failure;
                converged += r.termination == Termination::converged;
                const double fact = factorial(c.p + 1);
                for (const auto& rec : r.trace)
                {
                    ++iterations;
                    const double sp = std::pow(rec.step_norm, c.p + 1);
                    bool ok = rec.dt_bar >= rec.sigma / fact * sp * (1 - 1e-12) && rec.sigma / fact * sp >= c.sigma_min / fact * sp;
                    for (int j = 1; j <= c.q; ++j)
                    {
                        const auto ju = static_cast<std::size_t>(j - 1);
                        const double dj = rec.radii[ju];
                        ok = ok && dj > 0.0 && dj <= 1.0
                             && rec.phi_bar[ju] <= c.theta * c.epsilon[ju] * std::pow(dj, j) / factorial(j) * (1 + 1e-12) + 1e-300;
                    }
                    ok = ok && rec.success == (rec.rho >= c.eta);
                    if (rec.success)
                    {
                        ++successes;
                        ok = ok && rec.f_exact_before - rec.f_exact_after >= (c.eta - 2 * c.omega) * c.sigma_min / fact * sp - 1e-12;
                        ok = ok && rec.sigma_next == std::max(c.sigma_min, rec.sigma / c.gamma);
                    }
                    else
                    {
                        ok = ok && rec.sigma_next == c.gamma * rec.sigma;
                    }
                    violations += !ok;
                }
                for (std::size_t i = 1; i < r.trace.size(); ++i)
                    violations += r.trace[i].sigma != r.trace[i - 1].sigma_next;
            }
        }
        // Runs that end in an inner-solver failure still contribute every completed iteration; the
        // subsampled least-squares runs do this once the batch bias exceeds epsilon and sigma explodes.
        return {violations == 0,
                fmt("%ld runs, %ld iterations (%ld successful), %ld violations, %ld inner failures, %ld converged", runs,
                    iterations, successes, violations, failures, converged)};
    }

    // 2. sigma0 = 2 sigma_s makes the first exact iteration successful
    Outcome large_sigma()
    {
        Random rng(1002);
        long cases = 0, ok = 0;
        for (const auto& pb : builtin_problems(4))
        {
            for (int start = 0; start < 20; ++start)
            {
                Config c = make_config(2, 1, 1e-3);
                Vec x0;
                do
                    x0 = uniform_box(rng, pb->dim(), 2.0);
                while (exact_stopping_test(*pb, x0, c, {1.0}));
                c.sigma0 = 2 * theory_constants(*pb, c, x0).sigma_s;
                c.max_iterations = 1;
                c.seed = static_cast<std::uint64_t>(start);
                const RunResult r = run(*pb, x0, c);
                ++cases;
                ok += r.trace.size() == 1 && r.trace[0].success;
            }
        }
        return {ok == cases, fmt("%ld/%ld first iterations successful", ok, cases)};
    }

    // 3. perturbations at 0.99 of the sufficient-accuracy budget
    Outcome sufficient_accuracy()
    {
        Random rng(1003);
        long held = 0, within = 0;
        double worst = 0.0;
        const int trials = 1000;
        for (int i = 0; i < trials; ++i)
        {
            const auto t = iarqp::testing::budget_trial(rng, 0.99);
            held += t.mk;
            within += t.worst_ratio <= 1.0;
            worst = std::max(worst, t.worst_ratio);
        }
        return {held == trials && within == trials,
                fmt("M_k in %ld/%d trials, post-hoc error/budget <= 1 in %ld/%d (max %.4f)", held, trials, within, trials,
                    worst)};
    }

    // 4. closed-form measures against sampling and the eigenvalue identity
    Outcome criticality_equivalence()
    {
        Random rng(1004);
        int agree = 0, identity = 0;
        double worst_brute = 0.0, worst_identity = 0.0;
        const int instances = 200;
        for (int i = 0; i < instances; ++i)
        {
            const Eigen::Index n = rng.integer(1, 3);
            const int j = 1 + i % 2;
            const double delta = rng.uniform(0.1, 2.0);
            const Vec g = rng.vector(n) * std::pow(10.0, rng.uniform(-1, 1));
            const SymmetricTensor<double> h = rng.tensor(2, n);
            const auto bundle = make_bundle<double>(Vec::Zero(n), {SymmetricTensor<double>::from_vector(g), h});
            const double exact = j == 1 ? phi_order1(g, delta).value : phi_order2(g, h, delta).value;
            const double brute = phi_bruteforce(bundle.truncated(j), delta, 200000, static_cast<std::uint64_t>(i));
            const double e1 = rel_err(exact, brute);
            worst_brute = std::max(worst_brute, e1);
            agree += e1 <= 2e-2;

            const double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h.as_matrix(), Eigen::EigenvaluesOnly).eigenvalues()(0);
            const double expected = 0.5 * delta * delta * std::max(0.0, -lmin);
            const double got = phi_order2(Vec(Vec::Zero(n)), h, delta).value;
            const double e2 = rel_err(got, expected);
            worst_identity = std::max(worst_identity, e2);
            identity += e2 <= 1e-8;
        }
        return {agree == instances && identity == instances,
                fmt("brute force within 2e-2 on %d/%d (max rel %.2e); eigenvalue identity within 1e-8 on %d/%d (max rel %.2e)",
                    agree, instances, worst_brute, identity, instances, worst_identity)};
    }

    const char* kQuarticSweep = "[problem]\nname = quartic\ndim = 10\n"
                                "[algorithm]\np = 2\nq = 1\nmax_iterations = 500\n"
                                "[sweep]\nepsilons = 1e-2, 3e-3, 1e-3, 3e-4, 1e-4\ncount = 20\nx0_radius = 4\n";

    SweepSpec quartic_spec(const std::string& extra)
    {
        SweepSpec s = parse_spec(std::string(kQuarticSweep) + "threads = " + std::to_string(threads()) + "\n" + extra);
        return s;
    }

    std::vector<SweepRow> exact_quartic_rows()
    {
        static const std::vector<SweepRow> rows = run_sweep(quartic_spec(""));
        return rows;
    }

    // 5. complexity exponent on the exact quartic
    Outcome complexity_exponent()
    {
        const auto rows = exact_quartic_rows();
        bool all = true;
        std::string ns;
        for (const auto& r : rows)
        {
            all = all && r.frac_converged == 1.0;
            ns += fmt(" %.3g", r.mean_N);
        }
        if (!all)
            return {false, "not every run converged"};
        const SlopeFit fit = fit_slope(rows);
        return {fit.slope <= 1.5 + 0.3, fmt("slope %.4f (limit 1.8), r^2 %.3f, mean N:%s", fit.slope, fit.r_squared, ns.c_str())};
    }

    // 6. gaussian noise at p_* = 0.8 with closed-loop budgets
    Outcome noise_robustness()
    {
        const auto exact = exact_quartic_rows();
        // [noise] is appended after [sweep]; INI sections may come in any order
        const auto noisy = run_sweep(quartic_spec("[noise]\nkind = gaussian_relative\np_star = 0.8\nmode = closed_loop\n"));
        bool ok = true;
        double worst_ratio = 0.0, lowest_p = 1.0, lowest_frac = 1.0;
        for (std::size_t i = 0; i < noisy.size(); ++i)
        {
            const double ratio = noisy[i].median_N / exact[i].median_N;
            worst_ratio = std::max(worst_ratio, ratio);
            lowest_p = std::min(lowest_p, noisy[i].empirical_p_star);
            lowest_frac = std::min(lowest_frac, noisy[i].frac_converged);
            ok = ok && noisy[i].frac_converged == 1.0 && ratio <= 10.0 && noisy[i].empirical_p_star >= 0.7;
        }
        return {ok, fmt("min fraction converged %.3f, max median ratio %.3f (limit 10), min empirical p_* %.3f (limit 0.7)",
                        lowest_frac, worst_ratio, lowest_p)};
    }

    // 7. second-order stopping escapes the strict saddle at the origin
    Outcome saddle_escape()
    {
        const ProblemPtr pb = make_problem("quartic", 4);
        const Vec x0 = Vec::Zero(4);
        const RunResult first = run(*pb, x0, make_config(2, 1, 1e-3));
        const bool q1_stops = first.termination == Termination::converged && first.n_epsilon == 0;

        const Config c = make_config(2, 2, 1e-3);
        const RunResult second = run(*pb, x0, c);
        if (second.termination != Termination::converged || second.trace.empty())
            return {false, "q = 2 run did not converge away from the origin"};
        const auto& radii = second.trace.back().radii;
        const Vec g = pb->derivative(second.final_point, 1).as_vector();
        const auto h = pb->derivative(second.final_point, 2);
        const double phi1 = phi_order1(g, radii[0]).value;
        const double phi2 = phi_order2(g, h, radii[1]).value;
        const bool ok1 = phi1 <= 1e-3 * radii[0];
        const bool ok2 = phi2 <= 1e-3 * radii[1] * radii[1] / 2;
        return {q1_stops && ok1 && ok2 && *second.n_epsilon > 0,
                fmt("q=1 stops at iteration %d; q=2 stops at iteration %d at |x| = %.4f with phi1 = %.2e, phi2 = %.2e",
                    first.n_epsilon.value_or(-1), second.n_epsilon.value_or(-1), second.final_point.norm(), phi1, phi2)};
    }

    // 8. x^3/6 at the origin: second-order critical, not third-order critical
    Outcome cubic_example()
    {
        const ProblemPtr pb = make_problem("cubic", 1);
        const Vec x0 = Vec::Zero(1);
        bool ok = true;
        for (double e1 : {1e-1, 1e-3})
            for (double e2 : {1e-1, 1e-3})
                ok = ok && termination_test(pb->bundle(x0, 2), {1.0, 1.0}, {e1, e2}, 2);
        const double phi3 = phi_bruteforce(pb->bundle(x0, 3), 1.0, 200000, 8);
        for (double e3 : {0.9, 0.5, 0.1, 1e-2, 1e-3})
            ok = ok && phi3 > e3 / 6.0;
        return {ok, fmt("second-order test passes for all four accuracy pairs; degree-3 measure %.6f vs 0.9/3! = %.6f",
                        phi3, 0.9 / 6.0)};
    }

    std::string slurp(const std::string& path)
    {
        std::ifstream in(path, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    // 9. two sweeps from the command line give byte-identical CSV
    Outcome replay()
    {
        const std::string spec = "/tmp/iarqp_acceptance_replay.ini";
        std::ofstream(spec) << "[problem]\nname = quartic\ndim = 6\n"
                               "[noise]\nkind = gaussian_relative\np_star = 0.8\nmode = closed_loop\n"
                               "[sweep]\nepsilons = 1e-2, 1e-3, 1e-4\ncount = 8\nx0_radius = 3\nthreads = 2\n";
        std::vector<std::string> outputs;
        for (int i = 0; i < 2; ++i)
        {
            const std::string out = "/tmp/iarqp_acceptance_replay_" + std::to_string(i) + ".csv";
            std::remove(out.c_str());
            const std::string cmd = std::string(IARQP_CLI_PATH) + " sweep --spec " + spec + " --out " + out;
            const int status = std::system(cmd.c_str());
            if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
                return {false, "sweep command failed"};
            outputs.push_back(slurp(out));
        }
        const bool same = outputs[0] == outputs[1] && outputs[0].size() > std::string(kCsvHeader).size() + 1;
        return {same, fmt("%zu bytes each, %s", outputs[0].size(), same ? "identical" : "different")};
    }
}

int main()
{
    struct Criterion
    {
        int id;
        const char* name;
        double limit_seconds;
        std::function<Outcome()> check;
    };
    const std::vector<Criterion> criteria{
        {1, "lemma invariants", 120, lemma_invariants},
        {2, "large-sigma success", 30, large_sigma},
        {3, "sufficient accuracy", 60, sufficient_accuracy},
        {4, "criticality equivalence", 60, criticality_equivalence},
        {5, "complexity exponent", 300, complexity_exponent},
        {6, "noise robustness", 900, noise_robustness},
        {7, "q=2 saddle escape", 30, saddle_escape},
        {8, "cubic example", 5, cubic_example},
        {9, "replay determinism", 60, replay},
    };
    int failed = 0;
    for (const auto& c : criteria)
    {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try
        {
            o = c.check();
        }
        catch (const std::exception& e)
        {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs < c.limit_seconds;
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::printf("criterion %d (%s): %s -- %s; %.2f s of %.0f s allowed\n", c.id, c.name, pass ? "PASS" : "FAIL",
                    o.detail.c_str(), secs, c.limit_seconds);
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
