// Command-line harness: single runs, epsilon sweeps and slope fits.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "iarqp/bench.hpp"
#include "iarqp/errors.hpp"

namespace
{
    constexpr int kOk = 0;
    constexpr int kOther = 1;
    constexpr int kConfig = 2;
    constexpr int kInner = 3;

    std::string slurp(const std::string& path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw iarqp::ConfigError("cannot open '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    int do_run(const std::string& problem, const std::string& config, std::uint64_t seed, const std::string& trace_out)
    {
        iarqp::SweepSpec spec = config.empty() ? iarqp::SweepSpec{} : iarqp::load_spec(config);
        if (!problem.empty())
            spec.problem = problem;
        const iarqp::RunResult r = iarqp::run_single(spec, seed);
        if (!trace_out.empty())
        {
            std::ofstream out(trace_out, std::ios::binary | std::ios::trunc);
            out << iarqp::trace_to_jsonl(r.trace);
            if (!out)
            {
                std::cerr << "error: cannot write trace to '" << trace_out << "'\n";
                return kOther;
            }
        }
        std::printf("termination: %s\n", iarqp::to_string(r.termination).c_str());
        if (r.n_epsilon)
            std::printf("N_epsilon: %d\n", *r.n_epsilon);
        else
            std::printf("N_epsilon: none\n");
        std::printf("iterations: %zu\n", r.trace.size());
        std::printf("derivative evaluations: %ld\n", r.deriv_evals);
        std::printf("function estimates: %ld\n", r.f_evals);
        const auto p = iarqp::spec_problem(spec);
        std::printf("f(final): %.17g\n", p->value(r.final_point));
        if (r.counts)
        {
            const auto& c = *r.counts;
            std::printf("counts: I=%ld A=%ld AS=%ld AU=%ld IS=%ld S=%ld U=%ld\n", c.n_I, c.n_A, c.n_AS, c.n_AU, c.n_IS,
                        c.n_S, c.n_U);
        }
        if (r.termination == iarqp::Termination::inner_failure)
        {
            std::cerr << "inner solver failure: " << r.message << "\n";
            return kInner;
        }
        return kOk;
    }

    int do_sweep(const std::string& spec_path, const std::string& out, const std::string& format)
    {
        const iarqp::SweepSpec spec = iarqp::load_spec(spec_path);
        for (const auto& w : iarqp::spec_warnings(spec))
            std::cerr << "warning: " << w << "\n";
        const auto rows = iarqp::run_sweep(spec);
        for (const auto& r : rows)
            if (r.n_inner_failures > 0)
                std::cerr << "warning: epsilon " << r.epsilon << ": " << r.n_inner_failures
                          << " run(s) ended in inner solver failure\n";
        if (out.empty() || out == "-")
            std::cout << (format == "json" ? iarqp::rows_to_json(rows) : iarqp::rows_to_csv(rows));
        else
            iarqp::emit(rows, out, format);
        return kOk;
    }

    int do_slope(const std::string& in)
    {
        const std::string text = slurp(in);
        const auto first = text.find_first_not_of(" \t\r\n");
        const bool json = first != std::string::npos && text[first] == '[';
        const auto rows = json ? iarqp::rows_from_json(text) : iarqp::rows_from_csv(text);
        const iarqp::SlopeFit fit = iarqp::fit_slope(rows);
        std::printf("slope: %.17g\nintercept: %.17g\nr_squared: %.17g\n", fit.slope, fit.intercept, fit.r_squared);
        return kOk;
    }
}

int main(int argc, char** argv)
{
    CLI::App app{"adaptive regularization with inexact derivatives"};
    app.require_subcommand(1);

    std::string problem, config, trace_out;
    std::uint64_t seed = 0;
    auto* run = app.add_subcommand("run", "single run");
    run->add_option("--problem", problem, "builtin problem name (overrides the config)");
    run->add_option("--config", config, "INI configuration file")->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "run seed");
    run->add_option("--trace-out", trace_out, "write the iteration trace as JSON lines");

    std::string spec_path, out, format = "csv";
    auto* sweep = app.add_subcommand("sweep", "epsilon sweep across seeds");
    sweep->add_option("--spec", spec_path, "INI sweep specification")->required()->check(CLI::ExistingFile);
    sweep->add_option("--out", out, "output path, '-' for stdout");
    sweep->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

    std::string in;
    auto* slope = app.add_subcommand("slope", "fit log(mean_N) against log(1/epsilon)");
    slope->add_option("--in", in, "sweep output (CSV or JSON)")->required()->check(CLI::ExistingFile);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try
    {
        if (*run)
            return do_run(problem, config, seed, trace_out);
        if (*sweep)
            return do_sweep(spec_path, out, format);
        return do_slope(in);
    }
    catch (const iarqp::ConfigError& e)
    {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kConfig;
    }
    catch (const iarqp::InnerSolverFailure& e)
    {
        std::cerr << "inner solver failure: " << e.what() << "\n";
        return kInner;
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return kOther;
    }
}
