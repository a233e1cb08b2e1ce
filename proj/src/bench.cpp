#include "iarqp/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "iarqp/errors.hpp"

namespace iarqp
{
    using Eigen::VectorXd;
    namespace pt = boost::property_tree;

    namespace
    {
        const std::map<std::string, std::set<std::string>>& allowed_keys()
        {
            static const std::map<std::string, std::set<std::string>> keys{
                {"problem", {"name", "dim", "data", "x0"}},
                {"algorithm",
                 {"p", "q", "epsilon", "theta", "eta", "gamma", "sigma0", "sigma_min", "omega", "alpha",
                  "max_iterations", "inner_budget", "f_estimate_mode", "instrument_events", "stop_on_model"}},
                {"noise", {"kind", "p_star", "magnitude", "batch_fraction", "mode", "floor"}},
                {"sweep", {"epsilons", "seeds", "count", "x0_radius", "threads"}},
            };
            return keys;
        }

        std::vector<std::string> split_list(const std::string& text)
        {
            std::string t = text;
            std::replace(t.begin(), t.end(), ',', ' ');
            std::istringstream ss(t);
            std::vector<std::string> out;
            std::string tok;
            while (ss >> tok)
                out.push_back(tok);
            return out;
        }

        double to_double(const std::string& key, const std::string& tok)
        {
            std::size_t used = 0;
            double v = 0.0;
            try
            {
                v = std::stod(tok, &used);
            }
            catch (const std::exception&)
            {
                used = 0;
            }
            if (used == 0 || used != tok.size())
                throw ConfigError("config: '" + key + "' expects a number, got '" + tok + "'");
            return v;
        }

        long long to_integer(const std::string& key, const std::string& tok)
        {
            std::size_t used = 0;
            long long v = 0;
            try
            {
                v = std::stoll(tok, &used);
            }
            catch (const std::exception&)
            {
                used = 0;
            }
            if (used == 0 || used != tok.size())
                throw ConfigError("config: '" + key + "' expects an integer, got '" + tok + "'");
            return v;
        }

        bool to_bool(const std::string& key, const std::string& tok)
        {
            if (tok == "true" || tok == "1" || tok == "yes" || tok == "on")
                return true;
            if (tok == "false" || tok == "0" || tok == "no" || tok == "off")
                return false;
            throw ConfigError("config: '" + key + "' expects true or false, got '" + tok + "'");
        }

        std::vector<double> to_doubles(const std::string& key, const std::string& text)
        {
            std::vector<double> out;
            for (const auto& tok : split_list(text))
                out.push_back(to_double(key, tok));
            if (out.empty())
                throw ConfigError("config: '" + key + "' is empty");
            return out;
        }

        class Section
        {
        public:
            Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

            std::optional<std::string> raw(const std::string& key) const
            {
                if (tree_ == nullptr)
                    return std::nullopt;
                auto v = tree_->get_optional<std::string>(key);
                if (!v)
                    return std::nullopt;
                std::string s = *v;
                const auto b = s.find_first_not_of(" \t");
                const auto e = s.find_last_not_of(" \t");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            }

            std::string full(const std::string& key) const { return name_ + "." + key; }

            void read(const std::string& key, double& out) const
            {
                if (auto v = raw(key))
                    out = to_double(full(key), *v);
            }
            void read(const std::string& key, int& out) const
            {
                if (auto v = raw(key))
                    out = static_cast<int>(to_integer(full(key), *v));
            }
            void read(const std::string& key, bool& out) const
            {
                if (auto v = raw(key))
                    out = to_bool(full(key), *v);
            }
            void read(const std::string& key, std::string& out) const
            {
                if (auto v = raw(key))
                    out = *v;
            }

        private:
            const pt::ptree* tree_;
            std::string name_;
        };
    }

    SweepSpec parse_spec(const std::string& text)
    {
        pt::ptree tree;
        try
        {
            std::istringstream in(text);
            pt::ini_parser::read_ini(in, tree);
        }
        catch (const pt::ini_parser_error& e)
        {
            throw ConfigError(std::string("config: ") + e.what());
        }
        for (const auto& [name, section] : tree)
        {
            const auto it = allowed_keys().find(name);
            if (it == allowed_keys().end())
                throw ConfigError("config: unknown section [" + name + "]");
            if (!section.data().empty())
                throw ConfigError("config: '" + name + "' must be a section");
            for (const auto& [key, value] : section)
                if (!it->second.count(key))
                    throw ConfigError("config: unknown key '" + key + "' in [" + name + "]");
        }
        auto section = [&](const std::string& name) {
            return Section(tree.get_child_optional(name) ? &tree.get_child(name) : nullptr, name);
        };

        SweepSpec spec;
        Config& c = spec.base;

        const Section problem = section("problem");
        problem.read("name", spec.problem);
        int dim = 0;
        problem.read("dim", dim);
        if (dim < 0)
            throw ConfigError("config: problem.dim must be nonnegative");
        spec.dim = dim;
        problem.read("data", spec.data_path);
        if (auto x0 = problem.raw("x0"))
        {
            const std::vector<double> v = to_doubles("problem.x0", *x0);
            spec.x0 = Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
        }

        const Section alg = section("algorithm");
        alg.read("p", c.p);
        alg.read("q", c.q);
        if (auto e = alg.raw("epsilon"))
            spec.per_order_epsilon = to_doubles("algorithm.epsilon", *e);
        alg.read("theta", c.theta);
        alg.read("eta", c.eta);
        c.omega = Config::default_omega(c.eta);
        alg.read("omega", c.omega);
        alg.read("gamma", c.gamma);
        alg.read("sigma0", c.sigma0);
        alg.read("sigma_min", c.sigma_min);
        alg.read("alpha", c.alpha);
        alg.read("max_iterations", c.max_iterations);
        alg.read("inner_budget", c.inner_budget);
        std::string fmode = to_string(c.f_estimate_mode);
        alg.read("f_estimate_mode", fmode);
        c.f_estimate_mode = parse_estimate_mode(fmode);
        alg.read("instrument_events", c.instrument_events);
        alg.read("stop_on_model", c.stop_on_model);

        const Section noise = section("noise");
        std::string kind = to_string(c.noise.kind);
        noise.read("kind", kind);
        c.noise.kind = parse_noise_kind(kind);
        noise.read("p_star", c.noise.p_star);
        noise.read("magnitude", c.noise.magnitude);
        noise.read("batch_fraction", c.noise.batch_fraction);
        std::string mode = to_string(c.noise_mode);
        noise.read("mode", mode);
        c.noise_mode = parse_noise_mode(mode);
        noise.read("floor", c.budget_floor);

        const Section sweep = section("sweep");
        if (auto e = sweep.raw("epsilons"))
            spec.epsilons = to_doubles("sweep.epsilons", *e);
        else if (spec.per_order_epsilon)
            spec.epsilons = {*std::min_element(spec.per_order_epsilon->begin(), spec.per_order_epsilon->end())};
        const auto seeds = sweep.raw("seeds");
        const auto count = sweep.raw("count");
        if (seeds && count)
            throw ConfigError("config: give either sweep.seeds or sweep.count, not both");
        if (seeds)
        {
            spec.seeds.clear();
            for (const auto& tok : split_list(*seeds))
            {
                const long long s = to_integer("sweep.seeds", tok);
                if (s < 0)
                    throw ConfigError("config: seeds must be nonnegative");
                spec.seeds.push_back(static_cast<std::uint64_t>(s));
            }
            if (spec.seeds.empty())
                throw ConfigError("config: sweep.seeds is empty");
        }
        if (count)
        {
            const long long n = to_integer("sweep.count", *count);
            if (n < 1)
                throw ConfigError("config: sweep.count must be positive");
            spec.seeds.clear();
            for (long long s = 0; s < n; ++s)
                spec.seeds.push_back(static_cast<std::uint64_t>(s));
        }
        sweep.read("x0_radius", spec.x0_radius);
        sweep.read("threads", spec.threads);

        if (!(spec.x0_radius >= 0.0) || !std::isfinite(spec.x0_radius))
            throw ConfigError("config: sweep.x0_radius must be finite and nonnegative");
        if (spec.threads < 0)
            throw ConfigError("config: sweep.threads must be nonnegative");
        for (double e : spec.epsilons)
            if (!(e > 0.0 && e <= 1.0))
                throw ConfigError("config: epsilons must lie in (0, 1]");

        // validate the algorithm block with the first row's accuracies in place
        Config probe = c;
        probe.epsilon = spec.per_order_epsilon ? *spec.per_order_epsilon
                                               : std::vector<double>(static_cast<std::size_t>(c.q), spec.epsilons.front());
        probe.validate();
        return spec;
    }

    SweepSpec load_spec(const std::string& path)
    {
        std::ifstream in(path);
        if (!in)
            throw ConfigError("config: cannot open '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse_spec(ss.str());
    }

    std::vector<std::string> spec_warnings(const SweepSpec& spec)
    {
        std::vector<std::string> w;
        for (std::size_t i = 1; i < spec.epsilons.size(); ++i)
            if (!(spec.epsilons[i] < spec.epsilons[i - 1]))
            {
                w.push_back("epsilons are not strictly decreasing");
                break;
            }
        std::set<std::uint64_t> unique(spec.seeds.begin(), spec.seeds.end());
        if (unique.size() != spec.seeds.size())
            w.push_back("seed list contains duplicates; their runs are identical");
        return w;
    }

    ProblemPtr spec_problem(const SweepSpec& spec)
    {
        Eigen::Index dim = spec.dim;
        if (dim == 0)
        {
            if (spec.problem == "cubic")
                dim = 1;
            else if (spec.problem == "least_squares" && !spec.data_path.empty())
                dim = 0;
            else
                dim = 2;
        }
        return make_problem(spec.problem, dim, spec.data_path);
    }

    namespace
    {
        std::uint64_t derive(std::uint64_t seed, std::uint32_t stream)
        {
            std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
            std::uint32_t out[2];
            seq.generate(out, out + 2);
            return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
        }

        Config config_for(const SweepSpec& spec, double epsilon, std::uint64_t seed)
        {
            Config c = spec.base;
            c.epsilon.assign(static_cast<std::size_t>(c.q), epsilon);
            c.seed = run_seed(seed);
            return c;
        }
    }

    std::uint64_t run_seed(std::uint64_t seed) { return derive(seed, 1); }

    VectorXd starting_point(const SweepSpec& spec, std::uint64_t seed)
    {
        const ProblemPtr problem = spec_problem(spec);
        const Eigen::Index n = problem->dim();
        if (spec.x0)
        {
            if (spec.x0->size() != n)
                throw ConfigError("config: problem.x0 has " + std::to_string(spec.x0->size()) + " entries, problem '"
                                  + problem->name() + "' has dimension " + std::to_string(n));
            return *spec.x0;
        }
        Rng rng(derive(seed, 0));
        std::normal_distribution<double> normal;
        std::uniform_real_distribution<double> uniform(0.0, 1.0);
        VectorXd v(n);
        do
        {
            for (Eigen::Index i = 0; i < n; ++i)
                v(i) = normal(rng);
        } while (v.norm() == 0.0);
        const double r = spec.x0_radius * std::pow(uniform(rng), 1.0 / static_cast<double>(n));
        return v.normalized() * r;
    }

    RunResult run_single(const SweepSpec& spec, std::uint64_t seed)
    {
        const ProblemPtr problem = spec_problem(spec);
        Config c = config_for(spec, spec.epsilons.front(), seed);
        if (spec.per_order_epsilon)
            c.epsilon = *spec.per_order_epsilon;
        return run(*problem, starting_point(spec, seed), c);
    }

    std::vector<SweepRow> run_sweep(const SweepSpec& spec)
    {
        if (spec.epsilons.empty() || spec.seeds.empty())
            throw ConfigError("sweep: needs at least one epsilon and one seed");
        const ProblemPtr problem = spec_problem(spec);
        std::vector<VectorXd> starts;
        for (std::uint64_t s : spec.seeds)
            starts.push_back(starting_point(spec, s));
        config_for(spec, spec.epsilons.front(), spec.seeds.front()).validate();

        struct Outcome
        {
            bool converged = false;
            bool inner_failure = false;
            int n = 0;
            long deriv_evals = 0;
            long f_evals = 0;
            long accurate = 0;
            long instrumented = 0;
        };
        const std::size_t n_seeds = spec.seeds.size();
        const std::size_t jobs = spec.epsilons.size() * n_seeds;
        std::vector<Outcome> outcomes(jobs);

        auto work = [&](std::size_t job) {
            const std::size_t e = job / n_seeds;
            const std::size_t s = job % n_seeds;
            Outcome o;
            try
            {
                const RunResult r = run(*problem, starts[s], config_for(spec, spec.epsilons[e], spec.seeds[s]));
                o.converged = r.termination == Termination::converged;
                o.inner_failure = r.termination == Termination::inner_failure;
                o.n = r.n_epsilon.value_or(0);
                o.deriv_evals = r.deriv_evals;
                o.f_evals = r.f_evals;
                for (const auto& rec : r.trace)
                    if (rec.events)
                    {
                        ++o.instrumented;
                        o.accurate += rec.events->mk;
                    }
            }
            catch (const NumericalError&)
            {
                o.inner_failure = true;
            }
            outcomes[job] = o;
        };

        unsigned threads = spec.threads > 0 ? static_cast<unsigned>(spec.threads) : std::thread::hardware_concurrency();
        threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(jobs)));
        if (threads == 1)
        {
            for (std::size_t j = 0; j < jobs; ++j)
                work(j);
        }
        else
        {
            std::atomic<std::size_t> next{0};
            std::vector<std::thread> pool;
            std::exception_ptr error;
            std::mutex error_mutex;
            for (unsigned t = 0; t < threads; ++t)
                pool.emplace_back([&] {
                    for (std::size_t j = next++; j < jobs; j = next++)
                    {
                        try
                        {
                            work(j);
                        }
                        catch (...)
                        {
                            std::lock_guard<std::mutex> lock(error_mutex);
                            if (!error)
                                error = std::current_exception();
                        }
                    }
                });
            for (auto& th : pool)
                th.join();
            if (error)
                std::rethrow_exception(error);
        }

        const double nan = std::numeric_limits<double>::quiet_NaN();
        std::vector<SweepRow> rows;
        for (std::size_t e = 0; e < spec.epsilons.size(); ++e)
        {
            SweepRow row;
            row.epsilon = spec.epsilons[e];
            row.n_runs = static_cast<long>(n_seeds);
            std::vector<double> ns;
            double deriv = 0.0, fev = 0.0;
            long accurate = 0, instrumented = 0;
            for (std::size_t s = 0; s < n_seeds; ++s)
            {
                const Outcome& o = outcomes[e * n_seeds + s];
                accurate += o.accurate;
                instrumented += o.instrumented;
                row.n_inner_failures += o.inner_failure;
                if (!o.converged)
                    continue;
                ns.push_back(o.n);
                deriv += static_cast<double>(o.deriv_evals);
                fev += static_cast<double>(o.f_evals);
            }
            const double m = static_cast<double>(ns.size());
            row.frac_converged = m / static_cast<double>(n_seeds);
            row.empirical_p_star = instrumented > 0 ? static_cast<double>(accurate) / static_cast<double>(instrumented) : 1.0;
            if (ns.empty())
            {
                row.mean_N = row.median_N = row.stddev_N = row.mean_deriv_evals = row.mean_f_evals = nan;
            }
            else
            {
                double sum = 0.0;
                for (double v : ns)
                    sum += v;
                row.mean_N = sum / m;
                std::sort(ns.begin(), ns.end());
                const std::size_t mid = ns.size() / 2;
                row.median_N = ns.size() % 2 ? ns[mid] : 0.5 * (ns[mid - 1] + ns[mid]);
                double ss = 0.0;
                for (double v : ns)
                    ss += (v - row.mean_N) * (v - row.mean_N);
                row.stddev_N = ns.size() > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
                row.mean_deriv_evals = deriv / m;
                row.mean_f_evals = fev / m;
            }
            rows.push_back(row);
        }
        return rows;
    }

    SlopeFit fit_slope(const std::vector<SweepRow>& rows)
    {
        if (rows.size() < 3)
            throw ContractViolation("fit_slope: needs at least 3 rows, got " + std::to_string(rows.size()));
        std::vector<double> xs, ys;
        for (const auto& r : rows)
        {
            if (r.frac_converged != 1.0)
                throw ContractViolation("fit_slope: row with epsilon " + std::to_string(r.epsilon)
                                        + " has non-converged runs");
            if (!(r.epsilon > 0.0) || !(r.mean_N > 0.0))
                throw ContractViolation("fit_slope: epsilon and mean_N must be positive to take logarithms");
            xs.push_back(std::log(1.0 / r.epsilon));
            ys.push_back(std::log(r.mean_N));
        }
        const double n = static_cast<double>(xs.size());
        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i)
        {
            mx += xs[i];
            my += ys[i];
        }
        mx /= n;
        my /= n;
        double sxx = 0.0, sxy = 0.0, syy = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i)
        {
            sxx += (xs[i] - mx) * (xs[i] - mx);
            sxy += (xs[i] - mx) * (ys[i] - my);
            syy += (ys[i] - my) * (ys[i] - my);
        }
        if (sxx == 0.0)
            throw ContractViolation("fit_slope: all rows share the same epsilon");
        SlopeFit fit;
        fit.slope = sxy / sxx;
        fit.intercept = my - fit.slope * mx;
        const double ss_res = syy - fit.slope * sxy;
        fit.r_squared = syy > 0.0 ? std::max(0.0, 1.0 - ss_res / syy) : 1.0;
        return fit;
    }

    namespace
    {
        std::string g17(double v)
        {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return buf;
        }

        double parse_field(const std::string& tok, int line)
        {
            char* end = nullptr;
            const double v = std::strtod(tok.c_str(), &end);
            if (tok.empty() || end != tok.c_str() + tok.size())
                throw ContractViolation("csv: bad number '" + tok + "' on line " + std::to_string(line));
            return v;
        }

        nlohmann::json json_number(double v)
        {
            if (std::isnan(v))
                return nullptr;
            return v;
        }

        double from_json_number(const nlohmann::json& j)
        {
            if (j.is_null())
                return std::numeric_limits<double>::quiet_NaN();
            return j.get<double>();
        }
    }

    std::string rows_to_csv(const std::vector<SweepRow>& rows)
    {
        std::string out = std::string(kCsvHeader) + "\n";
        for (const auto& r : rows)
        {
            out += g17(r.epsilon) + "," + std::to_string(r.n_runs) + "," + g17(r.mean_N) + "," + g17(r.median_N) + ","
                   + g17(r.stddev_N) + "," + g17(r.mean_deriv_evals) + "," + g17(r.mean_f_evals) + ","
                   + g17(r.frac_converged) + "," + g17(r.empirical_p_star) + "\n";
        }
        return out;
    }

    std::vector<SweepRow> rows_from_csv(const std::string& text)
    {
        std::istringstream in(text);
        std::string line;
        if (!std::getline(in, line))
            throw ContractViolation("csv: missing header");
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line != kCsvHeader)
            throw ContractViolation("csv: unexpected header '" + line + "'");
        std::vector<SweepRow> rows;
        int lineno = 1;
        while (std::getline(in, line))
        {
            ++lineno;
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            if (line.empty())
                continue;
            std::vector<std::string> f;
            std::string tok;
            std::istringstream ss(line);
            while (std::getline(ss, tok, ','))
                f.push_back(tok);
            if (f.size() != 9)
                throw ContractViolation("csv: expected 9 fields on line " + std::to_string(lineno));
            SweepRow r;
            r.epsilon = parse_field(f[0], lineno);
            const double n = parse_field(f[1], lineno);
            if (n != std::floor(n) || n < 0)
                throw ContractViolation("csv: n_runs must be a nonnegative integer on line " + std::to_string(lineno));
            r.n_runs = static_cast<long>(n);
            r.mean_N = parse_field(f[2], lineno);
            r.median_N = parse_field(f[3], lineno);
            r.stddev_N = parse_field(f[4], lineno);
            r.mean_deriv_evals = parse_field(f[5], lineno);
            r.mean_f_evals = parse_field(f[6], lineno);
            r.frac_converged = parse_field(f[7], lineno);
            r.empirical_p_star = parse_field(f[8], lineno);
            rows.push_back(r);
        }
        return rows;
    }

    std::string rows_to_json(const std::vector<SweepRow>& rows)
    {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : rows)
        {
            arr.push_back({{"epsilon", json_number(r.epsilon)},
                           {"n_runs", r.n_runs},
                           {"mean_N", json_number(r.mean_N)},
                           {"median_N", json_number(r.median_N)},
                           {"stddev_N", json_number(r.stddev_N)},
                           {"mean_deriv_evals", json_number(r.mean_deriv_evals)},
                           {"mean_f_evals", json_number(r.mean_f_evals)},
                           {"frac_converged", json_number(r.frac_converged)},
                           {"empirical_p_star", json_number(r.empirical_p_star)}});
        }
        return arr.dump(2) + "\n";
    }

    std::vector<SweepRow> rows_from_json(const std::string& text)
    {
        std::vector<SweepRow> rows;
        try
        {
            const nlohmann::json arr = nlohmann::json::parse(text);
            for (const auto& j : arr)
            {
                SweepRow r;
                r.epsilon = from_json_number(j.at("epsilon"));
                r.n_runs = j.at("n_runs").get<long>();
                r.mean_N = from_json_number(j.at("mean_N"));
                r.median_N = from_json_number(j.at("median_N"));
                r.stddev_N = from_json_number(j.at("stddev_N"));
                r.mean_deriv_evals = from_json_number(j.at("mean_deriv_evals"));
                r.mean_f_evals = from_json_number(j.at("mean_f_evals"));
                r.frac_converged = from_json_number(j.at("frac_converged"));
                r.empirical_p_star = from_json_number(j.at("empirical_p_star"));
                rows.push_back(r);
            }
        }
        catch (const nlohmann::json::exception& e)
        {
            throw ContractViolation(std::string("json: ") + e.what());
        }
        return rows;
    }

    void emit(const std::vector<SweepRow>& rows, const std::string& path, const std::string& format)
    {
        std::string body;
        if (format == "csv")
            body = rows_to_csv(rows);
        else if (format == "json")
            body = rows_to_json(rows);
        else
            throw ConfigError("emit: format must be csv or json, got '" + format + "'");
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out)
            throw std::runtime_error("emit: cannot open '" + path + "' for writing");
        out << body;
        out.close();
        if (!out)
            throw std::runtime_error("emit: failed writing '" + path + "'");
    }
}
