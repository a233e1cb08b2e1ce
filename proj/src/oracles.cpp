#include "iarqp/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <tuple>

#include <Eigen/Eigenvalues>

#include "iarqp/errors.hpp"

namespace iarqp
{
    using Eigen::Index;
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    using Tensor = SymmetricTensor<double>;

    DerivativeBundle<double> Problem::bundle(const VectorXd& x, int p) const
    {
        require(p >= 1 && p <= degree_available(), "Problem::bundle: degree out of range");
        require(x.size() == dim(), "Problem::bundle: point has the wrong dimension");
        DerivativeBundle<double> b{x, {}, Provenance::exact};
        for (int l = 1; l <= p; ++l)
            b.tensors.push_back(derivative(x, l));
        return b;
    }

    namespace
    {
        void check_derivative_args(const Problem& pb, const VectorXd& x, int order)
        {
            require(x.size() == pb.dim(), "Problem: point has the wrong dimension");
            require(order >= 1 && order <= pb.degree_available(), "Problem: derivative order out of range");
        }

        Tensor diagonal3(const VectorXd& d)
        {
            const Index n = d.size();
            VectorXd raw = VectorXd::Zero(n * n * n);
            for (Index i = 0; i < n; ++i)
                raw(i + n * (i + n * i)) = d(i);
            return Tensor::from_dense(3, n, raw);
        }

        /// 1/2 ||x||^2
        class Quadratic final : public Problem
        {
        public:
            explicit Quadratic(Index n) : n_(n) { require(n >= 1, "quadratic: dimension must be positive"); }

            std::string name() const override { return "quadratic"; }
            Index dim() const override { return n_; }
            double value(const VectorXd& x) const override { return 0.5 * x.squaredNorm(); }

            Tensor derivative(const VectorXd& x, int order) const override
            {
                check_derivative_args(*this, x, order);
                if (order == 1)
                    return Tensor::from_vector(x);
                if (order == 2)
                    return Tensor::identity(n_);
                return Tensor::zero(3, n_);
            }

            double f_low() const override { return 0.0; }
            double lipschitz(int p) const override { return p == 1 ? 1.0 : 0.0; }

        private:
            Index n_;
        };

        /// sum over pairs (a, b) = (x_{2i}, x_{2i+1}) of 100 (b - a^2)^2 + (1 - a)^2
        class Rosenbrock final : public Problem
        {
        public:
            explicit Rosenbrock(Index n) : n_(n)
            {
                require(n >= 2 && n % 2 == 0, "rosenbrock: dimension must be even and positive");
            }

            std::string name() const override { return "rosenbrock"; }
            Index dim() const override { return n_; }

            double value(const VectorXd& x) const override
            {
                double f = 0.0;
                for (Index i = 0; i < n_; i += 2)
                {
                    const double a = x(i), b = x(i + 1);
                    f += 100.0 * (b - a * a) * (b - a * a) + (1.0 - a) * (1.0 - a);
                }
                return f;
            }

            Tensor derivative(const VectorXd& x, int order) const override
            {
                check_derivative_args(*this, x, order);
                if (order == 1)
                {
                    VectorXd g(n_);
                    for (Index i = 0; i < n_; i += 2)
                    {
                        const double a = x(i), b = x(i + 1);
                        g(i) = -400.0 * a * (b - a * a) - 2.0 * (1.0 - a);
                        g(i + 1) = 200.0 * (b - a * a);
                    }
                    return Tensor::from_vector(g);
                }
                if (order == 2)
                {
                    MatrixXd h = MatrixXd::Zero(n_, n_);
                    for (Index i = 0; i < n_; i += 2)
                    {
                        const double a = x(i), b = x(i + 1);
                        h(i, i) = 1200.0 * a * a - 400.0 * b + 2.0;
                        h(i, i + 1) = h(i + 1, i) = -400.0 * a;
                        h(i + 1, i + 1) = 200.0;
                    }
                    return Tensor::from_matrix(h);
                }
                VectorXd raw = VectorXd::Zero(n_ * n_ * n_);
                auto at = [&](Index i, Index j, Index k) -> double& { return raw(i + n_ * (j + n_ * k)); };
                for (Index i = 0; i < n_; i += 2)
                {
                    const Index a = i, b = i + 1;
                    at(a, a, a) = 2400.0 * x(a);
                    at(a, a, b) = at(a, b, a) = at(b, a, a) = -400.0;
                }
                return Tensor::from_dense(3, n_, raw);
            }

            double f_low() const override { return 0.0; }

            // On the box: Hessian blocks bounded by Gershgorin (128002), third derivative by
            // 2400*10 + 3*400, fourth derivative is the constant 2400 e_a^4.
            double lipschitz(int p) const override
            {
                switch (p)
                {
                case 1:
                    return 1.3e5;
                case 2:
                    return 25200.0;
                default:
                    return 2400.0;
                }
            }

        private:
            Index n_;
        };

        /// sum_i x_i^4/4 - x_i^2/2; minimizers at x_i = +-1, strict saddle at 0
        class Quartic final : public Problem
        {
        public:
            explicit Quartic(Index n) : n_(n) { require(n >= 1, "quartic: dimension must be positive"); }

            std::string name() const override { return "quartic"; }
            Index dim() const override { return n_; }

            double value(const VectorXd& x) const override
            {
                double f = 0.0;
                for (Index i = 0; i < n_; ++i)
                {
                    const double t = x(i) * x(i);
                    f += 0.25 * t * t - 0.5 * t;
                }
                return f;
            }

            Tensor derivative(const VectorXd& x, int order) const override
            {
                check_derivative_args(*this, x, order);
                if (order == 1)
                    return Tensor::from_vector(VectorXd(x.array().cube() - x.array()));
                if (order == 2)
                    return Tensor::from_matrix(MatrixXd(VectorXd(3.0 * x.array().square() - 1.0).asDiagonal()));
                return diagonal3(6.0 * x);
            }

            double f_low() const override { return -0.25 * static_cast<double>(n_); }

            double lipschitz(int p) const override
            {
                switch (p)
                {
                case 1:
                    return 299.0;
                case 2:
                    return 60.0;
                default:
                    return 6.0;
                }
            }

        private:
            Index n_;
        };

        /// x^3/6 on the study box |x| <= 10 (f_low is the box minimum)
        class Cubic final : public Problem
        {
        public:
            std::string name() const override { return "cubic"; }
            Index dim() const override { return 1; }
            double value(const VectorXd& x) const override { return x(0) * x(0) * x(0) / 6.0; }

            Tensor derivative(const VectorXd& x, int order) const override
            {
                check_derivative_args(*this, x, order);
                VectorXd v(1);
                if (order == 1)
                    v << 0.5 * x(0) * x(0);
                else if (order == 2)
                    v << x(0);
                else
                    v << 1.0;
                return Tensor::from_dense(order, 1, v);
            }

            double f_low() const override { return -1000.0 / 6.0; }

            double lipschitz(int p) const override
            {
                switch (p)
                {
                case 1:
                    return 10.0;
                case 2:
                    return 1.0;
                default:
                    return 0.0;
                }
            }
        };

        /// (1/2m) sum_i (a_i.x - b_i)^2
        class LeastSquares final : public FiniteSumProblem
        {
        public:
            LeastSquares(MatrixXd a, VectorXd b) : a_(std::move(a)), b_(std::move(b))
            {
                require(a_.rows() == b_.size() && a_.rows() >= 1 && a_.cols() >= 1,
                        "least_squares: data must have at least one row and one feature");
                const MatrixXd gram = a_.transpose() * a_ / static_cast<double>(a_.rows());
                Eigen::SelfAdjointEigenSolver<MatrixXd> es(gram, Eigen::EigenvaluesOnly);
                l1_ = es.eigenvalues().maxCoeff();
            }

            std::string name() const override { return "least_squares"; }
            Index dim() const override { return a_.cols(); }
            Index num_terms() const override { return a_.rows(); }

            double value(const VectorXd& x) const override
            {
                require(x.size() == dim(), "least_squares: point has the wrong dimension");
                return 0.5 * (a_ * x - b_).squaredNorm() / static_cast<double>(a_.rows());
            }

            Tensor derivative(const VectorXd& x, int order) const override
            {
                check_derivative_args(*this, x, order);
                return bundle(x, order).derivative(order);
            }

            DerivativeBundle<double> bundle(const VectorXd& x, int p) const override
            {
                std::vector<Index> all(static_cast<std::size_t>(num_terms()));
                std::iota(all.begin(), all.end(), Index(0));
                DerivativeBundle<double> b = batch_bundle(x, p, all);
                b.provenance = Provenance::exact;
                return b;
            }

            DerivativeBundle<double> batch_bundle(const VectorXd& x, int p,
                                                  const std::vector<Index>& terms) const override
            {
                require(p >= 1 && p <= kMaxOrder, "least_squares: degree out of range");
                require(x.size() == dim(), "least_squares: point has the wrong dimension");
                require(!terms.empty(), "least_squares: empty batch");
                const Index m = static_cast<Index>(terms.size());
                MatrixXd a(m, dim());
                VectorXd b(m);
                for (Index r = 0; r < m; ++r)
                {
                    const Index t = terms[static_cast<std::size_t>(r)];
                    require(t >= 0 && t < num_terms(), "least_squares: term index out of range");
                    a.row(r) = a_.row(t);
                    b(r) = b_(t);
                }
                const double inv = 1.0 / static_cast<double>(m);
                DerivativeBundle<double> out{x, {}, m == num_terms() ? Provenance::exact : Provenance::inexact};
                out.tensors.push_back(Tensor::from_vector(VectorXd(a.transpose() * (a * x - b) * inv)));
                if (p >= 2)
                    out.tensors.push_back(Tensor::from_matrix(MatrixXd(a.transpose() * a * inv)));
                if (p >= 3)
                    out.tensors.push_back(Tensor::zero(3, dim()));
                return out;
            }

            double f_low() const override { return 0.0; }
            double lipschitz(int p) const override { return p == 1 ? l1_ : 0.0; }

        private:
            MatrixXd a_;
            VectorXd b_;
            double l1_ = 0.0;
        };

        std::shared_ptr<LeastSquares> synthetic_least_squares(Index n)
        {
            require(n >= 1, "least_squares: dimension must be positive");
            const Index m = 20 * n;
            Rng rng(0x1ea57u);
            std::normal_distribution<double> normal;
            MatrixXd a(m, n);
            VectorXd xs(n), b(m);
            for (Index j = 0; j < n; ++j)
                for (Index i = 0; i < m; ++i)
                    a(i, j) = normal(rng);
            for (Index j = 0; j < n; ++j)
                xs(j) = normal(rng);
            b = a * xs;
            for (Index i = 0; i < m; ++i)
                b(i) += 0.1 * normal(rng);
            return std::make_shared<LeastSquares>(std::move(a), std::move(b));
        }

        std::shared_ptr<LeastSquares> load_least_squares(const std::string& path)
        {
            std::ifstream in(path);
            if (!in)
                throw ConfigError("least_squares: cannot open data file '" + path + "'");
            std::vector<std::vector<double>> rows;
            std::string line;
            while (std::getline(in, line))
            {
                const auto hash = line.find('#');
                if (hash != std::string::npos)
                    line.erase(hash);
                std::replace(line.begin(), line.end(), ',', ' ');
                std::istringstream ss(line);
                std::vector<double> row;
                std::string tok;
                while (ss >> tok)
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
                    if (used != tok.size())
                        throw ConfigError("least_squares: non-numeric entry '" + tok + "' in " + path);
                    row.push_back(v);
                }
                if (row.empty())
                    continue;
                if (!rows.empty() && row.size() != rows.front().size())
                    throw ConfigError("least_squares: ragged rows in " + path);
                rows.push_back(std::move(row));
            }
            if (rows.empty() || rows.front().size() < 2)
                throw ConfigError("least_squares: need at least one row with a feature and a target in " + path);
            const Index m = static_cast<Index>(rows.size());
            const Index n = static_cast<Index>(rows.front().size()) - 1;
            MatrixXd a(m, n);
            VectorXd b(m);
            for (Index i = 0; i < m; ++i)
            {
                const auto& r = rows[static_cast<std::size_t>(i)];
                for (Index j = 0; j < n; ++j)
                    a(i, j) = r[static_cast<std::size_t>(j)];
                b(i) = r.back();
            }
            return std::make_shared<LeastSquares>(std::move(a), std::move(b));
        }
    }

    std::vector<std::string> builtin_problem_names()
    {
        return {"quadratic", "rosenbrock", "quartic", "cubic", "least_squares"};
    }

    ProblemPtr make_problem(const std::string& name, Index dim, const std::string& data_path)
    {
        try
        {
            if (name == "quadratic")
                return std::make_shared<Quadratic>(dim);
            if (name == "rosenbrock")
                return std::make_shared<Rosenbrock>(dim);
            if (name == "quartic")
                return std::make_shared<Quartic>(dim);
            if (name == "cubic")
            {
                require(dim == 1, "cubic: dimension must be 1");
                return std::make_shared<Cubic>();
            }
            if (name == "least_squares")
            {
                auto p = data_path.empty() ? synthetic_least_squares(dim) : load_least_squares(data_path);
                if (!data_path.empty() && dim > 0 && p->dim() != dim)
                    throw ConfigError("least_squares: data file has " + std::to_string(p->dim())
                                      + " features but dimension " + std::to_string(dim) + " was requested");
                return p;
            }
        }
        catch (const ContractViolation& e)
        {
            throw ConfigError(e.what());
        }
        throw ConfigError("unknown problem '" + name + "'");
    }

    std::vector<ProblemPtr> builtin_problems(Index dim)
    {
        const Index even = std::max<Index>(2, dim + dim % 2);
        return {make_problem("quadratic", dim), make_problem("rosenbrock", even), make_problem("quartic", dim),
                make_problem("cubic", 1), make_problem("least_squares", dim)};
    }

    double function_estimate(const Problem& problem, const VectorXd& x, double abs_tol, EstimateMode mode,
                             EstimateSite site, Rng& rng)
    {
        require(abs_tol >= 0.0 && std::isfinite(abs_tol), "function_estimate: tolerance must be finite and nonnegative");
        const double f = problem.value(x);
        if (abs_tol == 0.0)
            return f;
        double offset = 0.0;
        if (mode == EstimateMode::random)
            offset = std::uniform_real_distribution<double>(-abs_tol, abs_tol)(rng);
        else
            offset = site == EstimateSite::current ? abs_tol : -abs_tol;
        double fbar = f + offset;
        // rounding in f + offset may overshoot the tolerance by an ulp
        for (int i = 0; i < 4 && !(std::abs(fbar - f) <= abs_tol); ++i)
            fbar = std::nextafter(fbar, f);
        return std::abs(fbar - f) <= abs_tol ? fbar : f;
    }

    void NoiseSpec::validate() const
    {
        if (!(p_star > 0.5 && p_star <= 1.0))
            throw ConfigError("noise: p_star must lie in (1/2, 1]");
        if (!(magnitude >= 0.0) || !std::isfinite(magnitude))
            throw ConfigError("noise: magnitude must be finite and nonnegative");
        if (!(batch_fraction > 0.0 && batch_fraction <= 1.0))
            throw ConfigError("noise: batch_fraction must lie in (0, 1]");
    }

    NoiseSpec::Kind parse_noise_kind(const std::string& name)
    {
        if (name == "none")
            return NoiseSpec::Kind::none;
        if (name == "gaussian_relative")
            return NoiseSpec::Kind::gaussian_relative;
        if (name == "adversarial_sign")
            return NoiseSpec::Kind::adversarial_sign;
        if (name == "subsample")
            return NoiseSpec::Kind::subsample;
        throw ConfigError("unknown noise kind '" + name + "'");
    }

    std::string to_string(NoiseSpec::Kind kind)
    {
        switch (kind)
        {
        case NoiseSpec::Kind::none:
            return "none";
        case NoiseSpec::Kind::gaussian_relative:
            return "gaussian_relative";
        case NoiseSpec::Kind::adversarial_sign:
            return "adversarial_sign";
        default:
            return "subsample";
        }
    }

    AccuracyTargets accuracy_targets_from_proxy(double omega, int p, double tau, double dt_min, double floor)
    {
        require(p >= 1 && p <= kMaxOrder, "accuracy_targets_from_proxy: degree out of range");
        require(floor > 0.0 && std::isfinite(floor), "accuracy_targets_from_proxy: floor must be positive");
        AccuracyTargets t;
        const bool usable = tau > 0.0 && dt_min > 0.0 && std::isfinite(tau) && std::isfinite(dt_min);
        for (int l = 1; l <= p; ++l)
        {
            const double xi = usable ? omega * dt_min / (6.0 * std::pow(tau, l)) : 0.0;
            t.per_order.push_back(std::isfinite(xi) ? std::max(floor, xi) : floor);
        }
        return t;
    }

    SymmetricTensor<double> gaussian_tensor(int order, Index n, Rng& rng)
    {
        std::normal_distribution<double> normal;
        Index size = 1;
        for (int i = 0; i < order; ++i)
            size *= n;
        VectorXd raw(size);
        for (Index i = 0; i < size; ++i)
            raw(i) = normal(rng);
        return Tensor::from_dense(order, n, raw);
    }

    double gaussian_norm_quantile(Index n, int order, double prob)
    {
        require(n >= 1 && order >= 1 && order <= kMaxOrder, "gaussian_norm_quantile: bad shape");
        require(prob > 0.0 && prob < 1.0, "gaussian_norm_quantile: probability must lie in (0, 1)");
        static std::mutex mutex;
        static std::map<std::tuple<Index, int, double>, double> cache;
        std::lock_guard<std::mutex> lock(mutex);
        const auto key = std::make_tuple(n, order, prob);
        if (auto it = cache.find(key); it != cache.end())
            return it->second;

        // order-3 norms need a multi-start power iteration each, so fewer samples there
        const long samples = order < 3 ? 100000 : 20000;
        Rng rng(0x9a055ULL + static_cast<std::uint64_t>(n) * 1000003ULL + static_cast<std::uint64_t>(order));
        std::vector<double> norms(static_cast<std::size_t>(samples));
        for (auto& v : norms)
            v = tensor_norm(gaussian_tensor(order, n, rng));
        const auto idx = static_cast<std::size_t>(std::min<double>(
            static_cast<double>(samples - 1), std::ceil(prob * static_cast<double>(samples)) - 1.0));
        std::nth_element(norms.begin(), norms.begin() + static_cast<std::ptrdiff_t>(idx), norms.end());
        const double q = norms[idx];
        cache.emplace(key, q);
        return q;
    }

    namespace
    {
        VectorXd random_unit(Index n, Rng& rng)
        {
            std::normal_distribution<double> normal;
            VectorXd v(n);
            do
            {
                for (Index i = 0; i < n; ++i)
                    v(i) = normal(rng);
            } while (v.norm() == 0.0);
            return v.normalized();
        }

        void check_targets(const AccuracyTargets& targets, int p)
        {
            require(static_cast<int>(targets.per_order.size()) >= p, "sample_derivatives: need one budget per order");
            for (int l = 0; l < p; ++l)
            {
                const double xi = targets.per_order[static_cast<std::size_t>(l)];
                require(xi > 0.0 && std::isfinite(xi), "sample_derivatives: budgets must be positive and finite");
            }
        }
    }

    DerivativeBundle<double> sample_derivatives(const Problem& problem, const NoiseSpec& noise, const VectorXd& x,
                                                int p, const AccuracyTargets& targets, Rng& rng)
    {
        using Kind = NoiseSpec::Kind;
        if (noise.kind == Kind::subsample)
        {
            const auto* fs = dynamic_cast<const FiniteSumProblem*>(&problem);
            if (fs == nullptr)
                throw ContractViolation("sample_derivatives: subsampling needs a finite-sum problem, got '"
                                        + problem.name() + "'");
            const Index m = fs->num_terms();
            const Index size = std::clamp<Index>(
                static_cast<Index>(std::ceil(noise.batch_fraction * static_cast<double>(m))), 1, m);
            std::vector<Index> terms(static_cast<std::size_t>(m));
            std::iota(terms.begin(), terms.end(), Index(0));
            if (size == m)
                return fs->bundle(x, p);
            // partial Fisher-Yates, then sorted so the batch order does not depend on the draw order
            for (Index i = 0; i < size; ++i)
            {
                const Index j = std::uniform_int_distribution<Index>(i, m - 1)(rng);
                std::swap(terms[static_cast<std::size_t>(i)], terms[static_cast<std::size_t>(j)]);
            }
            terms.resize(static_cast<std::size_t>(size));
            std::sort(terms.begin(), terms.end());
            return fs->batch_bundle(x, p, terms);
        }

        DerivativeBundle<double> b = problem.bundle(x, p);
        if (noise.kind == Kind::none)
            return b;
        check_targets(targets, p);
        b.provenance = Provenance::inexact;
        const Index n = problem.dim();
        const double per_order = std::pow(noise.p_star, 1.0 / p);
        std::uniform_real_distribution<double> uniform(0.0, 1.0);

        if (noise.kind == Kind::gaussian_relative)
        {
            for (int l = 1; l <= p; ++l)
            {
                const double xi = targets.per_order[static_cast<std::size_t>(l - 1)];
                Tensor e = gaussian_tensor(l, n, rng);
                if (per_order < 1.0)
                    e *= xi / gaussian_norm_quantile(n, l, per_order);
                else
                {
                    const double norm = tensor_norm(e);
                    e *= norm > 0.0 ? xi * uniform(rng) / norm : 0.0;
                }
                b.tensors[static_cast<std::size_t>(l - 1)] += e;
            }
            return b;
        }

        // adversarial_sign
        VectorXd toward = -b.derivative(1).as_vector();
        if (toward.norm() == 0.0)
            toward = VectorXd::Unit(n, 0);
        toward.normalize();
        for (int l = 1; l <= p; ++l)
        {
            const double xi = targets.per_order[static_cast<std::size_t>(l - 1)];
            Tensor e;
            if (uniform(rng) < per_order)
                e = Tensor::rank_one(l, random_unit(n, rng)) * (xi * uniform(rng));
            else
                e = Tensor::rank_one(l, toward) * (-10.0 * xi);
            b.tensors[static_cast<std::size_t>(l - 1)] += e;
        }
        return b;
    }
}
