#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>
#include <vector>

#include "iarqp/errors.hpp"
#include "iarqp/oracles.hpp"
#include "test_support.hpp"

using namespace iarqp;
using iarqp::testing::Random;
using iarqp::testing::rel_err;
using Vec = Eigen::VectorXd;
using Tensor = SymmetricTensor<double>;

namespace
{
    Vec point(std::initializer_list<double> xs)
    {
        Vec v(static_cast<Eigen::Index>(xs.size()));
        Eigen::Index i = 0;
        for (double x : xs)
            v(i++) = x;
        return v;
    }

    // Central difference of the order-(l-1) derivative along v; the order-0 derivative is the value.
    Tensor fd_derivative(const Problem& pb, const Vec& x, int order, const Vec& v, double h)
    {
        if (order == 1)
        {
            const double d = (pb.value(x + h * v) - pb.value(x - h * v)) / (2 * h);
            Vec out(1);
            out << d;
            return Tensor::from_vector(out);
        }
        Tensor t = pb.derivative(x + h * v, order - 1);
        t -= pb.derivative(x - h * v, order - 1);
        t *= 1.0 / (2 * h);
        return t;
    }

    std::string write_temp(const std::string& name, const std::string& body)
    {
        const std::string path = "/tmp/iarqp_test_" + name;
        std::ofstream(path) << body;
        return path;
    }
}

TEST_CASE("builtin problem examples")
{
    const auto quad = make_problem("quadratic", 2);
    const Vec ones = Vec::Ones(2);
    CHECK(quad->derivative(ones, 1).as_vector() == ones);
    CHECK(quad->derivative(ones, 2).as_matrix() == Eigen::MatrixXd::Identity(2, 2));

    for (Eigen::Index n : {1, 3, 6})
    {
        const auto quartic = make_problem("quartic", n);
        const Vec x = Vec::Ones(n);
        CHECK(quartic->derivative(x, 1).as_vector().norm() == 0.0);
        CHECK(quartic->value(x) == doctest::Approx(-0.25 * static_cast<double>(n)));
        CHECK(quartic->value(x) == quartic->f_low());
    }

    const auto rosen = make_problem("rosenbrock", 2);
    CHECK(rosen->value(ones) == 0.0);
    CHECK(rosen->derivative(ones, 1).as_vector().norm() == 0.0);

    const auto cubic = make_problem("cubic", 1);
    CHECK(cubic->value(point({2.0})) == doctest::Approx(8.0 / 6.0));
    CHECK(cubic->derivative(point({0.0}), 3)(0, 0, 0) == 1.0);
}

TEST_CASE("problem construction errors")
{
    CHECK_THROWS_AS(make_problem("nope", 2), ConfigError);
    CHECK_THROWS_AS(make_problem("rosenbrock", 3), ConfigError);
    CHECK_THROWS_AS(make_problem("cubic", 2), ConfigError);
    CHECK_THROWS_AS(make_problem("quadratic", 0), ConfigError);
    CHECK_THROWS_AS(make_problem("least_squares", 0, "/nonexistent/file"), ConfigError);
    for (const auto& name : builtin_problem_names())
        CHECK_NOTHROW(make_problem(name, name == "cubic" ? 1 : 4));
    const auto q = make_problem("quadratic", 3);
    CHECK_THROWS_AS(q->derivative(Vec::Zero(2), 1), ContractViolation);
    CHECK_THROWS_AS(q->derivative(Vec::Zero(3), 4), ContractViolation);
}

TEST_CASE("derivatives match finite differences of the order below")
{
    Random rng(11);
    for (const auto& pb : builtin_problems(4))
    {
        CAPTURE(pb->name());
        const Eigen::Index n = pb->dim();
        for (int trial = 0; trial < 20; ++trial)
        {
            const Vec x = (Vec::Random(n) * 2.0).eval() + 0.01 * rng.vector(n);
            const Vec v = rng.unit(n);
            for (int order = 1; order <= pb->degree_available(); ++order)
            {
                CAPTURE(order);
                const Tensor exact = order == 1 ? Tensor::from_vector(point({pb->derivative(x, 1).as_vector().dot(v)}))
                                                : pb->derivative(x, order).contract(v, 1);
                const Tensor fd = fd_derivative(*pb, x, order, v, 1e-4);
                Tensor diff = exact;
                diff -= fd;
                const double scale = std::max({exact.frobenius_norm(), fd.frobenius_norm(), 1.0});
                CHECK(diff.frobenius_norm() / scale <= 1e-5);
            }
        }
    }
}

TEST_CASE("values stay above f_low and Lipschitz constants hold on the box")
{
    Random rng(12);
    for (const auto& pb : builtin_problems(4))
    {
        CAPTURE(pb->name());
        const Eigen::Index n = pb->dim();
        for (int trial = 0; trial < 300; ++trial)
        {
            Vec x(n), y(n);
            for (Eigen::Index i = 0; i < n; ++i)
            {
                x(i) = rng.uniform(-10, 10);
                y(i) = trial % 2 ? x(i) + rng.uniform(-0.5, 0.5) : rng.uniform(-10, 10);
            }
            y = y.cwiseMax(-10.0).cwiseMin(10.0);
            CHECK(pb->value(x) >= pb->f_low());
            const double dist = (x - y).norm();
            for (int p = 1; p <= pb->degree_available(); ++p)
            {
                CAPTURE(p);
                Tensor diff = pb->derivative(x, p);
                diff -= pb->derivative(y, p);
                CHECK(tensor_norm(diff) <= pb->lipschitz(p) * dist * (1 + 1e-12) + 1e-9);
            }
        }
    }
}

TEST_CASE("least squares data file and full-batch equivalence")
{
    const std::string path = write_temp("ls.txt", "# a1 a2 b\n1, 0, 1\n0 2 1\n\n1 1 0  # trailing comment\n");
    const auto pb = make_problem("least_squares", 0, path);
    REQUIRE(pb->dim() == 2);
    const auto* fs = dynamic_cast<const FiniteSumProblem*>(pb.get());
    REQUIRE(fs != nullptr);
    CHECK(fs->num_terms() == 3);

    const Vec x = point({0.3, -0.7});
    // (1/2m) sum (a.x - b)^2 by hand
    const double r1 = 0.3 - 1, r2 = -1.4 - 1, r3 = -0.4;
    CHECK(pb->value(x) == doctest::Approx((r1 * r1 + r2 * r2 + r3 * r3) / 6.0));
    const Vec g = (point({1, 0}) * r1 + point({0, 2}) * r2 + point({1, 1}) * r3) / 3.0;
    CHECK((pb->derivative(x, 1).as_vector() - g).norm() <= 1e-14);

    const auto full = fs->batch_bundle(x, 3, {0, 1, 2});
    CHECK(pb->bundle(x, 3).tensors == full.tensors);

    CHECK_THROWS_AS(make_problem("least_squares", 0, write_temp("bad.txt", "1 2 x\n")), ConfigError);
    CHECK_THROWS_AS(make_problem("least_squares", 0, write_temp("ragged.txt", "1 2 3\n1 2\n")), ConfigError);
    CHECK_THROWS_AS(make_problem("least_squares", 0, write_temp("empty.txt", "# nothing\n")), ConfigError);
}

TEST_CASE("function_estimate examples")
{
    const auto pb = make_problem("quartic", 3);
    const Vec x = point({0.5, -1.2, 2.0});
    const double f = pb->value(x);
    Rng rng(1);
    CHECK(function_estimate(*pb, x, 0.0, EstimateMode::random, EstimateSite::current, rng) == f);
    CHECK(function_estimate(*pb, x, 0.0, EstimateMode::adversarial, EstimateSite::trial, rng) == f);
    CHECK(function_estimate(*pb, x, 0.1, EstimateMode::adversarial, EstimateSite::current, rng) == doctest::Approx(f + 0.1));
    CHECK(function_estimate(*pb, x, 0.1, EstimateMode::adversarial, EstimateSite::trial, rng) == doctest::Approx(f - 0.1));
    CHECK_THROWS_AS(function_estimate(*pb, x, -1e-3, EstimateMode::random, EstimateSite::current, rng), ContractViolation);

    const double tol = 0.25;
    double worst = 0.0, mean = 0.0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i)
    {
        const double e = std::abs(function_estimate(*pb, x, tol, EstimateMode::random, EstimateSite::current, rng) - f);
        worst = std::max(worst, e);
        mean += e / draws;
    }
    CHECK(worst <= tol);
    CHECK(mean <= 0.6 * tol);
    CHECK(mean >= 0.4 * tol);
}

TEST_CASE("function_estimate never exceeds its tolerance")
{
    Random rng(13);
    Rng engine(2);
    const auto pb = make_problem("rosenbrock", 4);
    long violations = 0;
    for (int i = 0; i < 100000; ++i)
    {
        Vec x(4);
        for (int j = 0; j < 4; ++j)
            x(j) = rng.uniform(-10, 10);
        const double tol = std::pow(10.0, rng.uniform(-14, 2));
        const auto mode = i % 2 ? EstimateMode::random : EstimateMode::adversarial;
        const auto site = i % 3 ? EstimateSite::current : EstimateSite::trial;
        const double fbar = function_estimate(*pb, x, tol, mode, site, engine);
        violations += !(std::abs(fbar - pb->value(x)) <= tol);
    }
    CHECK(violations == 0);
}

TEST_CASE("accuracy_targets_from_proxy examples")
{
    const auto a = accuracy_targets_from_proxy(0.04, 1, 0.5, 1.2, 1e-8);
    REQUIRE(a.per_order.size() == 1);
    CHECK(a.per_order[0] == doctest::Approx(0.016).epsilon(1e-14));

    const auto b = accuracy_targets_from_proxy(0.04, 3, 1.0, 1.2, 1e-8);
    REQUIRE(b.per_order.size() == 3);
    CHECK(b.per_order[0] == b.per_order[1]);
    CHECK(b.per_order[1] == b.per_order[2]);

    const auto c = accuracy_targets_from_proxy(0.04, 2, 0.5, 1e-30, 1e-8);
    CHECK(c.per_order == std::vector<double>{1e-8, 1e-8});
    const auto d = accuracy_targets_from_proxy(0.04, 2, 0.0, 0.0, 1e-6);
    CHECK(d.per_order == std::vector<double>{1e-6, 1e-6});

    const auto e = accuracy_targets_from_proxy(0.05, 2, 2.0, 3.0, 1e-12);
    CHECK(e.per_order[0] == doctest::Approx(0.05 * 3 / 12));
    CHECK(e.per_order[1] == doctest::Approx(0.05 * 3 / 24));
}

TEST_CASE("noise spec parsing and validation")
{
    for (auto k : {NoiseSpec::Kind::none, NoiseSpec::Kind::gaussian_relative, NoiseSpec::Kind::adversarial_sign,
                   NoiseSpec::Kind::subsample})
        CHECK(parse_noise_kind(to_string(k)) == k);
    CHECK_THROWS_AS(parse_noise_kind("loud"), ConfigError);

    NoiseSpec s;
    CHECK_NOTHROW(s.validate());
    s.p_star = 0.5;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.p_star = 1.01;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = NoiseSpec{};
    s.magnitude = -1;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = NoiseSpec{};
    s.batch_fraction = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("sample_derivatives without noise and with a full batch is exact")
{
    Rng rng(3);
    const auto pb = make_problem("rosenbrock", 4);
    const Vec x = point({0.1, -0.4, 1.3, 0.9});
    const AccuracyTargets t{{1e-3, 1e-3, 1e-3}};
    const auto exact = pb->bundle(x, 3);
    CHECK(sample_derivatives(*pb, NoiseSpec{}, x, 3, t, rng) == exact);

    const auto ls = make_problem("least_squares", 3);
    NoiseSpec sub;
    sub.kind = NoiseSpec::Kind::subsample;
    sub.batch_fraction = 1.0;
    const Vec y = point({0.2, 0.5, -1.0});
    CHECK(sample_derivatives(*ls, sub, y, 2, t, rng).tensors == ls->bundle(y, 2).tensors);

    sub.batch_fraction = 0.5;
    CHECK_THROWS_AS(sample_derivatives(*pb, sub, x, 2, t, rng), ContractViolation);
}

TEST_CASE("subsampling averages one of the possible batches")
{
    const std::string path = write_temp("ls2.txt", "1 0 1\n0 1 2\n");
    const auto pb = make_problem("least_squares", 0, path);
    const auto* fs = dynamic_cast<const FiniteSumProblem*>(pb.get());
    REQUIRE(fs != nullptr);
    NoiseSpec sub;
    sub.kind = NoiseSpec::Kind::subsample;
    sub.batch_fraction = 0.5;
    const Vec x = point({0.3, 0.4});
    const auto first = fs->batch_bundle(x, 2, {0});
    const auto second = fs->batch_bundle(x, 2, {1});
    Rng rng(4);
    int seen_first = 0, seen_second = 0;
    for (int i = 0; i < 200; ++i)
    {
        const auto b = sample_derivatives(*pb, sub, x, 2, AccuracyTargets{{1, 1}}, rng);
        seen_first += b.tensors == first.tensors;
        seen_second += b.tensors == second.tensors;
    }
    CHECK(seen_first + seen_second == 200);
    CHECK(seen_first > 50);
    CHECK(seen_second > 50);
}

TEST_CASE("gaussian_relative noise hits the target accuracy probability")
{
    struct Case
    {
        std::string problem;
        Eigen::Index n;
        int p;
        int draws;
    };
    for (const auto& c : {Case{"quartic", 4, 2, 10000}, Case{"rosenbrock", 2, 3, 10000}, Case{"quadratic", 5, 1, 10000}})
    {
        CAPTURE(c.problem);
        CAPTURE(c.p);
        const auto pb = make_problem(c.problem, c.n);
        NoiseSpec noise;
        noise.kind = NoiseSpec::Kind::gaussian_relative;
        noise.p_star = 0.8;
        Random r(21);
        const Vec x = r.vector(c.n);
        AccuracyTargets t;
        for (int l = 1; l <= c.p; ++l)
            t.per_order.push_back(0.01 * l);
        const auto exact = pb->bundle(x, c.p);
        Rng rng(5);
        int accurate = 0;
        for (int i = 0; i < c.draws; ++i)
        {
            const auto b = sample_derivatives(*pb, noise, x, c.p, t, rng);
            CHECK(b.provenance == Provenance::inexact);
            bool ok = true;
            for (int l = 1; l <= c.p; ++l)
            {
                Tensor e = b.derivative(l);
                e -= exact.derivative(l);
                ok = ok && tensor_norm(e) <= t.per_order[static_cast<std::size_t>(l - 1)];
            }
            accurate += ok;
        }
        const double frac = static_cast<double>(accurate) / c.draws;
        CAPTURE(frac);
        CHECK(frac >= 0.78);
        CHECK(frac <= 0.95);
    }
}

TEST_CASE("gaussian_relative with p_star = 1 is always within budget")
{
    const auto pb = make_problem("quartic", 3);
    NoiseSpec noise;
    noise.kind = NoiseSpec::Kind::gaussian_relative;
    noise.p_star = 1.0;
    const Vec x = point({0.3, 1.1, -0.2});
    const AccuracyTargets t{{1e-2, 2e-2}};
    const auto exact = pb->bundle(x, 2);
    Rng rng(6);
    double largest = 0.0;
    for (int i = 0; i < 2000; ++i)
    {
        const auto b = sample_derivatives(*pb, noise, x, 2, t, rng);
        for (int l = 1; l <= 2; ++l)
        {
            Tensor e = b.derivative(l);
            e -= exact.derivative(l);
            const double ratio = tensor_norm(e) / t.per_order[static_cast<std::size_t>(l - 1)];
            CHECK(ratio <= 1.0 + 1e-12);
            largest = std::max(largest, ratio);
        }
    }
    CHECK(largest > 0.5); // the budget is used, not ignored
}

TEST_CASE("adversarial_sign noise is either within budget or inflating the gradient at ten times it")
{
    const auto pb = make_problem("quartic", 3);
    NoiseSpec noise;
    noise.kind = NoiseSpec::Kind::adversarial_sign;
    noise.p_star = 0.8;
    const Vec x = point({0.3, 1.4, -0.2});
    const AccuracyTargets t{{1e-2, 1e-2}};
    const auto exact = pb->bundle(x, 2);
    const Vec g = exact.derivative(1).as_vector();
    Rng rng(7);
    int accurate = 0;
    const int draws = 4000;
    for (int i = 0; i < draws; ++i)
    {
        const auto b = sample_derivatives(*pb, noise, x, 2, t, rng);
        bool ok = true;
        for (int l = 1; l <= 2; ++l)
        {
            Tensor e = b.derivative(l);
            e -= exact.derivative(l);
            const double norm = tensor_norm(e);
            if (norm <= 1e-2)
                continue;
            ok = false;
            CHECK(norm == doctest::Approx(0.1).epsilon(1e-9));
            if (l == 1)
                CHECK(e.as_vector().dot(g) > 0.0); // inflates the gradient
        }
        accurate += ok;
    }
    const double frac = static_cast<double>(accurate) / draws;
    CHECK(frac >= 0.75);
    CHECK(frac <= 0.85);
}

TEST_CASE("gaussian_norm_quantile is deterministic, monotone and thread safe")
{
    const double a = gaussian_norm_quantile(3, 2, 0.9);
    CHECK(gaussian_norm_quantile(3, 2, 0.9) == a);
    CHECK(gaussian_norm_quantile(3, 2, 0.5) < a);
    CHECK(gaussian_norm_quantile(3, 2, 0.99) > a);
    // order 1: the norm of an n-dimensional standard gaussian; its median is close to sqrt(n - 2/3)
    CHECK(gaussian_norm_quantile(9, 1, 0.5) == doctest::Approx(std::sqrt(9 - 2.0 / 3.0)).epsilon(0.02));

    std::vector<double> got(4);
    std::vector<std::thread> pool;
    for (int i = 0; i < 4; ++i)
        pool.emplace_back([&got, i] { got[static_cast<std::size_t>(i)] = gaussian_norm_quantile(2, 3, 0.85); });
    for (auto& t : pool)
        t.join();
    for (double v : got)
        CHECK(v == got[0]);
}

TEST_CASE("gaussian_tensor is symmetric with the requested shape")
{
    Rng rng(8);
    const Tensor t = gaussian_tensor(3, 3, rng);
    CHECK(t.order() == 3);
    CHECK(t.dim() == 3);
    CHECK(t(0, 1, 2) == t(2, 0, 1));
    CHECK(t(1, 1, 0) == t(0, 1, 1));
    const Tensor m = gaussian_tensor(2, 4, rng);
    CHECK((m.as_matrix() - m.as_matrix().transpose()).norm() == 0.0);
}
