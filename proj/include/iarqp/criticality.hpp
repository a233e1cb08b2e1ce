#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "iarqp/errors.hpp"
#include "iarqp/tensor_taylor.hpp"

namespace iarqp
{
    /// Largest Taylor decrement over a ball and the direction attaining it.
    template<typename Scalar>
    struct MeasureResult
    {
        Scalar value{0};
        Vector<Scalar> direction;
    };

    namespace detail
    {
        // Between d and -d-style ties, prefer the vector whose first nonzero entry is largest.
        template<typename Scalar>
        bool lexicographically_greater(const Vector<Scalar>& a, const Vector<Scalar>& b)
        {
            for (Eigen::Index i = 0; i < a.size(); ++i)
            {
                if (a(i) != b(i))
                    return a(i) > b(i);
            }
            return false;
        }

        template<typename Scalar>
        Scalar quadratic_value(const Vector<Scalar>& g, const Matrix<Scalar>& h, const Vector<Scalar>& d)
        {
            return g.dot(d) + Scalar(0.5) * d.dot(h * d);
        }
    }

    /// Global minimizer of g.d + 1/2 d.H d over ||d|| <= radius.
    ///
    /// Works in the eigenbasis of H: the boundary solution d(lambda) = -(H + lambda I)^{-1} g is
    /// located by safeguarded Newton on 1/||d(lambda)|| - 1/radius for lambda > max(0, -lambda_min),
    /// and the hard case (g orthogonal to the leftmost eigenspace) is completed along the leftmost
    /// eigenvector. The returned value is the decrease -(g.d + 1/2 d.H d) >= 0.
    template<typename Scalar>
    MeasureResult<Scalar> solve_trust_region(const Vector<Scalar>& g, const Matrix<Scalar>& h, Scalar radius)
    {
        using std::abs;
        using std::max;
        using std::sqrt;
        const Eigen::Index n = g.size();
        require(h.rows() == n && h.cols() == n, "solve_trust_region: Hessian shape does not match gradient");
        require(radius >= Scalar(0), "solve_trust_region: radius must be nonnegative");

        MeasureResult<Scalar> result{Scalar(0), Vector<Scalar>::Zero(n)};
        if (radius == Scalar(0))
            return result;
        if (!g.allFinite() || !h.allFinite())
            throw NumericalError("solve_trust_region: non-finite model data");

        Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(h);
        if (es.info() != Eigen::Success)
            throw NumericalError("solve_trust_region: eigensolver failed to converge");
        const Vector<Scalar>& lambda = es.eigenvalues();
        const Matrix<Scalar>& q = es.eigenvectors();
        const Vector<Scalar> gh = q.transpose() * g;

        const Scalar eps = std::numeric_limits<Scalar>::epsilon();
        const Scalar gnorm = g.norm();
        const Scalar scale = max(Scalar(1), lambda.cwiseAbs().maxCoeff());
        const Scalar lambda_min = lambda(0);
        const Scalar eig_tol = Scalar(1e4) * eps * scale;
        const Scalar grad_tol = Scalar(1e4) * eps * max(gnorm, scale * radius);
        const Scalar lo = max(Scalar(0), -lambda_min);

        auto finish = [&](Vector<Scalar> d) {
            const Scalar dn = d.norm();
            if (dn > radius)
                d *= radius / dn;
            const Scalar value = -detail::quadratic_value(g, h, d);
            if (value > Scalar(0))
            {
                result.value = value;
                result.direction = std::move(d);
            }
            return result;
        };

        // Solution of (Lambda + shift I) y = -gh restricted to non-null components.
        auto solve_shifted = [&](Scalar shift, bool skip_null) {
            Vector<Scalar> y = Vector<Scalar>::Zero(n);
            for (Eigen::Index i = 0; i < n; ++i)
            {
                const Scalar denom = lambda(i) + shift;
                if (skip_null && lambda(i) - lambda_min <= eig_tol)
                    continue;
                y(i) = -gh(i) / denom;
            }
            return y;
        };

        if (gnorm == Scalar(0) && lambda_min >= Scalar(0))
            return result;

        // Interior Newton point.
        if (lambda_min > eig_tol)
        {
            Vector<Scalar> y = solve_shifted(Scalar(0), false);
            if (y.norm() <= radius)
                return finish(q * y);
        }

        // Hard case and the singular positive-semidefinite case.
        Scalar null_component(0);
        for (Eigen::Index i = 0; i < n && lambda(i) - lambda_min <= eig_tol; ++i)
            null_component += gh(i) * gh(i);
        null_component = sqrt(null_component);
        if (lambda_min <= eig_tol && null_component <= grad_tol)
        {
            Vector<Scalar> y = solve_shifted(lo, true);
            const Scalar yn = y.norm();
            if (yn <= radius)
            {
                Vector<Scalar> base = q * y;
                if (lo <= eig_tol)
                    return finish(base);
                const Scalar tau = sqrt(max(Scalar(0), radius * radius - yn * yn));
                const Vector<Scalar> v = q.col(0);
                Vector<Scalar> plus = base + tau * v;
                Vector<Scalar> minus = base - tau * v;
                const Scalar qp = detail::quadratic_value(g, h, plus);
                const Scalar qm = detail::quadratic_value(g, h, minus);
                const Scalar tie = Scalar(1e3) * eps * (abs(qp) + abs(qm) + Scalar(1));
                if (abs(qp - qm) <= tie)
                    return finish(detail::lexicographically_greater(plus, minus) ? plus : minus);
                return finish(qp < qm ? plus : minus);
            }
        }

        // Boundary solution: secular equation on (lo, hi].
        auto dnorm = [&](Scalar mu, Scalar& slope) {
            Scalar s2(0), s3(0);
            for (Eigen::Index i = 0; i < n; ++i)
            {
                const Scalar denom = lambda(i) + mu;
                const Scalar c = gh(i) * gh(i);
                s2 += c / (denom * denom);
                s3 += c / (denom * denom * denom);
            }
            const Scalar norm = sqrt(s2);
            // derivative of 1/||d(mu)|| with respect to mu
            slope = s3 / (norm * norm * norm);
            return norm;
        };

        Scalar a = lo;
        Scalar b = lo + gnorm / radius + eig_tol;
        Scalar mu = b;
        for (int it = 0; it < 200; ++it)
        {
            Scalar slope(0);
            const Scalar norm = dnorm(mu, slope);
            if (abs(norm - radius) <= Scalar(1e-13) * radius)
                break;
            if (norm > radius)
                a = mu;
            else
                b = mu;
            // Newton on 1/||d|| - 1/radius
            Scalar next = mu - (Scalar(1) / norm - Scalar(1) / radius) / slope;
            if (!(next > a && next < b) || !std::isfinite(static_cast<double>(next)))
                next = Scalar(0.5) * (a + b);
            if (b - a <= eps * max(Scalar(1), abs(b)))
            {
                mu = b;
                break;
            }
            mu = next;
        }
        return finish(q * solve_shifted(mu, false));
    }

    /// First-order measure: max_{||d|| <= delta} -g.d = ||g|| delta, attained at -delta g / ||g||.
    template<typename Scalar>
    MeasureResult<Scalar> phi_order1(const Vector<Scalar>& g, Scalar delta)
    {
        require(delta >= Scalar(0), "phi_order1: radius must be nonnegative");
        MeasureResult<Scalar> r{Scalar(0), Vector<Scalar>::Zero(g.size())};
        const Scalar gn = g.norm();
        if (gn == Scalar(0) || delta == Scalar(0))
            return r;
        r.value = gn * delta;
        r.direction = -(delta / gn) * g;
        return r;
    }

    /// Second-order measure: max_{||d|| <= delta} -(g.d + 1/2 d.H d).
    template<typename Scalar>
    MeasureResult<Scalar> phi_order2(const Vector<Scalar>& g, const SymmetricTensor<Scalar>& h, Scalar delta)
    {
        require(h.order() == 2 && h.dim() == g.size(), "phi_order2: Hessian shape does not match gradient");
        return solve_trust_region<Scalar>(g, Matrix<Scalar>(h.as_matrix()), delta);
    }

    /// phi_j^delta for j in {1, 2} using the first j tensors of the bundle.
    template<typename Scalar>
    MeasureResult<Scalar> phi_measure(const DerivativeBundle<Scalar>& bundle, int j, Scalar delta)
    {
        require(j == 1 || j == 2, "phi_measure: only orders 1 and 2 are supported");
        require(bundle.degree() >= j, "phi_measure: bundle degree below measure order");
        const Vector<Scalar>& g = bundle.derivative(1).as_vector();
        if (j == 1)
            return phi_order1(g, delta);
        return phi_order2(g, bundle.derivative(2), delta);
    }

    /// Sampling lower bound on max_{||d|| <= delta} of the bundle's Taylor decrement.
    ///
    /// Alternates points on the radius-delta sphere and points uniform in the ball, drawn from a
    /// fixed-seed stream; d = 0 is always included, so the result is >= 0.
    template<typename Scalar>
    Scalar phi_bruteforce(const DerivativeBundle<Scalar>& bundle, Scalar delta, long samples,
                          std::uint64_t seed = 0x9e3779b97f4a7c15ULL)
    {
        using std::pow;
        if (delta <= Scalar(0))
            return Scalar(0);
        const Eigen::Index n = bundle.dim();
        std::mt19937_64 gen(seed);
        std::normal_distribution<double> normal;
        std::uniform_real_distribution<double> uniform(0.0, 1.0);
        Scalar best(0);
        Vector<Scalar> d(n);
        for (long i = 0; i < samples; ++i)
        {
            for (Eigen::Index k = 0; k < n; ++k)
                d(k) = Scalar(normal(gen));
            const Scalar dn = d.norm();
            if (dn == Scalar(0))
                continue;
            Scalar r = delta;
            if (i % 2 == 1)
                r *= Scalar(pow(uniform(gen), 1.0 / static_cast<double>(n)));
            d *= r / dn;
            best = std::max(best, taylor_decrement(bundle, d));
        }
        return best;
    }

    /// q-th order (epsilon, delta)-approximate minimizer test:
    /// phi_j^{delta_j} <= epsilon_j delta_j^j / j! for j = 1..q.
    template<typename Scalar>
    bool termination_test(const DerivativeBundle<Scalar>& bundle, const std::vector<Scalar>& delta,
                          const std::vector<Scalar>& epsilon, int q)
    {
        using std::pow;
        require(q == 1 || q == 2, "termination_test: q must be 1 or 2");
        require(static_cast<int>(delta.size()) >= q && static_cast<int>(epsilon.size()) >= q,
                "termination_test: need one radius and one accuracy per order");
        for (int j = 1; j <= q; ++j)
        {
            const Scalar dj = delta[static_cast<std::size_t>(j - 1)];
            const Scalar ej = epsilon[static_cast<std::size_t>(j - 1)];
            const Scalar phi = phi_measure(bundle, j, dj).value;
            if (phi > ej * pow(dj, Scalar(j)) / Scalar(factorial(j)))
                return false;
        }
        return true;
    }
}
