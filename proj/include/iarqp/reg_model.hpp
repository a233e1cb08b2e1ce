#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "iarqp/criticality.hpp"
#include "iarqp/errors.hpp"
#include "iarqp/tensor_taylor.hpp"

namespace iarqp
{
    /// m(s) = -DT(s) + sigma/(p+1)! ||s||^(p+1), built on a (possibly inexact) bundle of degree p.
    /// m(0) = 0: the model describes the variation of f, not f itself.
    template<typename Scalar>
    struct RegModel
    {
        DerivativeBundle<Scalar> bundle;
        Scalar sigma{1};

        int degree() const { return bundle.degree(); }
        Eigen::Index dim() const { return bundle.dim(); }
        Scalar weight() const { return sigma / Scalar(factorial(degree() + 1)); }
    };

    template<typename Scalar>
    struct StepResult
    {
        Vector<Scalar> step;
        std::vector<Scalar> radii;           // delta_{k,j}, j = 1..q
        Scalar model_decrement{0};           // DT_bar_{f,p}(x_k, s_k)
        Scalar model_value{0};               // m_k(s_k) <= 0
        std::vector<Scalar> phi_bar;         // model measures at the step, j = 1..q
        std::vector<Vector<Scalar>> phi_directions;
        int inner_iterations = 0;
    };

    struct StepOptions
    {
        int inner_budget = 200;
        double armijo = 1e-4;
        double backtrack = 0.5;
        /// When an inner step overshoots so that max_j phi_j/threshold_j drops below this
        /// fraction, the point where the tests first hold along that step is located by bisection.
        double first_pass_band = 0.5;
    };

    template<typename Scalar, typename Derived>
    Scalar model_value(const RegModel<Scalar>& model, const Eigen::MatrixBase<Derived>& s)
    {
        return -taylor_decrement(model.bundle, s) + model.weight() * regularizer_value(s, model.degree());
    }

    namespace detail
    {
        // Taylor coefficients of the model around s up to order j (j may exceed p: the Taylor
        // part of the model then contributes nothing beyond order p).
        template<typename Scalar, typename Derived>
        DerivativeBundle<Scalar> shifted_model_bundle(const RegModel<Scalar>& model,
                                                      const Eigen::MatrixBase<Derived>& s, int j)
        {
            require(s.size() == model.dim(), "model_shifted_bundle: step dimension mismatch");
            const int p = model.degree();
            DerivativeBundle<Scalar> out;
            out.point = s;
            out.provenance = model.bundle.provenance;
            for (int l = 1; l <= j; ++l)
            {
                SymmetricTensor<Scalar> t = l <= p ? shifted_derivative(model.bundle, s, l)
                                                   : SymmetricTensor<Scalar>::zero(l, model.dim());
                t += model.weight() * regularizer_derivative(s, p, l);
                out.tensors.push_back(std::move(t));
            }
            return out;
        }
    }

    /// Bundle whose Taylor decrement in d is DT_{m,j}(s, d): its l-th tensor is the l-th
    /// derivative of the Taylor polynomial at s plus sigma/(p+1)! times that of ||s||^(p+1).
    template<typename Scalar, typename Derived>
    DerivativeBundle<Scalar> model_shifted_bundle(const RegModel<Scalar>& model,
                                                  const Eigen::MatrixBase<Derived>& s, int j)
    {
        require(j == 1 || j == 2, "model_shifted_bundle: j must be 1 or 2");
        return detail::shifted_model_bundle(model, s, j);
    }

    /// phi_bar_{m,j}^{delta_j}(s) and its maximizer for j = 1..q.
    template<typename Scalar, typename Derived>
    std::vector<MeasureResult<Scalar>> model_criticality(const RegModel<Scalar>& model,
                                                         const Eigen::MatrixBase<Derived>& s,
                                                         const std::vector<Scalar>& delta, int q)
    {
        require(q == 1 || q == 2, "model_criticality: q must be 1 or 2");
        require(static_cast<int>(delta.size()) >= q, "model_criticality: need one radius per order");
        const DerivativeBundle<Scalar> shifted = model_shifted_bundle(model, s, q);
        std::vector<MeasureResult<Scalar>> out;
        for (int j = 1; j <= q; ++j)
            out.push_back(phi_measure(shifted, j, delta[static_cast<std::size_t>(j - 1)]));
        return out;
    }

    namespace detail
    {
        template<typename Scalar>
        struct InnerPoint
        {
            Vector<Scalar> s;
            Scalar m{0};
            Vector<Scalar> grad;
            Matrix<Scalar> hess;
            std::vector<MeasureResult<Scalar>> measures;
            Scalar ratio{0}; // max_j phi_j / threshold_j
        };

        template<typename Scalar>
        InnerPoint<Scalar> inner_point(const RegModel<Scalar>& model, Vector<Scalar> s,
                                       const std::vector<Scalar>& thresholds, int q)
        {
            InnerPoint<Scalar> pt;
            const DerivativeBundle<Scalar> b = shifted_model_bundle(model, s, 2);
            pt.m = model_value(model, s);
            pt.grad = b.derivative(1).as_vector();
            pt.hess = b.derivative(2).as_matrix();
            pt.measures.push_back(phi_order1<Scalar>(pt.grad, Scalar(1)));
            if (q == 2)
                pt.measures.push_back(phi_order2(pt.grad, b.derivative(2), Scalar(1)));
            pt.ratio = Scalar(0);
            for (int j = 0; j < q; ++j)
                pt.ratio = std::max(pt.ratio, pt.measures[static_cast<std::size_t>(j)].value / thresholds[static_cast<std::size_t>(j)]);
            pt.s = std::move(s);
            return pt;
        }

        // ||s + d||^(p+1) - ||s||^(p+1) without cancellation: a^(p+1) - b^(p+1) = (a - b) sum_k a^k b^(p-k)
        // with a - b = (2 s.d + ||d||^2) / (a + b).
        template<typename Scalar>
        Scalar regularizer_difference(const Vector<Scalar>& s, const Vector<Scalar>& d, int p)
        {
            const Scalar b = s.norm();
            const Scalar a = (s + d).norm();
            if (a + b == Scalar(0))
                return Scalar(0);
            const Scalar diff = (Scalar(2) * s.dot(d) + d.squaredNorm()) / (a + b);
            Scalar sum(0), ak(1);
            for (int k = 0; k <= p; ++k)
            {
                Scalar bk(1);
                for (int i = 0; i < p - k; ++i)
                    bk *= b;
                sum += ak * bk;
                ak *= a;
            }
            return diff * sum;
        }

        // m(s + d) - m(s), expanded around s so that small decreases stay visible when |m(s)| is large.
        template<typename Scalar>
        Scalar model_difference(const RegModel<Scalar>& model, const DerivativeBundle<Scalar>& taylor_at_s,
                                const Vector<Scalar>& s, const Vector<Scalar>& d)
        {
            return -taylor_decrement(taylor_at_s, d) + model.weight() * regularizer_difference(s, d, model.degree());
        }

        template<typename Scalar>
        DerivativeBundle<Scalar> shifted_taylor(const RegModel<Scalar>& model, const Vector<Scalar>& s)
        {
            DerivativeBundle<Scalar> out{s, {}, model.bundle.provenance};
            for (int l = 1; l <= model.degree(); ++l)
                out.tensors.push_back(shifted_derivative(model.bundle, s, l));
            return out;
        }

        template<typename Scalar>
        StepResult<Scalar> make_step_result(const RegModel<Scalar>& model, InnerPoint<Scalar> pt, int q, int iterations)
        {
            StepResult<Scalar> r;
            r.radii.assign(static_cast<std::size_t>(q), Scalar(1));
            r.model_decrement = taylor_decrement(model.bundle, pt.s);
            r.model_value = pt.m;
            for (auto& mr : pt.measures)
            {
                r.phi_bar.push_back(mr.value);
                r.phi_directions.push_back(std::move(mr.direction));
            }
            r.step = std::move(pt.s);
            r.inner_iterations = iterations;
            return r;
        }
    }

    /// Approximately minimizes the model from s = 0 until m(s) <= 0 and
    /// phi_bar_{m,j}^1(s) <= theta * epsilon_j / j! for j = 1..q (radii fixed at one).
    ///
    /// Inner iteration: the direction minimizes the second-order expansion of m at the current
    /// point within an adaptive ball (a regularized Newton step that also follows negative
    /// curvature), followed by Armijo backtracking against the expansion's predicted decrease.
    /// The tests are evaluated after every accepted inner point. When a point overshoots the
    /// thresholds by a wide margin, the first point along the last inner step where they hold
    /// is returned instead.
    ///
    /// Throws InnerSolverFailure when the budget is exhausted or the line search stalls.
    template<typename Scalar>
    StepResult<Scalar> compute_step(const RegModel<Scalar>& model, const std::vector<Scalar>& epsilon, Scalar theta,
                                    int q, const StepOptions& options = {})
    {
        using std::abs;
        using std::max;
        require(q == 1 || q == 2, "compute_step: q must be 1 or 2");
        require(q <= model.degree(), "compute_step: q must not exceed the model degree");
        require(static_cast<int>(epsilon.size()) >= q, "compute_step: need one accuracy per order");
        require(theta > Scalar(0) && theta < Scalar(0.5), "compute_step: theta must lie in (0, 1/2)");
        require(model.sigma > Scalar(0), "compute_step: sigma must be positive");
        require(options.inner_budget >= 0, "compute_step: inner budget must be nonnegative");

        std::vector<Scalar> thresholds;
        for (int j = 1; j <= q; ++j)
        {
            const Scalar e = epsilon[static_cast<std::size_t>(j - 1)];
            require(e > Scalar(0) && e <= Scalar(1), "compute_step: accuracies must lie in (0, 1]");
            thresholds.push_back(theta * e / Scalar(factorial(j)));
        }

        const Eigen::Index n = model.dim();
        auto accepts = [](const detail::InnerPoint<Scalar>& pt) { return pt.m <= Scalar(0) && pt.ratio <= Scalar(1); };

        detail::InnerPoint<Scalar> current = detail::inner_point(model, Vector<Scalar>(Vector<Scalar>::Zero(n)), thresholds, q);
        if (accepts(current))
            return detail::make_step_result(model, std::move(current), q, 0);

        const Scalar eps = std::numeric_limits<Scalar>::epsilon();
        const Scalar c1 = Scalar(options.armijo);
        const Scalar shrink = Scalar(options.backtrack);
        Scalar radius(1);
        detail::InnerPoint<Scalar> best = current;

        auto fail = [&](const std::string& why, int iterations) -> StepResult<Scalar> {
            throw InnerSolverFailure("compute_step: " + why, best.s.template cast<double>(),
                                     static_cast<double>(best.ratio), iterations);
        };

        for (int it = 1; it <= options.inner_budget; ++it)
        {
            const MeasureResult<Scalar> dir = solve_trust_region<Scalar>(current.grad, current.hess, radius);
            const Vector<Scalar>& d = dir.direction;
            const Scalar gd = current.grad.dot(d);
            const Scalar dhd = d.dot(current.hess * d);
            if (dir.value <= Scalar(0) || d.norm() == Scalar(0))
                return fail("no descent direction at a point failing the step tests", it);

            const DerivativeBundle<Scalar> local = detail::shifted_taylor(model, current.s);
            Scalar alpha(1);
            detail::InnerPoint<Scalar> trial;
            bool found = false;
            for (int bt = 0; bt < 200; ++bt)
            {
                const Scalar pred = -(alpha * gd + Scalar(0.5) * alpha * alpha * dhd);
                const Vector<Scalar> ad = alpha * d;
                if (pred > Scalar(0) && detail::model_difference(model, local, current.s, ad) <= -c1 * pred)
                {
                    Vector<Scalar> s_trial = current.s + ad;
                    trial = detail::inner_point(model, std::move(s_trial), thresholds, q);
                    found = true;
                    break;
                }
                if (pred <= Scalar(0) || alpha * d.norm() <= eps * (Scalar(1) + current.s.norm()))
                    break;
                alpha *= shrink;
            }
            if (!found)
                return fail("line search stalled", it);

            const Scalar dn = d.norm();
            if (alpha == Scalar(1) && dn >= Scalar(0.99) * radius)
                radius *= Scalar(2);
            else if (alpha < Scalar(1))
                radius = max(alpha * dn, eps * (Scalar(1) + trial.s.norm()));

            if (trial.ratio < best.ratio)
                best = trial;

            if (accepts(trial))
            {
                if (trial.ratio >= Scalar(options.first_pass_band))
                    return detail::make_step_result(model, std::move(trial), q, it);

                // Locate where the tests first hold along [current.s, trial.s].
                const Vector<Scalar> step = trial.s - current.s;
                Scalar lo(0), hi(1);
                detail::InnerPoint<Scalar> chosen = std::move(trial);
                for (int b = 0; b < 60; ++b)
                {
                    const Scalar mid = Scalar(0.5) * (lo + hi);
                    detail::InnerPoint<Scalar> probe =
                        detail::inner_point(model, Vector<Scalar>(current.s + mid * step), thresholds, q);
                    if (!accepts(probe))
                    {
                        lo = mid;
                        continue;
                    }
                    hi = mid;
                    chosen = std::move(probe);
                    if (chosen.ratio >= Scalar(options.first_pass_band))
                        break;
                }
                return detail::make_step_result(model, std::move(chosen), q, it);
            }
            current = std::move(trial);
        }
        return fail("inner budget of " + std::to_string(options.inner_budget) + " iterations exhausted",
                    options.inner_budget);
    }
}
