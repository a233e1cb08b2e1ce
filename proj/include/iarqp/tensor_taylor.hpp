#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "iarqp/errors.hpp"

namespace iarqp
{
    template<typename Scalar>
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    template<typename Scalar>
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

    inline constexpr int kMaxOrder = 3;

    inline double factorial(int k)
    {
        double r = 1.0;
        for (int i = 2; i <= k; ++i)
            r *= i;
        return r;
    }

    /// Dense fully-symmetric tensor of order 1..3 over R^n.
    ///
    /// Entries are stored as a flat array of n^order values, first index fastest
    /// (so an order-2 tensor is a column-major n x n matrix and an order-3 tensor
    /// is n consecutive n x n slices). Every constructor symmetrizes its input, so
    /// the stored array is exactly invariant under index permutation.
    template<typename Scalar>
    class SymmetricTensor
    {
    public:
        using VectorType = Vector<Scalar>;
        using MatrixType = Matrix<Scalar>;
        using ConstMatrixMap = Eigen::Map<const MatrixType>;

        SymmetricTensor() = default;

        static SymmetricTensor zero(int order, Eigen::Index dim)
        {
            check_shape(order, dim);
            SymmetricTensor t;
            t.order_ = order;
            t.dim_ = dim;
            t.data_ = VectorType::Zero(flat_size(order, dim));
            return t;
        }

        template<typename Derived>
        static SymmetricTensor from_vector(const Eigen::MatrixBase<Derived>& v)
        {
            SymmetricTensor t = zero(1, v.size());
            t.data_ = v;
            return t;
        }

        /// Symmetric part (M + M^T)/2 of a square matrix.
        template<typename Derived>
        static SymmetricTensor from_matrix(const Eigen::MatrixBase<Derived>& m)
        {
            require(m.rows() == m.cols(), "SymmetricTensor: matrix must be square");
            SymmetricTensor t = zero(2, m.rows());
            MatrixType sym = (m + m.transpose()) / Scalar(2);
            t.data_ = Eigen::Map<const VectorType>(sym.data(), sym.size());
            return t;
        }

        /// Symmetrizes an arbitrary dense array of n^order entries (first index fastest).
        static SymmetricTensor from_dense(int order, Eigen::Index dim, const VectorType& raw)
        {
            SymmetricTensor t = zero(order, dim);
            require(raw.size() == t.data_.size(), "SymmetricTensor: raw array has wrong size");
            if (order == 1)
            {
                t.data_ = raw;
            }
            else if (order == 2)
            {
                Eigen::Map<const MatrixType> m(raw.data(), dim, dim);
                MatrixType sym = (m + m.transpose()) / Scalar(2);
                t.data_ = Eigen::Map<const VectorType>(sym.data(), sym.size());
            }
            else
            {
                // average once per sorted index triple, then scatter to every permutation
                for (Eigen::Index i = 0; i < dim; ++i)
                    for (Eigen::Index j = i; j < dim; ++j)
                        for (Eigen::Index k = j; k < dim; ++k)
                        {
                            const Scalar avg = (raw(index3(dim, i, j, k)) + raw(index3(dim, i, k, j))
                                              + raw(index3(dim, j, i, k)) + raw(index3(dim, j, k, i))
                                              + raw(index3(dim, k, i, j)) + raw(index3(dim, k, j, i))) / Scalar(6);
                            t.data_(index3(dim, i, j, k)) = avg;
                            t.data_(index3(dim, i, k, j)) = avg;
                            t.data_(index3(dim, j, i, k)) = avg;
                            t.data_(index3(dim, j, k, i)) = avg;
                            t.data_(index3(dim, k, i, j)) = avg;
                            t.data_(index3(dim, k, j, i)) = avg;
                        }
            }
            return t;
        }

        /// v (x) v (x) ... (x) v, `order` times.
        template<typename Derived>
        static SymmetricTensor rank_one(int order, const Eigen::MatrixBase<Derived>& v)
        {
            const Eigen::Index n = v.size();
            SymmetricTensor t = zero(order, n);
            if (order == 1)
                t.data_ = v;
            else if (order == 2)
            {
                MatrixType m = v * v.transpose();
                t.data_ = Eigen::Map<const VectorType>(m.data(), m.size());
            }
            else
            {
                VectorType raw(n * n * n);
                for (Eigen::Index k = 0; k < n; ++k)
                    for (Eigen::Index j = 0; j < n; ++j)
                        for (Eigen::Index i = 0; i < n; ++i)
                            raw(index3(n, i, j, k)) = v(i) * v(j) * v(k);
                return from_dense(3, n, raw);
            }
            return t;
        }

        /// Identity matrix viewed as an order-2 tensor.
        static SymmetricTensor identity(Eigen::Index dim)
        {
            return from_matrix(MatrixType::Identity(dim, dim));
        }

        int order() const { return order_; }
        Eigen::Index dim() const { return dim_; }
        const VectorType& data() const { return data_; }

        Scalar operator()(Eigen::Index i) const { return data_(i); }
        Scalar operator()(Eigen::Index i, Eigen::Index j) const { return data_(i + dim_ * j); }
        Scalar operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) const { return data_(index3(dim_, i, j, k)); }

        /// Order-1 view.
        const VectorType& as_vector() const
        {
            require(order_ == 1, "SymmetricTensor: as_vector needs order 1");
            return data_;
        }

        /// Order-2 view as an n x n matrix.
        ConstMatrixMap as_matrix() const
        {
            require(order_ == 2, "SymmetricTensor: as_matrix needs order 2");
            return ConstMatrixMap(data_.data(), dim_, dim_);
        }

        /// Order-3 slice T(:, :, k).
        ConstMatrixMap slice(Eigen::Index k) const
        {
            require(order_ == 3, "SymmetricTensor: slice needs order 3");
            return ConstMatrixMap(data_.data() + k * dim_ * dim_, dim_, dim_);
        }

        /// T[v]^order.
        template<typename Derived>
        Scalar apply(const Eigen::MatrixBase<Derived>& v) const
        {
            check_vector(v.size());
            switch (order_)
            {
            case 1:
                return data_.dot(v);
            case 2:
                return v.dot(as_matrix() * v);
            default:
                return v.dot(contract_matrix(v) * v);
            }
        }

        /// T[v]^times, a tensor of order (order - times). Requires 0 <= times < order.
        template<typename Derived>
        SymmetricTensor contract(const Eigen::MatrixBase<Derived>& v, int times) const
        {
            check_vector(v.size());
            require(times >= 0 && times < order_, "SymmetricTensor: contraction count out of range");
            if (times == 0)
                return *this;
            if (order_ == 2)
                return from_vector(as_matrix() * v);
            // order 3
            MatrixType m = contract_matrix(v);
            if (times == 1)
            {
                SymmetricTensor t = zero(2, dim_);
                t.data_ = Eigen::Map<const VectorType>(m.data(), m.size());
                return t;
            }
            return from_vector(m * v);
        }

        Scalar frobenius_norm() const { return data_.norm(); }

        SymmetricTensor& operator+=(const SymmetricTensor& other)
        {
            check_same(other);
            data_ += other.data_;
            return *this;
        }

        SymmetricTensor& operator-=(const SymmetricTensor& other)
        {
            check_same(other);
            data_ -= other.data_;
            return *this;
        }

        SymmetricTensor& operator*=(Scalar a)
        {
            data_ *= a;
            return *this;
        }

        friend SymmetricTensor operator+(SymmetricTensor a, const SymmetricTensor& b) { return a += b; }
        friend SymmetricTensor operator-(SymmetricTensor a, const SymmetricTensor& b) { return a -= b; }
        friend SymmetricTensor operator*(Scalar s, SymmetricTensor a) { return a *= s; }
        friend SymmetricTensor operator*(SymmetricTensor a, Scalar s) { return a *= s; }

        friend bool operator==(const SymmetricTensor& a, const SymmetricTensor& b)
        {
            return a.order_ == b.order_ && a.dim_ == b.dim_ && a.data_ == b.data_;
        }

        template<typename Other>
        SymmetricTensor<Other> cast() const
        {
            return SymmetricTensor<Other>::from_dense(order_, dim_, data_.template cast<Other>());
        }

    private:
        static Eigen::Index flat_size(int order, Eigen::Index dim)
        {
            Eigen::Index s = 1;
            for (int i = 0; i < order; ++i)
                s *= dim;
            return s;
        }

        static Eigen::Index index3(Eigen::Index n, Eigen::Index i, Eigen::Index j, Eigen::Index k)
        {
            return i + n * (j + n * k);
        }

        static void check_shape(int order, Eigen::Index dim)
        {
            require(order >= 1 && order <= kMaxOrder, "SymmetricTensor: order must be in 1..3");
            require(dim >= 1, "SymmetricTensor: dimension must be positive");
        }

        void check_vector(Eigen::Index n) const
        {
            require(n == dim_, "SymmetricTensor: vector dimension mismatch");
        }

        void check_same(const SymmetricTensor& other) const
        {
            require(order_ == other.order_ && dim_ == other.dim_, "SymmetricTensor: shape mismatch");
        }

        // sum_k v_k T(:, :, k)
        template<typename Derived>
        MatrixType contract_matrix(const Eigen::MatrixBase<Derived>& v) const
        {
            MatrixType m = MatrixType::Zero(dim_, dim_);
            for (Eigen::Index k = 0; k < dim_; ++k)
                m.noalias() += v(k) * slice(k);
            return m;
        }

        int order_ = 1;
        Eigen::Index dim_ = 0;
        VectorType data_;
    };

    enum class Provenance
    {
        exact,
        inexact
    };

    /// A point together with derivative tensors of orders 1..p evaluated there.
    template<typename Scalar>
    struct DerivativeBundle
    {
        Vector<Scalar> point;
        std::vector<SymmetricTensor<Scalar>> tensors; // tensors[l-1] has order l
        Provenance provenance = Provenance::exact;

        int degree() const { return static_cast<int>(tensors.size()); }
        Eigen::Index dim() const { return point.size(); }

        const SymmetricTensor<Scalar>& derivative(int order) const
        {
            require(order >= 1 && order <= degree(), "DerivativeBundle: order out of range");
            return tensors[static_cast<std::size_t>(order - 1)];
        }

        /// Checks tensors[l].order == l + 1 and matching dimensions.
        void validate() const
        {
            require(degree() >= 1 && degree() <= kMaxOrder, "DerivativeBundle: degree must be in 1..3");
            for (int l = 1; l <= degree(); ++l)
            {
                const auto& t = derivative(l);
                require(t.order() == l, "DerivativeBundle: tensor order does not match its slot");
                require(t.dim() == dim(), "DerivativeBundle: tensor dimension does not match the point");
            }
        }

        /// The first `degree` tensors.
        DerivativeBundle truncated(int degree_) const
        {
            require(degree_ >= 1 && degree_ <= degree(), "DerivativeBundle: truncation degree out of range");
            DerivativeBundle b{point, {tensors.begin(), tensors.begin() + degree_}, provenance};
            return b;
        }

        friend bool operator==(const DerivativeBundle& a, const DerivativeBundle& b)
        {
            return a.point == b.point && a.tensors == b.tensors && a.provenance == b.provenance;
        }
    };

    template<typename Scalar>
    DerivativeBundle<Scalar> make_bundle(Vector<Scalar> point, std::vector<SymmetricTensor<Scalar>> tensors,
                                         Provenance provenance = Provenance::exact)
    {
        DerivativeBundle<Scalar> b{std::move(point), std::move(tensors), provenance};
        b.validate();
        return b;
    }

    namespace detail
    {
        template<typename Scalar, typename Derived>
        Scalar taylor_increment(const DerivativeBundle<Scalar>& bundle, const Eigen::MatrixBase<Derived>& s)
        {
            require(s.size() == bundle.dim(), "taylor: step dimension does not match the bundle");
            Scalar sum(0);
            for (int l = 1; l <= bundle.degree(); ++l)
                sum += bundle.derivative(l).apply(s) / Scalar(factorial(l));
            return sum;
        }
    }

    /// base + sum_{l=1..p} T_l[s]^l / l!
    template<typename Scalar, typename Derived>
    Scalar taylor_value(const DerivativeBundle<Scalar>& bundle, Scalar base_value, const Eigen::MatrixBase<Derived>& s)
    {
        return base_value + detail::taylor_increment(bundle, s);
    }

    /// Decrease of the Taylor polynomial from 0 to s: -sum_{l=1..p} T_l[s]^l / l!
    template<typename Scalar, typename Derived>
    Scalar taylor_decrement(const DerivativeBundle<Scalar>& bundle, const Eigen::MatrixBase<Derived>& s)
    {
        return -detail::taylor_increment(bundle, s);
    }

    /// l-th derivative of the Taylor polynomial at offset s:
    /// sum_{t=l..p} T_t[s]^(t-l) / (t-l)!
    template<typename Scalar, typename Derived>
    SymmetricTensor<Scalar> shifted_derivative(const DerivativeBundle<Scalar>& bundle,
                                               const Eigen::MatrixBase<Derived>& s, int order)
    {
        require(order >= 1 && order <= bundle.degree(), "shifted_derivative: order out of range");
        require(s.size() == bundle.dim(), "shifted_derivative: step dimension does not match the bundle");
        SymmetricTensor<Scalar> result = bundle.derivative(order);
        for (int t = order + 1; t <= bundle.degree(); ++t)
            result += bundle.derivative(t).contract(s, t - order) * Scalar(1.0 / factorial(t - order));
        return result;
    }

    /// ||s||^(p+1)
    template<typename Derived>
    typename Derived::Scalar regularizer_value(const Eigen::MatrixBase<Derived>& s, int p)
    {
        using std::pow;
        return pow(s.norm(), typename Derived::Scalar(p + 1));
    }

    /// l-th derivative (l = 1 or 2) of ||s||^(p+1):
    ///   l = 1: (p+1) ||s||^(p-1) s
    ///   l = 2: (p+1) ||s||^(p-1) I + (p+1)(p-1) ||s||^(p-3) s s^T
    /// At s = 0 the continuous extension is returned (zero for p >= 2, 2I for p = 1 when l = 2).
    template<typename Derived>
    SymmetricTensor<typename Derived::Scalar> regularizer_derivative(const Eigen::MatrixBase<Derived>& s, int p, int order)
    {
        using Scalar = typename Derived::Scalar;
        using std::pow;
        require(p >= 1, "regularizer_derivative: p must be positive");
        require(order == 1 || order == 2, "regularizer_derivative: order must be 1 or 2");
        const Eigen::Index n = s.size();
        const Scalar r = s.norm();
        const Scalar pp1 = Scalar(p + 1);

        if (order == 1)
        {
            if (r == Scalar(0))
                return SymmetricTensor<Scalar>::zero(1, n);
            return SymmetricTensor<Scalar>::from_vector(pp1 * pow(r, Scalar(p - 1)) * s);
        }

        if (p == 1)
            return Scalar(2) * SymmetricTensor<Scalar>::identity(n);
        if (r == Scalar(0))
            return SymmetricTensor<Scalar>::zero(2, n);
        Matrix<Scalar> h = pp1 * pow(r, Scalar(p - 1)) * Matrix<Scalar>::Identity(n, n)
                         + pp1 * Scalar(p - 1) * pow(r, Scalar(p - 3)) * (s * s.transpose());
        return SymmetricTensor<Scalar>::from_matrix(h);
    }

    /// sum_{l=1..j} t^l / l!
    template<typename Scalar>
    Scalar chi(int j, Scalar t)
    {
        require(j >= 1, "chi: j must be positive");
        require(t >= Scalar(0), "chi: t must be nonnegative");
        Scalar term(1), sum(0);
        for (int l = 1; l <= j; ++l)
        {
            term *= t / Scalar(l);
            sum += term;
        }
        return sum;
    }

    namespace detail
    {
        // max_{||v|| = 1} T[v]^3 by the adaptively shifted power method: the update
        // v <- normalize(T[v]^2 + a v), a = max(0, tiny - 2 lambda_min(T[v])), followed by a Newton polish.
        template<typename Scalar>
        Scalar order3_norm(const SymmetricTensor<Scalar>& t, int starts)
        {
            using std::abs;
            using std::max;
            const Eigen::Index n = t.dim();
            const Scalar fro = t.frobenius_norm();
            if (fro == Scalar(0))
                return Scalar(0);
            const Scalar tiny = Scalar(1e-6) * fro;

            std::mt19937_64 gen(0x7e50c0de);
            std::normal_distribution<double> normal;
            Scalar best(0);
            Matrix<Scalar> tv(n, n);
            Vector<Scalar> v(n), w(n);
            Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(n);
            auto contract_once = [&](const Vector<Scalar>& x) {
                tv.setZero();
                for (Eigen::Index k = 0; k < n; ++k)
                    tv.noalias() += x(k) * t.slice(k);
            };
            for (int start = 0; start < starts; ++start)
            {
                if (start < n)
                    v = Vector<Scalar>::Unit(n, start);
                else
                    for (Eigen::Index i = 0; i < n; ++i)
                        v(i) = Scalar(normal(gen));
                v.normalize();
                // odd order: the maximum of |T[v]^3| equals the maximum of T[v]^3
                contract_once(v);
                Scalar value = v.dot(tv * v);
                if (value < Scalar(0))
                {
                    v = -v;
                    tv = -tv;
                    value = -value;
                }
                Scalar shift(0);
                for (int it = 0; it < 40; ++it)
                {
                    // the shift is refreshed every 8 steps to save eigensolves
                    if (it % 8 == 0)
                    {
                        es.compute(tv, Eigen::EigenvaluesOnly);
                        shift = max(Scalar(0), tiny - Scalar(2) * es.eigenvalues()(0));
                    }
                    w.noalias() = tv * v;
                    w += shift * v;
                    const Scalar wn = w.norm();
                    if (wn == Scalar(0))
                        break;
                    v = w / wn;
                    contract_once(v);
                    const Scalar next = v.dot(tv * v);
                    const Scalar gain = next - value;
                    value = next;
                    if (abs(gain) <= Scalar(1e-14) * (Scalar(1) + abs(value)))
                        break;
                }
                // Newton polish on T[v]^2 = lambda v, ||v|| = 1; kept only while it does not lose value
                Vector<Scalar> x = v;
                Matrix<Scalar> jac(n + 1, n + 1);
                Vector<Scalar> rhs(n + 1);
                for (int it = 0; it < 20; ++it)
                {
                    contract_once(x);
                    const Vector<Scalar> tx2 = tv * x;
                    const Scalar lambda = x.dot(tx2);
                    rhs.head(n) = -(tx2 - lambda * x);
                    rhs(n) = -(Scalar(1) - x.squaredNorm()) / Scalar(2);
                    if (rhs.norm() <= Scalar(1e-15) * (Scalar(1) + abs(lambda)))
                        break;
                    jac.topLeftCorner(n, n) = Scalar(2) * tv - lambda * Matrix<Scalar>::Identity(n, n);
                    jac.topRightCorner(n, 1) = -x;
                    jac.bottomLeftCorner(1, n) = -x.transpose();
                    jac(n, n) = Scalar(0);
                    const Vector<Scalar> delta = jac.fullPivLu().solve(rhs);
                    if (!delta.allFinite())
                        break;
                    x += delta.head(n);
                }
                const Scalar xn = x.norm();
                if (xn > Scalar(0) && x.allFinite())
                {
                    x /= xn;
                    const Scalar polished = t.apply(x);
                    if (polished >= value)
                        value = polished;
                }
                best = max(best, abs(value));
            }
            return best;
        }
    }

    /// Induced Euclidean norm max_{||v||=1} |T[v]^order|.
    /// Order 3 uses 16 deterministic multistart ascent runs and is meant for test oracles.
    template<typename Scalar>
    Scalar tensor_norm(const SymmetricTensor<Scalar>& t, int starts = 16)
    {
        using std::abs;
        switch (t.order())
        {
        case 1:
            return t.as_vector().norm();
        case 2:
        {
            Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(t.as_matrix(), Eigen::EigenvaluesOnly);
            if (es.info() != Eigen::Success)
                throw NumericalError("tensor_norm: eigensolver failed");
            return std::max(abs(es.eigenvalues()(0)), abs(es.eigenvalues()(t.dim() - 1)));
        }
        default:
            return detail::order3_norm(t, starts);
        }
    }
}
