#pragma once
// Independent reference computations used by the tests. Nothing here calls into the
// library's numerical kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "sncbf/linalg.hpp"
#include "sncbf/net.hpp"

namespace oracle {

using sncbf::Matrix;
using sncbf::NetParams;
using sncbf::Vec;

// Hand-rolled generator for property tests.
struct Gen {
    std::mt19937_64 eng;
    explicit Gen(std::uint64_t seed) : eng(seed) {}
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng); }
    double normal(double s = 1.0) { return std::normal_distribution<double>(0.0, s)(eng); }
    std::size_t pick(std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(eng);
    }
    Vec vec(std::size_t n, double lo, double hi) {
        Vec v(n);
        for (double& x : v) x = uniform(lo, hi);
        return v;
    }
    NetParams net(std::size_t n, std::size_t p, double scale = 1.0) {
        NetParams P(n, p);
        for (std::size_t j = 0; j < p; ++j) {
            for (std::size_t k = 0; k < n; ++k) P.theta0(j, k) = normal(scale);
            P.b0[j] = normal(0.5 * scale);
            P.theta1[j] = normal(scale / std::sqrt(double(p)));
        }
        P.b1 = normal(0.1);
        return P;
    }
    Matrix spd(std::size_t n) {
        Matrix A(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k) A(i, k) = normal();
        Matrix S = A * A.transpose();
        for (std::size_t i = 0; i < n; ++i) S(i, i) += 0.5;
        return S;
    }
};

// Determinant by Gaussian elimination with partial pivoting.
inline double lu_determinant(Matrix A) {
    const std::size_t n = A.rows();
    double det = 1.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::fabs(A(r, c)) > std::fabs(A(piv, c))) piv = r;
        if (A(piv, c) == 0.0) return 0.0;
        if (piv != c) {
            for (std::size_t k = 0; k < n; ++k) std::swap(A(c, k), A(piv, k));
            det = -det;
        }
        det *= A(c, c);
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = A(r, c) / A(c, c);
            for (std::size_t k = c; k < n; ++k) A(r, k) -= f * A(c, k);
        }
    }
    return det;
}

// Sylvester's criterion on leading principal minors.
inline bool pd_by_minors(const Matrix& A) {
    for (std::size_t k = 1; k <= A.rows(); ++k) {
        Matrix S(k, k);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) S(i, j) = A(i, j);
        if (!(lu_determinant(S) > 0.0)) return false;
    }
    return true;
}

// Direct evaluation of h with std::log(1 + exp(z)) in long double.
inline long double value_ld(const NetParams& P, const Vec& x) {
    long double h = P.b1;
    for (std::size_t j = 0; j < P.p; ++j) {
        long double z = P.b0[j];
        for (std::size_t k = 0; k < P.n; ++k) z += (long double)P.theta0(j, k) * x[k];
        const long double sp = z > 30 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        h += (long double)P.theta1[j] * sp;
    }
    return h;
}

inline double value(const NetParams& P, const Vec& x) { return (double)value_ld(P, x); }

// Central-difference gradient of the value.
inline Vec fd_jac(const NetParams& P, const Vec& x, double step = 1e-5) {
    Vec g(P.n);
    for (std::size_t k = 0; k < P.n; ++k) {
        Vec xp = x, xm = x;
        xp[k] += step;
        xm[k] -= step;
        g[k] = (double)((value_ld(P, xp) - value_ld(P, xm)) / (2.0L * step));
    }
    return g;
}

// Central second difference of the value along each axis, weighted by sigma_k^2.
inline double fd_hess_trace(const NetParams& P, const Vec& x, const Vec& sigma, double step = 1e-4) {
    const long double h0 = value_ld(P, x);
    long double tr = 0;
    for (std::size_t k = 0; k < P.n; ++k) {
        Vec xp = x, xm = x;
        xp[k] += step;
        xm[k] -= step;
        const long double d2 = (value_ld(P, xp) - 2 * h0 + value_ld(P, xm)) / ((long double)step * step);
        tr += (long double)sigma[k] * sigma[k] * d2;
    }
    return (double)tr;
}

inline double rel_err(double a, double b, double floor = 1e-9) {
    return std::fabs(a - b) / std::max(std::fabs(b), floor);
}

// Central differences of an arbitrary scalar function of a flat vector.
template <typename F>
Vec fd_gradient(F&& f, const Vec& v, double step) {
    Vec g(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        Vec p = v, m = v;
        p[i] += step;
        m[i] -= step;
        g[i] = (f(p) - f(m)) / (2 * step);
    }
    return g;
}

}  // namespace oracle
