#include "sncbf/net.hpp"

#include <cmath>

namespace sncbf {

ActivationChain activation_chain(double z) {
    ActivationChain c{};
    if (z > 30.0) {
        const double e = std::exp(-z);
        c.phi = z + std::log1p(e);
        c.phi1 = 1.0 / (1.0 + e);
    } else {
        const double e = std::exp(z);
        c.phi = std::log1p(e);
        c.phi1 = e / (1.0 + e);
    }
    c.phi2 = c.phi1 * (1.0 - c.phi1);
    c.phi3 = c.phi2 * (1.0 - 2.0 * c.phi1);
    return c;
}

NetParams::NetParams(std::size_t n_, std::size_t p_)
    : n(n_), p(p_), theta0(p_, n_), b0(p_, 0.0), theta1(p_, 0.0) {}

void NetParams::check() const {
    if (theta0.rows() != p || theta0.cols() != n || b0.size() != p || theta1.size() != p)
        throw DimensionMismatch("NetParams: inconsistent dimensions");
}

bool NetParams::all_finite() const {
    if (!theta0.all_finite() || !std::isfinite(b1)) return false;
    for (double v : b0)
        if (!std::isfinite(v)) return false;
    for (double v : theta1)
        if (!std::isfinite(v)) return false;
    return true;
}

Vec NetParams::flatten() const {
    Vec f;
    f.reserve(num_params());
    f.insert(f.end(), theta0.data().begin(), theta0.data().end());
    f.insert(f.end(), b0.begin(), b0.end());
    f.insert(f.end(), theta1.begin(), theta1.end());
    f.push_back(b1);
    return f;
}

void NetParams::unflatten(const Vec& flat) {
    if (flat.size() != num_params()) throw DimensionMismatch("NetParams::unflatten: size");
    std::size_t o = 0;
    for (std::size_t i = 0; i < p * n; ++i) theta0.data()[i] = flat[o++];
    for (std::size_t j = 0; j < p; ++j) b0[j] = flat[o++];
    for (std::size_t j = 0; j < p; ++j) theta1[j] = flat[o++];
    b1 = flat[o];
}

NetOutputs forward(const NetParams& P, const Vec& x, const Vec& sigma) {
    if (x.size() != P.n) throw DimensionMismatch("forward: x size");
    NetOutputs out;
    forward_into(P, x.data(), sigma, out);
    return out;
}

void forward_into(const NetParams& P, const double* x, const Vec& sigma, NetOutputs& out) {
    if (sigma.size() != P.n) throw DimensionMismatch("forward: sigma size");
    out.jac.assign(P.n, 0.0);
    out.preactivation.resize(P.p);
    double value = P.b1;
    double ht = 0.0;
    for (std::size_t j = 0; j < P.p; ++j) {
        const double* row = &P.theta0.data()[j * P.n];
        double a = P.b0[j];
        for (std::size_t k = 0; k < P.n; ++k) a += row[k] * x[k];
        out.preactivation[j] = a;
        const ActivationChain c = activation_chain(a);
        const double t = P.theta1[j];
        value += t * c.phi;
        const double tj = t * c.phi1;
        double s = 0.0;
        for (std::size_t k = 0; k < P.n; ++k) {
            out.jac[k] += tj * row[k];
            s += sigma[k] * sigma[k] * row[k] * row[k];
        }
        ht += t * c.phi2 * s;
    }
    out.value = value;
    out.hess_trace = ht;
}

EffectiveWeights effective_weights(const NetParams& P, const Vec& sigma) {
    P.check();
    if (sigma.size() != P.n) throw DimensionMismatch("effective_weights: sigma size");
    EffectiveWeights ew;
    ew.theta_hat1 = Matrix(P.n, P.p);
    ew.theta_bar1.assign(P.p, 0.0);
    for (std::size_t j = 0; j < P.p; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < P.n; ++k) {
            const double w = P.theta0(j, k);
            ew.theta_hat1(k, j) = w * P.theta1[j];
            s += sigma[k] * sigma[k] * w * w;
        }
        ew.theta_bar1[j] = P.theta1[j] * s;
    }
    return ew;
}

Vec jacobian_head(const NetParams& P, const EffectiveWeights& ew, const Vec& x) {
    Vec y(P.n, 0.0);
    for (std::size_t j = 0; j < P.p; ++j) {
        double a = P.b0[j];
        for (std::size_t k = 0; k < P.n; ++k) a += P.theta0(j, k) * x[k];
        const double d = activation_chain(a).phi1;
        for (std::size_t k = 0; k < P.n; ++k) y[k] += ew.theta_hat1(k, j) * d;
    }
    return y;
}

double hessian_head(const NetParams& P, const EffectiveWeights& ew, const Vec& x) {
    double y = 0.0;
    for (std::size_t j = 0; j < P.p; ++j) {
        double a = P.b0[j];
        for (std::size_t k = 0; k < P.n; ++k) a += P.theta0(j, k) * x[k];
        y += ew.theta_bar1[j] * activation_chain(a).phi2;
    }
    return y;
}

void accumulate_param_gradients(const NetParams& P, const Vec& x, const Vec& sigma, const OutputWeights& w,
                                double scale, Vec& grad) {
    const std::size_t n = P.n, p = P.p;
    if (x.size() != n || sigma.size() != n || w.w_jac.size() != n || grad.size() != P.num_params())
        throw DimensionMismatch("param_gradients: sizes");
    double* g_theta0 = grad.data();
    double* g_b0 = g_theta0 + p * n;
    double* g_theta1 = g_b0 + p;
    double* g_b1 = g_theta1 + p;
    for (std::size_t j = 0; j < p; ++j) {
        const double* row = &P.theta0.data()[j * n];
        double a = P.b0[j];
        double cj = 0.0, sj = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            a += row[k] * x[k];
            cj += w.w_jac[k] * row[k];
            sj += sigma[k] * sigma[k] * row[k] * row[k];
        }
        const ActivationChain c = activation_chain(a);
        const double t = P.theta1[j];
        g_theta1[j] += scale * (w.w_val * c.phi + c.phi1 * cj + w.w_hess * c.phi2 * sj);
        const double dj = t * (w.w_val * c.phi1 + c.phi2 * cj + w.w_hess * c.phi3 * sj);
        g_b0[j] += scale * dj;
        for (std::size_t k = 0; k < n; ++k)
            g_theta0[j * n + k] += scale * (dj * x[k] + t * c.phi1 * w.w_jac[k] +
                                            2.0 * w.w_hess * t * c.phi2 * sigma[k] * sigma[k] * row[k]);
    }
    *g_b1 += scale * w.w_val;
}

Vec param_gradients(const NetParams& P, const Vec& x, const Vec& sigma, const OutputWeights& w) {
    Vec g(P.num_params(), 0.0);
    accumulate_param_gradients(P, x, sigma, w, 1.0, g);
    return g;
}

}  // namespace sncbf
