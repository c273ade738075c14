#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sncbf/linalg.hpp"

namespace sncbf {

using Vec = std::vector<double>;

enum class Activation { Softplus };

struct ActivationChain {
    double phi;
    double phi1;
    double phi2;
    double phi3;
};

// Softplus and its first three derivatives.
ActivationChain activation_chain(double z);

// h(x) = theta1 . phi(theta0 x + b0) + b1
struct NetParams {
    std::size_t n = 0;
    std::size_t p = 0;
    Matrix theta0;  // p x n
    Vec b0;         // p
    Vec theta1;     // p
    double b1 = 0.0;
    Activation activation = Activation::Softplus;

    NetParams() = default;
    NetParams(std::size_t n_, std::size_t p_);

    void check() const;
    bool all_finite() const;
    std::size_t num_params() const { return p * n + 2 * p + 1; }

    // Flat view: theta0 (row-major), b0, theta1, b1.
    Vec flatten() const;
    void unflatten(const Vec& flat);
};

struct NetOutputs {
    double value = 0.0;
    Vec jac;             // dh/dx
    double hess_trace = 0.0;  // tr(sigma^T H sigma)
    Vec preactivation;
};

// sigma is the diagonal of the (diagonal) diffusion matrix.
NetOutputs forward(const NetParams& params, const Vec& x, const Vec& sigma);
// Allocation-free variant for hot loops; out's buffers are reused.
void forward_into(const NetParams& params, const double* x, const Vec& sigma, NetOutputs& out);

struct EffectiveWeights {
    Matrix theta_hat1;  // n x p
    Vec theta_bar1;     // p
};

EffectiveWeights effective_weights(const NetParams& params, const Vec& sigma);

// Output of the Jacobian network x -> theta_hat1 phi'(theta0 x + b0).
Vec jacobian_head(const NetParams& params, const EffectiveWeights& ew, const Vec& x);
// Output of the Hessian-trace network x -> theta_bar1 . phi''(theta0 x + b0).
double hessian_head(const NetParams& params, const EffectiveWeights& ew, const Vec& x);

struct OutputWeights {
    double w_val = 0.0;
    Vec w_jac;  // n
    double w_hess = 0.0;
};

// Gradient of w_val*value + w_jac.jac + w_hess*hess_trace with respect to every
// parameter, laid out like NetParams::flatten().
Vec param_gradients(const NetParams& params, const Vec& x, const Vec& sigma, const OutputWeights& w);

// Same as param_gradients but accumulates scale * gradient into grad.
void accumulate_param_gradients(const NetParams& params, const Vec& x, const Vec& sigma,
                                const OutputWeights& w, double scale, Vec& grad);

}  // namespace sncbf
