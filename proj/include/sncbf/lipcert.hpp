#pragma once

#include <array>
#include <optional>
#include <string>

#include "sncbf/linalg.hpp"
#include "sncbf/net.hpp"

namespace sncbf {

struct SlopeBounds {
    double alpha;
    double beta;
};

enum class CertLevel { Value, Jacobian, HessianTrace };

SlopeBounds slope_bounds(CertLevel level);

struct LipschitzBudget {
    double L_h = 1.0;
    double L_dh = 1.0;
    double L_d2h = 1.0;
    double L_x = 1.0;
    double eps_bar = 0.02;
    double delta = 1e-3;
    std::optional<double> L_max_override;

    // max(L_h, L_h + L_dh*L_x + L_d2h) unless overridden.
    double L_max_formula() const;
    double L_max() const;
    void check() const;
};

using LambdaLogs = std::array<Vec, 3>;  // Lambda = diag(exp(l)) for h, dh, d2h

// [[L^2 I + 2ab W^T Lam W, -(a+b) W^T Lam, 0], [-(a+b) Lam W, 2 Lam, -V^T], [0, -V, I]]
// with W = theta0 (p x n) and V = theta_out (out x p).
Matrix build_M_single_layer(const Matrix& theta0, const Matrix& theta_out, const Vec& lambda_diag, double L,
                            SlopeBounds slopes);

struct CertificateEntry {
    std::string name;
    double L_bound = 0.0;
    bool pd_pass = false;
    std::optional<double> log_det;
    double min_pivot = 0.0;
    SlopeBounds slopes{0.0, 0.0};
};

struct CertificateReport {
    std::array<CertificateEntry, 3> entries;
    bool all_pass() const;
};

// The three certificate matrices for (theta0, theta1), (theta0, theta_hat1), (theta0, theta_bar1).
std::array<Matrix, 3> certificate_matrices(const NetParams& params, const Vec& sigma, const LipschitzBudget& budget,
                                           const LambdaLogs& lambda_logs);

CertificateReport certify(const NetParams& params, const Vec& sigma, const LipschitzBudget& budget,
                          const LambdaLogs& lambda_logs);

struct BarrierResult {
    bool feasible = false;
    double loss = 0.0;
    std::array<double, 3> log_dets{0.0, 0.0, 0.0};
    Vec grad_params;                 // layout of NetParams::flatten()
    std::array<Vec, 3> grad_lambda;  // with respect to the Lambda logs
};

// loss = -sum_i c_i log det M_i; infeasible when any M_i is not PD.
BarrierResult barrier_loss_and_grad(const NetParams& params, const Vec& sigma, const LipschitzBudget& budget,
                                    const LambdaLogs& lambda_logs, const std::array<double, 3>& coeffs);

}  // namespace sncbf
