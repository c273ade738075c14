#include "sncbf/lipcert.hpp"

#include <algorithm>
#include <cmath>

namespace sncbf {

SlopeBounds slope_bounds(CertLevel level) {
    switch (level) {
        case CertLevel::Value:
            return {0.0, 1.0};
        case CertLevel::Jacobian:
            return {0.0, 0.25};
        case CertLevel::HessianTrace: {
            const double b = 1.0 / (6.0 * std::sqrt(3.0));
            return {-b, b};
        }
    }
    return {0.0, 1.0};
}

double LipschitzBudget::L_max_formula() const { return std::max(L_h, L_h + L_dh * L_x + L_d2h); }

double LipschitzBudget::L_max() const { return L_max_override ? *L_max_override : L_max_formula(); }

void LipschitzBudget::check() const {
    if (!(L_h > 0 && L_dh > 0 && L_d2h > 0 && L_x >= 0 && eps_bar > 0 && delta > 0))
        throw std::invalid_argument("LipschitzBudget: bounds must be positive");
    if (L_max_override && !(*L_max_override > 0))
        throw std::invalid_argument("LipschitzBudget: L_max_override must be positive");
}

Matrix build_M_single_layer(const Matrix& W, const Matrix& V, const Vec& lam, double L, SlopeBounds s) {
    const std::size_t p = W.rows(), n = W.cols(), o = V.rows();
    if (V.cols() != p || lam.size() != p) throw DimensionMismatch("build_M_single_layer: dimensions");
    const std::size_t N = n + p + o;
    Matrix M(N, N);
    const double ab2 = 2.0 * s.alpha * s.beta;
    const double apb = s.alpha + s.beta;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a; b < n; ++b) {
            double acc = 0.0;
            for (std::size_t j = 0; j < p; ++j) acc += lam[j] * W(j, a) * W(j, b);
            double v = ab2 * acc;
            if (a == b) v += L * L;
            M(a, b) = v;
            M(b, a) = v;
        }
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t j = 0; j < p; ++j) {
            const double v = -apb * W(j, a) * lam[j];
            M(a, n + j) = v;
            M(n + j, a) = v;
        }
    for (std::size_t j = 0; j < p; ++j) M(n + j, n + j) = 2.0 * lam[j];
    for (std::size_t c = 0; c < o; ++c) {
        for (std::size_t j = 0; j < p; ++j) {
            const double v = -V(c, j);
            M(n + j, n + p + c) = v;
            M(n + p + c, n + j) = v;
        }
        M(n + p + c, n + p + c) = 1.0;
    }
    return M;
}

bool CertificateReport::all_pass() const {
    return std::all_of(entries.begin(), entries.end(), [](const CertificateEntry& e) { return e.pd_pass; });
}

namespace {

Vec exp_vec(const Vec& l) {
    Vec r(l.size());
    std::transform(l.begin(), l.end(), r.begin(), [](double v) { return std::exp(v); });
    return r;
}

Matrix row_matrix(const Vec& v) { return Matrix(1, v.size(), v); }

}  // namespace

std::array<Matrix, 3> certificate_matrices(const NetParams& P, const Vec& sigma, const LipschitzBudget& budget,
                                           const LambdaLogs& ll) {
    P.check();
    for (const auto& l : ll)
        if (l.size() != P.p) throw DimensionMismatch("certificate_matrices: Lambda size");
    const EffectiveWeights ew = effective_weights(P, sigma);
    return {build_M_single_layer(P.theta0, row_matrix(P.theta1), exp_vec(ll[0]), budget.L_h,
                                 slope_bounds(CertLevel::Value)),
            build_M_single_layer(P.theta0, ew.theta_hat1, exp_vec(ll[1]), budget.L_dh,
                                 slope_bounds(CertLevel::Jacobian)),
            build_M_single_layer(P.theta0, row_matrix(ew.theta_bar1), exp_vec(ll[2]), budget.L_d2h,
                                 slope_bounds(CertLevel::HessianTrace))};
}

CertificateReport certify(const NetParams& P, const Vec& sigma, const LipschitzBudget& budget,
                          const LambdaLogs& ll) {
    const auto Ms = certificate_matrices(P, sigma, budget, ll);
    static const char* names[3] = {"h", "dh", "d2h"};
    const double Ls[3] = {budget.L_h, budget.L_dh, budget.L_d2h};
    const CertLevel levels[3] = {CertLevel::Value, CertLevel::Jacobian, CertLevel::HessianTrace};
    CertificateReport rep;
    for (int i = 0; i < 3; ++i) {
        CertificateEntry& e = rep.entries[i];
        e.name = names[i];
        e.L_bound = Ls[i];
        e.slopes = slope_bounds(levels[i]);
        const LogDetResult r = log_det_pd(Ms[i]);
        e.pd_pass = r.ok;
        e.min_pivot = r.min_pivot;
        if (r.ok) e.log_det = r.value;
    }
    return rep;
}

namespace {

struct BlockGrads {
    Matrix gW;  // p x n
    Matrix gV;  // o x p
    Vec glam;   // p, with respect to Lambda entries
};

// Gradient of log det M with respect to W, V and Lambda given Q = M^{-1}.
BlockGrads logdet_grads(const Matrix& Q, const Matrix& W, std::size_t o, const Vec& lam, SlopeBounds s) {
    const std::size_t p = W.rows(), n = W.cols();
    const double ab = s.alpha * s.beta;
    const double apb = s.alpha + s.beta;
    BlockGrads g{Matrix(p, n), Matrix(o, p), Vec(p, 0.0)};
    for (std::size_t j = 0; j < p; ++j) {
        double quad = 0.0, cross = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            double wq = 0.0;
            for (std::size_t m = 0; m < n; ++m) wq += W(j, m) * Q(m, k);
            quad += wq * W(j, k);
            cross += Q(n + j, k) * W(j, k);
            g.gW(j, k) = 4.0 * ab * lam[j] * wq - 2.0 * apb * lam[j] * Q(n + j, k);
        }
        g.glam[j] = 2.0 * ab * quad - 2.0 * apb * cross + 2.0 * Q(n + j, n + j);
        for (std::size_t c = 0; c < o; ++c) g.gV(c, j) = -2.0 * Q(n + j, n + p + c);
    }
    return g;
}

}  // namespace

BarrierResult barrier_loss_and_grad(const NetParams& P, const Vec& sigma, const LipschitzBudget& budget,
                                    const LambdaLogs& ll, const std::array<double, 3>& coeffs) {
    const auto Ms = certificate_matrices(P, sigma, budget, ll);
    const CertLevel levels[3] = {CertLevel::Value, CertLevel::Jacobian, CertLevel::HessianTrace};
    const std::size_t n = P.n, p = P.p;
    BarrierResult res;
    res.grad_params.assign(P.num_params(), 0.0);
    double* g_theta0 = res.grad_params.data();
    double* g_theta1 = g_theta0 + p * n + p;

    for (int i = 0; i < 3; ++i) {
        const CholeskyResult ch = cholesky(Ms[i]);
        if (!ch.ok) {
            res.feasible = false;
            return res;
        }
        double ld = 0.0;
        for (std::size_t r = 0; r < Ms[i].rows(); ++r) ld += std::log(ch.factor(r, r));
        res.log_dets[i] = 2.0 * ld;
        res.loss -= coeffs[i] * res.log_dets[i];

        const Matrix Q = cholesky_inverse(ch.factor);
        const Vec lam = exp_vec(ll[i]);
        const std::size_t o = (i == 1) ? n : 1;
        const BlockGrads g = logdet_grads(Q, P.theta0, o, lam, slope_bounds(levels[i]));
        const double c = -coeffs[i];

        for (std::size_t j = 0; j < p; ++j)
            for (std::size_t k = 0; k < n; ++k) g_theta0[j * n + k] += c * g.gW(j, k);
        res.grad_lambda[i].assign(p, 0.0);
        for (std::size_t j = 0; j < p; ++j) res.grad_lambda[i][j] = c * g.glam[j] * lam[j];

        // Chain the output-map gradient into theta0 / theta1.
        for (std::size_t j = 0; j < p; ++j) {
            if (i == 0) {
                g_theta1[j] += c * g.gV(0, j);
            } else if (i == 1) {
                // theta_hat1[k][j] = theta0[j][k] * theta1[j]
                for (std::size_t k = 0; k < n; ++k) {
                    g_theta0[j * n + k] += c * g.gV(k, j) * P.theta1[j];
                    g_theta1[j] += c * g.gV(k, j) * P.theta0(j, k);
                }
            } else {
                // theta_bar1[j] = theta1[j] * sum_k sigma_k^2 theta0[j][k]^2
                double s = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    s += sigma[k] * sigma[k] * P.theta0(j, k) * P.theta0(j, k);
                    g_theta0[j * n + k] += c * g.gV(0, j) * P.theta1[j] * 2.0 * sigma[k] * sigma[k] * P.theta0(j, k);
                }
                g_theta1[j] += c * g.gV(0, j) * s;
            }
        }
    }
    res.feasible = true;
    return res;
}

}  // namespace sncbf
