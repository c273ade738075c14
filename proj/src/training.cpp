#include "sncbf/training.hpp"

#include <cmath>
#include <numeric>
#include <thread>

namespace sncbf {

void TrainConfig::check() const {
    budget.check();
    if (!(lambda1 > 0 && lambda2 > 0)) throw std::invalid_argument("TrainConfig: lambda1/lambda2 must be positive");
    for (double c : c_l)
        if (!(c > 0)) throw std::invalid_argument("TrainConfig: c_l must be positive");
    if (!(lr_theta > 0 && lr_lambda > 0 && lr_psi > 0))
        throw std::invalid_argument("TrainConfig: learning rates must be positive");
    if (batch_size == 0 || hidden_dim == 0) throw std::invalid_argument("TrainConfig: batch_size/hidden_dim zero");
    if (loss_theta_tol < 0 || v_tol < 0 || validity_target < 0 || qp_margin < 0)
        throw std::invalid_argument("TrainConfig: tolerances must be non-negative");
}

void Adam::step(Vec& x, const Vec& g, double lr, double b1, double b2, double eps) {
    if (m.size() != x.size()) resize(x.size());
    ++t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
}

SampleController training_controller(const TrainConfig& cfg) {
    SampleController c;
    c.filtered = true;
    c.margin = cfg.qp_margin;
    c.on_infeasible = SampleController::OnInfeasible::UseReference;
    return c;
}

namespace {

struct ChunkSums {
    double s1 = 0, s2 = 0, s3 = 0;
    std::size_t a1 = 0, a2 = 0, a3 = 0;
    Vec grad;
};

template <typename F>
void run_chunks(std::size_t chunks, std::size_t workers, F&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, chunks));
    if (workers == 1) {
        for (std::size_t c = 0; c < chunks; ++c) fn(c);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w]() {
            for (std::size_t c = w; c < chunks; c += workers) fn(c);
        });
    for (auto& t : pool) t.join();
}

}  // namespace

LossTerms scenario_losses(const NetParams& params, double psi, const ScenarioData& data,
                          const std::vector<std::size_t>& indices, const SampleController& ctrl,
                          const SystemModel& model, const LipschitzBudget& budget, double gamma, double lambda1,
                          double lambda2, std::size_t workers) {
    if (data.size() == 0) throw std::invalid_argument("scenario_losses: empty data");
    std::vector<std::size_t> all;
    const std::vector<std::size_t>* idx = &indices;
    if (indices.empty()) {
        all.resize(data.size());
        std::iota(all.begin(), all.end(), 0);
        idx = &all;
    }
    std::size_t NS = 0, NU = 0;
    for (std::size_t i : *idx) {
        NS += data.in_S[i];
        NU += data.in_U[i];
    }
    const std::size_t ND = idx->size();
    const double wS = NS ? 1.0 / static_cast<double>(NS) : 0.0;
    const double wU = NU ? lambda1 / static_cast<double>(NU) : 0.0;
    const double wD = lambda2 / static_cast<double>(ND);
    const std::size_t P = params.num_params();
    const std::size_t n = model.n, m = model.m;

    constexpr std::size_t kChunk = 64;
    const std::size_t chunks = (ND + kChunk - 1) / kChunk;
    std::vector<ChunkSums> parts(chunks);
    run_chunks(chunks, workers, [&](std::size_t c) {
        ChunkSums& cs = parts[c];
        cs.grad.assign(P, 0.0);
        SampleEval ev;
        OutputWeights w;
        w.w_jac.assign(n, 0.0);
        Vec x(n);
        const std::size_t end = std::min(ND, (c + 1) * kChunk);
        for (std::size_t t = c * kChunk; t < end; ++t) {
            const std::size_t i = (*idx)[t];
            const double* xp = data.point(i);
            evaluate_sample(params, model, xp, ctrl, gamma, budget.delta, ev);
            w.w_val = 0.0;
            w.w_hess = 0.0;
            std::fill(w.w_jac.begin(), w.w_jac.end(), 0.0);
            bool any = false;
            if (data.in_S[i] && ev.q1 - psi > 0.0) {
                cs.s1 += ev.q1 - psi;
                ++cs.a1;
                w.w_val -= wS;
                any = true;
            }
            if (data.in_U[i] && ev.q2 - psi > 0.0) {
                cs.s2 += ev.q2 - psi;
                ++cs.a2;
                w.w_val += wU;
                any = true;
            }
            if (ev.q3 - psi > 0.0) {
                cs.s3 += ev.q3 - psi;
                ++cs.a3;
                // On the projected branch q3 = -margin does not depend on the parameters.
                const bool projected = ctrl.filtered && ev.filter.status == FilterStatus::Projected;
                if (!projected) {
                    w.w_val -= wD * gamma;
                    w.w_hess -= wD * 0.5;
                    for (std::size_t k = 0; k < n; ++k) {
                        double v = ev.f[k];
                        for (std::size_t j = 0; j < m; ++j) v += ev.g[k * m + j] * ev.u[j];
                        w.w_jac[k] -= wD * v;
                    }
                    any = true;
                }
            }
            if (any) {
                x.assign(xp, xp + n);
                accumulate_param_gradients(params, x, model.sigma, w, 1.0, cs.grad);
            }
        }
    });

    LossTerms lt;
    lt.grad.assign(P, 0.0);
    double s1 = 0, s2 = 0, s3 = 0;
    std::size_t a1 = 0, a2 = 0, a3 = 0;
    for (const ChunkSums& cs : parts) {
        s1 += cs.s1;
        s2 += cs.s2;
        s3 += cs.s3;
        a1 += cs.a1;
        a2 += cs.a2;
        a3 += cs.a3;
        for (std::size_t k = 0; k < P; ++k) lt.grad[k] += cs.grad[k];
    }
    lt.L1 = NS ? s1 / static_cast<double>(NS) : 0.0;
    lt.L2 = NU ? s2 / static_cast<double>(NU) : 0.0;
    lt.L3 = s3 / static_cast<double>(ND);
    lt.total = lt.L1 + lambda1 * lt.L2 + lambda2 * lt.L3;
    lt.dpsi = -(wS * static_cast<double>(a1) + wU * static_cast<double>(a2) + wD * static_cast<double>(a3));
    return lt;
}

ValidityLoss validity_loss(double psi, const LipschitzBudget& budget) {
    const double margin = budget.L_max() * budget.eps_bar + psi;
    ValidityLoss v;
    if (margin > 0.0) {
        v.Lv = margin;
        v.dpsi = 1.0;
    }
    return v;
}

bool certificates_feasible(const TrainState& s, const SystemModel& model, const LipschitzBudget& budget) {
    const auto Ms = certificate_matrices(s.params, model.sigma, budget, s.lambda_logs);
    for (const Matrix& M : Ms)
        if (!cholesky(M).ok) return false;
    return true;
}

TrainState initial_state(const SystemModel& model, const TrainConfig& cfg) {
    const std::size_t n = model.n, p = cfg.hidden_dim;
    Rng rng(cfg.seed);
    TrainState s;
    s.params = NetParams(n, p);
    const double s0 = 1.0 / std::sqrt(static_cast<double>(n));
    const double s1 = 1.0 / std::sqrt(static_cast<double>(p));
    for (double& v : s.params.theta0.data()) v = rng.uniform(-1.0, 1.0) * s0;
    for (double& v : s.params.theta1) v = rng.uniform(-1.0, 1.0) * s1;
    for (auto& l : s.lambda_logs) l.assign(p, 0.0);
    for (int it = 0; it < 200 && !certificates_feasible(s, model, cfg.budget); ++it) {
        s.params.theta0 *= 0.7;
        for (double& v : s.params.theta1) v *= 0.7;
    }
    s.adam_theta.resize(s.params.num_params());
    s.adam_lambda.resize(3 * p);
    s.adam_psi.resize(1);
    return s;
}

RecoveryOutcome barrier_recovery(const TrainState& state, const TrainState& last_feasible, const SystemModel& model,
                                 const LipschitzBudget& budget, double lr_theta) {
    RecoveryOutcome r;
    if (certificates_feasible(state, model, budget)) {
        r.state = state;
        r.lr_theta = lr_theta;
        return r;
    }
    r.state = state;
    r.state.params = last_feasible.params;
    r.state.lambda_logs = last_feasible.lambda_logs;
    r.state.adam_theta = last_feasible.adam_theta;
    r.state.adam_lambda = last_feasible.adam_lambda;
    r.restored = true;
    r.lr_theta = 0.5 * lr_theta;
    return r;
}

namespace {

Vec flatten_lambdas(const LambdaLogs& ll) {
    Vec v;
    for (const auto& l : ll) v.insert(v.end(), l.begin(), l.end());
    return v;
}

void unflatten_lambdas(const Vec& v, LambdaLogs& ll) {
    std::size_t o = 0;
    for (auto& l : ll)
        for (double& x : l) x = v[o++];
}

// Copy without the history log.
TrainState core_copy(const TrainState& s) {
    TrainState c;
    c.params = s.params;
    c.psi = s.psi;
    c.lambda_logs = s.lambda_logs;
    c.adam_theta = s.adam_theta;
    c.adam_lambda = s.adam_lambda;
    c.adam_psi = s.adam_psi;
    c.epoch = s.epoch;
    c.psi_star = s.psi_star;
    return c;
}

SOPResult sync_sop(const TrainState& st, const SystemModel& model, const ScenarioData& data,
                   const SampleController& ctrl, const TrainConfig& cfg) {
    if (data.fine) return stream_verify(st.params, model, *data.fine, ctrl, cfg.budget, cfg.gamma, cfg.workers);
    return solve_sop(st.params, model, data, ctrl, cfg.budget, cfg.gamma);
}

}  // namespace

TrainResult train(const SystemModel& model, const ScenarioData& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch, std::optional<TrainState> start) {
    cfg.check();
    if (data.size() == 0) throw std::invalid_argument("train: empty data");
    if (data.n != model.n) throw DimensionMismatch("train: data dimension differs from model");
    TrainResult res;
    TrainState st = start ? std::move(*start) : initial_state(model, cfg);
    const SampleController ctrl = training_controller(cfg);
    // Kept outside the state so per-batch snapshots stay cheap.
    std::vector<HistoryRow> history = std::move(st.history);
    st.history.clear();
    const std::size_t N = data.size();
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 1);
    // Re-create the shuffle stream position when resuming.
    for (std::size_t e = 0; e < st.epoch; ++e) shuffle(order, rng);

    auto finish_epoch_eval = [&](TrainState& s) {
        res.sop = sync_sop(s, model, data, ctrl, cfg);
        s.psi_star = res.sop.psi_star;
        res.certificate = certify(s.params, model.sigma, cfg.budget, s.lambda_logs);
        res.validity = validity_check(s.psi_star, cfg.budget);
    };
    auto is_converged = [&]() {
        const ValidityLoss vl = validity_loss(res.sop.psi_star, cfg.budget);
        // L_theta at psi* vanishes by definition of the SOP optimum.
        return res.certificate.all_pass() && vl.Lv <= cfg.v_tol && res.validity.margin <= -cfg.validity_target;
    };

    if (cfg.max_epochs == 0 || st.epoch >= cfg.max_epochs) {
        finish_epoch_eval(st);
        res.converged = false;
        st.history = std::move(history);
        res.state = std::move(st);
        return res;
    }

    for (std::size_t epoch = st.epoch; epoch < cfg.max_epochs; ++epoch) {
        shuffle(order, rng);
        double lr = cfg.lr_theta, lrl = cfg.lr_lambda;
        HistoryRow row;
        row.epoch = epoch;
        double sumLM = 0.0;
        std::size_t batches = 0, feasible_batches = 0;
        bool lm_missing = false;
        for (std::size_t b0 = 0; b0 < N; b0 += cfg.batch_size) {
            const std::vector<std::size_t> batch(order.begin() + b0,
                                                 order.begin() + std::min(N, b0 + cfg.batch_size));
            const LossTerms lt = scenario_losses(st.params, st.psi, data, batch, ctrl, model, cfg.budget, cfg.gamma,
                                                 cfg.lambda1, cfg.lambda2, cfg.workers);
            const BarrierResult br =
                barrier_loss_and_grad(st.params, model.sigma, cfg.budget, st.lambda_logs, cfg.c_l);
            ++batches;
            row.L1 += lt.L1;
            row.L2 += lt.L2;
            row.L3 += lt.L3;
            row.L_theta += lt.total;
            if (!br.feasible) {
                lm_missing = true;
                row.aborted = true;
                row.note = "barrier infeasible at batch start";
                break;
            }
            sumLM += br.loss;
            ++feasible_batches;
            const ValidityLoss vl = validity_loss(st.psi + cfg.validity_target, cfg.budget);

            Vec g = lt.grad;
            for (std::size_t k = 0; k < g.size(); ++k) g[k] += br.grad_params[k];
            const Vec gl = flatten_lambdas(br.grad_lambda);
            const TrainState last_feasible = core_copy(st);
            std::size_t consecutive = 0;
            for (;;) {
                Vec flat = st.params.flatten();
                st.adam_theta.step(flat, g, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
                st.params.unflatten(flat);
                Vec lam = flatten_lambdas(st.lambda_logs);
                st.adam_lambda.step(lam, gl, lrl, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
                unflatten_lambdas(lam, st.lambda_logs);
                RecoveryOutcome rec = barrier_recovery(st, last_feasible, model, cfg.budget, lr);
                if (!rec.restored) break;
                st = std::move(rec.state);
                lr = rec.lr_theta;
                lrl *= 0.5;
                ++row.reverts;
                if (++consecutive >= cfg.max_reverts) {
                    row.aborted = true;
                    row.note = "aborted after " + std::to_string(consecutive) + " consecutive reverts";
                    break;
                }
            }
            if (row.aborted) break;
            Vec pv{st.psi};
            st.adam_psi.step(pv, Vec{lt.dpsi + vl.dpsi}, cfg.lr_psi, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            st.psi = pv[0];
        }
        const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
        row.L1 /= nb;
        row.L2 /= nb;
        row.L3 /= nb;
        row.L_theta /= nb;
        if (!lm_missing && feasible_batches) row.L_M = sumLM / static_cast<double>(feasible_batches);

        finish_epoch_eval(st);
        st.psi = std::min(st.psi, st.psi_star);
        st.epoch = epoch + 1;
        row.psi = st.psi_star;
        row.psi_train = st.psi;
        row.L_v = validity_loss(st.psi_star, cfg.budget).Lv;
        row.margin = res.validity.margin;
        history.push_back(row);
        if (on_epoch) {
            st.history.swap(history);
            on_epoch(st);
            st.history.swap(history);
        }
        if (is_converged()) {
            res.converged = true;
            break;
        }
    }
    st.history = std::move(history);
    res.state = std::move(st);
    return res;
}

}  // namespace sncbf
