#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sncbf/lipcert.hpp"
#include "sncbf/net.hpp"
#include "sncbf/scenario.hpp"
#include "sncbf/systems.hpp"

namespace sncbf {

struct TrainConfig {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    std::array<double, 3> c_l{1e-4, 1e-4, 1e-4};
    LipschitzBudget budget;
    double gamma = 1.0;
    std::size_t hidden_dim = 20;
    std::size_t batch_size = 256;
    std::size_t max_epochs = 2000;
    double lr_theta = 1e-3;
    double lr_lambda = 1e-3;
    double lr_psi = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    double loss_theta_tol = 0.0;
    double v_tol = 0.0;
    // Extra required validity margin: convergence needs L_max*eps + psi* <= -validity_target.
    double validity_target = 0.0;
    double qp_margin = 0.0;  // SNCBF-QP target used for q3
    std::size_t workers = 1;
    std::size_t max_reverts = 10;

    void check() const;
};

struct Adam {
    Vec m, v;
    std::size_t t = 0;
    void resize(std::size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        t = 0;
    }
    // In-place update of x with gradient g.
    void step(Vec& x, const Vec& g, double lr, double b1, double b2, double eps);
};

struct HistoryRow {
    std::size_t epoch = 0;
    double L1 = 0.0, L2 = 0.0, L3 = 0.0, L_theta = 0.0;
    std::optional<double> L_M;  // empty when the barrier was infeasible
    double L_v = 0.0;
    double psi = 0.0;       // psi* after the epoch's re-sync
    double psi_train = 0.0;
    double margin = 0.0;
    std::size_t reverts = 0;
    bool aborted = false;
    std::string note;
};

struct TrainState {
    NetParams params;
    double psi = 0.0;  // trainable level
    LambdaLogs lambda_logs;
    Adam adam_theta, adam_lambda, adam_psi;
    std::size_t epoch = 0;
    std::vector<HistoryRow> history;
    double psi_star = 0.0;  // exact SOP optimum from the last re-sync
};

struct LossTerms {
    double L1 = 0.0, L2 = 0.0, L3 = 0.0;
    double total = 0.0;  // L1 + lambda1 L2 + lambda2 L3
    Vec grad;            // d total / d params
    double dpsi = 0.0;   // d total / d psi
};

// Hinge means over the S, U and D members of the given sample indices (all samples when empty).
LossTerms scenario_losses(const NetParams& params, double psi, const ScenarioData& data,
                          const std::vector<std::size_t>& indices, const SampleController& ctrl,
                          const SystemModel& model, const LipschitzBudget& budget, double gamma, double lambda1,
                          double lambda2, std::size_t workers = 1);

struct ValidityLoss {
    double Lv = 0.0;
    double dpsi = 0.0;
};

ValidityLoss validity_loss(double psi, const LipschitzBudget& budget);

// Fresh state: uniform weights scaled by 1/sqrt(fan-in), zero biases, Lambda = I, psi = 0,
// weights shrunk by 0.7 until the three certificates hold.
TrainState initial_state(const SystemModel& model, const TrainConfig& cfg);

struct RecoveryOutcome {
    TrainState state;
    bool restored = false;
    double lr_theta = 0.0;
};

// Revert the parameters and Lambda logs to the last feasible state and halve the learning rate.
RecoveryOutcome barrier_recovery(const TrainState& state, const TrainState& last_feasible, const SystemModel& model,
                                 const LipschitzBudget& budget, double lr_theta);

bool certificates_feasible(const TrainState& s, const SystemModel& model, const LipschitzBudget& budget);

struct TrainResult {
    TrainState state;
    bool converged = false;
    SOPResult sop;
    CertificateReport certificate;
    ValidityVerdict validity;
};

using EpochCallback = std::function<void(const TrainState&)>;

TrainResult train(const SystemModel& model, const ScenarioData& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = nullptr, std::optional<TrainState> start = {});

SampleController training_controller(const TrainConfig& cfg);

}  // namespace sncbf
