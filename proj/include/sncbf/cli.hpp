#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sncbf/config.hpp"
#include "sncbf/safety_filter.hpp"
#include "sncbf/systems.hpp"

namespace sncbf {

enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 2,
    kExitNotConverged = 3,
    kExitIo = 4,
    kExitInvalid = 5,
    kExitPolicyFailure = 6,
};

struct RolloutSummary {
    std::size_t rollouts = 0;
    std::size_t safe = 0;
    double fraction_safe = 0.0;
    double mean_min_h = 0.0;
    std::size_t exited = 0;
    std::size_t policy_failures = 0;
    std::vector<Vec> failure_states;
    std::vector<TrajectoryLog> logs;  // kept only when requested
};

// Draws a start uniformly from the safe set by rejection from its bounding box.
Vec sample_safe_start(const SystemModel& model, Rng& rng);

// K rollouts of the filtered policy from uniform safe-set starts; a rollout counts as safe when
// h >= 0 at every recorded step, it never leaves X and the filter never fails.
RolloutSummary run_rollouts(const NetParams& params, const SystemModel& model, const SimulationConfig& sim,
                            double gamma, const ReferenceFn& u_ref, bool keep_logs);

int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace sncbf
