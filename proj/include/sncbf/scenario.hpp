#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "sncbf/lipcert.hpp"
#include "sncbf/net.hpp"
#include "sncbf/safety_filter.hpp"
#include "sncbf/systems.hpp"

namespace sncbf {

class BudgetExceeded : public std::runtime_error {
public:
    explicit BudgetExceeded(const std::string& what) : std::runtime_error(what) {}
};

// Cell-centred uniform grid over a box.
struct CoverSpec {
    Box box;
    std::vector<std::size_t> counts;
    Vec step;        // cell width per dimension
    Vec half_width;  // step / 2
    double eps_bar = 0.0;  // ||half_width||_2

    std::size_t dim() const { return counts.size(); }
    std::size_t total() const;
    void point(std::size_t index, double* out) const;
    Vec point(std::size_t index) const;
    std::size_t nearest_index(const double* x) const;
};

// Grid with per-dimension half-width eps_bar / sqrt(n) (so that ||eps_i||_2 <= eps_bar).
CoverSpec make_cover(const Box& box, double eps_bar);

struct ScenarioData {
    std::size_t n = 0;
    Vec points;                      // D, row-major
    std::vector<std::uint8_t> in_S;  // membership flags per point of D
    std::vector<std::uint8_t> in_U;
    std::vector<std::size_t> S_idx;
    std::vector<std::size_t> U_idx;
    std::optional<CoverSpec> cover;  // grid the points came from
    std::optional<CoverSpec> fine;   // set when the training grid was coarsened

    std::size_t size() const { return n ? points.size() / n : 0; }
    const double* point(std::size_t i) const { return &points[i * n]; }
};

ScenarioData scenario_from_points(const SystemModel& model, const std::vector<Vec>& pts);

// budget_cap limits the number of training points; a coarser grid is used above it and
// the requested grid is kept in ScenarioData::fine for streaming verification.
ScenarioData build_cover(const SystemModel& model, double eps_bar, std::optional<std::size_t> budget_cap = {});

struct QValues {
    double q1 = 0.0;
    double q2 = 0.0;
    double q3 = 0.0;
};

// q1 = -h, q2 = h + delta, q3 = -(dh/dx (f + g u) + 0.5 tr + gamma h)
QValues eval_q(const NetParams& params, const SystemModel& model, const Vec& x, const Vec& u,
               const LipschitzBudget& budget, double gamma);

// How q3's input is produced at every sample.
struct SampleController {
    ReferenceFn u_ref;       // empty: u_ref = 0
    bool filtered = true;    // pass u_ref through the SNCBF-QP
    double margin = 0.0;     // QP target a + b^T u >= margin
    enum class OnInfeasible { Throw, UseReference } on_infeasible = OnInfeasible::Throw;
};

struct SampleEval {
    NetOutputs out;
    Vec f, g;
    double a = 0.0;
    Vec b;
    Vec u_ref;
    FilterResult filter;
    Vec u;  // input used in q3
    double q1 = 0.0, q2 = 0.0, q3 = 0.0;
};

// Buffers are reused between calls.
void evaluate_sample(const NetParams& params, const SystemModel& model, const double* x,
                     const SampleController& ctrl, double gamma, double delta, SampleEval& ev);

struct SOPResult {
    double psi_star = -std::numeric_limits<double>::infinity();
    Vec argmax_x;
    int argmax_k = 0;  // 1, 2 or 3
    std::size_t argmax_index = 0;
    double q1max = -std::numeric_limits<double>::infinity();
    double q2max = -std::numeric_limits<double>::infinity();
    double q3max = -std::numeric_limits<double>::infinity();
    std::size_t evaluated = 0;
    std::size_t infeasible = 0;  // samples where the filter fell back to u_ref

    bool operator==(const SOPResult& o) const;
};

SOPResult solve_sop(const NetParams& params, const SystemModel& model, const ScenarioData& data,
                    const SampleController& ctrl, const LipschitzBudget& budget, double gamma);

struct ValidityVerdict {
    bool valid = false;
    double margin = 0.0;
};

ValidityVerdict validity_check(double psi_star, const LipschitzBudget& budget);

// Evaluates the SOP over every point of the grid without materializing it.
SOPResult stream_verify(const NetParams& params, const SystemModel& model, const CoverSpec& fine,
                        const SampleController& ctrl, const LipschitzBudget& budget, double gamma,
                        std::size_t workers);

struct VolumeEstimate {
    double fraction = 0.0;
    double ci95 = 0.0;
    std::size_t samples = 0;
};

VolumeEstimate safe_volume_fraction(const NetParams& params, const SystemModel& model, std::size_t samples,
                                    std::uint64_t seed);

// Number of workers from SNCBF_WORKERS, else hardware concurrency.
std::size_t default_workers();

}  // namespace sncbf
