#pragma once

#include <optional>

#include "sncbf/net.hpp"
#include "sncbf/systems.hpp"

namespace sncbf {

enum class FilterStatus { Unmodified, Projected, Clamped, Infeasible };

const char* to_string(FilterStatus s);

struct FilterResult {
    Vec u;
    bool modified = false;
    double constraint_slack = 0.0;  // a + b^T u
    FilterStatus status = FilterStatus::Unmodified;
};

// min ||u - u_ref||^2  s.t.  a + b^T u >= margin, then clamp to the box.
// Infeasible when the returned u violates a + b^T u >= 0.
FilterResult qp_filter_ab(double a, const Vec& b, const Vec& u_ref, const std::optional<Box>& input_box,
                          double margin = 0.0);
// Same, writing into r (buffers reused).
void qp_filter_into(double a, const Vec& b, const Vec& u_ref, const std::optional<Box>& input_box, double margin,
                    FilterResult& r);

struct CbfTerms {
    NetOutputs out;
    double a = 0.0;  // dh/dx . f + 0.5 tr + gamma h
    Vec b;           // (dh/dx . g)^T
    Vec f;
    Vec g;           // n x m row-major
};

CbfTerms cbf_terms(const NetParams& params, const SystemModel& model, const Vec& x, double gamma);

FilterResult qp_filter(const NetParams& params, const SystemModel& model, const Vec& x, const Vec& u_ref,
                       double gamma, double margin = 0.0);

using ReferenceFn = std::function<Vec(const Vec& x)>;

// Filtered controller. An empty reference means u_ref = 0.
class FilteredPolicy {
public:
    FilteredPolicy(const NetParams& params, const SystemModel& model, ReferenceFn u_ref, double gamma,
                   double margin = 0.0);

    // Throws PolicyFailure on an infeasible state.
    Vec operator()(const Vec& x) const;
    FilterResult evaluate(const Vec& x) const;
    Vec reference(const Vec& x) const;

    double gamma() const { return gamma_; }
    double margin() const { return margin_; }

private:
    const NetParams* params_;
    const SystemModel* model_;
    ReferenceFn u_ref_;
    double gamma_;
    double margin_;
};

}  // namespace sncbf
