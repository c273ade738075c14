#include "sncbf/safety_filter.hpp"

#include <algorithm>

namespace sncbf {

const char* to_string(FilterStatus s) {
    switch (s) {
        case FilterStatus::Unmodified: return "unmodified";
        case FilterStatus::Projected: return "projected";
        case FilterStatus::Clamped: return "clamped";
        case FilterStatus::Infeasible: return "infeasible";
    }
    return "?";
}

namespace {

double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

FilterResult qp_filter_ab(double a, const Vec& b, const Vec& u_ref, const std::optional<Box>& box, double margin) {
    FilterResult r;
    qp_filter_into(a, b, u_ref, box, margin, r);
    return r;
}

void qp_filter_into(double a, const Vec& b, const Vec& u_ref, const std::optional<Box>& box, double margin,
                    FilterResult& r) {
    if (b.size() != u_ref.size()) throw DimensionMismatch("qp_filter: b and u_ref sizes differ");
    if (box && box->dim() != u_ref.size()) throw DimensionMismatch("qp_filter: input box dimension");
    r.u.assign(u_ref.begin(), u_ref.end());
    r.modified = false;
    const double at_ref = a + dot(b, u_ref);
    const double bb = dot(b, b);
    if (at_ref >= margin || bb == 0.0) {
        r.status = FilterStatus::Unmodified;
    } else {
        const double step = (margin - at_ref) / bb;
        for (std::size_t i = 0; i < r.u.size(); ++i) r.u[i] += step * b[i];
        r.status = FilterStatus::Projected;
        r.modified = true;
    }
    if (box) {
        bool clamped = false;
        for (std::size_t i = 0; i < r.u.size(); ++i) {
            const double c = std::clamp(r.u[i], box->lo[i], box->hi[i]);
            if (c != r.u[i]) {
                r.u[i] = c;
                clamped = true;
            }
        }
        if (clamped) {
            r.status = FilterStatus::Clamped;
            r.modified = r.u != u_ref;
        }
    }
    r.constraint_slack = a + dot(b, r.u);
    if (r.constraint_slack < -1e-9) r.status = FilterStatus::Infeasible;
}

CbfTerms cbf_terms(const NetParams& params, const SystemModel& model, const Vec& x, double gamma) {
    CbfTerms t;
    t.out = forward(params, x, model.sigma);
    t.f.assign(model.n, 0.0);
    t.g.assign(model.n * model.m, 0.0);
    model.drift(x.data(), t.f.data());
    model.input_map(x.data(), t.g.data());
    double lf = 0.0;
    for (std::size_t i = 0; i < model.n; ++i) lf += t.out.jac[i] * t.f[i];
    t.a = lf + 0.5 * t.out.hess_trace + gamma * t.out.value;
    t.b.assign(model.m, 0.0);
    for (std::size_t i = 0; i < model.n; ++i)
        for (std::size_t j = 0; j < model.m; ++j) t.b[j] += t.out.jac[i] * t.g[i * model.m + j];
    return t;
}

FilterResult qp_filter(const NetParams& params, const SystemModel& model, const Vec& x, const Vec& u_ref,
                       double gamma, double margin) {
    const CbfTerms t = cbf_terms(params, model, x, gamma);
    return qp_filter_ab(t.a, t.b, u_ref, model.input_box, margin);
}

FilteredPolicy::FilteredPolicy(const NetParams& params, const SystemModel& model, ReferenceFn u_ref, double gamma,
                               double margin)
    : params_(&params), model_(&model), u_ref_(std::move(u_ref)), gamma_(gamma), margin_(margin) {}

Vec FilteredPolicy::reference(const Vec& x) const { return u_ref_ ? u_ref_(x) : Vec(model_->m, 0.0); }

FilterResult FilteredPolicy::evaluate(const Vec& x) const {
    return qp_filter(*params_, *model_, x, reference(x), gamma_, margin_);
}

Vec FilteredPolicy::operator()(const Vec& x) const {
    FilterResult r = evaluate(x);
    if (r.status == FilterStatus::Infeasible) throw PolicyFailure("safety filter infeasible", x);
    return r.u;
}

}  // namespace sncbf
