#include "sncbf/scenario.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <thread>

namespace sncbf {

std::size_t CoverSpec::total() const {
    std::size_t t = 1;
    for (std::size_t c : counts) t *= c;
    return t;
}

void CoverSpec::point(std::size_t index, double* out) const {
    for (std::size_t d = counts.size(); d-- > 0;) {
        const std::size_t i = index % counts[d];
        index /= counts[d];
        out[d] = box.lo[d] + step[d] * (static_cast<double>(i) + 0.5);
    }
}

Vec CoverSpec::point(std::size_t index) const {
    Vec x(dim());
    point(index, x.data());
    return x;
}

std::size_t CoverSpec::nearest_index(const double* x) const {
    std::size_t idx = 0;
    for (std::size_t d = 0; d < counts.size(); ++d) {
        double f = std::floor((x[d] - box.lo[d]) / step[d]);
        f = std::min(std::max(f, 0.0), static_cast<double>(counts[d] - 1));
        idx = idx * counts[d] + static_cast<std::size_t>(f);
    }
    return idx;
}

CoverSpec make_cover(const Box& box, double eps_bar) {
    if (!(eps_bar > 0.0)) throw std::invalid_argument("make_cover: eps_bar must be positive");
    const std::size_t n = box.dim();
    const double hw = eps_bar / std::sqrt(static_cast<double>(n));
    CoverSpec c;
    c.box = box;
    c.counts.resize(n);
    c.step.resize(n);
    c.half_width.resize(n);
    double e2 = 0.0;
    for (std::size_t d = 0; d < n; ++d) {
        const double width = box.hi[d] - box.lo[d];
        const double cnt = std::ceil(width / (2.0 * hw) - 1e-12);
        if (!(cnt >= 1.0) || cnt > 1e12) throw BudgetExceeded("make_cover: grid count out of range");
        c.counts[d] = static_cast<std::size_t>(cnt);
        c.step[d] = width / cnt;
        c.half_width[d] = c.step[d] / 2.0;
        e2 += c.half_width[d] * c.half_width[d];
    }
    c.eps_bar = std::sqrt(e2);
    return c;
}

ScenarioData scenario_from_points(const SystemModel& model, const std::vector<Vec>& pts) {
    ScenarioData d;
    d.n = model.n;
    d.points.reserve(pts.size() * model.n);
    for (const Vec& x : pts) {
        if (x.size() != model.n) throw DimensionMismatch("scenario_from_points: dimension");
        for (double v : x) {
            if (!std::isfinite(v)) throw std::invalid_argument("scenario_from_points: non-finite sample");
        }
        if (!model.in_state_box(x.data())) throw std::invalid_argument("scenario_from_points: sample outside X");
        d.points.insert(d.points.end(), x.begin(), x.end());
    }
    const std::size_t N = pts.size();
    d.in_S.assign(N, 0);
    d.in_U.assign(N, 0);
    for (std::size_t i = 0; i < N; ++i) {
        const double* x = d.point(i);
        if (model.in_safe(x)) {
            d.in_S[i] = 1;
            d.S_idx.push_back(i);
        }
        if (model.in_unsafe(x)) {
            d.in_U[i] = 1;
            d.U_idx.push_back(i);
        }
    }
    return d;
}

namespace {

ScenarioData materialize(const SystemModel& model, const CoverSpec& c) {
    std::vector<Vec> pts(c.total());
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = c.point(i);
    ScenarioData d = scenario_from_points(model, pts);
    d.cover = c;
    return d;
}

}  // namespace

ScenarioData build_cover(const SystemModel& model, double eps_bar, std::optional<std::size_t> budget_cap) {
    const CoverSpec fine = make_cover(model.state_box, eps_bar);
    std::size_t slice = 1;
    for (std::size_t d = 1; d < fine.dim(); ++d) slice *= fine.counts[d];
    if (slice > (std::size_t{1} << 31)) throw BudgetExceeded("build_cover: a single grid slice is too large");
    if (!budget_cap || fine.total() <= *budget_cap) return materialize(model, fine);
    double e = eps_bar;
    CoverSpec coarse = fine;
    while (coarse.total() > *budget_cap) {
        e *= 1.05;
        coarse = make_cover(model.state_box, e);
    }
    ScenarioData d = materialize(model, coarse);
    d.fine = fine;
    return d;
}

QValues eval_q(const NetParams& params, const SystemModel& model, const Vec& x, const Vec& u,
               const LipschitzBudget& budget, double gamma) {
    if (u.size() != model.m) throw DimensionMismatch("eval_q: input dimension");
    const NetOutputs o = forward(params, x, model.sigma);
    const Vec f = model.f(x);
    const Matrix g = model.g(x);
    double lie = 0.0;
    for (std::size_t i = 0; i < model.n; ++i) {
        double v = f[i];
        for (std::size_t j = 0; j < model.m; ++j) v += g(i, j) * u[j];
        lie += o.jac[i] * v;
    }
    QValues q;
    q.q1 = -o.value;
    q.q2 = o.value + budget.delta;
    q.q3 = -(lie + 0.5 * o.hess_trace + gamma * o.value);
    return q;
}

void evaluate_sample(const NetParams& params, const SystemModel& model, const double* x,
                     const SampleController& ctrl, double gamma, double delta, SampleEval& ev) {
    const std::size_t n = model.n, m = model.m;
    forward_into(params, x, model.sigma, ev.out);
    ev.f.resize(n);
    ev.g.resize(n * m);
    model.drift(x, ev.f.data());
    model.input_map(x, ev.g.data());
    double lf = 0.0;
    for (std::size_t i = 0; i < n; ++i) lf += ev.out.jac[i] * ev.f[i];
    ev.a = lf + 0.5 * ev.out.hess_trace + gamma * ev.out.value;
    ev.b.assign(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) ev.b[j] += ev.out.jac[i] * ev.g[i * m + j];
    if (ctrl.u_ref) {
        ev.u_ref = ctrl.u_ref(Vec(x, x + n));
    } else {
        ev.u_ref.assign(m, 0.0);
    }
    if (ctrl.filtered) {
        qp_filter_into(ev.a, ev.b, ev.u_ref, model.input_box, ctrl.margin, ev.filter);
        if (ev.filter.status == FilterStatus::Infeasible) {
            if (ctrl.on_infeasible == SampleController::OnInfeasible::Throw)
                throw PolicyFailure("safety filter infeasible at sample", Vec(x, x + n));
            ev.u.assign(ev.u_ref.begin(), ev.u_ref.end());
        } else {
            ev.u.assign(ev.filter.u.begin(), ev.filter.u.end());
        }
    } else {
        ev.filter.status = FilterStatus::Unmodified;
        ev.u.assign(ev.u_ref.begin(), ev.u_ref.end());
    }
    double bu = 0.0;
    for (std::size_t j = 0; j < m; ++j) bu += ev.b[j] * ev.u[j];
    ev.q1 = -ev.out.value;
    ev.q2 = ev.out.value + delta;
    ev.q3 = -(ev.a + bu);
}

bool SOPResult::operator==(const SOPResult& o) const {
    return psi_star == o.psi_star && argmax_x == o.argmax_x && argmax_k == o.argmax_k &&
           argmax_index == o.argmax_index && q1max == o.q1max && q2max == o.q2max && q3max == o.q3max &&
           evaluated == o.evaluated && infeasible == o.infeasible;
}

namespace {

struct SopAccumulator {
    SOPResult r;
    void consider(std::size_t idx, const double* x, std::size_t n, double q, int k) {
        double& fam = k == 1 ? r.q1max : (k == 2 ? r.q2max : r.q3max);
        if (q > fam) fam = q;
        if (q > r.psi_star) {
            r.psi_star = q;
            r.argmax_k = k;
            r.argmax_index = idx;
            r.argmax_x.assign(x, x + n);
        }
    }
    // rhs covers indices after every index seen so far.
    void merge(const SOPResult& o) {
        r.q1max = std::max(r.q1max, o.q1max);
        r.q2max = std::max(r.q2max, o.q2max);
        r.q3max = std::max(r.q3max, o.q3max);
        if (o.psi_star > r.psi_star) {
            r.psi_star = o.psi_star;
            r.argmax_k = o.argmax_k;
            r.argmax_index = o.argmax_index;
            r.argmax_x = o.argmax_x;
        }
        r.evaluated += o.evaluated;
        r.infeasible += o.infeasible;
    }
};

void sop_step(SopAccumulator& acc, SampleEval& ev, const NetParams& params, const SystemModel& model,
              const double* x, std::size_t idx, bool inS, bool inU, const SampleController& ctrl,
              const LipschitzBudget& budget, double gamma) {
    evaluate_sample(params, model, x, ctrl, gamma, budget.delta, ev);
    ++acc.r.evaluated;
    if (ctrl.filtered && ev.filter.status == FilterStatus::Infeasible) ++acc.r.infeasible;
    if (inS) acc.consider(idx, x, model.n, ev.q1, 1);
    if (inU) acc.consider(idx, x, model.n, ev.q2, 2);
    acc.consider(idx, x, model.n, ev.q3, 3);
}

}  // namespace

SOPResult solve_sop(const NetParams& params, const SystemModel& model, const ScenarioData& data,
                    const SampleController& ctrl, const LipschitzBudget& budget, double gamma) {
    if (data.size() == 0) throw std::invalid_argument("solve_sop: empty data");
    SopAccumulator acc;
    SampleEval ev;
    for (std::size_t i = 0; i < data.size(); ++i)
        sop_step(acc, ev, params, model, data.point(i), i, data.in_S[i] != 0, data.in_U[i] != 0, ctrl, budget,
                 gamma);
    return acc.r;
}

ValidityVerdict validity_check(double psi_star, const LipschitzBudget& budget) {
    ValidityVerdict v;
    v.margin = budget.L_max() * budget.eps_bar + psi_star;
    v.valid = v.margin <= 0.0;
    return v;
}

SOPResult stream_verify(const NetParams& params, const SystemModel& model, const CoverSpec& fine,
                        const SampleController& ctrl, const LipschitzBudget& budget, double gamma,
                        std::size_t workers) {
    const std::size_t total = fine.total();
    if (total == 0) throw std::invalid_argument("stream_verify: empty grid");
    constexpr std::size_t kChunk = 8192;
    const std::size_t chunks = (total + kChunk - 1) / kChunk;
    std::vector<SOPResult> partial(chunks);
    std::vector<std::exception_ptr> errors(chunks);
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
        SampleEval ev;
        Vec x(model.n);
        for (;;) {
            const std::size_t c = next.fetch_add(1);
            if (c >= chunks) return;
            try {
                SopAccumulator acc;
                const std::size_t end = std::min(total, (c + 1) * kChunk);
                for (std::size_t i = c * kChunk; i < end; ++i) {
                    fine.point(i, x.data());
                    sop_step(acc, ev, params, model, x.data(), i, model.in_safe(x.data()), model.in_unsafe(x.data()),
                             ctrl, budget, gamma);
                }
                partial[c] = std::move(acc.r);
            } catch (...) {
                errors[c] = std::current_exception();
            }
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, chunks));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    SopAccumulator acc;
    for (std::size_t c = 0; c < chunks; ++c) {
        if (errors[c]) std::rethrow_exception(errors[c]);
        acc.merge(partial[c]);
    }
    return acc.r;
}

VolumeEstimate safe_volume_fraction(const NetParams& params, const SystemModel& model, std::size_t samples,
                                    std::uint64_t seed) {
    if (samples < 1000) throw std::invalid_argument("safe_volume_fraction: need at least 1000 samples");
    Rng rng(seed);
    Vec x(model.n);
    NetOutputs out;
    std::size_t hits = 0;
    for (std::size_t s = 0; s < samples; ++s) {
        for (std::size_t i = 0; i < model.n; ++i) x[i] = rng.uniform(model.state_box.lo[i], model.state_box.hi[i]);
        forward_into(params, x.data(), model.sigma, out);
        if (out.value >= 0.0) ++hits;
    }
    VolumeEstimate v;
    v.samples = samples;
    v.fraction = static_cast<double>(hits) / static_cast<double>(samples);
    v.ci95 = 1.96 * std::sqrt(v.fraction * (1.0 - v.fraction) / static_cast<double>(samples));
    return v;
}

std::size_t default_workers() {
    if (const char* env = std::getenv("SNCBF_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<std::size_t>(v);
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc ? hc : 1;
}

}  // namespace sncbf
