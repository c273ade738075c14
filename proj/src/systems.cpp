#include "sncbf/systems.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace sncbf {

double Rng::uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * M_PI * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
}

std::size_t Rng::index(std::size_t n) {
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
        v = eng_();
    } while (v >= limit);
    return static_cast<std::size_t>(v % n);
}

bool Box::contains(const double* x) const {
    for (std::size_t i = 0; i < lo.size(); ++i)
        if (!(x[i] >= lo[i] && x[i] <= hi[i])) return false;
    return true;
}

bool Region::contains(const double* x, const Box& state_box) const {
    switch (kind) {
        case Kind::BoxUnion:
            for (const Box& b : boxes)
                if (b.contains(x)) return true;
            return false;
        case Kind::ComplementOfBox:
            return state_box.contains(x) && !boxes.at(0).contains(x);
        case Kind::Disk:
        case Kind::DiskComplement: {
            double r2 = 0.0;
            for (std::size_t d : disk_dims) r2 += x[d] * x[d];
            const bool inside = r2 <= radius * radius;
            return kind == Kind::Disk ? inside : (state_box.contains(x) && !inside);
        }
    }
    return false;
}

Vec SystemModel::f(const Vec& x) const {
    Vec out(n, 0.0);
    drift(x.data(), out.data());
    return out;
}

Matrix SystemModel::g(const Vec& x) const {
    Matrix out(n, m);
    input_map(x.data(), out.data().data());
    return out;
}

void SystemModel::check() const {
    if (n == 0 || m == 0 || !drift || !input_map) throw std::invalid_argument("SystemModel: incomplete");
    if (sigma.size() != n || state_box.dim() != n) throw DimensionMismatch("SystemModel: state dimensions");
    if (input_box && input_box->dim() != m) throw DimensionMismatch("SystemModel: input box dimension");
    for (std::size_t i = 0; i < n; ++i)
        if (!(state_box.lo[i] < state_box.hi[i])) throw std::invalid_argument("SystemModel: empty state box");
}

namespace {

Box uniform_box(std::size_t n, double lo, double hi) { return Box{Vec(n, lo), Vec(n, hi)}; }

}  // namespace

SystemModel pendulum_model() {
    SystemModel s;
    s.name = "pendulum";
    s.n = 2;
    s.m = 1;
    const double mass = 1.0, length = 10.0;
    s.drift = [length](const double* x, double* f) {
        f[0] = x[1];
        f[1] = (kGravity / length) * std::sin(x[0]);
    };
    const double gain = 1.0 / (mass * length * length);
    s.input_map = [gain](const double*, double* g) {
        g[0] = 0.0;
        g[1] = gain;
    };
    s.sigma = {0.1, 0.1};
    s.state_box = uniform_box(2, -M_PI / 4, M_PI / 4);
    s.safe.kind = Region::Kind::BoxUnion;
    s.safe.boxes = {uniform_box(2, -M_PI / 15, M_PI / 15)};
    s.unsafe.kind = Region::Kind::ComplementOfBox;
    s.unsafe.boxes = {uniform_box(2, -M_PI / 6, M_PI / 6)};
    return s;
}

SystemModel dubins_model(bool disk_unsafe) {
    SystemModel s;
    s.name = "dubins";
    s.n = 3;
    s.m = 1;
    const double v = 1.0;
    s.drift = [v](const double* x, double* f) {
        f[0] = v * std::cos(x[2]);
        f[1] = v * std::sin(x[2]);
        f[2] = 0.0;
    };
    s.input_map = [](const double*, double* g) {
        g[0] = 0.0;
        g[1] = 0.0;
        g[2] = 1.0;
    };
    s.sigma = {0.1, 0.1, 0.1};
    s.state_box = uniform_box(3, -2.0, 2.0);
    s.safe.kind = Region::Kind::ComplementOfBox;
    s.safe.boxes = {Box{{-1.5, -1.5, -2.0}, {1.5, 1.5, 2.0}}};
    if (disk_unsafe) {
        s.unsafe.kind = Region::Kind::Disk;
        s.unsafe.disk_dims = {0, 1};
        s.unsafe.radius = 0.2;
    } else {
        s.unsafe.kind = Region::Kind::BoxUnion;
        s.unsafe.boxes = {Box{{-0.2, -0.2, -2.0}, {0.2, 0.2, 2.0}}};
    }
    return s;
}

SystemModel affine_model(const std::string& name, const Matrix& A, const Vec& c, const Matrix& G, const Vec& sigma,
                         Box state_box, std::optional<Box> input_box, Region safe, Region unsafe) {
    const std::size_t n = A.rows();
    if (A.cols() != n || c.size() != n || G.rows() != n) throw DimensionMismatch("affine_model: dimensions");
    SystemModel s;
    s.name = name;
    s.n = n;
    s.m = G.cols();
    s.drift = [A, c, n](const double* x, double* f) {
        for (std::size_t i = 0; i < n; ++i) {
            double v = c[i];
            for (std::size_t j = 0; j < n; ++j) v += A(i, j) * x[j];
            f[i] = v;
        }
    };
    s.input_map = [G](const double*, double* g) {
        std::copy(G.data().begin(), G.data().end(), g);
    };
    s.sigma = sigma;
    s.state_box = std::move(state_box);
    s.input_box = std::move(input_box);
    s.safe = std::move(safe);
    s.unsafe = std::move(unsafe);
    s.check();
    return s;
}

TrajectoryLog euler_maruyama_rollout(const SystemModel& model, const Policy& policy, const Vec& x0, double dt,
                                     std::size_t steps, std::uint64_t seed, const Observer& observe) {
    if (!(dt > 0.0)) throw std::invalid_argument("rollout: dt must be positive");
    if (x0.size() != model.n) throw DimensionMismatch("rollout: x0 dimension");
    const std::size_t n = model.n, m = model.m;
    Rng rng(seed);
    TrajectoryLog log;
    log.seed = seed;
    Vec x = x0, f(n), g(n * m);
    const double sq = std::sqrt(dt);
    for (std::size_t k = 0;; ++k) {
        const Vec u = policy(x);
        if (u.size() != m) throw DimensionMismatch("rollout: policy output dimension");
        log.times.push_back(static_cast<double>(k) * dt);
        log.states.push_back(x);
        log.inputs.push_back(u);
        if (observe) log.h_values.push_back(observe(x));
        if (k == steps) break;
        model.drift(x.data(), f.data());
        model.input_map(x.data(), g.data());
        Vec next(n);
        for (std::size_t i = 0; i < n; ++i) {
            double gu = 0.0;
            for (std::size_t j = 0; j < m; ++j) gu += g[i * m + j] * u[j];
            next[i] = x[i] + (f[i] + gu) * dt + model.sigma[i] * sq * rng.normal();
        }
        x = std::move(next);
        if (!model.in_state_box(x.data())) {
            log.exited_safe = true;
            log.times.push_back(static_cast<double>(k + 1) * dt);
            log.states.push_back(x);
            log.inputs.push_back(Vec(m, 0.0));
            if (observe) log.h_values.push_back(observe(x));
            break;
        }
    }
    return log;
}

void write_trajectory_csv(std::ostream& os, const TrajectoryLog& log) {
    const std::size_t n = log.states.empty() ? 0 : log.states[0].size();
    const std::size_t m = log.inputs.empty() ? 0 : log.inputs[0].size();
    os << "t";
    for (std::size_t i = 1; i <= n; ++i) os << ",x" << i;
    for (std::size_t i = 1; i <= m; ++i) os << ",u" << i;
    os << ",h,exited_safe_flag\n";
    os << std::setprecision(17);
    for (std::size_t r = 0; r < log.states.size(); ++r) {
        os << log.times[r];
        for (double v : log.states[r]) os << ',' << v;
        for (double v : log.inputs[r]) os << ',' << v;
        os << ',' << (r < log.h_values.size() ? log.h_values[r] : std::nan(""));
        const bool flag = log.exited_safe && r + 1 == log.states.size();
        os << ',' << (flag ? 1 : 0) << '\n';
    }
}

double lipschitz_estimate_dynamics(const SystemModel& model, double u_ref_bound, std::size_t samples,
                                   std::uint64_t seed) {
    if (samples < 2) throw std::invalid_argument("lipschitz_estimate_dynamics: need at least 2 samples");
    const std::size_t n = model.n, m = model.m;
    Rng rng(seed);
    // Candidate inputs on the sphere of radius u_ref_bound: +-axes plus random directions.
    std::vector<Vec> us;
    if (u_ref_bound == 0.0) {
        us.push_back(Vec(m, 0.0));
    } else {
        for (std::size_t j = 0; j < m; ++j)
            for (double s : {-1.0, 1.0}) {
                Vec u(m, 0.0);
                u[j] = s * u_ref_bound;
                us.push_back(u);
            }
        if (m > 1)
            for (int r = 0; r < 32; ++r) {
                Vec u(m);
                double nn = 0.0;
                for (auto& v : u) {
                    v = rng.normal();
                    nn += v * v;
                }
                for (auto& v : u) v *= u_ref_bound / std::sqrt(nn);
                us.push_back(u);
            }
    }
    Vec x(n), y(n), fx(n), fy(n), gx(n * m), gy(n * m);
    double best = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = rng.uniform(model.state_box.lo[i], model.state_box.hi[i]);
            y[i] = rng.uniform(model.state_box.lo[i], model.state_box.hi[i]);
        }
        double dx = 0.0;
        for (std::size_t i = 0; i < n; ++i) dx += (x[i] - y[i]) * (x[i] - y[i]);
        dx = std::sqrt(dx);
        if (dx == 0.0) continue;
        model.drift(x.data(), fx.data());
        model.drift(y.data(), fy.data());
        model.input_map(x.data(), gx.data());
        model.input_map(y.data(), gy.data());
        for (const Vec& u : us) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double d = fx[i] - fy[i];
                for (std::size_t j = 0; j < m; ++j) d += (gx[i * m + j] - gy[i * m + j]) * u[j];
                d2 += d * d;
            }
            best = std::max(best, std::sqrt(d2) / dx);
        }
    }
    return best;
}

}  // namespace sncbf
