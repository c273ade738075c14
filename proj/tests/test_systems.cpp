#include "doctest.h"

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "sncbf/systems.hpp"

using namespace sncbf;

namespace {

SystemModel scalar_ou() {
    return affine_model("ou", Matrix{{-1.0}}, {0.0}, Matrix{{0.0}}, {0.1}, Box{{-10}, {10}}, std::nullopt,
                        Region{Region::Kind::BoxUnion, {Box{{-1}, {1}}}, {}, 0.0},
                        Region{Region::Kind::ComplementOfBox, {Box{{-5}, {5}}}, {}, 0.0});
}

}  // namespace

TEST_CASE("rng streams are reproducible") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const double x = a.uniform();
        CHECK(x == b.uniform());
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
    CHECK(a.normal() == b.normal());
    CHECK(a.next_u64() != c.next_u64());
    std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
    Rng s(3);
    shuffle(v, s);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8});
    for (int i = 0; i < 1000; ++i) CHECK(s.index(7) < 7);
}

TEST_CASE("normal generator moments") {
    Rng r(9);
    double s = 0, s2 = 0;
    const int N = 200000;
    for (int i = 0; i < N; ++i) {
        const double z = r.normal();
        s += z;
        s2 += z * z;
    }
    CHECK(std::fabs(s / N) < 0.01);
    CHECK(std::fabs(s2 / N - 1.0) < 0.01);
}

TEST_CASE("pendulum model") {
    const SystemModel p = pendulum_model();
    CHECK(p.n == 2);
    CHECK(p.m == 1);
    CHECK(p.f({0, 0}) == Vec{0, 0});
    const Vec f = p.f({M_PI / 6, 0.2});
    CHECK(f[0] == 0.2);
    CHECK(f[1] == doctest::Approx(9.81 / 10 * 0.5).epsilon(1e-14));
    const Matrix g = p.g({0.3, -0.1});
    CHECK(g(0, 0) == 0.0);
    CHECK(g(1, 0) == 0.01);
    CHECK(p.sigma == Vec{0.1, 0.1});
    const double o[2] = {0, 0};
    CHECK(p.in_safe(o));
    CHECK_FALSE(p.in_unsafe(o));
    const double edge[2] = {0.6, 0.0};
    CHECK(p.in_unsafe(edge));
    CHECK_FALSE(p.in_safe(edge));
    const double outside[2] = {1.0, 0.0};
    CHECK_FALSE(p.in_unsafe(outside));
    p.check();
}

TEST_CASE("dubins model") {
    const SystemModel d = dubins_model();
    CHECK(d.f({0, 0, 0}) == Vec{1, 0, 0});
    const Vec q = d.f({0.3, -0.7, M_PI / 2});
    CHECK(std::fabs(q[0]) < 1e-15);
    CHECK(q[1] == 1.0);
    CHECK(q[2] == 0.0);
    const double u[3] = {0.1, 0.1, 0}, s[3] = {1.8, 1.8, 0}, mid[3] = {1.0, 0.0, 0.0};
    CHECK(d.in_unsafe(u));
    CHECK(d.in_safe(s));
    CHECK_FALSE(d.in_safe(mid));
    CHECK_FALSE(d.in_unsafe(mid));
    const SystemModel disk = dubins_model(true);
    const double corner[3] = {0.19, 0.19, 0};
    CHECK(d.in_unsafe(corner));
    CHECK_FALSE(disk.in_unsafe(corner));
    d.check();
    disk.check();
}

TEST_CASE("deterministic linear motion") {
    const SystemModel m = affine_model("lin", Matrix(2, 2), {0, 0}, Matrix::identity(2), {0, 0},
                                       Box{{-100, -100}, {100, 100}}, std::nullopt,
                                       Region{Region::Kind::BoxUnion, {Box{{-1, -1}, {1, 1}}}, {}, 0},
                                       Region{Region::Kind::BoxUnion, {Box{{50, 50}, {60, 60}}}, {}, 0});
    const Vec c{0.5, -0.25};
    const auto log = euler_maruyama_rollout(m, [&](const Vec&) { return c; }, {1, 2}, 0.125, 16, 1);
    REQUIRE(log.states.size() == 17);
    REQUIRE(log.times.size() == 17);
    for (std::size_t k = 0; k <= 16; ++k) {
        CHECK(log.states[k][0] == 1 + 0.5 * 0.125 * k);
        CHECK(log.states[k][1] == 2 - 0.25 * 0.125 * k);
        CHECK(log.times[k] == 0.125 * k);
    }
    CHECK_FALSE(log.exited_safe);
}

TEST_CASE("noise-free rollout matches forward Euler") {
    SystemModel p = pendulum_model();
    p.sigma = {0, 0};
    auto pol = [](const Vec& x) { return Vec{-200 * x[0] - 300 * x[1]}; };
    const auto log = euler_maruyama_rollout(p, pol, {0.1, -0.05}, 0.01, 300, 5);
    Vec x{0.1, -0.05};
    for (std::size_t k = 0; k < 300; ++k) {
        const double u = -200 * x[0] - 300 * x[1];
        const Vec nx{x[0] + (x[1]) * 0.01, x[1] + (0.981 * std::sin(x[0]) + 0.01 * u) * 0.01};
        x = nx;
        CHECK(log.states[k + 1][0] == doctest::Approx(x[0]).epsilon(1e-12));
        CHECK(log.states[k + 1][1] == doctest::Approx(x[1]).epsilon(1e-12));
    }
}

TEST_CASE("rollout seeds") {
    const SystemModel p = pendulum_model();
    auto zero = [](const Vec&) { return Vec{0.0}; };
    const auto a = euler_maruyama_rollout(p, zero, {0, 0}, 0.01, 200, 42);
    const auto b = euler_maruyama_rollout(p, zero, {0, 0}, 0.01, 200, 42);
    const auto c = euler_maruyama_rollout(p, zero, {0, 0}, 0.01, 200, 43);
    CHECK(a.states == b.states);
    CHECK(a.states != c.states);
    CHECK(a.seed == 42);
}

TEST_CASE("OU stationary variance") {
    const SystemModel ou = scalar_ou();
    auto zero = [](const Vec&) { return Vec{0.0}; };
    double s2 = 0, s = 0;
    const int N = 10000;
    for (int k = 0; k < N; ++k) {
        const auto log = euler_maruyama_rollout(ou, zero, {0.0}, 0.01, 500, 1000 + k);
        const double x = log.states.back()[0];
        s += x;
        s2 += x * x;
    }
    const double var = s2 / N - (s / N) * (s / N);
    CHECK(std::fabs(var - 0.005) / 0.005 < 0.1);
}

TEST_CASE("rollout stops when leaving the state box") {
    const SystemModel p = pendulum_model();
    auto push = [](const Vec&) { return Vec{1e4}; };
    const auto log = euler_maruyama_rollout(p, push, {0, 0}, 0.01, 500, 1);
    CHECK(log.exited_safe);
    CHECK(log.states.size() < 501);
    CHECK_FALSE(p.in_state_box(log.states.back().data()));
}

TEST_CASE("policy failure propagates") {
    const SystemModel p = pendulum_model();
    auto bad = [](const Vec& x) -> Vec { throw PolicyFailure("nope", x); };
    try {
        euler_maruyama_rollout(p, bad, {0.1, 0.2}, 0.01, 10, 1);
        FAIL("expected PolicyFailure");
    } catch (const PolicyFailure& e) {
        CHECK(e.state() == Vec{0.1, 0.2});
    }
}

TEST_CASE("trajectory csv") {
    const SystemModel p = pendulum_model();
    auto zero = [](const Vec&) { return Vec{0.0}; };
    const auto log = euler_maruyama_rollout(p, zero, {0, 0}, 0.01, 3, 1, [](const Vec& x) { return x[0]; });
    std::ostringstream os;
    write_trajectory_csv(os, log);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "t,x1,x2,u1,h,exited_safe_flag");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 4);
}

TEST_CASE("dynamics Lipschitz estimates") {
    const SystemModel zero = affine_model("z", Matrix(2, 2), {1, 2}, Matrix{{1}, {2}}, {0.1, 0.1},
                                          Box{{-1, -1}, {1, 1}}, std::nullopt,
                                          Region{Region::Kind::BoxUnion, {Box{{-0.1, -0.1}, {0.1, 0.1}}}, {}, 0},
                                          Region{Region::Kind::ComplementOfBox, {Box{{-0.9, -0.9}, {0.9, 0.9}}}, {}, 0});
    CHECK(lipschitz_estimate_dynamics(zero, 1.0, 1000, 1) == doctest::Approx(0.0));
    const double lp = lipschitz_estimate_dynamics(pendulum_model(), 0.0, 20000, 2);
    CHECK(lp <= 1.0 + 1e-9);
    CHECK(lp > 0.95);
    const double ld = lipschitz_estimate_dynamics(dubins_model(), 0.0, 20000, 3);
    CHECK(ld <= 1.0 + 1e-9);
    CHECK(ld > 0.9);
}
