#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sncbf/net.hpp"

namespace sncbf {

// Seeded generator: mt19937_64 with explicit conversions so streams are identical
// on every standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}
    double uniform();                    // [0, 1)
    double uniform(double lo, double hi);
    double normal();                     // Box-Muller
    std::size_t index(std::size_t n);    // uniform in [0, n)
    std::uint64_t next_u64() { return eng_(); }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

struct Box {
    Vec lo;
    Vec hi;
    std::size_t dim() const { return lo.size(); }
    bool contains(const double* x) const;
    bool contains(const Vec& x) const { return contains(x.data()); }
};

// Subset of the state space.
struct Region {
    enum class Kind { BoxUnion, ComplementOfBox, Disk, DiskComplement };
    Kind kind = Kind::BoxUnion;
    std::vector<Box> boxes;  // BoxUnion: members; ComplementOfBox: boxes[0] is the excluded box
    std::vector<std::size_t> disk_dims;  // Disk kinds: coordinates entering the radius
    double radius = 0.0;

    bool contains(const double* x, const Box& state_box) const;
};

struct SystemModel {
    std::string name;
    std::size_t n = 0;
    std::size_t m = 0;
    std::function<void(const double* x, double* f)> drift;         // f(x), n entries
    std::function<void(const double* x, double* g)> input_map;     // g(x), n x m row-major
    Vec sigma;                                                     // diagonal of sigma
    Box state_box;
    std::optional<Box> input_box;
    Region safe;
    Region unsafe;

    bool in_state_box(const double* x) const { return state_box.contains(x); }
    bool in_safe(const double* x) const { return state_box.contains(x) && safe.contains(x, state_box); }
    bool in_unsafe(const double* x) const { return state_box.contains(x) && unsafe.contains(x, state_box); }

    Vec f(const Vec& x) const;
    Matrix g(const Vec& x) const;
    void check() const;
};

inline constexpr double kGravity = 9.81;

SystemModel pendulum_model();
// disk_unsafe switches the obstacle to the x1^2 + x2^2 <= 0.04 variant.
SystemModel dubins_model(bool disk_unsafe = false);
// Linear control-affine system dx = (A x + c + G u) dt + sigma dW.
SystemModel affine_model(const std::string& name, const Matrix& A, const Vec& c, const Matrix& G, const Vec& sigma,
                         Box state_box, std::optional<Box> input_box, Region safe, Region unsafe);

class PolicyFailure : public std::runtime_error {
public:
    PolicyFailure(const std::string& what, Vec state) : std::runtime_error(what), state_(std::move(state)) {}
    const Vec& state() const { return state_; }

private:
    Vec state_;
};

using Policy = std::function<Vec(const Vec& x)>;
using Observer = std::function<double(const Vec& x)>;

struct TrajectoryLog {
    std::vector<double> times;
    std::vector<Vec> states;
    std::vector<Vec> inputs;
    std::vector<double> h_values;
    std::uint64_t seed = 0;
    bool exited_safe = false;
};

// Euler-Maruyama: x+ = x + (f + g u) dt + sigma sqrt(dt) xi. Records steps + 1 rows
// (fewer if x leaves the state box). observe fills h_values when given.
TrajectoryLog euler_maruyama_rollout(const SystemModel& model, const Policy& policy, const Vec& x0, double dt,
                                     std::size_t steps, std::uint64_t seed, const Observer& observe = nullptr);

void write_trajectory_csv(std::ostream& os, const TrajectoryLog& log);

double lipschitz_estimate_dynamics(const SystemModel& model, double u_ref_bound, std::size_t samples,
                                   std::uint64_t seed);

}  // namespace sncbf
