#include "sncbf/cli.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "CLI11.hpp"
#include "sncbf/lipcert.hpp"
#include "sncbf/scenario.hpp"
#include "sncbf/training.hpp"

namespace sncbf {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Box safe_bounding_box(const SystemModel& model) {
    if (model.safe.kind == Region::Kind::BoxUnion && !model.safe.boxes.empty()) {
        Box b = model.safe.boxes[0];
        for (const Box& o : model.safe.boxes)
            for (std::size_t i = 0; i < b.dim(); ++i) {
                b.lo[i] = std::min(b.lo[i], o.lo[i]);
                b.hi[i] = std::max(b.hi[i], o.hi[i]);
            }
        for (std::size_t i = 0; i < b.dim(); ++i) {
            b.lo[i] = std::max(b.lo[i], model.state_box.lo[i]);
            b.hi[i] = std::min(b.hi[i], model.state_box.hi[i]);
        }
        return b;
    }
    return model.state_box;
}

json summary_to_json(const RolloutSummary& s) {
    json j;
    j["rollouts"] = s.rollouts;
    j["safe"] = s.safe;
    j["fraction_safe"] = s.fraction_safe;
    j["mean_min_h"] = s.mean_min_h;
    j["exited"] = s.exited;
    j["policy_failures"] = s.policy_failures;
    j["failure_states"] = s.failure_states;
    return j;
}

ReferenceFn load_reference(const std::string& spec, std::size_t n, std::size_t m) {
    if (spec.empty() || spec == "zero") return nullptr;
    const std::string prefix = "file:";
    const std::string path = spec.rfind(prefix, 0) == 0 ? spec.substr(prefix.size()) : spec;
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    try {
        const auto K = j.at("K").get<std::vector<Vec>>();
        const Vec x_ref = j.value("x_ref", Vec(n, 0.0));
        const Vec u0 = j.value("u0", Vec(m, 0.0));
        if (K.size() != m || x_ref.size() != n || u0.size() != m) throw ConfigError(path + ": gain dimensions");
        for (const Vec& row : K)
            if (row.size() != n) throw ConfigError(path + ": gain dimensions");
        return [K, x_ref, u0](const Vec& x) {
            Vec u = u0;
            for (std::size_t i = 0; i < u.size(); ++i)
                for (std::size_t k = 0; k < x.size(); ++k) u[i] -= K[i][k] * (x[k] - x_ref[k]);
            return u;
        };
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

struct Loaded {
    RunConfig cfg;
    SystemModel model;
};

Loaded load_config_and_system(const std::string& path) {
    Loaded l;
    l.cfg = load_run_config(path);
    l.model = make_system(l.cfg);
    return l;
}

Checkpoint load_model_for(const std::string& model_path, const SystemModel& model) {
    Checkpoint c = load_checkpoint(model_path);
    if (c.params.n != model.n) throw ConfigError("model input_dim does not match the configured system");
    return c;
}

void write_json(const std::string& path, const json& j) { atomic_write(path, j.dump(2) + "\n"); }

// Dispatch helper mapping exceptions onto exit codes.
template <typename F>
int guarded(F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const BudgetExceeded& e) {
        std::cerr << "budget exceeded: " << e.what() << "\n";
        return kExitConfig;
    }
}

int cmd_train(const std::string& config_path, std::optional<std::size_t> workers, const std::string& out_dir) {
    return guarded([&]() {
        const auto t0 = Clock::now();
        Loaded l = load_config_and_system(config_path);
        RunConfig& cfg = l.cfg;
        if (workers) cfg.train.workers = *workers;
        else cfg.train.workers = default_workers();
        auto resolve = [&](const std::string& p) {
            return out_dir.empty() ? p : (std::filesystem::path(out_dir) / p).string();
        };
        const std::string model_path = resolve(cfg.paths.model_out);
        const std::string history_path = resolve(cfg.paths.history_out);
        const std::string report_path = resolve(cfg.paths.report_out);
        const std::string hash = cfg.hash();

        const ScenarioData data = build_cover(l.model, cfg.train.budget.eps_bar, cfg.budget_cap);
        std::cerr << "grid: " << data.size() << " points (S " << data.S_idx.size() << ", U " << data.U_idx.size()
                  << ")" << (data.fine ? ", streaming verification on the requested grid" : "") << "\n";
        auto on_epoch = [&](const TrainState& st) {
            const HistoryRow& r = st.history.back();
            if (r.epoch % 10 == 0)
                std::cerr << "epoch " << r.epoch << " psi* " << r.psi << " margin " << r.margin << " L_theta "
                          << r.L_theta << (r.aborted ? " [" + r.note + "]" : "") << "\n";
            if (cfg.checkpoint_every && st.epoch % cfg.checkpoint_every == 0)
                save_checkpoint(model_path, st, l.model.sigma, hash);
        };
        const auto t_train = Clock::now();
        const TrainResult res = train(l.model, data, cfg.train, on_epoch);
        const double train_s = seconds_since(t_train);

        save_checkpoint(model_path, res.state, l.model.sigma, hash);
        std::ostringstream hist;
        write_history_csv(hist, res.state.history);
        atomic_write(history_path, hist.str());

        const auto t_eval = Clock::now();
        const VolumeEstimate vol =
            safe_volume_fraction(res.state.params, l.model, cfg.verify.volume_samples, cfg.verify.volume_seed);
        RolloutSummary rs;
        if (cfg.sim.rollouts > 0) {
            SystemModel sim_model = l.model;
            for (double& s : sim_model.sigma) s *= cfg.sim.sigma_scale;
            rs = run_rollouts(res.state.params, sim_model, cfg.sim, cfg.train.gamma, nullptr, false);
        }
        const bool valid = res.validity.valid && res.certificate.all_pass();

        json rep;
        rep["config"] = cfg.to_json();
        rep["config_hash"] = hash;
        rep["converged"] = res.converged;
        rep["valid"] = valid;
        rep["epochs"] = res.state.epoch;
        rep["psi_star"] = res.sop.psi_star;
        rep["margin"] = res.validity.margin;
        rep["sop"] = sop_to_json(res.sop, cfg.train.budget);
        rep["certificate"] = certificate_to_json(res.certificate);
        rep["safe_volume"] = {{"fraction", vol.fraction}, {"ci95", vol.ci95}, {"samples", vol.samples}};
        rep["rollouts"] = summary_to_json(rs);
        rep["grid"] = {{"points", data.size()},
                       {"S", data.S_idx.size()},
                       {"U", data.U_idx.size()},
                       {"eps_bar_effective", data.cover ? data.cover->eps_bar : 0.0},
                       {"fine_points", data.fine ? json(data.fine->total()) : json(nullptr)}};
        rep["timings"] = {{"train_s", train_s}, {"evaluation_s", seconds_since(t_eval)},
                          {"total_s", seconds_since(t0)}};
        rep["workers"] = cfg.train.workers;
        write_json(report_path, rep);
        std::cout << "converged " << (res.converged ? "true" : "false") << " valid " << (valid ? "true" : "false")
                  << " psi* " << std::setprecision(10) << res.sop.psi_star << " margin " << res.validity.margin
                  << " epochs " << res.state.epoch << "\n";
        return (res.converged && valid) ? kExitOk : kExitNotConverged;
    });
}

int cmd_verify(const std::string& model_path, const std::string& config_path, std::optional<std::size_t> workers,
               bool fine, std::optional<double> eps_override, std::optional<double> replay_psi,
               const std::string& report) {
    return guarded([&]() {
        const auto t0 = Clock::now();
        Loaded l = load_config_and_system(config_path);
        const Checkpoint ck = load_model_for(model_path, l.model);
        LipschitzBudget budget = l.cfg.train.budget;
        if (eps_override) budget.eps_bar = *eps_override;
        else if (fine && l.cfg.verify.fine_eps_bar) budget.eps_bar = *l.cfg.verify.fine_eps_bar;
        if (!(budget.eps_bar > 0)) throw ConfigError("eps_bar must be positive");
        const std::size_t w = workers ? *workers : default_workers();

        json rep;
        SOPResult sop;
        if (replay_psi) {
            sop.psi_star = *replay_psi;
            rep = sop_to_json(sop, budget);
            rep["replayed"] = true;
        } else {
            const CoverSpec grid = make_cover(l.model.state_box, budget.eps_bar);
            SampleController ctrl = training_controller(l.cfg.train);
            sop = stream_verify(ck.params, l.model, grid, ctrl, budget, l.cfg.train.gamma, w);
            rep = sop_to_json(sop, budget);
            rep["grid_points"] = grid.total();
            rep["eps_bar_effective"] = grid.eps_bar;
        }
        const CertificateReport cert = certify(ck.params, l.model.sigma, budget, ck.lambda_logs);
        const ValidityVerdict v = validity_check(sop.psi_star, budget);
        rep["certificate"] = certificate_to_json(cert);
        rep["certificates_pass"] = cert.all_pass();
        rep["workers"] = w;
        rep["seconds"] = seconds_since(t0);
        rep["config"] = l.cfg.to_json();
        const std::string out = report.empty() ? model_path + ".verify.json" : report;
        write_json(out, rep);
        std::cout << rep.dump(2) << "\n";
        return (v.valid && cert.all_pass()) ? kExitOk : kExitInvalid;
    });
}

int cmd_simulate(const std::string& model_path, const std::string& config_path, std::optional<std::size_t> rollouts,
                 std::optional<std::uint64_t> seed, const std::string& uref, const std::string& out_dir,
                 std::optional<double> sigma_scale) {
    return guarded([&]() {
        Loaded l = load_config_and_system(config_path);
        const Checkpoint ck = load_model_for(model_path, l.model);
        SimulationConfig sim = l.cfg.sim;
        if (rollouts) sim.rollouts = *rollouts;
        if (seed) sim.seed = *seed;
        if (sigma_scale) sim.sigma_scale = *sigma_scale;
        if (sim.sigma_scale < 0) throw ConfigError("sigma scale must be non-negative");
        SystemModel model = l.model;
        for (double& s : model.sigma) s *= sim.sigma_scale;
        const ReferenceFn ref = load_reference(uref, model.n, model.m);
        const RolloutSummary rs = run_rollouts(ck.params, model, sim, l.cfg.train.gamma, ref, true);
        const std::string dir = out_dir.empty() ? l.cfg.paths.export_dir : out_dir;
        for (std::size_t k = 0; k < rs.logs.size(); ++k) {
            std::ostringstream os;
            write_trajectory_csv(os, rs.logs[k]);
            std::ostringstream name;
            name << "traj_" << std::setw(4) << std::setfill('0') << k << ".csv";
            atomic_write((std::filesystem::path(dir) / name.str()).string(), os.str());
        }
        json sum = summary_to_json(rs);
        sum["config"] = l.cfg.to_json();
        sum["simulation"] = {{"dt", sim.dt}, {"horizon", sim.horizon}, {"seed", sim.seed},
                             {"sigma_scale", sim.sigma_scale}, {"qp_margin", sim.qp_margin},
                             {"u_ref", uref.empty() ? "zero" : uref}};
        write_json((std::filesystem::path(dir) / "summary.json").string(), sum);
        std::cout << "fraction_safe " << rs.fraction_safe << " mean_min_h " << rs.mean_min_h << " policy_failures "
                  << rs.policy_failures << "\n";
        return rs.policy_failures ? kExitPolicyFailure : kExitOk;
    });
}

int cmd_export_grid(const std::string& model_path, const std::string& config_path, std::size_t resolution,
                    const std::string& slice, const std::string& out_path) {
    return guarded([&]() {
        Loaded l = load_config_and_system(config_path);
        const Checkpoint ck = load_model_for(model_path, l.model);
        const SystemModel& model = l.model;
        const std::size_t n = model.n;
        if (resolution < 2) throw ConfigError("resolution must be at least 2");
        std::optional<std::size_t> slice_dim;
        double slice_val = 0.0;
        if (!slice.empty()) {
            const auto eq = slice.find('=');
            if (eq == std::string::npos) throw ConfigError("slice must look like name=value");
            const std::string name = slice.substr(0, eq);
            if (name == "psi" && model.name == "dubins") slice_dim = 2;
            else if (name.size() > 1 && name[0] == 'x') slice_dim = std::stoul(name.substr(1)) - 1;
            else throw ConfigError("unknown slice coordinate '" + name + "'");
            if (*slice_dim >= n) throw ConfigError("slice coordinate out of range");
            try {
                slice_val = std::stod(slice.substr(eq + 1));
            } catch (const std::exception&) {
                throw ConfigError("slice value is not a number");
            }
        }
        const std::size_t free_dims = n - (slice_dim ? 1 : 0);
        if (n > 3 && !slice_dim) throw ConfigError("export-grid needs --slice for systems with more than 3 states");
        if (free_dims > 3) throw ConfigError("export-grid supports at most 3 free coordinates");

        std::ostringstream os;
        for (std::size_t i = 0; i < n; ++i) os << 'x' << (i + 1) << ',';
        os << "h,q3_at_uref\n" << std::setprecision(17);
        std::size_t rows = 1;
        for (std::size_t i = 0; i < free_dims; ++i) rows *= resolution;
        Vec x(n);
        SampleController ctrl;
        ctrl.filtered = false;
        SampleEval ev;
        for (std::size_t r = 0; r < rows; ++r) {
            std::size_t rem = r;
            for (std::size_t d = n; d-- > 0;) {
                if (slice_dim && d == *slice_dim) {
                    x[d] = slice_val;
                    continue;
                }
                const std::size_t i = rem % resolution;
                rem /= resolution;
                const double lo = model.state_box.lo[d], hi = model.state_box.hi[d];
                x[d] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(resolution - 1);
            }
            evaluate_sample(ck.params, model, x.data(), ctrl, l.cfg.train.gamma, l.cfg.train.budget.delta, ev);
            for (double v : x) os << v << ',';
            os << ev.out.value << ',' << ev.q3 << '\n';
        }
        const std::string out =
            out_path.empty() ? (std::filesystem::path(l.cfg.paths.export_dir) / "grid.csv").string() : out_path;
        atomic_write(out, os.str());
        const VolumeEstimate vol =
            safe_volume_fraction(ck.params, model, l.cfg.verify.volume_samples, l.cfg.verify.volume_seed);
        json sum = {{"rows", rows},
                    {"resolution", resolution},
                    {"slice", slice},
                    {"safe_volume", {{"fraction", vol.fraction}, {"ci95", vol.ci95}, {"samples", vol.samples}}}};
        write_json(out + ".summary.json", sum);
        std::cout << "rows " << rows << " safe_volume_fraction " << vol.fraction << " +- " << vol.ci95 << "\n";
        return kExitOk;
    });
}

}  // namespace

Vec sample_safe_start(const SystemModel& model, Rng& rng) {
    const Box b = safe_bounding_box(model);
    Vec x(model.n);
    for (int tries = 0; tries < 1000000; ++tries) {
        for (std::size_t i = 0; i < model.n; ++i) x[i] = rng.uniform(b.lo[i], b.hi[i]);
        if (model.in_safe(x.data())) return x;
    }
    throw std::runtime_error("sample_safe_start: could not draw a safe state");
}

RolloutSummary run_rollouts(const NetParams& params, const SystemModel& model, const SimulationConfig& sim,
                            double gamma, const ReferenceFn& u_ref, bool keep_logs) {
    RolloutSummary s;
    s.rollouts = sim.rollouts;
    if (sim.rollouts == 0) return s;
    Rng starts(sim.seed);
    const FilteredPolicy policy(params, model, u_ref, gamma, sim.qp_margin);
    const Observer h = [&](const Vec& x) { return forward(params, x, model.sigma).value; };
    const std::size_t steps = static_cast<std::size_t>(std::llround(sim.horizon / sim.dt));
    double sum_min = 0.0;
    for (std::size_t k = 0; k < sim.rollouts; ++k) {
        const Vec x0 = sample_safe_start(model, starts);
        const std::uint64_t seed = sim.seed * 1000003ULL + k + 1;
        TrajectoryLog log;
        bool failed = false;
        try {
            log = euler_maruyama_rollout(model, policy, x0, sim.dt, steps, seed, h);
        } catch (const PolicyFailure& e) {
            failed = true;
            ++s.policy_failures;
            s.failure_states.push_back(e.state());
        }
        double min_h = std::numeric_limits<double>::infinity();
        for (double v : log.h_values) min_h = std::min(min_h, v);
        if (!failed) {
            sum_min += min_h;
            if (log.exited_safe) ++s.exited;
            if (!log.exited_safe && min_h >= 0.0) ++s.safe;
        }
        if (keep_logs) s.logs.push_back(std::move(log));
    }
    s.fraction_safe = static_cast<double>(s.safe) / static_cast<double>(s.rollouts);
    const std::size_t ok = s.rollouts - s.policy_failures;
    s.mean_min_h = ok ? sum_min / static_cast<double>(ok) : std::nan("");
    return s;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Stochastic neural control barrier functions: train, verify, simulate, export"};
    app.require_subcommand(1);
    std::optional<std::size_t> workers;
    std::string config, model, out_dir, report, uref = "zero", slice, out;
    bool fine = false;
    std::optional<double> eps_override, replay_psi, sigma_scale;
    std::optional<std::size_t> rollouts;
    std::optional<std::uint64_t> seed;
    std::size_t resolution = 50;

    auto* train_cmd = app.add_subcommand("train", "Train an SNCBF from a JSON config");
    train_cmd->add_option("config", config, "Run configuration (JSON)")->required();
    train_cmd->add_option("--workers", workers, "Worker threads (default: SNCBF_WORKERS or all cores)");
    train_cmd->add_option("--out-dir", out_dir, "Directory prefix for the configured output paths");

    auto* verify_cmd = app.add_subcommand("verify", "Check the validity condition on a trained model");
    verify_cmd->add_option("model", model, "Model checkpoint (JSON)")->required();
    verify_cmd->add_option("config", config, "Run configuration (JSON)")->required();
    verify_cmd->add_option("--workers", workers, "Worker threads");
    verify_cmd->add_flag("--fine", fine, "Use verify.fine_eps_bar from the config");
    verify_cmd->add_option("--eps-bar", eps_override, "Override the cover radius");
    verify_cmd->add_option("--replay-psi", replay_psi, "Skip the grid sweep and use this psi*");
    verify_cmd->add_option("--report", report, "Report path (default: <model>.verify.json)");

    auto* sim_cmd = app.add_subcommand("simulate", "Euler-Maruyama rollouts under the safety filter");
    sim_cmd->add_option("model", model, "Model checkpoint (JSON)")->required();
    sim_cmd->add_option("config", config, "Run configuration (JSON)")->required();
    sim_cmd->add_option("--rollouts", rollouts, "Number of rollouts");
    sim_cmd->add_option("--seed", seed, "Seed");
    sim_cmd->add_option("--uref", uref, "Reference controller: zero or file:<gain.json>");
    sim_cmd->add_option("--out-dir", out_dir, "Output directory");
    sim_cmd->add_option("--sigma-scale", sigma_scale, "Scale the diffusion (0 disables noise)");

    auto* exp_cmd = app.add_subcommand("export-grid", "Export h and q3 on a regular grid");
    exp_cmd->add_option("model", model, "Model checkpoint (JSON)")->required();
    exp_cmd->add_option("config", config, "Run configuration (JSON)")->required();
    exp_cmd->add_option("--resolution", resolution, "Points per dimension");
    exp_cmd->add_option("--slice", slice, "Fix one coordinate, e.g. psi=0 or x3=0.5");
    exp_cmd->add_option("--out", out, "CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }
    if (*train_cmd) return cmd_train(config, workers, out_dir);
    if (*verify_cmd) return cmd_verify(model, config, workers, fine, eps_override, replay_psi, report);
    if (*sim_cmd) return cmd_simulate(model, config, rollouts, seed, uref, out_dir, sigma_scale);
    if (*exp_cmd) return cmd_export_grid(model, config, resolution, slice, out);
    return kExitConfig;
}

int run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> storage;
    storage.push_back("sncbf");
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace sncbf
