#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "sncbf/lipcert.hpp"
#include "sncbf/net.hpp"
#include "sncbf/systems.hpp"
#include "sncbf/training.hpp"

namespace sncbf {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct SimulationConfig {
    double dt = 0.01;
    double horizon = 5.0;
    std::size_t rollouts = 100;
    std::uint64_t seed = 7;
    double qp_margin = 0.0;
    double sigma_scale = 1.0;
};

struct VerifyConfig {
    std::optional<double> fine_eps_bar;  // grid used by `verify --fine`
    std::size_t volume_samples = 100000;
    std::uint64_t volume_seed = 11;
};

struct PathsConfig {
    std::string model_out = "model.json";
    std::string history_out = "history.csv";
    std::string report_out = "report.json";
    std::string export_dir = "export";
};

struct RunConfig {
    std::string system = "pendulum";  // pendulum | dubins | custom
    bool dubins_disk_unsafe = false;
    json custom_system;               // used when system == "custom"
    std::optional<Box> input_box;
    TrainConfig train;
    std::optional<std::size_t> budget_cap;
    std::size_t checkpoint_every = 0;
    SimulationConfig sim;
    VerifyConfig verify;
    PathsConfig paths;

    // Resolved configuration with every default filled in.
    json to_json() const;
    std::string hash() const;  // FNV-1a over the canonical dump
};

// Strict parse: unknown keys and wrong types raise ConfigError.
RunConfig parse_run_config(const json& j);
RunConfig load_run_config(const std::string& path);

SystemModel make_system(const RunConfig& cfg);

json net_to_json(const NetParams& params, const Vec& sigma);
NetParams net_from_json(const json& j, Vec* sigma = nullptr);

struct Checkpoint {
    NetParams params;
    Vec sigma;
    double psi = 0.0;
    double psi_star = 0.0;
    LambdaLogs lambda_logs;
    std::size_t epoch = 0;
    std::string config_hash;
};

std::string sidecar_path(const std::string& model_path);
void save_checkpoint(const std::string& model_path, const TrainState& st, const Vec& sigma,
                     const std::string& config_hash);
Checkpoint load_checkpoint(const std::string& model_path);

json certificate_to_json(const CertificateReport& rep);
json sop_to_json(const SOPResult& r, const LipschitzBudget& budget);

std::string read_file(const std::string& path);
// Writes to a temporary sibling and renames it into place.
void atomic_write(const std::string& path, const std::string& contents);

void write_history_csv(std::ostream& os, const std::vector<HistoryRow>& history);

}  // namespace sncbf
