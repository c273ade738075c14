#include "sncbf/config.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace sncbf {

namespace {

// Tracks which keys of an object were consumed so leftovers can be rejected.
class Reader {
public:
    Reader(const json& j, std::string ctx) : j_(j), ctx_(std::move(ctx)) {
        if (!j_.is_object()) throw ConfigError(ctx_ + ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

    template <typename T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!has(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(ctx_ + "." + key + ": " + e.what());
        }
    }

    void get_number(const std::string& key, double& out) {
        seen_.insert(key);
        if (!has(key)) return;
        if (!j_.at(key).is_number()) throw ConfigError(ctx_ + "." + key + ": expected a number");
        out = j_.at(key).get<double>();
    }

    void get_count(const std::string& key, std::size_t& out) {
        seen_.insert(key);
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number_integer() || v.get<long long>() < 0)
            throw ConfigError(ctx_ + "." + key + ": expected a non-negative integer");
        out = v.get<std::size_t>();
    }

    void get_seed(const std::string& key, std::uint64_t& out) {
        seen_.insert(key);
        if (!has(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number_integer() || v.get<long long>() < 0)
            throw ConfigError(ctx_ + "." + key + ": expected a non-negative integer");
        out = v.get<std::uint64_t>();
    }

    const json* child(const std::string& key) {
        seen_.insert(key);
        return has(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key())) throw ConfigError(ctx_ + ": unknown key '" + item.key() + "'");
    }

private:
    const json& j_;
    std::string ctx_;
    std::set<std::string> seen_;
};

Box parse_box(const json& j, const std::string& ctx) {
    Reader r(j, ctx);
    Box b;
    r.get("lo", b.lo);
    r.get("hi", b.hi);
    r.finish();
    if (b.lo.size() != b.hi.size() || b.lo.empty()) throw ConfigError(ctx + ": lo/hi must be equal-length arrays");
    for (std::size_t i = 0; i < b.lo.size(); ++i)
        if (!(b.lo[i] <= b.hi[i])) throw ConfigError(ctx + ": lo must not exceed hi");
    return b;
}

json box_to_json(const Box& b) { return json{{"lo", b.lo}, {"hi", b.hi}}; }

Region parse_region(const json& j, const std::string& ctx) {
    Reader r(j, ctx);
    std::string kind;
    r.get("kind", kind);
    Region reg;
    if (kind == "boxes") {
        reg.kind = Region::Kind::BoxUnion;
        if (const json* bs = r.child("boxes")) {
            if (!bs->is_array()) throw ConfigError(ctx + ".boxes: expected an array");
            for (std::size_t i = 0; i < bs->size(); ++i)
                reg.boxes.push_back(parse_box((*bs)[i], ctx + ".boxes[" + std::to_string(i) + "]"));
        }
    } else if (kind == "complement") {
        reg.kind = Region::Kind::ComplementOfBox;
        const json* b = r.child("box");
        if (!b) throw ConfigError(ctx + ": complement region needs 'box'");
        reg.boxes.push_back(parse_box(*b, ctx + ".box"));
    } else if (kind == "disk" || kind == "disk_complement") {
        reg.kind = kind == "disk" ? Region::Kind::Disk : Region::Kind::DiskComplement;
        r.get("dims", reg.disk_dims);
        r.get_number("radius", reg.radius);
    } else {
        throw ConfigError(ctx + ".kind: expected boxes|complement|disk|disk_complement");
    }
    r.finish();
    return reg;
}

Matrix parse_matrix(const json& j, const std::string& ctx) {
    if (!j.is_array() || j.empty()) throw ConfigError(ctx + ": expected a non-empty array of rows");
    const std::size_t rows = j.size();
    const std::size_t cols = j[0].size();
    Matrix M(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (!j[i].is_array() || j[i].size() != cols) throw ConfigError(ctx + ": ragged matrix");
        for (std::size_t c = 0; c < cols; ++c) {
            if (!j[i][c].is_number()) throw ConfigError(ctx + ": non-numeric entry");
            M(i, c) = j[i][c].get<double>();
        }
    }
    return M;
}

json matrix_to_json(const Matrix& M) {
    json a = json::array();
    for (std::size_t i = 0; i < M.rows(); ++i) {
        json row = json::array();
        for (std::size_t c = 0; c < M.cols(); ++c) row.push_back(M(i, c));
        a.push_back(row);
    }
    return a;
}

void parse_custom(const json& j) {
    // Validated fully by make_system; this checks the key set early.
    Reader r(j, "custom_system");
    for (const char* k : {"A", "c", "G", "sigma", "state_box", "safe", "unsafe"}) r.child(k);
    r.finish();
}

}  // namespace

RunConfig parse_run_config(const json& j) {
    RunConfig c;
    Reader r(j, "config");
    r.get("system", c.system);
    if (c.system != "pendulum" && c.system != "dubins" && c.system != "custom")
        throw ConfigError("config.system: expected pendulum|dubins|custom");
    r.get("dubins_disk_unsafe", c.dubins_disk_unsafe);
    if (const json* cs = r.child("custom_system")) {
        parse_custom(*cs);
        c.custom_system = *cs;
    }
    if (c.system == "custom" && c.custom_system.is_null())
        throw ConfigError("config.custom_system: required when system is custom");
    if (const json* ib = r.child("input_box")) c.input_box = parse_box(*ib, "config.input_box");
    r.get_number("gamma", c.train.gamma);

    LipschitzBudget& b = c.train.budget;
    if (const json* bj = r.child("budget")) {
        Reader br(*bj, "config.budget");
        br.get_number("eps_bar", b.eps_bar);
        br.get_number("L_h", b.L_h);
        br.get_number("L_dh", b.L_dh);
        br.get_number("L_d2h", b.L_d2h);
        br.get_number("L_x", b.L_x);
        br.get_number("delta", b.delta);
        if (br.has("L_max_override")) {
            double v = 0.0;
            br.get_number("L_max_override", v);
            b.L_max_override = v;
        } else {
            br.child("L_max_override");
        }
        br.finish();
    }

    TrainConfig& t = c.train;
    if (const json* tj = r.child("training")) {
        Reader tr(*tj, "config.training");
        tr.get_number("lambda1", t.lambda1);
        tr.get_number("lambda2", t.lambda2);
        if (tr.has("c_l")) {
            std::vector<double> cl;
            tr.get("c_l", cl);
            if (cl.size() != 3) throw ConfigError("config.training.c_l: expected 3 numbers");
            t.c_l = {cl[0], cl[1], cl[2]};
        } else {
            tr.child("c_l");
        }
        tr.get_count("hidden_dim", t.hidden_dim);
        tr.get_count("batch_size", t.batch_size);
        tr.get_count("max_epochs", t.max_epochs);
        tr.get_number("lr_theta", t.lr_theta);
        tr.get_number("lr_lambda", t.lr_lambda);
        tr.get_number("lr_psi", t.lr_psi);
        tr.get_number("adam_beta1", t.adam_beta1);
        tr.get_number("adam_beta2", t.adam_beta2);
        tr.get_number("adam_eps", t.adam_eps);
        tr.get_seed("seed", t.seed);
        tr.get_number("loss_theta_tol", t.loss_theta_tol);
        tr.get_number("v_tol", t.v_tol);
        tr.get_number("validity_target", t.validity_target);
        tr.get_number("qp_margin", t.qp_margin);
        tr.get_count("max_reverts", t.max_reverts);
        tr.get_count("checkpoint_every", c.checkpoint_every);
        if (tr.has("budget_cap")) {
            std::size_t cap = 0;
            tr.get_count("budget_cap", cap);
            c.budget_cap = cap;
        } else {
            tr.child("budget_cap");
        }
        tr.finish();
    }

    if (const json* sj = r.child("simulation")) {
        Reader sr(*sj, "config.simulation");
        sr.get_number("dt", c.sim.dt);
        sr.get_number("horizon", c.sim.horizon);
        sr.get_count("rollouts", c.sim.rollouts);
        sr.get_seed("seed", c.sim.seed);
        sr.get_number("qp_margin", c.sim.qp_margin);
        sr.get_number("sigma_scale", c.sim.sigma_scale);
        sr.finish();
    }

    if (const json* vj = r.child("verify")) {
        Reader vr(*vj, "config.verify");
        if (vr.has("fine_eps_bar")) {
            double e = 0.0;
            vr.get_number("fine_eps_bar", e);
            c.verify.fine_eps_bar = e;
        } else {
            vr.child("fine_eps_bar");
        }
        vr.get_count("volume_samples", c.verify.volume_samples);
        vr.get_seed("volume_seed", c.verify.volume_seed);
        vr.finish();
    }

    if (const json* pj = r.child("paths")) {
        Reader pr(*pj, "config.paths");
        pr.get("model_out", c.paths.model_out);
        pr.get("history_out", c.paths.history_out);
        pr.get("report_out", c.paths.report_out);
        pr.get("export_dir", c.paths.export_dir);
        pr.finish();
    }
    r.finish();

    try {
        t.check();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (!(c.sim.dt > 0 && c.sim.horizon > 0 && c.sim.sigma_scale >= 0 && c.sim.qp_margin >= 0))
        throw ConfigError("config.simulation: dt/horizon must be positive, sigma_scale/qp_margin non-negative");
    if (c.verify.fine_eps_bar && !(*c.verify.fine_eps_bar > 0))
        throw ConfigError("config.verify.fine_eps_bar must be positive");
    if (c.verify.volume_samples < 1000) throw ConfigError("config.verify.volume_samples must be >= 1000");
    return c;
}

namespace {

std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < text.size() && i + 1 < byte; ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError& e) {
        throw ConfigError(e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, col] = line_col(text, e.byte);
        throw ConfigError(path + ":" + std::to_string(line) + ":" + std::to_string(col) + ": malformed JSON (" +
                          e.what() + ")");
    }
    return parse_run_config(j);
}

json RunConfig::to_json() const {
    const LipschitzBudget& b = train.budget;
    json j;
    j["system"] = system;
    j["dubins_disk_unsafe"] = dubins_disk_unsafe;
    j["custom_system"] = custom_system;
    j["input_box"] = input_box ? box_to_json(*input_box) : json(nullptr);
    j["gamma"] = train.gamma;
    j["budget"] = {{"eps_bar", b.eps_bar}, {"L_h", b.L_h},     {"L_dh", b.L_dh},   {"L_d2h", b.L_d2h},
                   {"L_x", b.L_x},         {"delta", b.delta}, {"L_max_override", b.L_max_override ? json(*b.L_max_override) : json(nullptr)}};
    j["training"] = {{"lambda1", train.lambda1},
                     {"lambda2", train.lambda2},
                     {"c_l", {train.c_l[0], train.c_l[1], train.c_l[2]}},
                     {"hidden_dim", train.hidden_dim},
                     {"batch_size", train.batch_size},
                     {"max_epochs", train.max_epochs},
                     {"lr_theta", train.lr_theta},
                     {"lr_lambda", train.lr_lambda},
                     {"lr_psi", train.lr_psi},
                     {"adam_beta1", train.adam_beta1},
                     {"adam_beta2", train.adam_beta2},
                     {"adam_eps", train.adam_eps},
                     {"seed", train.seed},
                     {"loss_theta_tol", train.loss_theta_tol},
                     {"v_tol", train.v_tol},
                     {"validity_target", train.validity_target},
                     {"qp_margin", train.qp_margin},
                     {"max_reverts", train.max_reverts},
                     {"checkpoint_every", checkpoint_every},
                     {"budget_cap", budget_cap ? json(*budget_cap) : json(nullptr)}};
    j["simulation"] = {{"dt", sim.dt},
                       {"horizon", sim.horizon},
                       {"rollouts", sim.rollouts},
                       {"seed", sim.seed},
                       {"qp_margin", sim.qp_margin},
                       {"sigma_scale", sim.sigma_scale}};
    j["verify"] = {{"fine_eps_bar", verify.fine_eps_bar ? json(*verify.fine_eps_bar) : json(nullptr)},
                   {"volume_samples", verify.volume_samples},
                   {"volume_seed", verify.volume_seed}};
    j["paths"] = {{"model_out", paths.model_out},
                  {"history_out", paths.history_out},
                  {"report_out", paths.report_out},
                  {"export_dir", paths.export_dir}};
    return j;
}

std::string RunConfig::hash() const {
    const std::string s = to_json().dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

SystemModel make_system(const RunConfig& cfg) {
    SystemModel s;
    if (cfg.system == "pendulum") {
        s = pendulum_model();
    } else if (cfg.system == "dubins") {
        s = dubins_model(cfg.dubins_disk_unsafe);
    } else {
        const json& j = cfg.custom_system;
        try {
            const Matrix A = parse_matrix(j.at("A"), "custom_system.A");
            const Matrix G = parse_matrix(j.at("G"), "custom_system.G");
            const Vec c = j.contains("c") ? j.at("c").get<Vec>() : Vec(A.rows(), 0.0);
            const Vec sigma = j.at("sigma").get<Vec>();
            const Box X = parse_box(j.at("state_box"), "custom_system.state_box");
            s = affine_model("custom", A, c, G, sigma, X, std::nullopt, parse_region(j.at("safe"), "custom_system.safe"),
                             parse_region(j.at("unsafe"), "custom_system.unsafe"));
        } catch (const json::exception& e) {
            throw ConfigError(std::string("custom_system: ") + e.what());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("custom_system: ") + e.what());
        }
    }
    if (cfg.input_box) {
        if (cfg.input_box->dim() != s.m) throw ConfigError("config.input_box: dimension differs from the system input");
        s.input_box = cfg.input_box;
    }
    return s;
}

json net_to_json(const NetParams& P, const Vec& sigma) {
    json j;
    j["input_dim"] = P.n;
    j["hidden_dim"] = P.p;
    j["activation"] = "softplus";
    j["theta0"] = matrix_to_json(P.theta0);
    j["b0"] = P.b0;
    j["theta1"] = P.theta1;
    j["b1"] = P.b1;
    j["sigma_diag"] = sigma;
    return j;
}

NetParams net_from_json(const json& j, Vec* sigma) {
    try {
        const std::size_t n = j.at("input_dim").get<std::size_t>();
        const std::size_t p = j.at("hidden_dim").get<std::size_t>();
        if (j.at("activation").get<std::string>() != "softplus") throw IoError("model: unsupported activation");
        NetParams P(n, p);
        P.theta0 = parse_matrix(j.at("theta0"), "model.theta0");
        P.b0 = j.at("b0").get<Vec>();
        P.theta1 = j.at("theta1").get<Vec>();
        P.b1 = j.at("b1").get<double>();
        P.check();
        if (sigma) *sigma = j.at("sigma_diag").get<Vec>();
        return P;
    } catch (const json::exception& e) {
        throw IoError(std::string("model: ") + e.what());
    } catch (const ConfigError& e) {
        throw IoError(e.what());
    } catch (const DimensionMismatch& e) {
        throw IoError(e.what());
    }
}

std::string sidecar_path(const std::string& model_path) { return model_path + ".state.json"; }

void save_checkpoint(const std::string& model_path, const TrainState& st, const Vec& sigma,
                     const std::string& config_hash) {
    atomic_write(model_path, net_to_json(st.params, sigma).dump(2) + "\n");
    json side;
    side["psi"] = st.psi;
    side["psi_star"] = st.psi_star;
    side["lambda_logs"] = {st.lambda_logs[0], st.lambda_logs[1], st.lambda_logs[2]};
    side["epoch"] = st.epoch;
    side["config_hash"] = config_hash;
    atomic_write(sidecar_path(model_path), side.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& model_path) {
    Checkpoint c;
    json j;
    try {
        j = json::parse(read_file(model_path));
    } catch (const json::parse_error& e) {
        throw IoError(model_path + ": " + e.what());
    }
    c.params = net_from_json(j, &c.sigma);
    const std::string side = sidecar_path(model_path);
    if (std::filesystem::exists(side)) {
        try {
            const json s = json::parse(read_file(side));
            c.psi = s.at("psi").get<double>();
            c.psi_star = s.value("psi_star", c.psi);
            const auto ll = s.at("lambda_logs").get<std::vector<Vec>>();
            if (ll.size() != 3) throw IoError(side + ": expected three Lambda vectors");
            for (int i = 0; i < 3; ++i) {
                if (ll[i].size() != c.params.p) throw IoError(side + ": Lambda size differs from hidden_dim");
                c.lambda_logs[i] = ll[i];
            }
            c.epoch = s.at("epoch").get<std::size_t>();
            c.config_hash = s.value("config_hash", "");
        } catch (const json::exception& e) {
            throw IoError(side + ": " + e.what());
        }
    } else {
        for (auto& l : c.lambda_logs) l.assign(c.params.p, 0.0);
    }
    return c;
}

json certificate_to_json(const CertificateReport& rep) {
    json j;
    for (const auto& e : rep.entries) {
        j[e.name] = {{"L", e.L_bound},
                     {"pd", e.pd_pass},
                     {"log_det", e.log_det ? json(*e.log_det) : json(nullptr)},
                     {"min_pivot", e.min_pivot},
                     {"alpha", e.slopes.alpha},
                     {"beta", e.slopes.beta}};
    }
    return j;
}

json sop_to_json(const SOPResult& r, const LipschitzBudget& budget) {
    auto finite_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    const ValidityVerdict v = validity_check(r.psi_star, budget);
    json j;
    j["psi_star"] = r.psi_star;
    j["argmax"] = {{"x", r.argmax_x}, {"k", r.argmax_k}, {"index", r.argmax_index}};
    j["q1max"] = finite_or_null(r.q1max);
    j["q2max"] = finite_or_null(r.q2max);
    j["q3max"] = finite_or_null(r.q3max);
    j["L_max"] = budget.L_max();
    j["L_max_formula"] = budget.L_max_formula();
    j["eps_bar"] = budget.eps_bar;
    j["margin"] = v.margin;
    j["valid"] = v.valid;
    j["evaluated"] = r.evaluated;
    j["infeasible_samples"] = r.infeasible;
    return j;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void atomic_write(const std::string& path, const std::string& contents) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        out << contents;
        out.flush();
        if (!out) throw IoError("write failed for " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot rename " + tmp + " to " + path);
    }
}

void write_history_csv(std::ostream& os, const std::vector<HistoryRow>& history) {
    os << "epoch,L1,L2,L3,L_M,L_v,psi\n" << std::setprecision(17);
    for (const HistoryRow& r : history) {
        os << r.epoch << ',' << r.L1 << ',' << r.L2 << ',' << r.L3 << ',';
        if (r.L_M) {
            os << *r.L_M;
        } else {
            os << "Infeasible";
        }
        os << ',' << r.L_v << ',' << r.psi << '\n';
    }
}

}  // namespace sncbf
