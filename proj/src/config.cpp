#include "fedgrid/config.hpp"

#include <fstream>
#include <sstream>

namespace fedgrid::config {

Json double_to_json(double v) { return Json(to_hexfloat(v)); }

double double_from_json(const Json& v, const std::string& field) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        try {
            return from_hexfloat(v.get<std::string>());
        } catch (const ConfigError& e) {
            throw ConfigError("field '" + field + "': " + e.what());
        }
    }
    throw ConfigError("field '" + field + "' must be a number or a hex-float string");
}

namespace {

double get_double(const Json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    return double_from_json(j.at(key), key);
}

int get_int(const Json& j, const char* key, int fallback) {
    if (!j.contains(key)) return fallback;
    const Json& v = j.at(key);
    if (!v.is_number_integer()) throw ConfigError(std::string("field '") + key + "' must be an integer");
    return v.get<int>();
}

bool get_bool(const Json& j, const char* key, bool fallback) {
    if (!j.contains(key)) return fallback;
    const Json& v = j.at(key);
    if (!v.is_boolean()) throw ConfigError(std::string("field '") + key + "' must be a boolean");
    return v.get<bool>();
}

std::string get_string(const Json& j, const char* key, const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    const Json& v = j.at(key);
    if (!v.is_string()) throw ConfigError(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

void require_object(const Json& j, const char* what) {
    if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
}

}  // namespace

Json step_options_to_json(const grid::StepOptions& o) {
    Json j;
    j["dt"] = double_to_json(o.dt);
    j["substeps"] = o.substeps;
    j["pf_tol"] = double_to_json(o.pf_tol);
    j["pf_max_iter"] = o.pf_max_iter;
    j["pi_tol"] = double_to_json(o.pi_tol);
    j["pi_max_iter"] = o.pi_max_iter;
    j["emf_min"] = double_to_json(o.emf_min);
    j["emf_max"] = double_to_json(o.emf_max);
    return j;
}

grid::StepOptions step_options_from_json(const Json& j, grid::StepOptions base) {
    require_object(j, "step options");
    base.dt = get_double(j, "dt", base.dt);
    base.substeps = get_int(j, "substeps", base.substeps);
    base.pf_tol = get_double(j, "pf_tol", base.pf_tol);
    base.pf_max_iter = get_int(j, "pf_max_iter", base.pf_max_iter);
    base.pi_tol = get_double(j, "pi_tol", base.pi_tol);
    base.pi_max_iter = get_int(j, "pi_max_iter", base.pi_max_iter);
    base.emf_min = get_double(j, "emf_min", base.emf_min);
    base.emf_max = get_double(j, "emf_max", base.emf_max);
    if (base.dt <= 0.0 || base.substeps < 1)
        throw ConfigError("step options: dt must be > 0 and substeps >= 1");
    return base;
}

Json env_config_to_json(const env::EnvConfig& c) {
    Json j;
    j["episode_length"] = c.episode_length;
    j["step"] = step_options_to_json(c.step);
    Json qw = Json::array();
    for (double w : c.q_weights) qw.push_back(double_to_json(w));
    j["q_weights"] = qw;
    j["invalid_penalty"] = double_to_json(c.invalid_penalty);
    j["action_bound"] = double_to_json(c.action_bound);
    j["gate_threshold"] = double_to_json(c.gate_threshold);
    j["instability_penalty"] = double_to_json(c.instability_penalty);
    j["recovery_threshold"] = double_to_json(c.recovery_threshold);
    j["recovery_window"] = c.recovery_window;
    return j;
}

env::EnvConfig env_config_from_json(const Json& j, env::EnvConfig base) {
    require_object(j, "env config");
    base.episode_length = get_int(j, "episode_length", base.episode_length);
    if (j.contains("step")) base.step = step_options_from_json(j.at("step"), base.step);
    if (j.contains("q_weights")) {
        const Json& qw = j.at("q_weights");
        if (!qw.is_array()) throw ConfigError("field 'q_weights' must be an array");
        base.q_weights.clear();
        for (const Json& w : qw) base.q_weights.push_back(double_from_json(w, "q_weights"));
    }
    base.invalid_penalty = get_double(j, "invalid_penalty", base.invalid_penalty);
    base.action_bound = get_double(j, "action_bound", base.action_bound);
    base.gate_threshold = get_double(j, "gate_threshold", base.gate_threshold);
    base.instability_penalty = get_double(j, "instability_penalty", base.instability_penalty);
    base.recovery_threshold = get_double(j, "recovery_threshold", base.recovery_threshold);
    base.recovery_window = get_int(j, "recovery_window", base.recovery_window);
    if (base.episode_length < 1) throw ConfigError("env config: episode_length must be >= 1");
    if (!(base.action_bound > 0.0)) throw ConfigError("env config: action_bound must be > 0");
    return base;
}

Json fed_config_to_json(const sac::FedConfig& c) {
    Json j;
    j["gamma"] = double_to_json(c.gamma);
    j["rho_mix"] = double_to_json(c.rho_mix);
    j["zeta"] = double_to_json(c.zeta);
    j["lr"] = double_to_json(c.lr);
    j["batch"] = c.batch;
    j["buffer_capacity"] = static_cast<std::uint64_t>(c.buffer_capacity);
    j["fed_start"] = c.fed_start;
    j["fed_interval"] = c.fed_interval;
    j["warmup_steps"] = c.warmup_steps;
    j["total_steps"] = c.total_steps;
    j["retained_pair"] = c.retained_pair;
    j["federation_enabled"] = c.federation_enabled;
    j["polyak_paper_direction"] = c.polyak_paper_direction;
    j["hidden"] = c.hidden;
    return j;
}

sac::FedConfig fed_config_from_json(const Json& j, sac::FedConfig base) {
    require_object(j, "fed config");
    base.gamma = get_double(j, "gamma", base.gamma);
    base.rho_mix = get_double(j, "rho_mix", base.rho_mix);
    base.zeta = get_double(j, "zeta", base.zeta);
    base.lr = get_double(j, "lr", base.lr);
    base.batch = get_int(j, "batch", base.batch);
    if (j.contains("buffer_capacity")) {
        const Json& v = j.at("buffer_capacity");
        if (!v.is_number_integer() || v.get<std::int64_t>() <= 0)
            throw ConfigError("field 'buffer_capacity' must be a positive integer");
        base.buffer_capacity = v.get<std::uint64_t>();
    }
    base.fed_start = get_int(j, "fed_start", base.fed_start);
    base.fed_interval = get_int(j, "fed_interval", base.fed_interval);
    base.warmup_steps = get_int(j, "warmup_steps", base.warmup_steps);
    base.total_steps = get_int(j, "total_steps", base.total_steps);
    base.retained_pair = get_int(j, "retained_pair", base.retained_pair);
    base.federation_enabled = get_bool(j, "federation_enabled", base.federation_enabled);
    base.polyak_paper_direction =
        get_bool(j, "polyak_paper_direction", base.polyak_paper_direction);
    if (j.contains("hidden")) {
        const Json& h = j.at("hidden");
        if (!h.is_array() || h.empty()) throw ConfigError("field 'hidden' must be a non-empty array");
        base.hidden.clear();
        for (const Json& v : h) {
            if (!v.is_number_integer() || v.get<int>() < 1)
                throw ConfigError("field 'hidden' entries must be positive integers");
            base.hidden.push_back(v.get<int>());
        }
    }
    if (base.batch < 1) throw ConfigError("fed config: batch must be >= 1");
    if (base.retained_pair != 1 && base.retained_pair != 2)
        throw ConfigError("fed config: retained_pair must be 1 or 2");
    if (base.fed_interval < 1) throw ConfigError("fed config: fed_interval must be >= 1");
    return base;
}

Json scenario_config_to_json(const scenario::ScenarioConfig& c) {
    Json j;
    j["gfm_buses"] = c.gfm_buses;
    j["mag_min"] = double_to_json(c.mag_min);
    j["mag_max"] = double_to_json(c.mag_max);
    j["mag_step"] = double_to_json(c.mag_step);
    j["t_a_min"] = c.t_a_min;
    j["t_a_max"] = c.t_a_max;
    j["train_size"] = c.train_size;
    j["test_size"] = c.test_size;
    return j;
}

scenario::ScenarioConfig scenario_config_from_json(const Json& j,
                                                   scenario::ScenarioConfig base) {
    require_object(j, "scenario config");
    if (j.contains("gfm_buses")) {
        const Json& b = j.at("gfm_buses");
        if (!b.is_array()) throw ConfigError("field 'gfm_buses' must be an array");
        base.gfm_buses.clear();
        for (const Json& v : b) {
            if (!v.is_number_integer()) throw ConfigError("field 'gfm_buses' entries must be integers");
            base.gfm_buses.push_back(v.get<int>());
        }
    }
    base.mag_min = get_double(j, "mag_min", base.mag_min);
    base.mag_max = get_double(j, "mag_max", base.mag_max);
    base.mag_step = get_double(j, "mag_step", base.mag_step);
    base.t_a_min = get_int(j, "t_a_min", base.t_a_min);
    base.t_a_max = get_int(j, "t_a_max", base.t_a_max);
    base.train_size = get_int(j, "train_size", base.train_size);
    base.test_size = get_int(j, "test_size", base.test_size);
    return base;
}

void apply_profile(const std::string& name, sac::FedConfig& fed) {
    if (name == "desk") {
        fed.buffer_capacity = 50000;
        fed.batch = 64;
        fed.total_steps = 20000;
    } else if (name == "paper") {
        fed.buffer_capacity = 1000000;
        fed.batch = 256;
        fed.total_steps = 200000;
    } else {
        throw ConfigError("unknown profile '" + name + "' (expected 'desk' or 'paper')");
    }
}

Json run_config_to_json(const RunConfig& c) {
    Json j;
    j["profile"] = c.profile;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["network_path"] = c.network_path;
    j["train_pool_path"] = c.train_pool_path;
    j["test_pool_path"] = c.test_pool_path;
    j["scenario"] = scenario_config_to_json(c.scenario);
    j["env"] = env_config_to_json(c.env);
    j["fed"] = fed_config_to_json(c.fed);
    return j;
}

RunConfig run_config_from_json(const Json& j) {
    require_object(j, "run config");
    RunConfig c;
    c.profile = get_string(j, "profile", c.profile);
    if (j.contains("seed")) {
        const Json& v = j.at("seed");
        if (!v.is_number_integer()) throw ConfigError("field 'seed' must be an integer");
        c.seed = v.get<std::uint64_t>();
    }
    c.out_dir = get_string(j, "out_dir", c.out_dir);
    c.network_path = get_string(j, "network_path", c.network_path);
    c.train_pool_path = get_string(j, "train_pool_path", c.train_pool_path);
    c.test_pool_path = get_string(j, "test_pool_path", c.test_pool_path);
    apply_profile(c.profile, c.fed);
    if (j.contains("scenario")) c.scenario = scenario_config_from_json(j.at("scenario"), c.scenario);
    if (j.contains("env")) c.env = env_config_from_json(j.at("env"), c.env);
    if (j.contains("fed")) c.fed = fed_config_from_json(j.at("fed"), c.fed);
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::string text = read_text_file(path);
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
    try {
        return run_config_from_json(j);
    } catch (const ConfigError& e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
}

std::string config_hash(const RunConfig& cfg) {
    return hash_hex(fnv1a64(run_config_to_json(cfg).dump(2)));
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (!in.good() && !in.eof()) throw RuntimeError("error reading file '" + path + "'");
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot open file '" + path + "' for writing");
    out << text;
    out.flush();
    if (!out.good()) throw RuntimeError("error writing file '" + path + "'");
}

}  // namespace fedgrid::config
