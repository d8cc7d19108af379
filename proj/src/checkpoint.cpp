#include "fedgrid/checkpoint.hpp"

namespace fedgrid::checkpoint {

namespace {

using config::Json;

Json net_to_json(const neural::Mlp& net) {
    Json j;
    j["sizes"] = net.sizes;
    Json w = Json::array();
    for (const std::vector<double>& layer : net.w) {
        Json lw = Json::array();
        for (double v : layer) lw.push_back(to_hexfloat(v));
        w.push_back(std::move(lw));
    }
    j["w"] = std::move(w);
    Json b = Json::array();
    for (const std::vector<double>& layer : net.b) {
        Json lb = Json::array();
        for (double v : layer) lb.push_back(to_hexfloat(v));
        b.push_back(std::move(lb));
    }
    j["b"] = std::move(b);
    return j;
}

std::vector<double> hex_array(const Json& arr, const std::string& what) {
    if (!arr.is_array()) throw ConfigError("checkpoint: " + what + " must be an array");
    std::vector<double> out;
    out.reserve(arr.size());
    for (const Json& v : arr) out.push_back(config::double_from_json(v, what));
    return out;
}

neural::Mlp net_from_json(const Json& j, const std::string& what) {
    if (!j.is_object() || !j.contains("sizes") || !j.contains("w") || !j.contains("b"))
        throw ConfigError("checkpoint: " + what + " needs 'sizes', 'w' and 'b'");
    neural::Mlp net;
    for (const Json& s : j.at("sizes")) {
        if (!s.is_number_integer() || s.get<int>() < 1)
            throw ConfigError("checkpoint: " + what + " sizes must be positive integers");
        net.sizes.push_back(s.get<int>());
    }
    if (net.sizes.size() < 2) throw ConfigError("checkpoint: " + what + " needs >= 2 layers");
    const Json& w = j.at("w");
    const Json& b = j.at("b");
    const std::size_t n_layers = net.sizes.size() - 1;
    if (!w.is_array() || !b.is_array() || w.size() != n_layers || b.size() != n_layers)
        throw ConfigError("checkpoint: " + what + " layer count mismatch");
    for (std::size_t l = 0; l < n_layers; ++l) {
        std::vector<double> lw = hex_array(w[l], what + ".w");
        std::vector<double> lb = hex_array(b[l], what + ".b");
        const std::size_t rows = static_cast<std::size_t>(net.sizes[l + 1]);
        const std::size_t cols = static_cast<std::size_t>(net.sizes[l]);
        if (lw.size() != rows * cols || lb.size() != rows)
            throw ConfigError("checkpoint: " + what + " parameter shape mismatch at layer " +
                              std::to_string(l));
        net.w.push_back(std::move(lw));
        net.b.push_back(std::move(lb));
    }
    return net;
}

void check_shapes(const Checkpoint& ckpt) {
    if (ckpt.agents.empty()) throw ConfigError("checkpoint: no agents");
    if (ckpt.v_ss.size() != ckpt.agents.size())
        throw ConfigError("checkpoint: v_ss entries do not match the agent count");
    const std::vector<int>& actor_sizes = ckpt.agents.front().actor.sizes;
    const std::vector<int>& critic_sizes = ckpt.agents.front().critic1.sizes;
    for (std::size_t k = 0; k < ckpt.agents.size(); ++k) {
        const AgentNets& a = ckpt.agents[k];
        if (a.actor.sizes != actor_sizes || a.critic1.sizes != critic_sizes ||
            a.critic2.sizes != critic_sizes || a.target1.sizes != critic_sizes ||
            a.target2.sizes != critic_sizes)
            throw ConfigError("checkpoint: inconsistent network shapes at agent " +
                              std::to_string(k));
        if (a.actor.output_dim() != 2 || a.critic1.output_dim() != 1)
            throw ConfigError("checkpoint: agent " + std::to_string(k) +
                              " heads are not (mean, log_std) / scalar Q");
        if (a.critic1.input_dim() != a.actor.input_dim() + 1)
            throw ConfigError("checkpoint: agent " + std::to_string(k) +
                              " critic input is not obs_dim + 1");
    }
}

}  // namespace

Checkpoint make_checkpoint(const sac::TrainResult& result, const env::Env& env,
                           const sac::FedConfig& fed, std::uint64_t seed) {
    Checkpoint ckpt;
    ckpt.seed = seed;
    ckpt.env_steps = result.env_steps;
    ckpt.episodes = result.episodes;
    ckpt.env_config = env.config();
    ckpt.fed_config = fed;
    const int m = env.num_agents();
    if (static_cast<int>(result.agents.size()) != m)
        throw ConfigError("make_checkpoint: trained agent count does not match the environment");
    const std::vector<double>& vss = env.v_ss();
    const int d = env.obs_dim();
    for (int k = 0; k < m; ++k) {
        ckpt.v_ss.emplace_back(vss.begin() + static_cast<std::size_t>(k) * d,
                               vss.begin() + static_cast<std::size_t>(k + 1) * d);
        const sac::AgentBundle& a = result.agents[k];
        ckpt.agents.push_back({a.actor, a.critic1, a.critic2, a.target1, a.target2});
    }
    check_shapes(ckpt);
    return ckpt;
}

std::vector<sac::AgentBundle> restore_agents(const Checkpoint& ckpt) {
    check_shapes(ckpt);
    std::vector<sac::AgentBundle> out;
    out.reserve(ckpt.agents.size());
    const int obs_dim = ckpt.obs_dim();
    for (const AgentNets& nets : ckpt.agents) {
        sac::AgentBundle a = sac::make_agent(obs_dim, ckpt.env_config.action_bound,
                                             ckpt.fed_config, /*seed=*/0);
        a.actor = nets.actor;
        a.critic1 = nets.critic1;
        a.critic2 = nets.critic2;
        a.target1 = nets.target1;
        a.target2 = nets.target2;
        out.push_back(std::move(a));
    }
    return out;
}

config::Json checkpoint_to_json(const Checkpoint& ckpt) {
    Json j;
    j["kind"] = "fedgrid-checkpoint";
    j["format_version"] = ckpt.format_version;
    j["seed"] = ckpt.seed;
    j["env_steps"] = ckpt.env_steps;
    j["episodes"] = ckpt.episodes;
    j["env_config"] = config::env_config_to_json(ckpt.env_config);
    j["fed_config"] = config::fed_config_to_json(ckpt.fed_config);
    Json vss = Json::array();
    for (const std::vector<double>& per_agent : ckpt.v_ss) {
        Json arr = Json::array();
        for (double v : per_agent) arr.push_back(to_hexfloat(v));
        vss.push_back(std::move(arr));
    }
    j["v_ss"] = std::move(vss);
    Json agents = Json::array();
    for (const AgentNets& a : ckpt.agents) {
        Json ja;
        ja["actor"] = net_to_json(a.actor);
        ja["critic1"] = net_to_json(a.critic1);
        ja["critic2"] = net_to_json(a.critic2);
        ja["target1"] = net_to_json(a.target1);
        ja["target2"] = net_to_json(a.target2);
        agents.push_back(std::move(ja));
    }
    j["agents"] = std::move(agents);
    return j;
}

Checkpoint checkpoint_from_json(const config::Json& j) {
    if (!j.is_object()) throw ConfigError("checkpoint: not a JSON object");
    if (j.value("kind", std::string{}) != "fedgrid-checkpoint")
        throw ConfigError("checkpoint: missing or wrong 'kind' marker");
    Checkpoint ckpt;
    if (!j.contains("format_version") || !j.at("format_version").is_number_integer())
        throw ConfigError("checkpoint: missing format_version");
    ckpt.format_version = j.at("format_version").get<int>();
    if (ckpt.format_version != kFormatVersion)
        throw ConfigError("checkpoint: unsupported format_version " +
                          std::to_string(ckpt.format_version) + " (expected " +
                          std::to_string(kFormatVersion) + ")");
    ckpt.seed = j.value("seed", std::uint64_t{0});
    ckpt.env_steps = j.value("env_steps", 0);
    ckpt.episodes = j.value("episodes", 0);
    if (!j.contains("env_config") || !j.contains("fed_config"))
        throw ConfigError("checkpoint: missing config snapshots");
    ckpt.env_config = config::env_config_from_json(j.at("env_config"));
    ckpt.fed_config = config::fed_config_from_json(j.at("fed_config"));
    if (!j.contains("v_ss") || !j.at("v_ss").is_array())
        throw ConfigError("checkpoint: missing v_ss");
    for (const Json& arr : j.at("v_ss")) ckpt.v_ss.push_back(hex_array(arr, "v_ss"));
    if (!j.contains("agents") || !j.at("agents").is_array())
        throw ConfigError("checkpoint: missing agents");
    int idx = 0;
    for (const Json& ja : j.at("agents")) {
        const std::string tag = "agent " + std::to_string(idx++);
        if (!ja.is_object()) throw ConfigError("checkpoint: " + tag + " must be an object");
        AgentNets nets;
        nets.actor = net_from_json(ja.at("actor"), tag + " actor");
        nets.critic1 = net_from_json(ja.at("critic1"), tag + " critic1");
        nets.critic2 = net_from_json(ja.at("critic2"), tag + " critic2");
        nets.target1 = net_from_json(ja.at("target1"), tag + " target1");
        nets.target2 = net_from_json(ja.at("target2"), tag + " target2");
        ckpt.agents.push_back(std::move(nets));
    }
    for (const std::vector<double>& vss : ckpt.v_ss)
        if (vss.size() != static_cast<std::size_t>(ckpt.obs_dim()))
            throw ConfigError("checkpoint: v_ss width does not match the actor input");
    check_shapes(ckpt);
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    config::write_text_file(path, checkpoint_to_json(ckpt).dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::string text = config::read_text_file(path);
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("checkpoint file '" + path + "': " + e.what());
    }
    try {
        return checkpoint_from_json(j);
    } catch (const ConfigError& e) {
        throw ConfigError("checkpoint file '" + path + "': " + e.what());
    }
}

}  // namespace fedgrid::checkpoint
