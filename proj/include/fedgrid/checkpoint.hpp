#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedgrid/config.hpp"
#include "fedgrid/env.hpp"
#include "fedgrid/fedsac.hpp"
#include "fedgrid/neural.hpp"

namespace fedgrid::checkpoint {

inline constexpr int kFormatVersion = 1;

// Persisted slice of one agent: the five networks, no optimizer moments and
// no replay contents (a reloaded checkpoint serves/evaluates; it does not
// resume mid-optimizer).
struct AgentNets {
    neural::Mlp actor;
    neural::Mlp critic1, critic2;
    neural::Mlp target1, target2;
};

struct Checkpoint {
    int format_version = kFormatVersion;
    std::uint64_t seed = 0;
    int env_steps = 0;
    int episodes = 0;
    env::EnvConfig env_config;
    sac::FedConfig fed_config;
    std::vector<std::vector<double>> v_ss;  // per agent, 6 bus-phase magnitudes
    std::vector<AgentNets> agents;

    int num_agents() const { return static_cast<int>(agents.size()); }
    int obs_dim() const {
        return agents.empty() ? 0 : agents.front().actor.input_dim();
    }
};

// Assemble a checkpoint from a finished training run and the environment it
// ran in (for V_ss and the env-config snapshot).
Checkpoint make_checkpoint(const sac::TrainResult& result, const env::Env& env,
                           const sac::FedConfig& fed, std::uint64_t seed);

// Rehydrate agents for evaluation/serving: fresh optimizer state, empty
// replay buffers, networks bit-identical to the saved ones.
std::vector<sac::AgentBundle> restore_agents(const Checkpoint& ckpt);

// Networks as nested arrays of hex-float strings. Save -> load -> save is
// byte-identical (ordered fields, lossless floats).
config::Json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const config::Json& j);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fedgrid::checkpoint
