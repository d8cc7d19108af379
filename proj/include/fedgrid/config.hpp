#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "fedgrid/env.hpp"
#include "fedgrid/fedsac.hpp"
#include "fedgrid/scenario.hpp"

namespace fedgrid::config {

// Ordered JSON everywhere: field order is part of the byte-stable output
// contract (checkpoints, reports, pool files).
using Json = nlohmann::ordered_json;

// Doubles are written as C99 hex-float strings (lossless, byte-stable across
// platforms); readers also accept plain JSON numbers so hand-written config
// files stay ergonomic.
Json double_to_json(double v);
double double_from_json(const Json& v, const std::string& field);

Json step_options_to_json(const grid::StepOptions& opts);
grid::StepOptions step_options_from_json(const Json& j,
                                         grid::StepOptions base = {});

Json env_config_to_json(const env::EnvConfig& cfg);
env::EnvConfig env_config_from_json(const Json& j, env::EnvConfig base = {});

Json fed_config_to_json(const sac::FedConfig& cfg);
sac::FedConfig fed_config_from_json(const Json& j, sac::FedConfig base = {});

Json scenario_config_to_json(const scenario::ScenarioConfig& cfg);
scenario::ScenarioConfig scenario_config_from_json(const Json& j,
                                                   scenario::ScenarioConfig base = {});

// Hyperparameter overlay applied before explicit config fields:
//   desk : replay 5e4, batch 64, 2e4 env steps (laptop scale)
//   paper: replay 1e6, batch 256, 2e5 env steps (published scale)
void apply_profile(const std::string& name, sac::FedConfig& fed);

struct RunConfig {
    std::string network_path;     // grid model JSON; empty = built-in 3-MG model
    std::string train_pool_path;  // empty = generate from `scenario`
    std::string test_pool_path;   // empty = generate from `scenario`
    scenario::ScenarioConfig scenario;
    env::EnvConfig env;
    sac::FedConfig fed;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    std::string profile = "desk";
};

Json run_config_to_json(const RunConfig& cfg);
// Field precedence: profile overlay first, explicit "fed" fields on top.
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::string& path);

// FNV-1a fingerprint of the canonical serialized form; every output file
// carries it so results can be traced to the exact configuration.
std::string config_hash(const RunConfig& cfg);

// Small file helpers shared by the commands.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace fedgrid::config
