#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedgrid/checkpoint.hpp"
#include "fedgrid/config.hpp"
#include "fedgrid/env.hpp"
#include "fedgrid/fedsac.hpp"
#include "fedgrid/scenario.hpp"

namespace fedgrid::runner {

// Parsed command line (thin layer so every command is testable in-process).
struct CliArgs {
    std::string command;          // gen-scenarios | train | eval | serve | replay
    std::string config_path;      // --config
    std::string out_dir;          // --out (overrides config)
    std::string profile;          // --profile (overrides config)
    std::string baseline;         // --baseline decentralized (train)
    std::vector<std::string> compare;  // --compare no_control|oracle (eval)
    std::string bind_addr;        // --bind host:port (serve)
    std::string connect_addr;     // --connect host:port (replay: external server)
    std::string checkpoint_path;  // positional for eval/serve/replay
    int scenario_id = -1;         // --scenario (replay): test-pool id; -1 = HIL
    std::uint64_t seed = 0;       // --seed (overrides config)
    bool seed_set = false;
};

// Shared plumbing, exposed for tests.
grid::NetworkModel load_network(const config::RunConfig& cfg);
scenario::ScenarioConfig resolve_scenario_config(const config::RunConfig& cfg,
                                                 const grid::NetworkModel& model);
scenario::ScenarioPool resolve_pool(const config::RunConfig& cfg,
                                    const grid::NetworkModel& model,
                                    scenario::PoolKind kind);
config::RunConfig load_config_with_overrides(const CliArgs& args);
std::string metrics_csv(const std::vector<sac::MetricsRow>& rows,
                        const std::string& cfg_hash);

// Deterministic in-process episode with the trained policy; the exact drive
// loop the wire replay is compared against.
struct EpisodeRecord {
    std::vector<env::TrajectoryRow> rows;
    std::vector<std::vector<double>> gated_actions;  // per step, per agent
    std::vector<std::vector<double>> final_obs;
    bool unstable = false;
};
EpisodeRecord run_episode_record(env::Env& env, const std::vector<sac::AgentBundle>& agents,
                                 const scenario::AttackScenario& sc);

// Commands: return process exit codes (0 ok, 1 config error, 2 runtime).
int cmd_gen_scenarios(const CliArgs& args);
int cmd_train(const CliArgs& args);
int cmd_eval(const CliArgs& args);
int cmd_serve(const CliArgs& args);
int cmd_replay(const CliArgs& args);

// Full CLI entry: parse argv, dispatch, map exceptions to exit codes.
int dispatch(int argc, const char* const* argv);

}  // namespace fedgrid::runner
