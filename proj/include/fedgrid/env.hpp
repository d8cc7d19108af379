#pragma once

#include <string>
#include <vector>

#include "fedgrid/grid.hpp"
#include "fedgrid/scenario.hpp"
#include "fedgrid/util.hpp"

namespace fedgrid::env {

struct EnvConfig {
    int episode_length = 40;
    grid::StepOptions step;                 // dt, substeps, solver tolerances
    std::vector<double> q_weights;          // per monitored bus; empty = all 1.0
    double invalid_penalty = 1.0;           // c
    double action_bound = 0.1;              // p.u. |V_res| limit
    double gate_threshold = 0.02;           // normalized deviation to open gate
    double instability_penalty = 50.0;
    double recovery_threshold = 0.02;       // normalized; evaluation success band
    int recovery_window = 10;               // steps after t_a before success is judged
};

constexpr int kPhases = 3;  // balanced model: each bus magnitude replicated 3x

struct StepResult {
    std::vector<std::vector<double>> obs;   // per agent, length 6
    std::vector<double> rewards;            // per agent
    bool done = false;
    bool attacked_now = false;              // any attack offset active this step
    bool unstable = false;                  // power flow diverged
    std::vector<double> raw_voltages;       // per monitored bus |V|, p.u.
    std::vector<double> actions_raw;        // per agent, post-clamp pre-gate
    std::vector<double> actions_gated;      // per agent, what actually actuated
};

// Piecewise reward for one agent. `v`/`v_ss` hold that agent's monitored
// bus-phase magnitudes (2 buses x 3 phases, raw p.u.). Before and at the
// attack onset the reward is the invalid-action penalty; afterward it is
// minus the weighted per-bus l2 deviation over phases.
double compute_reward(int t, int t_a, const std::vector<double>& v,
                      const std::vector<double>& v_ss,
                      const std::vector<double>& q_weights, double action,
                      const EnvConfig& cfg);

// Elementwise raw / v_ss. Throws RuntimeError on a zero steady-state entry.
std::vector<double> normalize_observation(const std::vector<double>& raw,
                                          const std::vector<double>& v_ss);

// Memoryless gate: zero unless the observation deviates from 1 by at least
// eps somewhere; otherwise the action clamped to [-bound, bound]. The Env
// additionally latches the gate open for the rest of the episode (see
// class comment).
double action_gate(double raw_action, const std::vector<double>& obs, double eps,
                   double bound);

// POMDP wrapper over the grid simulator: per-microgrid observations
// (normalized GFM/GFL bus magnitudes), latched action gates, the piecewise
// reward, and scenario-driven set-point attacks.
//
// Gate latching: the pure `action_gate` is memoryless, but a memoryless gate
// oscillates once a policy can compensate (compensated voltage re-enters the
// band, the gate zeroes the action, the deviation returns). The Env opens an
// agent's gate at the first out-of-band observation and keeps it open for
// the rest of the episode. The policy server mirrors this latch so the wire
// path stays equivalent.
class Env {
public:
    Env(grid::NetworkModel model, EnvConfig cfg);

    int num_agents() const { return static_cast<int>(model_.microgrids.size()); }
    int obs_dim() const { return 2 * kPhases; }
    const grid::NetworkModel& model() const { return model_; }
    const EnvConfig& config() const { return cfg_; }
    // Monitored buses, agent-major: [gfm_0, gfl_0, gfm_1, gfl_1, ...].
    const std::vector<int>& monitored_buses() const { return monitored_buses_; }
    // Steady-state magnitudes per monitored bus-phase (6 per agent).
    const std::vector<double>& v_ss() const { return v_ss_; }
    int time_step() const { return t_; }
    bool done() const { return done_; }
    const std::vector<bool>& gate_latch() const { return latch_; }

    // When enabled, step() ignores the supplied actions and injects the
    // exact negation of the active attack (privileged compensation oracle).
    void set_oracle(bool on) { oracle_ = on; }

    std::vector<std::vector<double>> reset(const scenario::AttackScenario& sc);
    StepResult step(const std::vector<double>& joint_action);

private:
    std::vector<double> monitored_raw() const;
    std::vector<std::vector<double>> observations(const std::vector<double>& raw) const;

    grid::NetworkModel model_;
    EnvConfig cfg_;
    grid::GridState steady_;                // cached settled state
    std::vector<int> monitored_buses_;      // bus ids
    std::vector<int> monitored_bus_idx_;    // indices into model buses
    std::vector<double> v_ss_;

    scenario::AttackScenario scenario_;
    grid::GridState state_;
    std::vector<std::vector<double>> obs_;  // last emitted observations
    std::vector<bool> latch_;
    int t_ = 0;
    bool done_ = true;
    bool oracle_ = false;
};

// One trajectory CSV row per (step, monitored bus); shared by the env
// recorder and the loopback client.
struct TrajectoryRow {
    double time = 0.0;
    int bus = 0;
    double raw_v = 0.0;
    double normalized = 0.0;
    std::vector<double> actions_raw;    // per agent
    std::vector<double> actions_gated;  // per agent
    std::vector<double> rewards;        // per agent
    bool attacked = false;
};

std::string trajectory_csv(const std::vector<TrajectoryRow>& rows, int num_agents);

// Rows for one step result (one per monitored bus); `time` is the post-step
// simulation time. Shared by the in-process recorder and the wire client so
// both emit identical CSV layouts.
std::vector<TrajectoryRow> step_rows(const Env& env, const StepResult& res, double time);

}  // namespace fedgrid::env
