#include "fedgrid/env.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fedgrid::env {

double compute_reward(int t, int t_a, const std::vector<double>& v,
                      const std::vector<double>& v_ss,
                      const std::vector<double>& q_weights, double action,
                      const EnvConfig& cfg) {
    if (v.size() != v_ss.size())
        throw ConfigError("compute_reward: voltage vectors differ in length");
    if (t <= t_a) {
        bool invalid = std::abs(action) > 1e-9;
        return invalid ? -cfg.invalid_penalty : 0.0;
    }
    const std::size_t buses = v.size() / kPhases;
    double total = 0.0;
    for (std::size_t b = 0; b < buses; ++b) {
        double sq = 0.0;
        for (int p = 0; p < kPhases; ++p) {
            double dv = v[b * kPhases + p] - v_ss[b * kPhases + p];
            sq += dv * dv;
        }
        double w = b < q_weights.size() ? q_weights[b] : 1.0;
        total += w * std::sqrt(sq);
    }
    return -total;
}

std::vector<double> normalize_observation(const std::vector<double>& raw,
                                          const std::vector<double>& v_ss) {
    if (raw.size() != v_ss.size())
        throw ConfigError("normalize_observation: length mismatch");
    std::vector<double> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (v_ss[i] == 0.0)
            throw RuntimeError("normalize_observation: zero steady-state entry");
        out[i] = raw[i] / v_ss[i];
    }
    return out;
}

double action_gate(double raw_action, const std::vector<double>& obs, double eps,
                   double bound) {
    double worst = 0.0;
    for (double o : obs) worst = std::max(worst, std::abs(o - 1.0));
    if (worst < eps) return 0.0;
    return clamp(raw_action, -bound, bound);
}

Env::Env(grid::NetworkModel model, EnvConfig cfg)
    : model_(std::move(model)), cfg_(std::move(cfg)) {
    grid::validate(model_);
    if (model_.microgrids.empty())
        throw ConfigError("environment needs at least one microgrid definition");
    for (const auto& mg : model_.microgrids) {
        int gfm_bus = model_.devices[mg.gfm_device].bus;
        int gfl_bus = model_.devices[mg.gfl_device].bus;
        monitored_buses_.push_back(gfm_bus);
        monitored_buses_.push_back(gfl_bus);
        monitored_bus_idx_.push_back(model_.bus_index(gfm_bus));
        monitored_bus_idx_.push_back(model_.bus_index(gfl_bus));
    }
    grid::SteadyStateOptions sso;
    sso.step = cfg_.step;
    steady_ = grid::steady_state(model_, sso);
    state_ = steady_;
    v_ss_ = monitored_raw();
    for (double v : v_ss_)
        if (v <= 0.0) throw RuntimeError("steady state produced a non-positive voltage");
}

std::vector<double> Env::monitored_raw() const {
    std::vector<double> out;
    out.reserve(monitored_bus_idx_.size() * kPhases);
    for (int idx : monitored_bus_idx_) {
        double mag = std::abs(state_.bus_v[idx]);
        for (int p = 0; p < kPhases; ++p) out.push_back(mag);
    }
    return out;
}

std::vector<std::vector<double>> Env::observations(const std::vector<double>& raw) const {
    std::vector<double> norm = normalize_observation(raw, v_ss_);
    std::vector<std::vector<double>> per_agent(num_agents());
    for (int k = 0; k < num_agents(); ++k)
        per_agent[k].assign(norm.begin() + k * obs_dim(),
                            norm.begin() + (k + 1) * obs_dim());
    return per_agent;
}

std::vector<std::vector<double>> Env::reset(const scenario::AttackScenario& sc) {
    for (int bus : sc.target_buses) {
        int dev = model_.device_at_bus(bus);
        if (dev < 0 || model_.devices[dev].kind != grid::DeviceKind::kGfm)
            throw ConfigError("scenario targets bus " + std::to_string(bus) +
                              " which hosts no GFM device");
    }
    if (sc.t_a < 0) throw ConfigError("scenario onset must be non-negative");
    if (!sc.onsets.empty()) {
        if (sc.onsets.size() != sc.target_buses.size())
            throw ConfigError("scenario onsets must match target count");
        int earliest = sc.onsets.front();
        for (int o : sc.onsets) {
            if (o < 0) throw ConfigError("scenario onsets must be non-negative");
            earliest = std::min(earliest, o);
        }
        if (earliest != sc.t_a)
            throw ConfigError("scenario t_a must equal the earliest staggered onset");
    }
    scenario_ = sc;
    state_ = steady_;
    t_ = 0;
    done_ = false;
    latch_.assign(static_cast<std::size_t>(num_agents()), false);
    obs_ = observations(monitored_raw());
    return obs_;
}

StepResult Env::step(const std::vector<double>& joint_action) {
    if (done_) throw RuntimeError("step() called on a finished episode");
    if (joint_action.size() != static_cast<std::size_t>(num_agents()))
        throw ConfigError("joint action has wrong agent count");

    StepResult res;
    res.actions_raw.resize(num_agents());
    res.actions_gated.resize(num_agents());

    // Gate on the observation the policy acted on; latch stays open.
    for (int k = 0; k < num_agents(); ++k) {
        double raw = clamp(joint_action[k], -cfg_.action_bound, cfg_.action_bound);
        res.actions_raw[k] = raw;
        double worst = 0.0;
        for (double o : obs_[k]) worst = std::max(worst, std::abs(o - 1.0));
        if (worst >= cfg_.gate_threshold) latch_[k] = true;
        res.actions_gated[k] = latch_[k] ? raw : 0.0;
    }

    std::vector<double> attack =
        scenario::attack_signal(scenario_, t_, monitored_buses_);
    grid::SetpointInputs inputs =
        grid::SetpointInputs::zeros(static_cast<int>(model_.devices.size()));
    res.attacked_now = false;
    for (int k = 0; k < num_agents(); ++k) {
        const auto& mg = model_.microgrids[k];
        double a = attack[2 * k];  // monitored order is [gfm, gfl] per agent
        if (a != 0.0) res.attacked_now = true;
        inputs.v_attack[mg.gfm_device] = a;
        // The privileged oracle injects the exact negation, bypassing the
        // policy, the gate, and the action bound.
        inputs.v_res[mg.gfm_device] = oracle_ ? -a : res.actions_gated[k];
    }

    bool diverged = false;
    try {
        grid::step_dynamics(model_, state_, inputs, cfg_.step);
    } catch (const grid::PowerFlowError&) {
        diverged = true;
    }

    res.rewards.assign(static_cast<std::size_t>(num_agents()), 0.0);
    if (diverged) {
        res.unstable = true;
        res.done = true;
        for (auto& r : res.rewards) r = -cfg_.instability_penalty;
        res.raw_voltages.assign(monitored_bus_idx_.size(), 0.0);
        res.obs = obs_;  // state is invalid; re-emit the last valid view
        done_ = true;
        return res;
    }

    std::vector<double> raw = monitored_raw();
    for (int k = 0; k < num_agents(); ++k) {
        std::vector<double> v(raw.begin() + k * obs_dim(),
                              raw.begin() + (k + 1) * obs_dim());
        std::vector<double> vss(v_ss_.begin() + k * obs_dim(),
                                v_ss_.begin() + (k + 1) * obs_dim());
        std::vector<double> qw;
        for (int b = 0; b < 2; ++b) {
            std::size_t idx = static_cast<std::size_t>(2 * k + b);
            qw.push_back(idx < cfg_.q_weights.size() ? cfg_.q_weights[idx] : 1.0);
        }
        double action_for_reward = oracle_ ? 0.0 : res.actions_gated[k];
        res.rewards[k] =
            compute_reward(t_, scenario_.t_a, v, vss, qw, action_for_reward, cfg_);
    }

    res.raw_voltages.clear();
    for (std::size_t i = 0; i < monitored_bus_idx_.size(); ++i)
        res.raw_voltages.push_back(raw[i * kPhases]);

    ++t_;
    res.done = t_ >= cfg_.episode_length;
    done_ = res.done;
    obs_ = observations(raw);
    res.obs = obs_;
    return res;
}

std::vector<TrajectoryRow> step_rows(const Env& env, const StepResult& res, double time) {
    std::vector<TrajectoryRow> rows;
    const std::vector<int>& buses = env.monitored_buses();
    rows.reserve(buses.size());
    for (std::size_t b = 0; b < buses.size(); ++b) {
        TrajectoryRow row;
        row.time = time;
        row.bus = buses[b];
        row.raw_v = b < res.raw_voltages.size() ? res.raw_voltages[b] : 0.0;
        row.normalized = res.obs[b / 2][(b % 2) * kPhases];
        row.actions_raw = res.actions_raw;
        row.actions_gated = res.actions_gated;
        row.rewards = res.rewards;
        row.attacked = res.attacked_now;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string trajectory_csv(const std::vector<TrajectoryRow>& rows, int num_agents) {
    std::ostringstream out;
    out << "time,bus,raw_v,normalized";
    for (int k = 0; k < num_agents; ++k)
        out << ",action_raw_" << k << ",action_gated_" << k << ",reward_" << k;
    out << ",attacked\n";
    for (const auto& r : rows) {
        out << format_double(r.time) << ',' << r.bus << ',' << format_double(r.raw_v)
            << ',' << format_double(r.normalized);
        for (int k = 0; k < num_agents; ++k) {
            auto at = [&](const std::vector<double>& v) {
                return k < static_cast<int>(v.size()) ? v[k] : 0.0;
            };
            out << ',' << format_double(at(r.actions_raw)) << ','
                << format_double(at(r.actions_gated)) << ','
                << format_double(at(r.rewards));
        }
        out << ',' << (r.attacked ? 1 : 0) << '\n';
    }
    return out.str();
}

}  // namespace fedgrid::env
