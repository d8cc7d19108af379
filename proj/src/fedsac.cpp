#include "fedgrid/fedsac.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "fedgrid/parallel.hpp"

namespace fedgrid::sac {

int half_switch_step(const FedConfig& cfg) { return cfg.total_steps / 2; }

QMode double_q_mode(int env_step, const FedConfig& cfg) {
    return env_step < half_switch_step(cfg) ? QMode::kClipped : QMode::kSingle;
}

// ---------------------------------------------------------------------------
// Replay buffer

ReplayBuffer::ReplayBuffer(std::size_t capacity, int obs_dim)
    : capacity_(capacity), obs_dim_(obs_dim) {
    if (capacity_ == 0 || obs_dim_ <= 0)
        throw ConfigError("replay buffer needs capacity > 0 and obs_dim > 0");
    obs_.reserve(std::min<std::size_t>(capacity_, 4096) * obs_dim_);
}

void ReplayBuffer::push(const std::vector<double>& obs, double act, double rew,
                        const std::vector<double>& next_obs, bool done) {
    if (capacity_ == 0) throw RuntimeError("push() on an uninitialized replay buffer");
    if (obs.size() != static_cast<std::size_t>(obs_dim_) ||
        next_obs.size() != static_cast<std::size_t>(obs_dim_))
        throw ConfigError("replay push: observation width mismatch");
    if (size_ < capacity_) {
        obs_.insert(obs_.end(), obs.begin(), obs.end());
        next_obs_.insert(next_obs_.end(), next_obs.begin(), next_obs.end());
        act_.push_back(act);
        rew_.push_back(rew);
        done_.push_back(done ? 1.0 : 0.0);
        ++size_;
        head_ = size_ % capacity_;
    } else {
        std::copy(obs.begin(), obs.end(), obs_.begin() + head_ * obs_dim_);
        std::copy(next_obs.begin(), next_obs.end(), next_obs_.begin() + head_ * obs_dim_);
        act_[head_] = act;
        rew_[head_] = rew;
        done_[head_] = done ? 1.0 : 0.0;
        head_ = (head_ + 1) % capacity_;
    }
}

void ReplayBuffer::sample(std::mt19937_64& rng, int n, Batch& out) const {
    if (n <= 0) throw ConfigError("replay sample: n must be positive");
    if (static_cast<std::size_t>(n) > size_)
        throw RuntimeError("replay sample: not enough stored transitions");
    // Floyd's algorithm: n distinct indices, one generator call each. Storage
    // position is a bijection onto live slots, so sampling positions uniformly
    // is sampling transitions uniformly.
    std::unordered_set<std::size_t> chosen;
    std::vector<std::size_t> order;
    order.reserve(n);
    for (std::size_t i = size_ - n; i < size_; ++i) {
        std::size_t j = rng() % (i + 1);
        if (chosen.count(j)) j = i;
        chosen.insert(j);
        order.push_back(j);
    }
    out.n = n;
    out.obs_dim = obs_dim_;
    out.obs.resize(static_cast<std::size_t>(n) * obs_dim_);
    out.next_obs.resize(static_cast<std::size_t>(n) * obs_dim_);
    out.act.resize(n);
    out.rew.resize(n);
    out.done.resize(n);
    for (int r = 0; r < n; ++r) {
        std::size_t idx = order[r];
        std::copy_n(obs_.begin() + idx * obs_dim_, obs_dim_, out.obs.begin() + r * obs_dim_);
        std::copy_n(next_obs_.begin() + idx * obs_dim_, obs_dim_,
                    out.next_obs.begin() + r * obs_dim_);
        out.act[r] = act_[idx];
        out.rew[r] = rew_[idx];
        out.done[r] = done_[idx];
    }
}

void ReplayBuffer::transition(std::size_t i, std::vector<double>& obs, double& act,
                              double& rew, std::vector<double>& next_obs,
                              double& done) const {
    if (i >= size_) throw ConfigError("replay transition: index out of range");
    obs.assign(obs_.begin() + i * obs_dim_, obs_.begin() + (i + 1) * obs_dim_);
    next_obs.assign(next_obs_.begin() + i * obs_dim_, next_obs_.begin() + (i + 1) * obs_dim_);
    act = act_[i];
    rew = rew_[i];
    done = done_[i];
}

// ---------------------------------------------------------------------------
// Agents

AgentBundle make_agent(int obs_dim, double action_bound, const FedConfig& cfg,
                       std::uint64_t seed) {
    if (obs_dim <= 0) throw ConfigError("make_agent: obs_dim must be positive");
    if (!(action_bound > 0.0)) throw ConfigError("make_agent: action bound must be positive");
    std::vector<int> actor_sizes{obs_dim};
    std::vector<int> critic_sizes{obs_dim + 1};
    for (int h : cfg.hidden) {
        if (h <= 0) throw ConfigError("make_agent: hidden widths must be positive");
        actor_sizes.push_back(h);
        critic_sizes.push_back(h);
    }
    actor_sizes.push_back(2);   // (mean, log_std)
    critic_sizes.push_back(1);  // scalar Q

    AgentBundle a;
    a.actor = neural::make_mlp(actor_sizes, mix_seed(seed, 0));
    a.critic1 = neural::make_mlp(critic_sizes, mix_seed(seed, 1));
    a.critic2 = neural::make_mlp(critic_sizes, mix_seed(seed, 2));
    a.target1 = a.critic1;
    a.target2 = a.critic2;
    a.actor_opt = neural::make_adam(a.actor);
    a.critic1_opt = neural::make_adam(a.critic1);
    a.critic2_opt = neural::make_adam(a.critic2);
    a.buffer = ReplayBuffer(cfg.buffer_capacity, obs_dim);
    a.obs_dim = obs_dim;
    a.action_bound = action_bound;
    return a;
}

double select_action_det(const neural::Mlp& actor, const std::vector<double>& obs,
                         double bound) {
    std::vector<double> head = neural::forward(actor, obs);
    neural::SquashResult r = neural::squashed_gaussian({head[0]}, {head[1]}, {0.0});
    return r.action[0] * bound;
}

double select_action_stoch(const neural::Mlp& actor, const std::vector<double>& obs,
                           double bound, std::mt19937_64& rng) {
    std::vector<double> head = neural::forward(actor, obs);
    double eps = standard_normal(rng);
    neural::SquashResult r = neural::squashed_gaussian({head[0]}, {head[1]}, {eps});
    return r.action[0] * bound;
}

// ---------------------------------------------------------------------------
// Updates

double target_value(double r, double gamma, double done, double q1_tar, double q2_tar,
                    double zeta_log_pi, QMode mode) {
    double q_tar = mode == QMode::kClipped ? std::min(q1_tar, q2_tar) : q1_tar;
    return r + gamma * (1.0 - done) * (q_tar - zeta_log_pi);
}

std::vector<double> compute_targets(const AgentBundle& agent, const Batch& batch,
                                    const FedConfig& cfg, QMode mode,
                                    std::mt19937_64& rng, KernelScratch& scratch) {
    const int n = batch.n;
    std::vector<double> noise(n);
    for (int i = 0; i < n; ++i) noise[i] = standard_normal(rng);

    std::vector<double> next_act, next_logp;
    policy_batch(agent.actor, batch.next_obs, n, batch.obs_dim, noise, agent.action_bound,
                 next_act, next_logp, scratch);

    std::vector<double> q1t, q2t;
    if (mode == QMode::kClipped) {
        q_batch(agent.target1, batch.next_obs, next_act, n, batch.obs_dim, q1t, scratch);
        q_batch(agent.target2, batch.next_obs, next_act, n, batch.obs_dim, q2t, scratch);
    } else {
        const neural::Mlp& kept = cfg.retained_pair == 2 ? agent.target2 : agent.target1;
        q_batch(kept, batch.next_obs, next_act, n, batch.obs_dim, q1t, scratch);
        q2t.assign(n, 0.0);
    }

    std::vector<double> y(n);
    for (int i = 0; i < n; ++i)
        y[i] = target_value(batch.rew[i], cfg.gamma, batch.done[i], q1t[i], q2t[i],
                            cfg.zeta * next_logp[i], mode);
    return y;
}

void polyak_update(neural::Mlp& target, const neural::Mlp& online, double rho_mix,
                   bool paper_direction) {
    if (target.sizes != online.sizes)
        throw RuntimeError("polyak_update: mismatched network shapes");
    for (int l = 0; l < target.num_layers(); ++l) {
        for (std::size_t i = 0; i < target.w[l].size(); ++i)
            target.w[l][i] = paper_direction
                                 ? (1.0 - rho_mix) * online.w[l][i] + rho_mix * target.w[l][i]
                                 : (1.0 - rho_mix) * target.w[l][i] + rho_mix * online.w[l][i];
        for (std::size_t i = 0; i < target.b[l].size(); ++i)
            target.b[l][i] = paper_direction
                                 ? (1.0 - rho_mix) * online.b[l][i] + rho_mix * target.b[l][i]
                                 : (1.0 - rho_mix) * target.b[l][i] + rho_mix * online.b[l][i];
    }
}

UpdateLosses gradient_round(AgentBundle& agent, const FedConfig& cfg, QMode mode,
                            std::mt19937_64& rng, KernelScratch& scratch) {
    if (agent.buffer.size() < static_cast<std::size_t>(cfg.batch))
        throw RuntimeError("gradient_round: replay buffer smaller than the batch size");
    // Draw order is part of the contract: batch indices, then target-policy
    // noise, then actor noise — all from the caller's stream.
    Batch batch;
    agent.buffer.sample(rng, cfg.batch, batch);
    std::vector<double> y = compute_targets(agent, batch, cfg, mode, rng, scratch);

    UpdateLosses losses;
    const bool both = mode == QMode::kClipped;
    const bool keep1 = both || cfg.retained_pair == 1;
    const bool keep2 = both || cfg.retained_pair == 2;

    neural::Grads g = neural::make_grads(agent.critic1);
    if (keep1) {
        losses.critic1 = critic_grad_batch(agent.critic1, batch, y, g, scratch);
        neural::adam_step(agent.critic1, g, agent.critic1_opt, cfg.lr);
    }
    if (keep2) {
        losses.critic2 = critic_grad_batch(agent.critic2, batch, y, g, scratch);
        neural::adam_step(agent.critic2, g, agent.critic2_opt, cfg.lr);
    }

    std::vector<double> actor_noise(batch.n);
    for (int i = 0; i < batch.n; ++i) actor_noise[i] = standard_normal(rng);
    const neural::Mlp& q_a = keep1 ? agent.critic1 : agent.critic2;
    const neural::Mlp* q_b = both ? &agent.critic2 : nullptr;
    neural::Grads ga = neural::make_grads(agent.actor);
    losses.actor = actor_grad_batch(agent.actor, q_a, q_b, batch.obs, batch.n,
                                    batch.obs_dim, actor_noise, cfg.zeta,
                                    agent.action_bound, ga, scratch);
    neural::adam_step(agent.actor, ga, agent.actor_opt, cfg.lr);

    if (keep1)
        polyak_update(agent.target1, agent.critic1, cfg.rho_mix, cfg.polyak_paper_direction);
    if (keep2)
        polyak_update(agent.target2, agent.critic2, cfg.rho_mix, cfg.polyak_paper_direction);
    return losses;
}

// ---------------------------------------------------------------------------
// Federation

neural::Mlp federated_average(const std::vector<const neural::Mlp*>& params) {
    if (params.empty()) throw ConfigError("federated_average: no networks given");
    const std::size_t m = params.size();
    neural::Mlp mean = *params[0];
    for (const neural::Mlp* p : params)
        if (p->sizes != mean.sizes)
            throw ConfigError("federated_average: mismatched network shapes");
    if (m == 1) return mean;
    // Centered mean: pivot + (sum of differences) / m. Exact identity when all
    // inputs are equal (every difference is exactly zero), plain elementwise
    // mean otherwise.
    const double inv_m = 1.0 / static_cast<double>(m);
    for (int l = 0; l < mean.num_layers(); ++l) {
        for (std::size_t i = 0; i < mean.w[l].size(); ++i) {
            const double pivot = params[0]->w[l][i];
            double acc = 0.0;
            for (std::size_t k = 1; k < m; ++k) acc += params[k]->w[l][i] - pivot;
            mean.w[l][i] = pivot + acc * inv_m;
        }
        for (std::size_t i = 0; i < mean.b[l].size(); ++i) {
            const double pivot = params[0]->b[l][i];
            double acc = 0.0;
            for (std::size_t k = 1; k < m; ++k) acc += params[k]->b[l][i] - pivot;
            mean.b[l][i] = pivot + acc * inv_m;
        }
    }
    return mean;
}

void broadcast_fed(std::vector<AgentBundle>& agents, QMode mode, int retained_pair) {
    if (agents.size() < 2) return;  // single-microgrid runs have nothing to mix
    auto mix = [&agents](neural::Mlp AgentBundle::* member) {
        std::vector<const neural::Mlp*> nets;
        nets.reserve(agents.size());
        for (const AgentBundle& a : agents) nets.push_back(&(a.*member));
        neural::Mlp mean = federated_average(nets);
        for (AgentBundle& a : agents) a.*member = mean;
    };
    const bool both = mode == QMode::kClipped;
    if (both || retained_pair == 1) {
        mix(&AgentBundle::critic1);
        mix(&AgentBundle::target1);
    }
    if (both || retained_pair == 2) {
        mix(&AgentBundle::critic2);
        mix(&AgentBundle::target2);
    }
}

// ---------------------------------------------------------------------------
// Toy environment

std::vector<std::vector<double>> ToyEnv::reset(std::mt19937_64& rng) {
    d_ = uniform_range(rng, -1.5, 1.5);
    t_ = 0;
    return {{d_}};
}

RlEnv::Out ToyEnv::step(const std::vector<double>& joint_action) {
    if (joint_action.size() != 1) throw ConfigError("toy env expects exactly one action");
    double u = clamp(joint_action[0], -1.0, 1.0);
    double r = std::max(0.0, 1.0 - std::abs(d_ + u));
    ++t_;
    return {{{d_}}, {r}, t_ >= kEpisodeLen};
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(RlEnv& env, const FedConfig& cfg, std::uint64_t seed,
                  std::vector<MetricsRow>* live_metrics) {
    const int m = env.num_agents();
    const int obs_dim = env.obs_dim();
    const double bound = env.action_bound();
    if (m < 1) throw ConfigError("train: environment reports no agents");
    if (cfg.batch < 1) throw ConfigError("train: batch size must be positive");
    if (cfg.buffer_capacity < static_cast<std::size_t>(cfg.batch))
        throw ConfigError("train: buffer capacity smaller than the batch size");
    if (cfg.total_steps < 1) throw ConfigError("train: total_steps must be positive");
    if (cfg.retained_pair != 1 && cfg.retained_pair != 2)
        throw ConfigError("train: retained_pair must be 1 or 2");
    if (cfg.fed_interval < 1) throw ConfigError("train: fed_interval must be >= 1");

    TrainResult result;
    result.agents.reserve(m);
    for (int k = 0; k < m; ++k)
        result.agents.push_back(make_agent(obs_dim, bound, cfg, mix_seed(seed, 1000 + k)));

    // Independent, fixed-purpose streams so the trace does not depend on
    // incidental call order.
    std::mt19937_64 scenario_rng(mix_seed(seed, 1));
    std::mt19937_64 warmup_rng(mix_seed(seed, 2));
    std::vector<std::mt19937_64> action_rng, update_rng;
    for (int k = 0; k < m; ++k) {
        action_rng.emplace_back(mix_seed(seed, 10 + static_cast<std::uint64_t>(k)));
        update_rng.emplace_back(mix_seed(seed, 100 + static_cast<std::uint64_t>(k)));
    }

    KernelScratch scratch;
    std::vector<double> actions(m);
    int env_steps = 0;
    int episode = 0;

    while (env_steps < cfg.total_steps) {
        std::vector<std::vector<double>> obs = env.reset(scenario_rng);
        std::vector<double> ep_reward(m, 0.0), ep_closs(m, 0.0), ep_aloss(m, 0.0);
        int ep_updates = 0;
        bool ep_fed = false;
        bool done = false;

        while (!done) {
            for (int k = 0; k < m; ++k) {
                if (env_steps < cfg.warmup_steps)
                    actions[k] = uniform_range(warmup_rng, -bound, bound);
                else
                    actions[k] = select_action_stoch(result.agents[k].actor, obs[k], bound,
                                                     action_rng[k]);
            }
            RlEnv::Out out = env.step(actions);
            for (int k = 0; k < m; ++k) {
                result.agents[k].buffer.push(obs[k], actions[k], out.rewards[k], out.obs[k],
                                             out.done);
                ep_reward[k] += out.rewards[k];
            }
            obs = out.obs;
            done = out.done;
            ++env_steps;

            bool can_update = env_steps >= cfg.warmup_steps;
            for (int k = 0; k < m && can_update; ++k)
                if (result.agents[k].buffer.size() < static_cast<std::size_t>(cfg.batch))
                    can_update = false;
            const QMode mode = double_q_mode(env_steps, cfg);
            if (can_update) {
                for (int k = 0; k < m; ++k) {
                    UpdateLosses l = gradient_round(result.agents[k], cfg, mode,
                                                    update_rng[k], scratch);
                    ep_closs[k] += mode == QMode::kClipped
                                       ? 0.5 * (l.critic1 + l.critic2)
                                       : (cfg.retained_pair == 2 ? l.critic2 : l.critic1);
                    ep_aloss[k] += l.actor;
                }
                ++ep_updates;
            }
            if (cfg.federation_enabled && m > 1 && env_steps >= cfg.fed_start &&
                (env_steps - cfg.fed_start) % cfg.fed_interval == 0) {
                broadcast_fed(result.agents, mode, cfg.retained_pair);
                ep_fed = true;
            }
        }

        for (int k = 0; k < m; ++k) {
            MetricsRow row;
            row.episode = episode;
            row.agent = k;
            row.reward = ep_reward[k];
            row.critic_loss = ep_updates > 0 ? ep_closs[k] / ep_updates : 0.0;
            row.actor_loss = ep_updates > 0 ? ep_aloss[k] / ep_updates : 0.0;
            row.fed_round_flag = ep_fed ? 1 : 0;
            result.metrics.push_back(row);
            if (live_metrics) live_metrics->push_back(row);
        }
        ++episode;
    }

    result.env_steps = env_steps;
    result.episodes = episode;
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate(const std::vector<AgentBundle>& agents, const env::Env& proto_env,
                    const scenario::ScenarioPool& pool, const EvalOptions& opts) {
    const int m = proto_env.num_agents();
    const bool policy_driven = !opts.oracle && !opts.zero_action;
    if (policy_driven && static_cast<int>(agents.size()) != m)
        throw ConfigError("evaluate: need one trained agent per microgrid");
    if (opts.hist_bins < 1 || !(opts.hist_hi > opts.hist_lo))
        throw ConfigError("evaluate: bad histogram bounds");

    const int n_scen = static_cast<int>(pool.scenarios.size());
    EvalResult res;
    res.outcomes.resize(n_scen);

    // Parallel over scenarios; each iteration owns a private environment copy
    // and writes only its own slot, so results are identical for any thread
    // count.
    parallel_for(n_scen, [&](int si) {
        env::Env sim = proto_env;
        sim.set_oracle(opts.oracle);
        const scenario::AttackScenario& sc = pool.scenarios[si];
        std::vector<std::vector<double>> obs = sim.reset(sc);

        ScenarioOutcome outc;
        outc.scenario_id = sc.id;
        outc.rewards.assign(m, 0.0);
        std::vector<bool> settled(m, true);
        const int settle_from = sc.t_a + sim.config().recovery_window;
        std::vector<double> actions(m, 0.0);

        while (!sim.done()) {
            if (policy_driven)
                for (int k = 0; k < m; ++k)
                    actions[k] = select_action_det(agents[k].actor, obs[k],
                                                   sim.config().action_bound);
            env::StepResult sr = sim.step(actions);
            for (int k = 0; k < m; ++k) outc.rewards[k] += sr.rewards[k];
            if (sr.unstable) outc.unstable = true;
            if (sim.time_step() >= settle_from) {
                for (int k = 0; k < m; ++k) {
                    double worst = 0.0;
                    for (double o : sr.obs[k]) worst = std::max(worst, std::abs(o - 1.0));
                    if (worst >= sim.config().recovery_threshold) settled[k] = false;
                }
            }
            obs = sr.obs;
        }
        if (outc.unstable) settled.assign(m, false);
        outc.success = settled;
        res.outcomes[si] = std::move(outc);
    });

    res.mean_reward.assign(m, 0.0);
    res.success_rate.assign(m, 0.0);
    res.hist_edges.resize(opts.hist_bins + 1);
    for (int b = 0; b <= opts.hist_bins; ++b)
        res.hist_edges[b] =
            opts.hist_lo + (opts.hist_hi - opts.hist_lo) * b / opts.hist_bins;
    res.hist_counts.assign(m, std::vector<int>(opts.hist_bins, 0));

    for (const ScenarioOutcome& o : res.outcomes) {
        for (int k = 0; k < m; ++k) {
            res.mean_reward[k] += o.rewards[k];
            if (o.success[k]) res.success_rate[k] += 1.0;
            int bin = static_cast<int>(std::floor((o.rewards[k] - opts.hist_lo) /
                                                  (opts.hist_hi - opts.hist_lo) *
                                                  opts.hist_bins));
            bin = std::max(0, std::min(opts.hist_bins - 1, bin));  // edge bins absorb
            ++res.hist_counts[k][bin];
        }
    }
    if (n_scen > 0) {
        for (int k = 0; k < m; ++k) {
            res.mean_reward[k] /= n_scen;
            res.success_rate[k] /= n_scen;
        }
    }
    return res;
}

double evaluate_toy(const AgentBundle& agent, int episodes, std::uint64_t seed) {
    ToyEnv toy;
    std::mt19937_64 rng(mix_seed(seed, 7));
    double total = 0.0;
    long steps = 0;
    for (int e = 0; e < episodes; ++e) {
        std::vector<std::vector<double>> obs = toy.reset(rng);
        bool done = false;
        while (!done) {
            double a = select_action_det(agent.actor, obs[0], agent.action_bound);
            RlEnv::Out out = toy.step({a});
            total += out.rewards[0];
            ++steps;
            obs = out.obs;
            done = out.done;
        }
    }
    return steps > 0 ? total / steps : 0.0;
}

}  // namespace fedgrid::sac
