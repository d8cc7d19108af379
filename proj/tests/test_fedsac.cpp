#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "fedgrid/fedsac.hpp"
#include "fedgrid/neural.hpp"
#include "fedgrid/util.hpp"
#include "helpers.hpp"

using namespace fedgrid;
using namespace fedgrid::sac;

namespace {

bool nets_equal(const neural::Mlp& a, const neural::Mlp& b) {
    if (a.sizes != b.sizes) return false;
    for (std::size_t l = 0; l < a.w.size(); ++l)
        if (a.w[l] != b.w[l] || a.b[l] != b.b[l]) return false;
    return true;
}

// Constant-output critic: zero weights, output bias = value.
neural::Mlp constant_critic(int obs_dim, double value) {
    neural::Mlp net = neural::make_mlp({obs_dim + 1, 4, 1}, 1);
    for (auto& layer : net.w) std::fill(layer.begin(), layer.end(), 0.0);
    net.b.back()[0] = value;
    return net;
}

FedConfig tiny_cfg() {
    FedConfig cfg;
    cfg.batch = 8;
    cfg.buffer_capacity = 64;
    cfg.warmup_steps = 10;
    cfg.total_steps = 100;
    cfg.hidden = {8};
    return cfg;
}

}  // namespace

TEST_CASE("replay buffer: ring semantics and the stored transitions") {
    ReplayBuffer buf(4, 2);
    CHECK(buf.size() == 0);
    for (int i = 0; i < 6; ++i)
        buf.push({1.0 * i, 2.0 * i}, 0.1 * i, -1.0 * i, {1.0 * i + 0.5, 2.0 * i + 0.5},
                 i % 2 == 1);
    CHECK(buf.size() == 4);  // capacity caps growth

    // After 6 pushes into capacity 4, transitions 2..5 survive.
    std::set<double> seen;
    for (std::size_t i = 0; i < buf.size(); ++i) {
        std::vector<double> obs, next_obs;
        double act, rew, done;
        buf.transition(i, obs, act, rew, next_obs, done);
        REQUIRE(obs.size() == 2);
        CHECK(next_obs[0] == obs[0] + 0.5);
        CHECK(done == ((static_cast<int>(std::round(obs[0])) % 2 == 1) ? 1.0 : 0.0));
        seen.insert(obs[0]);
    }
    CHECK(seen == std::set<double>{2.0, 3.0, 4.0, 5.0});
}

TEST_CASE("replay buffer: uninitialized shell rejects use") {
    ReplayBuffer empty;
    CHECK_THROWS_AS(empty.push({1.0}, 0.0, 0.0, {1.0}, false), RuntimeError);
}

TEST_CASE("replay buffer: sample draws distinct valid rows, deterministically") {
    ReplayBuffer buf(32, 1);
    for (int i = 0; i < 20; ++i)
        buf.push({static_cast<double>(i)}, i * 0.01, -i, {static_cast<double>(i) + 0.5},
                 false);
    std::mt19937_64 r1(5), r2(5);
    Batch b1, b2;
    buf.sample(r1, 8, b1);
    buf.sample(r2, 8, b2);
    REQUIRE(b1.n == 8);
    CHECK(b1.obs == b2.obs);
    CHECK(b1.act == b2.act);
    std::set<double> distinct(b1.obs.begin(), b1.obs.end());
    CHECK(distinct.size() == 8);  // Floyd's algorithm: no repeats
    for (double o : b1.obs) {
        CHECK(o >= 0.0);
        CHECK(o <= 19.0);
    }
    // Batches bigger than the buffer are refused.
    Batch b3;
    std::mt19937_64 r3(1);
    ReplayBuffer small(8, 1);
    small.push({0.0}, 0, 0, {0.0}, false);
    CHECK_THROWS_AS(small.sample(r3, 2, b3), RuntimeError);
}

TEST_CASE("make_agent: shapes, target initialization, determinism") {
    FedConfig cfg = tiny_cfg();
    AgentBundle a = make_agent(6, 0.1, cfg, 77);
    CHECK(a.actor.sizes == std::vector<int>{6, 8, 2});
    CHECK(a.critic1.sizes == std::vector<int>{7, 8, 1});
    CHECK(nets_equal(a.target1, a.critic1));
    CHECK(nets_equal(a.target2, a.critic2));
    CHECK(!nets_equal(a.critic1, a.critic2));  // distinct init streams
    CHECK(a.buffer.capacity() == cfg.buffer_capacity);
    CHECK(a.obs_dim == 6);
    CHECK(a.action_bound == 0.1);

    AgentBundle b = make_agent(6, 0.1, cfg, 77);
    CHECK(nets_equal(a.actor, b.actor));
    AgentBundle c = make_agent(6, 0.1, cfg, 78);
    CHECK(!nets_equal(a.actor, c.actor));
}

TEST_CASE("deterministic head is tanh(mean)*bound") {
    FedConfig cfg = tiny_cfg();
    AgentBundle a = make_agent(3, 0.1, cfg, 9);
    std::vector<double> obs = {1.01, 0.98, 1.0};
    std::vector<double> head = neural::forward(a.actor, obs);
    CHECK(select_action_det(a.actor, obs, 0.1) == 0.1 * std::tanh(head[0]));
    // Stochastic head respects the bound and is deterministic in rng state.
    std::mt19937_64 r1(3), r2(3);
    double u1 = select_action_stoch(a.actor, obs, 0.1, r1);
    double u2 = select_action_stoch(a.actor, obs, 0.1, r2);
    CHECK(u1 == u2);
    CHECK(std::abs(u1) < 0.1);
}

TEST_CASE("target_value: frozen hand case") {
    // y = r + gamma * (min(q1, q2) - zeta_log_pi), not done:
    // -0.1 + 0.99 * (min(-1, -2) - (-0.3)) = -1.783.
    double y = target_value(-0.1, 0.99, 0.0, -1.0, -2.0, -0.3, QMode::kClipped);
    CHECK(y == doctest::Approx(-1.783).epsilon(1e-12));
    // Terminal transition truncates the bootstrap.
    CHECK(target_value(-0.1, 0.99, 1.0, -1.0, -2.0, -0.3, QMode::kClipped) == -0.1);
    // Single-critic mode ignores q2.
    double ys = target_value(-0.1, 0.99, 0.0, -1.0, -999.0, -0.3, QMode::kSingle);
    CHECK(ys == doctest::Approx(-0.1 + 0.99 * (-1.0 + 0.3)).epsilon(1e-12));
}

TEST_CASE("compute_targets: matches an independent recomputation") {
    FedConfig cfg = tiny_cfg();
    AgentBundle agent = make_agent(2, 1.0, cfg, 15);
    // Constant critics make min() visible; keep the real actor for log-pi.
    agent.target1 = constant_critic(2, -1.0);
    agent.target2 = constant_critic(2, -2.0);

    Batch batch;
    batch.n = 4;
    batch.obs_dim = 2;
    batch.obs = {1, 1, 2, 2, 3, 3, 4, 4};
    batch.act = {0.1, -0.1, 0.2, 0.0};
    batch.rew = {-0.1, -0.2, -0.3, -0.4};
    batch.next_obs = {1, 0, 2, 0, 3, 0, 4, 0};
    batch.done = {0.0, 0.0, 1.0, 0.0};

    // The trainer draws target noise from the caller's stream; replicate that
    // draw with an identically-seeded generator.
    std::mt19937_64 rng(21), shadow(21);
    KernelScratch scratch;
    std::vector<double> y = compute_targets(agent, batch, cfg, QMode::kClipped, rng, scratch);
    REQUIRE(y.size() == 4);

    std::vector<double> noise(4);
    for (double& v : noise) v = standard_normal(shadow);
    for (int i = 0; i < 4; ++i) {
        std::vector<double> nobs = {batch.next_obs[2 * i], batch.next_obs[2 * i + 1]};
        std::vector<double> head = neural::forward(agent.actor, nobs);
        neural::SquashResult sq = neural::squashed_gaussian({head[0]}, {head[1]}, {noise[i]});
        double expect = batch.rew[i] +
                        cfg.gamma * (1.0 - batch.done[i]) * (-2.0 - cfg.zeta * sq.log_prob);
        CHECK(y[i] == doctest::Approx(expect).epsilon(1e-12));
    }

    // Single mode keeps only the retained pair's target (pair 1 -> target1).
    std::mt19937_64 rng2(21), shadow2(21);
    std::vector<double> ys = compute_targets(agent, batch, cfg, QMode::kSingle, rng2, scratch);
    std::vector<double> noise2(4);
    for (double& v : noise2) v = standard_normal(shadow2);
    for (int i = 0; i < 4; ++i) {
        std::vector<double> nobs = {batch.next_obs[2 * i], batch.next_obs[2 * i + 1]};
        std::vector<double> head = neural::forward(agent.actor, nobs);
        neural::SquashResult sq =
            neural::squashed_gaussian({head[0]}, {head[1]}, {noise2[i]});
        double expect = batch.rew[i] +
                        cfg.gamma * (1.0 - batch.done[i]) * (-1.0 - cfg.zeta * sq.log_prob);
        CHECK(ys[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("adam: frozen first-step size") {
    // With zero state, one Adam step moves each parameter by
    // -lr * g/(|g| + eps-ish): for g=1, lr=0.1 the move is -0.1/(1+1e-8)-ish.
    neural::Mlp net = neural::make_mlp({1, 1}, 3);
    double before = net.w[0][0];
    neural::Adam opt = neural::make_adam(net);
    neural::Grads g = neural::make_grads(net);
    g.w[0][0] = 1.0;
    neural::adam_step(net, g, opt, 0.1);
    CHECK(net.w[0][0] == doctest::Approx(before - 0.1).epsilon(1e-6));
    CHECK(opt.step == 1);
}

TEST_CASE("polyak_update: both directions") {
    neural::Mlp target = neural::make_mlp({2, 2}, 1);
    neural::Mlp online = neural::make_mlp({2, 2}, 2);
    neural::Mlp t0 = target;

    SUBCASE("standard slow direction") {
        polyak_update(target, online, 0.005, false);
        for (std::size_t l = 0; l < target.w.size(); ++l)
            for (std::size_t i = 0; i < target.w[l].size(); ++i)
                CHECK(target.w[l][i] ==
                      doctest::Approx(0.995 * t0.w[l][i] + 0.005 * online.w[l][i])
                          .epsilon(1e-14));
    }
    SUBCASE("published direction (flag)") {
        polyak_update(target, online, 0.005, true);
        for (std::size_t l = 0; l < target.w.size(); ++l)
            for (std::size_t i = 0; i < target.w[l].size(); ++i)
                CHECK(target.w[l][i] ==
                      doctest::Approx(0.995 * online.w[l][i] + 0.005 * t0.w[l][i])
                          .epsilon(1e-14));
    }
}

TEST_CASE("double_q_mode switches halfway through training") {
    FedConfig cfg;
    cfg.total_steps = 1000;
    CHECK(half_switch_step(cfg) == 500);
    CHECK(double_q_mode(0, cfg) == QMode::kClipped);
    CHECK(double_q_mode(499, cfg) == QMode::kClipped);
    CHECK(double_q_mode(500, cfg) == QMode::kSingle);
    CHECK(double_q_mode(1000, cfg) == QMode::kSingle);
}

TEST_CASE("federated_average: exactness identities") {
    FedConfig cfg = tiny_cfg();
    SUBCASE("identical inputs average to themselves bitwise") {
        neural::Mlp net = neural::make_mlp({3, 8, 1}, 4);
        neural::Mlp avg = federated_average({&net, &net, &net});
        CHECK(nets_equal(avg, net));
    }
    SUBCASE("m=2 centered mean is exact on representable midpoints") {
        neural::Mlp a = neural::make_mlp({1, 1}, 1);
        neural::Mlp b = a;
        a.w[0][0] = 1.0;
        b.w[0][0] = 3.0;
        a.b[0][0] = -0.5;
        b.b[0][0] = -0.5;
        neural::Mlp avg = federated_average({&a, &b});
        CHECK(avg.w[0][0] == 2.0);  // exactly
        CHECK(avg.b[0][0] == -0.5);
    }
    SUBCASE("m=1 is the identity") {
        neural::Mlp net = neural::make_mlp({2, 4, 1}, 9);
        CHECK(nets_equal(federated_average({&net}), net));
    }
    SUBCASE("mismatched shapes are rejected") {
        neural::Mlp a = neural::make_mlp({2, 4, 1}, 1);
        neural::Mlp b = neural::make_mlp({2, 5, 1}, 1);
        CHECK_THROWS_AS(federated_average({&a, &b}), ConfigError);
    }
}

TEST_CASE("broadcast_fed: critics equalize, actors stay local") {
    FedConfig cfg = tiny_cfg();
    std::vector<AgentBundle> agents;
    for (int k = 0; k < 3; ++k) agents.push_back(make_agent(4, 0.1, cfg, 100 + k));
    std::vector<neural::Mlp> actors_before;
    for (const AgentBundle& a : agents) actors_before.push_back(a.actor);

    broadcast_fed(agents, QMode::kClipped, cfg.retained_pair);

    // Pairwise distance between any two agents' critics is exactly zero.
    for (int k = 1; k < 3; ++k) {
        CHECK(nets_equal(agents[0].critic1, agents[k].critic1));
        CHECK(nets_equal(agents[0].critic2, agents[k].critic2));
        CHECK(nets_equal(agents[0].target1, agents[k].target1));
        CHECK(nets_equal(agents[0].target2, agents[k].target2));
    }
    // Actors untouched.
    for (int k = 0; k < 3; ++k) CHECK(nets_equal(agents[k].actor, actors_before[k]));

    // A second broadcast on the already-equal nets is a bitwise no-op.
    std::vector<neural::Mlp> after;
    for (const AgentBundle& a : agents) after.push_back(a.critic1);
    broadcast_fed(agents, QMode::kClipped, cfg.retained_pair);
    for (int k = 0; k < 3; ++k) CHECK(nets_equal(agents[k].critic1, after[k]));
}

TEST_CASE("broadcast_fed: single mode only touches the retained pair") {
    FedConfig cfg = tiny_cfg();
    std::vector<AgentBundle> agents;
    for (int k = 0; k < 2; ++k) agents.push_back(make_agent(4, 0.1, cfg, 200 + k));
    std::vector<neural::Mlp> c2_before;
    for (const AgentBundle& a : agents) c2_before.push_back(a.critic2);

    broadcast_fed(agents, QMode::kSingle, 1);
    CHECK(nets_equal(agents[0].critic1, agents[1].critic1));
    CHECK(nets_equal(agents[0].target1, agents[1].target1));
    // The shelved pair keeps its local parameters.
    for (int k = 0; k < 2; ++k) CHECK(nets_equal(agents[k].critic2, c2_before[k]));
}

TEST_CASE("gradient_round: critic loss drops on a fixed-target regression") {
    // gamma = 0 freezes the Bellman target at the stored reward, turning the
    // critic update into plain regression. Mini-batch losses are noisy, so
    // judge progress on the full stored set before vs after.
    FedConfig cfg = tiny_cfg();
    cfg.batch = 16;
    cfg.gamma = 0.0;
    cfg.lr = 3e-3;
    AgentBundle agent = make_agent(1, 1.0, cfg, 5);
    std::mt19937_64 rng(33);
    Batch full;
    full.n = 64;
    full.obs_dim = 1;
    for (int i = 0; i < 64; ++i) {
        double o = uniform_range(rng, -1.0, 1.0);
        double a = uniform_range(rng, -1.0, 1.0);
        double r = -(o + a) * (o + a);
        agent.buffer.push({o}, a, r, {o}, false);
        full.obs.push_back(o);
        full.act.push_back(a);
        full.rew.push_back(r);
        full.next_obs.push_back(o);
        full.done.push_back(0.0);
    }
    KernelScratch scratch;
    neural::Grads probe = neural::make_grads(agent.critic1);
    double before = critic_grad_batch(agent.critic1, full, full.rew, probe, scratch);
    for (int round = 0; round < 500; ++round) {
        UpdateLosses l = gradient_round(agent, cfg, QMode::kClipped, rng, scratch);
        CHECK(std::isfinite(l.critic1));
        CHECK(std::isfinite(l.actor));
    }
    double after = critic_grad_batch(agent.critic1, full, full.rew, probe, scratch);
    CHECK(after < 0.5 * before);
    CHECK(std::isfinite(after));
}

TEST_CASE("train on the toy env: deterministic and better than random") {
    // Toy-task settings (the 1-D task wants a sharper, faster policy than the
    // grid defaults): smaller entropy weight, larger steps.
    FedConfig cfg = tiny_cfg();
    cfg.total_steps = 1200;
    cfg.warmup_steps = 100;
    cfg.batch = 32;
    cfg.buffer_capacity = 4000;
    cfg.fed_start = 100;
    cfg.fed_interval = 10;
    cfg.zeta = 0.05;
    cfg.lr = 1e-3;
    cfg.hidden = {32, 32};

    ToyEnv env1, env2;
    TrainResult r1 = train(env1, cfg, 42);
    TrainResult r2 = train(env2, cfg, 42);
    REQUIRE(r1.agents.size() == 1);
    CHECK(r1.env_steps == r2.env_steps);
    CHECK(r1.episodes == r2.episodes);
    REQUIRE(r1.metrics.size() == r2.metrics.size());
    for (std::size_t i = 0; i < r1.metrics.size(); ++i) {
        CHECK(std::bit_cast<std::uint64_t>(r1.metrics[i].reward) ==
              std::bit_cast<std::uint64_t>(r2.metrics[i].reward));
        CHECK(std::bit_cast<std::uint64_t>(r1.metrics[i].critic_loss) ==
              std::bit_cast<std::uint64_t>(r2.metrics[i].critic_loss));
    }
    CHECK(nets_equal(r1.agents[0].actor, r2.agents[0].actor));

    // Toy optimum is 11/12 per step; even this short run should beat a
    // zero-action policy's expected 0.604 by a clear margin.
    double score = evaluate_toy(r1.agents[0], 200, 7);
    CHECK(score > 0.7);

    // Live metrics sink receives exactly the final rows.
    ToyEnv env3;
    std::vector<MetricsRow> live;
    TrainResult r3 = train(env3, cfg, 42, &live);
    REQUIRE(live.size() == r3.metrics.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
        CHECK(live[i].episode == r3.metrics[i].episode);
        CHECK(std::bit_cast<std::uint64_t>(live[i].reward) ==
              std::bit_cast<std::uint64_t>(r3.metrics[i].reward));
    }
}

TEST_CASE("train: fed_round_flag marks federation episodes") {
    // Two-agent wrapper around two independent toy tasks so federation has
    // something to average.
    class TwoToy : public RlEnv {
    public:
        int num_agents() const override { return 2; }
        int obs_dim() const override { return 1; }
        double action_bound() const override { return 1.0; }
        std::vector<std::vector<double>> reset(std::mt19937_64& rng) override {
            d_[0] = uniform_range(rng, -1.5, 1.5);
            d_[1] = uniform_range(rng, -1.5, 1.5);
            t_ = 0;
            return {{d_[0]}, {d_[1]}};
        }
        Out step(const std::vector<double>& u) override {
            ++t_;
            Out out;
            out.obs = {{d_[0]}, {d_[1]}};
            out.rewards = {std::max(0.0, 1.0 - std::abs(d_[0] + u[0])),
                           std::max(0.0, 1.0 - std::abs(d_[1] + u[1]))};
            out.done = t_ >= 10;
            return out;
        }

    private:
        double d_[2] = {0, 0};
        int t_ = 0;
    };

    FedConfig cfg = tiny_cfg();
    cfg.total_steps = 300;
    cfg.warmup_steps = 50;
    cfg.batch = 16;
    cfg.fed_start = 100;
    cfg.fed_interval = 10;

    TwoToy env;
    TrainResult r = train(env, cfg, 3);
    bool any_fed = false;
    for (const MetricsRow& row : r.metrics)
        if (row.fed_round_flag) any_fed = true;
    CHECK(any_fed);
    // After the last federated round... critics match only right after a
    // broadcast; instead check the invariant that a fresh broadcast is a
    // fixpoint after averaging.
    broadcast_fed(r.agents, double_q_mode(r.env_steps, cfg), cfg.retained_pair);
    CHECK(nets_equal(r.agents[0].critic1, r.agents[1].critic1));

    // Federation disabled: no flag ever set.
    cfg.federation_enabled = false;
    TwoToy env2;
    TrainResult r2 = train(env2, cfg, 3);
    for (const MetricsRow& row : r2.metrics) CHECK(row.fed_round_flag == 0);
}

TEST_CASE("train: rejects inconsistent configs") {
    ToyEnv env;
    FedConfig cfg = tiny_cfg();
    cfg.batch = 0;
    CHECK_THROWS_AS(train(env, cfg, 1), ConfigError);
    cfg = tiny_cfg();
    cfg.buffer_capacity = 4;  // smaller than batch
    CHECK_THROWS_AS(train(env, cfg, 1), ConfigError);
    cfg = tiny_cfg();
    cfg.total_steps = 0;
    CHECK_THROWS_AS(train(env, cfg, 1), ConfigError);
    cfg = tiny_cfg();
    cfg.retained_pair = 3;
    CHECK_THROWS_AS(train(env, cfg, 1), ConfigError);
}
