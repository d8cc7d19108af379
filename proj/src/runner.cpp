#include "fedgrid/runner.hpp"

#include <bit>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "fedgrid/log.hpp"
#include "fedgrid/serve.hpp"

namespace fedgrid::runner {

namespace fs = std::filesystem;
using config::Json;

grid::NetworkModel load_network(const config::RunConfig& cfg) {
    if (cfg.network_path.empty()) return grid::nm3_network();
    return grid::network_from_json(config::read_text_file(cfg.network_path));
}

scenario::ScenarioConfig resolve_scenario_config(const config::RunConfig& cfg,
                                                 const grid::NetworkModel& model) {
    scenario::ScenarioConfig sc = cfg.scenario;
    if (sc.gfm_buses.empty())
        for (int dev : model.gfm_devices()) sc.gfm_buses.push_back(model.devices[dev].bus);
    return sc;
}

scenario::ScenarioPool resolve_pool(const config::RunConfig& cfg,
                                    const grid::NetworkModel& model,
                                    scenario::PoolKind kind) {
    const std::string& path =
        kind == scenario::PoolKind::kTrain ? cfg.train_pool_path : cfg.test_pool_path;
    if (!path.empty()) {
        scenario::ScenarioPool pool = scenario::pool_from_json(config::read_text_file(path));
        if (pool.kind != kind)
            throw ConfigError("pool file '" + path + "' holds the wrong pool kind");
        return pool;
    }
    return scenario::generate_pool(resolve_scenario_config(cfg, model), kind, cfg.seed);
}

config::RunConfig load_config_with_overrides(const CliArgs& args) {
    Json j = Json::object();
    if (!args.config_path.empty()) {
        std::string text = config::read_text_file(args.config_path);
        try {
            j = Json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError("config file '" + args.config_path + "': " + e.what());
        }
        if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    }
    if (!args.profile.empty()) j["profile"] = args.profile;
    config::RunConfig cfg = config::run_config_from_json(j);
    if (args.seed_set) cfg.seed = args.seed;
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    return cfg;
}

std::string metrics_csv(const std::vector<sac::MetricsRow>& rows,
                        const std::string& cfg_hash) {
    std::ostringstream out;
    out << "# config_hash=" << cfg_hash << "\n";
    out << "episode,agent,reward,critic_loss,actor_loss,fed_round_flag\n";
    for (const sac::MetricsRow& r : rows)
        out << r.episode << ',' << r.agent << ',' << format_double(r.reward) << ','
            << format_double(r.critic_loss) << ',' << format_double(r.actor_loss) << ','
            << r.fed_round_flag << '\n';
    return out.str();
}

EpisodeRecord run_episode_record(env::Env& env, const std::vector<sac::AgentBundle>& agents,
                                 const scenario::AttackScenario& sc) {
    const int m = env.num_agents();
    if (static_cast<int>(agents.size()) != m)
        throw ConfigError("episode record: need one agent per microgrid");
    EpisodeRecord rec;
    std::vector<std::vector<double>> obs = env.reset(sc);
    rec.final_obs = obs;
    const double dt = env.config().step.dt;
    std::vector<double> actions(m);
    int t = 0;
    while (!env.done()) {
        for (int k = 0; k < m; ++k)
            actions[k] = sac::select_action_det(agents[k].actor, obs[k],
                                                env.config().action_bound);
        env::StepResult sr = env.step(actions);
        rec.gated_actions.push_back(sr.actions_gated);
        if (sr.unstable) rec.unstable = true;
        for (env::TrajectoryRow& row : env::step_rows(env, sr, (t + 1) * dt))
            rec.rows.push_back(std::move(row));
        obs = sr.obs;
        rec.final_obs = sr.obs;
        ++t;
    }
    return rec;
}

namespace {

std::pair<std::string, int> parse_hostport(const std::string& text, int default_port) {
    std::string host = "127.0.0.1";
    int port = default_port;
    if (!text.empty()) {
        std::size_t colon = text.rfind(':');
        if (colon == std::string::npos) {
            host = text;
        } else {
            if (colon > 0) host = text.substr(0, colon);
            std::string port_text = text.substr(colon + 1);
            try {
                port = std::stoi(port_text);
            } catch (const std::exception&) {
                throw ConfigError("bad port in address '" + text + "'");
            }
            if (port < 0 || port > 65535)
                throw ConfigError("port out of range in address '" + text + "'");
        }
    }
    return {host, port};
}

Json eval_to_json(const sac::EvalResult& res) {
    Json j;
    j["mean_reward"] = res.mean_reward;
    j["success_rate"] = res.success_rate;
    Json hist;
    hist["edges"] = res.hist_edges;
    hist["counts"] = res.hist_counts;
    j["reward_histogram"] = std::move(hist);
    Json outcomes = Json::array();
    for (const sac::ScenarioOutcome& o : res.outcomes) {
        Json jo;
        jo["scenario_id"] = o.scenario_id;
        jo["rewards"] = o.rewards;
        Json succ = Json::array();
        for (bool s : o.success) succ.push_back(s);
        jo["success"] = std::move(succ);
        jo["unstable"] = o.unstable;
        outcomes.push_back(std::move(jo));
    }
    j["outcomes"] = std::move(outcomes);
    return j;
}

std::string histogram_csv(const sac::EvalResult& res, const std::string& cfg_hash) {
    std::ostringstream out;
    out << "# config_hash=" << cfg_hash << "\n";
    out << "bin_lo,bin_hi";
    for (std::size_t k = 0; k < res.hist_counts.size(); ++k) out << ",agent_" << k;
    out << "\n";
    const std::size_t bins = res.hist_counts.empty() ? 0 : res.hist_counts[0].size();
    for (std::size_t b = 0; b < bins; ++b) {
        out << format_double(res.hist_edges[b]) << ',' << format_double(res.hist_edges[b + 1]);
        for (const std::vector<int>& counts : res.hist_counts) out << ',' << counts[b];
        out << "\n";
    }
    return out.str();
}

bool bitwise_equal(double a, double b) {
    return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

void check_checkpoint_env(const checkpoint::Checkpoint& ckpt, const env::Env& env) {
    if (env.num_agents() != ckpt.num_agents())
        throw ConfigError("checkpoint holds " + std::to_string(ckpt.num_agents()) +
                          " agents but the network defines " +
                          std::to_string(env.num_agents()) + " microgrids");
    if (env.obs_dim() != ckpt.obs_dim())
        throw ConfigError("checkpoint observation width " + std::to_string(ckpt.obs_dim()) +
                          " does not match the environment's " +
                          std::to_string(env.obs_dim()));
    const std::vector<double>& evss = env.v_ss();
    for (int k = 0; k < ckpt.num_agents(); ++k)
        for (int i = 0; i < env.obs_dim(); ++i)
            if (!bitwise_equal(evss[static_cast<std::size_t>(k) * env.obs_dim() + i],
                               ckpt.v_ss[k][i])) {
                log::warn("checkpoint V_ss differs from this network's steady state; "
                          "wire-path equivalence is not guaranteed");
                return;
            }
}

serve::PolicyServer* g_signal_server = nullptr;
void stop_on_signal(int) {
    if (g_signal_server) g_signal_server->stop();
}

}  // namespace

int cmd_gen_scenarios(const CliArgs& args) {
    config::RunConfig cfg = load_config_with_overrides(args);
    grid::NetworkModel model = load_network(cfg);
    scenario::ScenarioConfig sc = resolve_scenario_config(cfg, model);
    scenario::ScenarioPool train = scenario::generate_pool(sc, scenario::PoolKind::kTrain, cfg.seed);
    scenario::ScenarioPool test = scenario::generate_pool(sc, scenario::PoolKind::kTest, cfg.seed);
    fs::create_directories(cfg.out_dir);
    const std::string train_path = cfg.out_dir + "/pool_train.json";
    const std::string test_path = cfg.out_dir + "/pool_test.json";
    config::write_text_file(train_path, scenario::pool_to_json(train));
    config::write_text_file(test_path, scenario::pool_to_json(test));
    Json summary;
    summary["config_hash"] = config::config_hash(cfg);
    summary["capacity"] = scenario::pool_capacity(sc);
    summary["train_pool"] = train_path;
    summary["train_count"] = train.scenarios.size();
    summary["test_pool"] = test_path;
    summary["test_count"] = test.scenarios.size();
    std::printf("%s\n", summary.dump(2).c_str());
    return 0;
}

int cmd_train(const CliArgs& args) {
    config::RunConfig cfg = load_config_with_overrides(args);
    bool decentralized = false;
    if (!args.baseline.empty()) {
        if (args.baseline != "decentralized")
            throw ConfigError("unknown baseline '" + args.baseline +
                              "' (expected 'decentralized')");
        decentralized = true;
    }
    sac::FedConfig fed = cfg.fed;
    if (decentralized) fed.federation_enabled = false;

    grid::NetworkModel model = load_network(cfg);
    env::Env env(model, cfg.env);
    scenario::ScenarioPool train_pool = resolve_pool(cfg, model, scenario::PoolKind::kTrain);
    sac::GridRlEnv rl(env, train_pool);

    fs::create_directories(cfg.out_dir);
    const std::string cfg_hash = config::config_hash(cfg);
    const std::string suffix = decentralized ? "_decentralized" : "";
    const std::string ckpt_path = cfg.out_dir + "/checkpoint" + suffix + ".json";
    const std::string metrics_path = cfg.out_dir + "/metrics" + suffix + ".csv";

    log::info("training " + std::to_string(env.num_agents()) + " agents for " +
              std::to_string(fed.total_steps) + " env steps (profile " + cfg.profile +
              (decentralized ? ", federation off" : "") + ")");
    std::vector<sac::MetricsRow> live;
    sac::TrainResult result;
    try {
        result = sac::train(rl, fed, cfg.seed, &live);
    } catch (const std::exception& e) {
        // Keep whatever completed so the run can be inspected.
        config::write_text_file(metrics_path, metrics_csv(live, cfg_hash));
        throw RuntimeError("training failed after " + std::to_string(live.size()) +
                           " metric rows (partial metrics kept): " + e.what());
    }

    checkpoint::Checkpoint ckpt = checkpoint::make_checkpoint(result, env, fed, cfg.seed);
    checkpoint::save_checkpoint(ckpt, ckpt_path);
    config::write_text_file(metrics_path, metrics_csv(result.metrics, cfg_hash));

    Json summary;
    summary["config_hash"] = cfg_hash;
    summary["checkpoint"] = ckpt_path;
    summary["metrics"] = metrics_path;
    summary["episodes"] = result.episodes;
    summary["env_steps"] = result.env_steps;
    summary["federation"] = !decentralized && fed.federation_enabled;
    std::printf("%s\n", summary.dump(2).c_str());
    return 0;
}

int cmd_eval(const CliArgs& args) {
    config::RunConfig cfg = load_config_with_overrides(args);
    const std::string ckpt_path = args.checkpoint_path.empty()
                                      ? cfg.out_dir + "/checkpoint.json"
                                      : args.checkpoint_path;
    checkpoint::Checkpoint ckpt = checkpoint::load_checkpoint(ckpt_path);
    grid::NetworkModel model = load_network(cfg);
    env::Env env(model, ckpt.env_config);
    check_checkpoint_env(ckpt, env);
    scenario::ScenarioPool pool = resolve_pool(cfg, model, scenario::PoolKind::kTest);
    std::vector<sac::AgentBundle> agents = checkpoint::restore_agents(ckpt);

    const std::string cfg_hash = config::config_hash(cfg);
    log::info("evaluating " + std::to_string(pool.scenarios.size()) + " scenarios");
    sac::EvalResult policy_res = sac::evaluate(agents, env, pool);

    Json report;
    report["config_hash"] = cfg_hash;
    report["checkpoint"] = ckpt_path;
    report["scenario_count"] = pool.scenarios.size();
    report["policy"] = eval_to_json(policy_res);
    for (const std::string& cmp : args.compare) {
        sac::EvalOptions opts;
        if (cmp == "no_control") {
            opts.zero_action = true;
        } else if (cmp == "oracle") {
            opts.oracle = true;
        } else {
            throw ConfigError("unknown comparison '" + cmp +
                              "' (expected 'no_control' or 'oracle')");
        }
        log::info("comparison run: " + cmp);
        report[cmp] = eval_to_json(sac::evaluate({}, env, pool, opts));
    }

    fs::create_directories(cfg.out_dir);
    const std::string report_path = cfg.out_dir + "/report.json";
    config::write_text_file(report_path, report.dump(2) + "\n");
    config::write_text_file(cfg.out_dir + "/histogram.csv",
                            histogram_csv(policy_res, cfg_hash));
    // Trajectories for the first few scenarios (full time series are bulky).
    const std::size_t traj_count = std::min<std::size_t>(3, pool.scenarios.size());
    for (std::size_t i = 0; i < traj_count; ++i) {
        env::Env traj_env = env;
        EpisodeRecord rec = run_episode_record(traj_env, agents, pool.scenarios[i]);
        std::string path = cfg.out_dir + "/trajectory_" +
                           std::to_string(pool.scenarios[i].id) + ".csv";
        config::write_text_file(path, "# config_hash=" + cfg_hash + "\n" +
                                          env::trajectory_csv(rec.rows, env.num_agents()));
    }

    Json summary;
    summary["config_hash"] = cfg_hash;
    summary["report"] = report_path;
    summary["mean_reward"] = policy_res.mean_reward;
    summary["success_rate"] = policy_res.success_rate;
    for (const std::string& cmp : args.compare) {
        summary[cmp + "_mean_reward"] = report[cmp]["mean_reward"];
        summary[cmp + "_success_rate"] = report[cmp]["success_rate"];
    }
    std::printf("%s\n", summary.dump(2).c_str());
    return 0;
}

int cmd_serve(const CliArgs& args) {
    checkpoint::Checkpoint ckpt = checkpoint::load_checkpoint(args.checkpoint_path);
    auto [host, port] = parse_hostport(args.bind_addr, 47700);
    serve::PolicyServer server(ckpt, host, port);
    log::info("serving " + std::to_string(server.num_agents()) + " agents on " + host +
              ":" + std::to_string(server.port()));
    g_signal_server = &server;
    std::signal(SIGINT, stop_on_signal);
    std::signal(SIGTERM, stop_on_signal);
    server.run();
    std::signal(SIGINT, SIG_DFL);
    std::signal(SIGTERM, SIG_DFL);
    g_signal_server = nullptr;
    std::printf("%s\n", server.stats().to_json().c_str());
    return 0;
}

int cmd_replay(const CliArgs& args) {
    config::RunConfig cfg = load_config_with_overrides(args);
    const std::string ckpt_path = args.checkpoint_path.empty()
                                      ? cfg.out_dir + "/checkpoint.json"
                                      : args.checkpoint_path;
    checkpoint::Checkpoint ckpt = checkpoint::load_checkpoint(ckpt_path);
    grid::NetworkModel model = load_network(cfg);

    env::EnvConfig env_cfg = ckpt.env_config;
    scenario::AttackScenario sc;
    if (args.scenario_id >= 0) {
        scenario::ScenarioPool pool = resolve_pool(cfg, model, scenario::PoolKind::kTest);
        bool found = false;
        for (const scenario::AttackScenario& s : pool.scenarios)
            if (s.id == args.scenario_id) {
                sc = s;
                found = true;
                break;
            }
        if (!found)
            throw ConfigError("scenario id " + std::to_string(args.scenario_id) +
                              " not in the test pool");
    } else {
        std::vector<int> gfm_buses;
        for (int dev : model.gfm_devices()) gfm_buses.push_back(model.devices[dev].bus);
        sc = serve::hil_schedule(gfm_buses);
        env_cfg.episode_length = serve::kHilSteps;
    }

    env::Env wire_env(model, env_cfg);
    check_checkpoint_env(ckpt, wire_env);
    std::vector<sac::AgentBundle> agents = checkpoint::restore_agents(ckpt);

    // In-process server unless an external address was given.
    std::unique_ptr<serve::PolicyServer> server;
    std::thread server_thread;
    serve::ClientOptions copts;
    if (!args.connect_addr.empty()) {
        auto [host, port] = parse_hostport(args.connect_addr, 47700);
        copts.host = host;
        copts.port = port;
    } else {
        server = std::make_unique<serve::PolicyServer>(ckpt, "127.0.0.1", 0);
        copts.host = "127.0.0.1";
        copts.port = server->port();
        serve::PolicyServer* raw = server.get();
        server_thread = std::thread([raw] { raw->run(); });
    }

    serve::ClientResult wire = serve::loopback_client(wire_env, sc, copts);
    if (server) {
        server->stop();
        server_thread.join();
    }

    fs::create_directories(cfg.out_dir);
    const std::string cfg_hash = config::config_hash(cfg);
    const std::string traj_path = cfg.out_dir + "/replay_trajectory.csv";
    config::write_text_file(traj_path, "# config_hash=" + cfg_hash + "\n" +
                                           env::trajectory_csv(wire.rows, wire_env.num_agents()));

    // In-process reference drive of the identical episode.
    env::Env ref_env(model, env_cfg);
    EpisodeRecord ref = run_episode_record(ref_env, agents, sc);

    bool equal = !wire.aborted && wire.steps.size() == ref.gated_actions.size();
    if (equal) {
        for (std::size_t t = 0; t < wire.steps.size() && equal; ++t)
            for (std::size_t k = 0; k < wire.steps[t].actions.size() && equal; ++k)
                equal = bitwise_equal(wire.steps[t].actions[k], ref.gated_actions[t][k]);
    }

    double worst_final = 0.0;
    for (const std::vector<double>& per_agent : wire.final_obs)
        for (double o : per_agent) worst_final = std::max(worst_final, std::abs(o - 1.0));

    Json summary;
    summary["config_hash"] = cfg_hash;
    summary["checkpoint"] = ckpt_path;
    summary["trajectory"] = traj_path;
    summary["scenario"] = sc.seed_tag.empty() ? std::to_string(sc.id) : sc.seed_tag;
    summary["steps"] = wire.steps.size();
    summary["timeouts"] = wire.timeout_count;
    summary["unstable"] = wire.unstable;
    summary["aborted"] = wire.aborted;
    summary["final_worst_deviation"] = worst_final;
    summary["server_stats"] = server ? Json::parse(server->stats().to_json()) : Json();
    std::printf("%s\n", summary.dump(2).c_str());
    std::printf("equivalence %s\n", equal ? "PASS" : "FAIL");
    if (!equal) return 2;
    return 0;
}

int dispatch(int argc, const char* const* argv) {
    CLI::App app{"Networked-microgrid resilience toolkit: quasi-static attack simulation, "
                 "federated actor-critic training, and a datagram policy server"};
    app.require_subcommand(1);
    CliArgs args;

    auto add_common = [&args](CLI::App* sub) {
        sub->add_option("--config", args.config_path, "Run configuration JSON file");
        sub->add_option_function<std::uint64_t>(
            "--seed",
            [&args](const std::uint64_t& v) {
                args.seed = v;
                args.seed_set = true;
            },
            "Seed override");
        sub->add_option("--profile", args.profile, "Hyperparameter profile")
            ->check(CLI::IsMember({"desk", "paper"}));
        sub->add_option("--out", args.out_dir, "Output directory override");
    };

    CLI::App* gen = app.add_subcommand("gen-scenarios",
                                       "Generate train/test attack-scenario pools");
    add_common(gen);

    CLI::App* train = app.add_subcommand("train", "Train the resilient controllers");
    add_common(train);
    train->add_option("--baseline", args.baseline,
                      "Baseline variant: 'decentralized' disables federation")
        ->check(CLI::IsMember({"decentralized"}));

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test pool");
    add_common(eval);
    eval->add_option("checkpoint", args.checkpoint_path,
                     "Checkpoint path (default <out>/checkpoint.json)");
    eval->add_option("--compare", args.compare,
                     "Extra baselines on the same pool: no_control, oracle")
        ->delimiter(',');

    CLI::App* serve_cmd = app.add_subcommand("serve", "Run the datagram policy server");
    serve_cmd->add_option("checkpoint", args.checkpoint_path, "Checkpoint path")
        ->required();
    serve_cmd->add_option("--bind", args.bind_addr, "host:port to bind (default 127.0.0.1:47700)");

    CLI::App* replay = app.add_subcommand(
        "replay", "Drive the simulator through the wire path and check equivalence");
    add_common(replay);
    replay->add_option("checkpoint", args.checkpoint_path,
                       "Checkpoint path (default <out>/checkpoint.json)");
    replay->add_option("--connect", args.connect_addr,
                       "Use an external server at host:port instead of in-process");
    replay->add_option("--scenario", args.scenario_id,
                       "Test-pool scenario id (default: the three-onset schedule)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    for (CLI::App* sub : {gen, train, eval, serve_cmd, replay})
        if (sub->parsed()) args.command = sub->get_name();

    try {
        if (args.command == "gen-scenarios") return cmd_gen_scenarios(args);
        if (args.command == "train") return cmd_train(args);
        if (args.command == "eval") return cmd_eval(args);
        if (args.command == "serve") return cmd_serve(args);
        if (args.command == "replay") return cmd_replay(args);
        throw ConfigError("no command selected");
    } catch (const ConfigError& e) {
        log::error(e.what());
        return 1;
    } catch (const grid::PowerFlowError& e) {
        log::error(std::string("power flow diverged: ") + e.what());
        return 2;
    } catch (const RuntimeError& e) {
        log::error(e.what());
        return 2;
    } catch (const std::exception& e) {
        log::error(std::string("unexpected error: ") + e.what());
        return 2;
    }
}

}  // namespace fedgrid::runner
