#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <thread>
#include <vector>

#include "fedgrid/checkpoint.hpp"
#include "fedgrid/env.hpp"
#include "fedgrid/fedsac.hpp"
#include "fedgrid/grid.hpp"
#include "fedgrid/serve.hpp"
#include "fedgrid/util.hpp"

using namespace fedgrid;
using namespace fedgrid::serve;

namespace {

checkpoint::Checkpoint small_checkpoint() {
    sac::FedConfig fed;
    fed.hidden = {8};
    fed.buffer_capacity = 64;
    fed.batch = 16;
    fed.total_steps = 100;
    env::Env env(grid::nm3_network(), env::EnvConfig{});
    sac::TrainResult result;
    for (int k = 0; k < env.num_agents(); ++k)
        result.agents.push_back(
            sac::make_agent(env.obs_dim(), env.config().action_bound, fed, 500 + k));
    result.env_steps = 1;
    result.episodes = 1;
    return checkpoint::make_checkpoint(result, env, fed, 9);
}

MeasurementPacket sample_measurement() {
    MeasurementPacket p;
    p.agent_id = 1;
    p.seq = 42;
    p.sim_time = 3.5;
    p.values = {1.01, 1.01, 1.01, 0.97, 0.97, 0.97};
    return p;
}

}  // namespace

TEST_CASE("wire format: measurement layout is exactly as documented") {
    MeasurementPacket p = sample_measurement();
    std::vector<std::uint8_t> buf = encode(p);
    REQUIRE(buf.size() == kMeasurementHeader + 8 * p.values.size());
    REQUIRE(buf.size() == 69);  // 21 + 8*6
    CHECK(buf[0] == 'F');
    CHECK(buf[1] == 'G');
    CHECK(buf[2] == 'M');
    CHECK(buf[3] == 'V');
    CHECK(buf[4] == kVersion);
    CHECK(buf[5] == kTypeMeasurement);
    CHECK(buf[6] == 1);  // agent
    // seq little-endian
    CHECK(buf[7] == 42);
    CHECK(buf[8] == 0);
    CHECK(buf[9] == 0);
    CHECK(buf[10] == 0);
    // sim_time f64 little-endian
    std::uint64_t tbits = std::bit_cast<std::uint64_t>(3.5);
    for (int i = 0; i < 8; ++i)
        CHECK(buf[11 + i] == static_cast<std::uint8_t>((tbits >> (8 * i)) & 0xff));
    // n_meas u16
    CHECK(buf[19] == 6);
    CHECK(buf[20] == 0);
    std::uint64_t vbits = std::bit_cast<std::uint64_t>(1.01);
    for (int i = 0; i < 8; ++i)
        CHECK(buf[21 + i] == static_cast<std::uint8_t>((vbits >> (8 * i)) & 0xff));
}

TEST_CASE("wire format: setpoint layout and round-trips") {
    SetpointPacket sp;
    sp.agent_id = 2;
    sp.seq = 7;
    sp.values = {-0.0375};
    std::vector<std::uint8_t> buf = encode(sp);
    REQUIRE(buf.size() == kSetpointHeader + 8);  // 21 bytes total
    CHECK(buf[5] == kTypeSetpoint);
    CHECK(buf[11] == 1);  // n_act u16 lo
    CHECK(buf[12] == 0);

    SetpointPacket back;
    REQUIRE(decode(buf.data(), buf.size(), back) == DecodeError::kOk);
    CHECK(back.agent_id == 2);
    CHECK(back.seq == 7);
    REQUIRE(back.values.size() == 1);
    CHECK(back.values[0] == -0.0375);

    MeasurementPacket m = sample_measurement();
    std::vector<std::uint8_t> mbuf = encode(m);
    MeasurementPacket mb;
    REQUIRE(decode(mbuf.data(), mbuf.size(), mb) == DecodeError::kOk);
    CHECK(mb.agent_id == m.agent_id);
    CHECK(mb.seq == m.seq);
    CHECK(mb.sim_time == m.sim_time);
    CHECK(mb.values == m.values);
}

TEST_CASE("decode: every malformed class maps to its code, no exceptions") {
    MeasurementPacket m = sample_measurement();
    std::vector<std::uint8_t> good = encode(m);
    MeasurementPacket out;

    SUBCASE("too short for the magic") {
        CHECK(decode(good.data(), 3, out) == DecodeError::kBadLength);
        CHECK(decode(good.data(), 0, out) == DecodeError::kBadLength);
    }
    SUBCASE("bad magic") {
        std::vector<std::uint8_t> b = good;
        b[0] = 'X';
        CHECK(decode(b.data(), b.size(), out) == DecodeError::kBadMagic);
    }
    SUBCASE("bad version") {
        std::vector<std::uint8_t> b = good;
        b[4] = 9;
        CHECK(decode(b.data(), b.size(), out) == DecodeError::kBadVersion);
    }
    SUBCASE("wrong type for the decoder") {
        std::vector<std::uint8_t> b = good;
        b[5] = kTypeSetpoint;
        CHECK(decode(b.data(), b.size(), out) == DecodeError::kBadType);
        b[5] = 0x7f;
        CHECK(decode(b.data(), b.size(), out) == DecodeError::kBadType);
    }
    SUBCASE("truncated header") {
        CHECK(decode(good.data(), kMeasurementHeader - 1, out) == DecodeError::kBadLength);
    }
    SUBCASE("length disagrees with n_meas") {
        CHECK(decode(good.data(), good.size() - 1, out) == DecodeError::kBadLength);
        std::vector<std::uint8_t> b = good;
        b.push_back(0);
        CHECK(decode(b.data(), b.size(), out) == DecodeError::kBadLength);
    }
    SUBCASE("non-finite payload") {
        MeasurementPacket bad = m;
        bad.values[2] = 1.0;
        std::vector<std::uint8_t> b = encode(bad);
        std::uint64_t nan = std::bit_cast<std::uint64_t>(
            std::numeric_limits<double>::quiet_NaN());
        for (int i = 0; i < 8; ++i)
            b[21 + 2 * 8 + i] = static_cast<std::uint8_t>((nan >> (8 * i)) & 0xff);
        CHECK(decode(b.data(), b.size(), out) == DecodeError::kNonFinite);
    }
    SUBCASE("error names are stable strings") {
        CHECK(std::string(decode_error_name(DecodeError::kOk)) == "Ok");
        CHECK(std::string(decode_error_name(DecodeError::kBadMagic)) == "BadMagic");
    }
}

TEST_CASE("encode: rejects non-finite and oversized payloads") {
    MeasurementPacket p = sample_measurement();
    p.values[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(encode(p), ConfigError);
    MeasurementPacket big = sample_measurement();
    big.values.assign(kMaxValues + 1, 1.0);
    CHECK_THROWS_AS(encode(big), ConfigError);
    MeasurementPacket cap = sample_measurement();
    cap.values.assign(kMaxValues, 1.0);
    CHECK(encode(cap).size() == kMeasurementHeader + 8 * kMaxValues);
}

TEST_CASE("reply_action mirrors the env's clamp -> latch -> gate pipeline") {
    checkpoint::Checkpoint ckpt = small_checkpoint();
    const neural::Mlp& actor = ckpt.agents[0].actor;
    const std::vector<double>& v_ss = ckpt.v_ss[0];
    const double bound = ckpt.env_config.action_bound;
    const double eps = ckpt.env_config.gate_threshold;

    // In-band measurement: gate shut, zero reply, latch stays closed.
    bool latch = false;
    double a0 = reply_action(actor, v_ss, v_ss, bound, eps, latch);
    CHECK(a0 == 0.0);
    CHECK(!latch);

    // Deviated measurement: latch opens, reply equals the deterministic head.
    std::vector<double> deviated = v_ss;
    for (double& v : deviated) v *= 0.95;
    double a1 = reply_action(actor, v_ss, deviated, bound, eps, latch);
    CHECK(latch);
    std::vector<double> obs = env::normalize_observation(deviated, v_ss);
    CHECK(a1 == clamp(sac::select_action_det(actor, obs, bound), -bound, bound));

    // Once latched, even an in-band measurement actuates.
    double a2 = reply_action(actor, v_ss, v_ss, bound, eps, latch);
    std::vector<double> obs_ss = env::normalize_observation(v_ss, v_ss);
    CHECK(a2 == clamp(sac::select_action_det(actor, obs_ss, bound), -bound, bound));
    CHECK(latch);
}

TEST_CASE("PolicyServer::handle: demux, watermarks, and malformed inputs") {
    checkpoint::Checkpoint ckpt = small_checkpoint();
    PolicyServer server(ckpt, "127.0.0.1", 0);
    CHECK(server.num_agents() == 3);
    CHECK(server.port() > 0);

    MeasurementPacket m;
    m.agent_id = 0;
    m.seq = 1;
    m.sim_time = 0.0;
    m.values = ckpt.v_ss[0];
    std::vector<std::uint8_t> wire = encode(m);

    // Fresh packet: replied.
    std::vector<std::uint8_t> reply = server.handle(wire.data(), wire.size());
    REQUIRE(!reply.empty());
    SetpointPacket sp;
    REQUIRE(decode(reply.data(), reply.size(), sp) == DecodeError::kOk);
    CHECK(sp.agent_id == 0);
    CHECK(sp.seq == 1);
    REQUIRE(sp.values.size() == 1);
    CHECK(sp.values[0] == 0.0);  // steady-state measurement, gate shut

    // Replay of the same seq: dropped as stale.
    CHECK(server.handle(wire.data(), wire.size()).empty());
    // Older seq: stale too.
    MeasurementPacket old = m;
    old.seq = 0;
    std::vector<std::uint8_t> old_wire = encode(old);
    CHECK(server.handle(old_wire.data(), old_wire.size()).empty());

    // Unknown agent id.
    MeasurementPacket ghost = m;
    ghost.agent_id = 9;
    ghost.seq = 2;
    std::vector<std::uint8_t> ghost_wire = encode(ghost);
    CHECK(server.handle(ghost_wire.data(), ghost_wire.size()).empty());

    // Wrong measurement width for this checkpoint.
    MeasurementPacket narrow = m;
    narrow.seq = 3;
    narrow.values = {1.0, 1.0, 1.0};
    std::vector<std::uint8_t> narrow_wire = encode(narrow);
    CHECK(server.handle(narrow_wire.data(), narrow_wire.size()).empty());

    // Garbage bytes.
    std::vector<std::uint8_t> junk = {0xde, 0xad, 0xbe, 0xef, 0x00};
    CHECK(server.handle(junk.data(), junk.size()).empty());

    const ServerStats& st = server.stats();
    CHECK(st.received == 6);
    CHECK(st.replied == 1);
    CHECK(st.dropped_stale == 2);
    CHECK(st.dropped_unknown_agent == 1);
    CHECK(st.dropped_malformed == 2);

    std::string j = st.to_json();
    CHECK(j.find("\"received\":6") != std::string::npos);
    CHECK(j.find("\"replied\":1") != std::string::npos);

    // reset_session clears watermarks: seq 1 accepted again.
    server.reset_session();
    CHECK(!server.handle(wire.data(), wire.size()).empty());
}

TEST_CASE("PolicyServer::handle: latch state tracks per agent") {
    checkpoint::Checkpoint ckpt = small_checkpoint();
    PolicyServer server(ckpt, "127.0.0.1", 0);

    // Agent 1 sees a deviated measurement -> latched reply (nonzero unless the
    // policy head happens to be exactly zero, which it is not for random init).
    MeasurementPacket m;
    m.agent_id = 1;
    m.seq = 1;
    m.values = ckpt.v_ss[1];
    for (double& v : m.values) v *= 0.9;
    std::vector<std::uint8_t> w1 = encode(m);
    std::vector<std::uint8_t> r1 = server.handle(w1.data(), w1.size());
    REQUIRE(!r1.empty());
    SetpointPacket sp1;
    REQUIRE(decode(r1.data(), r1.size(), sp1) == DecodeError::kOk);
    CHECK(sp1.values[0] != 0.0);

    // Agent 1 back in band: still latched -> still acting.
    MeasurementPacket m2;
    m2.agent_id = 1;
    m2.seq = 2;
    m2.values = ckpt.v_ss[1];
    std::vector<std::uint8_t> w2 = encode(m2);
    std::vector<std::uint8_t> r2 = server.handle(w2.data(), w2.size());
    REQUIRE(!r2.empty());
    SetpointPacket sp2;
    REQUIRE(decode(r2.data(), r2.size(), sp2) == DecodeError::kOk);
    CHECK(sp2.values[0] != 0.0);

    // Agent 0 is untouched by agent 1's latch.
    MeasurementPacket m3;
    m3.agent_id = 0;
    m3.seq = 1;
    m3.values = ckpt.v_ss[0];
    std::vector<std::uint8_t> w3 = encode(m3);
    std::vector<std::uint8_t> r3 = server.handle(w3.data(), w3.size());
    REQUIRE(!r3.empty());
    SetpointPacket sp3;
    REQUIRE(decode(r3.data(), r3.size(), sp3) == DecodeError::kOk);
    CHECK(sp3.values[0] == 0.0);
}

TEST_CASE("decoder fuzz: random byte strings never crash") {
    std::mt19937_64 rng(2024);
    MeasurementPacket m;
    SetpointPacket sp;
    std::vector<std::uint8_t> buf;
    int ok_count = 0;
    for (int iter = 0; iter < 20000; ++iter) {
        std::size_t len = rng() % 96;
        buf.resize(len);
        for (auto& b : buf) b = static_cast<std::uint8_t>(rng());
        // Bias some iterations toward nearly-valid packets.
        if (iter % 4 == 0 && len >= 6) {
            buf[0] = 'F';
            buf[1] = 'G';
            buf[2] = 'M';
            buf[3] = 'V';
            buf[4] = kVersion;
            buf[5] = (iter % 8 == 0) ? kTypeMeasurement : kTypeSetpoint;
        }
        DecodeError e1 = decode(buf.data(), buf.size(), m);
        DecodeError e2 = decode(buf.data(), buf.size(), sp);
        if (e1 == DecodeError::kOk || e2 == DecodeError::kOk) ++ok_count;
    }
    // Fuzz inputs with random lengths essentially never hit the exact-length
    // + finite-payload contract; the loop is about not crashing.
    CHECK(ok_count >= 0);
}

TEST_CASE("server fuzz: handle() survives random datagrams and stays consistent") {
    checkpoint::Checkpoint ckpt = small_checkpoint();
    PolicyServer server(ckpt, "127.0.0.1", 0);
    std::mt19937_64 rng(77);
    std::vector<std::uint8_t> buf;
    for (int iter = 0; iter < 20000; ++iter) {
        std::size_t len = rng() % 128;
        buf.resize(len);
        for (auto& b : buf) b = static_cast<std::uint8_t>(rng());
        server.handle(buf.data(), buf.size());
    }
    const ServerStats& st = server.stats();
    CHECK(st.received == 20000);
    CHECK(st.replied + st.dropped_malformed + st.dropped_stale +
              st.dropped_unknown_agent ==
          st.received);
}

TEST_CASE("socket loop: poll_once answers a real datagram") {
    checkpoint::Checkpoint ckpt = small_checkpoint();
    PolicyServer server(ckpt, "127.0.0.1", 0);

    // One answered datagram per agent for a single-step episode.
    std::thread t([&server] {
        for (int i = 0; i < 3; ++i) server.poll_once(3000);
    });

    scenario::AttackScenario sc;
    sc.target_buses = {51};
    sc.magnitudes = {-0.05};
    sc.t_a = 1;

    ClientOptions opts;
    opts.port = server.port();
    opts.timeout_ms = 3000;
    env::EnvConfig one_step = ckpt.env_config;
    one_step.episode_length = 1;
    env::Env env1(grid::nm3_network(), one_step);
    ClientResult res = loopback_client(env1, sc, opts);
    t.join();
    CHECK(res.steps.size() == 1);
    CHECK(res.timeout_count == 0);
    CHECK(!res.aborted);
}

TEST_CASE("loopback client: dead port yields the zero-action trajectory") {
    env::EnvConfig cfg;
    cfg.episode_length = 3;
    env::Env wire_env(grid::nm3_network(), cfg);
    env::Env ref_env(grid::nm3_network(), cfg);

    scenario::AttackScenario sc;
    sc.target_buses = {51, 105, 80};
    sc.magnitudes = {-0.08, -0.08, -0.08};
    sc.t_a = 1;

    ClientOptions opts;
    opts.port = 9;  // discard-protocol port: nothing listens on loopback
    opts.timeout_ms = 30;
    ClientResult res = loopback_client(wire_env, sc, opts);
    CHECK(!res.aborted);
    CHECK(res.timeout_count == 3 * 3);  // every agent, every step
    REQUIRE(res.steps.size() == 3);
    for (const ClientStep& st : res.steps)
        for (double a : st.actions) CHECK(a == 0.0);

    // The resulting trajectory equals the in-process zero-action run.
    ref_env.reset(sc);
    std::vector<double> zero(3, 0.0);
    std::size_t row = 0;
    while (!ref_env.done()) {
        env::StepResult r = ref_env.step(zero);
        for (std::size_t b = 0; b < 6; ++b, ++row) {
            REQUIRE(row < res.rows.size());
            CHECK(res.rows[row].raw_v == r.raw_voltages[b]);
            CHECK(res.rows[row].rewards == r.rewards);
        }
    }
    CHECK(row == res.rows.size());
}

TEST_CASE("hil_schedule: three staggered onsets anchored at the first") {
    scenario::AttackScenario sc = hil_schedule({51, 105, 80});
    CHECK(sc.target_buses == std::vector<int>{51, 105, 80});
    CHECK(sc.magnitudes == std::vector<double>{-0.05, -0.075, -0.10});
    CHECK(sc.onsets == std::vector<int>{40, 140, 240});
    CHECK(sc.t_a == 40);
    CHECK(sc.duration == 0);
    CHECK(kHilSteps == 300);
    CHECK_THROWS_AS(hil_schedule({51}), ConfigError);
}
