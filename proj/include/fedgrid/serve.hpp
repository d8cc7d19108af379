#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "fedgrid/checkpoint.hpp"
#include "fedgrid/env.hpp"
#include "fedgrid/neural.hpp"
#include "fedgrid/scenario.hpp"

namespace fedgrid::serve {

// Wire format, all multi-byte fields little-endian:
//   measurement: "FGMV" | version u8 | type u8 = 0x01 | agent u8 | seq u32 |
//                sim_time f64 | n_meas u16 | n_meas x f64   -> 21 + 8n bytes
//   set-point:   "FGMV" | version u8 | type u8 = 0x02 | agent u8 | seq u32 |
//                n_act u16 | n_act x f64                    -> 13 + 8n bytes
// Measurement values are raw p.u. voltage magnitudes in the monitored
// bus-phase order ([GFM ph0..2, GFL ph0..2] for grid agents, n_meas = 6).

inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::uint8_t kTypeMeasurement = 0x01;
inline constexpr std::uint8_t kTypeSetpoint = 0x02;
inline constexpr std::size_t kMeasurementHeader = 21;
inline constexpr std::size_t kSetpointHeader = 13;
// Values per packet so the datagram stays under the 65507-byte UDP payload cap.
inline constexpr std::size_t kMaxValues = 8185;

struct MeasurementPacket {
    std::uint8_t agent_id = 0;
    std::uint32_t seq = 0;
    double sim_time = 0.0;           // seconds
    std::vector<double> values;      // raw p.u. voltage magnitudes
};

struct SetpointPacket {
    std::uint8_t agent_id = 0;
    std::uint32_t seq = 0;           // echoes the triggering measurement
    std::vector<double> values;      // V_res, p.u. (n_act = 1 per microgrid)
};

// Decode is total: every malformed input maps to a code, never an exception.
enum class DecodeError {
    kOk = 0,
    kBadMagic,
    kBadVersion,
    kBadLength,
    kNonFinite,
    kBadType,
};
const char* decode_error_name(DecodeError e);

std::vector<std::uint8_t> encode(const MeasurementPacket& p);
std::vector<std::uint8_t> encode(const SetpointPacket& p);
DecodeError decode(const std::uint8_t* data, std::size_t len, MeasurementPacket& out);
DecodeError decode(const std::uint8_t* data, std::size_t len, SetpointPacket& out);

// The reply pipeline, shared by the server and the in-process equivalence
// tests: normalize by V_ss, deterministic policy, clamp, latched gate.
// Mirrors env::Env::step's action handling exactly (the latch is the one
// piece of session state the server keeps besides seq watermarks).
double reply_action(const neural::Mlp& actor, const std::vector<double>& v_ss,
                    const std::vector<double>& raw_values, double action_bound,
                    double gate_threshold, bool& latch);

struct ServerStats {
    std::uint64_t received = 0;
    std::uint64_t replied = 0;
    std::uint64_t dropped_malformed = 0;
    std::uint64_t dropped_stale = 0;        // seq <= per-agent watermark
    std::uint64_t dropped_unknown_agent = 0;
    std::string to_json() const;            // one-line JSON object
};

// Datagram policy server. One process hosts every agent in the checkpoint,
// demultiplexing on agent_id. Single-threaded receive loop; per-packet work
// is one small forward pass.
class PolicyServer {
public:
    // Binds on construction; throws RuntimeError on failure. port 0 picks an
    // ephemeral port (read it back with port()).
    PolicyServer(const checkpoint::Checkpoint& ckpt, const std::string& bind_host,
                 int port);
    ~PolicyServer();
    PolicyServer(const PolicyServer&) = delete;
    PolicyServer& operator=(const PolicyServer&) = delete;

    int port() const { return port_; }
    int num_agents() const { return static_cast<int>(actors_.size()); }

    // Wait up to timeout_ms for one datagram and handle it. Returns false on
    // timeout. Exposed for single-threaded test loops.
    bool poll_once(int timeout_ms);
    // Blocking loop until stop() is called (from another thread or a signal
    // handler; stop() only stores an atomic flag).
    void run();
    void stop() { running_.store(false); }

    const ServerStats& stats() const { return stats_; }
    // New episode: clear gate latches and seq watermarks.
    void reset_session();

    // Handle one raw datagram (also the fuzz entry point). Returns the bytes
    // to send back, empty when the packet is dropped.
    std::vector<std::uint8_t> handle(const std::uint8_t* data, std::size_t len);

private:
    int fd_ = -1;
    int port_ = 0;
    std::atomic<bool> running_{false};
    std::vector<neural::Mlp> actors_;
    std::vector<std::vector<double>> v_ss_;
    double action_bound_ = 0.1;
    double gate_threshold_ = 0.02;
    std::vector<bool> latch_;
    std::vector<std::int64_t> watermark_;   // last accepted seq; -1 = none
    ServerStats stats_;
};

struct ClientOptions {
    std::string host = "127.0.0.1";
    int port = 0;
    int timeout_ms = 100;     // per-agent reply deadline; timeout = zero action
    int send_retries = 3;     // consecutive send failures before aborting
};

struct ClientStep {
    int step = 0;                 // measurement step index (pre-step)
    std::vector<double> actions;  // applied V_res per agent (post-gate)
    std::vector<bool> timeout;    // per agent
};

struct ClientResult {
    std::vector<env::TrajectoryRow> rows;        // env-module CSV layout
    std::vector<ClientStep> steps;
    std::vector<std::vector<double>> final_obs;  // last normalized observations
    int timeout_count = 0;
    bool unstable = false;
    bool aborted = false;                        // hard transport failure
};

// Drives the built-in simulator as the plant through the wire: per control
// step it sends one measurement per agent (raw voltages), applies the replied
// set-points as V_res (zero + flag on timeout), then advances the dynamics.
ClientResult loopback_client(env::Env& env, const scenario::AttackScenario& sc,
                             const ClientOptions& opts);

// Three-onset demonstration schedule: each GFM attacked at a different level,
// at 20 s, 70 s and 120 s over a 150 s horizon (steps 40/140/240 of 300 at
// dt = 0.5 s).
scenario::AttackScenario hil_schedule(const std::vector<int>& gfm_buses);
inline constexpr int kHilSteps = 300;

}  // namespace fedgrid::serve
