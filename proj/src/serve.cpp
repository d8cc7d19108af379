#include "fedgrid/serve.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "fedgrid/fedsac.hpp"
#include "fedgrid/log.hpp"

namespace fedgrid::serve {

namespace {

constexpr char kMagic[4] = {'F', 'G', 'M', 'V'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

std::uint16_t get_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (static_cast<std::uint16_t>(p[1]) << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

double get_f64(const std::uint8_t* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

// Shared header checks; sets `type` on success.
DecodeError check_header(const std::uint8_t* data, std::size_t len, std::uint8_t expect_type) {
    if (len < 4) return DecodeError::kBadLength;
    if (std::memcmp(data, kMagic, 4) != 0) return DecodeError::kBadMagic;
    if (len < 6) return DecodeError::kBadLength;
    if (data[4] != kVersion) return DecodeError::kBadVersion;
    if (data[5] != expect_type) return DecodeError::kBadType;
    return DecodeError::kOk;
}

}  // namespace

const char* decode_error_name(DecodeError e) {
    switch (e) {
        case DecodeError::kOk: return "Ok";
        case DecodeError::kBadMagic: return "BadMagic";
        case DecodeError::kBadVersion: return "BadVersion";
        case DecodeError::kBadLength: return "BadLength";
        case DecodeError::kNonFinite: return "NonFinite";
        case DecodeError::kBadType: return "BadType";
    }
    return "Unknown";
}

std::vector<std::uint8_t> encode(const MeasurementPacket& p) {
    if (p.values.size() > kMaxValues)
        throw ConfigError("measurement packet exceeds one datagram");
    if (!std::isfinite(p.sim_time)) throw ConfigError("measurement sim_time must be finite");
    for (double v : p.values)
        if (!std::isfinite(v)) throw ConfigError("measurement values must be finite");
    std::vector<std::uint8_t> out;
    out.reserve(kMeasurementHeader + 8 * p.values.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(kVersion);
    out.push_back(kTypeMeasurement);
    out.push_back(p.agent_id);
    put_u32(out, p.seq);
    put_f64(out, p.sim_time);
    put_u16(out, static_cast<std::uint16_t>(p.values.size()));
    for (double v : p.values) put_f64(out, v);
    return out;
}

std::vector<std::uint8_t> encode(const SetpointPacket& p) {
    if (p.values.size() > kMaxValues)
        throw ConfigError("set-point packet exceeds one datagram");
    for (double v : p.values)
        if (!std::isfinite(v)) throw ConfigError("set-point values must be finite");
    std::vector<std::uint8_t> out;
    out.reserve(kSetpointHeader + 8 * p.values.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(kVersion);
    out.push_back(kTypeSetpoint);
    out.push_back(p.agent_id);
    put_u32(out, p.seq);
    put_u16(out, static_cast<std::uint16_t>(p.values.size()));
    for (double v : p.values) put_f64(out, v);
    return out;
}

DecodeError decode(const std::uint8_t* data, std::size_t len, MeasurementPacket& out) {
    DecodeError h = check_header(data, len, kTypeMeasurement);
    if (h != DecodeError::kOk) return h;
    if (len < kMeasurementHeader) return DecodeError::kBadLength;
    const std::uint16_t n = get_u16(data + 19);
    if (len != kMeasurementHeader + 8ull * n) return DecodeError::kBadLength;
    out.agent_id = data[6];
    out.seq = get_u32(data + 7);
    out.sim_time = get_f64(data + 11);
    if (!std::isfinite(out.sim_time)) return DecodeError::kNonFinite;
    out.values.resize(n);
    for (std::uint16_t i = 0; i < n; ++i) {
        out.values[i] = get_f64(data + kMeasurementHeader + 8ull * i);
        if (!std::isfinite(out.values[i])) return DecodeError::kNonFinite;
    }
    return DecodeError::kOk;
}

DecodeError decode(const std::uint8_t* data, std::size_t len, SetpointPacket& out) {
    DecodeError h = check_header(data, len, kTypeSetpoint);
    if (h != DecodeError::kOk) return h;
    if (len < kSetpointHeader) return DecodeError::kBadLength;
    const std::uint16_t n = get_u16(data + 11);
    if (len != kSetpointHeader + 8ull * n) return DecodeError::kBadLength;
    out.agent_id = data[6];
    out.seq = get_u32(data + 7);
    out.values.resize(n);
    for (std::uint16_t i = 0; i < n; ++i) {
        out.values[i] = get_f64(data + kSetpointHeader + 8ull * i);
        if (!std::isfinite(out.values[i])) return DecodeError::kNonFinite;
    }
    return DecodeError::kOk;
}

double reply_action(const neural::Mlp& actor, const std::vector<double>& v_ss,
                    const std::vector<double>& raw_values, double action_bound,
                    double gate_threshold, bool& latch) {
    std::vector<double> obs = env::normalize_observation(raw_values, v_ss);
    double raw = sac::select_action_det(actor, obs, action_bound);
    double clamped = clamp(raw, -action_bound, action_bound);
    double worst = 0.0;
    for (double o : obs) worst = std::max(worst, std::abs(o - 1.0));
    if (worst >= gate_threshold) latch = true;
    return latch ? clamped : 0.0;
}

std::string ServerStats::to_json() const {
    nlohmann::ordered_json j;
    j["received"] = received;
    j["replied"] = replied;
    j["dropped_malformed"] = dropped_malformed;
    j["dropped_stale"] = dropped_stale;
    j["dropped_unknown_agent"] = dropped_unknown_agent;
    return j.dump();
}

PolicyServer::PolicyServer(const checkpoint::Checkpoint& ckpt, const std::string& bind_host,
                           int port) {
    if (ckpt.agents.empty()) throw ConfigError("policy server: checkpoint has no agents");
    action_bound_ = ckpt.env_config.action_bound;
    gate_threshold_ = ckpt.env_config.gate_threshold;
    for (std::size_t k = 0; k < ckpt.agents.size(); ++k) {
        actors_.push_back(ckpt.agents[k].actor);
        v_ss_.push_back(ckpt.v_ss[k]);
    }
    latch_.assign(actors_.size(), false);
    watermark_.assign(actors_.size(), -1);

    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) throw RuntimeError("policy server: socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, bind_host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd_);
        fd_ = -1;
        throw ConfigError("policy server: bad bind address '" + bind_host + "'");
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        int err = errno;
        ::close(fd_);
        fd_ = -1;
        throw RuntimeError("policy server: cannot bind " + bind_host + ":" +
                           std::to_string(port) + " (" + std::strerror(err) + ")");
    }
    sockaddr_in bound{};
    socklen_t blen = sizeof bound;
    if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &blen) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw RuntimeError("policy server: getsockname() failed");
    }
    port_ = ntohs(bound.sin_port);
}

PolicyServer::~PolicyServer() {
    if (fd_ >= 0) ::close(fd_);
}

void PolicyServer::reset_session() {
    latch_.assign(actors_.size(), false);
    watermark_.assign(actors_.size(), -1);
}

std::vector<std::uint8_t> PolicyServer::handle(const std::uint8_t* data, std::size_t len) {
    ++stats_.received;
    MeasurementPacket m;
    DecodeError err = decode(data, len, m);
    if (err != DecodeError::kOk) {
        ++stats_.dropped_malformed;
        log::debug(std::string("dropped packet: ") + decode_error_name(err));
        return {};
    }
    if (m.agent_id >= actors_.size()) {
        ++stats_.dropped_unknown_agent;
        return {};
    }
    const std::size_t k = m.agent_id;
    if (static_cast<std::int64_t>(m.seq) <= watermark_[k]) {
        ++stats_.dropped_stale;
        return {};
    }
    if (m.values.size() != v_ss_[k].size()) {
        ++stats_.dropped_malformed;
        return {};
    }
    watermark_[k] = static_cast<std::int64_t>(m.seq);
    bool latch = latch_[k];
    double action = reply_action(actors_[k], v_ss_[k], m.values, action_bound_,
                                 gate_threshold_, latch);
    latch_[k] = latch;
    SetpointPacket reply;
    reply.agent_id = m.agent_id;
    reply.seq = m.seq;
    reply.values = {action};
    ++stats_.replied;
    return encode(reply);
}

bool PolicyServer::poll_once(int timeout_ms) {
    timeval tv{};
    tv.tv_sec = timeout_ms / 1000;
    tv.tv_usec = (timeout_ms % 1000) * 1000;
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);

    std::uint8_t buf[65536];
    sockaddr_storage from{};
    socklen_t from_len = sizeof from;
    ssize_t n = ::recvfrom(fd_, buf, sizeof buf, 0, reinterpret_cast<sockaddr*>(&from),
                           &from_len);
    if (n < 0) return false;  // timeout or transient error: nothing handled
    std::vector<std::uint8_t> reply = handle(buf, static_cast<std::size_t>(n));
    if (!reply.empty())
        ::sendto(fd_, reply.data(), reply.size(), 0, reinterpret_cast<sockaddr*>(&from),
                 from_len);
    return true;
}

void PolicyServer::run() {
    running_.store(true);
    while (running_.load()) poll_once(100);
}

ClientResult loopback_client(env::Env& env, const scenario::AttackScenario& sc,
                             const ClientOptions& opts) {
    const int m = env.num_agents();
    const int d = env.obs_dim();
    const double dt = env.config().step.dt;

    int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd < 0) throw RuntimeError("loopback client: socket() failed");
    sockaddr_in server{};
    server.sin_family = AF_INET;
    server.sin_port = htons(static_cast<std::uint16_t>(opts.port));
    if (::inet_pton(AF_INET, opts.host.c_str(), &server.sin_addr) != 1) {
        ::close(fd);
        throw ConfigError("loopback client: bad server address '" + opts.host + "'");
    }

    ClientResult result;
    std::vector<std::vector<double>> obs = env.reset(sc);
    result.final_obs = obs;
    // Plant-side raw measurements: steady-state magnitudes at reset, then the
    // per-bus magnitudes from each step result, replicated over phases exactly
    // the way the environment builds its observations.
    std::vector<double> raw_flat(env.v_ss());

    int consecutive_send_failures = 0;
    std::uint8_t rxbuf[65536];
    int t = 0;
    while (!env.done()) {
        ClientStep step_rec;
        step_rec.step = t;
        step_rec.actions.assign(m, 0.0);
        step_rec.timeout.assign(m, false);
        const std::uint32_t seq = static_cast<std::uint32_t>(t + 1);

        for (int k = 0; k < m && !result.aborted; ++k) {
            MeasurementPacket meas;
            meas.agent_id = static_cast<std::uint8_t>(k);
            meas.seq = seq;
            meas.sim_time = t * dt;
            meas.values.assign(raw_flat.begin() + static_cast<std::size_t>(k) * d,
                               raw_flat.begin() + static_cast<std::size_t>(k + 1) * d);
            std::vector<std::uint8_t> wire = encode(meas);
            if (::sendto(fd, wire.data(), wire.size(), 0,
                         reinterpret_cast<sockaddr*>(&server), sizeof server) < 0) {
                if (++consecutive_send_failures >= opts.send_retries) {
                    log::error("loopback client: repeated send failures, aborting");
                    result.aborted = true;
                    break;
                }
                step_rec.timeout[k] = true;
                ++result.timeout_count;
                continue;
            }
            consecutive_send_failures = 0;

            // Wait for the matching reply; discard stale/foreign datagrams
            // until the per-agent deadline passes.
            auto deadline = std::chrono::steady_clock::now() +
                            std::chrono::milliseconds(opts.timeout_ms);
            bool got = false;
            while (!got) {
                auto remaining = std::chrono::duration_cast<std::chrono::microseconds>(
                    deadline - std::chrono::steady_clock::now());
                if (remaining.count() <= 0) break;
                timeval tv{};
                tv.tv_sec = static_cast<time_t>(remaining.count() / 1000000);
                tv.tv_usec = static_cast<suseconds_t>(remaining.count() % 1000000);
                if (tv.tv_sec == 0 && tv.tv_usec == 0) tv.tv_usec = 1;
                ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
                ssize_t n = ::recvfrom(fd, rxbuf, sizeof rxbuf, 0, nullptr, nullptr);
                if (n < 0) break;  // timeout
                SetpointPacket sp;
                if (decode(rxbuf, static_cast<std::size_t>(n), sp) != DecodeError::kOk)
                    continue;
                if (sp.agent_id != k || sp.seq != seq || sp.values.size() != 1) continue;
                step_rec.actions[k] = sp.values[0];
                got = true;
            }
            if (!got) {
                step_rec.timeout[k] = true;
                ++result.timeout_count;
            }
        }
        if (result.aborted) break;

        env::StepResult sr = env.step(step_rec.actions);
        result.final_obs = sr.obs;
        if (sr.unstable) result.unstable = true;

        for (env::TrajectoryRow& row : env::step_rows(env, sr, (t + 1) * dt))
            result.rows.push_back(std::move(row));

        // Next measurements: per-bus magnitudes replicated over phases.
        if (!sr.unstable) {
            raw_flat.clear();
            for (double v : sr.raw_voltages)
                for (int p = 0; p < env::kPhases; ++p) raw_flat.push_back(v);
        }
        result.steps.push_back(std::move(step_rec));
        ++t;
    }

    ::close(fd);
    return result;
}

scenario::AttackScenario hil_schedule(const std::vector<int>& gfm_buses) {
    if (gfm_buses.size() != 3)
        throw ConfigError("the three-onset schedule needs exactly three GFM buses");
    scenario::AttackScenario sc;
    sc.id = -1;
    sc.target_buses = gfm_buses;
    sc.magnitudes = {-0.05, -0.075, -0.10};  // "different levels" per microgrid
    sc.onsets = {40, 140, 240};              // 20 s / 70 s / 120 s at dt = 0.5 s
    sc.t_a = 40;
    sc.duration = 0;
    sc.seed_tag = "hil-three-onset";
    return sc;
}

}  // namespace fedgrid::serve
