#include "fedgrid/grid.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include <nlohmann/json.hpp>

namespace fedgrid::grid {

int NetworkModel::bus_index(int bus_id) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
        if (buses[i] == bus_id) return static_cast<int>(i);
    throw ConfigError("unknown bus id " + std::to_string(bus_id));
}

int NetworkModel::device_at_bus(int bus_id) const {
    for (std::size_t i = 0; i < devices.size(); ++i)
        if (devices[i].bus == bus_id) return static_cast<int>(i);
    return -1;
}

std::vector<int> NetworkModel::gfm_devices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < devices.size(); ++i)
        if (devices[i].kind == DeviceKind::kGfm) out.push_back(static_cast<int>(i));
    return out;
}

void validate(const NetworkModel& model) {
    if (model.buses.empty()) throw ConfigError("network has no buses");
    for (std::size_t i = 0; i < model.buses.size(); ++i)
        for (std::size_t j = i + 1; j < model.buses.size(); ++j)
            if (model.buses[i] == model.buses[j])
                throw ConfigError("duplicate bus id " + std::to_string(model.buses[i]));

    bool has_gfm = false;
    for (const auto& d : model.devices) {
        model.bus_index(d.bus);
        if (d.rating <= 0.0) throw ConfigError("device rating must be positive");
        if (d.kind != DeviceKind::kGfl) {
            if (std::abs(d.coupling_z) == 0.0)
                throw ConfigError("droop source at bus " + std::to_string(d.bus) +
                                  " needs a nonzero coupling impedance");
        }
        if (d.kind == DeviceKind::kGfm) has_gfm = true;
    }
    if (!has_gfm) throw ConfigError("network needs at least one grid-forming device");

    for (const auto& l : model.lines) {
        model.bus_index(l.from_bus);
        model.bus_index(l.to_bus);
        if (std::abs(l.z) == 0.0) throw ConfigError("line impedance must be nonzero");
    }
    for (const auto& ld : model.loads) model.bus_index(ld.bus);
    for (const auto& mg : model.microgrids) {
        auto check = [&](int dev, DeviceKind kind, const char* what) {
            if (dev < 0 || dev >= static_cast<int>(model.devices.size()))
                throw ConfigError(std::string("microgrid ") + what + " index out of range");
            if (model.devices[dev].kind != kind)
                throw ConfigError(std::string("microgrid ") + what + " has wrong device kind");
        };
        check(mg.gfm_device, DeviceKind::kGfm, "GFM");
        check(mg.gfl_device, DeviceKind::kGfl, "GFL");
        if (mg.sync_device >= 0) check(mg.sync_device, DeviceKind::kSync, "SYNC");
        model.bus_index(mg.load_bus);
    }

    // Connectivity over lines (single island expected).
    std::size_t n = model.buses.size();
    std::vector<int> root(n);
    std::iota(root.begin(), root.end(), 0);
    std::function<int(int)> find = [&](int x) {
        while (root[x] != x) x = root[x] = root[root[x]];
        return x;
    };
    for (const auto& l : model.lines)
        root[find(model.bus_index(l.from_bus))] = find(model.bus_index(l.to_bus));
    if (n > 1) {
        int r0 = find(0);
        for (std::size_t i = 1; i < n; ++i)
            if (find(static_cast<int>(i)) != r0)
                throw ConfigError("network is not connected");
    }
}

SetpointInputs SetpointInputs::zeros(int num_devices) {
    SetpointInputs in;
    in.p_attack.assign(num_devices, 0.0);
    in.p_res.assign(num_devices, 0.0);
    in.v_attack.assign(num_devices, 0.0);
    in.v_res.assign(num_devices, 0.0);
    return in;
}

double compose_setpoint(double base, double attack, double res, double lo, double hi) {
    // attack + res first: an exact counter-action cancels bitwise.
    return clamp(base + (attack + res), lo, hi);
}

double droop_frequency_ref(double p_filt, const DeviceParams& dev, double omega_nom,
                           double p_set_eff) {
    return omega_nom - dev.m_p * (p_filt - p_set_eff);
}

double droop_voltage_ref(double q_filt, const DeviceParams& dev, double v_set_eff) {
    return v_set_eff - dev.m_q * (q_filt - dev.q_nom);
}

std::vector<Complex> constant_pq_injections(const NetworkModel& model) {
    std::vector<Complex> pq(model.buses.size(), Complex(0.0, 0.0));
    for (const auto& d : model.devices)
        if (d.kind == DeviceKind::kGfl)
            pq[model.bus_index(d.bus)] += Complex(d.p_set_base, d.q_nom);
    for (const auto& ld : model.loads)
        pq[model.bus_index(ld.bus)] -= Complex(ld.p, ld.q);
    return pq;
}

std::vector<Complex> solve_power_flow(const NetworkModel& model,
                                      const std::vector<Complex>& source_emf,
                                      const std::vector<Complex>& bus_pq,
                                      const std::vector<Complex>* warm, double tol,
                                      int max_iter) {
    const std::size_t n = model.buses.size();
    if (bus_pq.size() != n) throw ConfigError("solve_power_flow: bus_pq size mismatch");
    if (source_emf.size() != model.devices.size())
        throw ConfigError("solve_power_flow: source_emf size mismatch");

    // Nodal admittance including source coupling branches; constant-current
    // contribution of each source EMF on the right-hand side.
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
    for (const auto& l : model.lines) {
        int f = model.bus_index(l.from_bus), t = model.bus_index(l.to_bus);
        Complex adm = 1.0 / l.z;
        y(f, f) += adm;
        y(t, t) += adm;
        y(f, t) -= adm;
        y(t, f) -= adm;
    }
    std::vector<Complex> rhs(n, Complex(0.0, 0.0));
    for (std::size_t d = 0; d < model.devices.size(); ++d) {
        const auto& dev = model.devices[d];
        if (dev.kind == DeviceKind::kGfl) continue;
        int b = model.bus_index(dev.bus);
        Complex adm = 1.0 / dev.coupling_z;
        y(b, b) += adm;
        rhs[b] += source_emf[d] * adm;
    }

    std::vector<Complex> v(n, Complex(1.0, 0.0));
    if (warm && warm->size() == n) v = *warm;

    Eigen::MatrixXd jac(2 * n, 2 * n);
    Eigen::VectorXd f(2 * n), dx(2 * n);

    double mismatch = 0.0;
    for (int iter = 0; iter <= max_iter; ++iter) {
        // F(V) = Y'V - rhs - conj(S/V); track the worst complex magnitude.
        mismatch = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            Complex acc(0.0, 0.0);
            for (std::size_t j = 0; j < n; ++j) acc += y(i, j) * v[j];
            acc -= rhs[i];
            double u = std::norm(v[i]);
            if (u < 1e-8)
                throw PowerFlowError("power flow collapsed (|V| ~ 0 at bus " +
                                         std::to_string(model.buses[i]) + ")",
                                     mismatch);
            Complex s = bus_pq[i];
            acc -= std::conj(s) / std::conj(v[i]);
            f(2 * i) = acc.real();
            f(2 * i + 1) = acc.imag();
            mismatch = std::max(mismatch, std::abs(acc));
        }
        if (!std::isfinite(mismatch))
            throw PowerFlowError("power flow diverged (non-finite mismatch)", mismatch);
        if (mismatch < tol) return v;
        if (iter == max_iter) break;

        jac.setZero();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double g = y(i, j).real(), b = y(i, j).imag();
                jac(2 * i, 2 * j) += g;
                jac(2 * i, 2 * j + 1) -= b;
                jac(2 * i + 1, 2 * j) += b;
                jac(2 * i + 1, 2 * j + 1) += g;
            }
            // d/dV of conj(S)/conj(V) with V = vr + j vi.
            double p = bus_pq[i].real(), q = bus_pq[i].imag();
            double vr = v[i].real(), vi = v[i].imag();
            double u = vr * vr + vi * vi;
            double re = (p * vr + q * vi) / u;
            double im = (p * vi - q * vr) / u;
            jac(2 * i, 2 * i) -= p / u - 2.0 * vr * re / u;
            jac(2 * i, 2 * i + 1) -= q / u - 2.0 * vi * re / u;
            jac(2 * i + 1, 2 * i) -= -q / u - 2.0 * vr * im / u;
            jac(2 * i + 1, 2 * i + 1) -= p / u - 2.0 * vi * im / u;
        }

        dx = jac.partialPivLu().solve(f);
        if (!dx.allFinite())
            throw PowerFlowError("power flow diverged (singular Jacobian)", mismatch);
        for (std::size_t i = 0; i < n; ++i)
            v[i] -= Complex(dx(2 * i), dx(2 * i + 1));
    }
    throw PowerFlowError("power flow did not converge after " +
                             std::to_string(max_iter) + " iterations (mismatch " +
                             format_double(mismatch) + ")",
                         mismatch);
}

Complex device_power(const NetworkModel& model, const std::vector<Complex>& bus_v,
                     const GridState& state, int device) {
    const auto& dev = model.devices[device];
    if (dev.kind == DeviceKind::kGfl) return Complex(dev.p_set_base, dev.q_nom);
    int b = model.bus_index(dev.bus);
    Complex e = std::polar(state.emf[device], state.delta[device]);
    Complex i = (e - bus_v[b]) / dev.coupling_z;
    return bus_v[b] * std::conj(i);
}

GridState initial_state(const NetworkModel& model) {
    GridState st;
    st.bus_v.assign(model.buses.size(), Complex(1.0, 0.0));
    std::size_t nd = model.devices.size();
    st.delta.assign(nd, 0.0);
    st.emf.assign(nd, 1.0);
    st.p_filt.assign(nd, 0.0);
    st.q_filt.assign(nd, 0.0);
    st.pi_integ.assign(nd, 0.0);
    for (std::size_t d = 0; d < nd; ++d) {
        const auto& dev = model.devices[d];
        if (dev.kind == DeviceKind::kGfl) continue;
        st.emf[d] = dev.v_set_base;
        if (dev.kind == DeviceKind::kGfm && dev.ki != 0.0)
            st.pi_integ[d] = dev.v_set_base / dev.ki;
    }
    return st;
}

namespace {

std::vector<Complex> source_emfs(const NetworkModel& model, const GridState& st) {
    std::vector<Complex> e(model.devices.size(), Complex(0.0, 0.0));
    for (std::size_t d = 0; d < model.devices.size(); ++d)
        if (model.devices[d].kind != DeviceKind::kGfl)
            e[d] = std::polar(st.emf[d], st.delta[d]);
    return e;
}

}  // namespace

void step_dynamics(const NetworkModel& model, GridState& state,
                   const SetpointInputs& inputs, const StepOptions& opts) {
    const std::size_t nd = model.devices.size();
    if (inputs.v_attack.size() != nd || inputs.v_res.size() != nd ||
        inputs.p_attack.size() != nd || inputs.p_res.size() != nd)
        throw ConfigError("step_dynamics: inputs sized for a different device count");

    // Effective set-points, constant over the control step.
    std::vector<double> p_set_eff(nd, 0.0), v_set_eff(nd, 0.0);
    for (std::size_t d = 0; d < nd; ++d) {
        const auto& dev = model.devices[d];
        if (dev.kind == DeviceKind::kGfl) continue;
        p_set_eff[d] = compose_setpoint(dev.p_set_base, inputs.p_attack[d],
                                        inputs.p_res[d], dev.p_set_min, dev.p_set_max);
        v_set_eff[d] = compose_setpoint(dev.v_set_base, inputs.v_attack[d],
                                        inputs.v_res[d], dev.v_set_min, dev.v_set_max);
    }

    const std::vector<Complex> pq = constant_pq_injections(model);
    const int ref_device = model.gfm_devices().front();
    const std::vector<int> gfms = model.gfm_devices();

    auto flow = [&]() {
        state.bus_v = solve_power_flow(model, source_emfs(model, state), pq,
                                       &state.bus_v, opts.pf_tol, opts.pf_max_iter);
    };

    // All control loops are sub-stepped: at dt_sub the measurement filter
    // supplies the phase lag that keeps the droop loops stable, whereas a
    // once-per-step voltage-droop refresh is a near-memoryless discrete map
    // with loop gain m_q/X_thevenin close to 1 (growing network oscillation).
    const double dt_sub = opts.dt / opts.substeps;
    for (int s = 0; s < opts.substeps; ++s) {
        // (i) network + measurement filters.
        flow();
        for (std::size_t d = 0; d < nd; ++d) {
            const auto& dev = model.devices[d];
            Complex sdev = device_power(model, state.bus_v, state, static_cast<int>(d));
            double alpha = 1.0 - std::exp(-dt_sub / dev.tau_m);
            state.p_filt[d] += alpha * (sdev.real() - state.p_filt[d]);
            state.q_filt[d] += alpha * (sdev.imag() - state.q_filt[d]);
        }
        // (ii)-(iii) frequency droop -> angle advance in the co-rotating frame.
        for (std::size_t d = 0; d < nd; ++d) {
            const auto& dev = model.devices[d];
            if (dev.kind == DeviceKind::kGfl) continue;
            double w_ref = droop_frequency_ref(state.p_filt[d], dev, model.omega_nom,
                                               p_set_eff[d]);
            state.delta[d] += dt_sub * (w_ref - model.omega_nom);
        }
        // Pin the frame to the first GFM: only angle differences are physical,
        // and pinning removes the common-mode drift so a fixed point exists.
        double ref = state.delta[ref_device];
        if (ref != 0.0)
            for (std::size_t d = 0; d < nd; ++d)
                if (model.devices[d].kind != DeviceKind::kGfl) state.delta[d] -= ref;

        // (iv) GFM voltage droop + PI, solved implicitly (backward Euler)
        // against the power-flow algebra. An explicit discrete PI around an
        // algebraic plant is unstable at these gains for any sub-step, so the
        // sub-step update is computed by damped fixed-point iteration.
        std::vector<double> v_ref(nd, 0.0);
        for (int g : gfms)
            v_ref[g] = droop_voltage_ref(state.q_filt[g], model.devices[g], v_set_eff[g]);
        flow();
        for (int it = 0; it < opts.pi_max_iter; ++it) {
            double max_change = 0.0;
            for (int g : gfms) {
                const auto& dev = model.devices[g];
                double vmag = std::abs(state.bus_v[model.bus_index(dev.bus)]);
                double err = v_ref[g] - vmag;
                double cand = dev.kp * err + dev.ki * (state.pi_integ[g] + dt_sub * err);
                double damping = 1.0 / (1.0 + dev.kp + dev.ki * dt_sub);
                double next = clamp(state.emf[g] - damping * (state.emf[g] - cand),
                                    opts.emf_min, opts.emf_max);
                max_change = std::max(max_change, std::abs(next - state.emf[g]));
                state.emf[g] = next;
            }
            if (max_change < opts.pi_tol) break;
            flow();
        }
        // Integrator update with conditional anti-windup at the EMF clamp.
        for (int g : gfms) {
            const auto& dev = model.devices[g];
            double vmag = std::abs(state.bus_v[model.bus_index(dev.bus)]);
            double err = v_ref[g] - vmag;
            bool at_hi = state.emf[g] >= opts.emf_max && err > 0.0;
            bool at_lo = state.emf[g] <= opts.emf_min && err < 0.0;
            if (!at_hi && !at_lo) state.pi_integ[g] += dt_sub * err;
        }
    }

    // (v) final network solution for the committed state.
    flow();
    state.time += opts.dt;
}

namespace {

using nlohmann::ordered_json;

const char* kind_name(DeviceKind k) {
    switch (k) {
        case DeviceKind::kGfm: return "gfm";
        case DeviceKind::kGfl: return "gfl";
        case DeviceKind::kSync: return "sync";
    }
    throw ConfigError("unknown device kind");
}

DeviceKind kind_from_name(const std::string& s) {
    if (s == "gfm") return DeviceKind::kGfm;
    if (s == "gfl") return DeviceKind::kGfl;
    if (s == "sync") return DeviceKind::kSync;
    throw ConfigError("unknown device kind '" + s + "'");
}

ordered_json complex_json(const Complex& z) {
    return ordered_json{{"re", z.real()}, {"im", z.imag()}};
}

Complex complex_from(const ordered_json& j) {
    return Complex(j.at("re").get<double>(), j.at("im").get<double>());
}

}  // namespace

std::string network_to_json(const NetworkModel& model) {
    ordered_json j;
    j["omega_nom"] = model.omega_nom;
    j["buses"] = model.buses;
    j["devices"] = ordered_json::array();
    for (const auto& d : model.devices) {
        ordered_json jd;
        jd["kind"] = kind_name(d.kind);
        jd["bus"] = d.bus;
        jd["rating"] = d.rating;
        jd["m_p"] = d.m_p;
        jd["m_q"] = d.m_q;
        jd["tau_m"] = d.tau_m;
        jd["coupling_z"] = complex_json(d.coupling_z);
        jd["p_set_base"] = d.p_set_base;
        jd["q_nom"] = d.q_nom;
        jd["v_set_base"] = d.v_set_base;
        jd["p_set_min"] = d.p_set_min;
        jd["p_set_max"] = d.p_set_max;
        jd["v_set_min"] = d.v_set_min;
        jd["v_set_max"] = d.v_set_max;
        jd["kp"] = d.kp;
        jd["ki"] = d.ki;
        j["devices"].push_back(std::move(jd));
    }
    j["lines"] = ordered_json::array();
    for (const auto& l : model.lines)
        j["lines"].push_back(ordered_json{
            {"from_bus", l.from_bus}, {"to_bus", l.to_bus}, {"z", complex_json(l.z)}});
    j["loads"] = ordered_json::array();
    for (const auto& ld : model.loads)
        j["loads"].push_back(ordered_json{{"bus", ld.bus}, {"p", ld.p}, {"q", ld.q}});
    j["microgrids"] = ordered_json::array();
    for (const auto& mg : model.microgrids)
        j["microgrids"].push_back(ordered_json{{"gfm_device", mg.gfm_device},
                                               {"gfl_device", mg.gfl_device},
                                               {"sync_device", mg.sync_device},
                                               {"load_bus", mg.load_bus}});
    return j.dump(2) + "\n";
}

NetworkModel network_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("network JSON parse error: ") + e.what());
    }
    try {
        NetworkModel m;
        m.omega_nom = j.at("omega_nom").get<double>();
        m.buses = j.at("buses").get<std::vector<int>>();
        for (const auto& jd : j.at("devices")) {
            DeviceParams d;
            d.kind = kind_from_name(jd.at("kind").get<std::string>());
            d.bus = jd.at("bus").get<int>();
            d.rating = jd.at("rating").get<double>();
            d.m_p = jd.at("m_p").get<double>();
            d.m_q = jd.at("m_q").get<double>();
            d.tau_m = jd.at("tau_m").get<double>();
            d.coupling_z = complex_from(jd.at("coupling_z"));
            d.p_set_base = jd.at("p_set_base").get<double>();
            d.q_nom = jd.at("q_nom").get<double>();
            d.v_set_base = jd.at("v_set_base").get<double>();
            d.p_set_min = jd.at("p_set_min").get<double>();
            d.p_set_max = jd.at("p_set_max").get<double>();
            d.v_set_min = jd.at("v_set_min").get<double>();
            d.v_set_max = jd.at("v_set_max").get<double>();
            d.kp = jd.at("kp").get<double>();
            d.ki = jd.at("ki").get<double>();
            m.devices.push_back(d);
        }
        for (const auto& jl : j.at("lines")) {
            LineParams l;
            l.from_bus = jl.at("from_bus").get<int>();
            l.to_bus = jl.at("to_bus").get<int>();
            l.z = complex_from(jl.at("z"));
            m.lines.push_back(l);
        }
        for (const auto& jl : j.at("loads")) {
            LoadParams ld;
            ld.bus = jl.at("bus").get<int>();
            ld.p = jl.at("p").get<double>();
            ld.q = jl.at("q").get<double>();
            m.loads.push_back(ld);
        }
        for (const auto& jm : j.at("microgrids")) {
            MicrogridRef mg;
            mg.gfm_device = jm.at("gfm_device").get<int>();
            mg.gfl_device = jm.at("gfl_device").get<int>();
            mg.sync_device = jm.at("sync_device").get<int>();
            mg.load_bus = jm.at("load_bus").get<int>();
            m.microgrids.push_back(mg);
        }
        validate(m);
        return m;
    } catch (const ordered_json::exception& e) {
        throw ConfigError(std::string("network JSON field error: ") + e.what());
    }
}

GridState steady_state(const NetworkModel& model, const SteadyStateOptions& opts) {
    validate(model);
    GridState st = initial_state(model);
    SetpointInputs zeros = SetpointInputs::zeros(static_cast<int>(model.devices.size()));
    for (int step = 0; step < opts.max_steps; ++step) {
        GridState prev = st;
        step_dynamics(model, st, zeros, opts.step);
        double change = 0.0;
        for (std::size_t i = 0; i < st.bus_v.size(); ++i)
            change = std::max(change, std::abs(st.bus_v[i] - prev.bus_v[i]));
        for (std::size_t d = 0; d < st.delta.size(); ++d) {
            change = std::max(change, std::abs(st.delta[d] - prev.delta[d]));
            change = std::max(change, std::abs(st.emf[d] - prev.emf[d]));
            change = std::max(change, std::abs(st.p_filt[d] - prev.p_filt[d]));
            change = std::max(change, std::abs(st.q_filt[d] - prev.q_filt[d]));
            change = std::max(change, std::abs(st.pi_integ[d] - prev.pi_integ[d]));
        }
        if (change < opts.stationarity_tol) {
            st.time = 0.0;
            return st;
        }
    }
    throw RuntimeError("steady_state did not settle within " +
                       std::to_string(opts.max_steps) + " steps");
}

}  // namespace fedgrid::grid
