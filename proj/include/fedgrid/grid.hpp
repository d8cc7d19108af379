#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "fedgrid/util.hpp"

namespace fedgrid::grid {

using Complex = std::complex<double>;

enum class DeviceKind { kGfm, kGfl, kSync };

// Inverter / machine parameters. Droop-controlled sources (GFM, SYNC) are
// EMF-behind-impedance models; GFL units inject their commanded PQ.
struct DeviceParams {
    DeviceKind kind = DeviceKind::kGfm;
    int bus = 0;
    double rating = 1.0;          // p.u. apparent-power rating
    double m_p = 0.0;             // rad/s per p.u. active-power error
    double m_q = 0.0;             // p.u. voltage per p.u. reactive-power error
    double tau_m = 0.1;           // s, power measurement filter
    Complex coupling_z{0.0, 0.0}; // p.u., source coupling impedance
    double p_set_base = 0.0;      // p.u. active set-point (GFL: command)
    double q_nom = 0.0;           // p.u. reactive reference (GFL: command)
    double v_set_base = 1.0;      // p.u. voltage set-point (SYNC: fixed EMF)
    double p_set_min = -1.0, p_set_max = 1.0;
    double v_set_min = 0.9, v_set_max = 1.1;
    double kp = 2.0, ki = 10.0;   // GFM terminal-voltage PI gains
};

struct LineParams {
    int from_bus = 0;
    int to_bus = 0;
    Complex z{0.0, 0.1};          // p.u. series impedance
};

struct LoadParams {
    int bus = 0;
    double p = 0.0;               // p.u. consumption (positive = draw)
    double q = 0.0;
};

// One microgrid's members, by device index into NetworkModel::devices.
struct MicrogridRef {
    int gfm_device = -1;
    int gfl_device = -1;
    int sync_device = -1;
    int load_bus = -1;
};

struct NetworkModel {
    double omega_nom = 2.0 * 3.14159265358979323846 * 60.0;  // rad/s
    std::vector<int> buses;          // external bus ids
    std::vector<DeviceParams> devices;
    std::vector<LineParams> lines;
    std::vector<LoadParams> loads;
    std::vector<MicrogridRef> microgrids;

    int bus_index(int bus_id) const;          // throws ConfigError if unknown
    int device_at_bus(int bus_id) const;      // first device index, -1 if none
    std::vector<int> gfm_devices() const;     // indices, model order
};

// Structural checks: unique bus ids, references resolve, droop sources have
// nonzero coupling impedance, at least one GFM, network connected.
void validate(const NetworkModel& model);

// Quasi-static phasor state. Vectors are indexed like model.devices (entries
// unused by a device kind stay at their init values).
struct GridState {
    double time = 0.0;
    std::vector<Complex> bus_v;       // per bus
    std::vector<double> delta;        // rad, per device (sources)
    std::vector<double> emf;          // p.u., per device (sources)
    std::vector<double> p_filt;       // p.u., per device
    std::vector<double> q_filt;       // p.u., per device
    std::vector<double> pi_integ;     // p.u.*s, per device (GFM only)
};

// Per-device attack / resilient-control offsets added to the base set-points
// for one control step. Entries are indexed like model.devices; only GFM
// voltage entries (and droop-source P entries) have any effect.
struct SetpointInputs {
    std::vector<double> p_attack, p_res;
    std::vector<double> v_attack, v_res;

    static SetpointInputs zeros(int num_devices);
};

class PowerFlowError : public RuntimeError {
public:
    PowerFlowError(const std::string& what, double mismatch)
        : RuntimeError(what), mismatch_norm(mismatch) {}
    double mismatch_norm = 0.0;
};

struct StepOptions {
    double dt = 0.5;              // s, control step
    int substeps = 50;            // droop/filter sub-integration per step
    double pf_tol = 1e-13;        // max complex current mismatch
    int pf_max_iter = 50;
    double pi_tol = 1e-13;        // EMF fixed-point stop (max change)
    int pi_max_iter = 200;
    double emf_min = 0.5, emf_max = 1.5;
};

// Effective set-point: base + (attack + res), clamped to [lo, hi]. attack and
// res are summed first so an exact counter-action cancels bitwise.
double compose_setpoint(double base, double attack, double res, double lo, double hi);

// Frequency droop: omega_ref = omega_nom - m_p * (p_filt - p_set_eff).
double droop_frequency_ref(double p_filt, const DeviceParams& dev, double omega_nom,
                           double p_set_eff);
// Voltage droop: v_ref = v_set_eff - m_q * (q_filt - q_nom).
double droop_voltage_ref(double q_filt, const DeviceParams& dev, double v_set_eff);

// Newton-Raphson power flow on the complex nodal current balance. source_emf
// holds E*e^{j delta} per device (droop sources only; others ignored);
// bus_pq holds the net constant-power injection per bus (generation positive).
// Throws PowerFlowError on divergence. warm (optional) seeds the iteration.
std::vector<Complex> solve_power_flow(const NetworkModel& model,
                                      const std::vector<Complex>& source_emf,
                                      const std::vector<Complex>& bus_pq,
                                      const std::vector<Complex>* warm = nullptr,
                                      double tol = 1e-13, int max_iter = 50);

// Complex power injected into the network by one device, given solved bus
// voltages and the device's internal state.
Complex device_power(const NetworkModel& model, const std::vector<Complex>& bus_v,
                     const GridState& state, int device);

// Net constant-power injections per bus (GFL commands minus loads).
std::vector<Complex> constant_pq_injections(const NetworkModel& model);

// Advance one control step: sub-stepped measurement filters and droop angle
// dynamics, then the GFM voltage PI solved implicitly against the network
// algebra, then a final power flow. Angles are re-referenced to the first GFM
// so the co-rotating frame has a genuine fixed point.
void step_dynamics(const NetworkModel& model, GridState& state,
                   const SetpointInputs& inputs, const StepOptions& opts);

// Flat-start initial state (used by steady_state and tests).
GridState initial_state(const NetworkModel& model);

struct SteadyStateOptions {
    StepOptions step;
    double stationarity_tol = 1e-11;  // max state change between steps
    int max_steps = 5000;
};

// Runs step_dynamics with zero inputs until the state stops moving. Throws
// RuntimeError if no fixed point is reached within max_steps.
GridState steady_state(const NetworkModel& model, const SteadyStateOptions& opts = {});

// Bundled 3-microgrid default network (one GFM, one GFL, one synchronous
// condenser-style droop machine and one load bus per microgrid; tie lines
// load1-load2 and load2-load3).
NetworkModel nm3_network();

// JSON (de)serialization for network files.
std::string network_to_json(const NetworkModel& model);
NetworkModel network_from_json(const std::string& text);

}  // namespace fedgrid::grid
