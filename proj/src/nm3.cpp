#include "fedgrid/grid.hpp"

namespace fedgrid::grid {

namespace {

constexpr double kOmegaNom = 2.0 * 3.14159265358979323846 * 60.0;

DeviceParams gfm_unit(int bus, double rating, double p_set, double v_set) {
    DeviceParams d;
    d.kind = DeviceKind::kGfm;
    d.bus = bus;
    d.rating = rating;
    d.m_p = 0.01 * kOmegaNom / rating;  // 1% frequency droop over rating
    d.m_q = 0.05 / rating;              // 5% voltage droop over rating
    d.tau_m = 0.1;
    d.coupling_z = Complex(0.008, 0.06);
    d.p_set_base = p_set;
    d.q_nom = 0.0;
    d.v_set_base = v_set;
    d.kp = 2.0;
    d.ki = 10.0;
    return d;
}

DeviceParams gfl_unit(int bus, double rating, double p_cmd, double q_cmd) {
    DeviceParams d;
    d.kind = DeviceKind::kGfl;
    d.bus = bus;
    d.rating = rating;
    d.m_p = 0.0;
    d.m_q = 0.0;
    d.tau_m = 0.1;
    d.coupling_z = Complex(0.0, 0.0);
    d.p_set_base = p_cmd;
    d.q_nom = q_cmd;
    d.v_set_base = 1.0;
    return d;
}

DeviceParams sync_unit(int bus, double rating, double p_set, double emf) {
    DeviceParams d;
    d.kind = DeviceKind::kSync;
    d.bus = bus;
    d.rating = rating;
    d.m_p = 0.01 * kOmegaNom / rating;
    d.m_q = 0.05 / rating;  // unused: SYNC holds a fixed internal EMF
    d.tau_m = 1.0;          // slower measurement path stands in for inertia
    d.coupling_z = Complex(0.015, 0.18);
    d.p_set_base = p_set;
    d.q_nom = 0.0;
    d.v_set_base = emf;
    return d;
}

}  // namespace

NetworkModel nm3_network() {
    NetworkModel m;
    m.omega_nom = kOmegaNom;

    // Three identical microgrids; bus ids mirror the distribution-feeder
    // nodes the units sit on. Per microgrid: GFM bus, GFL bus, SYNC bus,
    // load bus, all starred on the load bus.
    struct MgBuses {
        int gfm, gfl, sync, load;
    };
    const MgBuses mg_buses[3] = {{51, 42, 47, 44}, {105, 101, 108, 102}, {80, 76, 83, 78}};

    const Complex z_feeder(0.006, 0.025);  // in-microgrid laterals
    const Complex z_tie(0.015, 0.06);      // tie-lines between load buses
    const double load_p = 1.1667;          // per-microgrid, total ~ 3.5
    const double load_q = 0.38;            // ~0.95 lagging power factor

    for (const auto& b : mg_buses) {
        m.buses.push_back(b.gfm);
        m.buses.push_back(b.gfl);
        m.buses.push_back(b.sync);
        m.buses.push_back(b.load);

        MicrogridRef mg;
        mg.gfm_device = static_cast<int>(m.devices.size());
        m.devices.push_back(gfm_unit(b.gfm, 0.6, 0.45, 1.02));
        mg.gfl_device = static_cast<int>(m.devices.size());
        m.devices.push_back(gfl_unit(b.gfl, 0.35, 0.35, 0.0));
        mg.sync_device = static_cast<int>(m.devices.size());
        m.devices.push_back(sync_unit(b.sync, 0.6, 0.45, 1.04));
        mg.load_bus = b.load;
        m.microgrids.push_back(mg);

        m.lines.push_back({b.gfm, b.load, z_feeder});
        m.lines.push_back({b.gfl, b.load, z_feeder});
        m.lines.push_back({b.sync, b.load, z_feeder});
        m.loads.push_back({b.load, load_p, load_q});
    }

    m.lines.push_back({mg_buses[0].load, mg_buses[1].load, z_tie});
    m.lines.push_back({mg_buses[1].load, mg_buses[2].load, z_tie});
    return m;
}

}  // namespace fedgrid::grid
