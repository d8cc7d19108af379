#pragma once

// Shared test utilities: finite-difference gradient checking and small
// closed-form oracles used by both the unit tests and the acceptance suite.

#include <cmath>
#include <complex>
#include <functional>
#include <random>
#include <vector>

#include "fedgrid/neural.hpp"

namespace testutil {

// Central finite difference of a scalar function of one parameter.
inline double central_diff(const std::function<double()>& f, double* p, double h) {
    double saved = *p;
    *p = saved + h;
    double hi = f();
    *p = saved - h;
    double lo = f();
    *p = saved;
    return (hi - lo) / (2.0 * h);
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    int checked = 0;
};

// Compares analytic parameter gradients against central differences for a
// scalar loss. rel error uses an absolute floor so near-zero grads don't blow
// up the ratio.
inline GradCheckResult check_param_grads(fedgrid::neural::Mlp& net,
                                         const fedgrid::neural::Grads& analytic,
                                         const std::function<double()>& loss,
                                         double h = 1e-6, double abs_floor = 1e-7) {
    GradCheckResult res;
    auto check = [&](double* p, double g) {
        double fd = central_diff(loss, p, h);
        double denom = std::max(std::max(std::abs(g), std::abs(fd)), abs_floor);
        double rel = std::abs(g - fd) / denom;
        if (rel > res.max_rel_err) res.max_rel_err = rel;
        ++res.checked;
    };
    for (std::size_t l = 0; l < net.w.size(); ++l) {
        for (std::size_t i = 0; i < net.w[l].size(); ++i)
            check(&net.w[l][i], analytic.w[l][i]);
        for (std::size_t i = 0; i < net.b[l].size(); ++i)
            check(&net.b[l][i], analytic.b[l][i]);
    }
    return res;
}

// Closed-form two-bus power flow: source E feeds load P+jQ through z. Returns
// the load-bus voltage (high-voltage root). Throws std::domain_error beyond
// the loadability limit.
inline std::complex<double> two_bus_voltage(std::complex<double> E, std::complex<double> z,
                                            double P, double Q) {
    double r = z.real(), x = z.imag();
    double e2 = std::norm(E);
    double beta = 2.0 * (P * r + Q * x) - e2;
    double c = (P * P + Q * Q) * std::norm(z);
    double disc = beta * beta - 4.0 * c;
    if (disc < 0.0) throw std::domain_error("beyond loadability limit");
    double u = (-beta + std::sqrt(disc)) / 2.0;  // |V|^2, high root
    // V = E*u / (u + z*(P - jQ)), from V2 = |V|e^{j t} and the branch current.
    std::complex<double> denom = u + z * std::complex<double>(P, -Q);
    return E * u / denom;
}

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace testutil
