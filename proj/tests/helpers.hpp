#pragma once

#include "gasblend/network.hpp"
#include "gasblend/units.hpp"

#include <random>

namespace testutil {

constexpr double kSigma1 = 338.38;           // m/s, base gas
constexpr double kSigma2 = 4.0 * kSigma1;    // m/s, hydrogen

// supply(id 1) -> withdrawal(id 2), one pipe.
inline gasblend::Network single_pipe(double length_km = 10.0, bool inlet_compressor = false) {
    gasblend::Network net;
    net.nodes = {{1, gasblend::NodeKind::Supply}, {2, gasblend::NodeKind::Withdrawal}};
    gasblend::Edge e;
    e.id = 1;
    e.from = 1;
    e.to = 2;
    e.length = gasblend::units::km_to_m(length_km);
    e.diameter = 0.5;
    e.friction = 0.011;
    net.edges = {e};
    if (inlet_compressor) {
        net.actuators.push_back({1, gasblend::ActuatorPosition::Inlet,
                                 gasblend::ActuatorRole::Compressor, 1.0, 2.0});
        net.edges[0].inlet_compressor = 0;
    }
    net.validate();
    return net;
}

// supply(1) -> 2 -> ... -> nseg+1, equal segments.
inline gasblend::Network chain(int nseg, double seg_km = 10.0) {
    gasblend::Network net;
    net.nodes.push_back({1, gasblend::NodeKind::Supply});
    for (int i = 0; i < nseg; ++i) net.nodes.push_back({2 + i, gasblend::NodeKind::Withdrawal});
    for (int k = 0; k < nseg; ++k) {
        gasblend::Edge e;
        e.id = k + 1;
        e.from = k + 1;
        e.to = k + 2;
        e.length = gasblend::units::km_to_m(seg_km);
        e.diameter = 0.5;
        e.friction = 0.011;
        net.edges.push_back(e);
    }
    net.validate();
    return net;
}

// Four-node demonstration network: supply 1, withdrawals 2 (hub), 3, 4;
// pipes 1->2 (50 km, compressors at inlet and at the start of the last
// refined segment), 2->4 (30 km), 2->3 (20 km), 3->4 (30 km).
inline gasblend::Network diamond() {
    gasblend::Network net;
    net.nodes = {{1, gasblend::NodeKind::Supply},
                 {2, gasblend::NodeKind::Withdrawal},
                 {3, gasblend::NodeKind::Withdrawal},
                 {4, gasblend::NodeKind::Withdrawal}};
    auto pipe = [](int id, int from, int to, double km) {
        gasblend::Edge e;
        e.id = id;
        e.from = from;
        e.to = to;
        e.length = gasblend::units::km_to_m(km);
        e.diameter = 0.5;
        e.friction = 0.011;
        return e;
    };
    net.edges = {pipe(1, 1, 2, 50.0), pipe(2, 2, 4, 30.0), pipe(3, 2, 3, 20.0),
                 pipe(4, 3, 4, 30.0)};
    net.actuators = {{1, gasblend::ActuatorPosition::Inlet, gasblend::ActuatorRole::Compressor,
                      1.0, 2.0},
                     {1, gasblend::ActuatorPosition::Outlet, gasblend::ActuatorRole::Compressor,
                      1.0, 2.0}};
    net.edges[0].inlet_compressor = 0;  // second compressor re-homed by refine()
    net.validate();
    return net;
}

} // namespace testutil
