#pragma once

#include "gasblend/dynamics.hpp"
#include "gasblend/network.hpp"
#include "gasblend/nlp.hpp"
#include "gasblend/profiles.hpp"
#include "gasblend/simulator.hpp"

#include <string>

namespace gasblend {

/// Full case description resolved to SI units.  Document units are km, MPa,
/// hours and mass fraction; withdrawal fluxes are already kg/(m^2 s).
struct ScenarioDocument {
    std::string label;
    Network network;
    double segment_cap = 0.0;  // m
    double horizon = 0.0;      // s
    int time_steps = 0;
    GasConstituent gas1{};
    GasConstituent gas2{};
    Eigen::VectorXd supply_pressure;  // Pa, per supply node in network order
    PeriodicProfile injection;        // blend mass fraction, one channel per supply
    PeriodicProfile withdrawal;       // one channel per withdrawal node of `network`
    double pressure_min = 0.0;        // Pa, applied at every state node
    double pressure_max = 0.0;
    double isentropic_exponent = 1.28;
    Eigen::VectorXd compressor_coefficients;  // per actuator
    SolverOptions solver{};
    SimulateOptions integrator{};

    void validate() const;

    /// True when the supply blend fraction is identically zero.
    bool zero_blend() const;
};

/// Parses a scenario document (JSON text).  The referenced network file is
/// resolved against base_dir unless network_override names a file directly.
ScenarioDocument parse_scenario(const std::string& text, const std::string& base_dir,
                                const std::string& network_override = "");
ScenarioDocument load_scenario(const std::string& path,
                               const std::string& network_override = "");

} // namespace gasblend
