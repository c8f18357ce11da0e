#pragma once

#include "gasblend/network.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <utility>
#include <vector>

namespace gasblend {

/// Nodal partial densities at withdrawal nodes plus edge inlet mass fluxes
/// at one instant.  Constituent 1 is the base gas, constituent 2 the blend.
struct MixtureState {
    Eigen::VectorXd rho1;  // kg/m^3, size V-r
    Eigen::VectorXd rho2;  // kg/m^3, size V-r
    Eigen::VectorXd flux;  // kg/(m^2 s), size E
};

/// Instantaneous boundary data: supply constituent densities and hydrogen
/// mass fraction at supply nodes, withdrawal mass fluxes at withdrawal nodes.
struct BoundaryValues {
    Eigen::VectorXd s1;      // size r
    Eigen::VectorXd s2;      // size r
    Eigen::VectorXd alpha2;  // size r, s2/(s1+s2)
    Eigen::VectorXd w;       // size V-r

    static BoundaryValues from_densities(const Eigen::VectorXd& s1, const Eigen::VectorXd& s2,
                                         const Eigen::VectorXd& w);
    static BoundaryValues from_pressure_alpha(const Eigen::VectorXd& pressure,
                                              const Eigen::VectorXd& alpha2,
                                              const Eigen::VectorXd& w, double sigma1,
                                              double sigma2);
    void validate() const;
};

/// Scenario-level physical and discretization constants.
struct ScenarioConfig {
    GasConstituent gas1;
    GasConstituent gas2;
    double horizon = 0.0;  // s
    Eigen::VectorXd pressure_min;  // Pa, per withdrawal node
    Eigen::VectorXd pressure_max;  // Pa, per withdrawal node
    double isentropic_exponent = 1.28;
    Eigen::VectorXd compressor_coefficients;  // per actuator; regulators ignored
    int time_steps = 0;                       // N

    void validate(int withdrawal_nodes, int actuators) const;
};

/// Ideal mixture equation of state: p = sigma1^2 rho1 + sigma2^2 rho2.
double pressure(double rho1, double rho2, double sigma1, double sigma2);
Eigen::VectorXd pressure(const Eigen::VectorXd& rho1, const Eigen::VectorXd& rho2, double sigma1,
                         double sigma2);

/// Hydrogen mass fractions eta2 = rho2/(rho1+rho2); throws NumericsError on a
/// node with zero total density.
Eigen::VectorXd nodal_concentration(const MixtureState& state);

/// Static per-edge index data shared by the dynamics, simulator and
/// transcription layers.
struct EdgeTopo {
    int tail_w = -1;      // withdrawal index of tail, or -1
    int tail_s = -1;      // supply index of tail, or -1
    int head_w = -1;
    int head_s = -1;
    int mu_in_slot = -1;  // actuator index of the inlet compressor, or -1
    int mu_out_slot = -1; // actuator index of the outlet regulator, or -1
    double length = 0.0;
    double fric = 0.0;    // lambda/(2D), so fric*length multiplies phi|phi|
    double conduct = 0.0; // 2D/(lambda*length)
};

std::vector<EdgeTopo> build_edge_topo(const Network& net);

/// Evaluator for the lumped two-constituent network dynamics.  Holds only
/// immutable configuration; all evaluation methods are pure functions of
/// their arguments and may run concurrently.
class MixtureDynamics {
public:
    MixtureDynamics(const Network& net, double sigma1, double sigma2);

    const Network& network() const { return *net_; }
    const std::vector<EdgeTopo>& topo() const { return topo_; }
    int state_nodes() const { return W_; }
    int edge_count() const { return E_; }
    int supply_count() const { return r_; }
    double sigma1() const { return sigma1_; }
    double sigma2() const { return sigma2_; }

    /// Compressed-inlet minus regulated-outlet pressure per edge.
    Eigen::VectorXd pressure_drop(const Eigen::VectorXd& rho1, const Eigen::VectorXd& rho2,
                                  const BoundaryValues& b, const Eigen::VectorXd& ratios) const;

    /// Pipe outlet total density per edge (after the regulator ratio).
    Eigen::VectorXd outlet_density(const Eigen::VectorXd& rho1, const Eigen::VectorXd& rho2,
                                   const BoundaryValues& b, const Eigen::VectorXd& ratios) const;

    /// Inlet concentration of constituent 2 per edge (tail-node upwinding).
    Eigen::VectorXd inlet_concentration(const Eigen::VectorXd& rho1, const Eigen::VectorXd& rho2,
                                        const BoundaryValues& b) const;

    /// Flux that zeroes the per-edge momentum balance; signed square root, so
    /// reversed flow is representable.  Throws on nonpositive outlet density.
    Eigen::VectorXd solve_edge_flux(const Eigen::VectorXd& rho1, const Eigen::VectorXd& rho2,
                                    const BoundaryValues& b, const Eigen::VectorXd& ratios) const;

    /// Momentum residual for an independently supplied flux vector, in Pa.
    Eigen::VectorXd momentum_residual(const Eigen::VectorXd& rho1, const Eigen::VectorXd& rho2,
                                      const Eigen::VectorXd& flux, const BoundaryValues& b,
                                      const Eigen::VectorXd& ratios) const;

    /// Diagonal of the mass operator F = Qw_pos^T L Mw_pos.  Throws
    /// NumericsError if a withdrawal node has no incoming edge.
    Eigen::VectorXd mass_diag(const Eigen::VectorXd& ratios) const;

    /// Right-hand side of F rhodot = f for both constituents; `flux` must be
    /// consistent with solve_edge_flux (or any candidate vector).
    std::pair<Eigen::VectorXd, Eigen::VectorXd> density_rhs(
        const Eigen::VectorXd& rho1, const Eigen::VectorXd& rho2, const BoundaryValues& b,
        const Eigen::VectorXd& ratios, const Eigen::VectorXd& flux) const;

    /// Numerators f^(m) of the balance law (no mass-matrix solve), stacked
    /// [f1; f2]; used by the steady solver and the transcription.
    Eigen::VectorXd balance_residual(const Eigen::VectorXd& rho1, const Eigen::VectorXd& rho2,
                                     const BoundaryValues& b, const Eigen::VectorXd& ratios,
                                     const Eigen::VectorXd& flux) const;

    /// Jacobian of balance_residual with the flux eliminated through
    /// solve_edge_flux, with respect to [rho1; rho2].  Near-zero fluxes use a
    /// smoothed slope so entries stay finite.
    Eigen::SparseMatrix<double> balance_jacobian_eliminated(const Eigen::VectorXd& rho1,
                                                            const Eigen::VectorXd& rho2,
                                                            const BoundaryValues& b,
                                                            const Eigen::VectorXd& ratios,
                                                            double flux_floor) const;

private:
    const Network* net_;
    std::vector<EdgeTopo> topo_;
    int W_ = 0, E_ = 0, r_ = 0;
    double sigma1_ = 0.0, sigma2_ = 0.0;
    // incoming edges per withdrawal node, for the mass diagonal
    std::vector<std::vector<int>> incoming_;
};

struct SteadyOptions {
    double tol = 1e-10;      // scaled residual target
    int max_iter = 100;
    double flux_scale = 0.0; // 0 = derive from withdrawals
};

/// Damped-Newton steady state under constant boundary data and ratios.
MixtureState steady_state(const MixtureDynamics& dyn, const BoundaryValues& b,
                          const Eigen::VectorXd& ratios, const SteadyOptions& opts = {});

/// Total-density evaluator valid when the concentration is uniform across
/// the network and constant in time (generalized sound speed reduction).
class HomogeneousDynamics {
public:
    HomogeneousDynamics(const Network& net, double sigma1, double sigma2, double alpha2);

    double sound_speed() const { return a_; }
    double alpha2() const { return alpha2_; }
    int state_nodes() const { return W_; }
    int supply_count() const { return r_; }
    int actuator_count() const { return actuators_; }

    Eigen::VectorXd solve_edge_flux(const Eigen::VectorXd& rho_total,
                                    const Eigen::VectorXd& supply_total,
                                    const Eigen::VectorXd& ratios) const;
    Eigen::VectorXd mass_diag(const Eigen::VectorXd& ratios) const;
    /// F rhodot = Qw^T phi - w.
    Eigen::VectorXd density_rhs(const Eigen::VectorXd& rho_total,
                                const Eigen::VectorXd& supply_total, const Eigen::VectorXd& w,
                                const Eigen::VectorXd& ratios, const Eigen::VectorXd& flux) const;

    /// Partial densities recovered from the total.
    std::pair<Eigen::VectorXd, Eigen::VectorXd> split(const Eigen::VectorXd& rho_total) const;

    const std::vector<EdgeTopo>& topo() const { return topo_; }

private:
    std::vector<EdgeTopo> topo_;
    std::vector<std::vector<int>> incoming_;
    int W_ = 0, E_ = 0, r_ = 0, actuators_ = 0;
    double a_ = 0.0;
    double alpha2_ = 0.0;
};

/// Builds the reduced evaluator; rejects supply alpha profiles that are not
/// uniformly equal to alpha2 (checked by the caller at sample level).
HomogeneousDynamics homogeneous_reduce(const Network& net, double sigma1, double sigma2,
                                       double alpha2);

} // namespace gasblend
