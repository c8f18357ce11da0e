#pragma once

#include "gasblend/dynamics.hpp"
#include "gasblend/profiles.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace gasblend {

/// Time-varying boundary data: periodic piecewise-linear profiles for the
/// supply constituent densities and the withdrawal fluxes.  All three
/// profiles must share one period.
class BoundarySchedule {
public:
    BoundarySchedule(PeriodicProfile supply1, PeriodicProfile supply2,
                     PeriodicProfile withdrawal);

    static BoundarySchedule constant(const BoundaryValues& b, double period);

    BoundaryValues at(double t) const;
    double period() const { return supply1_.period(); }
    int supply_count() const { return supply1_.channels(); }
    int withdrawal_count() const { return withdrawal_.channels(); }
    const PeriodicProfile& supply1() const { return supply1_; }
    const PeriodicProfile& supply2() const { return supply2_; }
    const PeriodicProfile& withdrawal() const { return withdrawal_; }

private:
    PeriodicProfile supply1_, supply2_, withdrawal_;
};

struct SimulateOptions {
    double rtol = 1e-6;
    double atol = 0.0;         // <= 0: 1e-9 x the peak initial total density
    double initial_step = 0.0; // s; <= 0: horizon/1000
    long max_steps = 500000;
    int reporting_samples = 241; // uniform output grid over [0, horizon]
    bool keep_step_times = true; // also emit every accepted integrator step
};

/// Integrated state history.  Fluxes are re-eliminated from the stored
/// densities at every output time, so derived tables are reproducible from
/// the states alone.
struct Trajectory {
    std::vector<double> times;        // s, strictly increasing
    std::vector<MixtureState> states; // one per time

    long accepted_steps = 0;
    long rejected_steps = 0;
    long rhs_evaluations = 0;
    long jacobian_evaluations = 0;
    int flux_reversals = 0;         // per-edge sign flips between accepted steps
    double linepack_residual = 0.0; // worst per-step mass-balance defect, relative

    Eigen::MatrixXd pressure_table(double sigma1, double sigma2) const; // times x nodes
    Eigen::MatrixXd concentration_table() const;                       // times x nodes
    Eigen::MatrixXd flux_table() const;                                // times x edges
};

/// Adaptive implicit integration of the two-constituent network dynamics
/// under the given boundary and control schedules.  `controls` carries one
/// channel per actuator (zero channels when the network has none).  Throws
/// NumericsError when the step size collapses or a density leaves the
/// admissible set, reporting the failure time.
Trajectory simulate(const MixtureDynamics& dyn, const BoundarySchedule& boundary,
                    const PeriodicProfile& controls, const MixtureState& x0, double horizon,
                    const SimulateOptions& opts = {});

/// Same integrator on the total-density reduction; supply profiles must hold
/// the reduction's concentration at every sample.  Output states carry the
/// split partial densities.
Trajectory simulate(const HomogeneousDynamics& dyn, const BoundarySchedule& boundary,
                    const PeriodicProfile& controls, const Eigen::VectorXd& rho_total0,
                    double horizon, const SimulateOptions& opts = {});

/// Comma-separated trajectory table, one row per output time.  Header:
/// t_s, p_node_<id>..., eta2_node_<id>..., phi_edge_<id>...
void write_trajectory_csv(std::ostream& os, const Trajectory& traj, const Network& net,
                          double sigma1, double sigma2);

/// Spatial-refinement convergence study on a single supply-to-outlet line:
/// the same withdrawal transient is integrated at every segment cap and
/// compared against the run at `reference_cap` on the shared reporting grid.
struct ConsistencyConfig {
    double sigma1 = 0.0;
    double sigma2 = 0.0;
    double supply_pressure = 0.0;    // Pa
    double alpha2 = 0.0;             // supply blend fraction
    double outlet_withdrawal = 0.0;  // base flux at the far end
    double pulse_fraction = 0.5;     // withdrawal swing; 0 probes pure steadiness
    double horizon = 0.0;            // s
    SimulateOptions sim{};
};

struct ConsistencyResult {
    std::vector<double> caps;           // as given
    std::vector<double> pressure_error; // outlet pressure, relative L2 vs reference
    std::vector<double> flux_error;     // inlet flux, relative L2 vs reference
    std::vector<double> pressure_order; // log(e_i/e_{i+1}) / log(cap_i/cap_{i+1})
    std::vector<double> flux_order;
};

/// With pulse_fraction = 0 the errors instead measure each cap's drift from
/// its own steady start (the cross-cap steady offsets are exactly the
/// spatial error the transient study measures, so they are not a null test).
ConsistencyResult consistency_study(const Network& pipe, const std::vector<double>& caps,
                                    double reference_cap, const ConsistencyConfig& cfg);

} // namespace gasblend
