#pragma once

#include "gasblend/dynamics.hpp"
#include "gasblend/network.hpp"
#include "gasblend/nlp.hpp"
#include "gasblend/profiles.hpp"
#include "gasblend/simulator.hpp"

#include <memory>
#include <string>
#include <vector>

namespace gasblend {

/// Forward difference of a periodic sample sequence: row n of the output is
/// (x_{n+1 mod N} - x_n) * N / T.  Annihilates constants; every output
/// column sums to zero (telescoping wrap).
struct DifferentiationOperator {
    int steps = 0;        // N
    double horizon = 0.0; // T, s

    /// samples is N x m (one row per collocation point).
    Eigen::MatrixXd apply(const Eigen::MatrixXd& samples) const;
};

/// Index arithmetic for the stacked decision vector.  Per collocation point
/// n the variables are laid out as [rho1 (W), rho2 (W), flux (E), ratio (A)]
/// and the equality rows as [density m=1 (W), density m=2 (W), momentum (E)].
struct TranscriptionLayout {
    int N = 0;  // collocation points
    int W = 0;  // withdrawal nodes
    int E = 0;  // edges
    int A = 0;  // actuators

    int var_block() const { return 2 * W + E + A; }
    int eq_block() const { return 2 * W + E; }
    int num_vars() const { return N * var_block(); }
    int num_equalities() const { return N * eq_block(); }
    int num_inequalities() const { return 2 * N * W; }

    int rho1(int n, int j) const { return n * var_block() + j; }
    int rho2(int n, int j) const { return n * var_block() + W + j; }
    int flux(int n, int k) const { return n * var_block() + 2 * W + k; }
    int ratio(int n, int a) const { return n * var_block() + 2 * W + E + a; }

    /// m is the constituent (1 or 2).
    int density_row(int m, int n, int j) const { return n * eq_block() + (m - 1) * W + j; }
    int momentum_row(int n, int k) const { return n * eq_block() + 2 * W + k; }

    /// Pressure rows come in (lower, upper) pairs per node per point.
    int pressure_low_row(int n, int j) const { return n * 2 * W + 2 * j; }
    int pressure_high_row(int n, int j) const { return n * 2 * W + 2 * j + 1; }

    /// Human-readable identity of a variable / equality row, for diagnostics.
    std::string describe_var(int idx) const;
    std::string describe_equality(int row) const;
};

/// Periodic direct transcription of the mixture flow dynamics on N
/// equally-spaced collocation points:
///
///   density rows   [ F(mu(t_n)) (rho_{n+1}-rho_n) N/T - f^m(x_n) ] / phi_sc
///   momentum rows  [ -drop_k + fric l phi|phi| / rho_out ] / p_ref
///   pressure rows  (p - p_min)/p_ref >= 0,  (p_max - p)/p_ref >= 0
///
/// Densities are scaled by p_ref/sigma1^2 and fluxes by the peak sampled
/// withdrawal; ratios are unscaled and live in their actuator bounds.
class GasNlp : public NlpProblem {
public:
    GasNlp(const RefinedNetwork& net, const ScenarioConfig& scenario,
           const BoundarySchedule& boundary);

    GasNlp(const GasNlp&) = delete;
    GasNlp& operator=(const GasNlp&) = delete;

    int num_vars() const override { return layout_.num_vars(); }
    int num_equalities() const override { return layout_.num_equalities(); }
    int num_inequalities() const override { return layout_.num_inequalities(); }
    Eigen::VectorXd lower_bounds() const override { return lb_; }
    Eigen::VectorXd upper_bounds() const override { return ub_; }
    double objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const override;
    Eigen::VectorXd equalities(const Eigen::VectorXd& x) const override;
    Eigen::VectorXd inequalities(const Eigen::VectorXd& x) const override;
    Eigen::SparseMatrix<double> equality_jacobian(const Eigen::VectorXd& x) const override;
    Eigen::SparseMatrix<double> inequality_jacobian(const Eigen::VectorXd& x) const override;

    const TranscriptionLayout& layout() const { return layout_; }
    const MixtureDynamics& dynamics() const { return dyn_; }
    const Network& network() const { return rnet_.net; }
    const ScenarioConfig& scenario() const { return scenario_; }

    double sample_time(int n) const;
    const BoundaryValues& sample(int n) const;
    double density_scale() const { return rho_sc_; }
    double flux_scale() const { return flux_sc_; }
    double pressure_scale() const { return p_ref_; }

    /// Writes one collocation sample (physical units) into the stacked
    /// scaled vector.
    void set_sample(Eigen::VectorXd& x, int n, const MixtureState& state,
                    const Eigen::VectorXd& ratios) const;

    /// Stacked start replicating one operating point at every t_n.
    Eigen::VectorXd stack(const MixtureState& state, const Eigen::VectorXd& ratios) const;

    /// Physical-unit views of one collocation sample of a stacked vector.
    MixtureState state_at(const Eigen::VectorXd& x, int n) const;
    Eigen::VectorXd ratios_at(const Eigen::VectorXd& x, int n) const;

private:
    RefinedNetwork rnet_;
    ScenarioConfig scenario_;
    MixtureDynamics dyn_;
    TranscriptionLayout layout_;
    std::vector<BoundaryValues> samples_;
    std::vector<std::pair<int, int>> compressors_;  // (actuator slot, edge index)
    Eigen::VectorXd lb_, ub_;
    double rho_sc_ = 0.0, flux_sc_ = 0.0, p_ref_ = 0.0;
    double kappa_ = 0.0;    // (nu-1)/nu
    double flux_eps_ = 0.0; // |phi| smoothing radius
};

std::unique_ptr<GasNlp> build_nlp(const RefinedNetwork& net, const ScenarioConfig& scenario,
                                  const BoundarySchedule& boundary);

/// Per-actuator periodic piecewise-linear ratio profiles on the collocation
/// grid, ready to feed the simulator.
PeriodicProfile extract_controls(const GasNlp& nlp, const Eigen::VectorXd& x);

} // namespace gasblend
