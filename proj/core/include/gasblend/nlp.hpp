#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <vector>

namespace gasblend {

/// Smooth nonlinear program with analytic first derivatives:
///
///   minimize    f(x)
///   subject to  cE(x) = 0,   cI(x) >= 0,   lb <= x <= ub.
///
/// Bound entries may be +-infinity.  Jacobian sparsity patterns must not
/// change between evaluation points.
class NlpProblem {
public:
    virtual ~NlpProblem() = default;

    virtual int num_vars() const = 0;
    virtual int num_equalities() const = 0;
    virtual int num_inequalities() const = 0;

    virtual Eigen::VectorXd lower_bounds() const = 0;
    virtual Eigen::VectorXd upper_bounds() const = 0;

    /// Objective value; fills the gradient when grad is non-null.
    virtual double objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad = nullptr) const = 0;

    virtual Eigen::VectorXd equalities(const Eigen::VectorXd& x) const = 0;
    virtual Eigen::VectorXd inequalities(const Eigen::VectorXd& x) const = 0;

    virtual Eigen::SparseMatrix<double> equality_jacobian(const Eigen::VectorXd& x) const = 0;
    virtual Eigen::SparseMatrix<double> inequality_jacobian(const Eigen::VectorXd& x) const = 0;
};

enum class CurvatureModel {
    QuasiUpdate,  // damped diagonal secant accumulation
    GaussNewton,  // J^T J of the equality residual
};

/// View of a problem with some variables pinned to fixed values.  Useful
/// when a scenario makes degrees of freedom structurally inactive: pinning
/// them keeps the barrier away from a degenerate corner where constraint
/// rows lose rank against the active bounds.
class FixedVariableNlp : public NlpProblem {
public:
    /// `fixed` holds inner variable indices (any order, no duplicates) and
    /// `values` the value pinned to each.
    FixedVariableNlp(const NlpProblem& inner, std::vector<int> fixed, Eigen::VectorXd values);

    int num_vars() const override;
    int num_equalities() const override;
    int num_inequalities() const override;
    Eigen::VectorXd lower_bounds() const override;
    Eigen::VectorXd upper_bounds() const override;
    double objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad = nullptr) const override;
    Eigen::VectorXd equalities(const Eigen::VectorXd& x) const override;
    Eigen::VectorXd inequalities(const Eigen::VectorXd& x) const override;
    Eigen::SparseMatrix<double> equality_jacobian(const Eigen::VectorXd& x) const override;
    Eigen::SparseMatrix<double> inequality_jacobian(const Eigen::VectorXd& x) const override;

    /// Reduced vector completed with the pinned values.
    Eigen::VectorXd expand(const Eigen::VectorXd& reduced) const;
    /// Full vector restricted to the free variables.
    Eigen::VectorXd reduce(const Eigen::VectorXd& full) const;

private:
    Eigen::SparseMatrix<double> shrink(const Eigen::SparseMatrix<double>& m) const;

    const NlpProblem& inner_;
    std::vector<int> keep_;     // inner index of every free variable
    std::vector<int> col_map_;  // inner index -> reduced index or -1
    Eigen::VectorXd base_;      // pinned values in their slots, zero elsewhere
};

struct SolverOptions {
    double tol_kkt = 1e-6;   // scaled stationarity + complementarity target
    double tol_feas = 1e-8;  // scaled constraint violation target
    int max_iter = 500;
    CurvatureModel curvature = CurvatureModel::QuasiUpdate;
    double regularization_floor = 1e-12;
    bool verbose = false;  // one iteration line to stderr per step

    void validate() const;
};

enum class SolveStatus { Converged, IterationCap, Infeasible, NumericalFailure };

const char* to_string(SolveStatus status);

struct NlpResult {
    SolveStatus status = SolveStatus::NumericalFailure;
    Eigen::VectorXd x;               // best primal iterate
    Eigen::VectorXd multipliers_eq;  // one per equality row
    Eigen::VectorXd multipliers_in;  // one per inequality row, >= 0
    Eigen::VectorXd multipliers_lb;  // lower-bound duals, >= 0
    Eigen::VectorXd multipliers_ub;  // upper-bound duals, >= 0
    double objective_value = 0.0;
    double kkt_residual = 0.0;
    double feasibility = 0.0;  // max constraint violation
    int iterations = 0;
    double wall_time_s = 0.0;
};

/// Primal-dual interior-point solve started from x0 (projected into the
/// strict interior of the bounds first).  Deterministic: identical inputs
/// give bitwise-identical iterates.
NlpResult solve(const NlpProblem& problem, const Eigen::VectorXd& x0, const SolverOptions& opts = {});

} // namespace gasblend
