#pragma once

#include "gasblend/metrics.hpp"
#include "gasblend/scenario.hpp"
#include "gasblend/simulator.hpp"
#include "gasblend/transcription.hpp"

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace gasblend {

/// Failure inside a named pipeline stage.  Artifacts written by earlier
/// stages stay on disk.
class WorkflowError : public std::runtime_error {
public:
    WorkflowError(const std::string& stage, const std::string& what)
        : std::runtime_error("[" + stage + "] " + what), stage_(stage) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct StageTime {
    std::string stage;
    double seconds = 0.0;
};

/// Optimize-then-simulate comparison summary.
struct ValidationReport {
    double pressure_l2 = 0.0;  // percent
    double pressure_max = 0.0;
    double flux_l2 = 0.0;
    double flux_max = 0.0;
    double objective = 0.0;
    SolveStatus solver_status = SolveStatus::NumericalFailure;
    int solver_iterations = 0;
    double solver_kkt = 0.0;
    double solver_feasibility = 0.0;
    double state_gap_ratio = 0.0;  // |x(T)-x(0)|_inf over peak-to-peak
    std::vector<StageTime> runtimes;

    double total_seconds() const;
};

/// Everything one scenario run produces, in memory.
struct WorkflowRun {
    RefinedNetwork refined;
    ScenarioConfig config;
    NlpResult solution;
    PeriodicProfile controls;
    MixtureState initial_state;
    Trajectory optimized;  // transcription samples, wrap row appended
    Trajectory simulated;
    SeriesTable optimized_pressure, optimized_flux;
    SeriesTable simulated_pressure, simulated_flux;
    ValidationReport report;
};

/// refine -> steady -> transcribe -> solve -> controls -> simulate (from the
/// optimal solution's initial state) -> metrics.  With a nonempty
/// artifact_dir every stage writes its outputs as soon as they exist.
WorkflowRun run_workflow(const ScenarioDocument& doc, const std::string& artifact_dir = "");

// scenario resolution helpers shared with the command-line tool
BoundarySchedule boundary_schedule(const ScenarioDocument& doc, const RefinedNetwork& rnet);
ScenarioConfig scenario_config(const ScenarioDocument& doc, const RefinedNetwork& rnet);

/// Start ratios for the steady solve: 30% into each actuator's range.
Eigen::VectorXd initial_ratios(const Network& net);

/// Collocation samples viewed as a trajectory; the first sample is repeated
/// at t = horizon, which the wrap constraint makes exact.
Trajectory transcription_trajectory(const GasNlp& nlp, const Eigen::VectorXd& x);

SeriesTable pressure_series(const Trajectory& traj, double sigma1, double sigma2);
SeriesTable flux_series(const Trajectory& traj);

/// Transcription solve from a stacked start point.  Zero-blend documents get
/// every second-constituent density pinned to zero first: those balance rows
/// vanish identically, and the unpinned problem has no strict interior.
/// Throws NumericsError unless the solver converges.
NlpResult solve_transcription(const GasNlp& nlp, const ScenarioDocument& doc,
                              const Eigen::VectorXd& start);

/// Validating simulation under periodic controls.  Zero-blend documents
/// integrate the uniform-concentration reduction so the absent constituent
/// stays at hard zero in every sample.
Trajectory simulate_scenario(const ScenarioDocument& doc, const RefinedNetwork& rnet,
                             const BoundarySchedule& schedule, const PeriodicProfile& controls,
                             const MixtureState& initial);

// artifact documents
void write_controls_csv(std::ostream& os, const PeriodicProfile& controls);
PeriodicProfile read_controls_csv(std::istream& is, double period);
void write_state_json(std::ostream& os, const Network& net, const MixtureState& state,
                      const Eigen::VectorXd& ratios);
MixtureState read_state_json(std::istream& is, const Network& net,
                             Eigen::VectorXd* ratios = nullptr);
std::string report_json(const ValidationReport& report);
ValidationReport read_report(const std::string& path);

} // namespace gasblend
