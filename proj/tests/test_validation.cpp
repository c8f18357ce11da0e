#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gasblend/errors.hpp"
#include "gasblend/metrics.hpp"
#include "gasblend/network.hpp"
#include "gasblend/scenario.hpp"
#include "gasblend/units.hpp"
#include "gasblend/workflow.hpp"
#include "helpers.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace gasblend;

namespace {

constexpr double kDay = 24.0 * 3600.0;

Eigen::VectorXd scalar(double v) {
    Eigen::VectorXd x(1);
    x << v;
    return x;
}

SeriesTable series(std::vector<double> t, const std::vector<double>& v) {
    SeriesTable s;
    s.times = std::move(t);
    s.values = Eigen::Map<const Eigen::VectorXd>(v.data(),
                                                 static_cast<Eigen::Index>(v.size()));
    return s;
}

// scratch directory under the system temp root, wiped on construction
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& name)
        : path(std::filesystem::temp_directory_path() / "gasblend_validation" / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// diamond day with a midday swell at node 3; blend fraction at the supply
ScenarioDocument smoke_scenario(double blend) {
    ScenarioDocument doc;
    doc.label = "diamond smoke";
    doc.network = testutil::diamond();
    doc.segment_cap = units::km_to_m(10.0);
    doc.horizon = kDay;
    doc.time_steps = 6;
    doc.gas1 = {"natural gas", testutil::kSigma1};
    doc.gas2 = {"hydrogen", testutil::kSigma2};
    doc.supply_pressure = scalar(6.0e6);
    doc.injection = PeriodicProfile::constant(scalar(blend), kDay);
    std::vector<double> hours = {0.0, 6.0, 12.0, 18.0};
    std::vector<double> t;
    for (double h : hours) t.push_back(units::hours_to_s(h));
    Eigen::MatrixXd draw(4, 3);
    draw << 60.0, 70.0, 80.0,  //
        60.0, 85.0, 80.0,      //
        60.0, 70.0, 80.0,      //
        60.0, 55.0, 80.0;
    doc.withdrawal = PeriodicProfile(std::move(t), std::move(draw), kDay);
    doc.pressure_min = 4.0e6;
    doc.pressure_max = 9.0e6;
    doc.compressor_coefficients = Eigen::VectorXd::Constant(2, 0.08);
    doc.solver.tol_kkt = 1e-6;
    doc.solver.tol_feas = 1e-8;
    doc.integrator.rtol = 1e-7;
    doc.integrator.reporting_samples = 97;
    doc.validate();
    return doc;
}

std::string scenario_text() {
    return R"({
  "label": "diamond day",
  "network": "net.json",
  "segment_cap_km": 10.0,
  "horizon_hours": 24.0,
  "time_steps": 12,
  "constituents": {
    "gas1": {"name": "natural gas", "sound_speed": 338.38},
    "gas2": {"name": "hydrogen", "sound_speed": 1353.52}
  },
  "supplies": [{"node": 1, "pressure_mpa": 6.0, "blend_fraction": 0.1}],
  "withdrawals": [
    {"node": 3, "flux": {"times_hours": [0, 6, 12, 18], "values": [70, 90, 70, 50]}},
    {"node": 4, "flux": 80.0}
  ],
  "pressure_min_mpa": 4.0,
  "pressure_max_mpa": 9.0,
  "compressor_coefficients": 0.08,
  "solver": {"tol_kkt": 1e-7, "max_iter": 321},
  "integrator": {"rtol": 1e-7, "reporting_samples": 65}
})";
}

} // namespace

TEST_CASE("identical series have zero error in both metrics") {
    const SeriesTable a = series({0.0, 5.0, 10.0}, {3.0, 4.0, 3.5});
    CHECK(relative_l2(a, a, 10.0) == 0.0);
    CHECK(relative_max(a, a) == 0.0);
}

TEST_CASE("constant offset around a known mean gives the exact percentage") {
    // 2(2.02 - 1.98)/(2.02 + 1.98) = 0.02 at every instant
    const SeriesTable a = series({0.0, 10.0}, {2.02, 2.02});
    const SeriesTable b = series({0.0, 4.0, 10.0}, {1.98, 1.98, 1.98});
    CHECK(relative_l2(a, b, 10.0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(relative_max(a, b) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("channel average halves a single-channel discrepancy") {
    SeriesTable a = series({0.0, 10.0}, {2.02, 2.02});
    SeriesTable b = series({0.0, 10.0}, {1.98, 1.98});
    a.values.conservativeResize(2, 2);
    b.values.conservativeResize(2, 2);
    a.values.col(1).setConstant(7.0);
    b.values.col(1).setConstant(7.0);
    CHECK(relative_l2(a, b, 10.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(relative_max(a, b) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("merged-grid quadrature matches the hand-computed triangle case") {
    // d(t) hits -1 at t = 1 and 0 at both ends; trapezoid of d^2 over the
    // merged grid {0,1,2} gives 1, so the metric is sqrt(1/2) x 100
    const SeriesTable a = series({0.0, 2.0}, {2.0, 2.0});
    const SeriesTable b = series({0.0, 1.0, 2.0}, {2.0, 6.0, 2.0});
    CHECK(relative_l2(a, b, 2.0) == doctest::Approx(70.71067811865476).epsilon(1e-12));
    CHECK(relative_max(a, b) == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("metrics are symmetric and scale invariant") {
    const SeriesTable a = series({0.0, 1.0, 2.0}, {3.0, 4.0, 5.0});
    const SeriesTable b = series({0.0, 0.7, 2.0}, {3.3, 3.6, 5.4});
    const double l2 = relative_l2(a, b, 2.0);
    const double mx = relative_max(a, b);
    CHECK(relative_l2(b, a, 2.0) == l2);
    CHECK(relative_max(b, a) == mx);

    SeriesTable a10 = a, b10 = b;
    a10.values *= 10.0;
    b10.values *= 10.0;
    CHECK(relative_l2(a10, b10, 2.0) == doctest::Approx(l2).epsilon(1e-13));
    CHECK(relative_max(a10, b10) == doctest::Approx(mx).epsilon(1e-13));
}

TEST_CASE("interior maximum is found on the merged grid overlap") {
    // on [0.5, 1] the interpolated a runs 6 -> 2 against a constant 2; the
    // larger divergence at t = 0 lies outside b's domain and must not count
    const SeriesTable a = series({0.0, 1.0}, {10.0, 2.0});
    const SeriesTable b = series({0.5, 2.0}, {2.0, 2.0});
    CHECK(relative_max(a, b) == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("pointwise maximum at a single interior sample") {
    const SeriesTable a = series({0.0, 1.0, 2.0}, {1.0, 1.1, 1.0});
    const SeriesTable b = series({0.0, 1.0, 2.0}, {1.0, 0.9, 1.0});
    CHECK(relative_max(a, b) == doctest::Approx(20.0).epsilon(1e-12));
}

TEST_CASE("vanishing pointwise mean is reported with channel and time") {
    const SeriesTable a = series({0.0, 1.0}, {1.0, 1.0});
    const SeriesTable b = series({0.0, 1.0}, {-1.0, 1.0});
    CHECK_THROWS_AS(relative_l2(a, b, 1.0), NumericsError);
    try {
        relative_max(a, b);
        FAIL("expected NumericsError");
    } catch (const NumericsError& e) {
        const std::string what = e.what();
        CHECK(what.find("channel") != std::string::npos);
    }
}

TEST_CASE("metric guards reject bad grids") {
    const SeriesTable a = series({0.0, 1.0}, {1.0, 1.0});
    const SeriesTable short_b = series({0.0, 0.5}, {1.0, 1.0});
    CHECK_THROWS_AS(relative_l2(a, short_b, 1.0), ValidationError);  // no coverage
    CHECK_THROWS_AS(relative_l2(a, a, 0.0), ValidationError);
    const SeriesTable disjoint = series({2.0, 3.0}, {1.0, 1.0});
    CHECK_THROWS_AS(relative_max(a, disjoint), ValidationError);
    SeriesTable two = a;
    two.values.conservativeResize(2, 2);
    CHECK_THROWS_AS(relative_l2(a, two, 1.0), ValidationError);
    SeriesTable decreasing = a;
    decreasing.times = {1.0, 0.0};
    CHECK_THROWS_AS(decreasing.validate(), ValidationError);
}

TEST_CASE("trajectory tables round trip through the csv exporter") {
    const RefinedNetwork rn = refine(testutil::single_pipe(50.0), units::km_to_m(25.0));
    const int W = rn.net.withdrawal_count();
    const int E = rn.net.edge_count();
    REQUIRE(W == 2);
    REQUIRE(E == 2);

    Trajectory traj;
    traj.times = {0.0, 150.0, 400.0};
    for (double f : {1.0, 0.97, 1.05}) {
        MixtureState st;
        st.rho1 = Eigen::VectorXd::Constant(W, 48.0 * f);
        st.rho1[1] *= 0.95;
        st.rho2 = Eigen::VectorXd::Constant(W, 4.0 * f);
        st.flux = Eigen::VectorXd::Constant(E, 110.0 * f);
        traj.states.push_back(st);
    }

    std::stringstream ss;
    write_trajectory_csv(ss, traj, rn.net, testutil::kSigma1, testutil::kSigma2);
    const TrajectoryTables tables = read_trajectory_csv(ss);

    REQUIRE(tables.pressure.times.size() == 3);
    REQUIRE(tables.pressure.values.cols() == W);
    REQUIRE(tables.concentration.values.cols() == W);
    REQUIRE(tables.flux.values.cols() == E);
    for (const auto& label : tables.pressure_labels)
        CHECK(label.rfind("p_node_", 0) == 0);
    CHECK(tables.flux_labels[0] == "phi_edge_" + std::to_string(rn.net.edges[0].id));

    const Eigen::MatrixXd p = traj.pressure_table(testutil::kSigma1, testutil::kSigma2);
    const Eigen::MatrixXd eta = traj.concentration_table();
    const Eigen::MatrixXd phi = traj.flux_table();
    CHECK((tables.pressure.values - p).lpNorm<Eigen::Infinity>() <= 1e-9 * p.norm());
    CHECK((tables.concentration.values - eta).lpNorm<Eigen::Infinity>() <= 1e-12);
    CHECK((tables.flux.values - phi).lpNorm<Eigen::Infinity>() <= 1e-9 * phi.norm());
    CHECK(tables.flux.times == traj.times);

    std::stringstream junk("t_s, p_node_1, volume_9\n0, 1, 2\n");
    CHECK_THROWS_AS(read_trajectory_csv(junk), ValidationError);
}

TEST_CASE("controls tables round trip") {
    std::vector<double> t = {0.0, 43200.0};
    Eigen::MatrixXd v(2, 2);
    v << 1.3, 1.25, 1.41, 1.18;
    const PeriodicProfile controls(t, v, kDay);

    std::stringstream ss;
    write_controls_csv(ss, controls);
    const PeriodicProfile back = read_controls_csv(ss, kDay);
    REQUIRE(back.channels() == 2);
    CHECK(back.sample_times() == controls.sample_times());
    CHECK((back.values() - controls.values()).lpNorm<Eigen::Infinity>() <= 1e-12);
    CHECK(back.period() == kDay);

    std::stringstream junk("t_s, torque_0\n0, 1\n");
    CHECK_THROWS_AS(read_controls_csv(junk, kDay), ValidationError);
    std::stringstream empty;
    CHECK_THROWS_AS(read_controls_csv(empty, kDay), ValidationError);
}

TEST_CASE("state documents round trip") {
    const Network net = testutil::diamond();
    MixtureState st;
    st.rho1 = (Eigen::VectorXd(3) << 47.0, 46.2, 45.8).finished();
    st.rho2 = (Eigen::VectorXd(3) << 4.1, 4.0, 3.9).finished();
    st.flux = (Eigen::VectorXd(4) << 210.0, 80.0, 70.0, -10.0).finished();
    const Eigen::VectorXd ratios = (Eigen::VectorXd(2) << 1.3, 1.25).finished();

    std::stringstream ss;
    write_state_json(ss, net, st, ratios);
    Eigen::VectorXd ratios_back;
    const MixtureState back = read_state_json(ss, net, &ratios_back);
    CHECK(back.rho1 == st.rho1);
    CHECK(back.rho2 == st.rho2);
    CHECK(back.flux == st.flux);
    CHECK(ratios_back == ratios);

    std::stringstream wrong("{\"rho1\": [1], \"rho2\": [1], \"flux\": [1]}");
    CHECK_THROWS_AS(read_state_json(wrong, net), ValidationError);
    std::stringstream garbage("{nope");
    CHECK_THROWS_AS(read_state_json(garbage, net), ValidationError);
}

TEST_CASE("scenario documents resolve to SI quantities") {
    const TempDir dir("scenario");
    save_network(testutil::diamond(), dir.file("net.json"));

    const ScenarioDocument doc = parse_scenario(scenario_text(), dir.path.string());
    CHECK(doc.label == "diamond day");
    CHECK(doc.network.node_count() == 4);
    CHECK(doc.segment_cap == doctest::Approx(10000.0));
    CHECK(doc.horizon == doctest::Approx(kDay));
    CHECK(doc.time_steps == 12);
    CHECK(doc.gas1.name == "natural gas");
    CHECK(doc.gas2.sound_speed == doctest::Approx(1353.52));
    CHECK(doc.supply_pressure[0] == doctest::Approx(6.0e6));
    CHECK(doc.pressure_min == doctest::Approx(4.0e6));
    CHECK(doc.pressure_max == doctest::Approx(9.0e6));
    CHECK(doc.isentropic_exponent == doctest::Approx(1.28));
    REQUIRE(doc.compressor_coefficients.size() == 2);
    CHECK(doc.compressor_coefficients[1] == doctest::Approx(0.08));
    CHECK(doc.solver.tol_kkt == doctest::Approx(1e-7));
    CHECK(doc.solver.max_iter == 321);
    CHECK(doc.solver.tol_feas == doctest::Approx(1e-8));  // untouched default
    CHECK(doc.integrator.rtol == doctest::Approx(1e-7));
    CHECK(doc.integrator.reporting_samples == 65);

    CHECK(doc.injection.channels() == 1);
    CHECK(doc.injection.interpolate(7777.0)[0] == doctest::Approx(0.1));
    CHECK_FALSE(doc.zero_blend());

    // channels follow the withdrawal-node order of the network; node 2 is
    // unlisted and therefore zero
    REQUIRE(doc.withdrawal.channels() == 3);
    const Eigen::VectorXd w3h = doc.withdrawal.interpolate(units::hours_to_s(3.0));
    CHECK(w3h[0] == doctest::Approx(0.0));
    CHECK(w3h[1] == doctest::Approx(80.0));  // halfway from 70 to 90
    CHECK(w3h[2] == doctest::Approx(80.0));
    // wrap segment interpolates toward the value at t = 0
    const Eigen::VectorXd w21h = doc.withdrawal.interpolate(units::hours_to_s(21.0));
    CHECK(w21h[1] == doctest::Approx(60.0));
}

TEST_CASE("scenario documents reject inconsistent input") {
    const TempDir dir("scenario_bad");
    save_network(testutil::diamond(), dir.file("net.json"));
    const std::string base = scenario_text();

    auto mutate = [&](const std::string& from, const std::string& to) {
        std::string text = base;
        const auto at = text.find(from);
        REQUIRE(at != std::string::npos);
        text.replace(at, from.size(), to);
        return text;
    };

    CHECK_THROWS_AS(parse_scenario("{nope", dir.path.string()), ValidationError);
    // supply node listed as a withdrawal
    CHECK_THROWS_AS(parse_scenario(mutate("{\"node\": 4, \"flux\": 80.0}",
                                          "{\"node\": 1, \"flux\": 80.0}"),
                                   dir.path.string()),
                    ValidationError);
    // withdrawal node in the supplies block
    CHECK_THROWS_AS(parse_scenario(mutate("\"supplies\": [{\"node\": 1,",
                                          "\"supplies\": [{\"node\": 3,"),
                                   dir.path.string()),
                    ValidationError);
    // blend fraction must stay below one
    CHECK_THROWS_AS(parse_scenario(mutate("\"blend_fraction\": 0.1", "\"blend_fraction\": 1.0"),
                                   dir.path.string()),
                    ValidationError);
    CHECK_THROWS_AS(parse_scenario(mutate("\"time_steps\": 12", "\"time_steps\": 1"),
                                   dir.path.string()),
                    ValidationError);
    CHECK_THROWS_AS(parse_scenario(mutate("\"pressure_min_mpa\": 4.0",
                                          "\"pressure_min_mpa\": 11.0"),
                                   dir.path.string()),
                    ValidationError);

    // override replaces the network reference entirely
    const std::string moved = dir.file("elsewhere.json");
    save_network(testutil::single_pipe(), moved);
    const ScenarioDocument doc =
        parse_scenario(mutate("\"withdrawals\": [\n    {\"node\": 3, \"flux\": "
                              "{\"times_hours\": [0, 6, 12, 18], \"values\": [70, 90, 70, "
                              "50]}},\n    {\"node\": 4, \"flux\": 80.0}\n  ],",
                              "\"withdrawals\": [{\"node\": 2, \"flux\": 80.0}],"),
                       dir.path.string(), moved);
    CHECK(doc.network.node_count() == 2);
}

TEST_CASE("workflow produces a self-consistent optimize-then-simulate run") {
    const TempDir dir("workflow");
    const ScenarioDocument doc = smoke_scenario(0.1);
    const WorkflowRun run = run_workflow(doc, dir.path.string());

    REQUIRE(run.report.solver_status == SolveStatus::Converged);
    CHECK(run.report.solver_feasibility <= doc.solver.tol_feas);
    CHECK(run.report.objective >= 0.0);
    CHECK(std::isfinite(run.report.objective));

    // the four comparison metrics exist and order sensibly
    CHECK(run.report.pressure_l2 >= 0.0);
    CHECK(run.report.flux_l2 >= 0.0);
    CHECK(run.report.pressure_max >= run.report.pressure_l2 - 1e-12);
    CHECK(run.report.flux_max >= run.report.flux_l2 - 1e-12);
    // six transcription points over a day is coarse; these are sanity rails,
    // not the acceptance thresholds
    CHECK(run.report.pressure_l2 < 10.0);
    CHECK(run.report.flux_l2 < 30.0);
    CHECK(run.report.state_gap_ratio >= 0.0);
    CHECK(run.report.state_gap_ratio < 0.5);

    const std::vector<std::string> stages = {"refine",   "steady",   "transcribe", "solve",
                                             "controls", "simulate", "metrics"};
    REQUIRE(run.report.runtimes.size() == stages.size());
    for (std::size_t i = 0; i < stages.size(); ++i) {
        CHECK(run.report.runtimes[i].stage == stages[i]);
        CHECK(run.report.runtimes[i].seconds >= 0.0);
    }
    CHECK(run.report.total_seconds() > 0.0);

    // every artifact is on disk and reads back to the in-memory run
    for (const char* name : {"refined_network.json", "steady.json", "controls.csv",
                             "initial.json", "optimized.csv", "simulated.csv", "report.json"})
        CHECK(std::filesystem::exists(dir.path / name));

    const Network refined = load_network(dir.file("refined_network.json"));
    CHECK(refined.node_count() == run.refined.net.node_count());
    CHECK(refined.edge_count() == run.refined.net.edge_count());

    std::ifstream cin(dir.file("controls.csv"));
    const PeriodicProfile controls = read_controls_csv(cin, doc.horizon);
    REQUIRE(controls.channels() == run.controls.channels());
    CHECK((controls.values() - run.controls.values()).lpNorm<Eigen::Infinity>() <= 1e-12);
    CHECK(controls.values().minCoeff() >= 1.0);
    CHECK(controls.values().maxCoeff() <= 2.0);

    std::ifstream sin(dir.file("initial.json"));
    const MixtureState x0 = read_state_json(sin, run.refined.net);
    CHECK(x0.rho1 == run.initial_state.rho1);
    CHECK(x0.flux == run.initial_state.flux);

    std::ifstream tin(dir.file("simulated.csv"));
    const TrajectoryTables sim = read_trajectory_csv(tin);
    // uniform reporting grid plus the accepted integrator steps
    REQUIRE(sim.pressure.times.size() >=
            static_cast<std::size_t>(doc.integrator.reporting_samples));
    REQUIRE(sim.pressure.times.size() == run.simulated.times.size());
    CHECK(sim.pressure.times.front() == 0.0);
    CHECK(sim.pressure.times.back() == doctest::Approx(doc.horizon));
    CHECK(sim.pressure.values.cols() == run.refined.net.withdrawal_count());
    CHECK((sim.pressure.values - run.simulated_pressure.values).lpNorm<Eigen::Infinity>() <=
          1e-4);

    const ValidationReport rep = read_report(dir.file("report.json"));
    CHECK(rep.pressure_l2 == run.report.pressure_l2);
    CHECK(rep.flux_max == run.report.flux_max);
    CHECK(rep.objective == run.report.objective);
    CHECK(rep.solver_status == SolveStatus::Converged);
    CHECK(rep.solver_iterations == run.report.solver_iterations);
    CHECK(rep.state_gap_ratio == run.report.state_gap_ratio);
    CHECK(rep.runtimes.size() == run.report.runtimes.size());

    // identical documents give bitwise identical runs
    const WorkflowRun again = run_workflow(doc);
    CHECK(again.report.objective == run.report.objective);
    CHECK(again.solution.iterations == run.solution.iterations);
    CHECK((again.controls.values().array() == run.controls.values().array()).all());
    CHECK(again.report.pressure_l2 == run.report.pressure_l2);
    CHECK(again.report.flux_max == run.report.flux_max);
}

TEST_CASE("zero-blend workflow keeps the second constituent exactly absent") {
    const ScenarioDocument doc = smoke_scenario(0.0);
    REQUIRE(doc.zero_blend());
    const WorkflowRun run = run_workflow(doc);

    REQUIRE(run.report.solver_status == SolveStatus::Converged);
    CHECK(run.initial_state.rho2.isZero(0.0));
    for (const MixtureState& st : run.simulated.states) CHECK(st.rho2.isZero(0.0));
    for (const MixtureState& st : run.optimized.states) CHECK(st.rho2.isZero(0.0));
    CHECK(std::isfinite(run.report.pressure_l2));
    CHECK(std::isfinite(run.report.flux_max));
}

TEST_CASE("workflow failures name the stage") {
    ScenarioDocument doc = smoke_scenario(0.1);
    doc.solver.max_iter = 1;  // optimization cannot converge in one step
    try {
        run_workflow(doc);
        FAIL("expected WorkflowError");
    } catch (const WorkflowError& e) {
        CHECK(e.stage() == "solve");
        const std::string what = e.what();
        CHECK(what.find("[solve]") != std::string::npos);
    }
}
