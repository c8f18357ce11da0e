#include "gasblend/workflow.hpp"

#include "gasblend/errors.hpp"
#include "gasblend/nlp.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <utility>

namespace gasblend {

using nlohmann::json;

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::string> split_csv(const std::string& row) {
    std::vector<std::string> cells;
    std::stringstream ss(row);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        cells.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
    }
    return cells;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

Eigen::VectorXd json_to_vector(const json& arr, const std::string& what) {
    if (!arr.is_array()) throw ValidationError(what + " must be an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] =
        arr[i].get<double>();
    return v;
}

} // namespace

double ValidationReport::total_seconds() const {
    double t = 0.0;
    for (const auto& s : runtimes) t += s.seconds;
    return t;
}

BoundarySchedule boundary_schedule(const ScenarioDocument& doc, const RefinedNetwork& rnet) {
    const double s1sq = doc.gas1.sound_speed * doc.gas1.sound_speed;
    const double s2sq = doc.gas2.sound_speed * doc.gas2.sound_speed;
    const int supplies = doc.network.supply_count();

    // constant supply pressure with a time-varying blend split
    const auto& itimes = doc.injection.sample_times();
    Eigen::MatrixXd v1(static_cast<Eigen::Index>(itimes.size()), supplies);
    Eigen::MatrixXd v2(static_cast<Eigen::Index>(itimes.size()), supplies);
    for (Eigen::Index i = 0; i < v1.rows(); ++i) {
        for (int c = 0; c < supplies; ++c) {
            const double alpha = doc.injection.values()(i, c);
            const double total = doc.supply_pressure[c] / (s1sq * (1.0 - alpha) + s2sq * alpha);
            v1(i, c) = (1.0 - alpha) * total;
            v2(i, c) = alpha * total;
        }
    }
    PeriodicProfile supply1(itimes, std::move(v1), doc.horizon);
    PeriodicProfile supply2(itimes, std::move(v2), doc.horizon);

    // withdrawals land on their original nodes; refinement junctions draw none
    const int wref = rnet.net.withdrawal_count();
    const auto& wtimes = doc.withdrawal.sample_times();
    Eigen::MatrixXd wv = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(wtimes.size()), wref);
    for (int c = 0; c < doc.network.withdrawal_count(); ++c) {
        const int node_id = doc.network.nodes[static_cast<std::size_t>(supplies + c)].id;
        const int col = rnet.net.node_index(node_id) - supplies;
        wv.col(col) = doc.withdrawal.values().col(c);
    }
    PeriodicProfile withdrawal(wtimes, std::move(wv), doc.horizon);

    return BoundarySchedule(std::move(supply1), std::move(supply2), std::move(withdrawal));
}

ScenarioConfig scenario_config(const ScenarioDocument& doc, const RefinedNetwork& rnet) {
    ScenarioConfig cfg;
    cfg.gas1 = doc.gas1;
    cfg.gas2 = doc.gas2;
    cfg.horizon = doc.horizon;
    cfg.pressure_min =
        Eigen::VectorXd::Constant(rnet.net.withdrawal_count(), doc.pressure_min);
    cfg.pressure_max =
        Eigen::VectorXd::Constant(rnet.net.withdrawal_count(), doc.pressure_max);
    cfg.isentropic_exponent = doc.isentropic_exponent;
    cfg.compressor_coefficients = doc.compressor_coefficients;
    cfg.time_steps = doc.time_steps;
    return cfg;
}

Eigen::VectorXd initial_ratios(const Network& net) {
    Eigen::VectorXd r(net.actuator_count());
    for (int a = 0; a < net.actuator_count(); ++a) {
        const Actuator& act = net.actuators[static_cast<std::size_t>(a)];
        r[a] = act.min_ratio + 0.3 * (act.max_ratio - act.min_ratio);
    }
    return r;
}

Trajectory transcription_trajectory(const GasNlp& nlp, const Eigen::VectorXd& x) {
    Trajectory t;
    const int N = nlp.layout().N;
    t.times.reserve(static_cast<std::size_t>(N) + 1);
    t.states.reserve(static_cast<std::size_t>(N) + 1);
    for (int n = 0; n < N; ++n) {
        t.times.push_back(nlp.sample_time(n));
        t.states.push_back(nlp.state_at(x, n));
    }
    t.times.push_back(nlp.scenario().horizon);
    t.states.push_back(nlp.state_at(x, 0));
    return t;
}

SeriesTable pressure_series(const Trajectory& traj, double sigma1, double sigma2) {
    return SeriesTable{traj.times, traj.pressure_table(sigma1, sigma2)};
}

SeriesTable flux_series(const Trajectory& traj) {
    return SeriesTable{traj.times, traj.flux_table()};
}

void write_controls_csv(std::ostream& os, const PeriodicProfile& controls) {
    os << "t_s";
    for (int k = 0; k < controls.channels(); ++k) os << ", mu_" << k;
    os << "\n";
    os.precision(15);
    const auto& times = controls.sample_times();
    for (std::size_t i = 0; i < times.size(); ++i) {
        os << times[i];
        for (int k = 0; k < controls.channels(); ++k)
            os << ", " << controls.values()(static_cast<Eigen::Index>(i), k);
        os << "\n";
    }
}

PeriodicProfile read_controls_csv(std::istream& is, double period) {
    std::string line;
    if (!std::getline(is, line)) throw ValidationError("controls table is empty");
    const auto header = split_csv(line);
    if (header.empty() || header[0] != "t_s")
        throw ValidationError("controls table must start with a t_s column");
    for (std::size_t c = 1; c < header.size(); ++c)
        if (header[c].rfind("mu_", 0) != 0)
            throw ValidationError("unrecognized controls column: " + header[c]);

    std::vector<double> times;
    std::vector<std::vector<double>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size())
            throw ValidationError("controls row width disagrees with the header");
        std::vector<double> row;
        for (const auto& cell : cells) row.push_back(std::stod(cell));
        times.push_back(row[0]);
        rows.push_back(std::move(row));
    }
    if (times.empty()) throw ValidationError("controls table has no rows");
    Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()),
                           static_cast<Eigen::Index>(header.size() - 1));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 1; c < header.size(); ++c)
            values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c - 1)) = rows[i][c];
    return PeriodicProfile(std::move(times), std::move(values), period);
}

void write_state_json(std::ostream& os, const Network& net, const MixtureState& state,
                      const Eigen::VectorXd& ratios) {
    const int r = net.supply_count();
    json doc;
    doc["nodes"] = json::array();
    for (int j = 0; j < net.withdrawal_count(); ++j)
        doc["nodes"].push_back(net.nodes[static_cast<std::size_t>(r + j)].id);
    doc["rho1"] = vector_to_json(state.rho1);
    doc["rho2"] = vector_to_json(state.rho2);
    doc["edges"] = json::array();
    for (const Edge& e : net.edges) doc["edges"].push_back(e.id);
    doc["flux"] = vector_to_json(state.flux);
    doc["ratios"] = vector_to_json(ratios);
    os << doc.dump(2) << "\n";
}

MixtureState read_state_json(std::istream& is, const Network& net, Eigen::VectorXd* ratios) {
    json doc;
    try {
        doc = json::parse(is);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("state document is not valid JSON: ") + e.what());
    }
    MixtureState st;
    try {
        st.rho1 = json_to_vector(doc.at("rho1"), "rho1");
        st.rho2 = json_to_vector(doc.at("rho2"), "rho2");
        st.flux = json_to_vector(doc.at("flux"), "flux");
        if (ratios)
            *ratios = doc.contains("ratios") ? json_to_vector(doc.at("ratios"), "ratios")
                                             : Eigen::VectorXd::Ones(net.actuator_count());
    } catch (const json::exception& e) {
        throw ValidationError(std::string("state document: ") + e.what());
    }
    const int W = net.withdrawal_count();
    if (st.rho1.size() != W || st.rho2.size() != W || st.flux.size() != net.edge_count())
        throw ValidationError("state document sizes do not match the network");
    return st;
}

std::string report_json(const ValidationReport& report) {
    json doc;
    doc["metrics"] = {{"pressure_l2_percent", report.pressure_l2},
                      {"pressure_max_percent", report.pressure_max},
                      {"flux_l2_percent", report.flux_l2},
                      {"flux_max_percent", report.flux_max}};
    doc["objective"] = report.objective;
    doc["solver"] = {{"status", to_string(report.solver_status)},
                     {"iterations", report.solver_iterations},
                     {"kkt_residual", report.solver_kkt},
                     {"feasibility", report.solver_feasibility}};
    doc["state_gap_ratio"] = report.state_gap_ratio;
    json rt = json::array();
    for (const auto& s : report.runtimes)
        rt.push_back({{"stage", s.stage}, {"seconds", s.seconds}});
    doc["runtimes"] = rt;
    doc["total_seconds"] = report.total_seconds();
    return doc.dump(2) + "\n";
}

ValidationReport read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open report '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("report is not valid JSON: ") + e.what());
    }
    ValidationReport rep;
    try {
        const auto& m = doc.at("metrics");
        rep.pressure_l2 = m.at("pressure_l2_percent").get<double>();
        rep.pressure_max = m.at("pressure_max_percent").get<double>();
        rep.flux_l2 = m.at("flux_l2_percent").get<double>();
        rep.flux_max = m.at("flux_max_percent").get<double>();
        rep.objective = doc.at("objective").get<double>();
        const auto& s = doc.at("solver");
        const std::string status = s.at("status").get<std::string>();
        for (SolveStatus st : {SolveStatus::Converged, SolveStatus::IterationCap,
                               SolveStatus::Infeasible, SolveStatus::NumericalFailure})
            if (status == to_string(st)) rep.solver_status = st;
        rep.solver_iterations = s.at("iterations").get<int>();
        rep.solver_kkt = s.at("kkt_residual").get<double>();
        rep.solver_feasibility = s.at("feasibility").get<double>();
        rep.state_gap_ratio = doc.at("state_gap_ratio").get<double>();
        for (const auto& jr : doc.at("runtimes"))
            rep.runtimes.push_back(
                {jr.at("stage").get<std::string>(), jr.at("seconds").get<double>()});
    } catch (const json::exception& e) {
        throw ValidationError(std::string("report document: ") + e.what());
    }
    return rep;
}

NlpResult solve_transcription(const GasNlp& nlp, const ScenarioDocument& doc,
                              const Eigen::VectorXd& start) {
    NlpResult res;
    if (doc.zero_blend()) {
        // without injected blend the second constituent is exactly absent
        // and its balance rows vanish identically; pinning those densities
        // keeps the solve off that degenerate corner
        const auto& lay = nlp.layout();
        std::vector<int> pins;
        pins.reserve(static_cast<std::size_t>(lay.N) * static_cast<std::size_t>(lay.W));
        for (int n = 0; n < lay.N; ++n)
            for (int j = 0; j < lay.W; ++j) pins.push_back(lay.rho2(n, j));
        const FixedVariableNlp pinned(
            nlp, pins, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pins.size())));
        res = solve(pinned, pinned.reduce(start), doc.solver);
        res.x = pinned.expand(res.x);
        res.multipliers_lb = pinned.expand(res.multipliers_lb);
        res.multipliers_ub = pinned.expand(res.multipliers_ub);
    } else {
        res = solve(nlp, start, doc.solver);
    }
    if (res.status != SolveStatus::Converged) {
        std::ostringstream msg;
        msg << "optimization ended with status " << to_string(res.status) << " (kkt "
            << res.kkt_residual << ", feasibility " << res.feasibility << " after "
            << res.iterations << " iterations)";
        throw NumericsError(msg.str());
    }
    return res;
}

Trajectory simulate_scenario(const ScenarioDocument& doc, const RefinedNetwork& rnet,
                             const BoundarySchedule& schedule, const PeriodicProfile& controls,
                             const MixtureState& initial) {
    if (doc.zero_blend()) {
        // the uniform-concentration reduction holds exactly at zero and
        // keeps the absent constituent at hard zero in every sample
        const HomogeneousDynamics hdyn =
            homogeneous_reduce(rnet.net, doc.gas1.sound_speed, doc.gas2.sound_speed, 0.0);
        return simulate(hdyn, schedule, controls, initial.rho1 + initial.rho2, doc.horizon,
                        doc.integrator);
    }
    const MixtureDynamics dyn(rnet.net, doc.gas1.sound_speed, doc.gas2.sound_speed);
    return simulate(dyn, schedule, controls, initial, doc.horizon, doc.integrator);
}

WorkflowRun run_workflow(const ScenarioDocument& doc, const std::string& artifact_dir) {
    doc.validate();
    const bool emit = !artifact_dir.empty();
    const std::filesystem::path dir(artifact_dir);
    if (emit) std::filesystem::create_directories(dir);

    WorkflowRun run;
    auto& runtimes = run.report.runtimes;
    auto timed = [&runtimes](const char* stage, auto&& fn) -> decltype(fn()) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            if constexpr (std::is_void_v<decltype(fn())>) {
                fn();
                runtimes.push_back({stage, seconds_since(t0)});
            } else {
                auto out = fn();
                runtimes.push_back({stage, seconds_since(t0)});
                return out;
            }
        } catch (const WorkflowError&) {
            throw;
        } catch (const std::exception& e) {
            throw WorkflowError(stage, e.what());
        }
    };
    auto emit_file = [&](const char* name, auto&& writer) {
        if (!emit) return;
        std::ofstream os(dir / name);
        if (!os) throw WorkflowError("artifacts", std::string("cannot write ") + name);
        writer(os);
    };

    run.refined = timed("refine", [&] { return refine(doc.network, doc.segment_cap); });
    emit_file("refined_network.json",
              [&](std::ostream& os) { os << write_network(run.refined.net); });

    run.config = scenario_config(doc, run.refined);
    const BoundarySchedule schedule = boundary_schedule(doc, run.refined);
    const MixtureDynamics dyn(run.refined.net, doc.gas1.sound_speed, doc.gas2.sound_speed);
    const Eigen::VectorXd ratios0 = initial_ratios(run.refined.net);

    MixtureState steady =
        timed("steady", [&] { return steady_state(dyn, schedule.at(0.0), ratios0); });
    // exact constituent absence, not solver roundoff
    if (doc.zero_blend()) steady.rho2.setZero();
    emit_file("steady.json", [&](std::ostream& os) {
        write_state_json(os, run.refined.net, steady, ratios0);
    });

    auto nlp = timed("transcribe", [&] { return build_nlp(run.refined, run.config, schedule); });

    run.solution = timed(
        "solve", [&] { return solve_transcription(*nlp, doc, nlp->stack(steady, ratios0)); });

    const Eigen::VectorXd& xsol = run.solution.x;

    timed("controls", [&] {
        run.controls = extract_controls(*nlp, xsol);
        run.initial_state = nlp->state_at(xsol, 0);
        run.optimized = transcription_trajectory(*nlp, xsol);
    });
    emit_file("controls.csv", [&](std::ostream& os) { write_controls_csv(os, run.controls); });
    emit_file("initial.json", [&](std::ostream& os) {
        write_state_json(os, run.refined.net, run.initial_state, run.controls.interpolate(0.0));
    });
    emit_file("optimized.csv", [&](std::ostream& os) {
        write_trajectory_csv(os, run.optimized, run.refined.net, doc.gas1.sound_speed,
                             doc.gas2.sound_speed);
    });

    run.simulated = timed("simulate", [&] {
        return simulate_scenario(doc, run.refined, schedule, run.controls, run.initial_state);
    });
    emit_file("simulated.csv", [&](std::ostream& os) {
        write_trajectory_csv(os, run.simulated, run.refined.net, doc.gas1.sound_speed,
                             doc.gas2.sound_speed);
    });

    timed("metrics", [&] {
        run.optimized_pressure =
            pressure_series(run.optimized, doc.gas1.sound_speed, doc.gas2.sound_speed);
        run.optimized_flux = flux_series(run.optimized);
        run.simulated_pressure =
            pressure_series(run.simulated, doc.gas1.sound_speed, doc.gas2.sound_speed);
        run.simulated_flux = flux_series(run.simulated);

        run.report.pressure_l2 =
            relative_l2(run.optimized_pressure, run.simulated_pressure, doc.horizon);
        run.report.pressure_max = relative_max(run.optimized_pressure, run.simulated_pressure);
        run.report.flux_l2 = relative_l2(run.optimized_flux, run.simulated_flux, doc.horizon);
        run.report.flux_max = relative_max(run.optimized_flux, run.simulated_flux);

        run.report.objective = run.solution.objective_value;
        run.report.solver_status = run.solution.status;
        run.report.solver_iterations = run.solution.iterations;
        run.report.solver_kkt = run.solution.kkt_residual;
        run.report.solver_feasibility = run.solution.feasibility;

        // periodicity defect of the validating simulation, relative to how
        // much the states actually move
        const auto& states = run.simulated.states;
        const Eigen::Index W = states.front().rho1.size();
        Eigen::VectorXd first(2 * W), last(2 * W);
        first << states.front().rho1, states.front().rho2;
        last << states.back().rho1, states.back().rho2;
        Eigen::VectorXd lo = first, hi = first;
        for (const MixtureState& st : states) {
            Eigen::VectorXd s(2 * W);
            s << st.rho1, st.rho2;
            lo = lo.cwiseMin(s);
            hi = hi.cwiseMax(s);
        }
        const double gap = (last - first).lpNorm<Eigen::Infinity>();
        const double ptp = (hi - lo).maxCoeff();
        run.report.state_gap_ratio =
            ptp > 0.0 ? gap / ptp
                      : (gap > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    });
    emit_file("report.json", [&](std::ostream& os) { os << report_json(run.report); });

    return run;
}

} // namespace gasblend
