#include <gasblend/errors.hpp>
#include <gasblend/metrics.hpp>
#include <gasblend/workflow.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace gasblend;

namespace {

std::ifstream open_in(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw ValidationError("cannot read " + p.string());
    return is;
}

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p);
    if (!os) throw ValidationError("cannot write " + p.string());
    return os;
}

template <class Fn>
auto timed_stage(std::vector<StageTime>& times, const char* stage, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    auto out = fn();
    times.push_back({stage, std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - t0)
                                .count()});
    return out;
}

// scenario resolved as far as every subcommand needs it
struct Resolved {
    ScenarioDocument doc;
    RefinedNetwork rnet;
    BoundarySchedule schedule;
    Eigen::VectorXd ratios0;
};

Resolved resolve(const std::string& scenario, const std::string& network) {
    ScenarioDocument doc = load_scenario(scenario, network);
    doc.validate();
    RefinedNetwork rnet = refine(doc.network, doc.segment_cap);
    BoundarySchedule schedule = boundary_schedule(doc, rnet);
    Eigen::VectorXd ratios0 = initial_ratios(rnet.net);
    return {std::move(doc), std::move(rnet), std::move(schedule), std::move(ratios0)};
}

MixtureState steady_of(const Resolved& r) {
    const MixtureDynamics dyn(r.rnet.net, r.doc.gas1.sound_speed, r.doc.gas2.sound_speed);
    MixtureState st = steady_state(dyn, r.schedule.at(0.0), r.ratios0);
    // exact constituent absence, not solver roundoff
    if (r.doc.zero_blend()) st.rho2.setZero();
    return st;
}

void print_report(const ValidationReport& rep, bool with_metrics) {
    if (with_metrics) {
        std::printf("validation metrics (optimized vs simulated, percent)\n");
        std::printf("  %-10s %-12s %s\n", "quantity", "relative L2", "relative max");
        std::printf("  %-10s %-12.4f %.4f\n", "pressure", rep.pressure_l2, rep.pressure_max);
        std::printf("  %-10s %-12.4f %.4f\n", "flux", rep.flux_l2, rep.flux_max);
        if (rep.state_gap_ratio > 0.0)
            std::printf("  periodicity gap %.3f%% of state peak-to-peak\n",
                        100.0 * rep.state_gap_ratio);
    } else {
        std::printf("no validation metrics yet (run simulate, then validate)\n");
    }
    std::printf("solver: %s, objective %.9g, %d iterations (kkt %.3e, feasibility %.3e)\n",
                to_string(rep.solver_status), rep.objective, rep.solver_iterations,
                rep.solver_kkt, rep.solver_feasibility);
    if (!rep.runtimes.empty()) {
        std::printf("stages:");
        for (const StageTime& st : rep.runtimes)
            std::printf(" %s %.3fs", st.stage.c_str(), st.seconds);
        std::printf("  (total %.3fs)\n", rep.total_seconds());
    }
}

void print_block(const char* title, double scale, const SeriesTable& t,
                 const std::vector<std::string>& labels, int max_rows) {
    std::printf("\n%s\n", title);
    std::printf("%-10s", "t_h");
    for (const std::string& l : labels) std::printf("\t%s", l.c_str());
    std::printf("\n");
    const int n = static_cast<int>(t.times.size());
    const int rows = std::min(n, max_rows);
    for (int r = 0; r < rows; ++r) {
        const int i = rows < 2 ? 0 : static_cast<int>((static_cast<long>(r) * (n - 1)) / (rows - 1));
        std::printf("%-10.4f", t.times[static_cast<std::size_t>(i)] / 3600.0);
        for (Eigen::Index c = 0; c < t.values.cols(); ++c)
            std::printf("\t%.6g", t.values(i, c) * scale);
        std::printf("\n");
    }
}

void print_tables(const fs::path& file) {
    auto is = open_in(file);
    const TrajectoryTables tt = read_trajectory_csv(is);
    std::printf("\n== %s: %zu samples, %zu pressure / %zu concentration / %zu flux channels\n",
                file.filename().string().c_str(), tt.pressure.times.size(),
                tt.pressure_labels.size(), tt.concentration_labels.size(),
                tt.flux_labels.size());
    print_block("pressure [MPa]", 1e-6, tt.pressure, tt.pressure_labels, 21);
    print_block("blend mass fraction [-]", 1.0, tt.concentration, tt.concentration_labels, 21);
    print_block("flux [kg/(m^2 s)]", 1.0, tt.flux, tt.flux_labels, 21);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"transient optimization of gas-blend transport through pipe networks"};
    app.require_subcommand(1);
    std::string stage = "cli";

    std::string network, scenario, controls_path, initial_path, out_path, out_dir;
    std::string opt_dir, sim_dir, run_dir;
    double cap_km = 0.0;

    auto* refine_cmd =
        app.add_subcommand("refine", "split pipes so no segment exceeds the length cap");
    refine_cmd->add_option("--network", network, "network document")
        ->required()
        ->check(CLI::ExistingFile);
    refine_cmd->add_option("--cap-km", cap_km, "maximum segment length in km")
        ->required()
        ->check(CLI::PositiveNumber);
    refine_cmd->add_option("--out", out_path, "destination for the refined network")->required();
    refine_cmd->callback([&] {
        stage = "refine";
        const Network net = load_network(network);
        const RefinedNetwork r = refine(net, cap_km * 1000.0);
        open_out(out_path) << write_network(r.net);
        std::printf("refined %d edges / %d nodes -> %d edges / %d nodes, wrote %s\n",
                    net.edge_count(), net.node_count(), r.net.edge_count(),
                    r.net.node_count(), out_path.c_str());
    });

    auto* steady_cmd =
        app.add_subcommand("steady", "steady state of the refined network at the t=0 boundary");
    steady_cmd->add_option("--scenario", scenario, "scenario document")
        ->required()
        ->check(CLI::ExistingFile);
    steady_cmd->add_option("--network", network, "network document overriding the scenario's")
        ->check(CLI::ExistingFile);
    steady_cmd->add_option("--out", out_path, "destination for the state document")->required();
    steady_cmd->callback([&] {
        stage = "steady";
        const Resolved r = resolve(scenario, network);
        const MixtureState st = steady_of(r);
        {
            auto os = open_out(out_path);
            write_state_json(os, r.rnet.net, st, r.ratios0);
        }
        const Eigen::VectorXd p = r.doc.gas1.sound_speed * r.doc.gas1.sound_speed * st.rho1 +
                                  r.doc.gas2.sound_speed * r.doc.gas2.sound_speed * st.rho2;
        std::printf("steady state on %d nodes / %d edges, pressures %.3f..%.3f MPa, wrote %s\n",
                    r.rnet.net.node_count(), r.rnet.net.edge_count(), p.minCoeff() / 1e6,
                    p.maxCoeff() / 1e6, out_path.c_str());
    });

    auto* optimize_cmd =
        app.add_subcommand("optimize", "solve the periodic optimal control problem");
    optimize_cmd->add_option("--scenario", scenario, "scenario document")
        ->required()
        ->check(CLI::ExistingFile);
    optimize_cmd->add_option("--network", network, "network document overriding the scenario's")
        ->check(CLI::ExistingFile);
    optimize_cmd->add_option("--out-dir", out_dir, "artifact directory")->required();
    optimize_cmd->callback([&] {
        stage = "optimize";
        const fs::path dir(out_dir);
        fs::create_directories(dir);
        ScenarioDocument doc = load_scenario(scenario, network);
        doc.validate();
        ValidationReport rep;
        auto& rt = rep.runtimes;

        const RefinedNetwork rnet = timed_stage(rt, "refine", [&] {
            return refine(doc.network, doc.segment_cap);
        });
        open_out(dir / "refined_network.json") << write_network(rnet.net);
        const BoundarySchedule schedule = boundary_schedule(doc, rnet);
        const Eigen::VectorXd ratios0 = initial_ratios(rnet.net);

        const MixtureState steady = timed_stage(rt, "steady", [&] {
            const MixtureDynamics dyn(rnet.net, doc.gas1.sound_speed, doc.gas2.sound_speed);
            MixtureState st = steady_state(dyn, schedule.at(0.0), ratios0);
            if (doc.zero_blend()) st.rho2.setZero();
            return st;
        });
        {
            auto os = open_out(dir / "steady.json");
            write_state_json(os, rnet.net, steady, ratios0);
        }

        const auto nlp = timed_stage(rt, "transcribe", [&] {
            return build_nlp(rnet, scenario_config(doc, rnet), schedule);
        });
        const NlpResult res = timed_stage(rt, "solve", [&] {
            return solve_transcription(*nlp, doc, nlp->stack(steady, ratios0));
        });

        const PeriodicProfile controls = extract_controls(*nlp, res.x);
        const MixtureState initial = nlp->state_at(res.x, 0);
        {
            auto os = open_out(dir / "controls.csv");
            write_controls_csv(os, controls);
        }
        {
            auto os = open_out(dir / "initial.json");
            write_state_json(os, rnet.net, initial, controls.interpolate(0.0));
        }
        {
            auto os = open_out(dir / "optimized.csv");
            write_trajectory_csv(os, transcription_trajectory(*nlp, res.x), rnet.net,
                                 doc.gas1.sound_speed, doc.gas2.sound_speed);
        }

        rep.objective = res.objective_value;
        rep.solver_status = res.status;
        rep.solver_iterations = res.iterations;
        rep.solver_kkt = res.kkt_residual;
        rep.solver_feasibility = res.feasibility;
        open_out(dir / "solution.json") << report_json(rep);
        print_report(rep, false);
        std::printf("artifacts in %s\n", out_dir.c_str());
    });

    auto* simulate_cmd =
        app.add_subcommand("simulate", "integrate the network dynamics under periodic controls");
    simulate_cmd->add_option("--scenario", scenario, "scenario document")
        ->required()
        ->check(CLI::ExistingFile);
    simulate_cmd->add_option("--network", network, "network document overriding the scenario's")
        ->check(CLI::ExistingFile);
    simulate_cmd->add_option("--controls", controls_path, "compression-ratio schedule (csv)")
        ->required()
        ->check(CLI::ExistingFile);
    simulate_cmd
        ->add_option("--initial", initial_path,
                     "initial state document (default: steady state at the t=0 boundary)")
        ->check(CLI::ExistingFile);
    simulate_cmd->add_option("--out-dir", out_dir, "artifact directory")->required();
    simulate_cmd->callback([&] {
        stage = "simulate";
        const Resolved r = resolve(scenario, network);
        PeriodicProfile controls = [&] {
            auto is = open_in(controls_path);
            return read_controls_csv(is, r.doc.horizon);
        }();
        const MixtureState initial = [&] {
            if (initial_path.empty()) return steady_of(r);
            auto is = open_in(initial_path);
            return read_state_json(is, r.rnet.net);
        }();
        const Trajectory traj = simulate_scenario(r.doc, r.rnet, r.schedule, controls, initial);
        const fs::path file = fs::path(out_dir) / "simulated.csv";
        {
            auto os = open_out(file);
            write_trajectory_csv(os, traj, r.rnet.net, r.doc.gas1.sound_speed,
                                 r.doc.gas2.sound_speed);
        }
        std::printf("simulated %zu samples over %.2f h, wrote %s\n", traj.times.size(),
                    r.doc.horizon / 3600.0, file.string().c_str());
    });

    auto* validate_cmd = app.add_subcommand(
        "validate", "compare an optimized trajectory against a validating simulation");
    validate_cmd->add_option("--optimized", opt_dir, "directory holding optimized.csv")
        ->required()
        ->check(CLI::ExistingDirectory);
    validate_cmd->add_option("--simulated", sim_dir, "directory holding simulated.csv")
        ->required()
        ->check(CLI::ExistingDirectory);
    validate_cmd->add_option("--out", out_path, "destination for the report document")
        ->required();
    validate_cmd->callback([&] {
        stage = "validate";
        const auto load = [](const fs::path& p) {
            auto is = open_in(p);
            return read_trajectory_csv(is);
        };
        const TrajectoryTables opt = load(fs::path(opt_dir) / "optimized.csv");
        const TrajectoryTables sim = load(fs::path(sim_dir) / "simulated.csv");
        ValidationReport rep;
        // carry the solver block through when the optimize artifacts are here
        const fs::path sol = fs::path(opt_dir) / "solution.json";
        if (fs::exists(sol)) rep = read_report(sol.string());
        const double horizon = std::min(opt.pressure.times.back(), sim.pressure.times.back());
        rep.pressure_l2 = relative_l2(opt.pressure, sim.pressure, horizon);
        rep.pressure_max = relative_max(opt.pressure, sim.pressure);
        rep.flux_l2 = relative_l2(opt.flux, sim.flux, horizon);
        rep.flux_max = relative_max(opt.flux, sim.flux);
        open_out(out_path) << report_json(rep);
        print_report(rep, true);
        std::printf("report written to %s\n", out_path.c_str());
    });

    auto* report_cmd =
        app.add_subcommand("report", "print the metric table and trajectory previews of a run");
    report_cmd->add_option("--run-dir", run_dir, "directory holding run artifacts")
        ->required()
        ->check(CLI::ExistingDirectory);
    report_cmd->callback([&] {
        stage = "report";
        const fs::path rd(run_dir);
        const bool full = fs::exists(rd / "report.json");
        const fs::path src = full ? rd / "report.json" : rd / "solution.json";
        if (!fs::exists(src))
            throw ValidationError("no report.json or solution.json under " + run_dir);
        print_report(read_report(src.string()), full);
        for (const char* name : {"optimized.csv", "simulated.csv"})
            if (fs::exists(rd / name)) print_tables(rd / name);
        std::printf("\nfull-resolution series stay in the csv files above\n");
    });

    auto* run_cmd = app.add_subcommand(
        "run", "optimize, simulate from the optimal initial state, and validate in one pass");
    run_cmd->add_option("--scenario", scenario, "scenario document")
        ->required()
        ->check(CLI::ExistingFile);
    run_cmd->add_option("--network", network, "network document overriding the scenario's")
        ->check(CLI::ExistingFile);
    run_cmd->add_option("--out-dir", out_dir, "artifact directory")->required();
    run_cmd->callback([&] {
        stage = "run";
        const ScenarioDocument doc = load_scenario(scenario, network);
        const WorkflowRun run = run_workflow(doc, out_dir);
        print_report(run.report, true);
        std::printf("artifacts in %s\n", out_dir.c_str());
    });

    try {
        CLI11_PARSE(app, argc, argv);
    } catch (const WorkflowError& e) {
        std::fprintf(stderr, "gasblend: error %s\n", e.what());
        return 3;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "gasblend: error [%s] %s\n", stage.c_str(), e.what());
        return 2;
    } catch (const NumericsError& e) {
        std::fprintf(stderr, "gasblend: error [%s] %s\n", stage.c_str(), e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "gasblend: error [%s] %s\n", stage.c_str(), e.what());
        return 1;
    }
    return 0;
}
