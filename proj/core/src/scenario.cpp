#include "gasblend/scenario.hpp"

#include "gasblend/errors.hpp"
#include "gasblend/units.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

namespace gasblend {

using nlohmann::json;

namespace {

// number -> constant profile; {times_hours, values} -> piecewise linear
PeriodicProfile parse_profile(const json& j, double period, const std::string& what) {
    if (j.is_number()) {
        return PeriodicProfile::constant(Eigen::VectorXd::Constant(1, j.get<double>()), period);
    }
    if (!j.is_object() || !j.contains("times_hours") || !j.contains("values"))
        throw ValidationError(what + " must be a number or {times_hours, values}");
    const auto& jt = j.at("times_hours");
    const auto& jv = j.at("values");
    if (!jt.is_array() || !jv.is_array() || jt.size() != jv.size() || jt.empty())
        throw ValidationError(what + " times and values must be equal-length nonempty arrays");
    std::vector<double> times;
    Eigen::MatrixXd values(static_cast<Eigen::Index>(jt.size()), 1);
    for (std::size_t i = 0; i < jt.size(); ++i) {
        times.push_back(units::hours_to_s(jt[i].get<double>()));
        values(static_cast<Eigen::Index>(i), 0) = jv[i].get<double>();
    }
    return PeriodicProfile(std::move(times), std::move(values), period);
}

// stacks per-node single-channel profiles onto the union grid
PeriodicProfile merge_channels(const std::vector<PeriodicProfile>& parts, double period) {
    std::vector<double> grid;
    for (const auto& p : parts)
        grid.insert(grid.end(), p.sample_times().begin(), p.sample_times().end());
    std::sort(grid.begin(), grid.end());
    const double tol = 1e-9 * period;
    grid.erase(std::unique(grid.begin(), grid.end(),
                           [tol](double a, double b) { return std::abs(a - b) <= tol; }),
               grid.end());
    Eigen::MatrixXd values(static_cast<Eigen::Index>(grid.size()),
                           static_cast<Eigen::Index>(parts.size()));
    for (std::size_t c = 0; c < parts.size(); ++c)
        for (std::size_t i = 0; i < grid.size(); ++i)
            values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
                parts[c].interpolate(grid[i])[0];
    return PeriodicProfile(std::move(grid), std::move(values), period);
}

} // namespace

bool ScenarioDocument::zero_blend() const {
    return injection.values().size() == 0 || injection.values().cwiseAbs().maxCoeff() == 0.0;
}

void ScenarioDocument::validate() const {
    network.validate();
    if (!(segment_cap > 0.0)) throw ValidationError("scenario segment cap must be positive");
    if (!(horizon > 0.0)) throw ValidationError("scenario horizon must be positive");
    if (time_steps < 2) throw ValidationError("scenario needs at least two time samples");
    if (!(gas1.sound_speed > 0.0) || !(gas2.sound_speed > 0.0))
        throw ValidationError("constituent sound speeds must be positive");
    const int supplies = network.supply_count();
    if (supply_pressure.size() != supplies)
        throw ValidationError("one supply pressure per supply node is required");
    if (supplies > 0 && supply_pressure.minCoeff() <= 0.0)
        throw ValidationError("supply pressures must be positive");
    if (injection.channels() != supplies)
        throw ValidationError("one injection channel per supply node is required");
    if (injection.values().size() > 0 &&
        (injection.values().minCoeff() < 0.0 || injection.values().maxCoeff() >= 1.0))
        throw ValidationError("blend fractions must lie in [0, 1)");
    if (withdrawal.channels() != network.withdrawal_count())
        throw ValidationError("one withdrawal channel per withdrawal node is required");
    if (!(pressure_min > 0.0) || !(pressure_max > pressure_min))
        throw ValidationError("pressure bounds must satisfy 0 < min < max");
    if (!(isentropic_exponent > 1.0))
        throw ValidationError("isentropic exponent must exceed 1");
    if (compressor_coefficients.size() != network.actuator_count())
        throw ValidationError("one compressor coefficient per actuator is required");
    if (compressor_coefficients.size() > 0 && compressor_coefficients.minCoeff() < 0.0)
        throw ValidationError("compressor coefficients must be nonnegative");
    solver.validate();
    if (!(integrator.rtol > 0.0)) throw ValidationError("integrator rtol must be positive");
    if (integrator.reporting_samples < 2)
        throw ValidationError("integrator needs at least two reporting samples");
}

ScenarioDocument parse_scenario(const std::string& text, const std::string& base_dir,
                                const std::string& network_override) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("scenario document is not valid JSON: ") + e.what());
    }

    ScenarioDocument out;
    try {
        out.label = doc.value("label", std::string{});

        std::string net_path = network_override;
        if (net_path.empty()) {
            const auto ref = std::filesystem::path(doc.at("network").get<std::string>());
            net_path = ref.is_absolute() || base_dir.empty()
                           ? ref.string()
                           : (std::filesystem::path(base_dir) / ref).string();
        }
        out.network = load_network(net_path);

        out.segment_cap = units::km_to_m(doc.at("segment_cap_km").get<double>());
        out.horizon = units::hours_to_s(doc.at("horizon_hours").get<double>());
        out.time_steps = doc.at("time_steps").get<int>();

        const auto& jc = doc.at("constituents");
        out.gas1 = {jc.at("gas1").at("name").get<std::string>(),
                    jc.at("gas1").at("sound_speed").get<double>()};
        out.gas2 = {jc.at("gas2").at("name").get<std::string>(),
                    jc.at("gas2").at("sound_speed").get<double>()};

        // supplies: every supply node exactly once, network order
        const int supplies = out.network.supply_count();
        out.supply_pressure = Eigen::VectorXd::Zero(supplies);
        std::vector<PeriodicProfile> blend(static_cast<std::size_t>(supplies));
        std::vector<bool> seen_supply(static_cast<std::size_t>(supplies), false);
        for (const auto& js : doc.at("supplies")) {
            const int node = js.at("node").get<int>();
            const int idx = out.network.node_index(node);
            if (idx >= supplies)
                throw ValidationError("node " + std::to_string(node) + " is not a supply");
            if (seen_supply[static_cast<std::size_t>(idx)])
                throw ValidationError("supply node " + std::to_string(node) + " listed twice");
            seen_supply[static_cast<std::size_t>(idx)] = true;
            out.supply_pressure[idx] = units::mpa_to_pa(js.at("pressure_mpa").get<double>());
            blend[static_cast<std::size_t>(idx)] =
                parse_profile(js.value("blend_fraction", json(0.0)), out.horizon,
                              "supply blend fraction");
        }
        for (int i = 0; i < supplies; ++i)
            if (!seen_supply[static_cast<std::size_t>(i)])
                throw ValidationError("missing supply entry for node id " +
                                      std::to_string(out.network.nodes[i].id));
        out.injection = merge_channels(blend, out.horizon);

        // withdrawals: zero for unlisted nodes
        const int wnodes = out.network.withdrawal_count();
        std::vector<PeriodicProfile> draw(static_cast<std::size_t>(wnodes));
        for (auto& p : draw)
            p = PeriodicProfile::constant(Eigen::VectorXd::Zero(1), out.horizon);
        std::vector<bool> seen_draw(static_cast<std::size_t>(wnodes), false);
        if (doc.contains("withdrawals")) {
            for (const auto& jw : doc.at("withdrawals")) {
                const int node = jw.at("node").get<int>();
                const int idx = out.network.node_index(node) - supplies;
                if (idx < 0)
                    throw ValidationError("node " + std::to_string(node) +
                                          " is a supply, not a withdrawal");
                if (seen_draw[static_cast<std::size_t>(idx)])
                    throw ValidationError("withdrawal node " + std::to_string(node) +
                                          " listed twice");
                seen_draw[static_cast<std::size_t>(idx)] = true;
                draw[static_cast<std::size_t>(idx)] =
                    parse_profile(jw.at("flux"), out.horizon, "withdrawal flux");
            }
        }
        out.withdrawal = merge_channels(draw, out.horizon);

        out.pressure_min = units::mpa_to_pa(doc.at("pressure_min_mpa").get<double>());
        out.pressure_max = units::mpa_to_pa(doc.at("pressure_max_mpa").get<double>());
        out.isentropic_exponent = doc.value("isentropic_exponent", 1.28);

        const int actuators = out.network.actuator_count();
        const json jcc = doc.value("compressor_coefficients", json(0.0));
        if (jcc.is_number()) {
            out.compressor_coefficients =
                Eigen::VectorXd::Constant(actuators, jcc.get<double>());
        } else if (jcc.is_array()) {
            out.compressor_coefficients = Eigen::VectorXd::Zero(
                static_cast<Eigen::Index>(jcc.size()));
            for (std::size_t i = 0; i < jcc.size(); ++i)
                out.compressor_coefficients[static_cast<Eigen::Index>(i)] =
                    jcc[i].get<double>();
        } else {
            throw ValidationError("compressor_coefficients must be a number or array");
        }

        if (doc.contains("solver")) {
            const auto& js = doc.at("solver");
            out.solver.tol_kkt = js.value("tol_kkt", out.solver.tol_kkt);
            out.solver.tol_feas = js.value("tol_feas", out.solver.tol_feas);
            out.solver.max_iter = js.value("max_iter", out.solver.max_iter);
            out.solver.verbose = js.value("verbose", out.solver.verbose);
        }
        if (doc.contains("integrator")) {
            const auto& ji = doc.at("integrator");
            out.integrator.rtol = ji.value("rtol", out.integrator.rtol);
            out.integrator.atol = ji.value("atol", out.integrator.atol);
            out.integrator.reporting_samples =
                ji.value("reporting_samples", out.integrator.reporting_samples);
            out.integrator.keep_step_times =
                ji.value("keep_step_times", out.integrator.keep_step_times);
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("scenario document: ") + e.what());
    }

    out.validate();
    return out;
}

ScenarioDocument load_scenario(const std::string& path, const std::string& network_override) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open scenario file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str(), std::filesystem::path(path).parent_path().string(),
                          network_override);
}

} // namespace gasblend
