#include "gasblend/metrics.hpp"

#include "gasblend/errors.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <sstream>

namespace gasblend {

void SeriesTable::validate() const {
    if (times.empty()) throw ValidationError("series has no samples");
    if (static_cast<Eigen::Index>(times.size()) != values.rows())
        throw ValidationError("series times and value rows disagree");
    if (values.cols() < 1) throw ValidationError("series has no channels");
    for (std::size_t i = 1; i < times.size(); ++i)
        if (!(times[i] > times[i - 1]))
            throw ValidationError("series times must increase strictly");
    if (!values.allFinite()) throw ValidationError("series values must be finite");
}

namespace {

Eigen::VectorXd interp_row(const SeriesTable& s, double t) {
    const auto& ts = s.times;
    if (t <= ts.front()) return s.values.row(0);
    if (t >= ts.back()) return s.values.row(static_cast<Eigen::Index>(ts.size()) - 1);
    const auto hi = std::upper_bound(ts.begin(), ts.end(), t);
    const auto i = static_cast<Eigen::Index>(hi - ts.begin());
    const double t0 = ts[i - 1], t1 = ts[i];
    const double c = (t - t0) / (t1 - t0);
    return (1.0 - c) * s.values.row(i - 1) + c * s.values.row(i);
}

std::vector<double> merged_grid(const SeriesTable& a, const SeriesTable& b, double lo,
                                double hi) {
    std::vector<double> grid;
    grid.reserve(a.times.size() + b.times.size() + 2);
    grid.push_back(lo);
    auto absorb = [&](const std::vector<double>& ts) {
        for (double t : ts)
            if (t > lo && t < hi) grid.push_back(t);
    };
    absorb(a.times);
    absorb(b.times);
    grid.push_back(hi);
    std::sort(grid.begin(), grid.end());
    const double tol = 1e-12 * std::max(1.0, hi - lo);
    grid.erase(std::unique(grid.begin(), grid.end(),
                           [tol](double x, double y) { return std::abs(x - y) <= tol; }),
               grid.end());
    return grid;
}

// 2(a-b)/(a+b) with the vanishing-mean guard
double divergence(double av, double bv, Eigen::Index channel, double t) {
    const double denom = av + bv;
    if (std::abs(denom) <= 1e-9 * (std::abs(av) + std::abs(bv)) + 1e-300) {
        std::ostringstream msg;
        msg << "vanishing pointwise mean in channel " << channel << " at t = " << t << " s";
        throw NumericsError(msg.str());
    }
    return 2.0 * (av - bv) / denom;
}

void check_pair(const SeriesTable& a, const SeriesTable& b) {
    a.validate();
    b.validate();
    if (a.values.cols() != b.values.cols())
        throw ValidationError("series channel counts disagree");
}

} // namespace

double relative_l2(const SeriesTable& a, const SeriesTable& b, double horizon) {
    check_pair(a, b);
    if (!(horizon > 0.0)) throw ValidationError("metric horizon must be positive");
    const double slack = 1e-9 * horizon;
    if (a.times.front() > slack || b.times.front() > slack || a.times.back() < horizon - slack ||
        b.times.back() < horizon - slack)
        throw ValidationError("both series must cover the full horizon");

    const std::vector<double> grid = merged_grid(a, b, 0.0, horizon);
    const auto npts = static_cast<Eigen::Index>(grid.size());
    const Eigen::Index channels = a.values.cols();

    Eigen::MatrixXd d(npts, channels);
    for (Eigen::Index i = 0; i < npts; ++i) {
        const Eigen::VectorXd ra = interp_row(a, grid[i]);
        const Eigen::VectorXd rb = interp_row(b, grid[i]);
        for (Eigen::Index c = 0; c < channels; ++c)
            d(i, c) = divergence(ra[c], rb[c], c, grid[i]);
    }

    double sum = 0.0;
    for (Eigen::Index c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i + 1 < npts; ++i) {
            const double dt = grid[i + 1] - grid[i];
            acc += 0.5 * dt * (d(i, c) * d(i, c) + d(i + 1, c) * d(i + 1, c));
        }
        sum += std::sqrt(acc / horizon);
    }
    return 100.0 * sum / static_cast<double>(channels);
}

double relative_max(const SeriesTable& a, const SeriesTable& b) {
    check_pair(a, b);
    const double lo = std::max(a.times.front(), b.times.front());
    const double hi = std::min(a.times.back(), b.times.back());
    if (!(hi > lo)) throw ValidationError("series domains do not overlap");

    double worst = 0.0;
    for (double t : merged_grid(a, b, lo, hi)) {
        const Eigen::VectorXd ra = interp_row(a, t);
        const Eigen::VectorXd rb = interp_row(b, t);
        for (Eigen::Index c = 0; c < a.values.cols(); ++c)
            worst = std::max(worst, std::abs(divergence(ra[c], rb[c], c, t)));
    }
    return 100.0 * worst;
}

TrajectoryTables read_trajectory_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ValidationError("trajectory table is empty");

    auto split = [](const std::string& row) {
        std::vector<std::string> cells;
        std::stringstream ss(row);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            const auto b = cell.find_first_not_of(" \t\r");
            const auto e = cell.find_last_not_of(" \t\r");
            cells.push_back(b == std::string::npos ? std::string{}
                                                   : cell.substr(b, e - b + 1));
        }
        return cells;
    };

    const std::vector<std::string> header = split(line);
    if (header.empty() || header[0] != "t_s")
        throw ValidationError("trajectory table must start with a t_s column");

    // column index lists per quantity block
    std::vector<int> p_cols, eta_cols, phi_cols;
    TrajectoryTables out;
    for (int c = 1; c < static_cast<int>(header.size()); ++c) {
        const std::string& name = header[c];
        if (name.rfind("p_node_", 0) == 0) {
            p_cols.push_back(c);
            out.pressure_labels.push_back(name);
        } else if (name.rfind("eta2_node_", 0) == 0) {
            eta_cols.push_back(c);
            out.concentration_labels.push_back(name);
        } else if (name.rfind("phi_edge_", 0) == 0) {
            phi_cols.push_back(c);
            out.flux_labels.push_back(name);
        } else {
            throw ValidationError("unrecognized trajectory column: " + name);
        }
    }

    std::vector<double> times;
    std::vector<Eigen::VectorXd> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const std::vector<std::string> cells = split(line);
        if (cells.size() != header.size())
            throw ValidationError("trajectory row width disagrees with the header");
        Eigen::VectorXd row(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) {
            std::size_t used = 0;
            row[static_cast<Eigen::Index>(c)] = std::stod(cells[c], &used);
            if (used != cells[c].size())
                throw ValidationError("malformed number in trajectory table: " + cells[c]);
        }
        times.push_back(row[0]);
        rows.push_back(std::move(row));
    }
    if (times.empty()) throw ValidationError("trajectory table has no rows");

    auto gather = [&](const std::vector<int>& cols) {
        SeriesTable t;
        t.times = times;
        t.values.resize(static_cast<Eigen::Index>(rows.size()),
                        static_cast<Eigen::Index>(cols.size()));
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < cols.size(); ++c)
                t.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                    rows[r][cols[c]];
        return t;
    };
    out.pressure = gather(p_cols);
    out.concentration = gather(eta_cols);
    out.flux = gather(phi_cols);
    return out;
}

} // namespace gasblend
