#pragma once

#include <Eigen/Core>

#include <iosfwd>
#include <string>
#include <vector>

namespace gasblend {

/// Multi-channel time series on a strictly increasing sample grid.
struct SeriesTable {
    std::vector<double> times;  // s
    Eigen::MatrixXd values;     // one row per sample time

    void validate() const;
};

/// Average over channels of the relative L2 difference in percent: per
/// channel (1/T integral of (2(a-b)/(a+b))^2 dt)^(1/2) x 100, trapezoid on
/// the merged grid of both series with linear interpolation.  Both series
/// must cover [0, horizon].  Throws NumericsError where the pointwise mean
/// vanishes, naming the channel and time.
double relative_l2(const SeriesTable& a, const SeriesTable& b, double horizon);

/// Largest pointwise |2(a-b)/(a+b)| x 100 over the merged grid and all
/// channels, evaluated on the overlap of the two domains.
double relative_max(const SeriesTable& a, const SeriesTable& b);

/// Trajectory table split back into its quantity blocks.
struct TrajectoryTables {
    SeriesTable pressure;
    SeriesTable concentration;
    SeriesTable flux;
    std::vector<std::string> pressure_labels;
    std::vector<std::string> concentration_labels;
    std::vector<std::string> flux_labels;
};

/// Reads a comma-separated trajectory table (t_s, p_node_*, eta2_node_*,
/// phi_edge_* header) written by the trajectory exporter.
TrajectoryTables read_trajectory_csv(std::istream& is);

} // namespace gasblend
