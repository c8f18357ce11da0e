#pragma once

#include <Eigen/Core>

#include <vector>

namespace gasblend {

/// Periodic piecewise-linear vector-valued time series.  Sample times are
/// strictly increasing, start at 0 and lie in [0, period); the segment from
/// the last sample back to t = period interpolates toward the value at 0.
class PeriodicProfile {
public:
    PeriodicProfile() = default;
    PeriodicProfile(std::vector<double> sample_times, Eigen::MatrixXd values, double period);

    /// Constant profile: one sample at t = 0.
    static PeriodicProfile constant(const Eigen::VectorXd& value, double period);

    Eigen::VectorXd interpolate(double t) const;

    /// Time average over one period (trapezoid over the wrapped grid; exact
    /// for piecewise-linear data).
    Eigen::VectorXd mean() const;

    const std::vector<double>& sample_times() const { return times_; }
    const Eigen::MatrixXd& values() const { return values_; }  // sample rows x channels
    double period() const { return period_; }
    int channels() const { return static_cast<int>(values_.cols()); }

private:
    std::vector<double> times_;
    Eigen::MatrixXd values_;
    double period_ = 0.0;
};

} // namespace gasblend
