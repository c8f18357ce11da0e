#include "gasblend/profiles.hpp"
#include "gasblend/errors.hpp"

#include <algorithm>
#include <cmath>

namespace gasblend {

PeriodicProfile::PeriodicProfile(std::vector<double> sample_times, Eigen::MatrixXd values,
                                 double period)
    : times_(std::move(sample_times)), values_(std::move(values)), period_(period) {
    if (period_ <= 0.0) throw ValidationError("profile period must be positive");
    if (times_.empty()) throw ValidationError("profile needs at least one sample");
    if (times_.front() != 0.0) throw ValidationError("profile samples must start at t = 0");
    if (static_cast<Eigen::Index>(times_.size()) != values_.rows())
        throw ValidationError("profile sample count does not match value rows");
    for (std::size_t i = 1; i < times_.size(); ++i) {
        if (times_[i] <= times_[i - 1])
            throw ValidationError("profile sample times must be strictly increasing");
    }
    if (times_.back() >= period_)
        throw ValidationError("profile sample times must lie in [0, period)");
}

PeriodicProfile PeriodicProfile::constant(const Eigen::VectorXd& value, double period) {
    Eigen::MatrixXd rows(1, value.size());
    rows.row(0) = value.transpose();
    return PeriodicProfile({0.0}, rows, period);
}

Eigen::VectorXd PeriodicProfile::interpolate(double t) const {
    double tau = std::fmod(t, period_);
    if (tau < 0.0) tau += period_;

    const std::size_t n = times_.size();
    if (n == 1) return values_.row(0).transpose();

    // Segment containing tau; the final segment wraps to the sample at 0.
    auto it = std::upper_bound(times_.begin(), times_.end(), tau);
    const std::size_t hi = static_cast<std::size_t>(it - times_.begin());
    if (hi == n) {
        const double t0 = times_.back();
        const double frac = (tau - t0) / (period_ - t0);
        return (values_.row(n - 1) + frac * (values_.row(0) - values_.row(n - 1))).transpose();
    }
    const std::size_t lo = hi - 1;
    const double frac = (tau - times_[lo]) / (times_[hi] - times_[lo]);
    return (values_.row(lo) + frac * (values_.row(hi) - values_.row(lo))).transpose();
}

Eigen::VectorXd PeriodicProfile::mean() const {
    const std::size_t n = times_.size();
    if (n == 1) return values_.row(0).transpose();
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(values_.cols());
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double dt = times_[i + 1] - times_[i];
        acc += 0.5 * dt * (values_.row(i) + values_.row(i + 1)).transpose();
    }
    const double dt = period_ - times_.back();
    acc += 0.5 * dt * (values_.row(n - 1) + values_.row(0)).transpose();
    return acc / period_;
}

} // namespace gasblend
