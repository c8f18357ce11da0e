#include "gasblend/simulator.hpp"
#include "gasblend/errors.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>

namespace gasblend {

BoundarySchedule::BoundarySchedule(PeriodicProfile supply1, PeriodicProfile supply2,
                                   PeriodicProfile withdrawal)
    : supply1_(std::move(supply1)), supply2_(std::move(supply2)),
      withdrawal_(std::move(withdrawal)) {
    if (supply1_.channels() != supply2_.channels())
        throw ValidationError("supply profiles must have matching channel counts");
    const double T = supply1_.period();
    if (std::abs(supply2_.period() - T) > 1e-9 * T ||
        std::abs(withdrawal_.period() - T) > 1e-9 * T)
        throw ValidationError("boundary profiles must share one period");
}

BoundarySchedule BoundarySchedule::constant(const BoundaryValues& b, double period) {
    b.validate();
    return BoundarySchedule(PeriodicProfile::constant(b.s1, period),
                            PeriodicProfile::constant(b.s2, period),
                            PeriodicProfile::constant(b.w, period));
}

BoundaryValues BoundarySchedule::at(double t) const {
    return BoundaryValues::from_densities(supply1_.interpolate(t), supply2_.interpolate(t),
                                          withdrawal_.interpolate(t));
}

Eigen::MatrixXd Trajectory::pressure_table(double sigma1, double sigma2) const {
    const Eigen::Index n = static_cast<Eigen::Index>(times.size());
    Eigen::MatrixXd tab(n, n ? states.front().rho1.size() : 0);
    for (Eigen::Index i = 0; i < n; ++i)
        tab.row(i) = pressure(states[i].rho1, states[i].rho2, sigma1, sigma2).transpose();
    return tab;
}

Eigen::MatrixXd Trajectory::concentration_table() const {
    const Eigen::Index n = static_cast<Eigen::Index>(times.size());
    Eigen::MatrixXd tab(n, n ? states.front().rho1.size() : 0);
    for (Eigen::Index i = 0; i < n; ++i)
        tab.row(i) = nodal_concentration(states[i]).transpose();
    return tab;
}

Eigen::MatrixXd Trajectory::flux_table() const {
    const Eigen::Index n = static_cast<Eigen::Index>(times.size());
    Eigen::MatrixXd tab(n, n ? states.front().flux.size() : 0);
    for (Eigen::Index i = 0; i < n; ++i) tab.row(i) = states[i].flux.transpose();
    return tab;
}

namespace {

// TR-BDF2 as a stiffly accurate two-implicit-stage scheme; both stages share
// the iteration matrix I - (gamma/2) h J.
const double kGamma = 2.0 - std::numbers::sqrt2;
const double kDiag = kGamma / 2.0;
const double kOff = std::numbers::sqrt2 / 4.0; // first two quadrature weights
// companion third-order weights for the error estimate
const double kBh2 = 1.0 / (6.0 * kGamma * (1.0 - kGamma));
const double kBh3 = 0.5 - 1.0 / (6.0 * (1.0 - kGamma));
const double kBh1 = 1.0 - kBh2 - kBh3;

double wrms(const Eigen::VectorXd& v, const Eigen::VectorXd& a, const Eigen::VectorXd& b,
            double atol, double rtol) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double sc = atol + rtol * std::max(std::abs(a[i]), std::abs(b[i]));
        const double q = v[i] / sc;
        acc += q * q;
    }
    return std::sqrt(acc / static_cast<double>(v.size()));
}

// Two-constituent system: y = [rho1; rho2] at withdrawal nodes.
class MixtureOde {
public:
    MixtureOde(const MixtureDynamics& dyn, const BoundarySchedule& bc,
               const PeriodicProfile& controls, double flux_floor)
        : dyn_(dyn), bc_(bc), controls_(controls), floor_(flux_floor), W_(dyn.state_nodes()) {}

    int dim() const { return 2 * W_; }
    int constituents() const { return 2; }
    double flux_floor() const { return floor_; }
    double state_scale(const Eigen::VectorXd& y) const {
        return (y.head(W_) + y.tail(W_)).maxCoeff();
    }

    Eigen::VectorXd ratios(double t) const {
        return controls_.channels() ? controls_.interpolate(t) : Eigen::VectorXd(0);
    }
    void freeze(double t) { fdiag_ = dyn_.mass_diag(ratios(t)); }

    Eigen::VectorXd balance(double t, const Eigen::VectorXd& y) const {
        const Eigen::VectorXd r1 = y.head(W_), r2 = y.tail(W_);
        const BoundaryValues b = bc_.at(t);
        const Eigen::VectorXd mu = ratios(t);
        const Eigen::VectorXd flux = dyn_.solve_edge_flux(r1, r2, b, mu);
        return dyn_.balance_residual(r1, r2, b, mu, flux);
    }

    Eigen::VectorXd to_f(const Eigen::VectorXd& bal) const {
        Eigen::VectorXd f(2 * W_);
        for (int j = 0; j < W_; ++j) {
            f[j] = bal[j] / fdiag_[j];
            f[W_ + j] = bal[W_ + j] / fdiag_[j];
        }
        return f;
    }

    Eigen::SparseMatrix<double> jacobian(double t, const Eigen::VectorXd& y) const {
        Eigen::SparseMatrix<double> J = dyn_.balance_jacobian_eliminated(
            y.head(W_), y.tail(W_), bc_.at(t), ratios(t), floor_);
        for (int col = 0; col < J.outerSize(); ++col)
            for (Eigen::SparseMatrix<double>::InnerIterator it(J, col); it; ++it)
                it.valueRef() /= fdiag_[static_cast<int>(it.row()) % W_];
        return J;
    }

    // rho1 must stay positive; rho2 may touch zero and small negative
    // overshoot is projected back onto the boundary
    bool repair(Eigen::VectorXd& y, double negtol) const {
        for (int j = 0; j < W_; ++j)
            if (!(y[j] > 0.0)) return false;
        for (int j = W_; j < 2 * W_; ++j) {
            if (y[j] < 0.0) {
                if (y[j] < -negtol) return false;
                y[j] = 0.0;
            }
        }
        return true;
    }

    // telescoped boundary inflow per constituent
    Eigen::Vector2d net_of(const Eigen::VectorXd& bal) const {
        return {bal.head(W_).sum(), bal.tail(W_).sum()};
    }
    double linepack(const Eigen::VectorXd& y, int m) const {
        return fdiag_.dot(y.segment(m * W_, W_));
    }

    MixtureState make_state(double t, const Eigen::VectorXd& y) const {
        MixtureState st;
        st.rho1 = y.head(W_);
        st.rho2 = y.tail(W_);
        st.flux = dyn_.solve_edge_flux(st.rho1, st.rho2, bc_.at(t), ratios(t));
        return st;
    }

private:
    const MixtureDynamics& dyn_;
    const BoundarySchedule& bc_;
    const PeriodicProfile& controls_;
    double floor_;
    int W_;
    Eigen::VectorXd fdiag_;
};

// Total-density system under the uniform-concentration reduction.
class HomogeneousOde {
public:
    HomogeneousOde(const HomogeneousDynamics& dyn, const BoundarySchedule& bc,
                   const PeriodicProfile& controls, double flux_floor)
        : dyn_(dyn), bc_(bc), controls_(controls), floor_(flux_floor),
          W_(dyn.state_nodes()) {}

    int dim() const { return W_; }
    int constituents() const { return 1; }
    double flux_floor() const { return floor_; }
    double state_scale(const Eigen::VectorXd& y) const { return y.maxCoeff(); }

    Eigen::VectorXd ratios(double t) const {
        return controls_.channels() ? controls_.interpolate(t) : Eigen::VectorXd(0);
    }
    void freeze(double t) { fdiag_ = dyn_.mass_diag(ratios(t)); }

    Eigen::VectorXd balance(double t, const Eigen::VectorXd& y) const {
        const BoundaryValues b = bc_.at(t);
        const Eigen::VectorXd flux = dyn_.solve_edge_flux(y, b.s1 + b.s2, ratios(t));
        Eigen::VectorXd f = Eigen::VectorXd::Zero(W_);
        for (std::size_t k = 0; k < dyn_.topo().size(); ++k) {
            const EdgeTopo& e = dyn_.topo()[k];
            if (e.head_w >= 0) f[e.head_w] += flux[k];
            if (e.tail_w >= 0) f[e.tail_w] -= flux[k];
        }
        return f - b.w;
    }

    Eigen::VectorXd to_f(const Eigen::VectorXd& bal) const { return bal.cwiseQuotient(fdiag_); }

    Eigen::SparseMatrix<double> jacobian(double t, const Eigen::VectorXd& y) const {
        const BoundaryValues b = bc_.at(t);
        const Eigen::VectorXd s_tot = b.s1 + b.s2;
        const Eigen::VectorXd mu = ratios(t);
        const double a2 = dyn_.sound_speed() * dyn_.sound_speed();
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(4 * dyn_.topo().size());
        for (const EdgeTopo& e : dyn_.topo()) {
            const double mu_in = e.mu_in_slot >= 0 ? mu[e.mu_in_slot] : 1.0;
            const double mu_out = e.mu_out_slot >= 0 ? mu[e.mu_out_slot] : 1.0;
            const double rho_tail = e.tail_s >= 0 ? s_tot[e.tail_s] : y[e.tail_w];
            const double rho_head = e.head_s >= 0 ? s_tot[e.head_s] : y[e.head_w];
            const double rho_out = mu_out * rho_head;
            if (rho_out <= 0.0) throw NumericsError("nonpositive outlet density");
            const double drop = a2 * (mu_in * rho_tail - mu_out * rho_head);
            const double phi =
                (drop >= 0.0 ? 1.0 : -1.0) * std::sqrt(std::abs(drop) * e.conduct * rho_out);
            const double dphi_ddrop = e.conduct * rho_out / (2.0 * std::max(std::abs(phi), floor_));
            const double d_tail = dphi_ddrop * a2 * mu_in;
            const double d_head = -dphi_ddrop * a2 * mu_out + phi / (2.0 * rho_out) * mu_out;
            auto add = [&](int row, double sgn) {
                if (row < 0) return;
                if (e.tail_w >= 0) trip.emplace_back(row, e.tail_w, sgn * d_tail);
                if (e.head_w >= 0) trip.emplace_back(row, e.head_w, sgn * d_head);
            };
            add(e.head_w, +1.0);
            add(e.tail_w, -1.0);
        }
        Eigen::SparseMatrix<double> J(W_, W_);
        J.setFromTriplets(trip.begin(), trip.end());
        for (int col = 0; col < J.outerSize(); ++col)
            for (Eigen::SparseMatrix<double>::InnerIterator it(J, col); it; ++it)
                it.valueRef() /= fdiag_[it.row()];
        return J;
    }

    bool repair(Eigen::VectorXd& y, double) const {
        for (int j = 0; j < W_; ++j)
            if (!(y[j] > 0.0)) return false;
        return true;
    }

    Eigen::Vector2d net_of(const Eigen::VectorXd& bal) const { return {bal.sum(), 0.0}; }
    double linepack(const Eigen::VectorXd& y, int m) const {
        return m == 0 ? fdiag_.dot(y) : 0.0;
    }

    MixtureState make_state(double t, const Eigen::VectorXd& y) const {
        const BoundaryValues b = bc_.at(t);
        MixtureState st;
        auto [r1, r2] = dyn_.split(y);
        st.rho1 = std::move(r1);
        st.rho2 = std::move(r2);
        st.flux = dyn_.solve_edge_flux(y, b.s1 + b.s2, ratios(t));
        return st;
    }

private:
    const HomogeneousDynamics& dyn_;
    const BoundarySchedule& bc_;
    const PeriodicProfile& controls_;
    double floor_;
    int W_;
    Eigen::VectorXd fdiag_;
};

template <class Sys>
bool newton_stage(Sys& sys, const Eigen::SparseLU<Eigen::SparseMatrix<double>>& lu, double ts,
                  double c, const Eigen::VectorXd& known, Eigen::VectorXd& z, double atol,
                  double rtol, double negtol, Eigen::VectorXd& bal, Eigen::VectorXd& f,
                  Eigen::Vector2d& net, long& rhs_evals, std::string& why) {
    double prev = 0.0;
    for (int it = 0; it < 12; ++it) {
        try {
            bal = sys.balance(ts, z);
        } catch (const NumericsError& e) {
            why = e.what();
            return false;
        }
        ++rhs_evals;
        f = sys.to_f(bal);
        const Eigen::VectorXd g = z - c * f - known;
        const Eigen::VectorXd dz = lu.solve(-g);
        if (!dz.allFinite()) {
            why = "stage correction not finite";
            return false;
        }
        z += dz;
        if (!sys.repair(z, negtol)) {
            why = "density left the admissible set";
            return false;
        }
        const double dn = wrms(dz, z, z, atol, rtol);
        if (dn <= 0.02) {
            // re-evaluate at the converged point so the recorded stage
            // derivative matches the state the step formula will use
            try {
                bal = sys.balance(ts, z);
            } catch (const NumericsError& e) {
                why = e.what();
                return false;
            }
            ++rhs_evals;
            f = sys.to_f(bal);
            net = sys.net_of(bal);
            return true;
        }
        if (it > 1 && dn > 0.9 * prev) {
            why = "newton contraction too slow";
            return false;
        }
        prev = dn;
    }
    why = "newton iteration cap";
    return false;
}

template <class Sys>
Trajectory integrate(Sys& sys, Eigen::VectorXd y, double horizon, const SimulateOptions& o) {
    if (horizon <= 0.0) throw ValidationError("horizon must be positive");
    if (o.reporting_samples < 2) throw ValidationError("need at least two reporting samples");
    if (o.rtol <= 0.0) throw ValidationError("rtol must be positive");

    const double rtol = o.rtol;
    const double atol = o.atol > 0.0 ? o.atol : 1e-9 * sys.state_scale(y);
    const double negtol = 1e3 * atol;
    if (!sys.repair(y, negtol))
        throw ValidationError("initial state has nonpositive densities");

    Trajectory out;
    const int S = o.reporting_samples;
    std::vector<double> grid(S);
    for (int k = 0; k < S; ++k) grid[k] = horizon * k / (S - 1);
    const double teps = 1e-9 * horizon;

    sys.freeze(0.0);
    Eigen::VectorXd bal = sys.balance(0.0, y);
    ++out.rhs_evaluations;
    Eigen::VectorXd f1 = sys.to_f(bal);
    Eigen::Vector2d net1 = sys.net_of(bal);

    MixtureState st1 = sys.make_state(0.0, y);
    out.times.push_back(0.0);
    out.states.push_back(st1);
    Eigen::VectorXd prev_flux = st1.flux;
    int next_grid = 1;

    Eigen::SparseMatrix<double> ident(sys.dim(), sys.dim());
    ident.setIdentity();

    double t = 0.0;
    const double hmax = horizon / 8.0;
    const double hmin = 1e-10 * horizon;
    double h = std::min(o.initial_step > 0.0 ? o.initial_step : horizon / 1000.0, hmax);
    long attempts = 0;
    std::string why;

    Eigen::VectorXd z, known, f2, f3, bal2, bal3, ynew, errv, ef;
    Eigen::Vector2d net2, net3;

    while (horizon - t > teps) {
        if (++attempts > o.max_steps) {
            std::ostringstream msg;
            msg << "step budget exhausted at t = " << t << " s";
            throw NumericsError(msg.str());
        }
        h = std::min({h, hmax, horizon - t});
        if (h < hmin) {
            std::ostringstream msg;
            msg << "step size collapsed at t = " << t << " s (" << why << ")";
            throw NumericsError(msg.str());
        }
        const double t1 = (horizon - t - h <= teps) ? horizon : t + h;
        const double hh = t1 - t;

        bool ok = true;
        double errnorm = 0.0;
        why.clear();

        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        try {
            const Eigen::SparseMatrix<double> A = ident - (kDiag * hh) * sys.jacobian(t, y);
            ++out.jacobian_evaluations;
            lu.compute(A);
            if (lu.info() != Eigen::Success) {
                ok = false;
                why = "iteration matrix factorization failed";
            }
        } catch (const NumericsError& e) {
            ok = false;
            why = e.what();
        }

        if (ok) { // trapezoid half-step to t + gamma h
            known = y + (kDiag * hh) * f1;
            z = y + (kGamma * hh) * f1;
            ok = sys.repair(z, negtol) &&
                 newton_stage(sys, lu, t + kGamma * hh, kDiag * hh, known, z, atol, rtol,
                              negtol, bal2, f2, net2, out.rhs_evaluations, why);
            if (!ok && why.empty()) why = "predictor left the admissible set";
        }
        if (ok) { // second stage closes the step at t1
            known = y + (kOff * hh) * f1 + (kOff * hh) * f2;
            z = y + hh * (kOff * f1 + (kOff + kDiag) * f2);
            ok = sys.repair(z, negtol) &&
                 newton_stage(sys, lu, t1, kDiag * hh, known, z, atol, rtol, negtol, bal3, f3,
                              net3, out.rhs_evaluations, why);
            if (!ok && why.empty()) why = "predictor left the admissible set";
        }
        if (ok) {
            // assemble from the recorded stage derivatives so the per-step
            // mass balance below is an identity, not an approximation
            ynew = y + hh * (kOff * f1 + kOff * f2 + kDiag * f3);
            if (!sys.repair(ynew, negtol)) {
                ok = false;
                why = "density left the admissible set";
            }
        }
        if (ok) {
            errv = hh * ((kOff - kBh1) * f1 + (kOff - kBh2) * f2 + (kDiag - kBh3) * f3);
            ef = lu.solve(errv);
            errnorm = wrms(ef, y, ynew, atol, rtol);
            if (!std::isfinite(errnorm)) {
                ok = false;
                why = "error estimate not finite";
            } else if (errnorm > 1.0) {
                ok = false;
                why = "error test";
            }
        }

        if (!ok) {
            ++out.rejected_steps;
            const double fac =
                (why == "error test")
                    ? std::clamp(0.9 * std::pow(errnorm, -1.0 / 3.0), 0.1, 0.9)
                    : 0.25;
            h = hh * fac;
            continue;
        }

        ++out.accepted_steps;

        double lp_scale = std::numeric_limits<double>::min();
        for (int m = 0; m < sys.constituents(); ++m)
            lp_scale += std::abs(sys.linepack(y, m)) + std::abs(sys.linepack(ynew, m));
        for (int m = 0; m < sys.constituents(); ++m) {
            const double dlp = sys.linepack(ynew, m) - sys.linepack(y, m);
            const double quad = hh * (kOff * net1[m] + kOff * net2[m] + kDiag * net3[m]);
            out.linepack_residual =
                std::max(out.linepack_residual, std::abs(dlp - quad) / lp_scale);
        }

        st1 = sys.make_state(t1, ynew);
        for (Eigen::Index k = 0; k < st1.flux.size(); ++k) {
            if (prev_flux[k] * st1.flux[k] < 0.0 &&
                std::min(std::abs(prev_flux[k]), std::abs(st1.flux[k])) > sys.flux_floor())
                ++out.flux_reversals;
        }
        prev_flux = st1.flux;

        while (next_grid < S && grid[next_grid] <= t1 + teps) {
            const double tg = grid[next_grid];
            if (tg >= t1 - teps) break; // coincides with the step endpoint
            const double th = (tg - t) / hh;
            const double h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
            const double h10 = th * (1.0 - th) * (1.0 - th);
            const double h01 = th * th * (3.0 - 2.0 * th);
            const double h11 = th * th * (th - 1.0);
            Eigen::VectorXd yh = h00 * y + (h10 * hh) * f1 + h01 * ynew + (h11 * hh) * f3;
            if (!sys.repair(yh, 1e300)) yh = th < 0.5 ? y : ynew;
            out.times.push_back(tg);
            out.states.push_back(sys.make_state(tg, yh));
            ++next_grid;
        }
        const bool at_grid = next_grid < S && grid[next_grid] <= t1 + teps;
        if (at_grid) ++next_grid;
        if (o.keep_step_times || at_grid) {
            out.times.push_back(t1);
            out.states.push_back(st1);
        }

        t = t1;
        y.swap(ynew);
        sys.freeze(t);
        f1 = sys.to_f(bal3); // stiffly accurate: last stage sits at (t, y)
        net1 = sys.net_of(bal3);
        h = hh * std::clamp(0.9 * std::pow(std::max(errnorm, 1e-12), -1.0 / 3.0), 0.2, 5.0);
    }
    return out;
}

double flux_scale_of(const BoundarySchedule& bc, const Eigen::VectorXd& x0_flux) {
    double s = bc.withdrawal().values().cwiseAbs().maxCoeff();
    if (x0_flux.size()) s = std::max(s, x0_flux.cwiseAbs().maxCoeff());
    return s > 0.0 ? s : 1.0;
}

void check_schedule(const BoundarySchedule& bc, const PeriodicProfile& controls, int supplies,
                    int withdrawals, int actuators) {
    if (bc.supply_count() != supplies || bc.withdrawal_count() != withdrawals)
        throw ValidationError("boundary schedule channel counts do not match the network");
    if (controls.channels() != actuators)
        throw ValidationError("control profile needs one channel per actuator");
    if (std::abs(controls.period() - bc.period()) > 1e-9 * bc.period())
        throw ValidationError("control and boundary profiles must share one period");
}

} // namespace

Trajectory simulate(const MixtureDynamics& dyn, const BoundarySchedule& boundary,
                    const PeriodicProfile& controls, const MixtureState& x0, double horizon,
                    const SimulateOptions& opts) {
    check_schedule(boundary, controls, dyn.supply_count(), dyn.state_nodes(),
                   dyn.network().actuator_count());
    if (x0.rho1.size() != dyn.state_nodes() || x0.rho2.size() != dyn.state_nodes())
        throw ValidationError("initial state size does not match the network");
    const double floor = 1e-6 * flux_scale_of(boundary, x0.flux);
    MixtureOde sys(dyn, boundary, controls, floor);
    Eigen::VectorXd y(2 * dyn.state_nodes());
    y << x0.rho1, x0.rho2;
    return integrate(sys, std::move(y), horizon, opts);
}

Trajectory simulate(const HomogeneousDynamics& dyn, const BoundarySchedule& boundary,
                    const PeriodicProfile& controls, const Eigen::VectorXd& rho_total0,
                    double horizon, const SimulateOptions& opts) {
    check_schedule(boundary, controls, dyn.supply_count(), dyn.state_nodes(),
                   dyn.actuator_count());
    if (rho_total0.size() != dyn.state_nodes())
        throw ValidationError("initial state size does not match the network");
    // the reduction only holds when every supply sample carries its blend
    // fraction; piecewise-linear data then keeps it between samples too
    std::set<double> knots(boundary.supply1().sample_times().begin(),
                           boundary.supply1().sample_times().end());
    knots.insert(boundary.supply2().sample_times().begin(),
                 boundary.supply2().sample_times().end());
    for (double ts : knots) {
        const BoundaryValues b = boundary.at(ts);
        for (Eigen::Index i = 0; i < b.alpha2.size(); ++i)
            if (std::abs(b.alpha2[i] - dyn.alpha2()) > 1e-9)
                throw ValidationError("supply concentration varies; reduction does not apply");
    }
    const double floor = 1e-6 * flux_scale_of(boundary, Eigen::VectorXd());
    HomogeneousOde sys(dyn, boundary, controls, floor);
    return integrate(sys, rho_total0, horizon, opts);
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj, const Network& net,
                          double sigma1, double sigma2) {
    const int r = net.supply_count();
    const int W = net.withdrawal_count();
    os << "t_s";
    for (int j = 0; j < W; ++j) os << ", p_node_" << net.nodes[r + j].id;
    for (int j = 0; j < W; ++j) os << ", eta2_node_" << net.nodes[r + j].id;
    for (const Edge& e : net.edges) os << ", phi_edge_" << e.id;
    os << "\n";
    os.precision(12);
    for (std::size_t i = 0; i < traj.times.size(); ++i) {
        const MixtureState& st = traj.states[i];
        os << traj.times[i];
        for (int j = 0; j < W; ++j)
            os << ", " << pressure(st.rho1[j], st.rho2[j], sigma1, sigma2);
        for (int j = 0; j < W; ++j) {
            const double tot = st.rho1[j] + st.rho2[j];
            os << ", " << (tot > 0.0 ? st.rho2[j] / tot : 0.0);
        }
        for (Eigen::Index k = 0; k < st.flux.size(); ++k) os << ", " << st.flux[k];
        os << "\n";
    }
}

namespace {

// discrete L2 with trapezoid end-weights on a uniform grid
double series_l2(const Eigen::VectorXd& v) {
    const Eigen::Index n = v.size();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double wq = (i == 0 || i == n - 1) ? 0.5 : 1.0;
        acc += wq * v[i] * v[i];
    }
    return std::sqrt(acc);
}

struct LineSeries {
    Eigen::VectorXd outlet_pressure;
    Eigen::VectorXd inlet_flux;
};

LineSeries run_line(const Network& pipe, double cap, int outlet_id,
                    const ConsistencyConfig& cfg, const PeriodicProfile& pulse_shape) {
    const RefinedNetwork rn = refine(pipe, cap);
    const MixtureDynamics dyn(rn.net, cfg.sigma1, cfg.sigma2);
    const int W = dyn.state_nodes();
    const int outlet_w = rn.net.node_index(outlet_id) - rn.net.supply_count();

    Eigen::VectorXd w0 = Eigen::VectorXd::Zero(W);
    w0[outlet_w] = cfg.outlet_withdrawal;
    Eigen::VectorXd sup = Eigen::VectorXd::Constant(1, cfg.supply_pressure);
    Eigen::VectorXd alpha = Eigen::VectorXd::Constant(1, cfg.alpha2);
    const BoundaryValues b0 =
        BoundaryValues::from_pressure_alpha(sup, alpha, w0, cfg.sigma1, cfg.sigma2);
    const Eigen::VectorXd ratios = Eigen::VectorXd::Ones(rn.net.actuator_count());
    const MixtureState x0 = steady_state(dyn, b0, ratios);

    // withdrawal profile: outlet column carries the common pulse shape
    Eigen::MatrixXd wvals(pulse_shape.values().rows(), W);
    wvals.setZero();
    wvals.col(outlet_w) = pulse_shape.values().col(0);
    const double T = cfg.horizon;
    BoundarySchedule bc(PeriodicProfile::constant(b0.s1, T), PeriodicProfile::constant(b0.s2, T),
                        PeriodicProfile(pulse_shape.sample_times(), wvals, T));
    const PeriodicProfile controls = PeriodicProfile::constant(ratios, T);

    SimulateOptions so = cfg.sim;
    so.keep_step_times = false; // output exactly on the shared grid
    const Trajectory traj = simulate(dyn, bc, controls, x0, T, so);

    int inlet_edge = -1;
    for (std::size_t k = 0; k < dyn.topo().size(); ++k)
        if (dyn.topo()[k].tail_s >= 0) inlet_edge = static_cast<int>(k);
    if (inlet_edge < 0) throw ValidationError("no supply-fed edge found");

    LineSeries s;
    s.outlet_pressure = traj.pressure_table(cfg.sigma1, cfg.sigma2).col(outlet_w);
    s.inlet_flux = traj.flux_table().col(inlet_edge);
    return s;
}

} // namespace

ConsistencyResult consistency_study(const Network& pipe, const std::vector<double>& caps,
                                    double reference_cap, const ConsistencyConfig& cfg) {
    if (caps.empty()) throw ValidationError("need at least one segment cap");
    for (double c : caps)
        if (c <= 0.0) throw ValidationError("segment caps must be positive");
    if (reference_cap <= 0.0 || reference_cap >= *std::min_element(caps.begin(), caps.end()))
        throw ValidationError("reference cap must be finer than every studied cap");
    if (cfg.sigma1 <= 0.0 || cfg.sigma2 <= 0.0 || cfg.supply_pressure <= 0.0 ||
        cfg.horizon <= 0.0 || cfg.outlet_withdrawal <= 0.0)
        throw ValidationError("study parameters must be positive");
    if (pipe.supply_count() != 1)
        throw ValidationError("consistency study expects exactly one supply");

    // the pipe must be a single open line: two endpoints, no branching
    std::map<int, int> degree;
    for (const Edge& e : pipe.edges) {
        ++degree[e.from];
        ++degree[e.to];
    }
    int outlet_id = -1;
    int endpoints = 0;
    for (const auto& [node, d] : degree) {
        if (d > 2) throw ValidationError("consistency study expects an unbranched line");
        if (d == 1) {
            ++endpoints;
            if (node != pipe.nodes[0].id) outlet_id = node;
        }
    }
    if (endpoints != 2 || outlet_id < 0 || degree[pipe.nodes[0].id] != 1)
        throw ValidationError("consistency study expects a supply-to-outlet line");

    // one shared withdrawal transient: smooth periodic swell, zero at t = 0
    const int ns = 48;
    std::vector<double> ts(ns);
    Eigen::MatrixXd shape(ns, 1);
    for (int i = 0; i < ns; ++i) {
        ts[i] = cfg.horizon * i / ns;
        const double bump = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * ts[i] / cfg.horizon));
        shape(i, 0) = cfg.outlet_withdrawal * (1.0 + cfg.pulse_fraction * bump);
    }
    const PeriodicProfile pulse(ts, shape, cfg.horizon);

    ConsistencyResult res;
    res.caps = caps;
    std::vector<LineSeries> runs;
    runs.reserve(caps.size());
    for (double cap : caps) runs.push_back(run_line(pipe, cap, outlet_id, cfg, pulse));

    if (cfg.pulse_fraction != 0.0) {
        const LineSeries ref = run_line(pipe, reference_cap, outlet_id, cfg, pulse);
        for (const LineSeries& s : runs) {
            res.pressure_error.push_back(series_l2(s.outlet_pressure - ref.outlet_pressure) /
                                         series_l2(ref.outlet_pressure));
            res.flux_error.push_back(series_l2(s.inlet_flux - ref.inlet_flux) /
                                     series_l2(ref.inlet_flux));
        }
    } else {
        // steady boundary: each cap is measured against its own start
        for (const LineSeries& s : runs) {
            const Eigen::VectorXd p0 =
                Eigen::VectorXd::Constant(s.outlet_pressure.size(), s.outlet_pressure[0]);
            const Eigen::VectorXd q0 =
                Eigen::VectorXd::Constant(s.inlet_flux.size(), s.inlet_flux[0]);
            res.pressure_error.push_back(series_l2(s.outlet_pressure - p0) / series_l2(p0));
            res.flux_error.push_back(series_l2(s.inlet_flux - q0) / series_l2(q0));
        }
    }
    const auto order = [](double coarse, double fine, double dl) {
        if (!(coarse > 0.0) || !(fine > 0.0)) return std::numeric_limits<double>::quiet_NaN();
        return std::log(coarse / fine) / dl;
    };
    for (std::size_t i = 0; i + 1 < caps.size(); ++i) {
        const double dl = std::log(caps[i] / caps[i + 1]);
        res.pressure_order.push_back(order(res.pressure_error[i], res.pressure_error[i + 1], dl));
        res.flux_order.push_back(order(res.flux_error[i], res.flux_error[i + 1], dl));
    }
    return res;
}

} // namespace gasblend
