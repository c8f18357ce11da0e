#include "gasblend/dynamics.hpp"

#include "gasblend/errors.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

namespace gasblend {

namespace {

double sign_of(double x) { return x >= 0.0 ? 1.0 : -1.0; }

// Values needed at one edge for every balance evaluation.
struct EdgeEval {
    double mu_in = 1.0;
    double mu_out = 1.0;
    double drop = 0.0;     // compressed inlet pressure minus regulated outlet pressure
    double rho_out = 0.0;  // outlet total density seen by the friction term
    double eta2_in = 0.0;  // inlet concentration of constituent 2
};

} // namespace

BoundaryValues BoundaryValues::from_densities(const Eigen::VectorXd& s1, const Eigen::VectorXd& s2,
                                              const Eigen::VectorXd& w) {
    BoundaryValues b;
    b.s1 = s1;
    b.s2 = s2;
    b.w = w;
    b.alpha2.resize(s1.size());
    for (Eigen::Index i = 0; i < s1.size(); ++i) {
        const double tot = s1[i] + s2[i];
        if (tot <= 0.0) throw ValidationError("supply density must be positive");
        b.alpha2[i] = s2[i] / tot;
    }
    b.validate();
    return b;
}

BoundaryValues BoundaryValues::from_pressure_alpha(const Eigen::VectorXd& pressure,
                                                   const Eigen::VectorXd& alpha2,
                                                   const Eigen::VectorXd& w, double sigma1,
                                                   double sigma2) {
    if (pressure.size() != alpha2.size())
        throw ValidationError("supply pressure/alpha size mismatch");
    BoundaryValues b;
    b.alpha2 = alpha2;
    b.w = w;
    b.s1.resize(pressure.size());
    b.s2.resize(pressure.size());
    for (Eigen::Index i = 0; i < pressure.size(); ++i) {
        if (pressure[i] <= 0.0) throw ValidationError("supply pressure must be positive");
        // p = sigma1^2 (1-alpha) rho + sigma2^2 alpha rho with rho the total
        const double a2 = sigma1 * sigma1 * (1.0 - alpha2[i]) + sigma2 * sigma2 * alpha2[i];
        const double total = pressure[i] / a2;
        b.s1[i] = (1.0 - alpha2[i]) * total;
        b.s2[i] = alpha2[i] * total;
    }
    b.validate();
    return b;
}

void BoundaryValues::validate() const {
    if (s1.size() != s2.size() || s1.size() != alpha2.size())
        throw ValidationError("supply vector size mismatch");
    for (Eigen::Index i = 0; i < s1.size(); ++i) {
        if (s1[i] < 0.0 || s2[i] < 0.0) throw ValidationError("negative supply density");
        if (s1[i] + s2[i] <= 0.0) throw ValidationError("supply density must be positive");
        if (alpha2[i] < 0.0 || alpha2[i] > 1.0)
            throw ValidationError("supply concentration outside [0,1]");
        const double implied = s2[i] / (s1[i] + s2[i]);
        if (std::abs(implied - alpha2[i]) > 1e-12)
            throw ValidationError("supply concentration inconsistent with densities");
    }
}

void ScenarioConfig::validate(int withdrawal_nodes, int actuators) const {
    if (gas1.sound_speed <= 0.0 || gas2.sound_speed <= 0.0)
        throw ValidationError("sound speeds must be positive");
    if (horizon <= 0.0) throw ValidationError("horizon must be positive");
    if (pressure_min.size() != withdrawal_nodes || pressure_max.size() != withdrawal_nodes)
        throw ValidationError("pressure bound vectors must cover all withdrawal nodes");
    for (Eigen::Index j = 0; j < pressure_min.size(); ++j) {
        if (!(0.0 < pressure_min[j] && pressure_min[j] < pressure_max[j]))
            throw ValidationError("need 0 < pressure_min < pressure_max");
    }
    if (isentropic_exponent <= 1.0) throw ValidationError("isentropic exponent must exceed 1");
    if (compressor_coefficients.size() != actuators)
        throw ValidationError("one cost coefficient per actuator required");
    if (actuators > 0 && compressor_coefficients.minCoeff() < 0.0)
        throw ValidationError("cost coefficients must be nonnegative");
    if (time_steps < 2) throw ValidationError("need at least two time steps");
}

double pressure(double rho1, double rho2, double sigma1, double sigma2) {
    return sigma1 * sigma1 * rho1 + sigma2 * sigma2 * rho2;
}

Eigen::VectorXd pressure(const Eigen::VectorXd& rho1, const Eigen::VectorXd& rho2, double sigma1,
                         double sigma2) {
    return sigma1 * sigma1 * rho1 + sigma2 * sigma2 * rho2;
}

Eigen::VectorXd nodal_concentration(const MixtureState& state) {
    if (state.rho1.size() != state.rho2.size())
        throw ValidationError("constituent density size mismatch");
    Eigen::VectorXd eta(state.rho1.size());
    for (Eigen::Index j = 0; j < eta.size(); ++j) {
        const double tot = state.rho1[j] + state.rho2[j];
        if (tot <= 0.0) throw NumericsError("nodal concentration undefined: zero total density");
        eta[j] = state.rho2[j] / tot;
    }
    return eta;
}

std::vector<EdgeTopo> build_edge_topo(const Network& net) {
    const int r = net.supply_count();
    std::vector<EdgeTopo> topo(net.edges.size());
    for (std::size_t k = 0; k < net.edges.size(); ++k) {
        const Edge& e = net.edges[k];
        EdgeTopo& t = topo[k];
        const int ti = net.node_index(e.from);
        const int hi = net.node_index(e.to);
        if (ti < r) t.tail_s = ti; else t.tail_w = ti - r;
        if (hi < r) t.head_s = hi; else t.head_w = hi - r;
        t.mu_in_slot = e.inlet_compressor;
        t.mu_out_slot = e.outlet_regulator;
        t.length = e.length;
        t.fric = e.friction / (2.0 * e.diameter);
        t.conduct = 1.0 / (t.fric * e.length);
    }
    return topo;
}

MixtureDynamics::MixtureDynamics(const Network& net, double sigma1, double sigma2)
    : net_(&net), topo_(build_edge_topo(net)), sigma1_(sigma1), sigma2_(sigma2) {
    if (sigma1 <= 0.0 || sigma2 <= 0.0) throw ValidationError("sound speeds must be positive");
    if (!net.unassigned_actuators().empty())
        throw ValidationError("network has actuators without a segment slot; refine first");
    r_ = net.supply_count();
    W_ = net.withdrawal_count();
    E_ = static_cast<int>(net.edges.size());
    incoming_.assign(W_, {});
    for (int k = 0; k < E_; ++k)
        if (topo_[k].head_w >= 0) incoming_[topo_[k].head_w].push_back(k);
}

namespace {

// Single-edge evaluation used everywhere below.
EdgeEval eval_edge(const EdgeTopo& t, const Eigen::VectorXd& rho1, const Eigen::VectorXd& rho2,
                   const BoundaryValues& b, const Eigen::VectorXd& ratios, double sig1sq,
                   double sig2sq) {
    EdgeEval ev;
    if (t.mu_in_slot >= 0) ev.mu_in = ratios[t.mu_in_slot];
    if (t.mu_out_slot >= 0) ev.mu_out = ratios[t.mu_out_slot];

    double p_tail, p_head, rho_head;
    if (t.tail_s >= 0) {
        p_tail = sig1sq * b.s1[t.tail_s] + sig2sq * b.s2[t.tail_s];
        ev.eta2_in = b.alpha2[t.tail_s];
    } else {
        const double r1 = rho1[t.tail_w], r2 = rho2[t.tail_w];
        const double tot = r1 + r2;
        if (tot <= 0.0) throw NumericsError("nonpositive total density at edge inlet");
        p_tail = sig1sq * r1 + sig2sq * r2;
        ev.eta2_in = r2 / tot;
    }
    if (t.head_s >= 0) {
        p_head = sig1sq * b.s1[t.head_s] + sig2sq * b.s2[t.head_s];
        rho_head = b.s1[t.head_s] + b.s2[t.head_s];
    } else {
        p_head = sig1sq * rho1[t.head_w] + sig2sq * rho2[t.head_w];
        rho_head = rho1[t.head_w] + rho2[t.head_w];
    }
    ev.drop = ev.mu_in * p_tail - ev.mu_out * p_head;
    ev.rho_out = ev.mu_out * rho_head;
    return ev;
}

void check_sizes(const char* where, int W, int E, int r, const Eigen::VectorXd& rho1,
                 const Eigen::VectorXd& rho2, const BoundaryValues& b,
                 const Eigen::VectorXd& ratios, int actuators) {
    if (rho1.size() != W || rho2.size() != W)
        throw ValidationError(std::string(where) + ": density size mismatch");
    if (b.s1.size() != r || b.w.size() != W)
        throw ValidationError(std::string(where) + ": boundary size mismatch");
    if (ratios.size() != actuators)
        throw ValidationError(std::string(where) + ": ratio size mismatch");
    (void)E;
}

} // namespace

Eigen::VectorXd MixtureDynamics::pressure_drop(const Eigen::VectorXd& rho1,
                                               const Eigen::VectorXd& rho2,
                                               const BoundaryValues& b,
                                               const Eigen::VectorXd& ratios) const {
    check_sizes("pressure_drop", W_, E_, r_, rho1, rho2, b, ratios, net_->actuator_count());
    const double s1q = sigma1_ * sigma1_, s2q = sigma2_ * sigma2_;
    Eigen::VectorXd out(E_);
    for (int k = 0; k < E_; ++k)
        out[k] = eval_edge(topo_[k], rho1, rho2, b, ratios, s1q, s2q).drop;
    return out;
}

Eigen::VectorXd MixtureDynamics::outlet_density(const Eigen::VectorXd& rho1,
                                                const Eigen::VectorXd& rho2,
                                                const BoundaryValues& b,
                                                const Eigen::VectorXd& ratios) const {
    check_sizes("outlet_density", W_, E_, r_, rho1, rho2, b, ratios, net_->actuator_count());
    const double s1q = sigma1_ * sigma1_, s2q = sigma2_ * sigma2_;
    Eigen::VectorXd out(E_);
    for (int k = 0; k < E_; ++k)
        out[k] = eval_edge(topo_[k], rho1, rho2, b, ratios, s1q, s2q).rho_out;
    return out;
}

Eigen::VectorXd MixtureDynamics::inlet_concentration(const Eigen::VectorXd& rho1,
                                                     const Eigen::VectorXd& rho2,
                                                     const BoundaryValues& b) const {
    Eigen::VectorXd eta(E_);
    for (int k = 0; k < E_; ++k) {
        const EdgeTopo& t = topo_[k];
        if (t.tail_s >= 0) {
            eta[k] = b.alpha2[t.tail_s];
        } else {
            const double tot = rho1[t.tail_w] + rho2[t.tail_w];
            if (tot <= 0.0) throw NumericsError("nonpositive total density at edge inlet");
            eta[k] = rho2[t.tail_w] / tot;
        }
    }
    return eta;
}

Eigen::VectorXd MixtureDynamics::solve_edge_flux(const Eigen::VectorXd& rho1,
                                                 const Eigen::VectorXd& rho2,
                                                 const BoundaryValues& b,
                                                 const Eigen::VectorXd& ratios) const {
    check_sizes("solve_edge_flux", W_, E_, r_, rho1, rho2, b, ratios, net_->actuator_count());
    const double s1q = sigma1_ * sigma1_, s2q = sigma2_ * sigma2_;
    Eigen::VectorXd phi(E_);
    for (int k = 0; k < E_; ++k) {
        const EdgeEval ev = eval_edge(topo_[k], rho1, rho2, b, ratios, s1q, s2q);
        if (ev.rho_out <= 0.0)
            throw NumericsError("nonpositive outlet density on edge " +
                                std::to_string(net_->edges[k].id));
        phi[k] = sign_of(ev.drop) * std::sqrt(std::abs(ev.drop) * topo_[k].conduct * ev.rho_out);
    }
    return phi;
}

Eigen::VectorXd MixtureDynamics::momentum_residual(const Eigen::VectorXd& rho1,
                                                   const Eigen::VectorXd& rho2,
                                                   const Eigen::VectorXd& flux,
                                                   const BoundaryValues& b,
                                                   const Eigen::VectorXd& ratios) const {
    check_sizes("momentum_residual", W_, E_, r_, rho1, rho2, b, ratios, net_->actuator_count());
    if (flux.size() != E_) throw ValidationError("momentum_residual: flux size mismatch");
    const double s1q = sigma1_ * sigma1_, s2q = sigma2_ * sigma2_;
    Eigen::VectorXd res(E_);
    for (int k = 0; k < E_; ++k) {
        const EdgeTopo& t = topo_[k];
        const EdgeEval ev = eval_edge(t, rho1, rho2, b, ratios, s1q, s2q);
        if (ev.rho_out <= 0.0)
            throw NumericsError("nonpositive outlet density on edge " +
                                std::to_string(net_->edges[k].id));
        res[k] = -ev.drop + t.fric * t.length * flux[k] * std::abs(flux[k]) / ev.rho_out;
    }
    return res;
}

Eigen::VectorXd MixtureDynamics::mass_diag(const Eigen::VectorXd& ratios) const {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(W_);
    for (int k = 0; k < E_; ++k) {
        const EdgeTopo& t = topo_[k];
        if (t.head_w < 0) continue;
        const double mu_out = t.mu_out_slot >= 0 ? ratios[t.mu_out_slot] : 1.0;
        f[t.head_w] += t.length * mu_out;
    }
    for (int j = 0; j < W_; ++j) {
        if (f[j] <= 0.0)
            throw NumericsError("singular mass operator: withdrawal node " +
                                std::to_string(net_->nodes[r_ + j].id) + " has no incoming edge");
    }
    return f;
}

Eigen::VectorXd MixtureDynamics::balance_residual(const Eigen::VectorXd& rho1,
                                                  const Eigen::VectorXd& rho2,
                                                  const BoundaryValues& b,
                                                  const Eigen::VectorXd& ratios,
                                                  const Eigen::VectorXd& flux) const {
    check_sizes("balance_residual", W_, E_, r_, rho1, rho2, b, ratios, net_->actuator_count());
    if (flux.size() != E_) throw ValidationError("balance_residual: flux size mismatch");
    Eigen::VectorXd f = Eigen::VectorXd::Zero(2 * W_);
    const Eigen::VectorXd eta_in = inlet_concentration(rho1, rho2, b);
    for (int k = 0; k < E_; ++k) {
        const EdgeTopo& t = topo_[k];
        const double f2 = eta_in[k] * flux[k];
        const double f1 = (1.0 - eta_in[k]) * flux[k];
        if (t.head_w >= 0) {
            f[t.head_w] += f1;
            f[W_ + t.head_w] += f2;
        }
        if (t.tail_w >= 0) {
            f[t.tail_w] -= f1;
            f[W_ + t.tail_w] -= f2;
        }
    }
    for (int j = 0; j < W_; ++j) {
        const double tot = rho1[j] + rho2[j];
        if (tot <= 0.0) throw NumericsError("nonpositive total density at withdrawal node");
        const double eta2 = rho2[j] / tot;
        f[j] -= (1.0 - eta2) * b.w[j];
        f[W_ + j] -= eta2 * b.w[j];
    }
    return f;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> MixtureDynamics::density_rhs(
    const Eigen::VectorXd& rho1, const Eigen::VectorXd& rho2, const BoundaryValues& b,
    const Eigen::VectorXd& ratios, const Eigen::VectorXd& flux) const {
    const Eigen::VectorXd f = balance_residual(rho1, rho2, b, ratios, flux);
    const Eigen::VectorXd m = mass_diag(ratios);
    Eigen::VectorXd d1(W_), d2(W_);
    for (int j = 0; j < W_; ++j) {
        d1[j] = f[j] / m[j];
        d2[j] = f[W_ + j] / m[j];
    }
    return {d1, d2};
}

Eigen::SparseMatrix<double> MixtureDynamics::balance_jacobian_eliminated(
    const Eigen::VectorXd& rho1, const Eigen::VectorXd& rho2, const BoundaryValues& b,
    const Eigen::VectorXd& ratios, double flux_floor) const {
    check_sizes("balance_jacobian", W_, E_, r_, rho1, rho2, b, ratios, net_->actuator_count());
    const double s1q = sigma1_ * sigma1_, s2q = sigma2_ * sigma2_;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(16 * E_ + 4 * W_));

    for (int k = 0; k < E_; ++k) {
        const EdgeTopo& t = topo_[k];
        const EdgeEval ev = eval_edge(t, rho1, rho2, b, ratios, s1q, s2q);
        if (ev.rho_out <= 0.0) throw NumericsError("nonpositive outlet density");
        const double phi =
            sign_of(ev.drop) * std::sqrt(std::abs(ev.drop) * t.conduct * ev.rho_out);
        const double abs_phi = std::max(std::abs(phi), flux_floor);
        const double dphi_ddrop = t.conduct * ev.rho_out / (2.0 * abs_phi);
        const double dphi_drho_out = phi / (2.0 * ev.rho_out);

        // dphi/drho^m at tail and head (withdrawal slots only)
        double dphi_t1 = 0.0, dphi_t2 = 0.0, dphi_h1 = 0.0, dphi_h2 = 0.0;
        if (t.tail_w >= 0) {
            dphi_t1 = dphi_ddrop * ev.mu_in * s1q;
            dphi_t2 = dphi_ddrop * ev.mu_in * s2q;
        }
        if (t.head_w >= 0) {
            dphi_h1 = -dphi_ddrop * ev.mu_out * s1q + dphi_drho_out * ev.mu_out;
            dphi_h2 = -dphi_ddrop * ev.mu_out * s2q + dphi_drho_out * ev.mu_out;
        }

        const double coef1 = 1.0 - ev.eta2_in;  // constituent-1 carry fraction
        const double coef2 = ev.eta2_in;

        auto add_edge_terms = [&](int node_w, double sgn) {
            if (node_w < 0) return;
            // through the flux
            if (t.tail_w >= 0) {
                trip.emplace_back(node_w, t.tail_w, sgn * coef1 * dphi_t1);
                trip.emplace_back(node_w, W_ + t.tail_w, sgn * coef1 * dphi_t2);
                trip.emplace_back(W_ + node_w, t.tail_w, sgn * coef2 * dphi_t1);
                trip.emplace_back(W_ + node_w, W_ + t.tail_w, sgn * coef2 * dphi_t2);
            }
            if (t.head_w >= 0) {
                trip.emplace_back(node_w, t.head_w, sgn * coef1 * dphi_h1);
                trip.emplace_back(node_w, W_ + t.head_w, sgn * coef1 * dphi_h2);
                trip.emplace_back(W_ + node_w, t.head_w, sgn * coef2 * dphi_h1);
                trip.emplace_back(W_ + node_w, W_ + t.head_w, sgn * coef2 * dphi_h2);
            }
            // through the inlet concentration (tail withdrawal only)
            if (t.tail_w >= 0) {
                const double tot = rho1[t.tail_w] + rho2[t.tail_w];
                const double de2_d1 = -rho2[t.tail_w] / (tot * tot);
                const double de2_d2 = rho1[t.tail_w] / (tot * tot);
                trip.emplace_back(node_w, t.tail_w, sgn * phi * (-de2_d1));
                trip.emplace_back(node_w, W_ + t.tail_w, sgn * phi * (-de2_d2));
                trip.emplace_back(W_ + node_w, t.tail_w, sgn * phi * de2_d1);
                trip.emplace_back(W_ + node_w, W_ + t.tail_w, sgn * phi * de2_d2);
            }
        };
        add_edge_terms(t.head_w, +1.0);
        add_edge_terms(t.tail_w, -1.0);
    }

    // withdrawal term -eta^m_j w_j
    for (int j = 0; j < W_; ++j) {
        const double tot = rho1[j] + rho2[j];
        const double de2_d1 = -rho2[j] / (tot * tot);
        const double de2_d2 = rho1[j] / (tot * tot);
        trip.emplace_back(j, j, -b.w[j] * (-de2_d1));
        trip.emplace_back(j, W_ + j, -b.w[j] * (-de2_d2));
        trip.emplace_back(W_ + j, j, -b.w[j] * de2_d1);
        trip.emplace_back(W_ + j, W_ + j, -b.w[j] * de2_d2);
    }

    Eigen::SparseMatrix<double> J(2 * W_, 2 * W_);
    J.setFromTriplets(trip.begin(), trip.end());
    return J;
}

namespace {

// With all withdrawals identically zero the steady state has zero flux and
// pressures fixed by mu_in p_tail = mu_out p_head along every edge; Newton on
// the sqrt-law residual is ill-conditioned there, so propagate directly.
MixtureState quiescent_steady(const MixtureDynamics& dyn, const BoundaryValues& b,
                              const Eigen::VectorXd& ratios) {
    const int W = dyn.state_nodes();
    const int r = dyn.supply_count();
    const int V = r + W;
    const double s1q = dyn.sigma1() * dyn.sigma1();
    const double s2q = dyn.sigma2() * dyn.sigma2();
    const auto& topo = dyn.topo();

    std::vector<double> p(V, -1.0);
    std::vector<int> frontier;
    for (int i = 0; i < r; ++i) {
        p[i] = s1q * b.s1[i] + s2q * b.s2[i];
        frontier.push_back(i);
    }
    // node -> incident edges
    std::vector<std::vector<int>> inc(V);
    auto gnode = [&](const EdgeTopo& t, bool tail) {
        if (tail) return t.tail_s >= 0 ? t.tail_s : r + t.tail_w;
        return t.head_s >= 0 ? t.head_s : r + t.head_w;
    };
    for (std::size_t k = 0; k < topo.size(); ++k) {
        inc[gnode(topo[k], true)].push_back(static_cast<int>(k));
        inc[gnode(topo[k], false)].push_back(static_cast<int>(k));
    }
    while (!frontier.empty()) {
        const int v = frontier.back();
        frontier.pop_back();
        for (int k : inc[v]) {
            const EdgeTopo& t = topo[k];
            const double mu_in = t.mu_in_slot >= 0 ? ratios[t.mu_in_slot] : 1.0;
            const double mu_out = t.mu_out_slot >= 0 ? ratios[t.mu_out_slot] : 1.0;
            const int tail = gnode(t, true), head = gnode(t, false);
            const int other = tail == v ? head : tail;
            const double cand =
                tail == v ? p[v] * mu_in / mu_out : p[v] * mu_out / mu_in;
            if (p[other] < 0.0) {
                p[other] = cand;
                frontier.push_back(other);
            } else if (std::abs(p[other] - cand) > 1e-9 * std::max(p[other], cand)) {
                throw NumericsError(
                    "steady_state: boundary data admits no quiescent state (pressure "
                    "mismatch around a loop or between supplies)");
            }
        }
    }

    const double eta = b.alpha2.mean();
    const double a2 = s1q * (1.0 - eta) + s2q * eta;
    MixtureState st;
    st.rho1.resize(W);
    st.rho2.resize(W);
    for (int j = 0; j < W; ++j) {
        const double tot = p[r + j] / a2;
        st.rho1[j] = (1.0 - eta) * tot;
        st.rho2[j] = eta * tot;
    }
    st.flux = Eigen::VectorXd::Zero(static_cast<int>(topo.size()));
    return st;
}

} // namespace

namespace {

// Linearized (resistor-network) estimate of the loaded steady densities:
// replaces the sqrt pressure-flow law by its secant through the expected
// operating flux, which yields a linear nodal system in the total density.
std::pair<Eigen::VectorXd, Eigen::VectorXd> resistor_init(const MixtureDynamics& dyn,
                                                          const BoundaryValues& b,
                                                          const Eigen::VectorXd& ratios) {
    const int W = dyn.state_nodes();
    const int r = dyn.supply_count();
    const double s1q = dyn.sigma1() * dyn.sigma1();
    const double s2q = dyn.sigma2() * dyn.sigma2();
    const auto& topo = dyn.topo();
    const double w_ref = std::max(b.w.cwiseAbs().maxCoeff(), 1e-3);

    double a2 = 0.0, rho_ref = 0.0;
    for (int i = 0; i < r; ++i) {
        a2 += s1q * (1.0 - b.alpha2[i]) + s2q * b.alpha2[i];
        rho_ref += b.s1[i] + b.s2[i];
    }
    a2 /= r;
    rho_ref /= r;

    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd rhs = b.w;
    for (std::size_t k = 0; k < topo.size(); ++k) {
        const EdgeTopo& t = topo[k];
        const double mu_in = t.mu_in_slot >= 0 ? ratios[t.mu_in_slot] : 1.0;
        const double mu_out = t.mu_out_slot >= 0 ? ratios[t.mu_out_slot] : 1.0;
        const double g = t.conduct * rho_ref / (2.0 * w_ref);
        auto stamp = [&](int row_w, double sgn) {
            if (row_w < 0) return;
            if (t.tail_w >= 0) trip.emplace_back(row_w, t.tail_w, sgn * g * mu_in * a2);
            if (t.head_w >= 0) trip.emplace_back(row_w, t.head_w, -sgn * g * mu_out * a2);
            if (t.tail_s >= 0)
                rhs[row_w] -= sgn * g * mu_in * (s1q * b.s1[t.tail_s] + s2q * b.s2[t.tail_s]);
            if (t.head_s >= 0)
                rhs[row_w] += sgn * g * mu_out * (s1q * b.s1[t.head_s] + s2q * b.s2[t.head_s]);
        };
        stamp(t.head_w, +1.0);
        stamp(t.tail_w, -1.0);
    }
    Eigen::SparseMatrix<double> A(W, W);
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success)
        throw NumericsError("steady_state: singular linearized network");
    Eigen::VectorXd rho_tot = lu.solve(rhs);
    const double floor_tot = 1e-3 * rho_ref;
    for (int j = 0; j < W; ++j) rho_tot[j] = std::max(rho_tot[j], floor_tot);

    const double eta = b.alpha2.mean();
    return {(1.0 - eta) * rho_tot, eta * rho_tot};
}

// Damped Newton on the stacked constituent balances at fixed boundary data.
// Returns false (leaving rho1/rho2 at the best iterate) instead of throwing,
// so the continuation driver can shorten its step.
bool steady_newton(const MixtureDynamics& dyn, const BoundaryValues& b,
                   const Eigen::VectorXd& ratios, double w_scale, double tol, int max_iter,
                   Eigen::VectorXd& rho1, Eigen::VectorXd& rho2) {
    const int W = dyn.state_nodes();
    const auto residual = [&](const Eigen::VectorXd& r1,
                              const Eigen::VectorXd& r2) -> Eigen::VectorXd {
        const Eigen::VectorXd phi = dyn.solve_edge_flux(r1, r2, b, ratios);
        return dyn.balance_residual(r1, r2, b, ratios, phi) / w_scale;
    };
    Eigen::VectorXd R = residual(rho1, rho2);
    double merit = 0.5 * R.squaredNorm();
    const double flux_floor = 1e-6 * w_scale;
    for (int it = 0; it < max_iter; ++it) {
        if (R.cwiseAbs().maxCoeff() <= tol) return true;
        Eigen::SparseMatrix<double> J =
            dyn.balance_jacobian_eliminated(rho1, rho2, b, ratios, flux_floor) / w_scale;
        Eigen::SparseLU<Eigen::SparseMatrix<double>> jlu;
        jlu.compute(J);
        if (jlu.info() != Eigen::Success) return false;
        const Eigen::VectorXd dx = jlu.solve(-R);
        if (!dx.allFinite()) return false;
        double step = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 40 && !accepted; ++ls, step *= 0.5) {
            const Eigen::VectorXd c1 = rho1 + step * dx.head(W);
            // project onto rho2 >= 0: the pure-gas face is a valid operating
            // boundary and LU round-off otherwise knocks iterates just below it
            const Eigen::VectorXd c2 = (rho2 + step * dx.tail(W)).cwiseMax(0.0);
            if (c1.minCoeff() <= 0.0) continue;
            Eigen::VectorXd Rc;
            try {
                Rc = residual(c1, c2);
            } catch (const NumericsError&) {
                continue;
            }
            if (!Rc.allFinite()) continue;
            const double mc = 0.5 * Rc.squaredNorm();
            if (mc <= merit * (1.0 - 2e-4 * step)) {
                rho1 = c1;
                rho2 = c2;
                R = Rc;
                merit = mc;
                accepted = true;
            }
        }
        if (!accepted) return false;
    }
    return R.cwiseAbs().maxCoeff() <= tol;
}

} // namespace

MixtureState steady_state(const MixtureDynamics& dyn, const BoundaryValues& b,
                          const Eigen::VectorXd& ratios, const SteadyOptions& opts) {
    const int W = dyn.state_nodes();
    if (b.w.size() != W) throw ValidationError("steady_state: withdrawal size mismatch");

    if (b.w.cwiseAbs().maxCoeff() == 0.0) return quiescent_steady(dyn, b, ratios);

    const double w_scale = std::max(opts.flux_scale > 0.0 ? opts.flux_scale
                                                          : b.w.cwiseAbs().maxCoeff(),
                                    1e-3);

    // Continuation in the load: ramp the withdrawals, warm-starting Newton
    // from the previous stage; the first attempted stage starts from the
    // resistor-network estimate (never from the quiescent state, where the
    // sqrt law has infinite slope).  Shorten the ramp whenever Newton fails.
    Eigen::VectorXd rho1, rho2;
    double lambda = 0.0;
    double dlam = 1.0;
    const double dlam_min = 1.0 / 256.0;
    while (lambda < 1.0) {
        const double target = std::min(1.0, lambda + dlam);
        BoundaryValues bt = b;
        bt.w = target * b.w;
        Eigen::VectorXd c1, c2;
        if (lambda == 0.0) {
            std::tie(c1, c2) = resistor_init(dyn, bt, ratios);
        } else {
            c1 = rho1;
            c2 = rho2;
        }
        if (steady_newton(dyn, bt, ratios, w_scale, opts.tol, opts.max_iter, c1, c2)) {
            rho1 = c1;
            rho2 = c2;
            lambda = target;
            dlam = std::min(1.0, 2.0 * dlam);
        } else {
            dlam *= 0.5;
            if (dlam < dlam_min)
                throw NumericsError(
                    "steady_state: continuation stalled at load fraction " +
                    std::to_string(lambda) +
                    " (boundary data likely infeasible for this network)");
        }
    }

    MixtureState st;
    st.rho1 = rho1;
    st.rho2 = rho2;
    st.flux = dyn.solve_edge_flux(rho1, rho2, b, ratios);
    return st;
}

HomogeneousDynamics::HomogeneousDynamics(const Network& net, double sigma1, double sigma2,
                                         double alpha2)
    : topo_(build_edge_topo(net)), alpha2_(alpha2) {
    if (alpha2 < 0.0 || alpha2 > 1.0) throw ValidationError("alpha2 outside [0,1]");
    if (sigma1 <= 0.0 || sigma2 <= 0.0) throw ValidationError("sound speeds must be positive");
    r_ = net.supply_count();
    W_ = net.withdrawal_count();
    E_ = static_cast<int>(net.edges.size());
    actuators_ = net.actuator_count();
    a_ = std::sqrt(sigma1 * sigma1 * (1.0 - alpha2) + sigma2 * sigma2 * alpha2);
    incoming_.assign(W_, {});
    for (int k = 0; k < E_; ++k)
        if (topo_[k].head_w >= 0) incoming_[topo_[k].head_w].push_back(k);
}

Eigen::VectorXd HomogeneousDynamics::solve_edge_flux(const Eigen::VectorXd& rho_total,
                                                     const Eigen::VectorXd& supply_total,
                                                     const Eigen::VectorXd& ratios) const {
    if (rho_total.size() != W_ || supply_total.size() != r_)
        throw ValidationError("homogeneous flux: size mismatch");
    const double a2 = a_ * a_;
    Eigen::VectorXd phi(E_);
    for (int k = 0; k < E_; ++k) {
        const EdgeTopo& t = topo_[k];
        const double mu_in = t.mu_in_slot >= 0 ? ratios[t.mu_in_slot] : 1.0;
        const double mu_out = t.mu_out_slot >= 0 ? ratios[t.mu_out_slot] : 1.0;
        const double rho_tail = t.tail_s >= 0 ? supply_total[t.tail_s] : rho_total[t.tail_w];
        const double rho_head = t.head_s >= 0 ? supply_total[t.head_s] : rho_total[t.head_w];
        const double drop = a2 * (mu_in * rho_tail - mu_out * rho_head);
        const double rho_out = mu_out * rho_head;
        if (rho_out <= 0.0) throw NumericsError("nonpositive outlet density");
        phi[k] = sign_of(drop) * std::sqrt(std::abs(drop) * t.conduct * rho_out);
    }
    return phi;
}

Eigen::VectorXd HomogeneousDynamics::mass_diag(const Eigen::VectorXd& ratios) const {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(W_);
    for (int k = 0; k < E_; ++k) {
        const EdgeTopo& t = topo_[k];
        if (t.head_w < 0) continue;
        const double mu_out = t.mu_out_slot >= 0 ? ratios[t.mu_out_slot] : 1.0;
        f[t.head_w] += t.length * mu_out;
    }
    for (int j = 0; j < W_; ++j)
        if (f[j] <= 0.0) throw NumericsError("singular mass operator");
    return f;
}

Eigen::VectorXd HomogeneousDynamics::density_rhs(const Eigen::VectorXd& rho_total,
                                                 const Eigen::VectorXd& supply_total,
                                                 const Eigen::VectorXd& w,
                                                 const Eigen::VectorXd& ratios,
                                                 const Eigen::VectorXd& flux) const {
    if (w.size() != W_ || flux.size() != E_)
        throw ValidationError("homogeneous rhs: size mismatch");
    (void)rho_total;
    (void)supply_total;
    Eigen::VectorXd f = Eigen::VectorXd::Zero(W_);
    for (int k = 0; k < E_; ++k) {
        const EdgeTopo& t = topo_[k];
        if (t.head_w >= 0) f[t.head_w] += flux[k];
        if (t.tail_w >= 0) f[t.tail_w] -= flux[k];
    }
    f -= w;
    const Eigen::VectorXd m = mass_diag(ratios);
    return f.cwiseQuotient(m);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> HomogeneousDynamics::split(
    const Eigen::VectorXd& rho_total) const {
    return {(1.0 - alpha2_) * rho_total, alpha2_ * rho_total};
}

HomogeneousDynamics homogeneous_reduce(const Network& net, double sigma1, double sigma2,
                                       double alpha2) {
    return HomogeneousDynamics(net, sigma1, sigma2, alpha2);
}

} // namespace gasblend
