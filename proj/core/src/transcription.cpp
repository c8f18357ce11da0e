#include "gasblend/transcription.hpp"

#include "gasblend/errors.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace gasblend {

Eigen::MatrixXd DifferentiationOperator::apply(const Eigen::MatrixXd& samples) const {
    if (steps < 2) throw ValidationError("differentiation needs at least two samples");
    if (horizon <= 0.0) throw ValidationError("differentiation horizon must be positive");
    if (samples.rows() != steps) throw ValidationError("sample row count must equal steps");
    Eigen::MatrixXd out(samples.rows(), samples.cols());
    const double scale = steps / horizon;
    for (int n = 0; n < steps; ++n)
        out.row(n) = (samples.row((n + 1) % steps) - samples.row(n)) * scale;
    return out;
}

namespace {

void check_index(int value, int limit, const char* what) {
    if (value < 0 || value >= limit)
        throw ValidationError(std::string(what) + " index out of range: " + std::to_string(value));
}

} // namespace

std::string TranscriptionLayout::describe_var(int idx) const {
    check_index(idx, num_vars(), "variable");
    const int n = idx / var_block();
    int r = idx % var_block();
    if (r < W) return "rho1 at withdrawal " + std::to_string(r) + ", sample " + std::to_string(n);
    r -= W;
    if (r < W) return "rho2 at withdrawal " + std::to_string(r) + ", sample " + std::to_string(n);
    r -= W;
    if (r < E) return "flux on edge " + std::to_string(r) + ", sample " + std::to_string(n);
    r -= E;
    return "ratio of actuator " + std::to_string(r) + ", sample " + std::to_string(n);
}

std::string TranscriptionLayout::describe_equality(int row) const {
    check_index(row, num_equalities(), "equality row");
    const int n = row / eq_block();
    int r = row % eq_block();
    if (r < 2 * W)
        return "constituent " + std::to_string(r / W + 1) + " balance at withdrawal " +
               std::to_string(r % W) + ", sample " + std::to_string(n);
    r -= 2 * W;
    return "momentum on edge " + std::to_string(r) + ", sample " + std::to_string(n);
}

GasNlp::GasNlp(const RefinedNetwork& net, const ScenarioConfig& scenario,
               const BoundarySchedule& boundary)
    : rnet_(net),
      scenario_(scenario),
      dyn_(rnet_.net, scenario.gas1.sound_speed, scenario.gas2.sound_speed) {
    const int W = dyn_.state_nodes(), E = dyn_.edge_count(), A = rnet_.net.actuator_count();
    scenario_.validate(W, A);
    if (W < 1) throw ValidationError("transcription needs at least one withdrawal node");
    if (!rnet_.net.unassigned_actuators().empty())
        throw ValidationError("network has actuators without an edge slot; refine it first");
    if (boundary.supply_count() != dyn_.supply_count() || boundary.withdrawal_count() != W)
        throw ValidationError("boundary profile channel counts do not match the network");
    if (std::abs(boundary.period() - scenario_.horizon) > 1e-9 * std::max(1.0, scenario_.horizon))
        throw ValidationError("boundary profile period must equal the horizon");

    layout_ = TranscriptionLayout{scenario_.time_steps, W, E, A};

    samples_.reserve(static_cast<std::size_t>(layout_.N));
    for (int n = 0; n < layout_.N; ++n) samples_.push_back(boundary.at(sample_time(n)));

    for (int k = 0; k < E; ++k)
        if (dyn_.topo()[k].mu_in_slot >= 0) compressors_.push_back({dyn_.topo()[k].mu_in_slot, k});

    p_ref_ = scenario_.pressure_max.maxCoeff();
    rho_sc_ = p_ref_ / (dyn_.sigma1() * dyn_.sigma1());
    double wmax = 0.0;
    for (const auto& b : samples_) wmax = std::max(wmax, b.w.cwiseAbs().maxCoeff());
    flux_sc_ = wmax > 0.0 ? wmax : 1.0;
    flux_eps_ = 1e-6 * flux_sc_;
    kappa_ = (scenario_.isentropic_exponent - 1.0) / scenario_.isentropic_exponent;

    const double inf = std::numeric_limits<double>::infinity();
    lb_ = Eigen::VectorXd::Constant(layout_.num_vars(), -inf);
    ub_ = Eigen::VectorXd::Constant(layout_.num_vars(), inf);
    for (int n = 0; n < layout_.N; ++n) {
        for (int j = 0; j < W; ++j) {
            lb_[layout_.rho1(n, j)] = 1e-6;
            lb_[layout_.rho2(n, j)] = 0.0;
        }
        for (int a = 0; a < A; ++a) {
            lb_[layout_.ratio(n, a)] = rnet_.net.actuators[a].min_ratio;
            ub_[layout_.ratio(n, a)] = rnet_.net.actuators[a].max_ratio;
        }
    }
}

double GasNlp::sample_time(int n) const {
    check_index(n, layout_.N, "collocation sample");
    return static_cast<double>(n) * scenario_.horizon / layout_.N;
}

const BoundaryValues& GasNlp::sample(int n) const {
    check_index(n, layout_.N, "collocation sample");
    return samples_[static_cast<std::size_t>(n)];
}

double GasNlp::objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    if (x.size() != layout_.num_vars()) throw ValidationError("objective: stacked size mismatch");
    if (grad) grad->setZero(layout_.num_vars());
    const double wq = scenario_.horizon / layout_.N;
    double total = 0.0;
    for (int n = 0; n < layout_.N; ++n) {
        for (const auto& [slot, k] : compressors_) {
            const double c = scenario_.compressor_coefficients[slot];
            const double phi = flux_sc_ * x[layout_.flux(n, k)];
            const double mu = x[layout_.ratio(n, slot)];
            const double soft = std::sqrt(phi * phi + flux_eps_ * flux_eps_);
            const double lift = std::pow(mu, kappa_) - 1.0;
            total += wq * c * soft * lift;
            if (grad) {
                (*grad)[layout_.flux(n, k)] += wq * c * (phi / soft) * lift * flux_sc_;
                (*grad)[layout_.ratio(n, slot)] +=
                    wq * c * soft * kappa_ * std::pow(mu, kappa_ - 1.0);
            }
        }
    }
    return total;
}

Eigen::VectorXd GasNlp::equalities(const Eigen::VectorXd& x) const {
    if (x.size() != layout_.num_vars()) throw ValidationError("equalities: stacked size mismatch");
    const int W = layout_.W, E = layout_.E, A = layout_.A;
    const double dscale = layout_.N / scenario_.horizon;
    Eigen::VectorXd r(layout_.num_equalities());
    for (int n = 0; n < layout_.N; ++n) {
        const int np = (n + 1) % layout_.N;
        const Eigen::VectorXd rho1n = rho_sc_ * x.segment(layout_.rho1(n, 0), W);
        const Eigen::VectorXd rho2n = rho_sc_ * x.segment(layout_.rho2(n, 0), W);
        const Eigen::VectorXd rho1p = rho_sc_ * x.segment(layout_.rho1(np, 0), W);
        const Eigen::VectorXd rho2p = rho_sc_ * x.segment(layout_.rho2(np, 0), W);
        const Eigen::VectorXd fluxn = flux_sc_ * x.segment(layout_.flux(n, 0), E);
        const Eigen::VectorXd mun = x.segment(layout_.ratio(n, 0), A);
        try {
            const Eigen::VectorXd fdiag = dyn_.mass_diag(mun);
            const Eigen::VectorXd bal =
                dyn_.balance_residual(rho1n, rho2n, samples_[n], mun, fluxn);
            const Eigen::VectorXd mom =
                dyn_.momentum_residual(rho1n, rho2n, fluxn, samples_[n], mun);
            for (int j = 0; j < W; ++j) {
                r[layout_.density_row(1, n, j)] =
                    (fdiag[j] * (rho1p[j] - rho1n[j]) * dscale - bal[j]) / flux_sc_;
                r[layout_.density_row(2, n, j)] =
                    (fdiag[j] * (rho2p[j] - rho2n[j]) * dscale - bal[W + j]) / flux_sc_;
            }
            for (int k = 0; k < E; ++k) r[layout_.momentum_row(n, k)] = mom[k] / p_ref_;
        } catch (const NumericsError& e) {
            throw NumericsError(std::string(e.what()) + " at collocation sample " +
                                std::to_string(n));
        }
    }
    return r;
}

Eigen::SparseMatrix<double> GasNlp::equality_jacobian(const Eigen::VectorXd& x) const {
    if (x.size() != layout_.num_vars())
        throw ValidationError("equality_jacobian: stacked size mismatch");
    const int W = layout_.W, E = layout_.E, A = layout_.A;
    const double s1q = dyn_.sigma1() * dyn_.sigma1(), s2q = dyn_.sigma2() * dyn_.sigma2();
    const double dscale = layout_.N / scenario_.horizon;
    const double drho = rho_sc_ / flux_sc_;  // density-column scale of balance rows
    const auto& topo = dyn_.topo();

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(layout_.N) *
                 static_cast<std::size_t>(12 * W + 18 * E + 2 * A));

    for (int n = 0; n < layout_.N; ++n) {
        const int np = (n + 1) % layout_.N;
        const Eigen::VectorXd rho1n = rho_sc_ * x.segment(layout_.rho1(n, 0), W);
        const Eigen::VectorXd rho2n = rho_sc_ * x.segment(layout_.rho2(n, 0), W);
        const Eigen::VectorXd rho1p = rho_sc_ * x.segment(layout_.rho1(np, 0), W);
        const Eigen::VectorXd rho2p = rho_sc_ * x.segment(layout_.rho2(np, 0), W);
        const Eigen::VectorXd fluxn = flux_sc_ * x.segment(layout_.flux(n, 0), E);
        const Eigen::VectorXd mun = x.segment(layout_.ratio(n, 0), A);
        const BoundaryValues& b = samples_[static_cast<std::size_t>(n)];
        const Eigen::VectorXd fdiag = dyn_.mass_diag(mun);

        // difference-term columns of the density rows
        for (int j = 0; j < W; ++j) {
            const double d = fdiag[j] * dscale * drho;
            trip.emplace_back(layout_.density_row(1, n, j), layout_.rho1(n, j), -d);
            trip.emplace_back(layout_.density_row(1, n, j), layout_.rho1(np, j), d);
            trip.emplace_back(layout_.density_row(2, n, j), layout_.rho2(n, j), -d);
            trip.emplace_back(layout_.density_row(2, n, j), layout_.rho2(np, j), d);
        }
        // the mass operator itself depends on outlet ratios
        for (int k = 0; k < E; ++k) {
            const EdgeTopo& t = topo[static_cast<std::size_t>(k)];
            if (t.mu_out_slot < 0 || t.head_w < 0) continue;
            const int j = t.head_w;
            const double common = t.length * dscale / flux_sc_;
            trip.emplace_back(layout_.density_row(1, n, j), layout_.ratio(n, t.mu_out_slot),
                              common * (rho1p[j] - rho1n[j]));
            trip.emplace_back(layout_.density_row(2, n, j), layout_.ratio(n, t.mu_out_slot),
                              common * (rho2p[j] - rho2n[j]));
        }

        for (int k = 0; k < E; ++k) {
            const EdgeTopo& t = topo[static_cast<std::size_t>(k)];
            const double phi = fluxn[k];

            // transport columns of the density rows
            double e2;
            if (t.tail_s >= 0) {
                e2 = b.alpha2[t.tail_s];
            } else {
                const double tot = rho1n[t.tail_w] + rho2n[t.tail_w];
                if (tot <= 0.0)
                    throw NumericsError("nonpositive total density at edge inlet, sample " +
                                        std::to_string(n));
                e2 = rho2n[t.tail_w] / tot;
            }
            const double e1 = 1.0 - e2;
            if (t.head_w >= 0) {
                trip.emplace_back(layout_.density_row(1, n, t.head_w), layout_.flux(n, k), -e1);
                trip.emplace_back(layout_.density_row(2, n, t.head_w), layout_.flux(n, k), -e2);
            }
            if (t.tail_w >= 0) {
                trip.emplace_back(layout_.density_row(1, n, t.tail_w), layout_.flux(n, k), e1);
                trip.emplace_back(layout_.density_row(2, n, t.tail_w), layout_.flux(n, k), e2);
            }
            if (t.tail_w >= 0) {
                const int tw = t.tail_w;
                const double tot = rho1n[tw] + rho2n[tw];
                const double de2_d1 = -rho2n[tw] / (tot * tot);
                const double de2_d2 = rho1n[tw] / (tot * tot);
                if (t.head_w >= 0) {
                    const int hr1 = layout_.density_row(1, n, t.head_w);
                    const int hr2 = layout_.density_row(2, n, t.head_w);
                    trip.emplace_back(hr1, layout_.rho1(n, tw), phi * de2_d1 * drho);
                    trip.emplace_back(hr1, layout_.rho2(n, tw), phi * de2_d2 * drho);
                    trip.emplace_back(hr2, layout_.rho1(n, tw), -phi * de2_d1 * drho);
                    trip.emplace_back(hr2, layout_.rho2(n, tw), -phi * de2_d2 * drho);
                }
                const int tr1 = layout_.density_row(1, n, tw);
                const int tr2 = layout_.density_row(2, n, tw);
                trip.emplace_back(tr1, layout_.rho1(n, tw), -phi * de2_d1 * drho);
                trip.emplace_back(tr1, layout_.rho2(n, tw), -phi * de2_d2 * drho);
                trip.emplace_back(tr2, layout_.rho1(n, tw), phi * de2_d1 * drho);
                trip.emplace_back(tr2, layout_.rho2(n, tw), phi * de2_d2 * drho);
            }

            // momentum row of this edge
            const int row = layout_.momentum_row(n, k);
            const double mu_in = t.mu_in_slot >= 0 ? mun[t.mu_in_slot] : 1.0;
            const double mu_out = t.mu_out_slot >= 0 ? mun[t.mu_out_slot] : 1.0;
            double p_tail;
            if (t.tail_s >= 0) {
                p_tail = s1q * b.s1[t.tail_s] + s2q * b.s2[t.tail_s];
            } else {
                p_tail = s1q * rho1n[t.tail_w] + s2q * rho2n[t.tail_w];
            }
            double p_head, rho_head;
            if (t.head_s >= 0) {
                p_head = s1q * b.s1[t.head_s] + s2q * b.s2[t.head_s];
                rho_head = b.s1[t.head_s] + b.s2[t.head_s];
            } else {
                p_head = s1q * rho1n[t.head_w] + s2q * rho2n[t.head_w];
                rho_head = rho1n[t.head_w] + rho2n[t.head_w];
            }
            const double rho_out = mu_out * rho_head;
            if (rho_out <= 0.0)
                throw NumericsError("nonpositive outlet density on edge " +
                                    std::to_string(rnet_.net.edges[static_cast<std::size_t>(k)].id) +
                                    ", sample " + std::to_string(n));
            const double fl = t.fric * t.length;
            const double quad = phi * std::abs(phi);
            double slope = 2.0 * std::abs(phi);
            if (std::abs(phi) < flux_eps_) {
                const double soft = std::sqrt(phi * phi + flux_eps_ * flux_eps_);
                slope = soft + phi * phi / soft;
            }

            if (t.tail_w >= 0) {
                trip.emplace_back(row, layout_.rho1(n, t.tail_w), -mu_in * s1q * rho_sc_ / p_ref_);
                trip.emplace_back(row, layout_.rho2(n, t.tail_w), -mu_in * s2q * rho_sc_ / p_ref_);
            }
            if (t.head_w >= 0) {
                const double fric_drho = -fl * quad / (rho_out * rho_out) * mu_out;
                trip.emplace_back(row, layout_.rho1(n, t.head_w),
                                  (mu_out * s1q + fric_drho) * rho_sc_ / p_ref_);
                trip.emplace_back(row, layout_.rho2(n, t.head_w),
                                  (mu_out * s2q + fric_drho) * rho_sc_ / p_ref_);
            }
            trip.emplace_back(row, layout_.flux(n, k), fl * slope / rho_out * flux_sc_ / p_ref_);
            if (t.mu_in_slot >= 0)
                trip.emplace_back(row, layout_.ratio(n, t.mu_in_slot), -p_tail / p_ref_);
            if (t.mu_out_slot >= 0)
                trip.emplace_back(row, layout_.ratio(n, t.mu_out_slot),
                                  (p_head - fl * quad / (rho_out * mu_out)) / p_ref_);
        }

        // withdrawal drifts with the nodal concentration
        for (int j = 0; j < W; ++j) {
            const double tot = rho1n[j] + rho2n[j];
            if (tot <= 0.0)
                throw NumericsError("nonpositive total density at withdrawal node, sample " +
                                    std::to_string(n));
            const double de2_d1 = -rho2n[j] / (tot * tot);
            const double de2_d2 = rho1n[j] / (tot * tot);
            const double wj = b.w[j];
            const int r1 = layout_.density_row(1, n, j);
            const int r2 = layout_.density_row(2, n, j);
            trip.emplace_back(r1, layout_.rho1(n, j), -wj * de2_d1 * drho);
            trip.emplace_back(r1, layout_.rho2(n, j), -wj * de2_d2 * drho);
            trip.emplace_back(r2, layout_.rho1(n, j), wj * de2_d1 * drho);
            trip.emplace_back(r2, layout_.rho2(n, j), wj * de2_d2 * drho);
        }
    }

    Eigen::SparseMatrix<double> jac(layout_.num_equalities(), layout_.num_vars());
    jac.setFromTriplets(trip.begin(), trip.end());
    return jac;
}

Eigen::VectorXd GasNlp::inequalities(const Eigen::VectorXd& x) const {
    if (x.size() != layout_.num_vars())
        throw ValidationError("inequalities: stacked size mismatch");
    const int W = layout_.W;
    const double s1q = dyn_.sigma1() * dyn_.sigma1(), s2q = dyn_.sigma2() * dyn_.sigma2();
    Eigen::VectorXd g(layout_.num_inequalities());
    for (int n = 0; n < layout_.N; ++n) {
        for (int j = 0; j < W; ++j) {
            const double p = rho_sc_ * (s1q * x[layout_.rho1(n, j)] + s2q * x[layout_.rho2(n, j)]);
            g[layout_.pressure_low_row(n, j)] = (p - scenario_.pressure_min[j]) / p_ref_;
            g[layout_.pressure_high_row(n, j)] = (scenario_.pressure_max[j] - p) / p_ref_;
        }
    }
    return g;
}

Eigen::SparseMatrix<double> GasNlp::inequality_jacobian(const Eigen::VectorXd& x) const {
    if (x.size() != layout_.num_vars())
        throw ValidationError("inequality_jacobian: stacked size mismatch");
    const int W = layout_.W;
    const double s1q = dyn_.sigma1() * dyn_.sigma1(), s2q = dyn_.sigma2() * dyn_.sigma2();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(4 * layout_.N * W));
    for (int n = 0; n < layout_.N; ++n) {
        for (int j = 0; j < W; ++j) {
            const double d1 = s1q * rho_sc_ / p_ref_, d2 = s2q * rho_sc_ / p_ref_;
            trip.emplace_back(layout_.pressure_low_row(n, j), layout_.rho1(n, j), d1);
            trip.emplace_back(layout_.pressure_low_row(n, j), layout_.rho2(n, j), d2);
            trip.emplace_back(layout_.pressure_high_row(n, j), layout_.rho1(n, j), -d1);
            trip.emplace_back(layout_.pressure_high_row(n, j), layout_.rho2(n, j), -d2);
        }
    }
    Eigen::SparseMatrix<double> jac(layout_.num_inequalities(), layout_.num_vars());
    jac.setFromTriplets(trip.begin(), trip.end());
    return jac;
}

void GasNlp::set_sample(Eigen::VectorXd& x, int n, const MixtureState& state,
                        const Eigen::VectorXd& ratios) const {
    check_index(n, layout_.N, "collocation sample");
    if (x.size() != layout_.num_vars()) throw ValidationError("set_sample: stacked size mismatch");
    if (state.rho1.size() != layout_.W || state.rho2.size() != layout_.W ||
        state.flux.size() != layout_.E || ratios.size() != layout_.A)
        throw ValidationError("set_sample: sample size mismatch");
    x.segment(layout_.rho1(n, 0), layout_.W) = state.rho1 / rho_sc_;
    x.segment(layout_.rho2(n, 0), layout_.W) = state.rho2 / rho_sc_;
    x.segment(layout_.flux(n, 0), layout_.E) = state.flux / flux_sc_;
    x.segment(layout_.ratio(n, 0), layout_.A) = ratios;
}

Eigen::VectorXd GasNlp::stack(const MixtureState& state, const Eigen::VectorXd& ratios) const {
    Eigen::VectorXd x(layout_.num_vars());
    for (int n = 0; n < layout_.N; ++n) set_sample(x, n, state, ratios);
    return x;
}

MixtureState GasNlp::state_at(const Eigen::VectorXd& x, int n) const {
    check_index(n, layout_.N, "collocation sample");
    if (x.size() != layout_.num_vars()) throw ValidationError("state_at: stacked size mismatch");
    MixtureState s;
    s.rho1 = rho_sc_ * x.segment(layout_.rho1(n, 0), layout_.W);
    s.rho2 = rho_sc_ * x.segment(layout_.rho2(n, 0), layout_.W);
    s.flux = flux_sc_ * x.segment(layout_.flux(n, 0), layout_.E);
    return s;
}

Eigen::VectorXd GasNlp::ratios_at(const Eigen::VectorXd& x, int n) const {
    check_index(n, layout_.N, "collocation sample");
    if (x.size() != layout_.num_vars()) throw ValidationError("ratios_at: stacked size mismatch");
    return x.segment(layout_.ratio(n, 0), layout_.A);
}

std::unique_ptr<GasNlp> build_nlp(const RefinedNetwork& net, const ScenarioConfig& scenario,
                                  const BoundarySchedule& boundary) {
    return std::make_unique<GasNlp>(net, scenario, boundary);
}

PeriodicProfile extract_controls(const GasNlp& nlp, const Eigen::VectorXd& x) {
    const TranscriptionLayout& lay = nlp.layout();
    if (x.size() != lay.num_vars())
        throw ValidationError("extract_controls: stacked size mismatch");
    std::vector<double> times(static_cast<std::size_t>(lay.N));
    Eigen::MatrixXd values(lay.N, lay.A);
    for (int n = 0; n < lay.N; ++n) {
        times[static_cast<std::size_t>(n)] = nlp.sample_time(n);
        values.row(n) = nlp.ratios_at(x, n).transpose();
    }
    return PeriodicProfile(std::move(times), std::move(values), nlp.scenario().horizon);
}

} // namespace gasblend
