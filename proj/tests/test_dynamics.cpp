#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gasblend/dynamics.hpp"
#include "gasblend/errors.hpp"
#include "gasblend/network.hpp"
#include "helpers.hpp"

#include <cmath>
#include <random>

using namespace gasblend;
using testutil::kSigma1;
using testutil::kSigma2;

namespace {

Eigen::VectorXd scalar(double v) {
    Eigen::VectorXd x(1);
    x << v;
    return x;
}

BoundaryValues pure_gas_supply(double density, const Eigen::VectorXd& w) {
    return BoundaryValues::from_densities(scalar(density), scalar(0.0), w);
}

} // namespace

TEST_CASE("equation of state") {
    CHECK(pressure(0.0, 0.0, kSigma1, kSigma2) == 0.0);
    // 338.38^2 * 43.67 = 5.0003 MPa
    CHECK(pressure(43.67, 0.0, kSigma1, kSigma2) == doctest::Approx(5.0e6).epsilon(1e-3));
    // 114501.0244*40 + 1832016.39*1 = 6.412 MPa
    CHECK(pressure(40.0, 1.0, kSigma1, kSigma2) == doctest::Approx(6.412e6).epsilon(1e-3));
}

TEST_CASE("nodal concentration") {
    MixtureState st;
    st.rho1 = Eigen::Vector2d(40.0, 36.0);
    st.rho2 = Eigen::Vector2d(0.0, 4.0);
    Eigen::VectorXd eta = nodal_concentration(st);
    CHECK(eta[0] == 0.0);
    CHECK(eta[1] == doctest::Approx(0.1).epsilon(1e-14));

    st.rho1[0] = 0.0;
    st.rho2[0] = 0.0;
    CHECK_THROWS_AS(nodal_concentration(st), NumericsError);

    // eta1 + eta2 stays 1 to an ulp for random states
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> uni(1e-8, 80.0);
    for (int i = 0; i < 200; ++i) {
        MixtureState s;
        s.rho1 = scalar(uni(rng));
        s.rho2 = scalar(uni(rng));
        const double e2 = nodal_concentration(s)[0];
        const double e1 = 1.0 - e2;
        CHECK(std::abs(e1 + e2 - 1.0) <= 2.3e-16);
    }
}

TEST_CASE("boundary value construction") {
    BoundaryValues b =
        BoundaryValues::from_pressure_alpha(scalar(5.0e6), scalar(0.0), scalar(100.0), kSigma1,
                                            kSigma2);
    CHECK(b.s1[0] == doctest::Approx(43.67).epsilon(1e-3));  // 5e6 / 338.38^2
    CHECK(b.s2[0] == 0.0);

    BoundaryValues bh =
        BoundaryValues::from_pressure_alpha(scalar(5.0e6), scalar(0.1), scalar(100.0), kSigma1,
                                            kSigma2);
    CHECK(bh.alpha2[0] == doctest::Approx(0.1));
    // mixture pressure reproduced
    CHECK(pressure(bh.s1[0], bh.s2[0], kSigma1, kSigma2) == doctest::Approx(5.0e6).epsilon(1e-12));

    CHECK_THROWS_AS(BoundaryValues::from_densities(scalar(-1.0), scalar(0.5), scalar(0.0)),
                    ValidationError);
    CHECK_THROWS_AS(
        BoundaryValues::from_pressure_alpha(scalar(5e6), scalar(1.5), scalar(0.0), kSigma1,
                                            kSigma2),
        ValidationError);
}

TEST_CASE("edge flux oracle on a single segment") {
    Network net = testutil::single_pipe(10.0);
    MixtureDynamics dyn(net, kSigma1, kSigma2);
    const Eigen::VectorXd ratios;  // no actuators

    // rho_in = 45, rho_out = 40, pure gas: drop = 114501.0244*5 = 572505.122 Pa,
    // phi = sqrt(572505.122 * (2*0.5/(0.011*10000)) * 40) = 456.27 kg/(m^2 s)
    BoundaryValues b = pure_gas_supply(45.0, scalar(100.0));
    Eigen::VectorXd phi =
        dyn.solve_edge_flux(scalar(40.0), scalar(0.0), b, ratios);
    CHECK(phi[0] == doctest::Approx(std::sqrt(572505.122 * 40.0 / 110.0)).epsilon(1e-9));
    CHECK(phi[0] == doctest::Approx(456.27).epsilon(1e-4));

    // reversed densities give the negative branch
    BoundaryValues br = pure_gas_supply(40.0, scalar(100.0));
    Eigen::VectorXd phir = dyn.solve_edge_flux(scalar(45.0), scalar(0.0), br, ratios);
    CHECK(phir[0] == doctest::Approx(-std::sqrt(572505.122 * 45.0 / 110.0)).epsilon(1e-9));
    CHECK(phir[0] == doctest::Approx(-483.9).epsilon(1e-3));

    // zero drop, zero flux
    BoundaryValues bz = pure_gas_supply(40.0, scalar(0.0));
    CHECK(dyn.solve_edge_flux(scalar(40.0), scalar(0.0), bz, ratios)[0] == 0.0);

    // the returned flux zeroes the momentum residual
    CHECK(dyn.momentum_residual(scalar(40.0), scalar(0.0), phi, b, ratios)[0] ==
          doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("flux is odd under pressure-difference reversal") {
    Network net = testutil::single_pipe(10.0);
    MixtureDynamics dyn(net, kSigma1, kSigma2);
    const Eigen::VectorXd ratios;
    const double rho_head = 42.0;

    BoundaryValues fwd = pure_gas_supply(rho_head + 5.0, scalar(0.0));
    BoundaryValues bwd = pure_gas_supply(rho_head - 5.0, scalar(0.0));
    const double a = dyn.solve_edge_flux(scalar(rho_head), scalar(0.0), fwd, ratios)[0];
    const double bb = dyn.solve_edge_flux(scalar(rho_head), scalar(0.0), bwd, ratios)[0];
    CHECK(a == -bb);  // bitwise odd symmetry at equal outlet density
}

TEST_CASE("momentum residual of eliminated flux is zero for random inputs") {
    RefinedNetwork rn = refine(testutil::diamond(), units::km_to_m(10.0));
    MixtureDynamics dyn(rn.net, kSigma1, kSigma2);
    const int W = dyn.state_nodes();
    std::mt19937 rng(20240812);
    std::uniform_real_distribution<double> dens(20.0, 80.0);
    std::uniform_real_distribution<double> frac(0.0, 0.15);
    std::uniform_real_distribution<double> ratio(1.0, 2.0);
    const double p_max = 12.0e6;

    for (int trial = 0; trial < 25; ++trial) {
        Eigen::VectorXd rho1(W), rho2(W);
        for (int j = 0; j < W; ++j) {
            const double tot = dens(rng);
            const double e = frac(rng);
            rho1[j] = (1.0 - e) * tot;
            rho2[j] = e * tot;
        }
        const double alpha = frac(rng);
        BoundaryValues b = BoundaryValues::from_densities(
            scalar((1.0 - alpha) * 60.0), scalar(alpha * 60.0), Eigen::VectorXd::Zero(W));
        Eigen::VectorXd ratios(2);
        ratios << ratio(rng), ratio(rng);

        Eigen::VectorXd phi = dyn.solve_edge_flux(rho1, rho2, b, ratios);
        Eigen::VectorXd res = dyn.momentum_residual(rho1, rho2, phi, b, ratios);
        CHECK(res.cwiseAbs().maxCoeff() / p_max <= 1e-12);
    }
}

TEST_CASE("mass operator diagonal") {
    Network chain3 = testutil::chain(3);
    MixtureDynamics dyn(chain3, kSigma1, kSigma2);
    Eigen::VectorXd f = dyn.mass_diag(Eigen::VectorXd());
    REQUIRE(f.size() == 3);
    for (int j = 0; j < 3; ++j) CHECK(f[j] == doctest::Approx(10000.0));

    // outlet regulator scales the incoming entry
    Network reg = testutil::single_pipe(10.0);
    reg.actuators.push_back({1, ActuatorPosition::Outlet, ActuatorRole::Regulator, 1.0, 2.0});
    reg.edges[0].outlet_regulator = 0;
    reg.validate();
    MixtureDynamics dreg(reg, kSigma1, kSigma2);
    CHECK(dreg.mass_diag(scalar(1.5))[0] == doctest::Approx(15000.0));

    // a withdrawal node with no incoming edge makes the operator singular
    Network back;
    back.nodes = {{1, NodeKind::Supply}, {2, NodeKind::Withdrawal}};
    Edge e;
    e.id = 1;
    e.from = 2;
    e.to = 1;
    e.length = 10000.0;
    e.diameter = 0.5;
    e.friction = 0.011;
    back.edges = {e};
    back.validate();
    MixtureDynamics dback(back, kSigma1, kSigma2);
    CHECK_THROWS_AS(dback.mass_diag(Eigen::VectorXd()), NumericsError);
}

TEST_CASE("density rhs: zero hydrogen stays zero") {
    RefinedNetwork rn = refine(testutil::diamond(), units::km_to_m(10.0));
    MixtureDynamics dyn(rn.net, kSigma1, kSigma2);
    const int W = dyn.state_nodes();
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> dens(30.0, 70.0);

    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd rho1(W);
        for (int j = 0; j < W; ++j) rho1[j] = dens(rng);
        Eigen::VectorXd w = Eigen::VectorXd::Constant(W, 5.0);
        BoundaryValues b = pure_gas_supply(60.0, w);
        Eigen::VectorXd ratios = Eigen::VectorXd::Ones(2);
        Eigen::VectorXd phi = dyn.solve_edge_flux(rho1, Eigen::VectorXd::Zero(W), b, ratios);
        auto [d1, d2] = dyn.density_rhs(rho1, Eigen::VectorXd::Zero(W), b, ratios, phi);
        CHECK(d2.cwiseAbs().maxCoeff() == 0.0);
        CHECK(d1.allFinite());
    }
}

TEST_CASE("density rhs telescopes to boundary fluxes on a pipe") {
    Network chain3 = testutil::chain(3);
    MixtureDynamics dyn(chain3, kSigma1, kSigma2);
    const Eigen::VectorXd ratios;

    Eigen::VectorXd rho1(3), rho2(3);
    rho1 << 44.0, 42.5, 41.0;
    rho2 << 4.0, 4.4, 4.7;
    Eigen::VectorXd w(3);
    w << 0.0, 0.0, 310.0;  // interior nodes withdraw nothing
    const double alpha = 0.08;
    BoundaryValues b = BoundaryValues::from_densities(scalar(46.0 * (1 - alpha)),
                                                      scalar(46.0 * alpha), w);

    Eigen::VectorXd phi = dyn.solve_edge_flux(rho1, rho2, b, ratios);
    auto [d1, d2] = dyn.density_rhs(rho1, rho2, b, ratios, phi);
    Eigen::VectorXd f = dyn.mass_diag(ratios);

    const double eta_out = rho2[2] / (rho1[2] + rho2[2]);
    // total linepack change per constituent = inlet flux - outlet withdrawal
    CHECK(f.dot(d1) == doctest::Approx((1 - alpha) * phi[0] - (1 - eta_out) * w[2]).epsilon(1e-12));
    CHECK(f.dot(d2) == doctest::Approx(alpha * phi[0] - eta_out * w[2]).epsilon(1e-12));
}

TEST_CASE("steady state: quiescent network") {
    RefinedNetwork rn = refine(testutil::diamond(), units::km_to_m(10.0));
    MixtureDynamics dyn(rn.net, kSigma1, kSigma2);
    const int W = dyn.state_nodes();

    BoundaryValues b = BoundaryValues::from_pressure_alpha(
        scalar(5.0e6), scalar(0.1), Eigen::VectorXd::Zero(W), kSigma1, kSigma2);
    MixtureState st = steady_state(dyn, b, Eigen::VectorXd::Ones(2));

    CHECK(st.flux.cwiseAbs().maxCoeff() <= 1e-8);
    Eigen::VectorXd p = pressure(st.rho1, st.rho2, kSigma1, kSigma2);
    for (int j = 0; j < W; ++j) CHECK(p[j] == doctest::Approx(5.0e6).epsilon(1e-9));
    Eigen::VectorXd eta = nodal_concentration(st);
    for (int j = 0; j < W; ++j) CHECK(eta[j] == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("steady state: quiescent compression scales pressure by the ratios") {
    RefinedNetwork rn = refine(testutil::diamond(), units::km_to_m(10.0));
    MixtureDynamics dyn(rn.net, kSigma1, kSigma2);
    const int W = dyn.state_nodes();

    BoundaryValues b = BoundaryValues::from_pressure_alpha(
        scalar(5.0e6), scalar(0.0), Eigen::VectorXd::Zero(W), kSigma1, kSigma2);
    Eigen::VectorXd ratios(2);
    ratios << 1.2, 1.1;
    MixtureState st = steady_state(dyn, b, ratios);

    CHECK(st.flux.cwiseAbs().maxCoeff() <= 1e-8);
    Eigen::VectorXd p = pressure(st.rho1, st.rho2, kSigma1, kSigma2);
    // nodes along the actuated chain: after segment 1 the pressure is 1.2 p0,
    // after segment 5 (and everywhere downstream) 1.2*1.1 p0
    const int purple = rn.net.node_index(2) - 1;  // withdrawal index of node 2
    CHECK(p[purple] == doctest::Approx(5.0e6 * 1.2 * 1.1).epsilon(1e-9));
}

TEST_CASE("steady state inverts the flux oracle on a boosted pipe") {
    Network net = testutil::single_pipe(10.0, /*inlet_compressor=*/true);
    MixtureDynamics dyn(net, kSigma1, kSigma2);

    const double sig1sq = kSigma1 * kSigma1;
    const double s_tot = 5.0e6 / sig1sq;           // supply at exactly 5 MPa
    const double mu = 45.0 / s_tot;                // compressed inlet density 45
    const double phi_star = std::sqrt(sig1sq * (45.0 - 40.0) * 40.0 / 110.0);

    BoundaryValues b = pure_gas_supply(s_tot, scalar(phi_star));
    MixtureState st = steady_state(dyn, b, scalar(mu));
    CHECK(st.rho1[0] == doctest::Approx(40.0).epsilon(1e-9));
    CHECK(st.rho2[0] == 0.0);
    CHECK(st.flux[0] == doctest::Approx(phi_star).epsilon(1e-9));
}

TEST_CASE("steady state on the refined demonstration network") {
    RefinedNetwork rn = refine(testutil::diamond(), units::km_to_m(10.0));
    MixtureDynamics dyn(rn.net, kSigma1, kSigma2);
    const int W = dyn.state_nodes();

    // withdrawals at the three parent demand nodes only
    Eigen::VectorXd w = Eigen::VectorXd::Zero(W);
    w[rn.net.node_index(2) - 1] = 60.0;
    w[rn.net.node_index(3) - 1] = 70.0;
    w[rn.net.node_index(4) - 1] = 80.0;
    BoundaryValues b = BoundaryValues::from_pressure_alpha(scalar(6.0e6), scalar(0.1), w,
                                                           kSigma1, kSigma2);
    Eigen::VectorXd ratios(2);
    ratios << 1.3, 1.25;

    MixtureState st = steady_state(dyn, b, ratios);

    // fixed point of the dynamics
    Eigen::VectorXd res = dyn.balance_residual(st.rho1, st.rho2, b, ratios, st.flux);
    CHECK(res.cwiseAbs().maxCoeff() / w.maxCoeff() <= 1e-10);
    auto [d1, d2] = dyn.density_rhs(st.rho1, st.rho2, b, ratios, st.flux);
    CHECK(d1.cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(d2.cwiseAbs().maxCoeff() <= 1e-10);

    // single supply: steady concentration is uniform at the supply value
    Eigen::VectorXd eta = nodal_concentration(st);
    for (int j = 0; j < W; ++j) CHECK(eta[j] == doctest::Approx(0.1).epsilon(1e-8));

    // all fluxes positive (flow from the single supply outward)
    CHECK(st.flux.minCoeff() > 0.0);
}

TEST_CASE("steady state reports non-convergence") {
    Network net = testutil::single_pipe(10.0);
    MixtureDynamics dyn(net, kSigma1, kSigma2);
    // withdrawal far beyond what the pipe can deliver: no admissible solution
    BoundaryValues b = pure_gas_supply(43.0, scalar(1.0e5));
    CHECK_THROWS_AS(steady_state(dyn, b, Eigen::VectorXd()), NumericsError);
}

TEST_CASE("homogeneous reduction sound speed") {
    Network net = testutil::single_pipe(10.0);
    CHECK(homogeneous_reduce(net, kSigma1, kSigma2, 0.0).sound_speed() ==
          doctest::Approx(kSigma1).epsilon(1e-15));
    CHECK(homogeneous_reduce(net, kSigma1, kSigma2, 1.0).sound_speed() ==
          doctest::Approx(kSigma2).epsilon(1e-15));
    const double a = homogeneous_reduce(net, kSigma1, kSigma2, 0.1).sound_speed();
    CHECK(a * a / (kSigma1 * kSigma1) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK_THROWS_AS(homogeneous_reduce(net, kSigma1, kSigma2, 1.5), ValidationError);
}

TEST_CASE("homogeneous flux agrees with the full system at uniform concentration") {
    RefinedNetwork rn = refine(testutil::diamond(), units::km_to_m(10.0));
    const double alpha = 0.1;
    MixtureDynamics full(rn.net, kSigma1, kSigma2);
    HomogeneousDynamics hom = homogeneous_reduce(rn.net, kSigma1, kSigma2, alpha);
    const int W = full.state_nodes();

    std::mt19937 rng(5);
    std::uniform_real_distribution<double> dens(30.0, 70.0);
    Eigen::VectorXd tot(W);
    for (int j = 0; j < W; ++j) tot[j] = dens(rng);
    const double s_tot = 55.0;

    auto [r1, r2] = hom.split(tot);
    BoundaryValues b = BoundaryValues::from_densities(scalar((1 - alpha) * s_tot),
                                                      scalar(alpha * s_tot),
                                                      Eigen::VectorXd::Zero(W));
    Eigen::VectorXd ratios(2);
    ratios << 1.4, 1.2;

    Eigen::VectorXd phi_full = full.solve_edge_flux(r1, r2, b, ratios);
    Eigen::VectorXd phi_hom = hom.solve_edge_flux(tot, scalar(s_tot), ratios);
    CHECK((phi_full - phi_hom).cwiseAbs().maxCoeff() <= 1e-9 * phi_full.cwiseAbs().maxCoeff());
}

TEST_CASE("balance jacobian matches finite differences") {
    RefinedNetwork rn = refine(testutil::diamond(), units::km_to_m(10.0));
    MixtureDynamics dyn(rn.net, kSigma1, kSigma2);
    const int W = dyn.state_nodes();

    Eigen::VectorXd w = Eigen::VectorXd::Constant(W, 20.0);
    BoundaryValues b = BoundaryValues::from_pressure_alpha(scalar(6.0e6), scalar(0.1), w,
                                                           kSigma1, kSigma2);
    Eigen::VectorXd ratios(2);
    ratios << 1.3, 1.1;

    std::mt19937 rng(17);
    std::uniform_real_distribution<double> dens(35.0, 60.0);
    Eigen::VectorXd rho1(W), rho2(W);
    for (int j = 0; j < W; ++j) {
        const double tot = dens(rng);
        rho1[j] = 0.92 * tot;
        rho2[j] = 0.08 * tot;
    }

    auto residual = [&](const Eigen::VectorXd& r1, const Eigen::VectorXd& r2) {
        return dyn.balance_residual(r1, r2, b, ratios, dyn.solve_edge_flux(r1, r2, b, ratios));
    };

    Eigen::MatrixXd J = Eigen::MatrixXd(dyn.balance_jacobian_eliminated(rho1, rho2, b, ratios,
                                                                        1e-8));
    const double h = 1e-6;
    Eigen::MatrixXd Jfd(2 * W, 2 * W);
    for (int c = 0; c < 2 * W; ++c) {
        Eigen::VectorXd p1 = rho1, p2 = rho2, m1 = rho1, m2 = rho2;
        if (c < W) {
            p1[c] += h;
            m1[c] -= h;
        } else {
            p2[c - W] += h;
            m2[c - W] -= h;
        }
        Jfd.col(c) = (residual(p1, p2) - residual(m1, m2)) / (2.0 * h);
    }
    const double scale = Jfd.cwiseAbs().maxCoeff();
    CHECK((J - Jfd).cwiseAbs().maxCoeff() / scale <= 1e-6);
}
