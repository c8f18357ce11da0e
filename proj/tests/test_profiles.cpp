#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gasblend/errors.hpp"
#include "gasblend/profiles.hpp"

using gasblend::PeriodicProfile;
using gasblend::ValidationError;

namespace {
Eigen::VectorXd vec2(double a, double b) {
    Eigen::VectorXd v(2);
    v << a, b;
    return v;
}
} // namespace

TEST_CASE("constant profile") {
    PeriodicProfile p = PeriodicProfile::constant(vec2(3.0, -1.0), 86400.0);
    CHECK(p.interpolate(0.0) == vec2(3.0, -1.0));
    CHECK(p.interpolate(12345.6) == vec2(3.0, -1.0));
    CHECK(p.interpolate(-777.0) == vec2(3.0, -1.0));
    CHECK(p.mean() == vec2(3.0, -1.0));
}

TEST_CASE("piecewise linear interpolation with wrap") {
    Eigen::MatrixXd vals(2, 1);
    vals << 10.0, 30.0;
    PeriodicProfile p({0.0, 43200.0}, vals, 86400.0);

    CHECK(p.interpolate(0.0)[0] == doctest::Approx(10.0));
    CHECK(p.interpolate(21600.0)[0] == doctest::Approx(20.0));
    CHECK(p.interpolate(43200.0)[0] == doctest::Approx(30.0));
    // wrap segment interpolates back toward the value at t = 0
    CHECK(p.interpolate(64800.0)[0] == doctest::Approx(20.0));
    // periodicity in both directions
    CHECK(p.interpolate(86400.0 + 21600.0)[0] == doctest::Approx(20.0));
    CHECK(p.interpolate(-21600.0)[0] == doctest::Approx(20.0));

    CHECK(p.mean()[0] == doctest::Approx(20.0));
}

TEST_CASE("mean with uneven spacing") {
    Eigen::MatrixXd vals(2, 1);
    vals << 0.0, 1.0;
    PeriodicProfile p({0.0, 21600.0}, vals, 86400.0);
    // trapezoid: 0.5*6h up, 0.5*18h down, averaged over 24h
    CHECK(p.mean()[0] == doctest::Approx(0.5));
}

TEST_CASE("validation rejects malformed sample grids") {
    Eigen::MatrixXd vals(2, 1);
    vals << 0.0, 1.0;
    CHECK_THROWS_AS(PeriodicProfile({0.0, 10.0}, vals, 0.0), ValidationError);
    CHECK_THROWS_AS(PeriodicProfile({5.0, 10.0}, vals, 86400.0), ValidationError);
    CHECK_THROWS_AS(PeriodicProfile({0.0, 0.0}, vals, 86400.0), ValidationError);
    CHECK_THROWS_AS(PeriodicProfile({0.0, 86400.0}, vals, 86400.0), ValidationError);
    Eigen::MatrixXd wrong(3, 1);
    wrong << 0.0, 1.0, 2.0;
    CHECK_THROWS_AS(PeriodicProfile({0.0, 10.0}, wrong, 86400.0), ValidationError);
}
