#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "eloss/corrector.hpp"

using namespace eloss;

namespace {

// the printed quartic profile, written out independently of CorrectorSolution
double varpi_oracle(double xi, double xh) {
    const double a = std::abs(xi);
    if (a < xh) return -std::pow(xi, 4) / (8.0 * xh * xh * xh) + 3.0 * xi * xi / (4.0 * xh);
    return a - 3.0 * xh / 8.0;
}

std::vector<CorrectorSolution> grid_solutions() {
    std::vector<CorrectorSolution> out;
    const FrictionlessSolution ex({0.3, 0.2, 1.0}, LossModel::exponential(1.0), Payoff::put(100.0));
    const FrictionlessSolution pw({0.3, 0.2, 1.0}, LossModel::power(1.0, 1.0), Payoff::zero());
    for (double t : {0.0, 0.25, 0.5, 0.75, 0.95}) {
        for (double s : {70.0, 85.0, 100.0, 115.0, 130.0}) {
            const auto z = ex.at(t, s, -1.0);
            if (z.delta != 0.0) out.push_back(solve_first_corrector(z.pi_p, z.pi_pp, z.delta, 0.2));
        }
        for (double p : {-0.2, -0.5, -1.0, -2.0, -5.0}) out.push_back(corrector_power(t, p, pw));
    }
    return out;
}

}  // namespace

TEST(Corrector, UnitExamples) {
    // pi_pp / pi_p^2 = 3/2, delta = 1
    const auto c = solve_first_corrector(2.0, 6.0, 1.0, 0.2);
    EXPECT_NEAR(c.xi_hat, 1.0, 1e-15);
    EXPECT_NEAR(c.varpi(0.5), 0.1796875, 1e-15);
    EXPECT_NEAR(c.varpi(std::nextafter(1.0, 0.0)), 0.625, 1e-15);
    EXPECT_NEAR(c.varpi(1.0), 0.625, 1e-15);
    EXPECT_EQ(c.varpi(0.0), 0.0);
    for (double xi = -3.0; xi <= 3.0; xi += 0.01) EXPECT_NEAR(c.varpi(xi), varpi_oracle(xi, 1.0), 1e-14);
    EXPECT_NEAR(check_corrector().xi_hat, std::cbrt(1.5), 1e-15);
}

TEST(Corrector, DegenerateInputs) {
    EXPECT_THROW(solve_first_corrector(1.0, 1.0, 0.0, 0.2), Error);
    EXPECT_THROW(solve_first_corrector(0.0, 1.0, 1.0, 0.2), Error);
    EXPECT_THROW(solve_first_corrector(1.0, -1.0, 1.0, 0.2), Error);
    EXPECT_THROW(solve_first_corrector(1.0, 1.0, 1.0, 0.0), Error);
    const FrictionlessSolution ex({0.0, 0.2, 1.0}, LossModel::exponential(1.0), Payoff::zero());
    EXPECT_THROW(corrector_exponential(0.0, 100.0, ex), Error);  // lambda = 0, zero payoff: delta = 0
    const FrictionlessSolution pw({0.3, 0.2, 1.0}, LossModel::power(1.0, 1.0), Payoff::zero());
    EXPECT_THROW(corrector_power(0.0, 0.5, pw), Error);
    EXPECT_THROW(corrector_power(0.0, -1.0, ex), Error);
}

TEST(Corrector, ExponentialConventions) {
    EXPECT_NEAR(h_exponential(1.0, 0.2, 1.5, HConvention::ode), 0.03, 1e-15);
    EXPECT_NEAR(h_exponential(1.0, 0.2, 1.5, HConvention::halved), 0.01500, 5e-6);
    EXPECT_NEAR(kHConstOde / kHConstHalved, 2.0, 1e-14);
    // ode agrees with the generic solve (pi_pp / pi_p^2 = eta)
    const auto g = solve_first_corrector(1.0, 1.5, 1.0, 0.2);
    EXPECT_NEAR(g.h, 0.03, 1e-15);
    // small delta: band and rate vanish
    EXPECT_LT(h_exponential(1e-9, 0.2, 1.5, HConvention::ode), 1e-12);

    // eta = 2, lambda = 0.3, zero payoff: delta = -0.75
    const FrictionlessSolution ex({0.3, 0.2, 1.0}, LossModel::exponential(2.0), Payoff::zero());
    const auto c = corrector_exponential(0.0, 100.0, ex);
    EXPECT_NEAR(c.xi_hat, std::cbrt(0.75) * std::pow(0.75, 2.0 / 3.0), 1e-15);
    const auto z = ex.at(0.0, 100.0, -1.0);
    const auto gen = solve_first_corrector(z.pi_p, z.pi_pp, z.delta, 0.2);
    EXPECT_NEAR(c.xi_hat, gen.xi_hat, 1e-14);
    EXPECT_NEAR(c.h, gen.h, 1e-14);
    EXPECT_NEAR(corrector_exponential(0.0, 100.0, ex, HConvention::halved).h, 0.5 * gen.h, 1e-14);
}

TEST(Corrector, PowerScalingAndTwoWays) {
    const double lam = 0.3, sig = 0.2, beta = 1.0;
    const FrictionlessSolution pw({lam, sig, 1.0}, LossModel::power(beta, 1.0), Payoff::zero());
    for (double t : {0.0, 0.5, 1.0}) {
        const auto base = corrector_power(t, -1.0, pw);
        for (double p : {-0.5, -2.0, -5.0}) {
            const auto c = corrector_power(t, p, pw);
            const double k = std::pow(-p, -1.0 / beta);
            EXPECT_NEAR(c.xi_hat / base.xi_hat, k, 1e-10);
            EXPECT_NEAR(c.h / base.h, k, 1e-10);
        }
    }
    // h(T,-1) by substituting the power derivatives by hand: pi_p = 1/beta, pi_pp = (1+beta)/beta^2,
    // delta = theta (lambda/(sigma(1+beta)) - 1), theta = lambda/(sigma(1+beta))
    const double theta = lam / (sig * (1.0 + beta));
    const double delta = theta * (theta - 1.0);
    const double ratio = (1.0 + beta);
    const double xh = std::cbrt(1.5 * delta * delta / ratio);
    const double h = 0.5 * sig * sig * ratio * xh * xh;
    const auto c = corrector_power(1.0, -1.0, pw);
    EXPECT_NEAR(c.h, h, 1e-10);
    EXPECT_NEAR(c.xi_hat, xh, 1e-10);
    const auto z = pw.at(1.0, 1.0, -1.0);
    const auto gen = solve_first_corrector(z.pi_p, z.pi_pp, z.delta, sig);
    EXPECT_EQ(c.xi_hat, gen.xi_hat);
    EXPECT_EQ(c.h, gen.h);
}

TEST(Corrector, EllipticResidualOnGrid) {
    for (const auto& c : grid_solutions()) {
        for (int i = 0; i < 200; ++i) {
            const double xi = -c.xi_hat + 2.0 * c.xi_hat * i / 199.0;
            if (std::abs(xi) < c.xi_hat) {
                EXPECT_LE(std::abs(c.elliptic_residual(xi)), 1e-12);
            }
        }
        // gradient-constraint branch: the max form needs the elliptic part <= 0 there
        for (double r : {1.0, 1.5, 3.0, 10.0}) {
            for (double sgn : {-1.0, 1.0}) {
                const double xi = sgn * r * c.xi_hat;
                const double g = c.varpi_xi(xi);
                EXPECT_EQ(std::max(-1.0 + g, -1.0 - g), 0.0);
                EXPECT_LE(c.elliptic_residual(xi), 1e-12);
            }
        }
    }
}

TEST(Corrector, SmoothPastingAndShape) {
    for (const auto& c : grid_solutions()) {
        for (double sgn : {-1.0, 1.0}) {
            const double in = sgn * std::nextafter(c.xi_hat, 0.0);
            const double edge = sgn * c.xi_hat;
            EXPECT_LE(std::abs(c.varpi_xixi(in)), 1e-12);
            EXPECT_LE(std::abs(c.varpi_xi(in) - c.varpi_xi(edge)), 1e-12);
            EXPECT_LE(std::abs(c.varpi(in) - c.varpi(edge)), 1e-12);
        }
        EXPECT_EQ(c.varpi(0.0), 0.0);
        EXPECT_LT(c.k4, 0.0);
        EXPECT_GT(c.k2, 0.0);
        for (int i = -400; i <= 400; ++i) {
            const double xi = 3.0 * c.xi_hat * i / 400.0;
            const double w = c.varpi(xi);
            EXPECT_GE(w, 0.0);
            EXPECT_LE(w, std::abs(xi) + 1e-15);
            EXPECT_LE(std::abs(c.varpi_xi(xi)), 1.0 + 1e-15);
            if (std::abs(xi) < c.xi_hat) {
                EXPECT_LT(std::abs(c.varpi_xi(xi)), 1.0);
            }
        }
    }
}

TEST(Corrector, ContinuousInPoint) {
    const FrictionlessSolution ex({0.3, 0.2, 1.0}, LossModel::exponential(1.0), Payoff::put(100.0));
    for (double t : {0.0, 0.5}) {
        for (double s : {70.0, 100.0, 130.0}) {
            const auto a = corrector_exponential(t, s, ex);
            const auto b = corrector_exponential(t, s + 1e-4, ex);
            const auto c = corrector_exponential(t + 1e-6, s, ex);
            EXPECT_LE(std::abs(a.xi_hat - b.xi_hat), 1e-3 * a.xi_hat);
            EXPECT_LE(std::abs(a.h - c.h), 1e-3 * a.h);
        }
    }
}

TEST(Corrector, XiHatDerivative) {
    const auto c = solve_first_corrector(1.0, 1.5, 0.8, 0.2);
    const double d = 1e-6;
    const auto up = detail::corrector_from_xi_hat(c.xi_hat + d, c.h, c.ratio, c.delta, c.sigma);
    const auto dn = detail::corrector_from_xi_hat(c.xi_hat - d, c.h, c.ratio, c.delta, c.sigma);
    for (double xi : {-0.9, -0.3, 0.0, 0.4, 1.7}) {
        const double x = xi * c.xi_hat;
        EXPECT_NEAR(c.varpi_dxihat(x), (up.varpi(x) - dn.varpi(x)) / (2.0 * d), 1e-8);
    }
}
