#pragma once

#include <cmath>
#include <string>

#include "eloss/error.hpp"
#include "eloss/frictionless.hpp"

namespace eloss {

/// Which constant multiplies sigma^2 eta^{1/3} |delta|^{4/3} in the exponential loss rate h.
enum class HConvention {
    ode,     ///< (9/32)^{1/3}, consistent with the corrector ODE
    halved,  ///< (3/16)^{2/3}, half of ode
};

inline const double kHConstOde = std::cbrt(9.0 / 32.0);
inline const double kHConstHalved = std::pow(3.0 / 16.0, 2.0 / 3.0);

inline double h_constant(HConvention c) { return c == HConvention::ode ? kHConstOde : kHConstHalved; }

inline std::string to_string(HConvention c) { return c == HConvention::ode ? "ode" : "halved"; }

/// Band half-width xi_hat, loss rate h and the quartic profile varpi at a frozen point.
///   varpi(xi) = k4 xi^4 + k2 xi^2        |xi| <  xi_hat
///             = |xi| + k0                |xi| >= xi_hat
struct CorrectorSolution {
    double xi_hat = 0.0;
    double h = 0.0;
    double k4 = 0.0;
    double k2 = 0.0;
    double k0 = 0.0;  ///< = k3 = -3 xi_hat / 8
    // inputs, kept for residual checks
    double ratio = 0.0;  ///< pi_pp / pi_p^2
    double delta = 0.0;
    double sigma = 0.0;

    double varpi(double xi) const {
        const double a = std::abs(xi);
        if (a < xi_hat) return (k4 * xi * xi + k2) * xi * xi;
        return a + k0;
    }
    double varpi_xi(double xi) const {
        if (std::abs(xi) < xi_hat) return (4.0 * k4 * xi * xi + 2.0 * k2) * xi;
        return xi > 0.0 ? 1.0 : -1.0;
    }
    double varpi_xixi(double xi) const {
        if (std::abs(xi) < xi_hat) return 12.0 * k4 * xi * xi + 2.0 * k2;
        return 0.0;
    }
    /// d varpi / d xi_hat at fixed xi.
    double varpi_dxihat(double xi) const {
        if (std::abs(xi) < xi_hat) {
            const double r2 = xi * xi / (xi_hat * xi_hat);
            return 0.375 * r2 * r2 - 0.75 * r2;
        }
        return -0.375;
    }

    /// -1/2 ratio sigma^2 xi^2 + h - 1/2 sigma^2 delta^2 varpi_xixi
    double elliptic_residual(double xi) const {
        return -0.5 * ratio * sigma * sigma * xi * xi + h - 0.5 * sigma * sigma * delta * delta * varpi_xixi(xi);
    }
};

namespace detail {
inline CorrectorSolution corrector_from_xi_hat(double xi_hat, double h, double ratio, double delta, double sigma) {
    CorrectorSolution c;
    c.xi_hat = xi_hat;
    c.h = h;
    c.k4 = -1.0 / (8.0 * xi_hat * xi_hat * xi_hat);
    c.k2 = 0.75 / xi_hat;
    c.k0 = -0.375 * xi_hat;
    c.ratio = ratio;
    c.delta = delta;
    c.sigma = sigma;
    return c;
}
}  // namespace detail

/// Explicit solution of the first corrector equation at one point.
inline CorrectorSolution solve_first_corrector(double pi_p, double pi_pp, double delta, double sigma) {
    require(pi_p > 0.0 && pi_pp > 0.0 && delta != 0.0 && sigma > 0.0 && std::isfinite(delta), ErrorKind::degenerate_point,
            "solve_first_corrector: need pi_p > 0, pi_pp > 0, delta != 0, sigma > 0");
    const double ratio = pi_pp / (pi_p * pi_p);
    const double xi_hat = std::cbrt(1.5 * delta * delta / ratio);
    const double h = 0.5 * sigma * sigma * ratio * xi_hat * xi_hat;
    auto c = detail::corrector_from_xi_hat(xi_hat, h, ratio, delta, sigma);
    // keep the generic coefficient forms; they agree with the xi_hat forms up to rounding
    c.k4 = -pi_pp / (12.0 * delta * delta * pi_p * pi_p);
    c.k2 = h / (sigma * sigma * delta * delta);
    return c;
}

/// Unit-coefficient corrector (delta = sigma = 1, pi_p^2/pi_pp = 1); its band xi_check = (3/2)^{1/3}.
inline CorrectorSolution check_corrector() { return solve_first_corrector(1.0, 1.0, 1.0, 1.0); }

/// Exponential loss rate h = c_h sigma^2 eta^{1/3} |delta|^{4/3}.
inline double h_exponential(double delta, double sigma, double eta, HConvention conv) {
    return h_constant(conv) * sigma * sigma * std::cbrt(eta) * std::pow(std::abs(delta), 4.0 / 3.0);
}

/// Exponential-model corrector; xi_hat = (3/(2 eta))^{1/3} |delta|^{2/3}, h per convention.
inline CorrectorSolution corrector_exponential(double t, double s, const FrictionlessSolution& sol,
                                               HConvention conv = HConvention::ode) {
    require(sol.loss().kind == LossKind::exponential, ErrorKind::invalid_argument,
            "corrector_exponential: not an exponential model");
    const auto z = sol.at(t, s, -1.0);
    require(z.delta != 0.0, ErrorKind::degenerate_point, "corrector_exponential: delta = 0");
    const double eta = sol.loss().eta, sigma = sol.market().sigma;
    const double xi_hat = std::cbrt(1.5 / eta) * std::pow(std::abs(z.delta), 2.0 / 3.0);
    return detail::corrector_from_xi_hat(xi_hat, h_exponential(z.delta, sigma, eta, conv), eta, z.delta, sigma);
}

/// Power-model corrector at (t, p); xi_hat and h scale as (-p)^{-1/beta}.
inline CorrectorSolution corrector_power(double t, double p, const FrictionlessSolution& sol) {
    require(sol.loss().kind == LossKind::power, ErrorKind::invalid_argument, "corrector_power: not a power model");
    detail::require_threshold(p);
    const auto z = sol.at(t, 1.0, p);
    return solve_first_corrector(z.pi_p, z.pi_pp, z.delta, sol.market().sigma);
}

}  // namespace eloss
