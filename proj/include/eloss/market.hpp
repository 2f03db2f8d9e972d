#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "eloss/error.hpp"
#include "eloss/quadrature.hpp"
#include "eloss/random.hpp"

namespace eloss {

/// Black-Scholes market with zero interest rate; drift mu = lambda * sigma under P.
struct MarketParams {
    double lambda = 0.0;  ///< market price of risk mu/sigma
    double sigma = 0.2;   ///< volatility
    double T = 1.0;       ///< horizon

    double mu() const { return lambda * sigma; }

    void validate() const {
        require(std::isfinite(lambda), ErrorKind::invalid_argument, "market: lambda must be finite");
        require(sigma > 0.0 && std::isfinite(sigma), ErrorKind::invalid_argument, "market: sigma must be > 0");
        require(T > 0.0 && std::isfinite(T), ErrorKind::invalid_argument, "market: T must be > 0");
    }
};

enum class Measure { P, Q };

/// Uniform grid on [t0, T].
struct TimeGrid {
    double t0 = 0.0;
    double T = 1.0;
    int n_steps = 2000;

    TimeGrid() = default;
    TimeGrid(double t0_, double T_, int n) : t0(t0_), T(T_), n_steps(n) {
        require(n_steps >= 1, ErrorKind::invalid_argument, "time grid: n_steps must be >= 1");
        require(t0 >= 0.0 && t0 < T, ErrorKind::invalid_argument, "time grid: need 0 <= t0 < T");
    }

    double dt() const { return (T - t0) / n_steps; }
    double time(int k) const { return k == n_steps ? T : t0 + k * dt(); }

    /// Grid with `steps_per_unit` resolution, at least one step.
    static TimeGrid with_density(double t0, double T, double steps_per_unit) {
        const int n = std::max(1, static_cast<int>(std::ceil((T - t0) * steps_per_unit - 1e-9)));
        return TimeGrid(t0, T, n);
    }

    TimeGrid refined() const { return TimeGrid(t0, T, 2 * n_steps); }
};

inline double norm_pdf(double x) {
    constexpr double kInvSqrt2Pi = 0.3989422804014327;
    return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

enum class PayoffKind { zero, put, call_spread, digital, custom };

/// Bounded European payoff g(S_T).
struct Payoff {
    PayoffKind kind = PayoffKind::zero;
    double strike = 0.0;  ///< put / digital
    double k1 = 0.0;      ///< call spread lower strike
    double k2 = 0.0;      ///< call spread upper strike
    /// custom: (s, g(s)) knots, increasing in s; linear between knots, flat outside
    std::vector<std::pair<double, double>> table;
    int quadrature_nodes = 32;  ///< Gauss-Legendre nodes per linear piece
    double quadrature_tol = 1e-10;

    static Payoff zero() { return {}; }
    static Payoff put(double k) {
        Payoff p;
        p.kind = PayoffKind::put;
        p.strike = k;
        p.validate();
        return p;
    }
    static Payoff call_spread(double lo, double hi) {
        Payoff p;
        p.kind = PayoffKind::call_spread;
        p.k1 = lo;
        p.k2 = hi;
        p.validate();
        return p;
    }
    static Payoff digital(double k) {
        Payoff p;
        p.kind = PayoffKind::digital;
        p.strike = k;
        p.validate();
        return p;
    }
    static Payoff custom(std::vector<std::pair<double, double>> knots, int nodes = 32) {
        Payoff p;
        p.kind = PayoffKind::custom;
        p.table = std::move(knots);
        p.quadrature_nodes = nodes;
        p.validate();
        return p;
    }

    void validate() const {
        switch (kind) {
            case PayoffKind::zero: break;
            case PayoffKind::put:
            case PayoffKind::digital:
                require(strike > 0.0, ErrorKind::invalid_argument, "payoff: strike must be > 0");
                break;
            case PayoffKind::call_spread:
                require(k1 > 0.0 && k1 < k2, ErrorKind::invalid_argument, "payoff: call spread needs 0 < k1 < k2");
                break;
            case PayoffKind::custom:
                require(table.size() >= 2, ErrorKind::invalid_argument, "payoff: custom table needs >= 2 knots");
                for (std::size_t i = 1; i < table.size(); ++i)
                    require(table[i].first > table[i - 1].first, ErrorKind::invalid_argument,
                            "payoff: custom knots must be strictly increasing");
                require(quadrature_nodes >= 8, ErrorKind::invalid_argument, "payoff: need >= 8 quadrature nodes per piece");
                break;
        }
    }

    /// K_g with |g| <= K_g.
    double bound() const {
        switch (kind) {
            case PayoffKind::zero: return 0.0;
            case PayoffKind::put: return strike;
            case PayoffKind::call_spread: return k2 - k1;
            case PayoffKind::digital: return 1.0;
            case PayoffKind::custom: {
                double b = 0.0;
                for (const auto& [s, g] : table) b = std::max(b, std::abs(g));
                return b;
            }
        }
        return 0.0;
    }

    double operator()(double s) const {
        switch (kind) {
            case PayoffKind::zero: return 0.0;
            case PayoffKind::put: return std::max(strike - s, 0.0);
            case PayoffKind::call_spread: return std::clamp(s - k1, 0.0, k2 - k1);
            case PayoffKind::digital: return s >= strike ? 1.0 : 0.0;
            case PayoffKind::custom: {
                if (s <= table.front().first) return table.front().second;
                if (s >= table.back().first) return table.back().second;
                auto it = std::upper_bound(table.begin(), table.end(), s,
                                           [](double v, const auto& knot) { return v < knot.first; });
                const auto& [sb, gb] = *it;
                const auto& [sa, ga] = *(it - 1);
                return ga + (gb - ga) * (s - sa) / (sb - sa);
            }
        }
        return 0.0;
    }
};

/// pi_bar = E^Q[g(S_T)] and its spot derivatives; entries above `order` are left at 0.
struct BsFunctionals {
    int order = 0;
    std::array<double, 4> d{0.0, 0.0, 0.0, 0.0};

    double value() const { return d[0]; }
    double ds() const { return d[1]; }
    double dss() const { return d[2]; }
    double dsss() const { return d[3]; }
};

namespace detail {

// Call (r = 0) and its first three s-derivatives.
inline std::array<double, 4> bs_call(double s, double k, double v) {
    const double d1 = (std::log(s / k) + 0.5 * v * v) / v;
    const double d2 = d1 - v;
    const double pdf = norm_pdf(d1);
    return {s * norm_cdf(d1) - k * norm_cdf(d2), norm_cdf(d1), pdf / (s * v),
            -pdf / (s * s * v) * (1.0 + d1 / v)};
}

inline std::array<double, 4> bs_digital(double s, double k, double v) {
    const double d1 = (std::log(s / k) + 0.5 * v * v) / v;
    const double d2 = d1 - v;
    const double pdf = norm_pdf(d2);
    return {norm_cdf(d2), pdf / (s * v), -pdf * d1 / (s * s * v * v),
            -pdf * ((1.0 - d1 * d2) / v - 2.0 * d1) / (s * s * s * v * v)};
}

inline std::array<double, 4> terminal_derivs(const Payoff& g, double s, int order) {
    std::array<double, 4> d{g(s), 0.0, 0.0, 0.0};
    if (order == 0) return d;
    auto kink = [&](double k) {
        require(s != k, ErrorKind::out_of_domain,
                "bs_functionals: derivative requested at a payoff kink at maturity");
    };
    switch (g.kind) {
        case PayoffKind::zero: break;
        case PayoffKind::put:
            kink(g.strike);
            d[1] = s < g.strike ? -1.0 : 0.0;
            break;
        case PayoffKind::call_spread:
            kink(g.k1);
            kink(g.k2);
            d[1] = (s > g.k1 && s < g.k2) ? 1.0 : 0.0;
            break;
        case PayoffKind::digital: kink(g.strike); break;
        case PayoffKind::custom: {
            const auto& t = g.table;
            if (s <= t.front().first || s >= t.back().first) {
                kink(t.front().first);
                kink(t.back().first);
                break;
            }
            for (std::size_t i = 1; i + 1 < t.size(); ++i) kink(t[i].first);
            auto it = std::upper_bound(t.begin(), t.end(), s,
                                       [](double v, const auto& knot) { return v < knot.first; });
            d[1] = (it->second - (it - 1)->second) / (it->first - (it - 1)->first);
            break;
        }
    }
    return d;
}

// Derivatives in x = ln s are E[g(S_T) He_n(Z)] / v^n; converted to s-derivatives below.
// g is piecewise linear, so the z-axis is cut at the knots and each piece is integrated
// with Gauss-Legendre against the normal density.
inline std::array<double, 4> custom_log_moments(const Payoff& g, double s, double v, int nodes) {
    constexpr double kZMax = 10.0;
    std::vector<double> cuts{-kZMax};
    for (const auto& [k, gk] : g.table) {
        const double z = (std::log(k / s) + 0.5 * v * v) / v;
        if (z > -kZMax && z < kZMax) cuts.push_back(z);
    }
    cuts.push_back(kZMax);
    // split long pieces so each one spans at most one unit in z
    std::vector<double> pieces{cuts.front()};
    for (std::size_t j = 1; j < cuts.size(); ++j) {
        const double a = pieces.back(), b = cuts[j];
        const int n = std::max(1, static_cast<int>(std::ceil(b - a)));
        for (int i = 1; i <= n; ++i) pieces.push_back(i == n ? b : a + (b - a) * i / n);
    }
    cuts.swap(pieces);
    const auto& rule = gauss_legendre(nodes);
    std::array<double, 4> m{0.0, 0.0, 0.0, 0.0};
    for (std::size_t j = 0; j + 1 < cuts.size(); ++j) {
        const double a = cuts[j], b = cuts[j + 1];
        const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
        for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
            const double z = mid + half * rule.nodes[i];
            const double gv = half * rule.weights[i] * norm_pdf(z) * g(s * std::exp(-0.5 * v * v + v * z));
            m[0] += gv;
            m[1] += gv * z;
            m[2] += gv * (z * z - 1.0);
            m[3] += gv * (z * z * z - 3.0 * z);
        }
    }
    return m;
}

}  // namespace detail

/// Closed-form (or quadrature, for custom payoffs) Black-Scholes value of g and up to
/// three spot derivatives. At t = T the payoff and its one-sided slopes are returned.
inline BsFunctionals bs_functionals(const Payoff& g, const MarketParams& mkt, double t, double s, int order) {
    require(order >= 0 && order <= 3, ErrorKind::invalid_argument, "bs_functionals: derivative order must be in 0..3");
    require(s > 0.0, ErrorKind::out_of_domain, "bs_functionals: spot must be > 0");
    require(t <= mkt.T, ErrorKind::out_of_domain, "bs_functionals: t must be <= T");
    BsFunctionals out;
    out.order = order;
    const double tau = mkt.T - t;
    if (tau <= 0.0) {
        out.d = detail::terminal_derivs(g, s, order);
    } else {
        const double v = mkt.sigma * std::sqrt(tau);
        switch (g.kind) {
            case PayoffKind::zero: break;
            case PayoffKind::put: {
                out.d = detail::bs_call(s, g.strike, v);
                out.d[0] += g.strike - s;
                out.d[1] -= 1.0;
                break;
            }
            case PayoffKind::call_spread: {
                const auto lo = detail::bs_call(s, g.k1, v);
                const auto hi = detail::bs_call(s, g.k2, v);
                for (int i = 0; i < 4; ++i) out.d[i] = lo[i] - hi[i];
                break;
            }
            case PayoffKind::digital: out.d = detail::bs_digital(s, g.strike, v); break;
            case PayoffKind::custom: {
                const auto m = detail::custom_log_moments(g, s, v, g.quadrature_nodes);
                const auto check = detail::custom_log_moments(g, s, v, g.quadrature_nodes / 2);
                require(std::abs(m[0] - check[0]) <= g.quadrature_tol * std::max(1.0, g.bound()),
                        ErrorKind::non_convergent, "bs_functionals: custom payoff quadrature did not converge");
                const double gx = m[1] / v, gxx = m[2] / (v * v), gxxx = m[3] / (v * v * v);
                out.d = {m[0], gx / s, (gxx - gx) / (s * s), (gxxx - 3.0 * gxx + 2.0 * gx) / (s * s * s)};
                break;
            }
        }
    }
    for (int i = order + 1; i < 4; ++i) out.d[i] = 0.0;
    return out;
}

/// Density 1/Q_T of Q^{t,s} w.r.t. P, with Q_T = exp(lambda^2 (T-t)/2 + lambda w) and
/// w the Brownian increment over [t, T].
inline double radon_nikodym_qp(const MarketParams& mkt, double t, double w) {
    require(t < mkt.T, ErrorKind::out_of_domain, "radon_nikodym_qp: need t < T");
    const double tau = mkt.T - t;
    return std::exp(-0.5 * mkt.lambda * mkt.lambda * tau - mkt.lambda * w);
}

/// Exact lognormal path on `grid`, drift lambda*sigma under P and 0 under Q.
inline std::vector<double> simulate_gbm(const MarketParams& mkt, double s0, const TimeGrid& grid, Measure measure,
                                        RngSpec rng, std::uint64_t path_id) {
    require(s0 > 0.0, ErrorKind::invalid_argument, "simulate_gbm: s0 must be > 0");
    require(grid.n_steps >= 1, ErrorKind::invalid_argument, "simulate_gbm: empty grid");
    PathRng gen(rng, path_id);
    const double dt = grid.dt();
    const double drift = measure == Measure::P ? mkt.mu() : 0.0;
    const double mean = (drift - 0.5 * mkt.sigma * mkt.sigma) * dt;
    const double vol = mkt.sigma * std::sqrt(dt);
    std::vector<double> path(grid.n_steps + 1);
    path[0] = s0;
    for (int k = 0; k < grid.n_steps; ++k) path[k + 1] = path[k] * std::exp(mean + vol * gen.normal());
    return path;
}

}  // namespace eloss
