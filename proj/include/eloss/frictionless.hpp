#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "eloss/error.hpp"
#include "eloss/loss.hpp"
#include "eloss/market.hpp"
#include "eloss/quadrature.hpp"

namespace eloss {

namespace detail {
inline void require_threshold(double p) {
    require(p < 0.0 && std::isfinite(p), ErrorKind::out_of_domain, "threshold p must be < 0");
}
}  // namespace detail

/// Deterministic factor of the power-loss price: m(t) = exp(-lambda^2 (T-t) / (2(1+beta))).
inline double power_m(double t, const LossModel& loss, const MarketParams& mkt) {
    return std::exp(-mkt.lambda * mkt.lambda * (mkt.T - t) / (2.0 * (1.0 + loss.beta)));
}

/// pi = pi_bar(t,s) - lambda^2 (T-t)/(2 eta) - ln(-p)/eta.
inline double price_exponential(double t, double s, double p, const LossModel& loss, const MarketParams& mkt,
                                const Payoff& g) {
    require(loss.kind == LossKind::exponential, ErrorKind::invalid_argument, "price_exponential: not an exponential model");
    loss.validate();
    detail::require_threshold(p);
    require(t <= mkt.T, ErrorKind::out_of_domain, "price_exponential: t must be <= T");
    const double tau = mkt.T - t;
    return bs_functionals(g, mkt, t, s, 0).value() - mkt.lambda * mkt.lambda * tau / (2.0 * loss.eta) -
           std::log(-p) / loss.eta;
}

/// pi = -kappa + (-p)^{-1/beta} m(t); the payoff must be zero.
inline double price_power(double t, double p, const LossModel& loss, const MarketParams& mkt,
                          const Payoff& g = Payoff::zero()) {
    require(loss.kind == LossKind::power, ErrorKind::invalid_argument, "price_power: not a power model");
    require(g.kind == PayoffKind::zero, ErrorKind::invalid_argument, "price_power: power model requires g == 0");
    loss.validate();
    detail::require_threshold(p);
    require(t <= mkt.T, ErrorKind::out_of_domain, "price_power: t must be <= T");
    return -loss.kappa + std::pow(-p, -1.0 / loss.beta) * power_m(t, loss, mkt);
}

/// Loss-dependent part of the duality price; s-independent in Black-Scholes.
struct DualityCore {
    double q_hat = 0.0;    ///< multiplier with E_P[I(q_hat Q_T)] = p
    double phi_part = 0.0; ///< E_Q[Phi(I(q_hat Q_T))]
    double pi_p = 0.0;     ///< = q_hat
    double pi_pp = 0.0;    ///< = 1 / E_P[I'(q_hat Q_T) Q_T]
};

inline DualityCore duality_core(double t, double p, const LossModel& loss, const MarketParams& mkt, int nodes = 64) {
    require(t <= mkt.T, ErrorKind::out_of_domain, "price_duality: t must be <= T");
    require(loss.in_image(p), ErrorKind::out_of_domain, "price_duality: p outside Im(Psi)");
    const auto& rule = gauss_hermite(nodes);
    const double tau = mkt.T - t;
    const double lam = mkt.lambda;
    std::vector<double> q(rule.nodes.size());
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = std::exp(0.5 * lam * lam * tau + lam * std::sqrt(tau) * rule.nodes[i]);

    auto excess = [&](double log_y) {
        const double y = std::exp(log_y);
        double acc = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) acc += rule.weights[i] * loss.inv_dphi(y * q[i]);
        return acc - p;
    };

    // q -> E[I(q Q_T)] is increasing; grow the bracket geometrically from q = 1
    constexpr int kMaxGrow = 1100;
    double lo = 0.0, hi = 0.0;
    double f0 = excess(0.0);
    require(std::isfinite(f0), ErrorKind::non_convergent, "price_duality: quadrature produced a non-finite value");
    if (f0 < 0.0) {
        int k = 0;
        while (excess(hi) < 0.0) {
            lo = hi;
            hi += std::log(2.0);
            require(++k < kMaxGrow, ErrorKind::not_bracketed, "price_duality: root not bracketed");
        }
    } else {
        int k = 0;
        while (excess(lo) > 0.0) {
            hi = lo;
            lo -= std::log(2.0);
            require(++k < kMaxGrow, ErrorKind::not_bracketed, "price_duality: root not bracketed");
        }
    }
    while (hi - lo > 1e-12) {
        const double mid = 0.5 * (lo + hi);
        if (excess(mid) < 0.0) lo = mid;
        else hi = mid;
    }

    DualityCore out;
    out.q_hat = std::exp(0.5 * (lo + hi));
    double phi_acc = 0.0, di_acc = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double y = out.q_hat * q[i];
        phi_acc += rule.weights[i] * loss.phi(loss.inv_dphi(y)) / q[i];
        di_acc += rule.weights[i] * loss.d_inv_dphi(y) * q[i];
    }
    require(std::isfinite(phi_acc) && std::isfinite(di_acc) && di_acc > 0.0, ErrorKind::non_convergent,
            "price_duality: quadrature diverged");
    out.phi_part = phi_acc;
    out.pi_p = out.q_hat;
    out.pi_pp = 1.0 / di_acc;
    return out;
}

/// pi = E_Q[g(S_T) + Phi(I(q_hat Q_T))] by Gauss-Hermite quadrature of the lognormal Q_T.
inline double price_duality(double t, double s, double p, const LossModel& loss, const MarketParams& mkt,
                            const Payoff& g, int nodes = 64) {
    return bs_functionals(g, mkt, t, s, 0).value() + duality_core(t, p, loss, mkt, nodes).phi_part;
}

enum class PriceRoute { closed_form, duality };

/// Everything the expansion needs from the frictionless problem at one point zeta = (t,s,p).
struct FrictionlessPoint {
    double t = 0.0, s = 0.0, p = 0.0;
    double pi = 0.0, pi_s = 0.0, pi_ss = 0.0, pi_sss = 0.0;
    double pi_p = 0.0, pi_pp = 0.0, pi_sp = 0.0;
    double theta = 0.0, theta_s = 0.0, theta_p = 0.0, theta_t = 0.0;
    double hat_a = 0.0;
    double delta = 0.0;
    double delta_s = 0.0;  ///< closed-form routes only; NaN for duality
};

class FrictionlessSolution {
public:
    FrictionlessSolution(MarketParams mkt, LossModel loss, Payoff g, PriceRoute route = PriceRoute::closed_form,
                         int nodes = 64)
        : mkt_(mkt), loss_(std::move(loss)), g_(std::move(g)), route_(route), nodes_(nodes) {
        mkt_.validate();
        loss_.validate();
        g_.validate();
        if (loss_.kind == LossKind::custom) route_ = PriceRoute::duality;
        if (loss_.kind == LossKind::power)
            require(g_.kind == PayoffKind::zero, ErrorKind::invalid_argument, "power model requires g == 0");
    }

    const MarketParams& market() const { return mkt_; }
    const LossModel& loss() const { return loss_; }
    const Payoff& payoff() const { return g_; }
    PriceRoute route() const { return route_; }

    double price(double t, double s, double p) const {
        if (route_ == PriceRoute::duality) return price_duality(t, s, p, loss_, mkt_, g_, nodes_);
        if (loss_.kind == LossKind::exponential) return price_exponential(t, s, p, loss_, mkt_, g_);
        return price_power(t, p, loss_, mkt_, g_);
    }

    FrictionlessPoint at(double t, double s, double p) const {
        detail::require_threshold(p);
        require(s > 0.0, ErrorKind::out_of_domain, "frictionless: spot must be > 0");
        require(t <= mkt_.T, ErrorKind::out_of_domain, "frictionless: t must be <= T");
        if (route_ == PriceRoute::duality) return at_duality(t, s, p);
        if (loss_.kind == LossKind::exponential) return at_exponential(t, s, p);
        return at_power(t, s, p);
    }

    double v(double t, double s, double p, double x) const { return price(t, s, p) - x; }

private:
    FrictionlessPoint at_exponential(double t, double s, double p) const {
        const auto b = bs_functionals(g_, mkt_, t, s, 3);
        const double eta = loss_.eta, lam = mkt_.lambda, sig = mkt_.sigma;
        FrictionlessPoint z{t, s, p};
        z.pi = b.value() - lam * lam * (mkt_.T - t) / (2.0 * eta) - std::log(-p) / eta;
        z.pi_s = b.ds();
        z.pi_ss = b.dss();
        z.pi_sss = b.dsss();
        z.pi_p = -1.0 / (eta * p);
        z.pi_pp = 1.0 / (eta * p * p);
        z.theta = s * b.ds() + lam / (sig * eta);
        z.theta_s = b.ds() + s * b.dss();
        z.theta_t = -0.5 * sig * sig * s * (2.0 * s * b.dss() + s * s * b.dsss());
        z.hat_a = -lam * p;
        z.delta = s * s * b.dss() - lam / (sig * eta);
        z.delta_s = 2.0 * s * b.dss() + s * s * b.dsss();
        return z;
    }

    FrictionlessPoint at_power(double t, double s, double p) const {
        const double beta = loss_.beta, lam = mkt_.lambda, sig = mkt_.sigma;
        const double m = power_m(t, loss_, mkt_);
        const double w = std::pow(-p, -1.0 / beta);
        FrictionlessPoint z{t, s, p};
        z.pi = -loss_.kappa + w * m;
        z.pi_p = m * w / (beta * (-p));
        z.pi_pp = (1.0 + beta) * m * w / (beta * beta * p * p);
        z.theta = lam * m * w / (sig * (1.0 + beta));
        z.theta_p = z.theta / (beta * (-p));
        z.theta_t = z.theta * lam * lam / (2.0 * (1.0 + beta));
        z.hat_a = lam * beta * (-p) / (1.0 + beta);
        z.delta = z.theta * (lam / (sig * (1.0 + beta)) - 1.0);
        return z;
    }

    // theta from the generic formula; pi_sp = 0 because the loss part of the price is s-free
    double theta_duality(double t, double s, double p) const {
        const auto b = bs_functionals(g_, mkt_, t, s, 1);
        const auto c = duality_core(t, p, loss_, mkt_, nodes_);
        return s * b.ds() + mkt_.lambda * c.pi_p * c.pi_p / (mkt_.sigma * c.pi_pp);
    }

    FrictionlessPoint at_duality(double t, double s, double p) const {
        require(loss_.in_image(p), ErrorKind::out_of_domain, "frictionless: p outside Im(Psi)");
        const auto b = bs_functionals(g_, mkt_, t, s, 3);
        const auto c = duality_core(t, p, loss_, mkt_, nodes_);
        const double lam = mkt_.lambda, sig = mkt_.sigma;
        FrictionlessPoint z{t, s, p};
        z.pi = b.value() + c.phi_part;
        z.pi_s = b.ds();
        z.pi_ss = b.dss();
        z.pi_sss = b.dsss();
        z.pi_p = c.pi_p;
        z.pi_pp = c.pi_pp;
        z.pi_sp = 0.0;
        require(z.pi_pp > 0.0, ErrorKind::degenerate_point, "frictionless: pi_pp = 0");
        z.hat_a = (lam * z.pi_p - sig * s * z.pi_sp) / z.pi_pp;
        z.theta = s * z.pi_s + z.pi_p * z.hat_a / sig;

        const double hs = 1e-5 * s;
        z.theta_s = (theta_duality(t, s + hs, p) - theta_duality(t, s - hs, p)) / (2.0 * hs);
        const double hp = 1e-5 * std::abs(p);
        z.theta_p = (theta_duality(t, s, p + hp) - theta_duality(t, s, p - hp)) / (2.0 * hp);
        const double ht = 1e-5 * mkt_.T;
        if (t + ht <= mkt_.T && t - ht >= 0.0)
            z.theta_t = (theta_duality(t + ht, s, p) - theta_duality(t - ht, s, p)) / (2.0 * ht);
        else if (t + ht <= mkt_.T)
            z.theta_t = (theta_duality(t + ht, s, p) - z.theta) / ht;
        else
            z.theta_t = (z.theta - theta_duality(t - ht, s, p)) / ht;

        require(z.pi_p > 0.0, ErrorKind::degenerate_point, "frictionless: pi_p = 0");
        z.delta = s * z.theta_s - z.theta + (z.theta_p / z.pi_p) * (z.theta - s * z.pi_s);
        z.delta_s = std::numeric_limits<double>::quiet_NaN();
        return z;
    }

    MarketParams mkt_;
    LossModel loss_;
    Payoff g_;
    PriceRoute route_;
    int nodes_;
};

inline double theta(double t, double s, double p, const FrictionlessSolution& sol) { return sol.at(t, s, p).theta; }

inline double hat_a(double t, double s, double p, const FrictionlessSolution& sol) {
    const auto z = sol.at(t, s, p);
    require(z.pi_pp != 0.0, ErrorKind::degenerate_point, "hat_a: pi_pp = 0");
    return z.hat_a;
}

inline double delta_coeff(double t, double s, double p, const FrictionlessSolution& sol) {
    return sol.at(t, s, p).delta;
}

/// delta from the generic formula s theta_s - theta + (theta_p/pi_p)(theta - s pi_s).
inline double delta_generic(const FrictionlessPoint& z) {
    require(z.pi_p != 0.0, ErrorKind::degenerate_point, "delta: pi_p = 0");
    return z.s * z.theta_s - z.theta + (z.theta_p / z.pi_p) * (z.theta - z.s * z.pi_s);
}

inline double v(double t, double s, double p, double x, const FrictionlessSolution& sol) { return sol.v(t, s, p, x); }

}  // namespace eloss
