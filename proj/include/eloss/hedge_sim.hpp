#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "eloss/corrector.hpp"
#include "eloss/error.hpp"
#include "eloss/frictionless.hpp"
#include "eloss/market.hpp"
#include "eloss/random.hpp"
#include "eloss/second_corrector.hpp"

namespace eloss {

/// l(x) = x - eps^3 |x|.
inline double liquidation_value(double x, double eps) { return x - eps * eps * eps * std::abs(x); }

struct Projection {
    double x = 0.0;
    double y = 0.0;
};

/// Immediate transfer onto [theta - eps xi, theta + eps xi]; cash pays the proportional cost.
inline Projection project_to_band(double x, double y, double eps, double theta, double xi) {
    const double lo = theta - eps * xi, hi = theta + eps * xi;
    const double xp = x + std::max(lo - x, 0.0) - std::max(x - hi, 0.0);
    return {xp, y + liquidation_value(x - xp, eps)};
}

/// Exponential stop level k = -ln(p0 (e^{-eta eps^order} - 1) / c) / eta + 1; +inf for c <= 0.
inline double exponential_stop_level(double p0, double eta, double eps, double cushion, int order) {
    if (cushion <= 0.0 || eps <= 0.0) return std::numeric_limits<double>::infinity();
    return -std::log(p0 * (std::exp(-eta * std::pow(eps, order)) - 1.0) / cushion) / eta + 1.0;
}

/// Freeze trading once wealth Y + l(X) <= -k.
inline bool stopping_rule_exponential(double wealth, double k) { return wealth <= -k; }

inline double power_stop_level(double eps, double kappa) { return std::pow(eps, 2.5) - kappa; }

/// Liquidate once wealth Y + l(X) <= eps^{5/2} - kappa.
inline bool stopping_rule_power(double wealth, double eps, double kappa) {
    return wealth <= power_stop_level(eps, kappa);
}

/// Initial capital: coarse = v + eps^2 (c+1) with the unit band, sharp = v + eps^2 u + eps^3 (c+1)
/// with the model band, power = v + eps^2 u + c eps^{5/2}.
enum class CapitalRule { coarse, sharp, power };
enum class BandSource { check, hat };

inline std::string to_string(CapitalRule r) {
    switch (r) {
        case CapitalRule::coarse: return "coarse";
        case CapitalRule::sharp: return "sharp";
        case CapitalRule::power: return "power";
    }
    return "";
}
inline std::string to_string(BandSource b) { return b == BandSource::check ? "check" : "hat"; }

struct StrategySpec {
    CapitalRule capital = CapitalRule::coarse;
    BandSource band = BandSource::check;
    double cushion = 1.0;               ///< c_user, stands in for the unknown admissibility constant
    std::optional<double> stop_level;   ///< exponential k; auto rule when empty
    HConvention h_convention = HConvention::ode;
    double delta_min = 1e-4;
    bool frictionless_a = false;        ///< use a_hat instead of the psi-based threshold volatility
    bool zero_cost = false;             ///< ablation: band kept, cost forced to 0

    void validate(LossKind kind) const {
        require(cushion >= 0.0, ErrorKind::invalid_argument, "strategy: cushion must be >= 0");
        require(delta_min > 0.0, ErrorKind::invalid_argument, "strategy: delta_min must be > 0");
        if (kind == LossKind::exponential) {
            require(capital != CapitalRule::power, ErrorKind::invalid_argument,
                    "strategy: power capital rule needs a power model");
            require((capital == CapitalRule::coarse) == (band == BandSource::check), ErrorKind::invalid_argument,
                    "strategy: coarse pairs with the check band, sharp with the hat band");
        } else if (kind == LossKind::power) {
            require(capital == CapitalRule::power && band == BandSource::hat, ErrorKind::invalid_argument,
                    "strategy: power model uses the power capital rule and the hat band");
        } else {
            require(false, ErrorKind::invalid_argument, "strategy: hedging needs an exponential or power model");
        }
    }
};

/// Band and threshold-volatility ingredients at one (t, s, p).
struct BandState {
    double theta = 0.0;
    CorrectorSolution corr;  ///< only xi_hat and the varpi coefficients are used
    double pi_s = 0.0, pi_p = 0.0;
    double theta_s = 0.0, theta_p = 0.0;
    double xi_s = 0.0, xi_p = 0.0;
    double u_s = 0.0, u_p = 0.0;
    double hat_a = 0.0;
    bool degenerate = false;
};

struct TraceRow {
    double t, S, X, Y, P, L_plus, L_minus, band_lo, band_hi;
};

struct PathOutcome {
    double S_T = 0.0, X_T = 0.0, Y_T = 0.0, P_T = 0.0;
    double L_plus = 0.0, L_minus = 0.0;
    double wealth = 0.0;  ///< Y_T + l(X_T)
    double delta = 0.0;   ///< wealth - g(S_T)
    double psi = 0.0;     ///< Psi(delta)
    double gain = 0.0;    ///< delta - y0, i.e. delta as a function of y0 when no stop fires
    double min_offset = std::numeric_limits<double>::infinity();  ///< min over monitored steps of wealth - y0
    bool stopped = false;
    bool degenerate = false;
    bool clipped = false;
    bool band_ok = true;   ///< X inside the band after every clamp
    bool local_ok = true;  ///< transfers only when the pre-clamp X left the band
};

struct CapitalDecomposition {
    double v_part = 0.0;
    double eps2_part = 0.0;
    double eps4_part = 0.0;
    double cushion_part = 0.0;
    double y0 = 0.0;
};

/// The constructive near-optimal band strategy for one model and spec.
class HedgeStrategy {
public:
    HedgeStrategy(const FrictionlessSolution& sol, StrategySpec spec, const FdSurface* u_surface = nullptr)
        : sol_(sol), spec_(spec), surface_(u_surface) {
        spec_.validate(sol_.loss().kind);
        require(sol_.route() == PriceRoute::closed_form, ErrorKind::invalid_argument,
                "strategy: closed-form frictionless route required");
        const auto& mkt = sol_.market();
        if (sol_.loss().kind == LossKind::power) {
            // u(t, -1) tabulated once; interpolated along paths
            constexpr int kTab = 512;
            u_tab_.resize(kTab + 1);
            for (int i = 0; i <= kTab; ++i) u_tab_[i] = u_power_closed(mkt.T * i / kTab, -1.0, sol_).value;
        } else if (sol_.payoff().kind == PayoffKind::zero) {
            h0_ = corrector_exponential(0.0, 1.0, sol_, spec_.h_convention).h;
        }
        check_ = check_corrector();
    }

    const StrategySpec& spec() const { return spec_; }

    void set_cushion(double c) {
        require(c >= 0.0, ErrorKind::invalid_argument, "strategy: cushion must be >= 0");
        spec_.cushion = c;
    }
    const FrictionlessSolution& solution() const { return sol_; }

    bool uses_u() const { return spec_.capital != CapitalRule::coarse; }

    /// Second corrector used by the capital rule and the threshold volatility.
    double u(double t, double s, double p) const {
        const auto& mkt = sol_.market();
        if (t >= mkt.T) return 0.0;
        if (sol_.loss().kind == LossKind::power) return u_power_tab(t) * std::pow(-p, -1.0 / sol_.loss().beta);
        if (sol_.payoff().kind == PayoffKind::zero) return h0_ * (mkt.T - t);
        require(surface_ != nullptr, ErrorKind::invalid_argument,
                "strategy: second corrector surface required for a non-zero payoff");
        return surface_->value(t, s);
    }

    BandState band(double t, double s, double p) const {
        BandState b;
        const auto& mkt = sol_.market();
        const auto& loss = sol_.loss();
        if (loss.kind == LossKind::exponential) {
            const auto f = bs_functionals(sol_.payoff(), mkt, t, s, 3);
            const double ratio = mkt.lambda / (mkt.sigma * loss.eta);
            b.theta = s * f.ds() + ratio;
            b.pi_s = f.ds();
            b.pi_p = -1.0 / (loss.eta * p);
            b.theta_s = f.ds() + s * f.dss();
            b.hat_a = -mkt.lambda * p;
            if (spec_.band == BandSource::check) {
                b.corr = check_;
            } else {
                double d = s * s * f.dss() - ratio;
                const double d_s = 2.0 * s * f.dss() + s * s * f.dsss();
                if (!(std::abs(d) >= spec_.delta_min)) {
                    d = d < 0.0 ? -spec_.delta_min : spec_.delta_min;
                    b.degenerate = true;
                }
                const double xi = std::cbrt(1.5 / loss.eta) * std::pow(std::abs(d), 2.0 / 3.0);
                b.corr = detail::corrector_from_xi_hat(xi, 0.0, loss.eta, d, mkt.sigma);
                if (!b.degenerate) b.xi_s = 2.0 / 3.0 * xi * d_s / d;
            }
            if (uses_u() && surface_ != nullptr && t < mkt.T) b.u_s = surface_->ds(t, s);
        } else {
            const auto z = sol_.at(t, s, p);
            b.theta = z.theta;
            b.pi_p = z.pi_p;
            b.theta_p = z.theta_p;
            b.hat_a = z.hat_a;
            double d = z.delta;
            if (!(std::abs(d) >= spec_.delta_min)) {
                d = d < 0.0 ? -spec_.delta_min : spec_.delta_min;
                b.degenerate = true;
            }
            b.corr = solve_first_corrector(z.pi_p, z.pi_pp, d, mkt.sigma);
            b.xi_p = b.corr.xi_hat / (loss.beta * (-p));
            b.u_p = u(t, s, p) / (loss.beta * (-p));
        }
        return b;
    }

    /// Threshold volatility -sigma (s psi_s + x psi_x) / psi_p with psi = v + eps^2 u + eps^4 varpi.
    double threshold_vol(const BandState& b, double s, double x, double eps) const {
        if (spec_.frictionless_a) return b.hat_a;
        const double sig = sol_.market().sigma;
        if (eps == 0.0) return -sig * (s * b.pi_s - x) / b.pi_p;
        const double xi = (x - b.theta) / eps;
        const double w = b.corr.varpi_xi(xi);
        const double wd = b.corr.varpi_dxihat(xi);
        const double e2 = eps * eps, e3 = e2 * eps, e4 = e3 * eps;
        const double ku = uses_u() ? 1.0 : 0.0;
        const double psi_s = b.pi_s + ku * e2 * b.u_s - e3 * w * b.theta_s + e4 * wd * b.xi_s;
        const double psi_x = -1.0 + e3 * w;
        const double psi_p = b.pi_p + ku * e2 * b.u_p - e3 * w * b.theta_p + e4 * wd * b.xi_p;
        return -sig * (s * psi_s + x * psi_x) / psi_p;
    }

    /// Stop level on wealth: exponential -k, power eps^{5/2} - kappa.
    double stop_wealth(double p0, double eps) const {
        const auto& loss = sol_.loss();
        if (loss.kind == LossKind::power) return power_stop_level(eps, loss.kappa);
        if (spec_.stop_level) return -*spec_.stop_level;
        const int order = spec_.capital == CapitalRule::coarse ? 2 : 3;
        return -exponential_stop_level(p0, loss.eta, eps, spec_.cushion, order);
    }

    CapitalDecomposition prescribe_capital(double t0, double s0, double p0, double x0, double eps) const {
        require(eps > 0.0 && eps < 1.0, ErrorKind::invalid_argument, "prescribe_capital: eps must be in (0,1)");
        const auto z = sol_.at(t0, s0, p0);
        const auto b = band(t0, s0, p0);
        const double c = spec_.cushion;
        CapitalDecomposition d;
        d.v_part = z.pi - x0;
        const double xi = (x0 - b.theta) / eps;
        d.eps4_part = std::pow(eps, 4) * b.corr.varpi(xi);
        switch (spec_.capital) {
            case CapitalRule::coarse: d.cushion_part = eps * eps * (c + 1.0); break;
            case CapitalRule::sharp:
                d.eps2_part = eps * eps * u(t0, s0, p0);
                d.cushion_part = std::pow(eps, 3) * (c + 1.0);
                break;
            case CapitalRule::power:
                d.eps2_part = eps * eps * u(t0, s0, p0);
                d.cushion_part = c * std::pow(eps, 2.5);
                break;
        }
        d.y0 = d.v_part + d.eps2_part + d.eps4_part + d.cushion_part;
        return d;
    }

    /// One path of the band strategy. eps = 0 gives the frictionless discrete-time
    /// hedge (X pinned to theta, no cost) on the same draws.
    PathOutcome simulate(double t0, double s0, double p0, double x0, double y0, double eps, const TimeGrid& grid,
                         RngSpec rng, std::uint64_t path_id, bool apply_stop = true,
                         std::vector<TraceRow>* trace = nullptr) const {
        const auto& mkt = sol_.market();
        const auto& loss = sol_.loss();
        require(loss.in_image(p0), ErrorKind::out_of_domain, "simulate_hedge: p0 outside Im(Psi)");
        require(eps >= 0.0 && eps < 1.0, ErrorKind::invalid_argument, "simulate_hedge: eps must be in [0,1)");
        require(std::abs(grid.t0 - t0) < 1e-12, ErrorKind::invalid_argument, "simulate_hedge: grid must start at t0");
        const double cost = spec_.zero_cost ? 0.0 : eps * eps * eps;
        auto ell = [cost](double x) { return x - cost * std::abs(x); };
        const double stop_w = stop_wealth(p0, eps);
        const bool power = loss.kind == LossKind::power;

        PathRng gen(rng, path_id);
        const int n = grid.n_steps;
        const double dt = grid.dt(), sq = std::sqrt(dt);
        const double mean = (mkt.mu() - 0.5 * mkt.sigma * mkt.sigma) * dt, vol = mkt.sigma * sq;

        PathOutcome o;
        double S = s0, P = p0, X = x0, Lp = 0.0, Lm = 0.0;
        auto flows = [&] { return -(1.0 + cost) * Lp + (1.0 - cost) * Lm; };

        auto clamp = [&](double x_pre, double lo, double hi) {
            if (x_pre < lo) {
                Lp += lo - x_pre;
                return lo;
            }
            if (x_pre > hi) {
                Lm += x_pre - hi;
                return hi;
            }
            return x_pre;
        };

        BandState b = band(t0, S, P);
        o.degenerate |= b.degenerate;
        double lo = b.theta - eps * b.corr.xi_hat, hi = b.theta + eps * b.corr.xi_hat;
        X = clamp(X, lo, hi);
        bool stopped = false;

        auto record = [&](double t) {
            if (trace) trace->push_back({t, S, X, y0 + flows(), P, Lp, Lm, lo, hi});
        };
        auto monitor = [&] {
            const double off = flows() + ell(X);
            o.min_offset = std::min(o.min_offset, off);
            if (!apply_stop) return;
            const double w = y0 + flows() + ell(X);
            if (w <= stop_w) {
                stopped = true;
                if (power) {
                    if (X > 0.0) Lm += X;
                    else Lp += -X;
                    X = 0.0;
                }
            }
        };
        record(t0);
        monitor();

        for (int k = 0; k < n; ++k) {
            const double z = gen.normal();
            const double S1 = S * std::exp(mean + vol * z);
            if (!stopped) {
                const double a = threshold_vol(b, S, X, eps);
                P += a * sq * z;
                if (!(P < 0.0)) {
                    P = -1e-12;
                    o.clipped = true;
                }
                const double x_pre = X * (S1 / S);
                S = S1;
                if (k + 1 < n) {
                    b = band(grid.time(k + 1), S, P);
                    o.degenerate |= b.degenerate;
                    lo = b.theta - eps * b.corr.xi_hat;
                    hi = b.theta + eps * b.corr.xi_hat;
                    const double lp0 = Lp, lm0 = Lm;
                    X = clamp(x_pre, lo, hi);
                    if (X < lo || X > hi) o.band_ok = false;
                    if ((Lp > lp0 && !(x_pre < lo)) || (Lm > lm0 && !(x_pre > hi))) o.local_ok = false;
                } else {
                    X = x_pre;
                }
            } else {
                X *= S1 / S;
                S = S1;
            }
            if (k + 1 < n) {
                record(grid.time(k + 1));
                if (!stopped) monitor();
            } else if (trace) {
                lo = hi = std::numeric_limits<double>::quiet_NaN();
                record(grid.T);
            }
        }

        o.S_T = S;
        o.X_T = X;
        o.P_T = P;
        o.L_plus = Lp;
        o.L_minus = Lm;
        o.Y_T = y0 + flows();
        o.stopped = stopped;
        const double g = sol_.payoff()(S);
        o.wealth = o.Y_T + ell(X);
        o.delta = o.wealth - g;
        o.gain = flows() + ell(X) - g;
        o.psi = loss.psi(o.delta);
        return o;
    }

private:
    double u_power_tab(double t) const {
        const double T = sol_.market().T;
        const int n = static_cast<int>(u_tab_.size()) - 1;
        const double q = std::clamp(t / T * n, 0.0, static_cast<double>(n));
        const int i = std::min(static_cast<int>(q), n - 1);
        const double f = q - i;
        return (1.0 - f) * u_tab_[i] + f * u_tab_[i + 1];
    }

    const FrictionlessSolution& sol_;
    StrategySpec spec_;
    const FdSurface* surface_;
    CorrectorSolution check_;
    double h0_ = 0.0;
    std::vector<double> u_tab_;
};

/// Free-function form: one path with the spec's strategy.
inline PathOutcome simulate_hedge(const HedgeStrategy& strat, double t0, double s0, double p0, double x0, double y0,
                                  double eps, const TimeGrid& grid, RngSpec rng, std::uint64_t path_id,
                                  std::vector<TraceRow>* trace = nullptr) {
    require(eps > 0.0 && eps < 1.0, ErrorKind::invalid_argument, "simulate_hedge: eps must be in (0,1)");
    return strat.simulate(t0, s0, p0, x0, y0, eps, grid, rng, path_id, true, trace);
}

inline void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows) {
    std::ofstream f(path);
    require(static_cast<bool>(f), ErrorKind::invalid_argument, "cannot open trace file " + path);
    f << "t,S,X,Y,P,L_plus,L_minus,band_lo,band_hi\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.t, r.S, r.X, r.Y,
                      r.P, r.L_plus, r.L_minus, r.band_lo, r.band_hi);
        f << buf;
    }
}

}  // namespace eloss
