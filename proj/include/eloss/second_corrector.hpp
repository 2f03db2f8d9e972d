#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "eloss/corrector.hpp"
#include "eloss/error.hpp"
#include "eloss/frictionless.hpp"
#include "eloss/market.hpp"
#include "eloss/parallel.hpp"
#include "eloss/random.hpp"

namespace eloss {

enum class UMethod { fk_mc, fd_pde, power_closed };

inline std::string to_string(UMethod m) {
    switch (m) {
        case UMethod::fk_mc: return "fk_mc";
        case UMethod::fd_pde: return "fd_pde";
        case UMethod::power_closed: return "power_closed";
    }
    return "";
}

struct SecondCorrectorEstimate {
    double value = 0.0;
    double se = 0.0;  ///< 0 for deterministic solvers
    UMethod method = UMethod::fk_mc;
    std::size_t n_paths = 0;
    std::size_t n_clipped = 0;  ///< fk_mc: paths whose threshold left Im(Psi)
};

/// Loss rate h(t, s, p).
using RateFn = std::function<double(double, double, double)>;

/// h along the model: exponential uses the (t,s) closed form under `conv`, power and
/// custom models go through the generic corrector solve.
inline RateFn model_loss_rate(const FrictionlessSolution& sol, HConvention conv = HConvention::ode) {
    const auto& loss = sol.loss();
    if (loss.kind == LossKind::exponential && sol.route() == PriceRoute::closed_form) {
        const double ratio = sol.market().lambda / (sol.market().sigma * loss.eta);
        return [&sol, conv, ratio](double t, double s, double) {
            const auto b = bs_functionals(sol.payoff(), sol.market(), t, s, 2);
            return h_exponential(s * s * b.dss() - ratio, sol.market().sigma, sol.loss().eta, conv);
        };
    }
    return [&sol](double t, double s, double p) {
        const auto z = sol.at(t, s, p);
        if (z.delta == 0.0) return 0.0;
        return solve_first_corrector(z.pi_p, z.pi_pp, z.delta, sol.market().sigma).h;
    };
}

/// u(t,s,p) = E^Q[ int_t^T h(tau, S_tau, P_tau) dtau ] with S driftless under Q and
/// dP = a_hat dW^Q - lambda a_hat dt. Trapezoid rule in time on `grid`; grading q > 1 moves
/// the nodes to T - (T-t)(1-k/n)^q, for rates that blow up at maturity (payoff kinks).
inline SecondCorrectorEstimate u_feynman_kac(double t, double s, double p, const FrictionlessSolution& sol,
                                             const RateFn& h, std::size_t n_paths, const TimeGrid& grid, RngSpec rng,
                                             unsigned threads = 1, double grading = 1.0) {
    detail::require_threshold(p);
    require(n_paths >= 2, ErrorKind::invalid_argument, "u_feynman_kac: need >= 2 paths");
    SecondCorrectorEstimate out;
    out.method = UMethod::fk_mc;
    out.n_paths = n_paths;
    const auto& mkt = sol.market();
    if (t >= mkt.T) return out;
    require(std::abs(grid.t0 - t) < 1e-12 && std::abs(grid.T - mkt.T) < 1e-12, ErrorKind::invalid_argument,
            "u_feynman_kac: grid must span [t, T]");

    // a_hat linear in -p: exact lognormal threshold
    double lin = 0.0;
    bool linear = false;
    if (sol.route() == PriceRoute::closed_form) {
        linear = true;
        lin = sol.loss().kind == LossKind::exponential ? mkt.lambda
                                                       : mkt.lambda * sol.loss().beta / (1.0 + sol.loss().beta);
    }

    require(grading >= 1.0, ErrorKind::invalid_argument, "u_feynman_kac: grading must be >= 1");
    const int n = grid.n_steps;
    std::vector<double> nodes(n + 1);
    for (int k = 0; k <= n; ++k) nodes[k] = mkt.T - (mkt.T - t) * std::pow(1.0 - static_cast<double>(k) / n, grading);
    nodes[0] = t;
    nodes[n] = mkt.T;
    const double sig = mkt.sigma, lam = mkt.lambda;
    std::vector<double> vals(n_paths);
    std::vector<unsigned char> clipped(n_paths, 0);
    parallel_for(n_paths, threads, [&](std::size_t i) {
        PathRng gen(rng, i);
        double S = s, P = p;
        double prev = h(nodes[0], S, P), acc = 0.0;
        for (int k = 0; k < n; ++k) {
            const double dt = nodes[k + 1] - nodes[k], sq = std::sqrt(dt);
            const double z = gen.normal();
            if (linear) {
                P *= std::exp((lam * lin - 0.5 * lin * lin) * dt - lin * sq * z);
            } else {
                const double a = sol.at(nodes[k], S, P).hat_a;
                P += a * (sq * z - lam * dt);
                if (!(P < 0.0)) {
                    P = -1e-12;
                    clipped[i] = 1;
                }
            }
            S *= std::exp(-0.5 * sig * sig * dt + sig * sq * z);
            const double hk = h(nodes[k + 1], S, P);
            acc += 0.5 * dt * (prev + hk);
            prev = hk;
        }
        vals[i] = acc;
    });
    for (auto c : clipped) out.n_clipped += c;
    require(out.n_clipped * 1000 <= n_paths, ErrorKind::non_convergent,
            "u_feynman_kac: threshold left Im(Psi) on more than 0.1% of paths");
    const auto ms = mean_se(vals);
    out.value = ms.mean;
    out.se = ms.se;
    return out;
}

/// Log-spot finite-difference grid for the exponential second corrector.
struct FDGrid {
    int n_s = 801;          ///< odd, centred on ln s0
    int n_t = 2000;         ///< time steps over [t, T]
    double width_sd = 6.0;  ///< half-width in units of sigma sqrt(T)
    int rannacher_steps = 2;
};

/// u on the (tau, x) grid, tau = T - t, x = ln s.
struct FdSurface {
    double T = 0.0;
    double x_min = 0.0, dx = 0.0;
    double dtau = 0.0;
    int n_s = 0, n_t = 0;
    std::vector<double> u;  ///< (n_t + 1) x n_s, row = time level from tau = 0

    double node(int level, int i) const { return u[static_cast<std::size_t>(level) * n_s + i]; }

    // linear in both directions; clamps outside the grid
    double value(double t, double s) const {
        double fl, fx;
        int l, i;
        locate(t, s, l, fl, i, fx);
        auto row = [&](int lv) { return (1.0 - fx) * node(lv, i) + fx * node(lv, i + 1); };
        return (1.0 - fl) * row(l) + fl * row(l + 1);
    }

    /// du/ds from nodal central differences in x.
    double ds(double t, double s) const {
        double fl, fx;
        int l, i;
        locate(t, s, l, fl, i, fx);
        auto slope = [&](int lv, int j) {
            j = std::clamp(j, 1, n_s - 2);
            return (node(lv, j + 1) - node(lv, j - 1)) / (2.0 * dx);
        };
        auto row = [&](int lv) { return (1.0 - fx) * slope(lv, i) + fx * slope(lv, i + 1); };
        return ((1.0 - fl) * row(l) + fl * row(l + 1)) / s;
    }

private:
    void locate(double t, double s, int& l, double& fl, int& i, double& fx) const {
        const double tau = std::clamp(T - t, 0.0, n_t * dtau);
        const double ql = tau / dtau;
        l = std::min(static_cast<int>(ql), n_t - 1);
        fl = ql - l;
        const double qx = std::clamp((std::log(s) - x_min) / dx, 0.0, static_cast<double>(n_s - 1));
        i = std::min(static_cast<int>(qx), n_s - 2);
        fx = qx - i;
    }
};

namespace detail {
// Thomas algorithm; a = sub, b = main, c = super. Overwrites d with the solution.
inline void thomas(std::vector<double> a, std::vector<double> b, const std::vector<double>& c, std::vector<double>& d) {
    const std::size_t n = b.size();
    for (std::size_t i = 1; i < n; ++i) {
        const double w = a[i] / b[i - 1];
        b[i] -= w * c[i - 1];
        d[i] -= w * d[i - 1];
    }
    d[n - 1] /= b[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) d[i] = (d[i] - c[i] * d[i + 1]) / b[i];
}
}  // namespace detail

/// Backward solve of u_t + 1/2 sigma^2 s^2 u_ss + h(t,s) = 0, u(T,.) = 0, on [t, T].
/// Implicit Euler start then Crank-Nicolson, linear extrapolation at both edges.
inline FdSurface u_fd_surface(double t, double s0, const FrictionlessSolution& sol, HConvention conv,
                              const FDGrid& g = {}) {
    require(sol.loss().kind == LossKind::exponential, ErrorKind::invalid_argument,
            "u_fd_exponential: exponential model required");
    require(g.n_s >= 3 && g.n_s % 2 == 1, ErrorKind::invalid_argument, "u_fd_exponential: n_s must be odd and >= 3");
    require(g.n_t >= 1, ErrorKind::invalid_argument, "u_fd_exponential: n_t must be >= 1");
    require(g.width_sd >= 5.0, ErrorKind::invalid_argument,
            "u_fd_exponential: grid too small, need at least 5 sigma sqrt(T) each side");
    require(s0 > 0.0 && t < sol.market().T, ErrorKind::out_of_domain, "u_fd_exponential: need s > 0 and t < T");
    const auto& mkt = sol.market();
    const double sig2 = mkt.sigma * mkt.sigma;
    const double ratio = mkt.lambda / (mkt.sigma * sol.loss().eta);

    FdSurface surf;
    surf.T = mkt.T;
    surf.n_s = g.n_s;
    surf.n_t = g.n_t;
    const double half = g.width_sd * mkt.sigma * std::sqrt(mkt.T);
    surf.x_min = std::log(s0) - half;
    surf.dx = 2.0 * half / (g.n_s - 1);
    surf.dtau = (mkt.T - t) / g.n_t;
    surf.u.assign(static_cast<std::size_t>(g.n_t + 1) * g.n_s, 0.0);

    const int N = g.n_s, m = N - 2;
    const double dx = surf.dx;
    const double a = 0.5 * sig2 / (dx * dx);
    const double l = a + 0.25 * sig2 / dx, d = -2.0 * a, r = a - 0.25 * sig2 / dx;

    // L restricted to interior unknowns with u_0 = 2u_1 - u_2, u_{N-1} = 2u_{N-2} - u_{N-3}
    std::vector<double> Ls(m, l), Ld(m, d), Lr(m, r);
    Ld[0] = 2.0 * l + d;
    Lr[0] = r - l;
    Ls[m - 1] = l - r;
    Ld[m - 1] = d + 2.0 * r;
    auto apply_L = [&](const std::vector<double>& u, int i) {
        double v = Ld[i] * u[i];
        if (i > 0) v += Ls[i] * u[i - 1];
        if (i < m - 1) v += Lr[i] * u[i + 1];
        return v;
    };

    std::vector<double> src_prev(m), src_next(m), u(m, 0.0), rhs(m), A(m), B(m), C(m);
    auto source = [&](double tau, std::vector<double>& out) {
        const double tt = mkt.T - tau;
        for (int i = 0; i < m; ++i) {
            const double s = std::exp(surf.x_min + (i + 1) * dx);
            const auto b = bs_functionals(sol.payoff(), mkt, tt, s, 2);
            out[i] = h_exponential(s * s * b.dss() - ratio, mkt.sigma, sol.loss().eta, conv);
        }
    };

    bool have_prev = false;
    for (int n = 0; n < g.n_t; ++n) {
        const double dtau = surf.dtau;
        const double th = n < g.rannacher_steps ? 1.0 : 0.5;
        source((n + 1) * dtau, src_next);
        if (th < 1.0 && !have_prev) source(n * dtau, src_prev);
        for (int i = 0; i < m; ++i) {
            rhs[i] = u[i] + (1.0 - th) * dtau * apply_L(u, i) + dtau * th * src_next[i];
            if (th < 1.0) rhs[i] += dtau * (1.0 - th) * src_prev[i];
            A[i] = -th * dtau * Ls[i];
            B[i] = 1.0 - th * dtau * Ld[i];
            C[i] = -th * dtau * Lr[i];
        }
        detail::thomas(A, B, C, rhs);
        u = rhs;
        std::swap(src_prev, src_next);
        have_prev = true;
        double* row = surf.u.data() + static_cast<std::size_t>(n + 1) * N;
        for (int i = 0; i < m; ++i) row[i + 1] = u[i];
        row[0] = 2.0 * u[0] - u[1];
        row[N - 1] = 2.0 * u[m - 1] - u[m - 2];
    }
    return surf;
}

/// Exponential second corrector at (t, s) from the log-spot finite-difference solve.
inline SecondCorrectorEstimate u_fd_exponential(double t, double s, const FrictionlessSolution& sol,
                                                HConvention conv = HConvention::ode, const FDGrid& g = {}) {
    SecondCorrectorEstimate out;
    out.method = UMethod::fd_pde;
    require(sol.loss().kind == LossKind::exponential, ErrorKind::invalid_argument,
            "u_fd_exponential: exponential model required");
    if (t >= sol.market().T) return out;
    const auto surf = u_fd_surface(t, s, sol, conv, g);
    // s sits on the centre node
    out.value = surf.node(g.n_t, g.n_s / 2);
    return out;
}

/// Power second corrector: (-p)^{-1/beta} int_t^T h(tau,-1) exp(-lambda^2 (tau-t)/(2(1+beta))) dtau.
inline SecondCorrectorEstimate u_power_closed(double t, double p, const FrictionlessSolution& sol) {
    require(sol.loss().kind == LossKind::power, ErrorKind::invalid_argument, "u_power_closed: power model required");
    detail::require_threshold(p);
    SecondCorrectorEstimate out;
    out.method = UMethod::power_closed;
    const auto& mkt = sol.market();
    if (t >= mkt.T) return out;
    const double rate = mkt.lambda * mkt.lambda / (2.0 * (1.0 + sol.loss().beta));
    // delta = 0 (lambda = 0 or lambda = sigma(1+beta)): band and rate vanish
    if (sol.at(t, 1.0, -1.0).delta == 0.0) return out;
    auto f = [&](double tau) { return corrector_power(tau, -1.0, sol).h * std::exp(-rate * (tau - t)); };
    const double integral =
        boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, t, mkt.T, 15, 1e-10);
    out.value = std::pow(-p, -1.0 / sol.loss().beta) * integral;
    return out;
}

}  // namespace eloss
