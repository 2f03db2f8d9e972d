#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "eloss/corrector.hpp"
#include "eloss/error.hpp"
#include "eloss/frictionless.hpp"
#include "eloss/hedge_sim.hpp"
#include "eloss/market.hpp"
#include "eloss/parallel.hpp"
#include "eloss/second_corrector.hpp"

namespace eloss {

/// One fully specified hedging experiment.
struct Scenario {
    std::string id = "scenario";
    MarketParams market{0.3, 0.2, 1.0};
    LossModel loss = LossModel::exponential(2.0);
    Payoff payoff = Payoff::zero();
    double t0 = 0.0, s0 = 100.0, p0 = -1.0;
    std::optional<double> x0;  ///< defaults to theta(t0, s0, p0)
    StrategySpec strategy;
    int steps_per_unit = 2000;
    std::size_t n_paths = 100000;
    RngSpec rng{};
    unsigned threads = 1;
    FDGrid fd{};
    double eps = 0.1;
    std::vector<double> eps_list{0.2, 0.14, 0.1, 0.07, 0.05};
    std::optional<double> tolerance;  ///< bisection width; default 1e-4 eps^2 max(1,|u|)
    std::vector<double> cushion_sweep{0.25, 0.5, 1.0, 2.0, 4.0, 8.0};

    void validate() const {
        market.validate();
        loss.validate();
        payoff.validate();
        strategy.validate(loss.kind);
        require(loss.in_image(p0), ErrorKind::out_of_domain, "scenario: p0 outside Im(Psi)");
        require(s0 > 0.0, ErrorKind::invalid_argument, "scenario: s0 must be > 0");
        require(t0 >= 0.0 && t0 < market.T, ErrorKind::invalid_argument, "scenario: need 0 <= t0 < T");
        require(steps_per_unit >= 1, ErrorKind::invalid_argument, "scenario: steps_per_unit must be >= 1");
        require(n_paths >= 2, ErrorKind::invalid_argument, "scenario: n_paths must be >= 2");
        require(eps > 0.0 && eps < 1.0, ErrorKind::invalid_argument, "scenario: eps must be in (0,1)");
        for (double e : eps_list)
            require(e > 0.0 && e < 1.0, ErrorKind::invalid_argument, "scenario: eps_list entries must be in (0,1)");
        require(!tolerance || *tolerance > 0.0, ErrorKind::invalid_argument, "scenario: tolerance must be > 0");
    }

    TimeGrid grid() const { return TimeGrid::with_density(t0, market.T, steps_per_unit); }
};

inline nlohmann::ordered_json to_json(const Payoff& g) {
    nlohmann::ordered_json j;
    switch (g.kind) {
        case PayoffKind::zero: j["kind"] = "zero"; break;
        case PayoffKind::put: j["kind"] = "put"; j["strike"] = g.strike; break;
        case PayoffKind::call_spread: j["kind"] = "call_spread"; j["k1"] = g.k1; j["k2"] = g.k2; break;
        case PayoffKind::digital: j["kind"] = "digital"; j["strike"] = g.strike; break;
        case PayoffKind::custom: {
            j["kind"] = "custom";
            auto t = nlohmann::ordered_json::array();
            for (const auto& [s, v] : g.table) t.push_back({s, v});
            j["table"] = t;
            j["quadrature_nodes"] = g.quadrature_nodes;
            break;
        }
    }
    return j;
}

/// Fully resolved scenario echo for report provenance.
inline nlohmann::ordered_json to_json(const Scenario& sc) {
    nlohmann::ordered_json j;
    j["id"] = sc.id;
    j["market"] = {{"lambda", sc.market.lambda}, {"sigma", sc.market.sigma}, {"T", sc.market.T}};
    nlohmann::ordered_json m;
    m["kind"] = sc.loss.name();
    if (sc.loss.kind == LossKind::exponential) m["eta"] = sc.loss.eta;
    if (sc.loss.kind == LossKind::power) {
        m["beta"] = sc.loss.beta;
        m["kappa"] = sc.loss.kappa;
    }
    j["model"] = m;
    j["payoff"] = to_json(sc.payoff);
    nlohmann::ordered_json pt;
    pt["t0"] = sc.t0;
    pt["s0"] = sc.s0;
    pt["p0"] = sc.p0;
    pt["x0"] = sc.x0 ? nlohmann::ordered_json(*sc.x0) : nlohmann::ordered_json("theta");
    j["point"] = pt;
    const auto& st = sc.strategy;
    nlohmann::ordered_json n;
    n["eps"] = sc.eps;
    n["eps_list"] = sc.eps_list;
    n["n_paths"] = sc.n_paths;
    n["steps_per_unit"] = sc.steps_per_unit;
    n["seed"] = sc.rng.seed;
    n["capital_rule"] = to_string(st.capital);
    n["band"] = to_string(st.band);
    n["cushion"] = st.cushion;
    n["stop_level"] = st.stop_level ? nlohmann::ordered_json(*st.stop_level) : nlohmann::ordered_json("auto");
    n["h_constant_convention"] = to_string(st.h_convention);
    n["delta_min"] = st.delta_min;
    n["frictionless_a"] = st.frictionless_a;
    n["zero_cost"] = st.zero_cost;
    n["tolerance"] = sc.tolerance ? nlohmann::ordered_json(*sc.tolerance) : nlohmann::ordered_json("auto");
    n["cushion_sweep"] = sc.cushion_sweep;
    n["fd_n_s"] = sc.fd.n_s;
    n["fd_n_t"] = sc.fd.n_t;
    n["fd_width_sd"] = sc.fd.width_sd;
    j["numeric"] = n;
    return j;
}

/// Per-path results that do not depend on the initial cash y0 (no stop applied).
struct PathBatch {
    double eps = 0.0;
    RngSpec rng{};
    TimeGrid grid;
    double stop_w = -std::numeric_limits<double>::infinity();
    std::vector<double> gain, min_offset, P_T, turnover;
    std::vector<double> liquidation;  ///< terminal cost eps^3 |X_T|
    std::size_t n_degenerate = 0, n_clipped = 0;

    std::size_t size() const { return gain.size(); }
    double degenerate_fraction() const { return size() ? static_cast<double>(n_degenerate) / size() : 0.0; }
    bool valid() const { return n_degenerate * 1000 <= size(); }
};

/// Frictionless solution, optional second-corrector surface and band strategy for one scenario.
class ScenarioEngine {
public:
    explicit ScenarioEngine(Scenario sc) : sc_(std::move(sc)) {
        sc_.validate();
        sol_ = std::make_unique<FrictionlessSolution>(sc_.market, sc_.loss, sc_.payoff);
        const bool needs_surface = sc_.loss.kind == LossKind::exponential && sc_.payoff.kind != PayoffKind::zero &&
                                   sc_.strategy.capital != CapitalRule::coarse;
        if (needs_surface) surface_ = std::make_unique<FdSurface>(u_fd_surface(sc_.t0, sc_.s0, *sol_,
                                                                                sc_.strategy.h_convention, sc_.fd));
        rebuild();
    }
    ScenarioEngine(const ScenarioEngine&) = delete;
    ScenarioEngine& operator=(const ScenarioEngine&) = delete;

    const Scenario& scenario() const { return sc_; }
    const FrictionlessSolution& solution() const { return *sol_; }
    const HedgeStrategy& strategy() const { return *strat_; }

    double x0() const { return sc_.x0 ? *sc_.x0 : sol_->at(sc_.t0, sc_.s0, sc_.p0).theta; }
    double v() const { return sol_->v(sc_.t0, sc_.s0, sc_.p0, x0()); }

    /// Second corrector at the scenario point (the one the expansion predicts).
    double u() const {
        if (sc_.loss.kind == LossKind::power) return u_power_closed(sc_.t0, sc_.p0, *sol_).value;
        if (sc_.payoff.kind == PayoffKind::zero)
            return corrector_exponential(sc_.t0, sc_.s0, *sol_, sc_.strategy.h_convention).h * (sc_.market.T - sc_.t0);
        if (surface_) return surface_->value(sc_.t0, sc_.s0);
        return u_fd_exponential(sc_.t0, sc_.s0, *sol_, sc_.strategy.h_convention, sc_.fd).value;
    }

    void set_cushion(double c) {
        strat_->set_cushion(c);
        sc_.strategy.cushion = c;
    }

    /// Simulate all paths once with y0 = 0 and no stop. eps = 0 is the frictionless
    /// discrete-time hedge on the same draws.
    PathBatch run(double eps, RngSpec rng, std::optional<TimeGrid> grid = std::nullopt) const {
        PathBatch b;
        b.eps = eps;
        b.rng = rng;
        b.grid = grid ? *grid : sc_.grid();
        b.stop_w = strat_->stop_wealth(sc_.p0, eps);
        const std::size_t n = sc_.n_paths;
        b.gain.resize(n);
        b.min_offset.resize(n);
        b.P_T.resize(n);
        b.turnover.resize(n);
        b.liquidation.resize(n);
        const double cost = sc_.strategy.zero_cost ? 0.0 : eps * eps * eps;
        std::vector<unsigned char> deg(n), clip(n);
        const double x = x0();
        parallel_for(n, sc_.threads, [&](std::size_t i) {
            const auto o = strat_->simulate(sc_.t0, sc_.s0, sc_.p0, x, 0.0, eps, b.grid, rng, i, false);
            b.gain[i] = o.gain;
            b.min_offset[i] = o.min_offset;
            b.P_T[i] = o.P_T;
            b.turnover[i] = o.L_plus + o.L_minus;
            b.liquidation[i] = cost * std::abs(o.X_T);
            deg[i] = o.degenerate;
            clip[i] = o.clipped;
        });
        for (std::size_t i = 0; i < n; ++i) {
            b.n_degenerate += deg[i];
            b.n_clipped += clip[i];
        }
        return b;
    }

    /// Hedging shortfall of every path for initial cash y0; paths that may hit the
    /// stop are re-simulated with it.
    std::vector<double> shortfalls(const PathBatch& b, double y0) const {
        std::vector<double> d(b.size());
        const double x = x0();
        parallel_for(b.size(), sc_.threads, [&](std::size_t i) {
            if (y0 + b.min_offset[i] <= b.stop_w + 1e-9)
                d[i] = strat_->simulate(sc_.t0, sc_.s0, sc_.p0, x, y0, b.eps, b.grid, b.rng, i, true).delta;
            else
                d[i] = y0 + b.gain[i];
        });
        return d;
    }

    double prescribed_capital(double eps) const { return strat_->prescribe_capital(sc_.t0, sc_.s0, sc_.p0, x0(), eps).y0; }

private:
    void rebuild() { strat_ = std::make_unique<HedgeStrategy>(*sol_, sc_.strategy, surface_.get()); }

    Scenario sc_;
    std::unique_ptr<FrictionlessSolution> sol_;
    std::unique_ptr<FdSurface> surface_;
    std::unique_ptr<HedgeStrategy> strat_;
};

struct LossEstimate {
    double mean = 0.0;
    double se = 0.0;
    double y0 = 0.0;
    std::size_t n_paths = 0;
    double degenerate_fraction = 0.0;
    bool valid = true;
};

inline LossEstimate expected_loss(const ScenarioEngine& eng, const PathBatch& b, double y0) {
    const auto d = eng.shortfalls(b, y0);
    std::vector<double> psi(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) psi[i] = eng.solution().loss().psi(d[i]);
    const auto ms = mean_se(psi);
    return {ms.mean, ms.se, y0, b.size(), b.degenerate_fraction(), b.valid()};
}

/// Monte Carlo mean and SE of Psi(Delta) for initial cash y0 at the scenario's eps.
inline LossEstimate estimate_expected_loss(const ScenarioEngine& eng, double y0, std::optional<double> eps = std::nullopt) {
    const double e = eps ? *eps : eng.scenario().eps;
    return expected_loss(eng, eng.run(e, eng.scenario().rng), y0);
}

struct PriceEstimate {
    double value = 0.0;  ///< bracket midpoint
    double lo = 0.0, hi = 0.0;
    double se = 0.0;                ///< from the influence function of the root
    std::vector<double> influence;  ///< per path, for paired differences
    int evaluations = 0;
    bool valid = true;
};

/// Smallest initial cash whose mean Psi(Delta) reaches p0, by bisection on y0 with
/// common random numbers. The mean is monotone in y0 path by path.
inline PriceEstimate empirical_price(const ScenarioEngine& eng, const PathBatch& b, double tol, double start) {
    require(tol > 0.0, ErrorKind::invalid_argument, "empirical_price: tolerance must be > 0");
    const double p0 = eng.scenario().p0;
    const auto& loss = eng.solution().loss();
    PriceEstimate out;
    auto mean_psi = [&](double y) {
        ++out.evaluations;
        const auto d = eng.shortfalls(b, y);
        std::vector<double> psi(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) psi[i] = loss.psi(d[i]);
        return pairwise_sum(psi) / static_cast<double>(psi.size());
    };
    constexpr int kMaxGrow = 200;
    double step = std::max(64.0 * tol, 1e-4 * std::max(1.0, std::abs(start)));
    double lo = start, hi = start;
    if (mean_psi(start) >= p0) {
        int k = 0;
        do {
            hi = lo;
            lo = hi - step;
            step *= 2.0;
            require(++k < kMaxGrow, ErrorKind::not_bracketed, "empirical_price: bracket not found");
        } while (mean_psi(lo) >= p0);
    } else {
        int k = 0;
        do {
            lo = hi;
            hi = lo + step;
            step *= 2.0;
            require(++k < kMaxGrow, ErrorKind::not_bracketed, "empirical_price: bracket not found");
        } while (mean_psi(hi) < p0);
    }
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (mean_psi(mid) >= p0) hi = mid;
        else lo = mid;
    }
    out.lo = lo;
    out.hi = hi;
    out.value = 0.5 * (lo + hi);

    const auto d = eng.shortfalls(b, out.value);
    const std::size_t n = d.size();
    std::vector<double> psi(n), dpsi(n);
    for (std::size_t i = 0; i < n; ++i) {
        psi[i] = loss.psi(d[i]);
        dpsi[i] = loss.dpsi(d[i]);
    }
    const double m = pairwise_sum(psi) / n, slope = pairwise_sum(dpsi) / n;
    out.influence.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.influence[i] = -(psi[i] - m) / slope;
    out.se = mean_se(out.influence).se;
    out.valid = b.valid() && std::isfinite(out.se);
    return out;
}

/// Default bisection width: 1e-4 eps^2 max(1, |u|).
inline double default_tolerance(const ScenarioEngine& eng, double eps) {
    if (eng.scenario().tolerance) return *eng.scenario().tolerance;
    return 1e-4 * eps * eps * std::max(1.0, std::abs(eng.u()));
}

/// SE of a paired difference of two roots on the same paths.
inline double paired_se(const PriceEstimate& a, const PriceEstimate& b) {
    std::vector<double> d(a.influence.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.influence[i] - b.influence[i];
    return mean_se(d).se;
}

struct ReportRow {
    double eps = 0.0;
    std::string quantity;
    double estimate = 0.0;
    double se = 0.0;
    double reference = std::numeric_limits<double>::quiet_NaN();
    bool pass = true;
};

struct ExperimentReport {
    std::string scenario_id;
    std::string experiment;
    std::uint64_t seed = 0;
    nlohmann::ordered_json config;
    std::vector<ReportRow> rows;
    nlohmann::ordered_json derived = nlohmann::ordered_json::object();
    std::vector<std::pair<std::string, bool>> flags;
    bool valid = true;

    bool passed() const {
        if (!valid) return false;
        return std::all_of(flags.begin(), flags.end(), [](const auto& f) { return f.second; });
    }

    void flag(const std::string& name, bool ok) { flags.emplace_back(name, ok); }

    /// Stable sort by eps, descending.
    void sort_rows() {
        std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) { return a.eps > b.eps; });
    }
};

namespace detail {
inline nlohmann::ordered_json num(double x) {
    if (std::isfinite(x)) return x;
    return nullptr;
}

inline std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}
}  // namespace detail

inline nlohmann::ordered_json to_json(const ExperimentReport& r) {
    nlohmann::ordered_json j;
    j["scenario_id"] = r.scenario_id;
    j["experiment"] = r.experiment;
    j["seed"] = r.seed;
    j["config"] = r.config;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& x : r.rows) {
        rows.push_back({{"eps", x.eps},
                        {"quantity", x.quantity},
                        {"estimate", detail::num(x.estimate)},
                        {"se", detail::num(x.se)},
                        {"reference", detail::num(x.reference)},
                        {"pass", x.pass}});
    }
    j["rows"] = rows;
    j["derived"] = r.derived;
    nlohmann::ordered_json flags = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.flags) flags[k] = v;
    j["flags"] = flags;
    j["valid"] = r.valid;
    j["pass"] = r.passed();
    return j;
}

inline std::string report_stem(const ExperimentReport& r) {
    return r.scenario_id + "_" + r.experiment + "_" + std::to_string(r.seed);
}

/// Writes <id>_<experiment>_<seed>.json and .csv into dir; returns the JSON path.
inline std::string write_report(const ExperimentReport& r, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const auto stem = (std::filesystem::path(dir) / report_stem(r)).string();
    {
        std::ofstream f(stem + ".json");
        require(static_cast<bool>(f), ErrorKind::invalid_argument, "cannot write report " + stem + ".json");
        f << to_json(r).dump(2) << "\n";
    }
    std::ofstream f(stem + ".csv");
    require(static_cast<bool>(f), ErrorKind::invalid_argument, "cannot write report " + stem + ".csv");
    f << "scenario_id,eps,quantity,estimate,se,reference,pass\n";
    for (const auto& x : r.rows) {
        f << r.scenario_id << ',' << detail::fmt(x.eps) << ',' << x.quantity << ',' << detail::fmt(x.estimate) << ','
          << detail::fmt(x.se) << ',' << detail::fmt(x.reference) << ',' << (x.pass ? "true" : "false") << '\n';
    }
    return stem + ".json";
}

inline ExperimentReport new_report(const ScenarioEngine& eng, const std::string& experiment) {
    ExperimentReport r;
    r.scenario_id = eng.scenario().id;
    r.experiment = experiment;
    r.seed = eng.scenario().rng.seed;
    r.config = to_json(eng.scenario());
    return r;
}

namespace detail {
/// dev_{i+1} <= dev_i + 3 sqrt(se_i^2 + se_{i+1}^2) along eps descending.
inline bool non_increasing(const std::vector<double>& dev, const std::vector<double>& se) {
    for (std::size_t i = 0; i + 1 < dev.size(); ++i)
        if (dev[i + 1] > dev[i] + 3.0 * std::hypot(se[i], se[i + 1])) return false;
    return true;
}

/// Weighted least squares y = a + b x with weights 1/se^2; returns (a, se_a, b).
/// Treats the points as independent, which understates se_a for common-path estimates.
inline std::array<double, 3> linear_fit(const std::vector<double>& x, const std::vector<double>& y,
                                        const std::vector<double>& se) {
    double sw = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double w = 1.0 / (se[i] * se[i]);
        sw += w;
        sx += w * x[i];
        sy += w * y[i];
        sxx += w * x[i] * x[i];
        sxy += w * x[i] * y[i];
    }
    const double det = sw * sxx - sx * sx;
    return {(sxx * sy - sx * sxy) / det, std::sqrt(sxx / det), (sw * sxy - sx * sy) / det};
}

inline std::vector<double> sorted_desc(std::vector<double> v) {
    std::sort(v.begin(), v.end(), std::greater<>());
    return v;
}
}  // namespace detail

/// Attainment at the scenario's eps and y0 = prescribed capital.
inline ExperimentReport attainment(const ScenarioEngine& eng) {
    auto r = new_report(eng, "simulate");
    const auto& sc = eng.scenario();
    const auto b = eng.run(sc.eps, sc.rng);
    const double y0 = eng.prescribed_capital(sc.eps);
    const auto est = expected_loss(eng, b, y0);
    const bool ok = est.mean >= sc.p0 - 3.0 * est.se;
    r.rows.push_back({sc.eps, "y0", y0, 0.0, eng.v(), true});
    r.rows.push_back({sc.eps, "expected_loss", est.mean, est.se, sc.p0, ok});
    const auto pt = mean_se(b.P_T);
    const bool mart = std::abs(pt.mean - sc.p0) <= 3.0 * pt.se;
    r.rows.push_back({sc.eps, "P_T", pt.mean, pt.se, sc.p0, mart});
    r.rows.push_back({sc.eps, "degenerate_fraction", b.degenerate_fraction(), 0.0, 1e-3, b.valid()});
    r.valid = b.valid();
    r.derived["n_paths"] = b.size();
    r.derived["n_clipped"] = b.n_clipped;
    r.flag("attainment", ok);
    r.flag("martingale", mart);
    return r;
}

/// (v_hat^eps - v)/eps^2 against u over eps_list. The primary premium is paired with the
/// eps = 0 discrete frictionless hedge on the same draws; the raw premium uses v.
inline ExperimentReport convergence_study(const ScenarioEngine& eng) {
    const auto& sc = eng.scenario();
    require(sc.eps_list.size() >= 3, ErrorKind::invalid_argument, "convergence_study: eps_list needs >= 3 values");
    auto r = new_report(eng, "converge");
    const double v = eng.v(), u = eng.u();
    const auto eps_list = detail::sorted_desc(sc.eps_list);

    const auto base_batch = eng.run(0.0, sc.rng);
    const double base_tol = default_tolerance(eng, eps_list.back());
    const auto base = empirical_price(eng, base_batch, base_tol, v);
    r.rows.push_back({0.0, "v_hat", base.value, base.se, v, true});
    bool valid = base.valid;

    std::vector<double> dev, dev_se, prems, prem_ses;
    for (double e : eps_list) {
        const auto b = eng.run(e, sc.rng);
        const auto p = empirical_price(eng, b, default_tolerance(eng, e), eng.prescribed_capital(e));
        valid = valid && p.valid;
        const double e2 = e * e;
        const double prem = (p.value - base.value) / e2, prem_se = paired_se(p, base) / e2;
        const double raw = (p.value - v) / e2, raw_se = p.se / e2;
        dev.push_back(std::abs(prem - u));
        dev_se.push_back(prem_se);
        prems.push_back(prem);
        prem_ses.push_back(prem_se);
        const auto liq = mean_se(b.liquidation);
        const bool upper = p.value >= v - (default_tolerance(eng, e) + 3.0 * p.se);
        r.rows.push_back({e, "v_hat", p.value, p.se, v, upper});
        r.rows.push_back({e, "premium", prem, prem_se, u, true});
        r.rows.push_back({e, "premium_raw", raw, raw_se, u, true});
        r.rows.push_back({e, "deviation", dev.back(), prem_se, 0.25 * u, true});
        r.rows.push_back({e, "mean_turnover", mean_se(b.turnover).mean, mean_se(b.turnover).se,
                          std::numeric_limits<double>::quiet_NaN(), true});
        // diagnostic: terminal liquidation cost in premium units, O(eps)
        r.rows.push_back({e, "liquidation_scaled", liq.mean / e2, liq.se / e2, std::numeric_limits<double>::quiet_NaN(),
                          true});
    }
    const bool trend = detail::non_increasing(dev, dev_se);
    const bool final_ok = dev.back() <= 0.25 * std::abs(u);
    for (auto& row : r.rows)
        if (row.quantity == "deviation" && row.eps == eps_list.back()) row.pass = final_ok;
    r.sort_rows();
    r.derived["v"] = v;
    r.derived["u"] = u;
    r.derived["u_method"] = sc.loss.kind == LossKind::power ? "power_closed" : "fd_pde";
    r.derived["final_deviation_over_u"] = detail::num(dev.back() / std::abs(u));
    // diagnostic: premium = a + b eps across the grid; a is the eps -> 0 limit if the excess is O(eps)
    const auto fit = detail::linear_fit(eps_list, prems, prem_ses);
    r.derived["linear_fit_intercept"] = detail::num(fit[0]);
    r.derived["linear_fit_intercept_se"] = detail::num(fit[1]);
    r.derived["linear_fit_slope"] = detail::num(fit[2]);
    r.valid = valid;
    r.flag("deviation_non_increasing", trend);
    r.flag("final_deviation_within_25pct", final_ok);
    return r;
}

/// Reference for (q_hat - pi_bar)/eps^2: E^Q int Delta h = u_g - u_0 under one h convention.
inline double indifference_reference(const ScenarioEngine& with_g, HConvention conv) {
    const auto& sc = with_g.scenario();
    const double ug = u_fd_exponential(sc.t0, sc.s0, with_g.solution(), conv, sc.fd).value;
    const FrictionlessSolution zero(sc.market, sc.loss, Payoff::zero());
    const double h0 = corrector_exponential(sc.t0, sc.s0, zero, conv).h;
    return ug - h0 * (sc.market.T - sc.t0);
}

/// q_hat^eps = v_hat^eps(g) - v_hat^eps(0) with the same endowment x0 and draws.
inline ExperimentReport indifference_asymptotics(const ScenarioEngine& with_g, const ScenarioEngine& without_g) {
    const auto& sc = with_g.scenario();
    require(sc.loss.kind == LossKind::exponential && without_g.scenario().loss.kind == LossKind::exponential,
            ErrorKind::invalid_argument, "indifference: exponential model required");
    require(without_g.scenario().payoff.kind == PayoffKind::zero, ErrorKind::invalid_argument,
            "indifference: second scenario must carry g == 0");
    require(std::abs(with_g.x0() - without_g.x0()) == 0.0, ErrorKind::invalid_argument,
            "indifference: both legs need the same endowment x0");
    require(sc.rng.seed == without_g.scenario().rng.seed && sc.n_paths == without_g.scenario().n_paths,
            ErrorKind::invalid_argument, "indifference: legs must share seeds and path counts");
    auto r = new_report(with_g, "indiff");
    const double pibar = bs_functionals(sc.payoff, sc.market, sc.t0, sc.s0, 0).value();
    const double ref_ode = indifference_reference(with_g, HConvention::ode);
    const double ref_halved = indifference_reference(with_g, HConvention::halved);
    const double ref = sc.strategy.h_convention == HConvention::ode ? ref_ode : ref_halved;
    const auto eps_list = detail::sorted_desc(sc.eps_list);

    auto price = [](const ScenarioEngine& eng, double e) {
        const auto b = eng.run(e, eng.scenario().rng);
        const double start = e > 0.0 ? eng.prescribed_capital(e) : eng.v();
        return empirical_price(eng, b, default_tolerance(eng, e > 0.0 ? e : 0.05), start);
    };
    const auto g0 = price(with_g, 0.0), z0 = price(without_g, 0.0);
    bool valid = g0.valid && z0.valid;
    r.rows.push_back({0.0, "q_hat", g0.value - z0.value, paired_se(g0, z0), pibar, true});

    std::vector<double> dev, dev_se;
    for (double e : eps_list) {
        const auto ge = price(with_g, e), ze = price(without_g, e);
        valid = valid && ge.valid && ze.valid;
        const double e2 = e * e;
        const double q = ge.value - ze.value;
        std::vector<double> d(ge.influence.size());
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] = (ge.influence[i] - g0.influence[i]) - (ze.influence[i] - z0.influence[i]);
        const double paired = ((ge.value - g0.value) - (ze.value - z0.value)) / e2;
        const double paired_se_v = mean_se(d).se / e2;
        const double raw = (q - pibar) / e2, raw_se = paired_se(ge, ze) / e2;
        dev.push_back(std::abs(paired - ref));
        dev_se.push_back(paired_se_v);
        r.rows.push_back({e, "q_hat", q, paired_se(ge, ze), pibar, true});
        r.rows.push_back({e, "scaled_premium", paired, paired_se_v, ref, true});
        r.rows.push_back({e, "scaled_premium_raw", raw, raw_se, ref, true});
        r.rows.push_back({e, "deviation", dev.back(), paired_se_v, std::numeric_limits<double>::quiet_NaN(), true});
        r.rows.push_back({e, "deviation_ode", std::abs(paired - ref_ode), paired_se_v, ref_ode, true});
        r.rows.push_back({e, "deviation_halved", std::abs(paired - ref_halved), paired_se_v, ref_halved, true});
    }
    const bool trend = detail::non_increasing(dev, dev_se);
    r.sort_rows();
    r.derived["pi_bar"] = pibar;
    r.derived["reference_ode"] = ref_ode;
    r.derived["reference_halved"] = ref_halved;
    r.derived["active_convention"] = to_string(sc.strategy.h_convention);
    r.derived["x0"] = with_g.x0();
    r.valid = valid;
    r.flag("deviation_non_increasing", trend);
    return r;
}

struct CalibrationResult {
    std::optional<double> cushion;
    LossEstimate in_sample;
    LossEstimate out_of_sample;
    bool out_of_sample_ok = false;
};

/// Smallest cushion in the sweep with mean - 3 SE >= p0 at the prescribed capital,
/// re-validated on the next seed at mean >= p0 - 3 SE. Leaves the engine on the pick
/// (or on the last sweep value when none passes).
inline CalibrationResult calibrate_cushion(ScenarioEngine& eng, double eps, ExperimentReport* report = nullptr) {
    const auto& sc = eng.scenario();
    CalibrationResult out;
    // the unstopped paths do not depend on the cushion; the stop level and y0 do
    const auto b = eng.run(eps, sc.rng);
    const auto sweep = [&] {
        auto v = sc.cushion_sweep;
        std::sort(v.begin(), v.end());
        return v;
    }();
    require(!sweep.empty(), ErrorKind::invalid_argument, "calibrate_cushion: empty sweep");
    for (double c : sweep) {
        eng.set_cushion(c);
        PathBatch bc = b;
        bc.stop_w = eng.strategy().stop_wealth(sc.p0, eps);
        const auto est = expected_loss(eng, bc, eng.prescribed_capital(eps));
        const bool ok = est.valid && est.mean - 3.0 * est.se >= sc.p0;
        if (report) report->rows.push_back({eps, "expected_loss_c=" + detail::fmt(c), est.mean, est.se, sc.p0, ok});
        if (ok) {
            out.cushion = c;
            out.in_sample = est;
            break;
        }
    }
    if (!out.cushion) return out;
    RngSpec fresh = sc.rng;
    fresh.seed += 1;
    const auto bo = eng.run(eps, fresh);
    out.out_of_sample = expected_loss(eng, bo, eng.prescribed_capital(eps));
    out.out_of_sample_ok = out.out_of_sample.valid && out.out_of_sample.mean >= sc.p0 - 3.0 * out.out_of_sample.se;
    if (report) {
        report->rows.push_back({eps, "cushion", *out.cushion, 0.0, std::numeric_limits<double>::quiet_NaN(), true});
        report->rows.push_back({eps, "expected_loss_fresh_seed", out.out_of_sample.mean, out.out_of_sample.se, sc.p0,
                                out.out_of_sample_ok});
    }
    return out;
}

/// Cushion calibration over eps_list: existence, out-of-sample, monotone in eps.
inline ExperimentReport calibration_study(ScenarioEngine& eng) {
    auto r = new_report(eng, "calibrate");
    const auto eps_list = detail::sorted_desc(eng.scenario().eps_list);
    const double c_user = eng.scenario().strategy.cushion;
    bool all_found = true, all_fresh = true, monotone = true, valid = true;
    std::optional<double> prev;
    auto picks = nlohmann::ordered_json::array();
    for (double e : eps_list) {
        const auto c = calibrate_cushion(eng, e, &r);
        all_found = all_found && c.cushion.has_value();
        all_fresh = all_fresh && c.out_of_sample_ok;
        valid = valid && (!c.cushion || (c.in_sample.valid && c.out_of_sample.valid));
        if (c.cushion) {
            // eps descending: a smaller eps must not need a larger cushion
            if (prev && *c.cushion > *prev) monotone = false;
            prev = c.cushion;
        }
        picks.push_back({{"eps", e}, {"cushion", c.cushion ? nlohmann::ordered_json(*c.cushion) : nullptr}});
    }
    eng.set_cushion(c_user);
    r.sort_rows();
    r.derived["calibrated"] = picks;
    r.valid = valid;
    r.flag("cushion_found", all_found);
    r.flag("out_of_sample", all_fresh);
    r.flag("monotone_in_eps", monotone);
    return r;
}

/// Per-path ledger reconciliation, band containment and the threshold martingale,
/// the latter also on the grid with half the step.
inline ExperimentReport ledger_check(const ScenarioEngine& eng, std::size_t n_exact = 2000) {
    const auto& sc = eng.scenario();
    auto r = new_report(eng, "ledger");
    const double e = sc.eps, y0 = eng.prescribed_capital(e), x = eng.x0();
    const double cost = sc.strategy.zero_cost ? 0.0 : e * e * e;
    const auto grid = sc.grid();
    const std::size_t n = std::min(n_exact, sc.n_paths);
    std::vector<unsigned char> ledger_ok(n), band_ok(n), local_ok(n);
    parallel_for(n, sc.threads, [&](std::size_t i) {
        const auto o = eng.strategy().simulate(sc.t0, sc.s0, sc.p0, x, y0, e, grid, sc.rng, i, true);
        ledger_ok[i] = o.Y_T == y0 + (-(1.0 + cost) * o.L_plus + (1.0 - cost) * o.L_minus);
        band_ok[i] = o.band_ok;
        local_ok[i] = o.local_ok;
    });
    auto count = [](const std::vector<unsigned char>& v) {
        return static_cast<std::size_t>(std::count(v.begin(), v.end(), 1));
    };
    const bool ledger = count(ledger_ok) == n, band = count(band_ok) == n, local = count(local_ok) == n;
    r.rows.push_back({e, "ledger_exact_paths", static_cast<double>(count(ledger_ok)), 0.0, static_cast<double>(n), ledger});
    r.rows.push_back({e, "band_contained_paths", static_cast<double>(count(band_ok)), 0.0, static_cast<double>(n), band});
    r.rows.push_back({e, "edge_only_transfer_paths", static_cast<double>(count(local_ok)), 0.0, static_cast<double>(n), local});

    const auto coarse = eng.run(e, sc.rng);
    const auto fine = eng.run(e, sc.rng, grid.refined());
    const auto pc = mean_se(coarse.P_T), pf = mean_se(fine.P_T);
    const double bc = std::abs(pc.mean - sc.p0), bf = std::abs(pf.mean - sc.p0);
    const bool mart = bc <= 3.0 * pc.se;
    const bool halving = bf <= bc + 3.0 * std::hypot(pc.se, pf.se);
    r.rows.push_back({e, "P_T_bias", pc.mean - sc.p0, pc.se, 0.0, mart});
    r.rows.push_back({e, "P_T_bias_half_step", pf.mean - sc.p0, pf.se, 0.0, halving});
    r.valid = coarse.valid() && fine.valid();
    r.derived["n_steps"] = grid.n_steps;
    r.derived["n_clipped"] = coarse.n_clipped;
    r.flag("ledger_exact", ledger);
    r.flag("band_contained", band);
    r.flag("edge_only_transfers", local);
    r.flag("martingale", mart);
    r.flag("martingale_half_step", halving);
    return r;
}

}  // namespace eloss
