#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "eloss/config.hpp"
#include "eloss/experiments.hpp"

using namespace eloss;

namespace {

struct Options {
    std::string config;
    std::vector<std::string> set;
    unsigned threads = default_threads();
    std::string out_dir;
    long long trace_paths = -1;
};

ScenarioConfig load(const Options& o, bool allow_terminal = false) {
    auto t = load_config_file(o.config);
    for (const auto& kv : o.set) apply_override(t, kv);
    auto c = resolve_config(t, allow_terminal);
    c.scenario.threads = o.threads;
    if (!o.out_dir.empty()) c.out_dir = o.out_dir;
    if (o.trace_paths >= 0) c.trace_paths = static_cast<std::size_t>(o.trace_paths);
    return c;
}

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

int finish(const ExperimentReport& r, const std::string& dir) {
    const auto path = write_report(r, dir);
    std::cout << r.scenario_id << " " << r.experiment << ": " << (r.passed() ? "PASS" : "FAIL") << "\n";
    for (const auto& [name, ok] : r.flags) std::cout << "  " << name << " = " << (ok ? "true" : "false") << "\n";
    if (!r.valid) std::cout << "  report marked invalid\n";
    std::cout << "  written " << path << "\n";
    return r.passed() ? 0 : 1;
}

int cmd_price(const Options& o) {
    const auto c = load(o, true);
    const auto& sc = c.scenario;
    const FrictionlessSolution sol(sc.market, sc.loss, sc.payoff);
    const auto z = sol.at(sc.t0, sc.s0, sc.p0);
    const double x0 = sc.x0 ? *sc.x0 : z.theta;
    const double v = sol.v(sc.t0, sc.s0, sc.p0, x0);
    const bool power = sc.loss.kind == LossKind::power;

    std::vector<std::pair<std::string, double>> rows{
        {"pi", z.pi}, {"theta", z.theta}, {"a_hat", z.hat_a}, {"delta", z.delta}, {"v", v}};
    // the h constant only matters for the exponential closed form
    std::vector<HConvention> convs{sc.strategy.h_convention};
    const bool both = c.both_conventions && !power;
    if (both) convs = {HConvention::ode, HConvention::halved};
    for (auto conv : convs) {
        const std::string tag = both ? "_" + to_string(conv) : "";
        const auto k = power ? corrector_power(sc.t0, sc.p0, sol) : corrector_exponential(sc.t0, sc.s0, sol, conv);
        double u = 0.0;
        if (sc.t0 < sc.market.T) {
            if (power) u = u_power_closed(sc.t0, sc.p0, sol).value;
            else if (sc.payoff.kind == PayoffKind::zero) u = k.h * (sc.market.T - sc.t0);
            else u = u_fd_exponential(sc.t0, sc.s0, sol, conv, sc.fd).value;
        }
        rows.push_back({"xi_hat" + tag, k.xi_hat});
        rows.push_back({"h" + tag, k.h});
        rows.push_back({"u" + tag, u});
        rows.push_back({"v_plus_eps2_u" + tag, v + sc.eps * sc.eps * u});
    }

    std::filesystem::create_directories(c.out_dir);
    const auto path = (std::filesystem::path(c.out_dir) / (sc.id + "_price.csv")).string();
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::invalid_argument, "cannot write " + path);
    f << "scenario_id,quantity,value\n";
    std::cout << "scenario " << sc.id << " at t=" << fmt(sc.t0) << " s=" << fmt(sc.s0) << " p=" << fmt(sc.p0)
              << " eps=" << fmt(sc.eps) << "\n";
    for (const auto& [name, val] : rows) {
        f << sc.id << ',' << name << ',' << fmt(val) << '\n';
        std::printf("  %-24s %.12g\n", name.c_str(), val);
    }
    std::cout << "  written " << path << "\n";
    return 0;
}

int cmd_simulate(const Options& o) {
    const auto c = load(o);
    ScenarioEngine eng(c.scenario);
    const auto r = attainment(eng);
    if (c.trace_paths > 0) {
        const auto& sc = eng.scenario();
        const double y0 = eng.prescribed_capital(sc.eps);
        const auto grid = sc.grid();
        std::filesystem::create_directories(c.out_dir);
        for (std::size_t i = 0; i < std::min(c.trace_paths, sc.n_paths); ++i) {
            std::vector<TraceRow> tr;
            eng.strategy().simulate(sc.t0, sc.s0, sc.p0, eng.x0(), y0, sc.eps, grid, sc.rng, i, true, &tr);
            const auto name = report_stem(r) + "_trace_" + std::to_string(i) + ".csv";
            write_trace_csv((std::filesystem::path(c.out_dir) / name).string(), tr);
        }
    }
    return finish(r, c.out_dir);
}

int cmd_converge(const Options& o) {
    const auto c = load(o);
    if (c.scenario.eps_list.size() < 3)
        throw Error(ErrorKind::config, "numeric.eps_list: convergence needs at least 3 values");
    ScenarioEngine eng(c.scenario);
    return finish(convergence_study(eng), c.out_dir);
}

int cmd_indiff(const Options& o) {
    const auto c = load(o);
    const auto& sc = c.scenario;
    if (sc.loss.kind != LossKind::exponential) throw Error(ErrorKind::config, "model.kind: indifference needs exponential");
    if (sc.payoff.kind == PayoffKind::zero) throw Error(ErrorKind::config, "payoff.kind: indifference needs a payoff");
    if (sc.eps_list.size() < 3) throw Error(ErrorKind::config, "numeric.eps_list: needs at least 3 values");
    ScenarioEngine with_g(sc);
    // the zero-payoff leg holds the same endowment as the payoff leg
    Scenario zero = sc;
    zero.payoff = Payoff::zero();
    zero.x0 = with_g.x0();
    ScenarioEngine without_g(zero);
    return finish(indifference_asymptotics(with_g, without_g), c.out_dir);
}

int cmd_calibrate(const Options& o) {
    const auto c = load(o);
    ScenarioEngine eng(c.scenario);
    return finish(calibration_study(eng), c.out_dir);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Expected-loss hedging with small transaction costs"};
    app.require_subcommand(1);
    Options opt;
    struct Cmd {
        const char* name;
        const char* help;
        int (*run)(const Options&);
    };
    const std::vector<Cmd> cmds{{"price", "frictionless price, correctors and expansion at the config point", cmd_price},
                                {"simulate", "constraint attainment at the prescribed capital", cmd_simulate},
                                {"converge", "premium convergence over eps_list", cmd_converge},
                                {"indiff", "indifference-price asymptotics for the payoff", cmd_indiff},
                                {"calibrate", "cushion calibration over eps_list", cmd_calibrate}};
    std::vector<CLI::App*> subs;
    for (const auto& c : cmds) {
        auto* s = app.add_subcommand(c.name, c.help);
        s->add_option("--config", opt.config, "scenario config file")->required();
        s->add_option("--set", opt.set, "override section.key=value (repeatable)");
        s->add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);
        s->add_option("--out-dir", opt.out_dir, "report directory");
        s->add_option("--trace-paths", opt.trace_paths, "dump per-path CSV traces for the first N paths")
            ->check(CLI::NonNegativeNumber);
        subs.push_back(s);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 2;
    }

    for (std::size_t i = 0; i < cmds.size(); ++i) {
        if (!subs[i]->parsed()) continue;
        const auto start = std::chrono::steady_clock::now();
        try {
            const int rc = cmds[i].run(opt);
            const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
            std::cerr << cmds[i].name << " finished in " << fmt(dt.count()) << " s\n";
            return rc;
        } catch (const Error& e) {
            std::cerr << "error: " << e.what() << "\n";
            return e.kind() == ErrorKind::config ? 2 : 1;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        }
    }
    return 2;
}
