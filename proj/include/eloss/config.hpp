#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "eloss/error.hpp"
#include "eloss/experiments.hpp"

namespace eloss {

/// Scenario plus the CLI-only output settings.
struct ScenarioConfig {
    Scenario scenario;
    std::string out_dir = "reports";
    std::size_t trace_paths = 0;
    bool both_conventions = false;  ///< h_constant_convention = both
};

namespace config_detail {

struct Entry {
    std::string value;
    std::string where;  ///< "file:line" or "--set"
    bool used = false;
};

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') quoted = !quoted;
        if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
}

[[noreturn]] inline void fail(const std::string& where, const std::string& field, const std::string& msg) {
    throw Error(ErrorKind::config, where + ": " + field + ": " + msg);
}

inline const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> s{
        {"market", {"lambda", "sigma", "T"}},
        {"model", {"kind", "eta", "beta", "kappa"}},
        {"payoff", {"kind", "strike", "k1", "k2", "table", "quadrature_nodes"}},
        {"point", {"t0", "s0", "p0", "x0"}},
        {"numeric",
         {"eps", "eps_list", "n_paths", "steps_per_unit", "seed", "cushion", "capital_rule", "band", "stop_level",
          "h_constant_convention", "delta_min", "frictionless_a", "zero_cost", "tolerance", "cushion_sweep", "fd_n_s",
          "fd_n_t", "fd_width_sd", "id"}},
        {"output", {"dir", "trace_paths"}},
    };
    return s;
}

/// Flat "section.key" -> value store with file/line provenance.
class Table {
public:
    void set(const std::string& key, std::string value, std::string where) {
        const auto dot = key.find('.');
        if (dot == std::string::npos) fail(where, key, "expected section.key");
        const auto sec = key.substr(0, dot), name = key.substr(dot + 1);
        const auto it = schema().find(sec);
        if (it == schema().end()) fail(where, key, "unknown section [" + sec + "]");
        if (!it->second.count(name)) fail(where, key, "unknown key");
        entries_[key] = {std::move(value), std::move(where), false};
    }

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    const Entry& entry(const std::string& key) {
        auto& e = entries_.at(key);
        e.used = true;
        return e;
    }

    std::string where(const std::string& key) const {
        const auto it = entries_.find(key);
        return it == entries_.end() ? source : it->second.where;
    }

    std::string source = "config";

private:
    std::map<std::string, Entry> entries_;
};

inline double to_number(const std::string& s, const std::string& where, const std::string& key) {
    double x = 0.0;
    const auto* end = s.data() + s.size();
    const auto r = std::from_chars(s.data(), end, x);
    if (r.ec != std::errc() || r.ptr != end) fail(where, key, "expected a number, got '" + s + "'");
    return x;
}

inline std::string unquote(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
    return s;
}

/// Splits "[a, [b, c], d]" at top-level commas.
inline std::vector<std::string> split_list(const std::string& s, const std::string& where, const std::string& key) {
    const auto t = trim(s);
    if (t.size() < 2 || t.front() != '[' || t.back() != ']') fail(where, key, "expected a list [..]");
    std::vector<std::string> out;
    int depth = 0;
    std::string cur;
    for (std::size_t i = 1; i + 1 < t.size(); ++i) {
        const char c = t[i];
        if (c == '[') ++depth;
        if (c == ']') --depth;
        if (c == ',' && depth == 0) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

class Reader {
public:
    explicit Reader(Table& t) : t_(t) {}

    std::optional<double> number(const std::string& key) {
        if (!t_.has(key)) return std::nullopt;
        return to_number(t_.entry(key).value, t_.where(key), key);
    }
    double number(const std::string& key, double fallback) { return number(key).value_or(fallback); }
    double required(const std::string& key) {
        if (!t_.has(key)) fail(t_.source, key, "missing required field");
        return *number(key);
    }
    std::optional<std::string> text(const std::string& key) {
        if (!t_.has(key)) return std::nullopt;
        return unquote(t_.entry(key).value);
    }
    std::optional<long long> integer(const std::string& key) {
        const auto x = number(key);
        if (!x) return std::nullopt;
        if (*x != std::floor(*x) || std::abs(*x) > 9.0e15) fail(t_.where(key), key, "expected an integer");
        return static_cast<long long>(*x);
    }
    std::optional<bool> boolean(const std::string& key) {
        const auto s = text(key);
        if (!s) return std::nullopt;
        if (*s == "true") return true;
        if (*s == "false") return false;
        fail(t_.where(key), key, "expected true or false");
    }
    std::optional<std::vector<double>> numbers(const std::string& key) {
        if (!t_.has(key)) return std::nullopt;
        std::vector<double> v;
        for (const auto& s : split_list(t_.entry(key).value, t_.where(key), key))
            v.push_back(to_number(s, t_.where(key), key));
        return v;
    }
    std::optional<std::vector<std::pair<double, double>>> pairs(const std::string& key) {
        if (!t_.has(key)) return std::nullopt;
        std::vector<std::pair<double, double>> v;
        for (const auto& s : split_list(t_.entry(key).value, t_.where(key), key)) {
            const auto xy = split_list(s, t_.where(key), key);
            if (xy.size() != 2) fail(t_.where(key), key, "expected [s, g] pairs");
            v.emplace_back(to_number(xy[0], t_.where(key), key), to_number(xy[1], t_.where(key), key));
        }
        return v;
    }

    /// Runs a module validator and attributes its message to a config field.
    template <class F>
    void check(const std::string& key, F&& f) {
        try {
            f();
        } catch (const Error& e) {
            fail(t_.where(key), key, e.what());
        }
    }

    std::string where(const std::string& key) const { return t_.where(key); }

private:
    Table& t_;
};

}  // namespace config_detail

/// Parses "[section]" / "key = value" text; '#' starts a comment.
inline config_detail::Table parse_config_text(const std::string& text, const std::string& source) {
    using namespace config_detail;
    Table t;
    t.source = source;
    std::istringstream in(text);
    std::string line, section;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto where = source + ":" + std::to_string(n);
        const auto s = trim(strip_comment(line));
        if (s.empty()) continue;
        if (s.front() == '[' && s.back() == ']' && s.find('=') == std::string::npos) {
            section = trim(s.substr(1, s.size() - 2));
            if (!schema().count(section)) fail(where, "[" + section + "]", "unknown section");
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) fail(where, s, "expected key = value");
        if (section.empty()) fail(where, trim(s.substr(0, eq)), "key outside a section");
        const auto key = section + "." + trim(s.substr(0, eq));
        const auto value = trim(s.substr(eq + 1));
        if (value.empty()) fail(where, key, "empty value");
        t.set(key, value, where);
    }
    return t;
}

inline config_detail::Table load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::config, path + ": cannot open config file");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), path);
}

/// Applies one "section.key=value" override.
inline void apply_override(config_detail::Table& t, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) config_detail::fail("--set", kv, "expected section.key=value");
    t.set(config_detail::trim(kv.substr(0, eq)), config_detail::trim(kv.substr(eq + 1)), "--set " + kv);
}

/// Builds and validates the scenario; every error names the offending field.
/// allow_terminal admits t0 = T (pricing only, nothing is simulated).
inline ScenarioConfig resolve_config(config_detail::Table& t, bool allow_terminal = false) {
    using config_detail::fail;
    config_detail::Reader r(t);
    ScenarioConfig out;
    auto& sc = out.scenario;

    sc.market = {r.required("market.lambda"), r.required("market.sigma"), r.required("market.T")};
    r.check("market.sigma", [&] { sc.market.validate(); });

    const auto kind = r.text("model.kind");
    if (!kind) fail(t.source, "model.kind", "missing required field");
    if (*kind == "exponential") {
        const double eta = r.required("model.eta");
        r.check("model.eta", [&] { sc.loss = LossModel::exponential(eta); });
    } else if (*kind == "power") {
        const double beta = r.required("model.beta"), kappa = r.required("model.kappa");
        r.check("model.beta", [&] { sc.loss = LossModel::power(beta, kappa); });
    } else {
        fail(r.where("model.kind"), "model.kind", "expected exponential or power, got '" + *kind + "'");
    }

    const auto pk = r.text("payoff.kind").value_or("zero");
    auto& g = sc.payoff;
    if (pk == "zero") {
        g = Payoff::zero();
    } else if (pk == "put") {
        g.kind = PayoffKind::put;
        g.strike = r.required("payoff.strike");
    } else if (pk == "digital") {
        g.kind = PayoffKind::digital;
        g.strike = r.required("payoff.strike");
    } else if (pk == "call_spread") {
        g.kind = PayoffKind::call_spread;
        g.k1 = r.required("payoff.k1");
        g.k2 = r.required("payoff.k2");
    } else if (pk == "custom") {
        g.kind = PayoffKind::custom;
        const auto tab = r.pairs("payoff.table");
        if (!tab) fail(t.source, "payoff.table", "missing required field");
        g.table = *tab;
        if (const auto q = r.integer("payoff.quadrature_nodes")) g.quadrature_nodes = static_cast<int>(*q);
    } else {
        fail(r.where("payoff.kind"), "payoff.kind", "unknown payoff '" + pk + "'");
    }
    r.check("payoff.kind", [&] { g.validate(); });

    sc.t0 = r.number("point.t0", 0.0);
    sc.s0 = r.number("point.s0", 100.0);
    sc.p0 = r.number("point.p0", -1.0);
    if (const auto x = r.text("point.x0"); x && *x != "theta") sc.x0 = config_detail::to_number(*x, r.where("point.x0"), "point.x0");

    auto& st = sc.strategy;
    const bool power = sc.loss.kind == LossKind::power;
    const auto rule = r.text("numeric.capital_rule").value_or(power ? "power" : "coarse");
    if (rule == "coarse") st.capital = CapitalRule::coarse;
    else if (rule == "sharp") st.capital = CapitalRule::sharp;
    else if (rule == "power") st.capital = CapitalRule::power;
    else fail(r.where("numeric.capital_rule"), "numeric.capital_rule", "expected coarse, sharp or power");
    const auto band = r.text("numeric.band").value_or(st.capital == CapitalRule::coarse ? "check" : "hat");
    if (band == "check") st.band = BandSource::check;
    else if (band == "hat") st.band = BandSource::hat;
    else fail(r.where("numeric.band"), "numeric.band", "expected check or hat");
    st.cushion = r.number("numeric.cushion", power ? 3.0 : 1.0);
    st.stop_level = r.number("numeric.stop_level");
    const auto conv = r.text("numeric.h_constant_convention").value_or("ode");
    if (conv == "ode" || conv == "both") st.h_convention = HConvention::ode;
    else if (conv == "halved") st.h_convention = HConvention::halved;
    else fail(r.where("numeric.h_constant_convention"), "numeric.h_constant_convention", "expected ode, halved or both");
    out.both_conventions = conv == "both";
    st.delta_min = r.number("numeric.delta_min", st.delta_min);
    st.frictionless_a = r.boolean("numeric.frictionless_a").value_or(false);
    st.zero_cost = r.boolean("numeric.zero_cost").value_or(false);

    sc.id = r.text("numeric.id").value_or(sc.loss.name() + "_" + pk);
    sc.eps = r.number("numeric.eps", sc.eps);
    if (auto l = r.numbers("numeric.eps_list")) sc.eps_list = *l;
    if (const auto n = r.integer("numeric.n_paths")) {
        if (*n < 2) fail(r.where("numeric.n_paths"), "numeric.n_paths", "must be >= 2");
        sc.n_paths = static_cast<std::size_t>(*n);
    }
    if (const auto n = r.integer("numeric.steps_per_unit")) sc.steps_per_unit = static_cast<int>(*n);
    if (const auto n = r.integer("numeric.seed")) {
        if (*n < 0) fail(r.where("numeric.seed"), "numeric.seed", "must be >= 0");
        sc.rng.seed = static_cast<std::uint64_t>(*n);
    }
    sc.tolerance = r.number("numeric.tolerance");
    if (auto l = r.numbers("numeric.cushion_sweep")) sc.cushion_sweep = *l;
    if (const auto n = r.integer("numeric.fd_n_s")) sc.fd.n_s = static_cast<int>(*n);
    if (const auto n = r.integer("numeric.fd_n_t")) sc.fd.n_t = static_cast<int>(*n);
    sc.fd.width_sd = r.number("numeric.fd_width_sd", sc.fd.width_sd);

    out.out_dir = r.text("output.dir").value_or(out.out_dir);
    if (const auto n = r.integer("output.trace_paths")) {
        if (*n < 0) fail(r.where("output.trace_paths"), "output.trace_paths", "must be >= 0");
        out.trace_paths = static_cast<std::size_t>(*n);
    }

    r.check("scenario", [&] {
        auto copy = sc;
        if (allow_terminal && copy.t0 == copy.market.T) copy.t0 = 0.0;
        copy.validate();
    });
    return out;
}

}  // namespace eloss
