#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "delaypde/coefficient.hpp"
#include "delaypde/errors.hpp"
#include "delaypde/expr.hpp"
#include "delaypde/model.hpp"
#include "delaypde/sim.hpp"

namespace delaypde::config {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) parts.push_back(trim(item));
    return parts;
}

inline std::string lower(std::string s) {
    for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

} // namespace detail

/// A spatial coefficient together with the canonical source string it was
/// parsed from, so an effective configuration can be echoed losslessly.
/// Accepted forms: a constant expression, "poly:c0,c1,..." with ascending
/// powers, or "table:path" naming a two-column CSV.
struct CoeffSpec {
    std::string source = "0";
    Coefficient fn = Coefficient::constant(0.0);

    static CoeffSpec parse(const std::string& raw) {
        const std::string text = detail::trim(raw);
        CoeffSpec spec;
        if (text.rfind("poly:", 0) == 0) {
            std::vector<double> coeffs;
            std::string canon = "poly:";
            for (const auto& piece : detail::split(text.substr(5), ',')) {
                if (piece.empty()) throw ValidationError("coefficient: empty polynomial entry");
                coeffs.push_back(parse_scalar(piece));
                if (coeffs.size() > 1) canon += ',';
                canon += format_double(coeffs.back());
            }
            spec.fn = Coefficient::polynomial(coeffs);
            spec.source = canon;
            return spec;
        }
        if (text.rfind("table:", 0) == 0) {
            const std::string path = detail::trim(text.substr(6));
            if (path.empty()) throw ValidationError("coefficient: empty table path");
            spec.fn = Coefficient::table_from_csv(path);
            spec.source = "table:" + path;
            return spec;
        }
        const double v = parse_scalar(text);
        spec.fn = Coefficient::constant(v);
        spec.source = format_double(v);
        return spec;
    }
};

enum class GainMode { place, given };

/// Everything a command run needs, in one validated bag.  Scalar entries can
/// be written as arithmetic expressions ("pi/3"); unknown or duplicate keys
/// are rejected with the offending section.key named.
struct RunConfig {
    // [plant]
    CoeffSpec p = CoeffSpec::parse("1");
    CoeffSpec q = CoeffSpec::parse("0");
    double q_c = 0.0;
    double c = 0.0;
    double h = 1.0;
    double theta1 = 0.0;
    double theta2 = 0.0;
    model::Measurement measurement = model::Measurement::dirichlet;

    // [numerics]
    int grid_points = 2001;
    int n_modes = 64;
    int m_modes = 100;
    double dt = 1e-3;
    double t_final = 10.0;
    int n_max = 64;
    double epsilon = 0.125;
    double alpha1 = -1.0; ///< negative means "pick the standard value"
    double alpha2 = -1.0;
    double alpha3 = -1.0;
    double alpha4 = -1.0;
    std::vector<double> h_list;

    // [gains]
    GainMode gain_mode = GainMode::place;
    int n0 = 0;             ///< 0 selects the minimal controlled-mode count
    int observer_modes = 0; ///< 0 lets the command choose
    double rho = 0.5;
    double sigma = 0.5;
    std::vector<double> k_row;
    std::vector<double> l_col;

    // [ic]
    std::string ic_expr;
    std::string ic_table;
    sim::ObserverInit observer_init = sim::ObserverInit::zeros;
    int prehistory_samples = 513;
    std::vector<double> zhat0;

    // [output]
    std::string directory = "out";
    std::set<std::string> formats = {"csv", "json", "svg"};
    int trajectory_modes = 8;
    bool field = false;
    int field_stride = 50;
    int store_stride = 0;

    model::DelayPlant plant() const {
        model::DelayPlant plant;
        plant.sl.p = p.fn;
        plant.sl.q = q.fn;
        plant.sl.q_c = q_c;
        plant.sl.theta1 = theta1;
        plant.sl.theta2 = theta2;
        plant.sl.grid_points = grid_points;
        plant.c = c;
        plant.h = h;
        plant.measurement = measurement;
        return plant;
    }

    bool has_ic() const { return !ic_expr.empty() || !ic_table.empty(); }

    /// Compiles the ic section into a simulation configuration.
    sim::SimConfig sim_config() const {
        sim::SimConfig sc;
        sc.plant_modes = m_modes;
        sc.t_final = t_final;
        sc.dt = dt;
        sc.store_stride = store_stride;
        sc.observer_init = observer_init;
        sc.zhat0 = zhat0;
        sc.prehistory_samples = prehistory_samples;
        if (!ic_expr.empty()) {
            auto e = std::make_shared<Expr>(Expr::parse(ic_expr));
            sc.ic = [e](double x, double tau) {
                return e->eval({{"x", x}, {"tau", tau}});
            };
            sc.ic_static = !(e->references("tau") || e->references("t"));
        } else if (!ic_table.empty()) {
            auto profile = std::make_shared<Coefficient>(Coefficient::table_from_csv(ic_table));
            sc.ic = [profile](double x, double) { return (*profile)(x); };
            sc.ic_static = true;
        }
        return sc;
    }
};

namespace detail {

inline bool parse_bool(const std::string& section, const std::string& key, const std::string& v) {
    const std::string s = lower(v);
    if (s == "true" || s == "yes" || s == "1") return true;
    if (s == "false" || s == "no" || s == "0") return false;
    throw ValidationError("config: key '" + section + "." + key + "' wants a boolean, got '" + v +
                          "'");
}

inline int parse_int(const std::string& section, const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const int out = std::stoi(v, &used);
        if (trim(v.substr(used)).empty()) return out;
    } catch (const std::exception&) {
    }
    throw ValidationError("config: key '" + section + "." + key + "' wants an integer, got '" + v +
                          "'");
}

inline std::vector<double> parse_list(const std::string& section, const std::string& key,
                                      const std::string& v) {
    std::vector<double> out;
    for (const auto& piece : split(v, ',')) {
        if (piece.empty())
            throw ValidationError("config: key '" + section + "." + key + "' has an empty entry");
        out.push_back(parse_scalar(piece));
    }
    if (out.empty())
        throw ValidationError("config: key '" + section + "." + key + "' has an empty list");
    return out;
}

/// Consumes parsed key/value pairs; whatever is left unconsumed at the end is
/// an unknown key and fails the load.
struct Reader {
    std::map<std::string, std::map<std::string, std::string>> table;

    bool take(const std::string& section, const std::string& key, std::string& out) {
        auto sec = table.find(section);
        if (sec == table.end()) return false;
        auto it = sec->second.find(key);
        if (it == sec->second.end()) return false;
        out = it->second;
        sec->second.erase(it);
        return true;
    }

    void finish() const {
        for (const auto& [section, keys] : table)
            if (!keys.empty())
                throw ValidationError("config: unknown key '" + section + "." +
                                      keys.begin()->first + "'");
    }
};

inline Reader tokenize(std::istream& in) {
    static const std::set<std::string> known_sections = {"plant", "numerics", "gains", "ic",
                                                         "output"};
    Reader r;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string s = trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw ValidationError("config: malformed section header on line " +
                                      std::to_string(lineno));
            section = lower(trim(s.substr(1, s.size() - 2)));
            if (!known_sections.count(section))
                throw ValidationError("config: unknown section '" + section + "'");
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config: expected 'key = value' on line " +
                                  std::to_string(lineno));
        if (section.empty())
            throw ValidationError("config: key before any section on line " +
                                  std::to_string(lineno));
        const std::string key = lower(trim(s.substr(0, eq)));
        const std::string value = trim(s.substr(eq + 1));
        if (key.empty())
            throw ValidationError("config: empty key on line " + std::to_string(lineno));
        if (r.table[section].count(key))
            throw ValidationError("config: duplicate key '" + section + "." + key + "'");
        r.table[section][key] = value;
    }
    return r;
}

} // namespace detail

inline RunConfig parse_stream(std::istream& in) {
    using detail::parse_bool;
    using detail::parse_int;
    using detail::parse_list;

    auto reader = detail::tokenize(in);
    RunConfig cfg;
    std::string v;

    // [plant]
    if (reader.take("plant", "p", v)) cfg.p = CoeffSpec::parse(v);
    if (reader.take("plant", "q", v)) cfg.q = CoeffSpec::parse(v);
    if (reader.take("plant", "q_c", v)) cfg.q_c = parse_scalar(v);
    if (reader.take("plant", "c", v)) cfg.c = parse_scalar(v);
    if (reader.take("plant", "h", v)) cfg.h = parse_scalar(v);
    if (reader.take("plant", "theta1", v)) cfg.theta1 = parse_scalar(v);
    if (reader.take("plant", "theta2", v)) cfg.theta2 = parse_scalar(v);
    if (reader.take("plant", "measurement", v)) {
        const std::string m = detail::lower(v);
        if (m == "dirichlet") cfg.measurement = model::Measurement::dirichlet;
        else if (m == "neumann") cfg.measurement = model::Measurement::neumann;
        else throw ValidationError("config: key 'plant.measurement' must be dirichlet or neumann");
    }

    // [numerics]
    if (reader.take("numerics", "grid_points", v)) cfg.grid_points = parse_int("numerics", "grid_points", v);
    if (reader.take("numerics", "n_modes", v)) cfg.n_modes = parse_int("numerics", "n_modes", v);
    if (reader.take("numerics", "m_modes", v)) cfg.m_modes = parse_int("numerics", "m_modes", v);
    if (reader.take("numerics", "dt", v)) cfg.dt = parse_scalar(v);
    if (reader.take("numerics", "t_final", v)) cfg.t_final = parse_scalar(v);
    if (reader.take("numerics", "n_max", v)) cfg.n_max = parse_int("numerics", "n_max", v);
    if (reader.take("numerics", "epsilon", v)) cfg.epsilon = parse_scalar(v);
    auto alpha = [&](const char* key, double& slot) {
        if (reader.take("numerics", key, v)) {
            if (detail::lower(v) == "auto") slot = -1.0;
            else {
                slot = parse_scalar(v);
                if (!(slot > 0.0))
                    throw ValidationError(std::string("config: key 'numerics.") + key +
                                          "' must be positive or auto");
            }
        }
    };
    alpha("alpha1", cfg.alpha1);
    alpha("alpha2", cfg.alpha2);
    alpha("alpha3", cfg.alpha3);
    alpha("alpha4", cfg.alpha4);
    if (reader.take("numerics", "h_list", v)) cfg.h_list = parse_list("numerics", "h_list", v);

    // [gains]
    if (reader.take("gains", "mode", v)) {
        const std::string m = detail::lower(v);
        if (m == "place") cfg.gain_mode = GainMode::place;
        else if (m == "given") cfg.gain_mode = GainMode::given;
        else throw ValidationError("config: key 'gains.mode' must be place or given");
    }
    if (reader.take("gains", "n0", v)) cfg.n0 = parse_int("gains", "n0", v);
    if (reader.take("gains", "observer_modes", v))
        cfg.observer_modes = parse_int("gains", "observer_modes", v);
    if (reader.take("gains", "rho", v)) cfg.rho = parse_scalar(v);
    if (reader.take("gains", "sigma", v)) cfg.sigma = parse_scalar(v);
    if (reader.take("gains", "k", v)) cfg.k_row = parse_list("gains", "k", v);
    if (reader.take("gains", "l", v)) cfg.l_col = parse_list("gains", "l", v);

    // [ic]
    if (reader.take("ic", "expr", v)) cfg.ic_expr = v;
    if (reader.take("ic", "table", v)) cfg.ic_table = v;
    if (reader.take("ic", "observer_init", v)) {
        const std::string m = detail::lower(v);
        if (m == "zeros") cfg.observer_init = sim::ObserverInit::zeros;
        else if (m == "compatibility") cfg.observer_init = sim::ObserverInit::compatibility;
        else
            throw ValidationError(
                "config: key 'ic.observer_init' must be zeros or compatibility");
    }
    if (reader.take("ic", "prehistory_samples", v))
        cfg.prehistory_samples = parse_int("ic", "prehistory_samples", v);
    if (reader.take("ic", "zhat0", v)) cfg.zhat0 = parse_list("ic", "zhat0", v);

    // [output]
    if (reader.take("output", "directory", v)) cfg.directory = v;
    if (reader.take("output", "formats", v)) {
        cfg.formats.clear();
        for (const auto& piece : detail::split(v, ',')) {
            const std::string f = detail::lower(piece);
            if (f != "csv" && f != "json" && f != "svg")
                throw ValidationError("config: unknown output format '" + piece + "'");
            cfg.formats.insert(f);
        }
        if (cfg.formats.empty())
            throw ValidationError("config: key 'output.formats' has an empty list");
    }
    if (reader.take("output", "trajectory_modes", v))
        cfg.trajectory_modes = parse_int("output", "trajectory_modes", v);
    if (reader.take("output", "field", v)) cfg.field = parse_bool("output", "field", v);
    if (reader.take("output", "field_stride", v))
        cfg.field_stride = parse_int("output", "field_stride", v);
    if (reader.take("output", "store_stride", v))
        cfg.store_stride = parse_int("output", "store_stride", v);

    reader.finish();

    // Range checks a command would otherwise hit much later.
    auto positive = [](double x, const char* what) {
        if (!(x > 0.0)) throw ValidationError(std::string("config: ") + what + " must be positive");
    };
    positive(cfg.dt, "numerics.dt");
    positive(cfg.t_final, "numerics.t_final");
    positive(cfg.rho, "gains.rho");
    if (cfg.grid_points < 11) throw ValidationError("config: numerics.grid_points is too small");
    if (cfg.n_modes < 1) throw ValidationError("config: numerics.n_modes must be at least 1");
    if (cfg.m_modes < 1) throw ValidationError("config: numerics.m_modes must be at least 1");
    if (cfg.n_max < 1) throw ValidationError("config: numerics.n_max must be at least 1");
    if (!(cfg.epsilon > 0.0 && cfg.epsilon < 0.5))
        throw ValidationError("config: numerics.epsilon must lie in (0, 1/2)");
    if (cfg.n0 < 0) throw ValidationError("config: gains.n0 must be nonnegative");
    if (cfg.observer_modes < 0)
        throw ValidationError("config: gains.observer_modes must be nonnegative");
    if (cfg.sigma < 0.0) throw ValidationError("config: gains.sigma must be nonnegative");
    if (cfg.prehistory_samples < 4)
        throw ValidationError("config: ic.prehistory_samples must be at least 4");
    if (cfg.trajectory_modes < 0)
        throw ValidationError("config: output.trajectory_modes must be nonnegative");
    if (cfg.field_stride < 1) throw ValidationError("config: output.field_stride must be positive");
    if (cfg.store_stride < 0)
        throw ValidationError("config: output.store_stride must be nonnegative");
    if (!cfg.ic_expr.empty() && !cfg.ic_table.empty())
        throw ValidationError("config: ic.expr and ic.table are mutually exclusive");
    if (cfg.gain_mode == GainMode::given) {
        if (cfg.k_row.empty() || cfg.l_col.empty())
            throw ValidationError("config: gains.mode = given requires both gains.k and gains.l");
        if (cfg.k_row.size() != cfg.l_col.size())
            throw ValidationError("config: gains.k and gains.l must have the same length");
        if (cfg.n0 != 0 && cfg.n0 != static_cast<int>(cfg.k_row.size()))
            throw ValidationError("config: gains.n0 disagrees with the length of gains.k");
    }
    if (!cfg.ic_expr.empty()) Expr::parse(cfg.ic_expr); // surface syntax errors at load time
    return cfg;
}

inline RunConfig parse_text(const std::string& text) {
    std::istringstream in(text);
    return parse_stream(in);
}

inline RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open '" + path + "'");
    return parse_stream(in);
}

/// Canonical echo of the effective configuration.  Loading the rendered text
/// reproduces the configuration exactly (doubles go through %.17g).
inline std::string render(const RunConfig& cfg) {
    std::ostringstream out;
    auto num = [&](const char* key, double v) { out << key << " = " << format_double(v) << "\n"; };
    auto alpha = [&](const char* key, double v) {
        out << key << " = " << (v < 0.0 ? std::string("auto") : format_double(v)) << "\n";
    };
    auto list = [&](const char* key, const std::vector<double>& xs) {
        if (xs.empty()) return;
        out << key << " = ";
        for (std::size_t i = 0; i < xs.size(); ++i)
            out << (i ? "," : "") << format_double(xs[i]);
        out << "\n";
    };

    out << "[plant]\n";
    out << "p = " << cfg.p.source << "\n";
    out << "q = " << cfg.q.source << "\n";
    num("q_c", cfg.q_c);
    num("c", cfg.c);
    num("h", cfg.h);
    num("theta1", cfg.theta1);
    num("theta2", cfg.theta2);
    out << "measurement = "
        << (cfg.measurement == model::Measurement::dirichlet ? "dirichlet" : "neumann") << "\n";

    out << "\n[numerics]\n";
    out << "grid_points = " << cfg.grid_points << "\n";
    out << "n_modes = " << cfg.n_modes << "\n";
    out << "m_modes = " << cfg.m_modes << "\n";
    num("dt", cfg.dt);
    num("t_final", cfg.t_final);
    out << "n_max = " << cfg.n_max << "\n";
    num("epsilon", cfg.epsilon);
    alpha("alpha1", cfg.alpha1);
    alpha("alpha2", cfg.alpha2);
    alpha("alpha3", cfg.alpha3);
    alpha("alpha4", cfg.alpha4);
    list("h_list", cfg.h_list);

    out << "\n[gains]\n";
    out << "mode = " << (cfg.gain_mode == GainMode::place ? "place" : "given") << "\n";
    out << "n0 = " << cfg.n0 << "\n";
    out << "observer_modes = " << cfg.observer_modes << "\n";
    num("rho", cfg.rho);
    num("sigma", cfg.sigma);
    list("k", cfg.k_row);
    list("l", cfg.l_col);

    out << "\n[ic]\n";
    if (!cfg.ic_expr.empty()) out << "expr = " << cfg.ic_expr << "\n";
    if (!cfg.ic_table.empty()) out << "table = " << cfg.ic_table << "\n";
    out << "observer_init = "
        << (cfg.observer_init == sim::ObserverInit::zeros ? "zeros" : "compatibility") << "\n";
    out << "prehistory_samples = " << cfg.prehistory_samples << "\n";
    list("zhat0", cfg.zhat0);

    out << "\n[output]\n";
    out << "directory = " << cfg.directory << "\n";
    out << "formats = ";
    bool first = true;
    for (const auto& f : cfg.formats) {
        out << (first ? "" : ",") << f;
        first = false;
    }
    out << "\n";
    out << "trajectory_modes = " << cfg.trajectory_modes << "\n";
    out << "field = " << (cfg.field ? "true" : "false") << "\n";
    out << "field_stride = " << cfg.field_stride << "\n";
    out << "store_stride = " << cfg.store_stride << "\n";
    return out.str();
}

} // namespace delaypde::config
