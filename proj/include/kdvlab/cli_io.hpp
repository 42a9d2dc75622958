#pragma once

// Experiment configuration (key=value text), presets, CSV/JSON output and
// command dispatch shared by the kdvlab executable and the tests.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "kdvlab/return_method.hpp"

namespace kdvlab {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct ConfigError : Error {
    ConfigError(const std::string& kind, std::vector<std::string> p)
        : Error("cli_io." + kind, join(p)), problems(std::move(p)) {}
    std::vector<std::string> problems;

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string s;
        for (const auto& x : p) s += (s.empty() ? "" : "; ") + x;
        return s;
    }
};

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct ExperimentConfig {
    double L = 2.0 * std::numbers::pi;
    double c = 0.0;
    double T = 3.0;
    int nx = 128;
    int nt = 256;
    int basis = 64;
    std::string basis_kind = "hat";
    std::string initial = "zero";
    std::string target = "zero";
    std::string control;  // CSV path for simulate
    std::optional<double> d;
    std::optional<double> epsilon;
    double delta = 0.01;
    double preference = 0.5;
    double reg_threshold = 1e-10;       // steer-linear
    double steer_reg_threshold = 1e-2;  // steer, return-method
    double picard_tol = 1e-10;
    double terminal_tol = 1e-3;
    double end_to_end_tol = 1e-2;
    double radius = 1.0;
    double tol = 1e-12;  // simulate, nonlinear Picard
    double threshold = 1e-6;
    double lmax = 7.0;
    int max_picard = 100;
    int max_restarts = 5;
    int max_iter = 100;
    int state_modes = 4;
    bool nonlinear = true;
    std::int64_t seed = 0;
    std::string output_dir;

    bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

struct KeySpec {
    std::function<std::optional<std::string>(ExperimentConfig&, const std::string&)> set;  // error text or nullopt
    std::function<std::optional<std::string>(const ExperimentConfig&)> get;                 // nullopt: omit
};

inline std::optional<double> parse_real(const std::string& s) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size() || !std::isfinite(v)) return std::nullopt;
        return v;
    } catch (...) {
        return std::nullopt;
    }
}

inline std::optional<long long> parse_int(const std::string& s) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) return std::nullopt;
        return v;
    } catch (...) {
        return std::nullopt;
    }
}

template <class T>
KeySpec real_key(T ExperimentConfig::*m) {
    return {[m](ExperimentConfig& c, const std::string& v) -> std::optional<std::string> {
                auto x = parse_real(v);
                if (!x) return "not a finite real number";
                c.*m = *x;
                return std::nullopt;
            },
            [m](const ExperimentConfig& c) -> std::optional<std::string> { return fmt17(c.*m); }};
}

inline KeySpec opt_real_key(std::optional<double> ExperimentConfig::*m) {
    return {[m](ExperimentConfig& c, const std::string& v) -> std::optional<std::string> {
                auto x = parse_real(v);
                if (!x) return "not a finite real number";
                c.*m = *x;
                return std::nullopt;
            },
            [m](const ExperimentConfig& c) -> std::optional<std::string> {
                if (!(c.*m)) return std::nullopt;
                return fmt17(*(c.*m));
            }};
}

template <class T>
KeySpec int_key(T ExperimentConfig::*m) {
    return {[m](ExperimentConfig& c, const std::string& v) -> std::optional<std::string> {
                auto x = parse_int(v);
                if (!x) return "not an integer";
                c.*m = T(*x);
                return std::nullopt;
            },
            [m](const ExperimentConfig& c) -> std::optional<std::string> { return std::to_string(c.*m); }};
}

inline KeySpec str_key(std::string ExperimentConfig::*m) {
    return {[m](ExperimentConfig& c, const std::string& v) -> std::optional<std::string> {
                c.*m = v;
                return std::nullopt;
            },
            [m](const ExperimentConfig& c) -> std::optional<std::string> {
                if ((c.*m).empty()) return std::nullopt;
                return c.*m;
            }};
}

inline KeySpec bool_key(bool ExperimentConfig::*m) {
    return {[m](ExperimentConfig& c, const std::string& v) -> std::optional<std::string> {
                if (v == "true" || v == "1") c.*m = true;
                else if (v == "false" || v == "0") c.*m = false;
                else return "expected true or false";
                return std::nullopt;
            },
            [m](const ExperimentConfig& c) -> std::optional<std::string> { return c.*m ? "true" : "false"; }};
}

inline const std::map<std::string, KeySpec>& key_table() {
    using C = ExperimentConfig;
    static const std::map<std::string, KeySpec> t = {
        {"L", real_key(&C::L)},
        {"T", real_key(&C::T)},
        {"basis", int_key(&C::basis)},
        {"basis_kind", str_key(&C::basis_kind)},
        {"c", real_key(&C::c)},
        {"control", str_key(&C::control)},
        {"d", opt_real_key(&C::d)},
        {"delta", real_key(&C::delta)},
        {"end_to_end_tol", real_key(&C::end_to_end_tol)},
        {"epsilon", opt_real_key(&C::epsilon)},
        {"initial", str_key(&C::initial)},
        {"lmax", real_key(&C::lmax)},
        {"max_iter", int_key(&C::max_iter)},
        {"max_picard", int_key(&C::max_picard)},
        {"max_restarts", int_key(&C::max_restarts)},
        {"nonlinear", bool_key(&C::nonlinear)},
        {"nt", int_key(&C::nt)},
        {"nx", int_key(&C::nx)},
        {"output_dir", str_key(&C::output_dir)},
        {"picard_tol", real_key(&C::picard_tol)},
        {"preference", real_key(&C::preference)},
        {"radius", real_key(&C::radius)},
        {"reg_threshold", real_key(&C::reg_threshold)},
        {"seed", int_key(&C::seed)},
        {"state_modes", int_key(&C::state_modes)},
        {"steer_reg_threshold", real_key(&C::steer_reg_threshold)},
        {"target", str_key(&C::target)},
        {"terminal_tol", real_key(&C::terminal_tol)},
        {"threshold", real_key(&C::threshold)},
        {"tol", real_key(&C::tol)},
    };
    return t;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

// Initial/target state presets, summed with '+':
//   zero | constant:<d> | gaussian:<amp>,<center>,<width>
// A gaussian has L^2 norm <amp>; center and width are fractions of L.
struct PresetTerm {
    std::string kind;
    std::vector<double> args;
};

inline std::vector<PresetTerm> parse_preset(const std::string& text) {
    std::vector<PresetTerm> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, '+')) {
        part = detail::trim(part);
        PresetTerm t;
        const auto colon = part.find(':');
        t.kind = part.substr(0, colon);
        if (colon != std::string::npos) {
            std::stringstream as(part.substr(colon + 1));
            std::string a;
            while (std::getline(as, a, ',')) {
                auto v = detail::parse_real(detail::trim(a));
                if (!v) throw ConfigError("validation", {"preset '" + text + "': bad number '" + a + "'"});
                t.args.push_back(*v);
            }
        }
        const std::size_t want = t.kind == "zero" ? 0 : t.kind == "constant" ? 1 : t.kind == "gaussian" ? 3 : 99;
        if (want == 99) throw ConfigError("validation", {"preset '" + text + "': unknown kind '" + t.kind + "'"});
        if (t.args.size() != want)
            throw ConfigError("validation", {"preset '" + text + "': " + t.kind + " takes " + std::to_string(want) +
                                                 " argument(s)"});
        if (t.kind == "gaussian" && !(t.args[2] > 0.0))
            throw ConfigError("validation", {"preset '" + text + "': gaussian width must be positive"});
        out.push_back(t);
    }
    if (out.empty()) throw ConfigError("validation", {"empty preset"});
    return out;
}

inline Vec gaussian_state(double L, int nx, double amp, double center, double width) {
    const Vec x = Vec::LinSpaced(nx + 1, 0.0, L);
    Vec g = (-((x.array() - center * L) / (width * L)).square()).exp().matrix();
    return amp * g / l2_norm(g, quadrature_weights(nx, L / nx));
}

inline Vec eval_preset(const std::string& text, double L, int nx) {
    Vec v = Vec::Zero(nx + 1);
    for (const auto& t : parse_preset(text)) {
        if (t.kind == "constant") v.array() += t.args[0];
        if (t.kind == "gaussian") v += gaussian_state(L, nx, t.args[0], t.args[1], t.args[2]);
    }
    return v;
}

inline void validate(const ExperimentConfig& c) {
    std::vector<std::string> p;
    auto need = [&](bool ok, const std::string& msg) {
        if (!ok) p.push_back(msg);
    };
    need(c.L > 0, "L must be positive");
    need(c.T > 0, "T must be positive");
    need(c.nx >= 8, "nx must be >= 8");
    need(c.nt >= 4, "nt must be >= 4");
    need(c.basis >= 1, "basis must be >= 1");
    need(c.basis_kind == "hat" || c.basis_kind == "piecewise_constant", "basis_kind must be hat or piecewise_constant");
    need(c.delta > 0, "delta must be positive");
    need(c.preference > 0 && c.preference < 1, "preference must lie in (0,1)");
    need(c.reg_threshold > 0, "reg_threshold must be positive");
    need(c.steer_reg_threshold > 0, "steer_reg_threshold must be positive");
    need(c.picard_tol > 0, "picard_tol must be positive");
    need(c.terminal_tol > 0, "terminal_tol must be positive");
    need(c.end_to_end_tol > 0, "end_to_end_tol must be positive");
    need(c.radius > 0, "radius must be positive");
    need(c.tol > 0, "tol must be positive");
    need(c.threshold > 0, "threshold must be positive");
    need(c.lmax > 0, "lmax must be positive");
    need(c.max_picard >= 1, "max_picard must be >= 1");
    need(c.max_restarts >= 0, "max_restarts must be >= 0");
    need(c.max_iter >= 1, "max_iter must be >= 1");
    need(c.state_modes >= 0, "state_modes must be >= 0");
    need(!c.d || *c.d >= 0, "d must be non-negative");
    for (const auto* s : {&c.initial, &c.target}) {
        try {
            parse_preset(*s);
        } catch (const ConfigError& e) {
            p.insert(p.end(), e.problems.begin(), e.problems.end());
        }
    }
    if (!p.empty()) throw ConfigError("validation", p);
}

// key=value lines, '#' starts a comment.  All problems are reported together.
inline ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::vector<std::string> parse_problems, value_problems;
    std::map<std::string, int> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    const auto& table = detail::key_table();
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            parse_problems.push_back("line " + std::to_string(lineno) + ": expected key=value");
            continue;
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key.empty()) {
            parse_problems.push_back("line " + std::to_string(lineno) + ": empty key");
            continue;
        }
        if (auto it = seen.find(key); it != seen.end()) {
            parse_problems.push_back("line " + std::to_string(lineno) + ": duplicate key '" + key +
                                     "' (first set on line " + std::to_string(it->second) + ")");
            continue;
        }
        seen[key] = lineno;
        auto spec = table.find(key);
        if (spec == table.end()) {
            value_problems.push_back("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
            continue;
        }
        if (auto err = spec->second.set(cfg, val))
            value_problems.push_back("line " + std::to_string(lineno) + ": " + key + ": " + *err);
    }
    if (!parse_problems.empty()) {
        parse_problems.insert(parse_problems.end(), value_problems.begin(), value_problems.end());
        throw ConfigError("parse", parse_problems);
    }
    try {
        validate(cfg);
    } catch (const ConfigError& e) {
        value_problems.insert(value_problems.end(), e.problems.begin(), e.problems.end());
    }
    if (!value_problems.empty()) throw ConfigError("validation", value_problems);
    return cfg;
}

inline ExperimentConfig parse_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("parse", {"cannot open config file '" + path.string() + "'"});
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

// Canonical text: sorted keys, 17 significant digits.
inline std::string to_text(const ExperimentConfig& c) {
    std::string s;
    for (const auto& [k, spec] : detail::key_table())
        if (auto v = spec.get(c)) s += k + "=" + *v + "\n";
    return s;
}

inline std::string hash_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------- output

inline std::string trajectory_csv(const Trajectory& y) {
    std::string s = "t,x,y\n";
    s.reserve(std::size_t(y.values.size()) * 60);
    for (int n = 0; n <= y.grid.nt; ++n) {
        const std::string t = fmt17(y.grid.t(n));
        for (int i = 0; i <= y.grid.nx; ++i) s += t + "," + fmt17(y.grid.x(i)) + "," + fmt17(y.values(n, i)) + "\n";
    }
    return s;
}

inline std::string control_csv(const SpaceTimeGrid& g, const Vec& h2) {
    std::string s = "t,h2\n";
    for (int n = 0; n <= g.nt; ++n) s += fmt17(g.t(n)) + "," + fmt17(h2[n]) + "\n";
    return s;
}

inline std::string signal_csv(const SpaceTimeGrid& g, const BoundarySignal& h) {
    std::string s = "t,h1,h2,h3\n";
    for (int n = 0; n <= g.nt; ++n)
        s += fmt17(g.t(n)) + "," + fmt17(h.h1[n]) + "," + fmt17(h.h2[n]) + "," + fmt17(h.h3[n]) + "\n";
    return s;
}

// Reads "t,h2" or "t,h1,h2,h3"; time stamps must match the grid.
inline BoundarySignal read_signal_csv(const fs::path& path, const SpaceTimeGrid& g) {
    std::ifstream f(path);
    if (!f) throw ConfigError("validation", {"cannot open control file '" + path.string() + "'"});
    std::string line;
    std::getline(f, line);
    const std::string header = detail::trim(line);
    const bool full = header == "t,h1,h2,h3";
    if (!full && header != "t,h2")
        throw ConfigError("validation", {"control file header must be t,h2 or t,h1,h2,h3"});
    BoundarySignal s(g.nt);
    int n = 0;
    std::vector<std::string> problems;
    while (std::getline(f, line)) {
        line = detail::trim(line);
        if (line.empty()) continue;
        std::vector<double> v;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            auto x = detail::parse_real(detail::trim(cell));
            v.push_back(x ? *x : std::nan(""));
        }
        if (v.size() != (full ? 4u : 2u) || !std::all_of(v.begin(), v.end(), [](double z) { return std::isfinite(z); })) {
            problems.push_back("control file row " + std::to_string(n + 2) + ": malformed");
        } else if (n > g.nt) {
            problems.push_back("control file has more than nt+1 rows");
            break;
        } else if (std::abs(v[0] - g.t(n)) > 1e-9 * std::max(1.0, std::abs(g.T1))) {
            problems.push_back("control file row " + std::to_string(n + 2) + ": time " + fmt17(v[0]) +
                               " does not match grid time " + fmt17(g.t(n)));
        } else if (full) {
            s.h1[n] = v[1];
            s.h2[n] = v[2];
            s.h3[n] = v[3];
        } else {
            s.h2[n] = v[1];
        }
        ++n;
    }
    if (problems.empty() && n != g.nt + 1)
        problems.push_back("control file has " + std::to_string(n) + " rows, expected nt+1 = " + std::to_string(g.nt + 1));
    if (!problems.empty()) throw ConfigError("validation", problems);
    return s;
}

inline json to_json(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(x);
    return a;
}

inline json steering_json(const SteeringResult& r) {
    return {{"picard_iterations", r.picard_iterations},
            {"updates", to_json(r.updates)},
            {"contraction_history", to_json(r.contraction_history)},
            {"terminal_error", r.terminal_error},
            {"terminal_tolerance_abs", r.terminal_scale},
            {"meets_tolerance", r.meets_tolerance},
            {"shift", r.shift},
            {"control_norm", r.control_norm},
            {"psi_norm", r.psi_norm},
            {"rank", r.rank},
            {"notes", r.notes}};
}

// ---------------------------------------------------------------- commands

struct RunOutcome {
    json report;
    int exit_code = 0;
    fs::path dir;
    std::string stdout_text;
};

inline int exit_code_for(const std::string& code) {
    if (code.rfind("cli_io.", 0) == 0) return 2;
    if (code == "return_method.audit") return 4;
    return 3;
}

class RunContext {
public:
    RunContext(const std::string& command, const ExperimentConfig& cfg, const std::string& mode = "")
        : command_(command), cfg_(cfg) {
        fs::path root = "kdvlab_out";
        if (const char* env = std::getenv("KDV_LAB_OUT"); env && *env) root = env;
        else if (!cfg.output_dir.empty()) root = cfg.output_dir;
        const std::string tag = mode.empty() ? command : command + "-" + mode;
        dir_ = root / (tag + "-" + hash_hex(tag + "\n" + to_text(cfg)));
        fs::create_directories(dir_);
        report_["command"] = command;
        if (!mode.empty()) report_["mode"] = mode;
        report_["config"] = to_text(cfg);
        report_["outputs"] = json::array();
        report_["diagnostics"] = json::object();
    }

    void write(const std::string& name, const std::string& content) {
        std::ofstream f(dir_ / name, std::ios::binary | std::ios::trunc);
        f << content;
        if (!f) throw Error("cli_io.io", "cannot write " + (dir_ / name).string());
        report_["outputs"].push_back(name);
    }
    json& diagnostics() { return report_["diagnostics"]; }

    RunOutcome finish(int exit_code, const std::optional<json>& error = std::nullopt) {
        report_["status"] = exit_code == 0 ? "ok" : "error";
        if (error) report_["error"] = *error;
        auto outputs = report_["outputs"];
        outputs.push_back("report.json");
        report_["outputs"] = outputs;
        std::ofstream f(dir_ / "report.json", std::ios::binary | std::ios::trunc);
        f << report_.dump(2) << "\n";
        RunOutcome o;
        o.report = report_;
        o.exit_code = exit_code;
        o.dir = dir_;
        return o;
    }
    const fs::path& dir() const { return dir_; }

private:
    std::string command_;
    ExperimentConfig cfg_;
    fs::path dir_;
    json report_;
};

inline json error_json(const std::string& code, const std::string& msg) { return {{"code", code}, {"message", msg}}; }

namespace detail {

inline SteeringConfig steering_config(const ExperimentConfig& c) {
    SteeringConfig s;
    s.L = c.L;
    s.nx = c.nx;
    s.nt = c.nt;
    s.basis = {c.basis_kind == "hat" ? BasisKind::Hat : BasisKind::PiecewiseConstant, c.basis, 0.0, 1.0, true};
    s.reg_threshold = c.steer_reg_threshold;
    s.c = c.c;
    s.epsilon = c.epsilon ? *c.epsilon : std::numeric_limits<double>::quiet_NaN();
    s.preference = c.preference;
    s.delta = c.delta;
    s.picard_tol = c.picard_tol;
    s.terminal_tol = c.terminal_tol;
    s.max_picard = c.max_picard;
    s.max_restarts = c.max_restarts;
    s.radius = c.radius;
    return s;
}

inline void run_critical(RunContext& ctx, const ExperimentConfig& c, bool as_json, std::string& out) {
    const auto set = enumerate_critical(c.c, c.lmax);
    std::string csv = "length,branch,m,l\n";
    json arr = json::array();
    for (const auto& m : set.members) {
        json gens = json::array();
        for (const auto& g : m.generators) {
            csv += fmt17(m.length) + "," + to_string(g.branch) + "," + std::to_string(g.m) + "," + std::to_string(g.l) + "\n";
            gens.push_back({{"branch", to_string(g.branch)}, {"m", g.m}, {"l", g.l}});
        }
        arr.push_back({{"length", m.length}, {"generators", gens}});
    }
    ctx.write("critical_lengths.csv", csv);
    ctx.write("critical_lengths.json", arr.dump(2) + "\n");
    ctx.diagnostics()["count"] = set.members.size();
    out = as_json ? arr.dump(2) + "\n" : csv;
}

inline void run_gramian(RunContext& ctx, const ExperimentConfig& c, std::string& out) {
    ReachabilityOptions opt;
    opt.horizon = c.T;
    opt.state_modes = c.state_modes;
    opt.basis = c.basis_kind == "hat" ? BasisKind::Hat : BasisKind::PiecewiseConstant;
    const auto rep = reachability_report(c.L, c.c, {c.nx, c.nt, c.basis}, c.threshold, opt);
    const json spec = to_json(rep.sigma);
    ctx.write("spectrum.json", spec.dump(2) + "\n");
    auto& d = ctx.diagnostics();
    d["sigma_min"] = rep.sigma_min;
    d["sigma_max"] = rep.sigma_max;
    d["ratio"] = rep.ratio();
    d["defect_modes"] = rep.defect_modes.size();
    d["critical"] = is_critical(c.L, c.c).critical;
    out = spec.dump() + "\n";
}

inline void run_simulate(RunContext& ctx, const ExperimentConfig& c) {
    const SpaceTimeGrid g(c.L, 0.0, c.T, c.nx, c.nt);
    const Vec y0 = eval_preset(c.initial, c.L, c.nx);
    const BoundarySignal h = c.control.empty() ? BoundarySignal(c.nt) : read_signal_csv(c.control, g);
    Trajectory y;
    auto& d = ctx.diagnostics();
    if (c.nonlinear) {
        auto sol = solve_nonlinear(y0, h, Field(), Drift(1.0 + c.c), g, {c.tol, c.max_iter, 4, 6});
        d["picard_iterations"] = sol.iterations;
        d["slabs"] = sol.slabs;
        d["contraction_history"] = to_json(sol.contraction_history);
        y = std::move(sol.trajectory);
    } else {
        y = solve_linear(y0, h, Field(), Drift(1.0 + c.c), g);
    }
    const auto est = estimate_report(y, y0, h, Field());
    d["zt_norm"] = est.zt_norm_of_solution;
    d["data_norm"] = est.data_norm;
    d["empirical_constant"] = est.empirical_constant;
    d["final_l2"] = l2_norm(y.final_state(), quadrature_weights(g));
    ctx.write("trajectory.csv", trajectory_csv(y));
    ctx.write("control.csv", signal_csv(g, h));
}

inline void run_steer_linear(RunContext& ctx, const ExperimentConfig& c) {
    const SpaceTimeGrid g(c.L, 0.0, c.T, c.nx, c.nt);
    const ControlBasis basis{c.basis_kind == "hat" ? BasisKind::Hat : BasisKind::PiecewiseConstant, c.basis, 0.0, c.T};
    const auto op = build_control_operator(1.0 + c.c, g, basis);
    const auto sol = solve_linear_control(op, eval_preset(c.initial, c.L, c.nx), eval_preset(c.target, c.L, c.nx),
                                          c.reg_threshold);
    auto& d = ctx.diagnostics();
    d["residual"] = sol.residual;
    d["relative_residual"] = sol.relative_residual;
    d["control_norm"] = sol.control_norm;
    d["rank"] = sol.rank;
    d["ill_conditioned"] = sol.ill_conditioned;
    d["critical"] = is_critical(c.L, c.c).critical;
    ctx.write("control.csv", control_csv(g, sol.signal.h2));
}

// returns exit code
inline int run_steer(RunContext& ctx, const ExperimentConfig& c, const std::string& mode) {
    const auto sc = steering_config(c);
    const Vec y0 = eval_preset(c.initial, c.L, c.nx);
    const Vec yT = eval_preset(c.target, c.L, c.nx);
    const double d = c.d ? *c.d : c.delta / 2.0;
    SteeringResult r;
    if (mode == "to-const")
        r = steer_to_constant(y0, d, c.T, sc);
    else if (mode == "from-const")
        r = steer_from_constant(d, yT, c.T, sc);
    else if (mode == "local")
        r = local_steer_off_critical(y0, yT, c.c, c.T, sc);
    else
        throw ConfigError("validation", {"mode must be to-const, from-const or local"});
    const auto audit = audit_steering(r);
    auto& diag = ctx.diagnostics();
    diag = steering_json(r);
    diag["mode"] = mode;
    diag["audit"] = {{"z_deviation", audit.z_deviation}, {"terminal_error_gap", audit.terminal_error_gap}};
    ctx.write("control.csv", control_csv(r.grid, r.control.h2));
    ctx.write("trajectory.csv", trajectory_csv(r.trajectory));
    if (audit.z_deviation > 1e-8) return 4;
    return r.meets_tolerance ? 0 : 3;
}

inline json attempts_json(const std::vector<PhaseAttempt>& at) {
    json a = json::array();
    for (const auto& x : at)
        a.push_back({{"d", x.d},
                     {"delta", x.delta},
                     {"phase1", x.phase1},
                     {"phase3", x.phase3},
                     {"phase1_error", x.phase1_error},
                     {"phase3_error", x.phase3_error}});
    return a;
}

inline int run_return(RunContext& ctx, const ExperimentConfig& c) {
    ReturnConfig rc;
    rc.steering = steering_config(c);
    rc.d = c.d ? *c.d : std::numeric_limits<double>::quiet_NaN();
    rc.end_to_end_tol = c.end_to_end_tol;
    const Vec y0 = eval_preset(c.initial, c.L, c.nx);
    const Vec yT = eval_preset(c.target, c.L, c.nx);
    auto& diag = ctx.diagnostics();
    ReturnPlan plan;
    try {
        plan = plan_return(y0, yT, c.T, rc);
    } catch (const PlanFailure& e) {
        diag["attempts"] = attempts_json(e.attempts);
        if (e.best_phase1) {
            diag["best_phase1"] = steering_json(*e.best_phase1);
            diag["best_phase3"] = steering_json(*e.best_phase3);
            ctx.write("phase1_control.csv", control_csv(e.best_phase1->grid, e.best_phase1->control.h2));
            ctx.write("phase1_trajectory.csv", trajectory_csv(e.best_phase1->trajectory));
            ctx.write("phase3_control.csv", control_csv(e.best_phase3->grid, e.best_phase3->control.h2));
            ctx.write("phase3_trajectory.csv", trajectory_csv(e.best_phase3->trajectory));
        }
        throw;
    }
    diag["d"] = plan.d;
    diag["off_critical"] = plan.off_critical;
    diag["attempts"] = attempts_json(plan.attempts);
    diag["hold_drift"] = plan.hold_drift;
    diag["joint_jumps"] = {plan.joint_jumps[0], plan.joint_jumps[1]};
    diag["end_to_end_error"] = plan.end_to_end_error;
    diag["notes"] = plan.notes;
    if (plan.phase1) diag["phase1"] = steering_json(*plan.phase1);
    if (plan.phase3) diag["phase3"] = steering_json(*plan.phase3);
    if (plan.local) diag["local"] = steering_json(*plan.local);
    if (plan.phase1) diag["epsilon"] = plan.phase1->shift - c.c;
    ctx.write("control.csv", control_csv(plan.glued_trajectory.grid, plan.glued_control.h2));
    ctx.write("trajectory.csv", trajectory_csv(plan.glued_trajectory));
    int code = plan.end_to_end_error < rc.end_to_end_tol ? 0 : 3;
    try {
        const auto a = verify_plan(plan);
        diag["audit"] = {{"passed", true}, {"z_deviation", a.z_deviation}, {"final_error", a.final_error},
                         {"tolerance", a.tolerance}};
    } catch (const PlanAuditFailure& e) {
        diag["audit"] = {{"passed", false}, {"z_deviation", e.audit.z_deviation}, {"final_error", e.audit.final_error},
                         {"tolerance", e.audit.tolerance}, {"message", e.what()}};
        code = 4;
    }
    return code;
}

}  // namespace detail

// Dispatch one command.  Errors are caught and turned into an error report
// and exit code; the report is always written.
inline RunOutcome run(const std::string& command, const ExperimentConfig& cfg, const std::string& mode = "",
                      bool as_json = false) {
    static const std::vector<std::string> known = {"critical-lengths", "simulate",     "gramian",
                                                   "steer-linear",     "steer",        "return-method"};
    if (std::find(known.begin(), known.end(), command) == known.end())
        throw ConfigError("validation", {"unknown command '" + command + "'"});
    RunContext ctx(command, cfg, mode);
    std::string out;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        int code = 0;
        if (command == "critical-lengths") detail::run_critical(ctx, cfg, as_json, out);
        else if (command == "gramian") detail::run_gramian(ctx, cfg, out);
        else if (command == "simulate") detail::run_simulate(ctx, cfg);
        else if (command == "steer-linear") detail::run_steer_linear(ctx, cfg);
        else if (command == "steer") code = detail::run_steer(ctx, cfg, mode);
        else code = detail::run_return(ctx, cfg);
        auto o = ctx.finish(code);
        o.stdout_text = out.empty() ? o.report.dump() + "\n" : out;
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::ofstream(o.dir / "timing.json") << json{{"wall_time_s", secs}}.dump() << "\n";
        return o;
    } catch (const Error& e) {
        auto o = ctx.finish(exit_code_for(e.code()), error_json(e.code(), e.what()));
        o.stdout_text = json{{"error", error_json(e.code(), e.what())}}.dump() + "\n";
        return o;
    } catch (const std::exception& e) {
        auto o = ctx.finish(3, error_json("internal", e.what()));
        o.stdout_text = json{{"error", error_json("internal", e.what())}}.dump() + "\n";
        return o;
    }
}

}  // namespace kdvlab
