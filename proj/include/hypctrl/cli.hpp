#pragma once

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hypctrl/backstepping.hpp"
#include "hypctrl/bmatrix.hpp"
#include "hypctrl/controller.hpp"
#include "hypctrl/core.hpp"
#include "hypctrl/io.hpp"
#include "hypctrl/simulator.hpp"
#include "hypctrl/times.hpp"

namespace hypctrl::cli {

using json = nlohmann::json;

/// Parsed INI file. Sections and keys are checked against a fixed schema.
class ExperimentConfig {
public:
    static ExperimentConfig load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw Error(ErrorCode::ConfigError, "cannot open config file '" + path + "'");
        return parse(is);
    }

    static ExperimentConfig parse(std::istream& is) {
        ExperimentConfig cfg;
        try {
            boost::property_tree::ini_parser::read_ini(is, cfg.tree_);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw Error(ErrorCode::ConfigError, std::string("malformed config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
        }
        cfg.check_schema();
        return cfg;
    }

    bool has(const std::string& section, const std::string& key) const {
        const auto sec = tree_.get_child_optional(section);
        return sec && sec->find(key) != sec->not_found();
    }

    std::optional<std::string> raw(const std::string& section, const std::string& key) const {
        if (!has(section, key)) return std::nullopt;
        return tree_.get_child(section).find(key)->second.data();
    }

    std::string text(const std::string& section, const std::string& key, const std::string& fallback) const {
        return raw(section, key).value_or(fallback);
    }

    double number(const std::string& section, const std::string& key, double fallback) const {
        const auto v = raw(section, key);
        return v ? to_number(*v, section, key) : fallback;
    }

    std::size_t count(const std::string& section, const std::string& key, std::size_t fallback) const {
        const auto v = raw(section, key);
        if (!v) return fallback;
        const double d = to_number(*v, section, key);
        if (d < 0 || d != std::floor(d)) throw Error(ErrorCode::ConfigError, "[" + section + "] " + key + ": expected a non-negative integer");
        return static_cast<std::size_t>(d);
    }

    bool flag(const std::string& section, const std::string& key, bool fallback) const {
        const auto v = raw(section, key);
        if (!v) return fallback;
        if (*v == "true" || *v == "1" || *v == "yes") return true;
        if (*v == "false" || *v == "0" || *v == "no") return false;
        throw Error(ErrorCode::ConfigError, "[" + section + "] " + key + ": expected true/false");
    }

    /// "a b c", "a, b, c" or "lo:hi:count".
    std::vector<double> list(const std::string& section, const std::string& key, std::vector<double> fallback) const {
        const auto v = raw(section, key);
        if (!v) return fallback;
        return to_list(*v, section, key);
    }

    static double to_number(const std::string& s, const std::string& section, const std::string& key) {
        std::size_t used = 0;
        double d = 0.0;
        try {
            d = std::stod(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
        if (used == 0 || used != s.size() || !std::isfinite(d)) {
            throw Error(ErrorCode::ConfigError, "[" + section + "] " + key + ": expected a number, got '" + s + "'");
        }
        return d;
    }

    static std::vector<double> to_list(const std::string& s, const std::string& section, const std::string& key) {
        if (std::count(s.begin(), s.end(), ':') == 2) {
            std::vector<std::string> parts;
            std::stringstream ss(s);
            for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
            const double lo = to_number(parts[0], section, key), hi = to_number(parts[1], section, key);
            const double c = to_number(parts[2], section, key);
            if (c < 1 || c != std::floor(c)) throw Error(ErrorCode::ConfigError, "[" + section + "] " + key + ": range count must be a positive integer");
            std::vector<double> out;
            const auto cnt = static_cast<std::size_t>(c);
            for (std::size_t i = 0; i < cnt; ++i) out.push_back(cnt == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cnt - 1));
            return out;
        }
        std::string t = s;
        std::replace(t.begin(), t.end(), ',', ' ');
        std::stringstream ss(t);
        std::vector<double> out;
        for (std::string p; ss >> p;) out.push_back(to_number(p, section, key));
        if (out.empty()) throw Error(ErrorCode::ConfigError, "[" + section + "] " + key + ": empty list");
        return out;
    }

private:
    void check_schema() const {
        static const std::map<std::string, std::regex> schema{
            {"system", std::regex("k|m|cells")},
            {"speeds", std::regex("lambda[1-9][0-9]*")},
            {"coupling", std::regex("gamma|c[1-9][0-9]*_[1-9][0-9]*")},
            {"boundary", std::regex("b[1-9][0-9]*_[1-9][0-9]*")},
            {"grid", std::regex("N|cfl|T")},
            {"initial", std::regex("w[1-9][0-9]*")},
            {"control", std::regex("W[1-9][0-9]*")},
            {"simulate", std::regex("snap_times")},
            {"dual", std::regex("T|source|v[1-9][0-9]*")},
            {"kernel", std::regex("NK|tol|max_iters")},
            {"feedback", std::regex("T|delta|strict")},
            {"nullctrl", std::regex("T|P|reg")},
            {"witness", std::regex("T|trials|amplitude")},
            {"observability", std::regex("T|samples|source")},
            {"sweep", std::regex("gamma|entry|values|T|T_offset|P|reg")},
            {"run", std::regex("seed|jobs")},
        };
        for (const auto& [section, body] : tree_) {
            const auto it = schema.find(section);
            if (it == schema.end()) {
                if (!body.data().empty()) throw Error(ErrorCode::ConfigError, "unknown key '" + section + "' outside any section");
                throw Error(ErrorCode::ConfigError, "unknown section [" + section + "]");
            }
            for (const auto& [key, value] : body) {
                if (!std::regex_match(key, it->second)) throw Error(ErrorCode::ConfigError, "unknown key '" + key + "' in [" + section + "]");
                if (!value.empty()) throw Error(ErrorCode::ConfigError, "nested entry under '" + key + "' in [" + section + "]");
            }
        }
    }

    boost::property_tree::ptree tree_;
};

/// Command-line values that override the config file.
struct Overrides {
    std::string config;
    std::string out;
    bool json = false;
    std::optional<double> T, reg, delta, tol;
    std::optional<std::size_t> N, samples, NK, P, jobs;
    std::optional<std::uint64_t> seed;
    std::string snap_times;
};

namespace detail {

inline std::string fixed6(double v) {
    std::string s = fmt::format("{:.6f}", v);
    if (s.find('.') != std::string::npos) {
        while (!s.empty() && s.back() == '0') s.pop_back();
        if (!s.empty() && s.back() == '.') s.pop_back();
    }
    return s;
}

inline std::string vec_text(const VectorXd& v) {
    std::string out = "(";
    for (Eigen::Index i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fixed6(v[i]);
    return out + ")";
}

inline json to_json(const VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline std::size_t system_size(const ExperimentConfig& cfg, std::size_t& k, std::size_t& m) {
    if (!cfg.has("system", "k")) throw Error(ErrorCode::ConfigError, "[system] k is required");
    if (!cfg.has("system", "m")) throw Error(ErrorCode::ConfigError, "[system] m is required");
    k = cfg.count("system", "k", 0);
    m = cfg.count("system", "m", 0);
    if (k < 1 || m < 1) throw Error(ErrorCode::ConfigError, "[system] k and m must be >= 1");
    return k + m;
}

inline Expression expression(const ExperimentConfig& cfg, const std::string& section, const std::string& key, const std::string& fallback,
                             std::size_t n) {
    const std::string src = cfg.text(section, key, fallback);
    try {
        Expression e = Expression::parse(src);
        if (e.max_state_index() > n) throw Error(ErrorCode::ConfigError, "[" + section + "] " + key + " references a state component beyond n");
        return e;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ParseError) throw Error(ErrorCode::ConfigError, "[" + section + "] " + key + ": " + e.what());
        throw;
    }
}

/// Keys of the form <prefix><i>_<j> must stay inside the given bounds.
inline void check_indices(const ExperimentConfig& cfg, const std::string& section, char prefix, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 1; i <= 64; ++i)
        for (std::size_t j = 1; j <= 64; ++j) {
            const std::string key = std::string(1, prefix) + std::to_string(i) + "_" + std::to_string(j);
            if (cfg.has(section, key) && (i > rows || j > cols)) {
                throw Error(ErrorCode::ConfigError, "[" + section + "] " + key + " is outside the " + std::to_string(rows) + "x" + std::to_string(cols) + " matrix");
            }
        }
}

}  // namespace detail

inline SpeedProfile build_speeds(const ExperimentConfig& cfg) {
    std::size_t k = 0, m = 0;
    const std::size_t n = detail::system_size(cfg, k, m);
    SpeedProfile p{k, m, {}};
    for (std::size_t i = 1; i <= n; ++i) {
        const std::string key = "lambda" + std::to_string(i);
        const auto v = cfg.raw("speeds", key);
        if (!v) throw Error(ErrorCode::ConfigError, "[speeds] " + key + " is required");
        const std::string prefix = "samples:";
        if (v->rfind(prefix, 0) == 0) {
            p.lambda.push_back(ScalarProfile::sampled(ExperimentConfig::to_list(v->substr(prefix.size()), "speeds", key)));
        } else {
            p.lambda.push_back(ScalarProfile::expression(detail::expression(cfg, "speeds", key, "", n)));
        }
    }
    for (std::size_t i = n + 1; i <= 64; ++i)
        if (cfg.has("speeds", "lambda" + std::to_string(i))) throw Error(ErrorCode::ConfigError, "[speeds] lambda" + std::to_string(i) + " exceeds n = " + std::to_string(n));
    return p;
}

inline CouplingField build_coupling(const ExperimentConfig& cfg, std::size_t n) {
    detail::check_indices(cfg, "coupling", 'c', n, n);
    const double gamma = cfg.number("coupling", "gamma", 1.0);
    std::vector<Expression> entries;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= n; ++j) {
            const std::string key = "c" + std::to_string(i) + "_" + std::to_string(j);
            Expression e = detail::expression(cfg, "coupling", key, "0", n);
            if (e.uses_state()) throw Error(ErrorCode::ConfigError, "[coupling] " + key + " must not depend on the state");
            entries.push_back(std::move(e));
        }
    return CouplingField::expressions(n, std::move(entries), gamma);
}

inline MatrixXd build_boundary(const ExperimentConfig& cfg, std::size_t k, std::size_t m) {
    detail::check_indices(cfg, "boundary", 'b', k, m);
    MatrixXd B = MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
    for (std::size_t i = 1; i <= k; ++i)
        for (std::size_t j = 1; j <= m; ++j)
            B(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(j - 1)) = cfg.number("boundary", "b" + std::to_string(i) + "_" + std::to_string(j), 0.0);
    return B;
}

inline SystemSpec build_system(const ExperimentConfig& cfg) {
    const SpeedProfile speeds = build_speeds(cfg);
    const CouplingField coupling = build_coupling(cfg, speeds.n());
    const MatrixXd B = build_boundary(cfg, speeds.k, speeds.m);
    ValidationOptions vo;
    vo.cells = cfg.count("system", "cells", vo.cells);
    return validate_system(speeds, coupling, ReflectionMatrix{B}, vo);
}

inline GridSpec build_grid(const ExperimentConfig& cfg, const Overrides& o) {
    GridSpec g;
    g.N = o.N.value_or(cfg.count("grid", "N", g.N));
    g.cfl = cfg.number("grid", "cfl", g.cfl);
    g.T = o.T.value_or(cfg.number("grid", "T", g.T));
    g.validate();
    return g;
}

inline StateField build_field(const ExperimentConfig& cfg, const std::string& section, const std::string& prefix, std::size_t n,
                              std::size_t N) {
    StateField s(n, N);
    for (std::size_t i = 1; i <= n; ++i) {
        const Expression e = detail::expression(cfg, section, prefix + std::to_string(i), "0", 0);
        for (std::size_t q = 0; q <= N; ++q) s.values(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(q)) = e(static_cast<double>(q) / static_cast<double>(N));
    }
    for (std::size_t i = n + 1; i <= 64; ++i)
        if (cfg.has(section, prefix + std::to_string(i))) throw Error(ErrorCode::ConfigError, "[" + section + "] " + prefix + std::to_string(i) + " exceeds n = " + std::to_string(n));
    if (!s.all_finite()) throw Error(ErrorCode::ConfigError, "[" + section + "] evaluates to non-finite values");
    return s;
}

inline BoundaryClosure build_control(const ExperimentConfig& cfg, std::size_t m) {
    std::vector<Expression> exprs;
    for (std::size_t j = 1; j <= m; ++j) exprs.push_back(detail::expression(cfg, "control", "W" + std::to_string(j), "0", 0));
    for (std::size_t j = m + 1; j <= 64; ++j)
        if (cfg.has("control", "W" + std::to_string(j))) throw Error(ErrorCode::ConfigError, "[control] W" + std::to_string(j) + " exceeds m = " + std::to_string(m));
    return [exprs](double t, const StateField&, const StepContext&) {
        VectorXd v(static_cast<Eigen::Index>(exprs.size()));
        for (std::size_t j = 0; j < exprs.size(); ++j) v[static_cast<Eigen::Index>(j)] = exprs[j](Bindings{0.0, t, {}});
        return v;
    };
}

inline std::uint64_t seed_of(const ExperimentConfig& cfg, const Overrides& o) {
    return o.seed.value_or(static_cast<std::uint64_t>(cfg.count("run", "seed", 12345)));
}

inline std::size_t jobs_of(const ExperimentConfig& cfg, const Overrides& o) {
    if (o.jobs) return std::max<std::size_t>(1, *o.jobs);
    if (cfg.has("run", "jobs")) return std::max<std::size_t>(1, cfg.count("run", "jobs", 1));
    if (const char* env = std::getenv("HYPCTRL_JOBS")) {
        try {
            return std::max<std::size_t>(1, static_cast<std::size_t>(std::stoul(env)));
        } catch (const std::exception&) {
            throw Error(ErrorCode::ConfigError, "HYPCTRL_JOBS must be a positive integer");
        }
    }
    return 1;
}

/// Writes files under the --out directory; a no-op without --out.
class OutputDir {
public:
    explicit OutputDir(std::string dir) : dir_(std::move(dir)) {
        if (!dir_.empty()) std::filesystem::create_directories(dir_);
    }
    bool enabled() const { return !dir_.empty(); }
    std::string path(const std::string& name) const { return (std::filesystem::path(dir_) / name).string(); }

    template <class F>
    void write(const std::string& name, F&& body, bool binary = false) const {
        if (!enabled()) return;
        auto os = io::open_out(path(name), binary);
        body(os);
    }
    void write_json(const std::string& name, const json& j) const {
        write(name, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
    }

private:
    std::string dir_;
};

inline SourceMatrix source_for(const ExperimentConfig& cfg, const std::string& section, const SystemSpec& spec, const Overrides& o) {
    const std::string src = cfg.text(section, "source", "zero");
    if (src == "zero") return SourceMatrix::zero(spec.n());
    if (src != "kernel") throw Error(ErrorCode::ConfigError, "[" + section + "] source must be 'zero' or 'kernel'");
    const GaugedSystem g = preprocess_diagonal(spec);
    KernelOptions ko;
    ko.NK = o.NK.value_or(cfg.count("kernel", "NK", ko.NK));
    ko.fp_tolerance = o.tol.value_or(cfg.number("kernel", "tol", ko.fp_tolerance));
    ko.max_iters = cfg.count("kernel", "max_iters", ko.max_iters);
    return source_matrix(solve_kernel(g.spec, ko).K, g.spec, g.spec.B()).S;
}

inline int cmd_times(const ExperimentConfig& cfg, const Overrides& o, std::ostream& out) {
    const SystemSpec spec = build_system(cfg);
    const TimeReport r = time_report(spec, o.tol.value_or(1e-10));
    json j{{"k", r.k}, {"m", r.m}, {"tau", detail::to_json(r.tau)}, {"T1", r.T1}, {"T2", r.T2}, {"T_opt", r.Topt}};
    j["argmax"] = {{"negative", r.argmax.negative == OptimalTime::npos ? json(nullptr) : json(r.argmax.negative + 1)},
                   {"positive", r.argmax.positive + 1}};
    OutputDir(o.out).write_json("times.json", j);
    if (o.json) {
        out << j.dump() << '\n';
    } else {
        out << "tau = " << detail::vec_text(r.tau) << "; T1 = " << detail::fixed6(r.T1) << "; T2 = " << detail::fixed6(r.T2)
            << "; T_opt = " << detail::fixed6(r.Topt) << '\n';
    }
    return 0;
}

inline int cmd_check_b(const ExperimentConfig& cfg, const Overrides& o, std::ostream& out) {
    std::size_t k = 0, m = 0;
    detail::system_size(cfg, k, m);
    const MatrixXd B = build_boundary(cfg, k, m);
    if (!B.allFinite()) throw Error(ErrorCode::NonFiniteEntry, "boundary matrix has non-finite entries");
    const ClassReport r = classify(B);
    json minors = json::array();
    for (std::size_t i = 0; i < r.minors.size(); ++i)
        minors.push_back({{"order", i + 1}, {"determinant", r.minors[i].determinant}, {"rcond", r.minors[i].rcond}, {"invertible", r.minors[i].invertible}});
    const json j{{"in_B", r.in_B}, {"in_Be", r.in_Be}, {"minors", minors}, {"diagnostic", r.diagnostic}};
    OutputDir(o.out).write_json("check_b.json", j);
    if (o.json) {
        out << j.dump() << '\n';
    } else {
        out << "in B: " << (r.in_B ? "yes" : "no") << "; in B_e: " << (r.in_Be ? "yes" : "no") << '\n';
    }
    return 0;
}

inline int cmd_simulate(const ExperimentConfig& cfg, const Overrides& o, std::ostream& out) {
    const SystemSpec spec = build_system(cfg);
    const GridSpec grid = build_grid(cfg, o);
    const StateField w0 = build_field(cfg, "initial", "w", spec.n(), grid.N);
    std::vector<double> snaps = o.snap_times.empty() ? cfg.list("simulate", "snap_times", {}) : ExperimentConfig::to_list(o.snap_times, "flag", "--snap-times");
    std::sort(snaps.begin(), snaps.end());
    for (double s : snaps)
        if (s < 0.0 || s > grid.T) throw Error(ErrorCode::ConfigError, "[simulate] snap_times entries must lie in [0, T]");

    std::vector<StateField> captured;
    std::size_t next = 0;
    SimulationOptions so;
    so.record_snapshots = false;
    double dt_est = 0.0;
    so.observer = [&](const StateField& s, std::size_t step) {
        if (step == 1) dt_est = s.t;
        while (next < snaps.size() && (s.t >= snaps[next] - 0.5 * dt_est - 1e-12 || (step > 0 && s.t >= grid.T - 1e-12))) {
            captured.push_back(s);
            ++next;
        }
    };
    if (!snaps.empty() && snaps.front() <= 0.0) {
        captured.push_back(w0);
        ++next;
    }
    const Trajectory traj = solve_forward(spec, w0, build_control(cfg, spec.m()), grid, so);
    const OutputDir dir(o.out);
    const std::size_t stride = std::max<std::size_t>(1, traj.norms.size() / 1000);
    dir.write("norms.csv", [&](std::ostream& os) { io::write_norms_csv(os, traj.norms, stride); });
    for (std::size_t i = 0; i < captured.size(); ++i) {
        dir.write(fmt::format("snapshot_{}.csv", i), [&](std::ostream& os) { io::write_snapshot_csv(os, captured[i]); });
    }
    dir.write("final.bin", [&](std::ostream& os) { io::write_snapshot_binary(os, traj.final_state); }, true);
    const json j{{"steps", traj.steps}, {"dt", traj.dt}, {"T", grid.T}, {"N", grid.N},
                 {"final_l2", traj.final_state.l2_norm()}, {"final_linf", traj.final_state.max_norm()},
                 {"snapshot_times", [&] {
                      json a = json::array();
                      for (const auto& s : captured) a.push_back(s.t);
                      return a;
                  }()}};
    dir.write_json("simulate.json", j);
    if (o.json) {
        out << j.dump() << '\n';
    } else {
        out << "simulated " << traj.steps << " steps to T = " << io::num(grid.T) << "; final L2 = " << io::num(traj.final_state.l2_norm())
            << ", sup = " << io::num(traj.final_state.max_norm()) << '\n';
    }
    return 0;
}

inline int cmd_dual(const ExperimentConfig& cfg, const Overrides& o, std::ostream& out) {
    const SystemSpec spec = build_system(cfg);
    GridSpec grid = build_grid(cfg, o);
    const double T = o.T.value_or(cfg.number("dual", "T", grid.T));
    grid.T = T;
    const StateField v0 = build_field(cfg, "dual", "v", spec.n(), grid.N);
    const SourceMatrix S = source_for(cfg, "dual", spec, o);
    SimulationOptions so;
    so.record_snapshots = false;
    const DualTrajectory d = solve_dual(spec, S, DualState{v0.values, 0.0}, T, grid, so);
    const OutputDir dir(o.out);
    dir.write("observation.csv", [&](std::ostream& os) {
        os << "t";
        for (std::size_t j = 0; j < spec.m(); ++j) os << ",v" << spec.k() + j + 1;
        os << '\n';
        for (std::size_t s = 0; s < d.times.size(); ++s) {
            os << io::num(d.times[s]);
            for (Eigen::Index j = 0; j < d.observation[s].size(); ++j) os << ',' << io::num(d.observation[s][j]);
            os << '\n';
        }
    });
    dir.write("final.csv", [&](std::ostream& os) { io::write_snapshot_csv(os, StateField(d.final_state.v, d.final_state.t), "v"); });
    const double fe = l2_energy(d.final_state.v);
    const json j{{"T", T}, {"steps", d.steps}, {"observed_energy", d.observed_energy()}, {"final_energy", fe}, {"initial_energy", l2_energy(v0.values)}};
    dir.write_json("dual.json", j);
    if (o.json) {
        out << j.dump() << '\n';
    } else {
        out << "dual solved to t = -" << io::num(T) << "; observed energy = " << io::num(d.observed_energy()) << ", final energy = " << io::num(fe) << '\n';
    }
    return 0;
}

inline int cmd_kernel(const ExperimentConfig& cfg, const Overrides& o, std::ostream& out) {
    const SystemSpec spec = build_system(cfg);
    const GaugedSystem g = preprocess_diagonal(spec);
    KernelOptions ko;
    ko.NK = o.NK.value_or(cfg.count("kernel", "NK", ko.NK));
    ko.fp_tolerance = o.tol.value_or(cfg.number("kernel", "tol", ko.fp_tolerance));
    ko.max_iters = cfg.count("kernel", "max_iters", ko.max_iters);
    const KernelSolution sol = solve_kernel(g.spec, ko);
    const SourceMatrixReport S = source_matrix(sol.K, g.spec, g.spec.B());
    const OutputDir dir(o.out);
    dir.write("kernel.csv", [&](std::ostream& os) { write_kernel_csv(os, sol.K); });
    dir.write("source.csv", [&](std::ostream& os) { write_source_csv(os, S.S); });
    const json j{{"NK", ko.NK},
                 {"iterations", sol.diagnostics.iterations},
                 {"sup_changes", sol.diagnostics.sup_changes},
                 {"pde_residual", sol.diagnostics.pde_residual},
                 {"diagonal_defect", sol.diagnostics.diagonal_defect},
                 {"lower_triangle_max", S.lower_triangle_max},
                 {"leading_columns_max", S.leading_columns_max},
                 {"gauge_applied", !g.gauge.identity()}};
    dir.write_json("kernel.json", j);
    if (o.json) {
        out << j.dump() << '\n';
    } else {
        out << "kernel N_K = " << ko.NK << ": " << sol.diagnostics.iterations << " iterations, PDE residual " << io::num(sol.diagnostics.pde_residual)
            << ", max lower S++ " << io::num(S.lower_triangle_max) << '\n';
    }
    return 0;
}

inline int cmd_feedback(const ExperimentConfig& cfg, const Overrides& o, std::ostream& out) {
    const SystemSpec spec = build_system(cfg);
    GridSpec grid = build_grid(cfg, o);
    grid.T = o.T.value_or(cfg.number("feedback", "T", grid.T));
    const StateField w0 = build_field(cfg, "initial", "w", spec.n(), grid.N);
    FeedbackOptions fo;
    fo.strict = cfg.flag("feedback", "strict", false);
    if (o.delta) {
        fo.delta = o.delta;
    } else if (cfg.has("feedback", "delta")) {
        fo.delta = cfg.number("feedback", "delta", 0.0);
    }
    const FeedbackLaw law = synthesize_feedback(spec, grid.T, w0, fo);
    SimulationOptions so;
    so.record_snapshots = false;
    const ClosedLoopReport r = run_closed_loop(spec, law, w0, grid, so);
    const OutputDir dir(o.out);
    const std::size_t stride = std::max<std::size_t>(1, r.trajectory.norms.size() / 1000);
    dir.write("norms.csv", [&](std::ostream& os) { io::write_norms_csv(os, r.trajectory.norms, stride); });
    dir.write("final.bin", [&](std::ostream& os) { io::write_snapshot_binary(os, r.trajectory.final_state); }, true);
    const json j{{"T", grid.T},
                 {"T_opt", law.Topt()},
                 {"delta", law.delta()},
                 {"initial_sup", r.initial_norm},
                 {"terminal_sup", r.terminal_norm},
                 {"terminal_relative", r.terminal_relative},
                 {"t_below_1e-2", r.t_below_1e2 ? json(*r.t_below_1e2) : json(nullptr)},
                 {"t_below_1e-3", r.t_below_1e3 ? json(*r.t_below_1e3) : json(nullptr)},
                 {"delays", detail::to_json(law.delays())},
                 {"warnings", law.warnings()}};
    dir.write_json("feedback.json", j);
    if (o.json) {
        out << j.dump() << '\n';
    } else {
        out << "closed loop to T = " << io::num(grid.T) << " (T_opt = " << io::num(law.Topt()) << "): terminal relative sup-norm "
            << io::num(r.terminal_relative) << (law.warnings().empty() ? "" : " [compatibility warning]") << '\n';
    }
    return 0;
}

inline NullControlOptions nullctrl_options(const ExperimentConfig& cfg, const Overrides& o, const std::string& section) {
    NullControlOptions no;
    no.P = o.P.value_or(cfg.count(section, "P", cfg.count("nullctrl", "P", no.P)));
    no.reg = o.reg.value_or(cfg.number(section, "reg", cfg.number("nullctrl", "reg", no.reg)));
    return no;
}

inline int cmd_nullctrl(const ExperimentConfig& cfg, const Overrides& o, std::ostream& out) {
    const SystemSpec spec = build_system(cfg);
    GridSpec grid = build_grid(cfg, o);
    grid.T = o.T.value_or(cfg.number("nullctrl", "T", grid.T));
    const StateField w0 = build_field(cfg, "initial", "w", spec.n(), grid.N);
    const NullControlResult r = null_control_openloop(spec, w0, grid.T, grid, nullctrl_options(cfg, o, "nullctrl"));
    const OutputDir dir(o.out);
    dir.write("control.csv", [&](std::ostream& os) { io::write_control_csv(os, r.control, spec.k()); });
    const json j{{"T", grid.T}, {"residual", r.residual}, {"condition", detail::finite_or_null(r.condition)}, {"ill_conditioned", r.ill_conditioned}};
    dir.write_json("nullctrl.json", j);
    if (o.json) {
        out << j.dump() << '\n';
    } else {
        out << "null control at T = " << io::num(grid.T) << ": terminal relative residual " << io::num(r.residual) << ", condition "
            << io::num(r.condition) << (r.ill_conditioned ? " (ill-conditioned)" : "") << '\n';
    }
    return 0;
}

/// Random piecewise-linear control on 17 equispaced knots over [0, T].
inline ControlSignal random_control(std::mt19937_64& rng, std::size_t m, double T, double scale = 1.0) {
    std::normal_distribution<double> gauss(0.0, scale);
    ControlSignal c;
    const std::size_t knots = 17;
    for (std::size_t p = 0; p < knots; ++p) c.times.push_back(T * static_cast<double>(p) / static_cast<double>(knots - 1));
    c.values = MatrixXd(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(knots));
    for (std::size_t p = 0; p < knots; ++p)
        for (std::size_t j = 0; j < m; ++j) c.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(p)) = gauss(rng);
    return c;
}

inline int cmd_witness(const ExperimentConfig& cfg, const Overrides& o, std::ostream& out) {
    const SystemSpec spec = build_system(cfg);
    GridSpec grid = build_grid(cfg, o);
    grid.T = o.T.value_or(cfg.number("witness", "T", grid.T));
    const double amplitude = cfg.number("witness", "amplitude", 1.0);
    const std::size_t trials = o.samples.value_or(cfg.count("witness", "trials", 20));
    const WitnessResult w = optimality_witness(spec, grid.T, grid.N, amplitude);
    SimulationOptions so;
    so.record_snapshots = false;
    auto probe = [&](const BoundaryClosure& ctl) {
        return solve_forward(spec, w.w0, ctl, grid, so).final_state.at(w.probe.component, w.probe.x);
    };
    const double free = probe(zero_control(spec.m()));
    std::mt19937_64 rng(seed_of(cfg, o));
    double worst = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const double v = probe(control_closure(random_control(rng, spec.m(), grid.T)));
        worst = std::max(worst, std::abs(v - free) / std::max(std::abs(free), 1e-300));
    }
    const OutputDir dir(o.out);
    dir.write("witness_w0.csv", [&](std::ostream& os) { io::write_snapshot_csv(os, w.w0); });
    const json j{{"T", grid.T},
                 {"probe", {{"component", w.probe.component + 1}, {"x", w.probe.x}, {"expected", w.probe.expected}}},
                 {"free_value", free},
                 {"trials", trials},
                 {"max_relative_deviation", worst},
                 {"description", w.description}};
    dir.write_json("witness.json", j);
    if (o.json) {
        out << j.dump() << '\n';
    } else {
        out << "witness: probe w" << w.probe.component + 1 << "(T, " << io::num(w.probe.x) << ") expected " << io::num(w.probe.expected)
            << ", free " << io::num(free) << ", max relative deviation over " << trials << " random controls " << io::num(worst) << '\n';
    }
    return 0;
}

inline int cmd_observability(const ExperimentConfig& cfg, const Overrides& o, std::ostream& out) {
    const SystemSpec spec = build_system(cfg);
    GridSpec grid = build_grid(cfg, o);
    grid.T = o.T.value_or(cfg.number("observability", "T", grid.T));
    ObservabilityOptions oo;
    oo.samples = o.samples.value_or(cfg.count("observability", "samples", oo.samples));
    oo.seed = seed_of(cfg, o);
    const SourceMatrix S = source_for(cfg, "observability", spec, o);
    const ObservabilityReport r = verify_observability(spec, S, grid.T, grid, oo);
    json ratios = json::array();
    for (double v : r.ratios) ratios.push_back(detail::finite_or_null(v));
    const json j{{"T", grid.T}, {"estimate", detail::finite_or_null(r.estimate)}, {"all_exhausted", r.all_exhausted()},
                 {"evaluated", r.evaluated}, {"exhausted", r.exhausted}, {"argmin", r.argmin}, {"ratios", ratios}};
    OutputDir(o.out).write_json("observability.json", j);
    if (o.json) {
        out << j.dump() << '\n';
    } else {
        out << "observability constant estimate at T = " << io::num(grid.T) << ": "
            << (std::isfinite(r.estimate) ? io::num(r.estimate) : std::string("inf (all samples exhausted)")) << " over " << r.ratios.size()
            << " samples\n";
    }
    return 0;
}

inline int cmd_sweep(const ExperimentConfig& cfg, const Overrides& o, std::ostream& out) {
    const SpeedProfile speeds = build_speeds(cfg);
    const std::size_t n = speeds.n(), k = speeds.k, m = speeds.m;
    const CouplingField base_coupling = build_coupling(cfg, n);
    const MatrixXd base_B = build_boundary(cfg, k, m);
    GridSpec grid = build_grid(cfg, o);
    const StateField w0 = build_field(cfg, "initial", "w", n, grid.N);
    const std::vector<double> gammas = cfg.list("sweep", "gamma", {base_coupling.gamma()});
    const std::string entry = cfg.text("sweep", "entry", "");
    std::vector<double> values{0.0};
    std::size_t bi = 0, bj = 0;
    if (!entry.empty()) {
        std::smatch mt;
        if (!std::regex_match(entry, mt, std::regex("b([1-9][0-9]*)_([1-9][0-9]*)"))) throw Error(ErrorCode::ConfigError, "[sweep] entry must name a boundary entry like b1_1");
        bi = std::stoul(mt[1]) - 1;
        bj = std::stoul(mt[2]) - 1;
        if (bi >= k || bj >= m) throw Error(ErrorCode::ConfigError, "[sweep] entry " + entry + " is outside B");
        if (!cfg.has("sweep", "values")) throw Error(ErrorCode::ConfigError, "[sweep] values is required with entry");
        values = cfg.list("sweep", "values", {});
    }
    const NullControlOptions no = nullctrl_options(cfg, o, "sweep");
    double T = grid.T;
    {
        const SystemSpec probe = validate_system(speeds, base_coupling, ReflectionMatrix{base_B});
        if (cfg.has("sweep", "T_offset")) {
            T = optimal_time(travel_times(probe), k, m) + cfg.number("sweep", "T_offset", 0.0);
        } else {
            T = cfg.number("sweep", "T", T);
        }
        if (o.T) T = *o.T;
    }
    grid.T = T;

    struct Row {
        double gamma, b, residual, condition;
    };
    std::vector<std::pair<double, double>> points;
    for (double g : gammas)
        for (double b : values) points.emplace_back(g, b);
    std::vector<Row> rows(points.size());
    std::atomic<std::size_t> cursor{0};
    auto worker = [&] {
        for (std::size_t idx; (idx = cursor.fetch_add(1)) < points.size();) {
            const auto [g, b] = points[idx];
            Row row{g, b, std::nan(""), std::nan("")};
            try {
                MatrixXd B = base_B;
                if (!entry.empty()) B(static_cast<Eigen::Index>(bi), static_cast<Eigen::Index>(bj)) = b;
                const SystemSpec spec = validate_system(speeds, base_coupling.with_gamma(g), ReflectionMatrix{B});
                const NullControlResult r = null_control_openloop(spec, w0, T, grid, no);
                row.residual = r.residual;
                row.condition = r.condition;
            } catch (const std::exception&) {
                // failed points stay NaN
            }
            rows[idx] = row;
        }
    };
    const std::size_t jobs = std::min(jobs_of(cfg, o), std::max<std::size_t>(1, points.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < jobs; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::ostringstream csv;
    csv << "gamma," << (entry.empty() ? "b" : entry) << ",residual,condition\n";
    std::size_t failed = 0;
    double worst = 0.0;
    for (const auto& r : rows) {
        csv << io::num(r.gamma) << ',' << io::num(r.b) << ',' << io::num(r.residual) << ',' << io::num(r.condition) << '\n';
        if (std::isnan(r.residual)) {
            ++failed;
        } else {
            worst = std::max(worst, r.residual);
        }
    }
    OutputDir(o.out).write("sweep.csv", [&](std::ostream& os) { os << csv.str(); });
    if (o.json) {
        out << json{{"points", rows.size()}, {"failed", failed}, {"max_residual", worst}, {"T", T}}.dump() << '\n';
    } else {
        out << "sweep over " << rows.size() << " points at T = " << io::num(T) << ": max residual " << io::num(worst) << ", failed " << failed << '\n';
    }
    return 0;
}

inline int dispatch(const std::string& command, const Overrides& o, std::ostream& out) {
    const ExperimentConfig cfg = ExperimentConfig::load(o.config);
    if (command == "times") return cmd_times(cfg, o, out);
    if (command == "check-b") return cmd_check_b(cfg, o, out);
    if (command == "simulate") return cmd_simulate(cfg, o, out);
    if (command == "dual") return cmd_dual(cfg, o, out);
    if (command == "kernel") return cmd_kernel(cfg, o, out);
    if (command == "feedback") return cmd_feedback(cfg, o, out);
    if (command == "nullctrl") return cmd_nullctrl(cfg, o, out);
    if (command == "witness") return cmd_witness(cfg, o, out);
    if (command == "observability") return cmd_observability(cfg, o, out);
    return cmd_sweep(cfg, o, out);
}

/// Runs one CLI invocation; args excludes the program name.
/// Exit codes: 0 success, 1 usage error, 2 validation error, 3 numerical failure.
inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Boundary control toolkit for 1-D hyperbolic systems", "hypctrl"};
    app.require_subcommand(1);
    app.fallthrough();
    Overrides o;
    app.add_option("--config,-c", o.config, "INI configuration file")->required();
    app.add_option("--out,-o", o.out, "output directory");
    app.add_flag("--json", o.json, "print the summary as JSON");
    app.add_option("--T", o.T, "time horizon");
    app.add_option("--N", o.N, "grid cells");
    app.add_option("--samples", o.samples, "Monte Carlo samples / witness trials");
    app.add_option("--reg", o.reg, "Tikhonov parameter (relative)");
    app.add_option("--delta", o.delta, "ramp parameter delta");
    app.add_option("--seed", o.seed, "random seed");
    app.add_option("--jobs", o.jobs, "worker threads for sweeps (default $HYPCTRL_JOBS or 1)");
    app.add_option("--NK", o.NK, "kernel resolution");
    app.add_option("--tol", o.tol, "tolerance (quadrature or kernel fixed point)");
    app.add_option("--P", o.P, "control segments per channel");
    app.add_option("--snap-times", o.snap_times, "snapshot times, e.g. \"0.5,1\"");
    const std::vector<std::pair<std::string, std::string>> commands{
        {"times", "travel times and optimal control time"},
        {"check-b", "trailing-minor classification of B"},
        {"simulate", "forward simulation with configured controls"},
        {"dual", "backward dual simulation"},
        {"kernel", "backstepping kernel and source matrix"},
        {"feedback", "finite-time feedback, closed loop"},
        {"nullctrl", "open-loop least-squares null control"},
        {"witness", "optimality witness below T_opt"},
        {"observability", "Monte Carlo observability constant"},
        {"sweep", "null-control residual map over (gamma, B entry)"},
    };
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << app.help();
        return 1;
    }
    std::string command;
    for (const auto* sub : app.get_subcommands()) command = sub->get_name();
    try {
        return dispatch(command, o, out);
    } catch (const Error& e) {
        err << command << ": " << e.what() << '\n';
        return is_validation_error(e.code()) ? 2 : 3;
    } catch (const std::filesystem::filesystem_error& e) {
        err << command << ": " << e.what() << '\n';
        return 2;
    }
}

inline int run_command(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_command(args, out, err);
}

}  // namespace hypctrl::cli
