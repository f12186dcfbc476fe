#pragma once

/**
 * @file config.hpp
 * @brief Run configuration: INI-style text with sections [model], [grid], [flow], [run].
 *
 *   # comment            ; also a comment
 *   [model]
 *   p = 3
 *
 * Every key maps to one field of RunConfig. Unknown sections, unknown keys,
 * duplicate keys and malformed values are errors. serialize() writes every
 * key, and parse_config(serialize(c)) == c.
 */

#include "qnls/dual_map.hpp"
#include "qnls/errors.hpp"
#include "qnls/flow_solver.hpp"
#include "qnls/model.hpp"
#include "qnls/reduced_grid.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace qnls {

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "QNLS_OUTPUT_ROOT";

struct GridSpec {
    double L = 8.0;
    int n = 128;

    bool operator==(const GridSpec&) const = default;
};

enum class StartKind { random, trial };

inline const char* to_string(StartKind s) { return s == StartKind::trial ? "trial" : "random"; }

struct RunOptions {
    std::string output_dir;
    Sector sector = Sector::antisymmetric;
    /// random: seeded Gaussian bumps; trial: (r1 - r2) exp(-|r|^2 / (2 b^2)) with b = trial_width.
    StartKind start = StartKind::random;
    double trial_width = 1.5;
    /// multisolve
    int k = 3;
    /// certify-dual
    long sample_count = 10000;
    /// probe and sweep; empty means [lambda] for probe and a log grid over [1e-2, 1e4] for sweep
    std::vector<double> lambda_grid;
    /// number of log-spaced trial widths in [2h, L/6]
    int probe_widths = 40;
    /// check-equivalence
    std::vector<int> grid_sizes{64, 128, 256};
    int trials = 5;
    /// worker threads for probe and sweep; 0 = hardware concurrency
    int threads = 0;

    bool operator==(const RunOptions&) const = default;
};

struct RunConfig {
    ModelParams model;
    GridSpec grid;
    FlowConfig flow;
    double newton_tol = 1e-12;
    int max_newton_iters = 100;
    RunOptions run;

    std::uint64_t seed() const { return flow.seed; }
    DualMap dual_map() const { return DualMap(newton_tol, max_newton_iters); }

    void validate() const {
        model.validate();
        if (!(grid.L > 0.0) || !std::isfinite(grid.L)) throw ParameterError("grid.L must be > 0");
        if (grid.n < 16) throw ParameterError("grid.n must be >= 16");
        flow.validate();
        DualMap(newton_tol, max_newton_iters);
        if (run.output_dir.empty()) throw ParameterError("run.output_dir must not be empty");
        if (!(run.trial_width > 0.0)) throw ParameterError("run.trial_width must be > 0");
        if (run.k < 1) throw ParameterError("run.k must be >= 1");
        if (run.sample_count < 1000) throw ParameterError("run.sample_count must be >= 1000");
        for (std::size_t i = 0; i < run.lambda_grid.size(); ++i) {
            if (!(run.lambda_grid[i] > 0.0)) throw ParameterError("run.lambda_grid values must be > 0");
            if (i > 0 && !(run.lambda_grid[i] > run.lambda_grid[i - 1]))
                throw ParameterError("run.lambda_grid must be increasing");
        }
        if (run.probe_widths < 1) throw ParameterError("run.probe_widths must be >= 1");
        if (run.grid_sizes.size() < 2) throw ParameterError("run.grid_sizes needs at least two sizes");
        for (std::size_t i = 0; i < run.grid_sizes.size(); ++i) {
            if (run.grid_sizes[i] < 16) throw ParameterError("run.grid_sizes values must be >= 16");
            if (i > 0 && run.grid_sizes[i] <= run.grid_sizes[i - 1])
                throw ParameterError("run.grid_sizes must be increasing");
        }
        if (run.trials < 5) throw ParameterError("run.trials must be >= 5");
        if (run.threads < 0) throw ParameterError("run.threads must be >= 0");
    }

    bool operator==(const RunConfig&) const = default;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    if (trim(text).empty()) return out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

template <class T>
T parse_int_in(const std::string& text, const std::string& what) {
    const long long v = parse_integer(text, what);
    if (v < static_cast<long long>(std::numeric_limits<T>::min()) ||
        v > static_cast<long long>(std::numeric_limits<T>::max()))
        throw ParameterError(what + ": value " + text + " is out of range");
    return static_cast<T>(v);
}

inline std::uint64_t parse_seed(const std::string& text) {
    std::uint64_t v = 0;
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || text.empty())
        throw ParameterError("run.seed: cannot parse '" + text + "' as a nonnegative integer");
    return v;
}

struct KeySpec {
    const char* section;
    const char* name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;

    std::string full() const { return std::string(section) + "." + name; }
};

template <class Get>
KeySpec make_real(const char* sec, const char* name, Get field) {
    const std::string what = std::string(sec) + "." + name;
    return {sec, name, [field, what](RunConfig& c, const std::string& v) { field(c) = parse_double(v, what); },
            [field](const RunConfig& c) { return format_double(field(c)); }};
}

template <class T, class Get>
KeySpec make_int(const char* sec, const char* name, Get field) {
    const std::string what = std::string(sec) + "." + name;
    return {sec, name, [field, what](RunConfig& c, const std::string& v) { field(c) = parse_int_in<T>(v, what); },
            [field](const RunConfig& c) { return std::to_string(field(c)); }};
}

inline const std::vector<KeySpec>& key_table() {
    static const std::vector<KeySpec> table = [] {
        std::vector<KeySpec> t;
        t.push_back(make_int<int>("model", "N", [](auto& c) -> auto& { return c.model.N; }));
        t.push_back(make_int<int>("model", "m", [](auto& c) -> auto& { return c.model.m; }));
        t.push_back(make_real("model", "p", [](auto& c) -> auto& { return c.model.p; }));
        t.push_back(make_real("model", "lambda", [](auto& c) -> auto& { return c.model.lambda; }));

        t.push_back(make_real("grid", "L", [](auto& c) -> auto& { return c.grid.L; }));
        t.push_back(make_int<int>("grid", "n", [](auto& c) -> auto& { return c.grid.n; }));

        t.push_back(make_real("flow", "step_init", [](auto& c) -> auto& { return c.flow.step_init; }));
        t.push_back(
            make_real("flow", "backtrack_factor", [](auto& c) -> auto& { return c.flow.backtrack_factor; }));
        t.push_back(make_real("flow", "armijo_c", [](auto& c) -> auto& { return c.flow.armijo_c; }));
        t.push_back(make_real("flow", "tol_grad", [](auto& c) -> auto& { return c.flow.tol_grad; }));
        t.push_back(make_real("flow", "tol_mass", [](auto& c) -> auto& { return c.flow.tol_mass; }));
        t.push_back(make_int<long>("flow", "max_iters", [](auto& c) -> auto& { return c.flow.max_iters; }));
        t.push_back(make_real("flow", "deflation_strength",
                              [](auto& c) -> auto& { return c.flow.deflation_strength; }));
        t.push_back({"flow", "preconditioner",
                     [](RunConfig& c, const std::string& v) { c.flow.preconditioner = preconditioner_from_string(v); },
                     [](const RunConfig& c) { return std::string(to_string(c.flow.preconditioner)); }});
        t.push_back(make_real("flow", "sobolev_shift", [](auto& c) -> auto& { return c.flow.sobolev_shift; }));
        t.push_back(make_real("flow", "step_max", [](auto& c) -> auto& { return c.flow.step_max; }));
        t.push_back(make_int<int>("flow", "max_starts", [](auto& c) -> auto& { return c.flow.max_starts; }));
        t.push_back(make_int<int>("flow", "newton_steps", [](auto& c) -> auto& { return c.flow.newton_steps; }));
        t.push_back(make_real("flow", "newton_tol", [](auto& c) -> auto& { return c.newton_tol; }));
        t.push_back(
            make_int<int>("flow", "max_newton_iters", [](auto& c) -> auto& { return c.max_newton_iters; }));

        t.push_back({"run", "seed", [](RunConfig& c, const std::string& v) { c.flow.seed = parse_seed(v); },
                     [](const RunConfig& c) { return std::to_string(c.flow.seed); }});
        t.push_back({"run", "output_dir", [](RunConfig& c, const std::string& v) { c.run.output_dir = v; },
                     [](const RunConfig& c) { return c.run.output_dir; }});
        t.push_back({"run", "sector", [](RunConfig& c, const std::string& v) { c.run.sector = sector_from_string(v); },
                     [](const RunConfig& c) { return std::string(to_string(c.run.sector)); }});
        t.push_back({"run", "start",
                     [](RunConfig& c, const std::string& v) {
                         if (v == "random") c.run.start = StartKind::random;
                         else if (v == "trial") c.run.start = StartKind::trial;
                         else throw ParameterError("run.start: unknown value '" + v + "' (expected random|trial)");
                     },
                     [](const RunConfig& c) { return std::string(to_string(c.run.start)); }});
        t.push_back(make_real("run", "trial_width", [](auto& c) -> auto& { return c.run.trial_width; }));
        t.push_back(make_int<int>("run", "k", [](auto& c) -> auto& { return c.run.k; }));
        t.push_back(
            make_int<long>("run", "sample_count", [](auto& c) -> auto& { return c.run.sample_count; }));
        t.push_back({"run", "lambda_grid",
                     [](RunConfig& c, const std::string& v) {
                         c.run.lambda_grid.clear();
                         for (const auto& item : split_list(v))
                             c.run.lambda_grid.push_back(parse_double(item, "run.lambda_grid"));
                     },
                     [](const RunConfig& c) {
                         std::string s;
                         for (std::size_t i = 0; i < c.run.lambda_grid.size(); ++i)
                             s += (i ? ", " : "") + format_double(c.run.lambda_grid[i]);
                         return s;
                     }});
        t.push_back(make_int<int>("run", "probe_widths", [](auto& c) -> auto& { return c.run.probe_widths; }));
        t.push_back({"run", "grid_sizes",
                     [](RunConfig& c, const std::string& v) {
                         c.run.grid_sizes.clear();
                         for (const auto& item : split_list(v))
                             c.run.grid_sizes.push_back(parse_int_in<int>(item, "run.grid_sizes"));
                     },
                     [](const RunConfig& c) {
                         std::string s;
                         for (std::size_t i = 0; i < c.run.grid_sizes.size(); ++i)
                             s += (i ? ", " : "") + std::to_string(c.run.grid_sizes[i]);
                         return s;
                     }});
        t.push_back(make_int<int>("run", "trials", [](auto& c) -> auto& { return c.run.trials; }));
        t.push_back(make_int<int>("run", "threads", [](auto& c) -> auto& { return c.run.threads; }));
        return t;
    }();
    return table;
}

inline const KeySpec& find_key(const std::string& section, const std::string& name) {
    for (const auto& k : key_table())
        if (section == k.section && name == k.name) return k;
    throw ParameterError("unknown key '" + name + "' in section [" + section + "]");
}

inline bool known_section(const std::string& s) {
    return s == "model" || s == "grid" || s == "flow" || s == "run";
}

}  // namespace detail

/// Default output root: $QNLS_OUTPUT_ROOT if set and nonempty, else "runs".
inline std::string default_output_root() {
    const char* env = std::getenv(kOutputRootEnv);
    return env && *env ? std::string(env) : std::string("runs");
}

/// Parses without validating; missing keys keep their defaults.
inline RunConfig parse_config_unvalidated(const std::string& text) {
    RunConfig cfg;
    cfg.run.output_dir = default_output_root();
    std::set<std::string> seen;
    std::string section;
    std::istringstream is(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(is, raw)) {
        ++line_no;
        const std::string line = detail::trim(raw);
        const std::string where = "line " + std::to_string(line_no) + ": ";
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ParameterError(where + "malformed section header '" + line + "'");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (!detail::known_section(section))
                throw ParameterError(where + "unknown section [" + section + "] (expected model, grid, flow, run)");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParameterError(where + "expected 'key = value', got '" + line + "'");
        if (section.empty()) throw ParameterError(where + "key outside of any section");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        const auto& spec = detail::find_key(section, key);
        if (!seen.insert(spec.full()).second) throw ParameterError(where + "duplicate key '" + spec.full() + "'");
        spec.set(cfg, value);
    }
    return cfg;
}

inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg = parse_config_unvalidated(text);
    cfg.validate();
    return cfg;
}

/**
 * Applies one "key=value" override. key is "section.key", or a bare key when
 * exactly one section has it.
 */
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ParameterError("--set expects key=value, got '" + assignment + "'");
    const std::string key = detail::trim(assignment.substr(0, eq));
    const std::string value = detail::trim(assignment.substr(eq + 1));
    const auto dot = key.find('.');
    if (dot != std::string::npos) {
        const std::string section = key.substr(0, dot);
        if (!detail::known_section(section)) throw ParameterError("--set: unknown section '" + section + "'");
        detail::find_key(section, key.substr(dot + 1)).set(cfg, value);
        return;
    }
    const detail::KeySpec* match = nullptr;
    for (const auto& k : detail::key_table())
        if (key == k.name) {
            if (match) throw ParameterError("--set: key '" + key + "' is ambiguous; use section.key");
            match = &k;
        }
    if (!match) throw ParameterError("--set: unknown key '" + key + "'");
    match->set(cfg, value);
}

/// Every key, grouped by section, in a form parse_config() reads back exactly.
inline std::string serialize(const RunConfig& cfg) {
    std::ostringstream os;
    std::string section;
    for (const auto& k : detail::key_table()) {
        if (section != k.section) {
            if (!section.empty()) os << '\n';
            section = k.section;
            os << '[' << section << "]\n";
        }
        os << k.name << " = " << k.get(cfg) << '\n';
    }
    return os.str();
}

}  // namespace qnls
