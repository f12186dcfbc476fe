#pragma once

/**
 * @file run.hpp
 * @brief Command dispatch and run-directory persistence.
 *
 * run_command() creates <output_dir>/<UTC timestamp>-<command>/ and writes
 *   config.echo        serialize(config)
 *   diagnostics.csv    per-iteration rows (solve, multisolve)
 *   solution-<i>.field field dumps (solve, multisolve)
 *   curve.csv          lambda,best_I (probe, sweep)
 *   summary.json       final values, flags and measured constants
 * Every file is written atomically.
 */

#include "qnls/certify.hpp"
#include "qnls/config.hpp"
#include "qnls/errors.hpp"
#include "qnls/flow_solver.hpp"
#include "qnls/functionals.hpp"
#include "qnls/io.hpp"
#include "qnls/reduced_grid.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace qnls {

enum ExitStatus : int {
    kExitOk = 0,
    kExitParameter = 2,
    kExitNumeric = 3,
    kExitShortfall = 4,
};

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"solve",           "multisolve", "certify-dual",
                                                "check-equivalence", "probe",      "sweep"};
    return names;
}

struct RunOutcome {
    int status = kExitOk;
    std::filesystem::path dir;
    std::string message;
};

namespace detail {

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

/// Creates a fresh run directory; a numeric suffix resolves same-millisecond collisions.
inline std::filesystem::path make_run_dir(const std::string& root, const std::string& cmd) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw ParameterError("cannot create output root '" + root + "': " + ec.message());
    const std::string base = utc_timestamp() + "-" + cmd;
    for (int i = 0; i < 1000; ++i) {
        const fs::path dir = fs::path(root) / (i == 0 ? base : base + "-" + std::to_string(i));
        if (fs::create_directory(dir, ec)) return dir;
        if (ec) throw ParameterError("cannot create run directory '" + dir.string() + "': " + ec.message());
    }
    throw ParameterError("cannot find a free run directory name under '" + root + "'");
}

inline nlohmann::json params_json(const RunConfig& c) {
    return {{"N", c.model.N},          {"m", c.model.m},
            {"p", c.model.p},          {"lambda", c.model.lambda},
            {"L", c.grid.L},           {"n", c.grid.n},
            {"sector", to_string(c.run.sector)}, {"seed", c.flow.seed}};
}

/// Summary skeleton with every fixed key present.
inline nlohmann::json summary_base(const std::string& cmd, const RunConfig& c) {
    return {{"command", cmd},        {"params", params_json(c)}, {"converged", nullptr},
            {"energy_I", nullptr},   {"energy_J", nullptr},      {"mass", nullptr},
            {"mu", nullptr},         {"residual_norm", nullptr}, {"sign_change", nullptr},
            {"constants", nlohmann::json::object()}};
}

inline void fill_solution(nlohmann::json& j, const SolveReport& r) {
    const auto& d = r.diagnostics;
    j["converged"] = r.converged;
    j["energy_I"] = json_number(d.energy_I);
    j["energy_J"] = json_number(d.energy_J);
    j["mass"] = json_number(d.mass);
    j["mu"] = json_number(d.mu);
    j["residual_norm"] = json_number(d.residual_norm);
    const auto [lo, hi] = std::minmax_element(r.field.values.begin(), r.field.values.end());
    if (lo != r.field.values.end()) j["sign_change"] = {{"min", *lo}, {"max", *hi}};
    j["iterations"] = r.iterations;
    j["boundary_max"] = json_number(r.boundary_max);
}

inline std::string trace_csv(const std::vector<const SolveReport*>& reports) {
    std::ostringstream os;
    os << kDiagnosticsCsvHeader << '\n';
    for (const auto* r : reports)
        for (const auto& row : r->trace) write_csv_row(os, row.iter, row.diag, row.step);
    return os.str();
}

inline void write_text(const std::filesystem::path& dir, const char* name, const std::string& text) {
    write_file_atomic(dir / name, text);
}

inline void write_summary(const std::filesystem::path& dir, const nlohmann::json& j) {
    write_text(dir, "summary.json", j.dump(2) + "\n");
}

inline Field initial_field(const GridPtr& grid, const RunConfig& c) {
    if (c.run.start == StartKind::trial) {
        Field v = antisymmetric_trial(grid, c.run.trial_width);
        v.sector = c.run.sector;
        return v;
    }
    return random_start(grid, c.flow.seed, c.run.sector);
}

inline void add_report(nlohmann::json& j, const CertReport& r) {
    const auto rj = to_json(r);
    j["checks"] = rj["checks"];
    for (auto it = rj["constants"].begin(); it != rj["constants"].end(); ++it) j["constants"][it.key()] = it.value();
    j["all_pass"] = r.all_pass();
    if (rj.contains("labels")) j["labels"] = rj["labels"];
    if (rj.contains("warnings")) j["warnings"] = rj["warnings"];
}

inline nlohmann::json curve_json(const std::vector<CurvePoint>& curve) {
    auto a = nlohmann::json::array();
    for (const auto& p : curve)
        a.push_back({{"lambda", p.lambda}, {"best_I", json_number(p.best_I)}, {"best_width", p.best_width}});
    return a;
}

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
    std::ostringstream os;
    write_curve_csv(os, curve);
    return os.str();
}

// --- commands; each fills the summary and returns an exit status ---

inline int cmd_solve(const RunConfig& c, const std::filesystem::path& dir, nlohmann::json& j) {
    const auto grid = build_grid(c.model, c.grid.L, c.grid.n);
    const DualMap dual = c.dual_map();
    SolveReport rep;
    std::string error;
    try {
        rep = solve(initial_field(grid, c), c.model, c.flow, dual);
    } catch (const StagnationError& e) {
        rep = e.report();
        error = e.what();
    }
    write_text(dir, "diagnostics.csv", trace_csv({&rep}));
    save_field((dir / "solution-0.field").string(), rep.field);
    fill_solution(j, rep);
    if (!error.empty()) j["error"] = error;
    return rep.converged ? kExitOk : kExitNumeric;
}

inline int cmd_multisolve(const RunConfig& c, const std::filesystem::path& dir, nlohmann::json& j) {
    const auto grid = build_grid(c.model, c.grid.L, c.grid.n);
    const DualMap dual = c.dual_map();
    const auto ms = multisolve(c.run.k, grid, c.model, c.flow, dual);

    std::vector<const SolveReport*> reports;
    auto sols = nlohmann::json::array();
    for (std::size_t i = 0; i < ms.solutions.size(); ++i) {
        const auto& s = ms.solutions[i];
        reports.push_back(&s);
        save_field((dir / ("solution-" + std::to_string(i) + ".field")).string(), s.field);
        nlohmann::json sj;
        fill_solution(sj, s);
        sols.push_back(sj);
    }
    write_text(dir, "diagnostics.csv", trace_csv(reports));
    if (!ms.solutions.empty()) fill_solution(j, ms.solutions.front());
    j["converged"] = !ms.solutions.empty();
    j["solutions"] = sols;
    j["requested"] = c.run.k;
    j["found"] = ms.solutions.size();
    j["starts_used"] = ms.starts_used;
    j["shortfall"] = ms.shortfall;
    return ms.shortfall ? kExitShortfall : kExitOk;
}

inline int cmd_certify_dual(const RunConfig& c, const std::filesystem::path&, nlohmann::json& j) {
    const auto r = certify_dual(c.dual_map(), c.run.sample_count);
    add_report(j, r);
    return r.all_pass() ? kExitOk : kExitNumeric;
}

inline int cmd_check_equivalence(const RunConfig& c, const std::filesystem::path&, nlohmann::json& j) {
    const auto r = check_equivalence(c.model, c.run.grid_sizes, c.run.trials, c.flow.seed, c.dual_map(), c.grid.L);
    add_report(j, r);
    return r.all_pass() ? kExitOk : kExitNumeric;
}

inline int cmd_probe(const RunConfig& c, const std::filesystem::path& dir, nlohmann::json& j) {
    const auto grid = build_grid(c.model, c.grid.L, c.grid.n);
    const auto lambdas = c.run.lambda_grid.empty() ? std::vector<double>{c.model.lambda} : c.run.lambda_grid;
    const auto curve = probe_curve(c.model, c.dual_map(), lambdas, grid, default_widths(*grid, c.run.probe_widths),
                                   static_cast<unsigned>(c.run.threads));
    write_text(dir, "curve.csv", curve_csv(curve));
    j["curve"] = curve_json(curve);
    double worst = curve.front().best_I;
    for (const auto& p : curve) worst = std::max(worst, p.best_I);
    j["constants"]["max_best_I"] = json_number(worst);
    j["all_negative"] = worst < 0.0;
    return kExitOk;
}

inline int cmd_sweep(const RunConfig& c, const std::filesystem::path& dir, nlohmann::json& j) {
    const auto grid = build_grid(c.model, c.grid.L, c.grid.n);
    const auto lambdas = c.run.lambda_grid.empty() ? log_grid(1e-2, 1e4, 13) : c.run.lambda_grid;
    const auto scan = lambda_threshold_scan(c.model, c.dual_map(), lambdas, grid,
                                            default_widths(*grid, c.run.probe_widths),
                                            static_cast<unsigned>(c.run.threads));
    write_text(dir, "curve.csv", curve_csv(scan.curve));
    j["curve"] = curve_json(scan.curve);
    j["lambda_star"] = scan.lambda_star ? nlohmann::json(*scan.lambda_star) : nlohmann::json(nullptr);
    if (scan.lambda_star) j["constants"]["lambda_star"] = *scan.lambda_star;
    j["upward_closed"] = scan.upward_closed;
    if (!scan.warnings.empty()) j["warnings"] = scan.warnings;
    return kExitOk;
}

}  // namespace detail

/**
 * Runs one command. Parameter problems found before the run directory exists
 * are thrown as ParameterError; everything after that is reported through
 * the exit status and summary.json.
 */
inline RunOutcome run_command(const std::string& cmd, const RunConfig& config) {
    const auto& names = command_names();
    if (std::find(names.begin(), names.end(), cmd) == names.end())
        throw ParameterError("unknown command '" + cmd +
                             "' (expected solve, multisolve, certify-dual, check-equivalence, probe, sweep)");
    config.validate();
    if (cmd == "sweep" && classify_regime(config.model) != Regime::intermediate)
        throw ParameterError("sweep: p must lie in [2+4/N, 4+4/N) = [" + format_double(config.model.p_critical()) +
                             ", " + format_double(config.model.p_upper()) + ")");

    RunOutcome out;
    out.dir = detail::make_run_dir(config.run.output_dir, cmd);
    detail::write_text(out.dir, "config.echo", serialize(config));
    auto summary = detail::summary_base(cmd, config);
    try {
        if (cmd == "solve") out.status = detail::cmd_solve(config, out.dir, summary);
        else if (cmd == "multisolve") out.status = detail::cmd_multisolve(config, out.dir, summary);
        else if (cmd == "certify-dual") out.status = detail::cmd_certify_dual(config, out.dir, summary);
        else if (cmd == "check-equivalence") out.status = detail::cmd_check_equivalence(config, out.dir, summary);
        else if (cmd == "probe") out.status = detail::cmd_probe(config, out.dir, summary);
        else out.status = detail::cmd_sweep(config, out.dir, summary);
    } catch (const ParameterError& e) {
        out.status = kExitParameter;
        out.message = e.what();
    } catch (const ShapeError& e) {
        out.status = kExitParameter;
        out.message = e.what();
    } catch (const Error& e) {
        out.status = kExitNumeric;
        out.message = e.what();
    }
    if (!out.message.empty()) summary["error"] = out.message;
    summary["exit_status"] = out.status;
    detail::write_summary(out.dir, summary);
    return out;
}

}  // namespace qnls
