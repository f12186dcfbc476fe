#pragma once

/**
 * @file certify.hpp
 * @brief Numerical checks of the quantitative facts the solver relies on.
 *
 * Every check reports a margin defined so that a nonnegative value means the
 * inequality holds. The dual-map inequalities are theorems, so a negative
 * margin there indicts the implementation of f.
 *
 * The negativity probe evaluates I on one antisymmetric trial family; its
 * value is an upper bound for the constrained infimum, never the infimum.
 */

#include "qnls/dual_map.hpp"
#include "qnls/errors.hpp"
#include "qnls/flow_solver.hpp"
#include "qnls/functionals.hpp"
#include "qnls/model.hpp"
#include "qnls/reduced_grid.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace qnls {

struct Check {
    std::string name;
    long samples = 0;
    double worst_margin = 0.0;
    bool pass = false;
};

struct CertReport {
    std::vector<Check> checks;
    std::map<std::string, double> constants;
    std::map<std::string, std::string> labels;
    std::vector<std::string> warnings;

    bool all_pass() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
    }

    void add(std::string name, long samples, double worst_margin) {
        checks.push_back({std::move(name), samples, worst_margin, worst_margin >= 0.0});
    }
};

namespace detail {

/// Runs fn(i) for i in [0, count) on up to `threads` workers (0 = hardware
/// concurrency). Results must be written to slot i so assembly is deterministic.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t i; (i = next.fetch_add(1)) < count;) {
                try {
                    fn(i);
                } catch (...) {
                    // keep the first failure; later ones are dropped
                    if (!failed.exchange(true)) error = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

/// Least-squares slope of log(y) against log(x).
inline double log_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double lx = std::log(x[i]);
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// dual map

/**
 * Six properties of f on sample_count log-spaced |t| in [1e-8, 1e8], both
 * signs, plus t = 0 and t = +-1:
 *   ode_identity     |f'(t) sqrt(1 + 2 f^2) - 1| <= 1e-10
 *   limits           |f(t)/t - 1| <= 1e-6 for |t| <= 1e-4, and
 *                    |f(1e6)/1e3 - 2^(1/4)| <= 1e-3
 *   contraction      f'(t) <= 1 and |f(t)| <= |t|
 *   derivative_bounds  |f|/2 <= |t| f'(t) <= |f|
 *   sqrt_bound       |f(t)| <= 2^(1/4) sqrt|t|
 *   lower_constants  C1 = inf_{|t|<=1} |f|/|t| > 0 and C2 = inf_{|t|>=1} |f|/sqrt|t| > 0
 * C2 is attained at |t| = 1 since f(t)/sqrt(t) is nondecreasing; the large-t
 * limit 2^(1/4) is reported separately as asymptotic_ratio.
 */
inline CertReport certify_dual(const DualMap& dual, long sample_count = 10000) {
    if (sample_count < 1000) throw ParameterError("certify_dual: sample_count must be >= 1000");
    const double root4_2 = DualMap::kQuarticRootTwo;

    // t = +-1 is where both infima are attained
    std::vector<double> ts{0.0, 1.0, -1.0};
    ts.reserve(2 * sample_count + 3);
    const double lo = std::log(1e-8), hi = std::log(1e8);
    for (long i = 0; i < sample_count; ++i) {
        const double t = std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(sample_count - 1));
        ts.push_back(t);
        ts.push_back(-t);
    }

    const double inf = std::numeric_limits<double>::infinity();
    double m_ode = inf, m_lim = inf, m_con = inf, m_der = inf, m_sqrt = inf;
    double c1 = inf, c2 = inf, ode_max = 0.0;
    long n_lim = 0;
    for (double t : ts) {
        const auto [u, fp] = dual.eval(t);
        const double at = std::fabs(t), au = std::fabs(u);

        const double ode = std::fabs(fp * std::sqrt(1.0 + 2.0 * u * u) - 1.0);
        ode_max = std::max(ode_max, ode);
        m_ode = std::min(m_ode, 1e-10 - ode);

        m_con = std::min({m_con, 1.0 - fp, at - au});
        // |f| - |t| f' is O(t^3) near 0, below the resolution of t itself; it is
        // evaluated as (|f| - |t|) + |t| (1 - f') with 1 - f' free of cancellation
        const double x = 2.0 * u * u;
        const double root = std::sqrt(1.0 + x);
        const double one_minus_fp = x / (root * (1.0 + root));
        m_der = std::min({m_der, at * fp - 0.5 * au, (au - at) + at * one_minus_fp});
        m_sqrt = std::min(m_sqrt, root4_2 * std::sqrt(at) - au);

        if (t != 0.0 && at <= 1e-4) {
            m_lim = std::min(m_lim, 1e-6 - std::fabs(u / t - 1.0));
            ++n_lim;
        }
        if (t != 0.0 && at <= 1.0) c1 = std::min(c1, au / at);
        if (at >= 1.0) c2 = std::min(c2, au / std::sqrt(at));
    }
    const double ratio = dual.f(1e6) / 1e3;
    m_lim = std::min(m_lim, 1e-3 - std::fabs(ratio - root4_2));
    const long n = static_cast<long>(ts.size());

    CertReport rep;
    rep.add("ode_identity", n, m_ode);
    rep.add("limits", n_lim + 1, m_lim);
    rep.add("contraction", n, m_con);
    rep.add("derivative_bounds", n, m_der);
    rep.add("sqrt_bound", n, m_sqrt);
    rep.add("lower_constants", n, std::min(c1, c2));
    rep.constants["C1"] = c1;
    rep.constants["C2"] = c2;
    rep.constants["asymptotic_ratio"] = dual.f(1e8) / 1e4;
    rep.constants["ratio_at_1e6"] = ratio;
    rep.constants["ode_max_defect"] = ode_max;
    return rep;
}

// ---------------------------------------------------------------------------
// J / I equivalence

/**
 * Smooth random field: three Gaussians with centres in [0, L/4]^axes, widths
 * in [L/16, L/10] and amplitudes in [-1, 1]. Values at r = L are below 1e-12.
 */
inline Field random_smooth_field(const GridPtr& grid, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double L = grid->box_length();
    struct Bump {
        std::array<double, 3> c;
        double width, amp;
    };
    std::vector<Bump> bumps(3);
    for (auto& b : bumps) {
        for (auto& x : b.c) x = detail::uniform01(rng) * L / 4.0;
        b.width = L / 16.0 + detail::uniform01(rng) * (L / 10.0 - L / 16.0);
        b.amp = 2.0 * detail::uniform01(rng) - 1.0;
    }
    return sample(grid, [&](double r1, double r2, double r3) {
        const std::array<double, 3> r{r1, r2, r3};
        double s = 0.0;
        for (const auto& b : bumps) {
            double d2 = 0.0;
            for (int a = 0; a < grid->active_axes(); ++a) d2 += (r[a] - b.c[a]) * (r[a] - b.c[a]);
            s += b.amp * std::exp(-d2 / (2.0 * b.width * b.width));
        }
        return s;
    });
}

/**
 * For `trials` random smooth v (seeds seed, seed+1, ...) and each grid size,
 * e(n) = |J(f(v)) - I(v)|. Checks:
 *   convergence_order   fitted order of e(n) >= 1.8 (worst trial)
 *   finest_error        e(n_max) <= 1e-4 (1 + |I(v)|)
 *   multiplier_terms    (Jbar - J) and (Ibar - I) agree to rounding for a random mu
 * A trial whose errors are all below 1e-14 (1 + |I|) has nothing to fit and
 * is counted as order = infinity.
 */
inline CertReport check_equivalence(const ModelParams& params, const std::vector<int>& grid_sizes, int trials,
                                    std::uint64_t seed, const DualMap& dual, double L = 8.0) {
    params.validate();
    if (grid_sizes.size() < 2) throw ParameterError("check_equivalence: need at least two grid sizes");
    for (std::size_t i = 1; i < grid_sizes.size(); ++i)
        if (grid_sizes[i] <= grid_sizes[i - 1])
            throw ParameterError("check_equivalence: grid_sizes must be increasing");
    if (trials < 5) throw ParameterError("check_equivalence: trials must be >= 5");

    std::vector<GridPtr> grids;
    for (int n : grid_sizes) grids.push_back(build_grid(params, L, n));
    const double eps = std::numeric_limits<double>::epsilon();

    double worst_order = std::numeric_limits<double>::infinity();
    double worst_fine = std::numeric_limits<double>::infinity();
    double worst_mu = std::numeric_limits<double>::infinity();
    double ratio_sum = 0.0;
    int ratio_count = 0;
    for (int t = 0; t < trials; ++t) {
        const std::uint64_t s = seed + static_cast<std::uint64_t>(t);
        std::vector<double> ns, errs;
        double last_I = 0.0, last_err = 0.0;
        for (const auto& g : grids) {
            const Field v = random_smooth_field(g, s);
            const Field u(g, dual.map_field(v.values), v.sector);
            const double I = energy_I(v, dual, params);
            const double J = energy_J(u, params);
            ns.push_back(g->points_per_axis());
            errs.push_back(std::fabs(J - I));
            last_I = I;
            last_err = std::fabs(J - I);

            std::mt19937_64 rng(s ^ 0x9e3779b97f4a7c15ULL);
            const double mu = 4.0 * detail::uniform01(rng) - 2.0;
            const double dJ = energy_J_bar(u, mu, params) - J;
            const double dI = energy_I_bar(v, mu, dual, params) - I;
            const double scale = std::max({std::fabs(J), std::fabs(I), std::fabs(dJ), std::fabs(dI), 1.0});
            worst_mu = std::min(worst_mu, 8.0 * eps * scale - std::fabs(dJ - dI));
        }
        const bool resolved = std::all_of(errs.begin(), errs.end(),
                                          [&](double e) { return e > 1e-14 * (1.0 + std::fabs(last_I)); });
        if (resolved) worst_order = std::min(worst_order, -detail::log_slope(ns, errs));
        worst_fine = std::min(worst_fine, 1e-4 * (1.0 + std::fabs(last_I)) - last_err);
        if (resolved && errs.size() >= 2) {
            ratio_sum += errs[0] / errs[1];
            ++ratio_count;
        }
    }

    CertReport rep;
    rep.add("convergence_order", trials, worst_order - 1.8);
    rep.add("finest_error", trials, worst_fine);
    rep.add("multiplier_terms", static_cast<long>(trials) * static_cast<long>(grids.size()), worst_mu);
    rep.constants["worst_order"] = worst_order;
    if (ratio_count > 0) rep.constants["mean_first_refinement_ratio"] = ratio_sum / ratio_count;
    return rep;
}

// ---------------------------------------------------------------------------
// exponents

enum class Regime { subcritical, intermediate };

inline const char* to_string(Regime r) { return r == Regime::subcritical ? "subcritical" : "intermediate"; }

/// p < 2 + 4/N is subcritical; [2 + 4/N, 4 + 4/N) is intermediate.
inline Regime classify_regime(const ModelParams& params) {
    params.validate();
    return params.p < params.p_critical() ? Regime::subcritical : Regime::intermediate;
}

struct Exponents {
    double theta = 0.0;
    double energy = 0.0;  // e_E
    double mass = 0.0;    // e_M
};

inline Exponents coercivity_exponents(int N, double p) {
    const double d = 2.0 * (N + 2);
    return {(p - 2.0) * (N - 2) / d, (p - 2.0) * N / d, (4.0 * N - (N - 2) * p) / d};
}

/**
 * Gagliardo-Nirenberg bookkeeping behind the lower bound on I:
 *   theta = (p-2)(N-2) / (2(N+2)),  e_E = (p-2)N / (2(N+2)),  e_M = (4N - (N-2)p) / (2(N+2)).
 * Check energy_exponent: e_E < 1 (margin 1 - e_E).
 */
inline CertReport coercivity_report(const ModelParams& params) {
    params.validate();
    const auto e = coercivity_exponents(params.N, params.p);
    CertReport rep;
    rep.add("energy_exponent", 1, 1.0 - e.energy);
    rep.constants["theta"] = e.theta;
    rep.constants["e_E"] = e.energy;
    rep.constants["e_M"] = e.mass;
    rep.constants["p_critical"] = params.p_critical();
    rep.constants["p_upper"] = params.p_upper();
    rep.labels["regime"] = to_string(classify_regime(params));
    return rep;
}

// ---------------------------------------------------------------------------
// negativity probe and lambda scan

struct ProbeResult {
    double best_I = 0.0;
    double best_width = 0.0;
    /// I per width, NaN where the width was skipped.
    std::vector<double> values;
    int skipped = 0;
};

/// count log-spaced widths from 2h to L/6.
inline std::vector<double> default_widths(const ReducedGrid& grid, int count = 40) {
    if (count < 1) throw ParameterError("default_widths: count must be >= 1");
    const double lo = 2.0 * grid.spacing(), hi = grid.box_length() / 6.0;
    std::vector<double> w(count);
    for (int i = 0; i < count; ++i)
        w[i] = count == 1 ? hi : lo * std::pow(hi / lo, static_cast<double>(i) / (count - 1));
    return w;
}

/// I(project_mass(trial_b, lambda)) for one width.
inline double probe_energy(const GridPtr& grid, double width, const ModelParams& params, const DualMap& dual) {
    const auto proj = project_mass(antisymmetric_trial(grid, width), params.lambda, dual);
    return energy_I(proj.field, dual, params);
}

/**
 * Minimum of I over the trial family (r1 - r2) exp(-|r|^2 / (2 b^2)) projected
 * to mass lambda. Widths whose trial cannot be projected are skipped. The
 * grid must have the same N and m as params; p and lambda come from params.
 */
inline ProbeResult negativity_probe(const ModelParams& params, const DualMap& dual, const std::vector<double>& widths,
                                    const GridPtr& grid, unsigned threads = 0) {
    params.validate();
    if (grid->params().N != params.N || grid->params().m != params.m)
        throw ShapeError("negativity_probe: grid was built for a different (N, m)");
    if (widths.empty()) throw ParameterError("negativity_probe: no widths");
    for (double b : widths)
        if (!(b > 0.0) || !std::isfinite(b)) throw ParameterError("negativity_probe: widths must be positive");

    ProbeResult out;
    out.values.assign(widths.size(), std::numeric_limits<double>::quiet_NaN());
    detail::parallel_for(widths.size(), threads, [&](std::size_t i) {
        try {
            out.values[i] = probe_energy(grid, widths[i], params, dual);
        } catch (const NumericError&) {
        } catch (const DegenerateInputError&) {
        } catch (const DomainError&) {
        }
    });
    bool any = false;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        if (std::isnan(out.values[i])) {
            ++out.skipped;
            continue;
        }
        if (!any || out.values[i] < out.best_I) {
            out.best_I = out.values[i];
            out.best_width = widths[i];
            any = true;
        }
    }
    if (!any) throw DegenerateInputError("negativity_probe: every width was skipped");
    return out;
}

struct CurvePoint {
    double lambda = 0.0;
    double best_I = 0.0;
    double best_width = 0.0;
};

struct ScanResult {
    std::optional<double> lambda_star;
    std::vector<CurvePoint> curve;
    /// false if some grid lambda above a negative one is nonnegative
    bool upward_closed = true;
    std::vector<std::string> warnings;
};

/// negativity_probe at each lambda, in input order.
inline std::vector<CurvePoint> probe_curve(const ModelParams& params, const DualMap& dual,
                                           const std::vector<double>& lambda_grid, const GridPtr& grid,
                                           const std::vector<double>& widths, unsigned threads = 0) {
    std::vector<CurvePoint> curve;
    for (double lambda : lambda_grid) {
        ModelParams pl = params;
        pl.lambda = lambda;
        const auto r = negativity_probe(pl, dual, widths, grid, threads);
        curve.push_back({lambda, r.best_I, r.best_width});
    }
    return curve;
}

/**
 * Probe over an increasing lambda grid in the intermediate regime. lambda_star
 * is the smallest grid lambda with best_I < 0; it estimates the threshold from
 * above, since the probe can certify negativity but never positivity.
 */
inline ScanResult lambda_threshold_scan(const ModelParams& params, const DualMap& dual,
                                        const std::vector<double>& lambda_grid, const GridPtr& grid,
                                        const std::vector<double>& widths, unsigned threads = 0) {
    if (classify_regime(params) != Regime::intermediate)
        throw ParameterError("lambda_threshold_scan: p must lie in [2+4/N, 4+4/N) = [" +
                             format_double(params.p_critical()) + ", " + format_double(params.p_upper()) +
                             ") (use the probe directly for smaller p)");
    if (lambda_grid.empty()) throw ParameterError("lambda_threshold_scan: empty lambda grid");
    for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
        if (!(lambda_grid[i] > 0.0)) throw ParameterError("lambda_threshold_scan: lambda values must be > 0");
        if (i > 0 && !(lambda_grid[i] > lambda_grid[i - 1]))
            throw ParameterError("lambda_threshold_scan: lambda grid must be increasing");
    }

    ScanResult out;
    out.curve = probe_curve(params, dual, lambda_grid, grid, widths, threads);
    for (std::size_t i = 0; i < out.curve.size(); ++i) {
        if (out.curve[i].best_I < 0.0) {
            if (!out.lambda_star) out.lambda_star = out.curve[i].lambda;
        } else if (out.lambda_star) {
            out.upward_closed = false;
        }
    }
    if (!out.upward_closed)
        out.warnings.push_back("negativity set is not upward-closed on this grid (the probe is only an upper bound)");
    return out;
}

/// log-spaced grid of count values over [lo, hi].
inline std::vector<double> log_grid(double lo, double hi, int count) {
    if (!(lo > 0.0) || !(hi >= lo) || count < 1) throw ParameterError("log_grid: need 0 < lo <= hi and count >= 1");
    std::vector<double> g(count);
    for (int i = 0; i < count; ++i)
        g[i] = count == 1 ? lo : std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (count - 1));
    return g;
}

// ---------------------------------------------------------------------------
// output

/// JSON numbers cannot be inf or NaN; those become strings.
inline nlohmann::json json_number(double x) {
    if (std::isfinite(x)) return x;
    if (std::isnan(x)) return "nan";
    return x > 0.0 ? "inf" : "-inf";
}

inline nlohmann::json to_json(const CertReport& r) {
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : r.checks)
        checks.push_back({{"name", c.name},
                          {"samples_tested", c.samples},
                          {"worst_margin", json_number(c.worst_margin)},
                          {"pass", c.pass}});
    nlohmann::json constants = nlohmann::json::object();
    for (const auto& [k, v] : r.constants) constants[k] = json_number(v);
    nlohmann::json j{{"checks", checks}, {"constants", constants}, {"all_pass", r.all_pass()}};
    if (!r.labels.empty()) j["labels"] = r.labels;
    if (!r.warnings.empty()) j["warnings"] = r.warnings;
    return j;
}

inline void write_table(std::ostream& os, const CertReport& r) {
    os << std::left << std::setw(20) << "check" << std::right << std::setw(10) << "samples" << std::setw(16)
       << "worst_margin" << "  result\n";
    for (const auto& c : r.checks)
        os << std::left << std::setw(20) << c.name << std::right << std::setw(10) << c.samples << std::setw(16)
           << std::setprecision(6) << c.worst_margin << "  " << (c.pass ? "pass" : "FAIL") << '\n';
    for (const auto& [k, v] : r.constants) os << k << " = " << format_double(v) << '\n';
    for (const auto& [k, v] : r.labels) os << k << " = " << v << '\n';
    for (const auto& w : r.warnings) os << "warning: " << w << '\n';
}

inline void write_curve_csv(std::ostream& os, const std::vector<CurvePoint>& curve) {
    os << "lambda,best_I\n";
    for (const auto& c : curve) os << format_double(c.lambda) << ',' << format_double(c.best_I) << '\n';
}

}  // namespace qnls
