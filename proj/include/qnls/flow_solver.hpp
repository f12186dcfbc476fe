#pragma once

/**
 * @file flow_solver.hpp
 * @brief Constrained critical points of I on {mass(v) = lambda}.
 *
 * solve() runs a projected gradient flow: a tangential descent direction is
 * taken, the step is rescaled back onto the constraint by project_mass(), and
 * the step length is chosen by Armijo backtracking on I. The direction is the
 * L^2 gradient, or (default) the gradient in the metric of (shift - laplacian),
 * made tangential in that metric.
 *
 * multisolve() looks for several distinct pairs +-v in one sector. It is a
 * heuristic: multi-start constrained Newton, deflated by the roots already
 * found. Its outputs are distinct critical points, not minimax levels over
 * sets of prescribed genus.
 */

#include "qnls/dual_map.hpp"
#include "qnls/errors.hpp"
#include "qnls/functionals.hpp"
#include "qnls/model.hpp"
#include "qnls/reduced_grid.hpp"
#include "qnls/sobolev.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace qnls {

enum class Preconditioner { l2, sobolev };

inline const char* to_string(Preconditioner p) { return p == Preconditioner::sobolev ? "sobolev" : "l2"; }

inline Preconditioner preconditioner_from_string(const std::string& s) {
    if (s == "sobolev") return Preconditioner::sobolev;
    if (s == "l2") return Preconditioner::l2;
    throw ParameterError("unknown preconditioner '" + s + "' (expected sobolev|l2)");
}

struct FlowConfig {
    double step_init = 0.1;
    double backtrack_factor = 0.5;
    double armijo_c = 1e-4;
    double tol_grad = 1e-6;
    double tol_mass = 1e-10;
    long max_iters = 50000;
    std::uint64_t seed = 0;
    double deflation_strength = 1.0;

    Preconditioner preconditioner = Preconditioner::sobolev;
    double sobolev_shift = 1.0;
    /// Upper bound for the adaptive step length.
    double step_max = 1.0;
    /// Starts tried by multisolve before reporting a shortfall.
    int max_starts = 12;
    /// Newton steps per multisolve start.
    int newton_steps = 100;

    void validate() const {
        if (!(step_init > 0.0)) throw ParameterError("step_init must be > 0");
        if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0))
            throw ParameterError("backtrack_factor must lie in (0, 1)");
        if (!(armijo_c > 0.0 && armijo_c < 1.0)) throw ParameterError("armijo_c must lie in (0, 1)");
        if (!(tol_grad > 0.0)) throw ParameterError("tol_grad must be > 0");
        if (!(tol_mass > 0.0)) throw ParameterError("tol_mass must be > 0");
        if (max_iters < 0) throw ParameterError("max_iters must be >= 0");
        if (!(deflation_strength >= 0.0)) throw ParameterError("deflation_strength must be >= 0");
        if (!(sobolev_shift > 0.0)) throw ParameterError("sobolev_shift must be > 0");
        if (!(step_max >= step_init)) throw ParameterError("step_max must be >= step_init");
        if (max_starts < 1) throw ParameterError("max_starts must be >= 1");
        if (newton_steps < 1) throw ParameterError("newton_steps must be >= 1");
    }

    bool operator==(const FlowConfig&) const = default;
};

struct TraceRow {
    long iter = 0;
    Diagnostics diag;
    double step = 0.0;
};

struct SolveReport {
    bool converged = false;
    long iterations = 0;
    Diagnostics diagnostics;
    std::vector<TraceRow> trace;
    Field field;
    Sector sector = Sector::unrestricted;
    /// max |v| on the outermost ring of nodes; large values mean the box is too small.
    double boundary_max = 0.0;
};

/// Backtracking could not find an acceptable step; carries the last state.
class StagnationError : public NumericError {
public:
    StagnationError(const std::string& what, SolveReport last)
        : NumericError(what), report_(std::make_shared<SolveReport>(std::move(last))) {}
    const SolveReport& report() const noexcept { return *report_; }

private:
    std::shared_ptr<SolveReport> report_;
};

// ---------------------------------------------------------------------------

/// tol_mass, floored at 64 ulp of lambda: below that the weighted sum cannot resolve the mass.
inline double effective_mass_tol(double tol_mass, double lambda) {
    return std::max(tol_mass, 64.0 * std::numeric_limits<double>::epsilon() * lambda);
}

struct Projection {
    Field field;
    double scale = 1.0;
};

/**
 * Rescales v onto {mass = lambda}. c -> mass(c v) is strictly increasing with
 * mass(0) = 0 and mass(c v) -> inf, so the root is unique; it is found by
 * Newton's method inside a bisection bracket.
 */
inline Projection project_mass(const Field& v, double lambda, const DualMap& dual, double tol_mass = 1e-10) {
    if (!(lambda > 0.0)) throw ParameterError("project_mass: lambda must be > 0");
    require_finite(v.values, "project_mass");
    const auto& grid = *v.grid;
    const auto w = grid.weights();
    bool nonzero = false;
    for (double x : v.values)
        if (x != 0.0) { nonzero = true; break; }
    if (!nonzero) throw DegenerateInputError("project_mass: zero field");

    tol_mass = effective_mass_tol(tol_mass, lambda);
    std::vector<double> scaled(v.size());
    auto eval = [&](double c, double* slope) {
        double m = 0.0, dm = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double t = c * v[i];
            scaled[i] = t;
            const double u = dual.f(t);
            m += w[i] * u * u;
            if (slope) dm += w[i] * 2.0 * u * DualMap::prime_from_value(u) * v[i];
        }
        if (slope) *slope = dm;
        return m - lambda;
    };

    // once within tolerance, one more Newton step takes the mass error down to
    // rounding level; energy comparisons in the flow rely on that
    auto finish = [&](double c, double phi, double dphi) -> Projection {
        std::vector<double> best = scaled;
        if (dphi > 0.0) {
            const double c2 = c - phi / dphi;
            const double phi2 = eval(c2, nullptr);
            if (std::fabs(phi2) < std::fabs(phi)) return {Field(v.grid, scaled, v.sector), c2};
        }
        return {Field(v.grid, std::move(best), v.sector), c};
    };

    double c = 1.0;
    double dphi = 0.0;
    double phi = eval(c, &dphi);
    if (std::fabs(phi) <= tol_mass) return finish(c, phi, dphi);

    double lo = 0.0, hi = 0.0;
    if (phi > 0.0) {
        hi = 1.0;
    } else {
        lo = 1.0;
        hi = 2.0;
        while (eval(hi, nullptr) <= 0.0) {
            lo = hi;
            hi *= 2.0;
            if (hi > 18446744073709551616.0) throw NumericError("project_mass: bracket exceeds 2^64");
        }
    }
    for (int it = 0; it < 200; ++it) {
        if (phi > 0.0) hi = std::min(hi, c); else lo = std::max(lo, c);
        double next = dphi > 0.0 ? c - phi / dphi : -1.0;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        c = next;
        phi = eval(c, &dphi);
        if (std::fabs(phi) <= tol_mass) return finish(c, phi, dphi);
        if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) break;
    }
    throw NumericError("project_mass: no convergence (|mass - lambda| = " + format_double(std::fabs(phi)) + ")");
}

// ---------------------------------------------------------------------------

namespace detail {

/// Everything the flow needs at one iterate.
struct FlowState {
    Field v;
    DualFields dual;
    double energy = 0.0;       // I(v)
    double energy_scale = 0.0; // kinetic + potential magnitudes, for rounding bounds
    std::vector<double> grad;  // L^2 gradient of I
    std::vector<double> normal;
    Diagnostics diag;
};

inline FlowState evaluate(Field v, const DualMap& dual, const ModelParams& params) {
    const auto& grid = *v.grid;
    FlowState st;
    st.dual = DualFields(dual, v.values);
    st.energy = energy_I_from(grid, v.values, st.dual, params.p, &st.energy_scale);
    st.grad.resize(v.size());
    grad_I_into(grid, v.values, st.dual, params.p, st.grad);
    st.normal = constraint_normal(st.dual);

    auto& d = st.diag;
    d.energy_I = st.energy;
    d.energy_J = energy_J(Field(v.grid, st.dual.u, v.sector), params);
    d.mass = mass_from(grid, st.dual);
    d.l2_of_v = inner(grid, v.values, v.values);
    const double gg = inner(grid, st.normal, st.normal);
    if (!(gg > 0.0)) throw DegenerateInputError("flow: iterate vanishes");
    d.mu = inner(grid, st.grad, st.normal) / gg;
    {
        std::vector<double> r(st.grad);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] -= d.mu * st.normal[i];
        d.residual_norm = std::sqrt(inner(grid, r, r));
        d.projected_grad_norm = d.residual_norm;
    }
    if (!std::isfinite(st.energy) || !std::isfinite(d.energy_J)) throw NumericError("flow: non-finite energy");

    st.v = std::move(v);
    return st;
}

inline void enforce_sector(std::vector<double>& x, const Field& like) {
    if (like.sector != Sector::antisymmetric) return;
    Field tmp(like.grid, std::move(x), Sector::unrestricted);
    x = antisymmetrize(tmp).values;
}

/**
 * Projected descent on I from an already feasible v0. Stops when the
 * tangential gradient norm is below tol and the mass is within tol_mass.
 */
inline SolveReport run_flow(Field v0, const ModelParams& params, const FlowConfig& cfg, const DualMap& dual,
                            long max_iters, double tol, const SobolevPreconditioner* precond) {
    const auto& grid = *v0.grid;
    const double lambda = params.lambda;
    const double mass_tol = effective_mass_tol(cfg.tol_mass, lambda);
    FlowState st = evaluate(std::move(v0), dual, params);

    SolveReport rep;
    rep.sector = st.v.sector;
    rep.trace.push_back({0, st.diag, 0.0});

    auto finish = [&](bool converged, long iters) {
        rep.converged = converged;
        rep.iterations = iters;
        rep.diagnostics = st.diag;
        rep.boundary_max = boundary_max(st.v);
        rep.field = st.v;
        return rep;
    };

    auto is_converged = [&](const FlowState& s) {
        return s.diag.residual_norm <= tol && std::fabs(s.diag.mass - lambda) <= mass_tol;
    };

    // accepted steps may increase the objective by rounding noise: 1e-12, or a
    // few ulp of the energy's term magnitude when that is larger
    const auto slack = [](const FlowState& x) {
        return std::max(1e-12, 16.0 * std::numeric_limits<double>::epsilon() * x.energy_scale);
    };
    double step = cfg.step_init;
    for (long it = 1; it <= max_iters; ++it) {
        if (is_converged(st)) return finish(true, it - 1);

        std::vector<double> dir;
        const auto& g = st.normal;
        if (precond) {
            auto z1 = precond->apply(st.grad);
            auto z2 = precond->apply(g);
            const double alpha = inner(grid, g, z1) / inner(grid, g, z2);
            dir.resize(z1.size());
            for (std::size_t i = 0; i < dir.size(); ++i) dir[i] = z1[i] - alpha * z2[i];
        } else {
            const double alpha = inner(grid, g, st.grad) / inner(grid, g, g);
            dir.resize(st.grad.size());
            for (std::size_t i = 0; i < dir.size(); ++i) dir[i] = st.grad[i] - alpha * g[i];
        }
        enforce_sector(dir, st.v);
        const double slope = inner(grid, st.grad, dir);

        bool accepted = false;
        while (step >= 1e-16) {
            std::vector<double> trial(st.v.size());
            for (std::size_t i = 0; i < trial.size(); ++i) trial[i] = st.v[i] - step * dir[i];
            std::optional<FlowState> cand;
            try {
                auto proj = project_mass(Field(st.v.grid, std::move(trial), st.v.sector), lambda, dual,
                                         cfg.tol_mass);
                cand = evaluate(std::move(proj.field), dual, params);
            } catch (const NumericError&) {
            } catch (const DegenerateInputError&) {
            }
            // compare on the constraint to first order: the projection leaves a mass
            // error of up to mass_tol, worth mu/2 per unit mass in energy
            const double mu = st.diag.mu;
            const auto merit = [&](const FlowState& x) { return x.energy - 0.5 * mu * (x.diag.mass - lambda); };
            if (cand && merit(*cand) <= merit(st) - cfg.armijo_c * step * slope + slack(st)) {
                st = std::move(*cand);
                accepted = true;
                break;
            }
            step *= cfg.backtrack_factor;
        }
        if (!accepted) {
            finish(false, it - 1);
            throw StagnationError("flow: backtracking failed below step 1e-16", rep);
        }
        rep.trace.push_back({it, st.diag, step});
        step = std::min(step / cfg.backtrack_factor, cfg.step_max);
    }
    return finish(is_converged(st), max_iters);
}

inline std::unique_ptr<SobolevPreconditioner> make_preconditioner(const ReducedGrid& grid, const FlowConfig& cfg) {
    if (cfg.preconditioner == Preconditioner::l2) return nullptr;
    return std::make_unique<SobolevPreconditioner>(grid, cfg.sobolev_shift);
}

}  // namespace detail

/**
 * Projected gradient flow for I on {mass = lambda} from v0. If v0 is tagged
 * antisymmetric it is antisymmetrized first and every iterate stays in that
 * sector exactly.
 */
inline SolveReport solve(const Field& v0, const ModelParams& params, const FlowConfig& config, const DualMap& dual) {
    params.validate();
    config.validate();
    Field start = v0.sector == Sector::antisymmetric ? antisymmetrize(v0) : v0;
    auto proj = project_mass(start, params.lambda, dual, config.tol_mass);
    const auto precond = detail::make_preconditioner(*v0.grid, config);
    return detail::run_flow(std::move(proj.field), params, config, dual, config.max_iters, config.tol_grad,
                            precond.get());
}

// ---------------------------------------------------------------------------

namespace detail {

/// Uniform [0, 1) from the top 53 bits; independent of the standard library's distributions.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

/**
 * Seeded random smooth start: a few Gaussian bumps with random centres,
 * widths and amplitudes in [-1, 1], antisymmetrized. Returns nullopt if the
 * antisymmetrization annihilates the sum.
 */
inline std::optional<Field> random_bumps(const GridPtr& grid, std::uint64_t seed, Sector sector) {
    std::mt19937_64 rng(seed);
    constexpr int kBumps = 4;
    const double L = grid->box_length();
    struct Bump {
        std::array<double, 3> c;
        double width, amp;
    };
    std::vector<Bump> bumps(kBumps);
    for (auto& b : bumps) {
        for (auto& x : b.c) x = detail::uniform01(rng) * L / 4.0;
        b.width = (0.5 + detail::uniform01(rng)) * L / 8.0;
        b.amp = 2.0 * detail::uniform01(rng) - 1.0;
    }
    Field v = sample(grid, [&](double r1, double r2, double r3) {
        const std::array<double, 3> r{r1, r2, r3};
        double s = 0.0;
        for (const auto& b : bumps) {
            double d2 = 0.0;
            for (int a = 0; a < grid->active_axes(); ++a) d2 += (r[a] - b.c[a]) * (r[a] - b.c[a]);
            s += b.amp * std::exp(-d2 / (2.0 * b.width * b.width));
        }
        return s;
    });
    if (sector == Sector::antisymmetric) v = antisymmetrize(v);
    const double scale = norm(v);
    if (!(scale > 1e-12)) return std::nullopt;
    return v;
}

/// random_bumps() with reseeding (seed, seed + 1, ...) up to 100 attempts.
inline Field random_start(const GridPtr& grid, std::uint64_t seed, Sector sector) {
    for (int attempt = 0; attempt < 100; ++attempt)
        if (auto v = random_bumps(grid, seed + static_cast<std::uint64_t>(attempt), sector)) return *v;
    throw DegenerateInputError("random_start: 100 consecutive starts were annihilated by the sector projection");
}

/// (r1 - r2) exp(-|r|^2 / (2 b^2)): the simplest smooth antisymmetric profile.
inline Field antisymmetric_trial(const GridPtr& grid, double width) {
    const double s = 1.0 / (2.0 * width * width);
    Field v = sample(grid, [&](double r1, double r2, double r3) {
        return (r1 - r2) * std::exp(-(r1 * r1 + r2 * r2 + r3 * r3) * s);
    });
    return antisymmetrize(v);
}

// ---------------------------------------------------------------------------

namespace detail {

/**
 * Multiplicative deflation m(v) = prod_i (1 + s/d_i(v)) with the scale-free
 * pair distance d_i = |v - v_i|^2 |v + v_i|^2 / |v_i|^4. Newton on m(v) R(v)
 * takes the undeflated Newton step delta rescaled by
 *   tau = 1 / (1 - <grad log m, delta>),
 * which keeps known roots from attracting the iteration.
 */
struct DeflationOperator {
    double strength = 1.0;
    std::vector<std::vector<double>> found;

    double factor(const ReducedGrid& grid, std::span<const double> v) const {
        double m = 1.0;
        for (const auto& s : found) m *= 1.0 + strength / distance(grid, v, s);
        return m;
    }

    double step_scale(const ReducedGrid& grid, std::span<const double> v, std::span<const double> delta) const {
        const auto w = grid.weights();
        double slope = 0.0;  // <grad log m, delta>
        for (const auto& s : found) {
            double a = 0.0, b = 0.0, ss = 0.0, da = 0.0, db = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) {
                const double dm = v[i] - s[i];
                const double dp = v[i] + s[i];
                a += w[i] * dm * dm;
                b += w[i] * dp * dp;
                ss += w[i] * s[i] * s[i];
                da += w[i] * dm * delta[i];
                db += w[i] * dp * delta[i];
            }
            const double d = a * b / (ss * ss);
            // <grad d, delta> = 2 (b da + a db) / ss^2 and grad log(1 + s/d) = -s grad d / (d (d + s))
            const double dd = 2.0 * (b * da + a * db) / (ss * ss);
            slope -= strength * dd / (d * (d + strength));
        }
        const double denom = 1.0 - slope;
        // a non-positive denominator means the deflated step points back at a known root
        return denom > 1e-8 ? 1.0 / denom : 1.0;
    }

private:
    static double distance(const ReducedGrid& grid, std::span<const double> v, std::span<const double> s) {
        const auto w = grid.weights();
        double a = 0.0, b = 0.0, ss = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            a += w[i] * (v[i] - s[i]) * (v[i] - s[i]);
            b += w[i] * (v[i] + s[i]) * (v[i] + s[i]);
            ss += w[i] * s[i] * s[i];
        }
        const double d = a * b / (ss * ss);
        if (!(d > 0.0)) throw NumericError("deflation: iterate coincides with a found solution");
        return d;
    }
};

/**
 * Constrained Newton iteration for (v, mu):
 *   -Lap v - |f|^{p-2} f f'(v) - mu f f'(v) = 0,   mass(v) = lambda.
 * Each step solves the bordered system with a sparse LU factorization of the
 * weighted Hessian, then rescales onto the constraint. Converges to saddle
 * points as well as minima. Returns nullopt if the residual stops decreasing.
 */
inline std::optional<SolveReport> newton_polish(const Field& v0, const ModelParams& params, const FlowConfig& cfg,
                                                const DualMap& dual, int max_steps = 40,
                                                const DeflationOperator* deflation = nullptr) {
    const auto& grid = *v0.grid;
    const auto w = grid.weights();
    const std::size_t size = grid.size();
    const int n = grid.points_per_axis();
    const double inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    const double p = params.p;

    // stiffness part of W (-Lap); fixed for the whole iteration
    std::vector<Eigen::Triplet<double>> stiff;
    stiff.reserve(size * (1 + 4 * grid.active_axes()));
    for (int a = 0; a < grid.active_axes(); ++a) {
        const std::size_t s = grid.stride(a);
        for (std::size_t i = 0; i < size; ++i) {
            const int j = grid.axis_index(i, a);
            const double wf = w[i] * grid.face_ratio(a, j) * inv_h2;
            const auto ii = static_cast<Eigen::Index>(i);
            stiff.emplace_back(ii, ii, wf);
            if (j + 1 < n) {
                const auto kk = static_cast<Eigen::Index>(i + s);
                stiff.emplace_back(kk, kk, wf);
                stiff.emplace_back(ii, kk, -wf);
                stiff.emplace_back(kk, ii, -wf);
            }
        }
    }

    FlowState st = evaluate(v0, dual, params);
    SolveReport rep;
    rep.sector = v0.sector;
    rep.trace.push_back({0, st.diag, 0.0});
    constexpr int kMaxUphill = 8;
    int uphill = 0;
    long it = 0;
    for (; it < max_steps && st.diag.residual_norm > cfg.tol_grad; ++it) {
        const double mu = st.diag.mu;
        std::vector<Eigen::Triplet<double>> trip(stiff);
        for (std::size_t i = 0; i < size; ++i) {
            const double u = st.dual.u[i];
            const double fp = st.dual.fp[i];
            const double fp2 = fp * fp;
            const double q = 2.0 * u * u * fp2;  // 2 f^2 f'^2 < 1
            const double dn = u == 0.0 ? 0.0 : std::pow(std::fabs(u), p - 2.0) * fp2 * ((p - 1.0) - q);
            const double dg = fp2 * (1.0 - q);
            const auto ii = static_cast<Eigen::Index>(i);
            trip.emplace_back(ii, ii, -w[i] * (dn + mu * dg));
        }
        Eigen::SparseMatrix<double> K(static_cast<Eigen::Index>(size), static_cast<Eigen::Index>(size));
        K.setFromTriplets(trip.begin(), trip.end());
        K.makeCompressed();
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(K);
        if (lu.info() != Eigen::Success) return std::nullopt;

        Eigen::VectorXd rhs1(size), rhs2(size);
        for (std::size_t i = 0; i < size; ++i) {
            const double r = st.grad[i] - mu * st.normal[i];
            rhs1(static_cast<Eigen::Index>(i)) = -w[i] * r;
            rhs2(static_cast<Eigen::Index>(i)) = w[i] * st.normal[i];
        }
        const Eigen::VectorXd x1 = lu.solve(rhs1);
        const Eigen::VectorXd x2 = lu.solve(rhs2);
        if (lu.info() != Eigen::Success || !x1.allFinite() || !x2.allFinite()) return std::nullopt;
        std::span<const double> s1(x1.data(), size), s2(x2.data(), size);
        const double gx2 = inner(grid, st.normal, s2);
        if (gx2 == 0.0) return std::nullopt;
        const double dmu = (-0.5 * (st.diag.mass - params.lambda) - inner(grid, st.normal, s1)) / gx2;
        std::vector<double> delta(size);
        for (std::size_t i = 0; i < size; ++i) delta[i] = x1(static_cast<Eigen::Index>(i)) + dmu * x2(static_cast<Eigen::Index>(i));
        enforce_sector(delta, st.v);
        if (deflation) {
            const double tau = deflation->step_scale(grid, st.v.values, delta);
            for (double& d : delta) d *= tau;
        }
        const double merit0 = deflation ? deflation->factor(grid, st.v.values) * st.diag.residual_norm
                                         : st.diag.residual_norm;

        bool accepted = false;
        std::optional<FlowState> fallback;  // longest evaluable step, for the watchdog
        double fallback_damping = 0.0;
        double damping = 1.0;
        for (int k = 0; k < 12 && !accepted; ++k, damping *= 0.5) {
            std::vector<double> trial(size);
            for (std::size_t i = 0; i < size; ++i) trial[i] = st.v[i] + damping * delta[i];
            try {
                auto proj = project_mass(Field(st.v.grid, std::move(trial), st.v.sector), params.lambda, dual,
                                         cfg.tol_mass);
                auto cand = evaluate(std::move(proj.field), dual, params);
                const double merit = deflation ? deflation->factor(grid, cand.v.values) * cand.diag.residual_norm
                                               : cand.diag.residual_norm;
                if (merit < merit0) {
                    st = std::move(cand);
                    accepted = true;
                    rep.trace.push_back({it + 1, st.diag, damping});
                } else if (!fallback) {
                    fallback = std::move(cand);
                    fallback_damping = damping;
                }
            } catch (const NumericError&) {
            } catch (const DegenerateInputError&) {
            }
        }
        // far from a root the projected residual need not decrease along the
        // Newton direction; allow a few uphill steps before giving up
        if (!accepted && fallback && uphill < kMaxUphill) {
            ++uphill;
            st = std::move(*fallback);
            accepted = true;
            rep.trace.push_back({it + 1, st.diag, fallback_damping});
        }
        if (!accepted) return std::nullopt;
    }
    rep.converged = st.diag.residual_norm <= cfg.tol_grad && std::fabs(st.diag.mass - params.lambda) <=
                                                                effective_mass_tol(cfg.tol_mass, params.lambda);
    rep.iterations = it;
    rep.diagnostics = st.diag;
    rep.boundary_max = boundary_max(st.v);
    rep.field = st.v;
    if (!rep.converged) return std::nullopt;
    return rep;
}

inline double pair_distance(const ReducedGrid& grid, std::span<const double> a, std::span<const double> b) {
    const auto w = grid.weights();
    double dm = 0.0, dp = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dm += w[i] * (a[i] - b[i]) * (a[i] - b[i]);
        dp += w[i] * (a[i] + b[i]) * (a[i] + b[i]);
    }
    return std::sqrt(std::min(dm, dp));
}

}  // namespace detail

struct MultiSolveReport {
    /// Accepted solutions sorted by energy_I ascending.
    std::vector<SolveReport> solutions;
    bool shortfall = false;
    int starts_used = 0;
    std::uint64_t seed = 0;
};

/**
 * Multi-start search for k distinct pairs +-v in the antisymmetric sector.
 * Start j uses seed config.seed + j. The first start runs the gradient flow,
 * which finds a constrained minimizer; later starts run constrained Newton
 * deflated by every root found so far (strength config.deflation_strength),
 * with the gradient flow as fallback. Every converged root farther than
 * 1e-3 sqrt(lambda) from the known ones is deflated; those with negative
 * energy are returned.
 */
inline MultiSolveReport multisolve(int k, const GridPtr& grid, const ModelParams& params, const FlowConfig& config,
                                   const DualMap& dual) {
    if (k < 1) throw ParameterError("multisolve: k must be >= 1");
    params.validate();
    config.validate();
    if (!(grid->params() == params)) throw ShapeError("multisolve: grid was built for different parameters");
    const auto precond = detail::make_preconditioner(*grid, config);
    const double min_distance = 1e-3 * std::sqrt(params.lambda);

    MultiSolveReport out;
    out.seed = config.seed;
    detail::DeflationOperator defl;
    defl.strength = config.deflation_strength;

    for (int start = 0; start < config.max_starts && static_cast<int>(out.solutions.size()) < k; ++start) {
        ++out.starts_used;
        const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(start);
        std::optional<SolveReport> root;
        try {
            Field v0 = project_mass(random_start(grid, seed, Sector::antisymmetric), params.lambda, dual,
                                    config.tol_mass)
                           .field;
            if (!defl.found.empty())
                root = detail::newton_polish(v0, params, config, dual, config.newton_steps,
                                             defl.strength > 0.0 ? &defl : nullptr);
            if (!root) {
                auto rep = detail::run_flow(std::move(v0), params, config, dual, config.max_iters, config.tol_grad,
                                            precond.get());
                if (rep.converged) root = std::move(rep);
            }
        } catch (const NumericError&) {
        } catch (const DegenerateInputError&) {
        }
        if (!root || !root->converged) continue;

        bool distinct = true;
        for (const auto& s : defl.found)
            if (detail::pair_distance(*grid, s, root->field.values) <= min_distance) {
                distinct = false;
                break;
            }
        if (!distinct) continue;
        defl.found.push_back(root->field.values);
        if (root->diagnostics.energy_I < 0.0) out.solutions.push_back(std::move(*root));
    }
    std::stable_sort(out.solutions.begin(), out.solutions.end(), [](const SolveReport& a, const SolveReport& b) {
        return a.diagnostics.energy_I < b.diagnostics.energy_I;
    });
    out.shortfall = static_cast<int>(out.solutions.size()) < k;
    return out;
}

}  // namespace qnls
