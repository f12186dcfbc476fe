#pragma once

/**
 * @file functionals.hpp
 * @brief Energies, constraint mass, gradient and multiplier of the dual problem.
 *
 *   I(v) = 1/2 int |grad v|^2 - 1/p int |f(v)|^p
 *   J(u) = 1/2 int |grad u|^2 + int |grad u|^2 u^2 - 1/p int |u|^p
 *   mass(v) = int f(v)^2
 *
 * Critical points of I on {mass = lambda} solve
 *   -Lap v = |f|^{p-2} f f'(v) + mu f f'(v).
 *
 * Gradients are taken in the weighted L^2 inner product of the grid, with the
 * Dirichlet term discretized by the same face differences as laplacian(), so
 * <grad_I(v), w>_w is exactly the directional derivative of the discrete I.
 */

#include "qnls/dual_map.hpp"
#include "qnls/errors.hpp"
#include "qnls/model.hpp"
#include "qnls/reduced_grid.hpp"

#include <cmath>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace qnls {

/// f(v) and f'(v) evaluated once per node.
struct DualFields {
    std::vector<double> u;
    std::vector<double> fp;

    DualFields() = default;
    DualFields(const DualMap& dual, std::span<const double> v) : u(v.size()), fp(v.size()) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double t = v[i];
            if (!std::isfinite(t))
                throw NumericError("non-finite field value at index " + std::to_string(i));
            const double ui = dual.f(t);
            u[i] = ui;
            fp[i] = DualMap::prime_from_value(ui);
        }
    }
};

namespace detail {

// sign(u) |u|^{p-1}, written to avoid 0^{negative} for p < 3.
inline double signed_power(double u, double pm1) {
    if (u == 0.0) return 0.0;
    const double a = std::pow(std::fabs(u), pm1);
    return u < 0.0 ? -a : a;
}

inline double potential_term(const ReducedGrid& grid, std::span<const double> u, double p) {
    const auto w = grid.weights();
    CompensatedSum s;
    for (std::size_t i = 0; i < u.size(); ++i) s.add(w[i] * std::pow(std::fabs(u[i]), p));
    return s.value() / p;
}

inline double energy_I_from(const ReducedGrid& grid, std::span<const double> v, const DualFields& d,
                            double p, double* scale = nullptr) {
    const double kinetic = 0.5 * dirichlet_energy(grid, v);
    const double potential = potential_term(grid, d.u, p);
    if (scale) *scale = kinetic + potential;
    return kinetic - potential;
}

inline double mass_from(const ReducedGrid& grid, const DualFields& d) {
    return inner(grid, d.u, d.u);
}

/// -Lap v - |f|^{p-2} f f'
inline void grad_I_into(const ReducedGrid& grid, std::span<const double> v, const DualFields& d, double p,
                        std::span<double> out) {
    laplacian_into(grid, v, out);
    for (std::size_t i = 0; i < v.size(); ++i)
        out[i] = -out[i] - signed_power(d.u[i], p - 1.0) * d.fp[i];
}

/// g = f f', the L^2 gradient of mass/2.
inline std::vector<double> constraint_normal(const DualFields& d) {
    std::vector<double> g(d.u.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = d.u[i] * d.fp[i];
    return g;
}

}  // namespace detail

inline double energy_I(const Field& v, const DualMap& dual, const ModelParams& params) {
    require_finite(v.values, "energy_I");
    const DualFields d(dual, v.values);
    const double e = detail::energy_I_from(*v.grid, v.values, d, params.p);
    if (!std::isfinite(e)) throw NumericError("energy_I: non-finite result");
    return e;
}

inline double energy_J(const Field& u, const ModelParams& params) {
    require_finite(u.values, "energy_J");
    const auto& g = *u.grid;
    const double grad = face_sum(g, u.values, [](double a, double b) {
        const double d = b - a;
        return d * d * (0.5 + 0.5 * (a * a + b * b));
    });
    const double e = grad - detail::potential_term(g, u.values, params.p);
    if (!std::isfinite(e)) throw NumericError("energy_J: non-finite result");
    return e;
}

/// I(v) - (mu/2) int f(v)^2
inline double energy_I_bar(const Field& v, double mu, const DualMap& dual, const ModelParams& params) {
    const DualFields d(dual, v.values);
    return detail::energy_I_from(*v.grid, v.values, d, params.p) - 0.5 * mu * detail::mass_from(*v.grid, d);
}

/// J(u) - (mu/2) int u^2
inline double energy_J_bar(const Field& u, double mu, const ModelParams& params) {
    return energy_J(u, params) - 0.5 * mu * inner(*u.grid, u.values, u.values);
}

inline double mass(const Field& v, const DualMap& dual) {
    require_finite(v.values, "mass");
    const DualFields d(dual, v.values);
    return detail::mass_from(*v.grid, d);
}

inline Field grad_I(const Field& v, const DualMap& dual, const ModelParams& params) {
    require_finite(v.values, "grad_I");
    const DualFields d(dual, v.values);
    Field out(v.grid, v.sector);
    detail::grad_I_into(*v.grid, v.values, d, params.p, out.values);
    return out;
}

/// Least-squares multiplier <grad_I, g>_w / <g, g>_w with g = f(v) f'(v).
inline double multiplier_mu(const Field& v, const DualMap& dual, const ModelParams& params) {
    const auto& grid = *v.grid;
    const DualFields d(dual, v.values);
    std::vector<double> grad(v.size());
    detail::grad_I_into(grid, v.values, d, params.p, grad);
    const auto g = detail::constraint_normal(d);
    const double gg = inner(grid, g, g);
    if (!(gg > 0.0)) throw DegenerateInputError("multiplier_mu: f(v) f'(v) vanishes identically");
    return inner(grid, grad, g) / gg;
}

struct Residual {
    Field field;
    double norm = 0.0;
};

/// R = -Lap v - |f|^{p-2} f f'(v) - mu f f'(v) and its weighted L^2 norm.
inline Residual residual(const Field& v, double mu, const DualMap& dual, const ModelParams& params) {
    require_finite(v.values, "residual");
    const DualFields d(dual, v.values);
    Residual r{Field(v.grid, v.sector), 0.0};
    detail::grad_I_into(*v.grid, v.values, d, params.p, r.field.values);
    for (std::size_t i = 0; i < v.size(); ++i) r.field[i] -= mu * d.u[i] * d.fp[i];
    r.norm = norm(r.field);
    return r;
}

/// Snapshot of every scalar the solver tracks.
struct Diagnostics {
    double energy_I = 0.0;
    double energy_J = 0.0;
    double mass = 0.0;
    double l2_of_v = 0.0;
    double mu = 0.0;
    double residual_norm = 0.0;
    double projected_grad_norm = 0.0;
};

/// Everything in Diagnostics from one evaluation of f over the field. When
/// f f' vanishes identically mu is reported as 0.
inline Diagnostics diagnose(const Field& v, const DualMap& dual, const ModelParams& params) {
    const auto& grid = *v.grid;
    const DualFields d(dual, v.values);
    Diagnostics out;
    out.energy_I = detail::energy_I_from(grid, v.values, d, params.p);
    out.energy_J = energy_J(Field(v.grid, d.u, v.sector), params);
    out.mass = detail::mass_from(grid, d);
    out.l2_of_v = inner(grid, v.values, v.values);

    std::vector<double> grad(v.size());
    detail::grad_I_into(grid, v.values, d, params.p, grad);
    const auto g = detail::constraint_normal(d);
    const double gg = inner(grid, g, g);
    out.mu = gg > 0.0 ? inner(grid, grad, g) / gg : 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] -= out.mu * g[i];
    // the tangential projection of grad_I is the residual at the least-squares mu
    out.residual_norm = std::sqrt(inner(grid, grad, grad));
    out.projected_grad_norm = out.residual_norm;
    if (!std::isfinite(out.energy_I) || !std::isfinite(out.energy_J))
        throw NumericError("diagnose: non-finite energy");
    return out;
}

inline constexpr const char* kDiagnosticsCsvHeader =
    "iter,energy_I,energy_J,mass,l2_of_v,mu,residual_norm,projected_grad_norm,step_size";

inline void write_csv_row(std::ostream& os, long iter, const Diagnostics& d, double step) {
    os << iter << ',' << format_double(d.energy_I) << ',' << format_double(d.energy_J) << ','
       << format_double(d.mass) << ',' << format_double(d.l2_of_v) << ',' << format_double(d.mu) << ','
       << format_double(d.residual_norm) << ',' << format_double(d.projected_grad_norm) << ','
       << format_double(step) << '\n';
}

}  // namespace qnls
