#pragma once

/**
 * @file dual_map.hpp
 * @brief The dual change of variables u = f(v).
 *
 * f is the odd, increasing solution of f'(t) = 1/sqrt(1 + 2 f(t)^2), f(0) = 0.
 * It is evaluated as the inverse of the closed-form primitive
 *
 *   F(s) = int_0^s sqrt(1 + 2 x^2) dx = s sqrt(1 + 2 s^2) / 2 + asinh(sqrt(2) s) / (2 sqrt(2)),
 *
 * so f(t) = F^{-1}(t). F is odd, strictly increasing and convex on [0, inf),
 * which makes Newton's method started above the root monotone.
 */

#include "qnls/errors.hpp"

#include <cmath>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace qnls {

/// Value of f and f' at one point; f' is a by-product of f.
struct DualValue {
    double f;
    double fp;
};

class DualMap {
public:
    static constexpr double kQuarticRootTwo = 1.189207115002721;  // 2^{1/4}

    explicit DualMap(double newton_tol = 1e-12, int max_newton_iters = 100)
        : newton_tol_(newton_tol), max_newton_iters_(max_newton_iters) {
        if (!(newton_tol > 0.0) || !std::isfinite(newton_tol))
            throw ParameterError("DualMap: newton_tol must be > 0");
        if (max_newton_iters < 1)
            throw ParameterError("DualMap: max_newton_iters must be >= 1");
    }

    double newton_tol() const noexcept { return newton_tol_; }
    int max_newton_iters() const noexcept { return max_newton_iters_; }

    /// F(s) = int_0^s sqrt(1 + 2x^2) dx. This is also f^{-1}.
    static double primitive(double s) {
        if (!std::isfinite(s)) throw DomainError("primitive: non-finite argument");
        return primitive_unchecked(s);
    }

    /// Inverse map v = f^{-1}(u).
    static double inverse(double u) { return primitive(u); }

    double f(double t) const {
        if (!std::isfinite(t)) throw DomainError("f: non-finite argument");
        const double a = std::fabs(t);
        // the exact f obeys |f(t)| <= min(|t|, 2^(1/4) sqrt|t|); clamping removes
        // the last-ulp excursions of the Newton solution
        const double s = a < kSeriesLimit ? series(a) : std::min(solve_positive(a), upper_bound(a));
        return std::signbit(t) ? -s : s;
    }

    double f_prime(double t) const { return prime_from_value(f(t)); }

    /// f''(t) = -2 f(t) f'(t)^4
    double f_second(double t) const {
        const double u = f(t);
        const double fp = prime_from_value(u);
        const double fp2 = fp * fp;
        return -2.0 * u * fp2 * fp2;
    }

    DualValue eval(double t) const {
        const double u = f(t);
        return {u, prime_from_value(u)};
    }

    /// min(a, 2^(1/4) sqrt(a)) for a >= 0: an upper bound of f(a) and the Newton start.
    static double upper_bound(double a) noexcept { return std::min(a, kQuarticRootTwo * std::sqrt(a)); }

    static double prime_from_value(double u) noexcept { return 1.0 / std::sqrt(1.0 + 2.0 * u * u); }

    std::vector<double> map_field(std::span<const double> values) const {
        std::vector<double> out(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) out[i] = at_index(values[i], i);
        return out;
    }

    std::vector<double> map_prime_field(std::span<const double> values) const {
        std::vector<double> out(values.size());
        for (std::size_t i = 0; i < values.size(); ++i)
            out[i] = prime_from_value(at_index(values[i], i));
        return out;
    }

private:
    // Below this, f(t) = t - t^3/3 + 13 t^5/30 + O(t^7) is exact to rounding,
    // while Newton on F loses the last bit of t - f(t).
    static constexpr double kSeriesLimit = 1e-5;

    static double series(double a) noexcept {
        const double a2 = a * a;
        return a + a * a2 * (-1.0 / 3.0 + a2 * (13.0 / 30.0));
    }

    static double primitive_unchecked(double s) noexcept {
        constexpr double kSqrt2 = 1.4142135623730951;
        return 0.5 * s * std::sqrt(1.0 + 2.0 * s * s) + std::asinh(kSqrt2 * s) / (2.0 * kSqrt2);
    }

    double at_index(double t, std::size_t i) const {
        try {
            return f(t);
        } catch (const Error& e) {
            std::ostringstream os;
            os << "map_field: entry " << i << ": " << e.what();
            throw NumericError(os.str());
        }
    }

    // Root of F(s) = a for a >= 0. The start min(a, 2^{1/4} sqrt(a)) is an upper
    // bound of the root, so the Newton iterates decrease monotonically; the
    // bracket [lo, hi] is kept as a bisection fallback.
    double solve_positive(double a) const {
        if (a == 0.0) return 0.0;
        double s = upper_bound(a);
        double lo = 0.0;
        double hi = s + 1.0;
        constexpr double eps = std::numeric_limits<double>::epsilon();
        for (int it = 0; it < max_newton_iters_; ++it) {
            const double r = primitive_unchecked(s) - a;
            if (r == 0.0) return s;
            if (r > 0.0) hi = s; else lo = s;
            double next = s - r / std::sqrt(1.0 + 2.0 * s * s);
            if (!(next > lo && next < hi)) next = lo + 0.5 * (hi - lo);
            if (std::fabs(next - s) <= 2.0 * eps * s || hi - lo <= 2.0 * eps * hi) {
                s = next;
                if (std::fabs(primitive_unchecked(s) - a) <= newton_tol_ * std::max(1.0, a)) return s;
                break;
            }
            s = next;
        }
        if (std::fabs(primitive_unchecked(s) - a) <= newton_tol_ * std::max(1.0, a)) return s;
        std::ostringstream os;
        os.precision(17);
        os << "f: no convergence for t=" << a << " after " << max_newton_iters_
           << " iterations; last bracket [" << lo << ", " << hi << "]";
        throw NumericError(os.str());
    }

    double newton_tol_;
    int max_newton_iters_;
};

}  // namespace qnls
