#pragma once

#include "qnls/errors.hpp"

#include <charconv>
#include <cmath>
#include <string>
#include <system_error>

namespace qnls {

/// Shortest decimal representation that parses back to the same double.
inline std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

/// Parses a full token as a double; throws ParameterError on trailing garbage.
inline double parse_double(const std::string& text, const std::string& what) {
    double x = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto res = std::from_chars(first, last, x);
    if (res.ec != std::errc() || res.ptr != last)
        throw ParameterError(what + ": cannot parse '" + text + "' as a real number");
    return x;
}

inline long long parse_integer(const std::string& text, const std::string& what) {
    long long x = 0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto res = std::from_chars(first, last, x);
    if (res.ec != std::errc() || res.ptr != last)
        throw ParameterError(what + ": cannot parse '" + text + "' as an integer");
    return x;
}

/// Problem parameters: ambient dimension N, block dimension m, exponent p, mass lambda.
struct ModelParams {
    int N = 4;
    int m = 2;
    double p = 3.0;
    double lambda = 10.0;

    double p_upper() const { return 4.0 + 4.0 / N; }
    /// Lower end of the intermediate regime, 2 + 4/N.
    double p_critical() const { return 2.0 + 4.0 / N; }

    /// Throws ParameterError quoting the violated hypothesis.
    void validate() const {
        if (N < 4) throw ParameterError("N must be >= 4 (got " + std::to_string(N) + ")");
        if (m < 2 || 2 * m > N)
            throw ParameterError("m must lie in [2, N/2] (got m=" + std::to_string(m) +
                                 ", N=" + std::to_string(N) + ")");
        if (N - 2 * m == 1) throw ParameterError("N-2m must not equal 1");
        if (!(p > 2.0 && p < p_upper()))
            throw ParameterError("p must lie in (2, 4+4/N) = (2, " + format_double(p_upper()) +
                                 ") (got p=" + format_double(p) + ")");
        if (!(lambda > 0.0) || !std::isfinite(lambda))
            throw ParameterError("lambda must be > 0 (got " + format_double(lambda) + ")");
    }

    bool operator==(const ModelParams&) const = default;
};

}  // namespace qnls
