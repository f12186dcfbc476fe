#pragma once

/**
 * @file reduced_grid.hpp
 * @brief Block-radial discretization of O(m) x O(m) x O(N-2m) invariant functions.
 *
 * A function invariant under the block-orthogonal group depends on x in R^N only
 * through the block radii r1 = |x1|, r2 = |x2| (x1, x2 in R^m) and r3 = |x3|
 * (x3 in R^{N-2m}). When N = 2m the third block is empty and the grid has two
 * axes. Nodes are cell centered, r = (j + 1/2) h, h = L / n.
 *
 * Integrals carry the Jacobian sigma(d1) sigma(d2) sigma(d3) prod r_i^{d_i - 1},
 * where sigma(d) is the area of the unit sphere in R^d (sigma(0) = 1).
 *
 * The Laplacian is assembled per axis in divergence form
 *
 *   (1 / r^{d-1}) D^-( r^{d-1} D^+ v ),
 *
 * with zero flux through r = 0 (the face weight vanishes there since d >= 2)
 * and a homogeneous Dirichlet ghost node beyond r = L. The stencil is
 * self-adjoint in the weighted inner product and
 *
 *   <v, laplacian(v)>_w = -sum_faces W_face ((v_{j+1} - v_j) / h)^2,
 *
 * which is what dirichlet_energy() evaluates.
 */

#include "qnls/errors.hpp"
#include "qnls/io.hpp"
#include "qnls/model.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <memory>
#include <numbers>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace qnls {

enum class Sector { unrestricted, antisymmetric };

inline const char* to_string(Sector s) {
    return s == Sector::antisymmetric ? "antisymmetric" : "unrestricted";
}

inline Sector sector_from_string(const std::string& s) {
    if (s == "antisymmetric") return Sector::antisymmetric;
    if (s == "unrestricted") return Sector::unrestricted;
    throw ParameterError("unknown sector '" + s + "' (expected antisymmetric|unrestricted)");
}

/// Area of the unit sphere S^{d-1} in R^d; 1 for d = 0.
inline double sphere_area(int d) {
    if (d == 0) return 1.0;
    return 2.0 * std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d);
}

class ReducedGrid {
public:
    ReducedGrid(const ModelParams& params, double L, int n) : params_(params), L_(L), n_(n) {
        params.validate();
        if (!(L > 0.0) || !std::isfinite(L)) throw ParameterError("box length L must be > 0");
        if (n < 16) throw ParameterError("points per axis n must be >= 16");
        dims_ = {params.m, params.m, params.N - 2 * params.m};
        axes_ = dims_[2] == 0 ? 2 : 3;
        h_ = L / n;

        std::size_t total = 1;
        for (int a = 0; a < axes_; ++a) total *= static_cast<std::size_t>(n);
        size_ = total;
        strides_ = {0, 0, 0};
        std::size_t s = 1;
        for (int a = axes_ - 1; a >= 0; --a) {
            strides_[a] = s;
            s *= static_cast<std::size_t>(n);
        }

        double sigma = 1.0;
        for (int a = 0; a < 3; ++a) sigma *= sphere_area(dims_[a]);
        for (int a = 0; a < axes_; ++a) {
            auto& rad = radial_[a];
            auto& ratio = face_ratio_[a];
            rad.resize(n);
            ratio.resize(n);
            for (int j = 0; j < n; ++j) {
                const double r = (j + 0.5) * h_;
                const double rf = (j + 1) * h_;
                rad[j] = std::pow(r, dims_[a] - 1);
                ratio[j] = std::pow(rf, dims_[a] - 1) / rad[j];
            }
        }

        weights_.resize(size_);
        const double cell = sigma * std::pow(h_, axes_);
        for (std::size_t i = 0; i < size_; ++i) {
            // the two equal blocks are multiplied first so that w is exactly
            // symmetric under r1 <-> r2
            double w = cell * (radial_[0][axis_index(i, 0)] * radial_[1][axis_index(i, 1)]);
            if (axes_ == 3) w *= radial_[2][axis_index(i, 2)];
            weights_[i] = w;
        }
    }

    const ModelParams& params() const noexcept { return params_; }
    const std::array<int, 3>& block_dims() const noexcept { return dims_; }
    int active_axes() const noexcept { return axes_; }
    double box_length() const noexcept { return L_; }
    int points_per_axis() const noexcept { return n_; }
    double spacing() const noexcept { return h_; }
    std::size_t size() const noexcept { return size_; }
    std::span<const double> weights() const noexcept { return weights_; }

    double coordinate(int j) const noexcept { return (j + 0.5) * h_; }

    std::size_t stride(int axis) const noexcept { return strides_[axis]; }

    int axis_index(std::size_t flat, int axis) const noexcept {
        return static_cast<int>((flat / strides_[axis]) % static_cast<std::size_t>(n_));
    }

    /// Node coordinates (r1, r2, r3); r3 = 0 on two-axis grids.
    std::array<double, 3> node(std::size_t flat) const noexcept {
        std::array<double, 3> r{0.0, 0.0, 0.0};
        for (int a = 0; a < axes_; ++a) r[a] = coordinate(axis_index(flat, a));
        return r;
    }

    /// Flat index of the node with r1 and r2 exchanged.
    std::size_t mirror(std::size_t flat) const noexcept {
        const int i0 = axis_index(flat, 0);
        const int i1 = axis_index(flat, 1);
        return flat - i0 * strides_[0] - i1 * strides_[1] + i1 * strides_[0] + i0 * strides_[1];
    }

    /// True if the node touches the outer face r = L on some axis.
    bool on_outer_ring(std::size_t flat) const noexcept {
        for (int a = 0; a < axes_; ++a)
            if (axis_index(flat, a) == n_ - 1) return true;
        return false;
    }

    /// r^{d-1} at node j of an axis.
    double radial_factor(int axis, int j) const noexcept { return radial_[axis][j]; }

    /// ((j+1) h)^{d-1} / ((j + 1/2) h)^{d-1}: weight of the face above node j
    /// relative to the node weight.
    double face_ratio(int axis, int j) const noexcept { return face_ratio_[axis][j]; }

    double total_weight() const {
        double s = 0.0;
        for (double w : weights_) s += w;
        return s;
    }

    bool operator==(const ReducedGrid& o) const {
        return params_ == o.params_ && L_ == o.L_ && n_ == o.n_;
    }

private:
    ModelParams params_;
    double L_;
    int n_;
    double h_ = 0.0;
    std::array<int, 3> dims_{};
    int axes_ = 2;
    std::size_t size_ = 0;
    std::array<std::size_t, 3> strides_{};
    std::array<std::vector<double>, 3> radial_;
    std::array<std::vector<double>, 3> face_ratio_;
    std::vector<double> weights_;
};

using GridPtr = std::shared_ptr<const ReducedGrid>;

/// N - 2m = 1 and N - 2m < 0 are rejected by ModelParams::validate().
inline GridPtr build_grid(const ModelParams& params, double L, int n) {
    return std::make_shared<const ReducedGrid>(params, L, n);
}

/// Scalar nodal values on a grid, tagged with a symmetry sector.
struct Field {
    GridPtr grid;
    std::vector<double> values;
    Sector sector = Sector::unrestricted;

    Field() = default;
    Field(GridPtr g, Sector s = Sector::unrestricted)
        : grid(std::move(g)), values(grid->size(), 0.0), sector(s) {}
    Field(GridPtr g, std::vector<double> v, Sector s = Sector::unrestricted)
        : grid(std::move(g)), values(std::move(v)), sector(s) {
        if (values.size() != grid->size()) throw ShapeError("Field: value count does not match grid");
    }

    std::size_t size() const noexcept { return values.size(); }
    double& operator[](std::size_t i) noexcept { return values[i]; }
    double operator[](std::size_t i) const noexcept { return values[i]; }
};

inline void require_finite(std::span<const double> v, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!std::isfinite(v[i]))
            throw DomainError(std::string(what) + ": non-finite value at index " + std::to_string(i));
}

inline void require_same_grid(const Field& a, const Field& b) {
    if (a.grid != b.grid && !(*a.grid == *b.grid)) throw ShapeError("fields live on different grids");
    if (a.size() != b.size()) throw ShapeError("field sizes differ");
}

/// Field sampled from g(r1, r2, r3).
template <class Fn>
Field sample(const GridPtr& grid, Fn&& g, Sector sector = Sector::unrestricted) {
    Field out(grid, sector);
    for (std::size_t i = 0; i < grid->size(); ++i) {
        const auto r = grid->node(i);
        out[i] = g(r[0], r[1], r[2]);
    }
    return out;
}

/// Neumaier compensated sum; the quadratures below use it so that energy
/// differences near convergence stay above rounding noise.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::fabs(sum_) >= std::fabs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// sum_i w_i v_i
inline double integrate(const ReducedGrid& grid, std::span<const double> values) {
    require_finite(values, "integrate");
    const auto w = grid.weights();
    CompensatedSum s;
    for (std::size_t i = 0; i < values.size(); ++i) s.add(w[i] * values[i]);
    return s.value();
}

inline double integrate(const Field& field) { return integrate(*field.grid, field.values); }

/// Weighted inner product <a, b>_w.
inline double inner(const ReducedGrid& grid, std::span<const double> a, std::span<const double> b) {
    const auto w = grid.weights();
    CompensatedSum s;
    for (std::size_t i = 0; i < a.size(); ++i) s.add(w[i] * a[i] * b[i]);
    return s.value();
}

inline double inner(const Field& a, const Field& b) {
    require_same_grid(a, b);
    return inner(*a.grid, a.values, b.values);
}

inline double norm(const Field& a) { return std::sqrt(inner(*a.grid, a.values, a.values)); }

inline void laplacian_into(const ReducedGrid& grid, std::span<const double> v, std::span<double> out) {
    const int n = grid.points_per_axis();
    const double inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    const std::size_t size = grid.size();
    for (std::size_t i = 0; i < size; ++i) out[i] = 0.0;
    for (int a = 0; a < grid.active_axes(); ++a) {
        const std::size_t s = grid.stride(a);
        for (std::size_t i = 0; i < size; ++i) {
            const int j = grid.axis_index(i, a);
            const double vi = v[i];
            const double right = j + 1 < n ? v[i + s] : 0.0;
            double acc = grid.face_ratio(a, j) * (right - vi);
            if (j > 0) {
                // face below node j, rescaled to node j's radial factor
                const double below = grid.face_ratio(a, j - 1) * grid.radial_factor(a, j - 1) /
                                     grid.radial_factor(a, j);
                acc -= below * (vi - v[i - s]);
            }
            out[i] += acc * inv_h2;
        }
    }
}

inline Field laplacian(const Field& field) {
    require_finite(field.values, "laplacian");
    Field out(field.grid, field.sector);
    laplacian_into(*field.grid, field.values, out.values);
    return out;
}

/**
 * Sum over all faces of W_face * kernel(v_lo, v_hi) / h^2, where v_hi is the
 * upper neighbour (0 beyond r = L). The face at r = 0 has zero weight.
 * With kernel (b - a)^2 this is int |grad v|^2.
 */
template <class Kernel>
double face_sum(const ReducedGrid& grid, std::span<const double> v, Kernel&& kernel) {
    const int n = grid.points_per_axis();
    const auto w = grid.weights();
    const double inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    CompensatedSum total;
    for (int a = 0; a < grid.active_axes(); ++a) {
        const std::size_t s = grid.stride(a);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const int j = grid.axis_index(i, a);
            const double hi = j + 1 < n ? v[i + s] : 0.0;
            total.add(w[i] * grid.face_ratio(a, j) * kernel(v[i], hi));
        }
    }
    return total.value() * inv_h2;
}

/// int |grad v|^2 with the face differences of the Laplacian stencil.
inline double dirichlet_energy(const ReducedGrid& grid, std::span<const double> v) {
    return face_sum(grid, v, [](double a, double b) { return (b - a) * (b - a); });
}

/// (v(r1, r2, .) - v(r2, r1, .)) / 2
inline Field antisymmetrize(const Field& field) {
    const auto& g = *field.grid;
    if (g.active_axes() < 2 || g.block_dims()[0] != g.block_dims()[1])
        throw ShapeError("antisymmetrize: axes 1 and 2 must have equal dimension and resolution");
    if (field.size() != g.size()) throw ShapeError("antisymmetrize: field does not match grid");
    Field out(field.grid, Sector::antisymmetric);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t k = g.mirror(i);
        if (k < i) continue;
        if (k == i) {
            out[i] = 0.0;
            continue;
        }
        const double d = 0.5 * (field[i] - field[k]);
        out[i] = d;
        out[k] = -d;
    }
    return out;
}

/// Maximum of |v| over nodes adjacent to the outer boundary.
inline double boundary_max(const Field& field) {
    double m = 0.0;
    for (std::size_t i = 0; i < field.size(); ++i)
        if (field.grid->on_outer_ring(i)) m = std::max(m, std::fabs(field[i]));
    return m;
}

// ---------------------------------------------------------------------------
// Text dump: header "N m p lambda L n axes sector", then one value per line in
// row-major axis order. Doubles use the shortest round-trip representation.

inline void write_field(std::ostream& os, const Field& field) {
    const auto& g = *field.grid;
    const auto& pm = g.params();
    os << pm.N << ' ' << pm.m << ' ' << format_double(pm.p) << ' ' << format_double(pm.lambda) << ' '
       << format_double(g.box_length()) << ' ' << g.points_per_axis() << ' ' << g.active_axes() << ' '
       << to_string(field.sector) << '\n';
    for (double x : field.values) os << format_double(x) << '\n';
}

inline Field read_field(std::istream& is) {
    std::string header;
    if (!std::getline(is, header)) throw ParameterError("field dump: missing header");
    std::istringstream hs(header);
    std::string tN, tm, tp, tl, tL, tn, taxes, tsector, extra;
    if (!(hs >> tN >> tm >> tp >> tl >> tL >> tn >> taxes >> tsector) || (hs >> extra))
        throw ParameterError("field dump: malformed header '" + header + "'");
    ModelParams pm;
    pm.N = static_cast<int>(parse_integer(tN, "N"));
    pm.m = static_cast<int>(parse_integer(tm, "m"));
    pm.p = parse_double(tp, "p");
    pm.lambda = parse_double(tl, "lambda");
    auto grid = build_grid(pm, parse_double(tL, "L"), static_cast<int>(parse_integer(tn, "n")));
    if (parse_integer(taxes, "axes") != grid->active_axes())
        throw ShapeError("field dump: axis count does not match N and m");
    Field out(grid, sector_from_string(tsector));
    std::string line;
    for (std::size_t i = 0; i < grid->size(); ++i) {
        if (!std::getline(is, line)) throw ShapeError("field dump: too few values");
        out[i] = parse_double(line, "field value");
    }
    while (std::getline(is, line))
        if (!line.empty()) throw ShapeError("field dump: too many values");
    return out;
}

/// Atomic: the dump appears complete or not at all.
inline void save_field(const std::string& path, const Field& field) {
    std::ostringstream os;
    write_field(os, field);
    write_file_atomic(path, os.str());
}

inline Field load_field(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParameterError("cannot open '" + path + "'");
    return read_field(is);
}

}  // namespace qnls
