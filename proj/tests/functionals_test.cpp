// Tests for the energies, mass, gradient, multiplier and residual.

#include "qnls/errors.hpp"
#include "qnls/functionals.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

namespace {

using namespace qnls;

ModelParams params(double p = 3.0, int N = 4, int m = 2) {
    ModelParams pm;
    pm.N = N;
    pm.m = m;
    pm.p = p;
    return pm;
}

// Sum of a few Gaussians with random centres, widths and amplitudes.
Field smooth_field(const GridPtr& grid, unsigned seed, double amplitude = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> centre(0.0, 2.5), width(0.6, 1.2), amp(-1.0, 1.0);
    struct Bump { double c[3], w, a; };
    std::vector<Bump> bumps(3);
    for (auto& b : bumps) {
        for (double& c : b.c) c = centre(rng);
        b.w = width(rng);
        b.a = amplitude * amp(rng);
    }
    return sample(grid, [&](double x, double y, double z) {
        double s = 0.0;
        for (const auto& b : bumps) {
            const double d2 = (x - b.c[0]) * (x - b.c[0]) + (y - b.c[1]) * (y - b.c[1]) + (z - b.c[2]) * (z - b.c[2]);
            s += b.a * std::exp(-d2 / (b.w * b.w));
        }
        return s;
    });
}

Field scaled(const Field& v, double c) {
    Field out(v.grid, v.sector);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = c * v[i];
    return out;
}

Field axpy(const Field& v, double c, const Field& w) {
    Field out(v.grid, v.sector);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] + c * w[i];
    return out;
}

Field mirrored(const Field& v) {
    Field out(v.grid, v.sector);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[v.grid->mirror(i)];
    return out;
}

class FunctionalsTest : public ::testing::Test {
protected:
    DualMap dual;
    GridPtr grid = build_grid(params(), 8.0, 64);
};

TEST_F(FunctionalsTest, ZeroFieldGivesZeros) {
    const Field zero(grid);
    EXPECT_EQ(energy_I(zero, dual, params()), 0.0);
    EXPECT_EQ(energy_J(zero, params()), 0.0);
    EXPECT_EQ(mass(zero, dual), 0.0);
    for (double x : grad_I(zero, dual, params()).values) EXPECT_EQ(x, 0.0);
    const auto r = residual(zero, -0.7, dual, params());
    EXPECT_EQ(r.norm, 0.0);
    for (double x : r.field.values) EXPECT_EQ(x, 0.0);
}

TEST_F(FunctionalsTest, SmallScalingLimitOfEnergy) {
    const auto phi = sample(grid, [](double a, double b, double) { return std::exp(-(a * a + b * b)); });
    const double half_dirichlet = 0.5 * dirichlet_energy(*grid, phi.values);
    for (double eps : {1e-3, 1e-4}) {
        const double ratio = energy_I(scaled(phi, eps), dual, params()) / (eps * eps);
        EXPECT_LE(std::fabs(ratio / half_dirichlet - 1.0), 1e-3) << "eps=" << eps;
    }
}

TEST_F(FunctionalsTest, EnergyAfterDumpRoundTripIsBitExact) {
    const auto v = smooth_field(grid, 7);
    std::stringstream ss;
    write_field(ss, v);
    const auto back = read_field(ss);
    EXPECT_EQ(energy_I(back, dual, params()), energy_I(v, dual, params()));
}

TEST_F(FunctionalsTest, QuasilinearEnergyAgreesAtSmallAmplitude) {
    const auto u = smooth_field(grid, 3, 1e-4);
    const double I = energy_I(u, dual, params());
    EXPECT_LE(std::fabs(energy_J(u, params()) - I), 1e-6 * std::fabs(I) + 1e-12);
}

TEST_F(FunctionalsTest, QuasilinearEnergyOfMappedFieldMatchesDualEnergy) {
    const auto fine = build_grid(params(), 8.0, 256);
    for (unsigned seed = 0; seed < 3; ++seed) {
        const auto v = smooth_field(fine, seed);
        const Field u(fine, dual.map_field(v.values));
        const double I = energy_I(v, dual, params());
        EXPECT_LE(std::fabs(energy_J(u, params()) - I), 1e-4 * (1.0 + std::fabs(I))) << "seed=" << seed;
    }
}

TEST_F(FunctionalsTest, MultiplierTermsCancelExactly) {
    const auto v = smooth_field(grid, 5);
    const Field u(grid, dual.map_field(v.values));
    const double gap = energy_J(u, params()) - energy_I(v, dual, params());
    for (double mu : {-3.0, 0.0, 0.25, 11.0}) {
        const double gap_bar = energy_J_bar(u, mu, params()) - energy_I_bar(v, mu, dual, params());
        const double scale = std::fabs(energy_J_bar(u, mu, params())) + std::fabs(mu) * mass(v, dual);
        EXPECT_NEAR(gap_bar, gap, 8.0 * std::numeric_limits<double>::epsilon() * scale) << "mu=" << mu;
    }
}

TEST_F(FunctionalsTest, MassSmallAmplitudeLimit) {
    const auto phi = smooth_field(grid, 1);
    const double eps = 1e-4;
    const double ref = eps * eps * inner(phi, phi);
    EXPECT_LE(std::fabs(mass(scaled(phi, eps), dual) / ref - 1.0), 1e-6);
}

TEST_F(FunctionalsTest, MassBoundedByL2OfDualVariable) {
    const auto small = build_grid(params(), 4.0, 16);
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-30.0, 30.0);
    for (int k = 0; k < 100; ++k) {
        Field v(small);
        for (double& x : v.values) x = u(rng);
        EXPECT_LE(mass(v, dual), inner(v, v));
    }
}

TEST_F(FunctionalsTest, MassStrictlyIncreasingUnderScaling) {
    const auto v = smooth_field(grid, 8);
    EXPECT_EQ(mass(scaled(v, 0.0), dual), 0.0);
    double prev = 0.0;
    for (double c = 0.25; c <= 64.0; c *= 2.0) {
        const double m = mass(scaled(v, c), dual);
        EXPECT_GT(m, prev) << "c=" << c;
        prev = m;
    }
}

TEST_F(FunctionalsTest, GradientMatchesCentralDifferences) {
    // directional derivative against <grad_I, w>; error must shrink like eps^2
    const auto pm = params(3.0);
    int checked = 0;
    for (unsigned pair = 0; pair < 20; ++pair) {
        const auto v = smooth_field(grid, 100 + pair, 2.0);
        const auto w = smooth_field(grid, 200 + pair);
        const double exact = inner(grad_I(v, dual, pm), w);
        double err[2];
        const double eps[2] = {1e-2, 1e-3};
        for (int k = 0; k < 2; ++k) {
            const double fd = (energy_I(axpy(v, eps[k], w), dual, pm) - energy_I(axpy(v, -eps[k], w), dual, pm)) /
                              (2.0 * eps[k]);
            err[k] = std::fabs(fd - exact);
        }
        if (err[1] < 1e-11 * (1.0 + std::fabs(exact))) continue;  // already at rounding level
        EXPECT_GE(std::log10(err[0] / err[1]), 1.8) << "pair=" << pair << " errs " << err[0] << " " << err[1];
        ++checked;
    }
    EXPECT_GE(checked, 15);
}

TEST_F(FunctionalsTest, GradientPreservesAntisymmetry) {
    for (double p : {2.5, 3.0, 3.9}) {
        const auto v = antisymmetrize(smooth_field(grid, 12, 3.0));
        const auto g = grad_I(v, dual, params(p));
        EXPECT_EQ(g.sector, Sector::antisymmetric);
        for (std::size_t i = 0; i < grid->size(); ++i) EXPECT_EQ(g[i], -g[grid->mirror(i)]);
    }
}

TEST_F(FunctionalsTest, EvenUnderNegationAndMirror) {
    const auto v = smooth_field(grid, 13, 3.0);
    const double I = energy_I(v, dual, params());
    const double M = mass(v, dual);
    EXPECT_EQ(energy_I(scaled(v, -1.0), dual, params()), I);
    EXPECT_EQ(mass(scaled(v, -1.0), dual), M);
    EXPECT_NEAR(energy_I(mirrored(v), dual, params()), I, 1e-13 * (1.0 + std::fabs(I)));
    EXPECT_NEAR(mass(mirrored(v), dual), M, 1e-13 * M);
}

TEST_F(FunctionalsTest, MultiplierOfZeroIsDegenerate) {
    EXPECT_THROW(multiplier_mu(Field(grid), dual, params()), DegenerateInputError);
}

TEST_F(FunctionalsTest, MultiplierIsLeastSquaresOptimal) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd(0.0, 3.0);
    for (unsigned seed = 0; seed < 3; ++seed) {
        const auto v = smooth_field(grid, 40 + seed, 2.0);
        const double mu = multiplier_mu(v, dual, params());
        const double best = residual(v, mu, dual, params()).norm;
        for (int k = 0; k < 10; ++k) {
            const double other = mu + nd(rng);
            EXPECT_LE(best, residual(v, other, dual, params()).norm);
        }
    }
}

TEST_F(FunctionalsTest, DiagnosticsInvariants) {
    const auto v = smooth_field(grid, 17, 4.0);
    const auto d = diagnose(v, dual, params());
    EXPECT_GE(d.mass, 0.0);
    EXPECT_LE(d.mass, d.l2_of_v);
    EXPECT_GE(d.residual_norm, 0.0);
    EXPECT_DOUBLE_EQ(d.energy_I, energy_I(v, dual, params()));
    EXPECT_DOUBLE_EQ(d.mass, mass(v, dual));
    EXPECT_NEAR(d.mu, multiplier_mu(v, dual, params()), 1e-12 * (1.0 + std::fabs(d.mu)));
    EXPECT_NEAR(d.residual_norm, residual(v, d.mu, dual, params()).norm, 1e-9 * (1.0 + d.residual_norm));
}

TEST_F(FunctionalsTest, CsvRowHasNineColumns) {
    std::ostringstream os;
    write_csv_row(os, 3, diagnose(smooth_field(grid, 2), dual, params()), 0.1);
    const std::string row = os.str();
    EXPECT_EQ(std::count(row.begin(), row.end(), ','), 8);
    EXPECT_EQ(row.rfind("3,", 0), 0u);
    const std::string header = kDiagnosticsCsvHeader;
    EXPECT_EQ(header, "iter,energy_I,energy_J,mass,l2_of_v,mu,residual_norm,projected_grad_norm,step_size");
}

TEST_F(FunctionalsTest, NonFiniteInputIsRejected) {
    Field v(grid);
    v[3] = INFINITY;
    EXPECT_THROW(energy_I(v, dual, params()), Error);
    EXPECT_THROW(mass(v, dual), Error);
    EXPECT_THROW(grad_I(v, dual, params()), Error);
}

}  // namespace
