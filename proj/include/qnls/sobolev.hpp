#pragma once

/**
 * @file sobolev.hpp
 * @brief Exact inverse of (shift - laplacian) on a ReducedGrid.
 *
 * The discrete Laplacian is a sum of one-dimensional operators, one per axis,
 * each of the form -W^{-1} A with A symmetric tridiagonal and W = diag(r^{d-1}).
 * Diagonalizing S = W^{-1/2} A W^{-1/2} = Q diag(ev) Q^T once per axis gives
 *
 *   (shift - laplacian)^{-1} = (x) (W^{-1/2} Q) . diag(1 / (shift + sum ev)) . (x) (Q^T W^{1/2}),
 *
 * applied in O(n^{axes+1}) per call. The operator is self-adjoint and positive
 * in the weighted inner product and commutes with the r1 <-> r2 exchange.
 */

#include "qnls/errors.hpp"
#include "qnls/reduced_grid.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <span>
#include <vector>

namespace qnls {

class SobolevPreconditioner {
public:
    using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    SobolevPreconditioner(const ReducedGrid& grid, double shift) : shift_(shift) {
        if (!(shift > 0.0)) throw ParameterError("sobolev shift must be > 0");
        n_ = grid.points_per_axis();
        axes_ = grid.active_axes();
        const double h2 = grid.spacing() * grid.spacing();
        for (int a = 0; a < axes_; ++a) {
            // axes 0 and 1 always share the block dimension m
            if (a == 1) {
                forward_[1] = forward_[0];
                backward_[1] = backward_[0];
                eigen_[1] = eigen_[0];
                continue;
            }
            Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n_, n_);
            Eigen::VectorXd sqrt_w(n_);
            for (int j = 0; j < n_; ++j) sqrt_w(j) = std::sqrt(grid.radial_factor(a, j));
            for (int j = 0; j < n_; ++j) {
                const double face = grid.face_ratio(a, j) * grid.radial_factor(a, j) / h2;
                S(j, j) += face;
                if (j + 1 < n_) {
                    S(j + 1, j + 1) += face;
                    S(j, j + 1) -= face;
                    S(j + 1, j) -= face;
                }
            }
            for (int i = 0; i < n_; ++i)
                for (int j = 0; j < n_; ++j) S(i, j) /= sqrt_w(i) * sqrt_w(j);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
            if (es.info() != Eigen::Success) throw NumericError("sobolev: eigendecomposition failed");
            const Eigen::MatrixXd& Q = es.eigenvectors();
            forward_[a] = Matrix(n_, n_);
            backward_[a] = Matrix(n_, n_);
            for (int i = 0; i < n_; ++i)
                for (int j = 0; j < n_; ++j) {
                    forward_[a](i, j) = Q(j, i) * sqrt_w(j);   // Q^T W^{1/2}
                    backward_[a](i, j) = Q(i, j) / sqrt_w(i);  // W^{-1/2} Q
                }
            eigen_[a].assign(es.eigenvalues().data(), es.eigenvalues().data() + n_);
        }
    }

    double shift() const noexcept { return shift_; }

    /// Smallest eigenvalue of -laplacian (sum over axes).
    double min_eigenvalue() const {
        double s = 0.0;
        for (int a = 0; a < axes_; ++a) s += eigen_[a].front();
        return s;
    }

    std::vector<double> apply(std::span<const double> r) const {
        std::vector<double> x(r.begin(), r.end());
        for (int a = 0; a < axes_; ++a) along_axis(forward_[a], a, x);
        const std::size_t total = x.size();
        const std::size_t nn = static_cast<std::size_t>(n_);
        for (std::size_t i = 0; i < total; ++i) {
            double denom = shift_;
            std::size_t rem = i;
            for (int a = axes_ - 1; a >= 0; --a) {
                denom += eigen_[a][rem % nn];
                rem /= nn;
            }
            x[i] /= denom;
        }
        for (int a = 0; a < axes_; ++a) along_axis(backward_[a], a, x);
        return x;
    }

private:
    // x <- T applied along one axis of the row-major n^axes array.
    void along_axis(const Matrix& T, int axis, std::vector<double>& x) const {
        const Eigen::Index n = n_;
        const Eigen::Index outer = [&] {
            Eigen::Index s = 1;
            for (int a = 0; a < axis; ++a) s *= n;
            return s;
        }();
        const Eigen::Index inner = [&] {
            Eigen::Index s = 1;
            for (int a = axis + 1; a < axes_; ++a) s *= n;
            return s;
        }();
        Matrix tmp(n, inner);
        for (Eigen::Index o = 0; o < outer; ++o) {
            Eigen::Map<Matrix> block(x.data() + o * n * inner, n, inner);
            tmp.noalias() = T * block;
            block = tmp;
        }
    }

    double shift_;
    int n_ = 0;
    int axes_ = 0;
    std::array<Matrix, 3> forward_;
    std::array<Matrix, 3> backward_;
    std::array<std::vector<double>, 3> eigen_;
};

}  // namespace qnls
