#pragma once

#include "qmeas/error.hpp"
#include "qmeas/spectral.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <variant>

namespace qmeas {

inline constexpr double kStateTol = 1e-10;

/// Either a normalized state vector or a unit-trace positive density matrix.
class QuantumState {
public:
    /// The one-dimensional state (1).
    QuantumState() : data_(Vector(Vector::Ones(1))) {}

    static QuantumState pure(Vector psi, double tol = kStateTol) {
        if (psi.size() < 1) throw Error(ErrorKind::InvalidState, "empty state vector");
        const double norm = psi.norm();
        if (!(std::abs(norm - 1.0) <= tol)) {
            throw Error(ErrorKind::NotNormalized, "state norm " + std::to_string(norm) + " differs from 1");
        }
        return QuantumState(std::move(psi));
    }

    /// Normalizes psi first; rejects the zero vector.
    static QuantumState normalized(const Vector& psi) {
        const double norm = psi.norm();
        if (!(norm > 0.0)) throw Error(ErrorKind::InvalidState, "cannot normalize the zero vector");
        return QuantumState(Vector(psi / norm));
    }

    static QuantumState density(Matrix rho, double tol = kStateTol) {
        if (rho.rows() != rho.cols() || rho.rows() < 1) {
            throw Error(ErrorKind::InvalidState, "density matrix must be square and non-empty");
        }
        if (max_abs(rho - rho.adjoint()) > tol) {
            throw Error(ErrorKind::InvalidState, "density matrix is not Hermitian");
        }
        rho = (rho + rho.adjoint()) / 2.0;
        const double trace = rho.trace().real();
        if (!(std::abs(trace - 1.0) <= tol)) {
            throw Error(ErrorKind::InvalidState, "density trace " + std::to_string(trace) + " differs from 1");
        }
        Eigen::SelfAdjointEigenSolver<Matrix> solver(rho, Eigen::EigenvaluesOnly);
        if (solver.eigenvalues().minCoeff() < -tol) {
            throw Error(ErrorKind::InvalidState, "density matrix has a negative eigenvalue");
        }
        return QuantumState(std::move(rho));
    }

    static QuantumState maximally_mixed(Index dim) {
        return density(Matrix::Identity(dim, dim) / static_cast<double>(dim));
    }

    bool is_pure() const noexcept { return std::holds_alternative<Vector>(data_); }

    Index dim() const noexcept {
        return is_pure() ? std::get<Vector>(data_).size() : std::get<Matrix>(data_).rows();
    }

    const Vector& vector() const {
        if (!is_pure()) throw Error(ErrorKind::InvalidState, "state is a density operator, not a vector");
        return std::get<Vector>(data_);
    }

    Matrix density_matrix() const {
        if (is_pure()) return outer(std::get<Vector>(data_));
        return std::get<Matrix>(data_);
    }

    double purity() const {
        if (is_pure()) return 1.0;
        const Matrix& rho = std::get<Matrix>(data_);
        return (rho * rho).trace().real();
    }

    /// ||P psi||^2 for vectors, Tr(rho P) for densities.
    double probability(const Matrix& projector) const {
        require_dim(projector.rows());
        if (is_pure()) return (projector * std::get<Vector>(data_)).squaredNorm();
        return (std::get<Matrix>(data_) * projector).trace().real();
    }

    double expectation(const Matrix& op) const {
        require_dim(op.rows());
        if (is_pure()) {
            const Vector& psi = std::get<Vector>(data_);
            return psi.dot(op * psi).real();
        }
        return (std::get<Matrix>(data_) * op).trace().real();
    }

    double expectation(const HermitianOperator& op) const { return expectation(op.matrix()); }

    double variance(const HermitianOperator& op) const {
        const double mean = expectation(op);
        const double second = expectation(Matrix(op.matrix() * op.matrix()));
        return std::max(0.0, second - mean * mean);
    }

    /// Max-norm distance between density matrices; global phase of pure states is ignored.
    double distance(const QuantumState& other) const {
        return max_abs(density_matrix() - other.density_matrix());
    }

    void require_dim(Index d) const {
        if (d != dim()) {
            throw Error(ErrorKind::DimensionMismatch,
                        "state dimension " + std::to_string(dim()) + " vs operator dimension " + std::to_string(d));
        }
    }

private:
    explicit QuantumState(Vector v) : data_(std::move(v)) {}
    explicit QuantumState(Matrix m) : data_(std::move(m)) {}

    std::variant<Vector, Matrix> data_;
};

}  // namespace qmeas
