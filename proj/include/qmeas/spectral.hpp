#pragma once

// Dense complex linear algebra over small Hilbert spaces: Hermitian operators,
// tolerance-grouped spectral decompositions into eigenspace projectors,
// tensor products and the functional calculus f(A) = sum_m f(alpha_m) P_m.

#include "qmeas/error.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <complex>
#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace qmeas {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using Index = Eigen::Index;

inline constexpr double kHermiticityTol = 1e-10;
inline constexpr double kRelativeEigTol = 1e-9;

inline double max_abs(const Matrix& m) {
    return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

inline Matrix kron(const Matrix& a, const Matrix& b) {
    return Eigen::kroneckerProduct(a, b).eval();
}

inline Vector kron(const Vector& a, const Vector& b) {
    Vector out(a.size() * b.size());
    for (Index i = 0; i < a.size(); ++i) {
        out.segment(i * b.size(), b.size()) = a(i) * b;
    }
    return out;
}

inline Matrix outer(const Vector& v) {
    return v * v.adjoint();
}

/// Dense self-adjoint matrix. Construction rejects inputs whose max entry
/// deviation from the adjoint exceeds the tolerance and otherwise stores the
/// symmetrized matrix (A + A^dagger) / 2.
class HermitianOperator {
public:
    explicit HermitianOperator(const Matrix& m, double tol = kHermiticityTol) {
        if (m.rows() != m.cols()) {
            throw Error(ErrorKind::DimensionMismatch, "operator matrix is not square");
        }
        if (m.rows() < 1) {
            throw Error(ErrorKind::DimensionMismatch, "operator dimension must be >= 1");
        }
        const double dev = max_abs(m - m.adjoint());
        if (!(dev <= tol)) {
            throw Error(ErrorKind::NotHermitian,
                        "max |A - A^dagger| = " + std::to_string(dev) + " exceeds " + std::to_string(tol));
        }
        matrix_ = (m + m.adjoint()) / 2.0;
    }

    static HermitianOperator identity(Index dim) {
        return HermitianOperator(Matrix::Identity(dim, dim));
    }

    static HermitianOperator diagonal(const std::vector<double>& values) {
        Matrix m = Matrix::Zero(static_cast<Index>(values.size()), static_cast<Index>(values.size()));
        for (std::size_t i = 0; i < values.size(); ++i) {
            m(static_cast<Index>(i), static_cast<Index>(i)) = values[i];
        }
        return HermitianOperator(m);
    }

    Index dim() const noexcept { return matrix_.rows(); }
    const Matrix& matrix() const noexcept { return matrix_; }

private:
    Matrix matrix_;
};

inline HermitianOperator pauli_x() {
    Matrix m(2, 2);
    m << 0, 1, 1, 0;
    return HermitianOperator(m);
}

inline HermitianOperator pauli_y() {
    Matrix m(2, 2);
    m << 0, Complex(0, -1), Complex(0, 1), 0;
    return HermitianOperator(m);
}

inline HermitianOperator pauli_z() {
    return HermitianOperator::diagonal({1.0, -1.0});
}

struct SpectralBranch {
    double eigenvalue = 0.0;
    Matrix projector;
    int multiplicity = 0;
};

/// Branches are ordered by strictly increasing eigenvalue. Projectors are
/// stored as matrices; a basis inside each eigenspace is chosen separately
/// through OrthonormalBasisFamily.
class SpectralDecomposition {
public:
    SpectralDecomposition(std::vector<SpectralBranch> branches, Index source_dim, double eig_tol)
        : branches_(std::move(branches)), source_dim_(source_dim), eig_tol_(eig_tol) {}

    const std::vector<SpectralBranch>& branches() const noexcept { return branches_; }
    const SpectralBranch& operator[](std::size_t i) const { return branches_.at(i); }
    std::size_t size() const noexcept { return branches_.size(); }
    Index source_dim() const noexcept { return source_dim_; }
    double eig_tol() const noexcept { return eig_tol_; }

    std::vector<double> eigenvalues() const {
        std::vector<double> out;
        out.reserve(branches_.size());
        for (const auto& b : branches_) out.push_back(b.eigenvalue);
        return out;
    }

    Matrix reconstruct_matrix() const {
        Matrix m = Matrix::Zero(source_dim_, source_dim_);
        for (const auto& b : branches_) m += b.eigenvalue * b.projector;
        return m;
    }

    HermitianOperator reconstruct() const { return HermitianOperator(reconstruct_matrix(), 1e-8); }

    /// Index of the branch whose eigenvalue lies within tol of value.
    std::optional<std::size_t> find_branch(double value, double tol) const {
        for (std::size_t i = 0; i < branches_.size(); ++i) {
            if (std::abs(branches_[i].eigenvalue - value) <= tol) return i;
        }
        return std::nullopt;
    }

private:
    std::vector<SpectralBranch> branches_;
    Index source_dim_ = 0;
    double eig_tol_ = 0.0;
};

inline double spectral_radius(const HermitianOperator& op) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(op.matrix(), Eigen::EigenvaluesOnly);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

/// Decomposes op into eigenspace projectors. Eigenvalues whose consecutive gap
/// is below eig_tol are merged into one degenerate branch. The default
/// tolerance is 1e-9 times the spectral radius.
inline SpectralDecomposition spectral_decompose(const HermitianOperator& op,
                                                std::optional<double> eig_tol = std::nullopt) {
    if (eig_tol && !(*eig_tol > 0.0)) {
        throw Error(ErrorKind::ValidationError, "eig_tol must be positive");
    }
    const Index n = op.dim();
    Eigen::SelfAdjointEigenSolver<Matrix> solver(op.matrix());
    const Eigen::VectorXd& values = solver.eigenvalues();
    const Matrix& vectors = solver.eigenvectors();
    const double radius = values.cwiseAbs().maxCoeff();
    const double tol = eig_tol ? *eig_tol : (radius > 0.0 ? kRelativeEigTol * radius : kRelativeEigTol);

    std::vector<SpectralBranch> branches;
    Index start = 0;
    while (start < n) {
        Index end = start + 1;
        while (end < n && values(end) - values(end - 1) < tol) ++end;
        const Index count = end - start;
        const Matrix block = vectors.middleCols(start, count);
        SpectralBranch branch;
        branch.eigenvalue = values.segment(start, count).mean();
        branch.projector = block * block.adjoint();
        branch.multiplicity = static_cast<int>(count);
        branches.push_back(std::move(branch));
        start = end;
    }

    SpectralDecomposition decomposition(std::move(branches), n, tol);
    const double eps = std::numeric_limits<double>::epsilon();
    const double allowed = std::max(10.0 * tol, 100.0 * eps * static_cast<double>(n) * std::max(radius, 1.0));
    const double err = max_abs(decomposition.reconstruct_matrix() - op.matrix());
    if (err > allowed) {
        throw Error(ErrorKind::ToleranceCollapse,
                    "grouped spectrum reconstructs with error " + std::to_string(err));
    }
    return decomposition;
}

inline HermitianOperator tensor_product(const HermitianOperator& a, const HermitianOperator& b) {
    return HermitianOperator(kron(a.matrix(), b.matrix()));
}

template <std::invocable<double> F>
HermitianOperator operator_function(const SpectralDecomposition& d, F&& f) {
    Matrix m = Matrix::Zero(d.source_dim(), d.source_dim());
    for (const auto& b : d.branches()) {
        m += static_cast<double>(f(b.eigenvalue)) * b.projector;
    }
    return HermitianOperator(m, 1e-8);
}

inline Matrix commutator(const Matrix& a, const Matrix& b) {
    return a * b - b * a;
}

inline bool commutes(const HermitianOperator& a, const HermitianOperator& b, double tol) {
    if (a.dim() != b.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "commutator of operators with different dimensions");
    }
    return max_abs(commutator(a.matrix(), b.matrix())) <= tol;
}

inline bool is_degenerate(const SpectralDecomposition& d) {
    return std::any_of(d.branches().begin(), d.branches().end(),
                       [](const SpectralBranch& b) { return b.multiplicity > 1; });
}

/// Orthonormal columns spanning the range of an orthogonal projector.
inline Matrix basis_of_range(const Matrix& projector) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver((projector + projector.adjoint()) / 2.0);
    const auto& values = solver.eigenvalues();
    std::vector<Index> keep;
    for (Index i = 0; i < values.size(); ++i) {
        if (values(i) > 0.5) keep.push_back(i);
    }
    Matrix out(projector.rows(), static_cast<Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) out.col(static_cast<Index>(c)) = solver.eigenvectors().col(keep[c]);
    return out;
}

/// Orthonormal vectors grouped per eigenspace, with one distinct real tag per
/// vector. Group g holds the columns of groups[g] and the tags labels[g].
struct OrthonormalBasisFamily {
    std::vector<Matrix> groups;
    std::vector<std::vector<double>> labels;
    std::string id;

    Index dim() const { return groups.empty() ? 0 : groups.front().rows(); }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& g : groups) n += static_cast<std::size_t>(g.cols());
        return n;
    }

    Matrix all_vectors() const {
        Matrix out(dim(), static_cast<Index>(size()));
        Index c = 0;
        for (const auto& g : groups) {
            out.middleCols(c, g.cols()) = g;
            c += g.cols();
        }
        return out;
    }

    std::vector<double> flat_labels() const {
        std::vector<double> out;
        for (const auto& l : labels) out.insert(out.end(), l.begin(), l.end());
        return out;
    }

    bool is_orthonormal(double tol) const {
        const Matrix v = all_vectors();
        return max_abs(v.adjoint() * v - Matrix::Identity(v.cols(), v.cols())) <= tol;
    }
};

/// Basis family taken from the eigensolver's vectors in each eigenspace,
/// labelled 0, 1, 2, ... in branch order.
inline OrthonormalBasisFamily eigensolver_basis(const SpectralDecomposition& d) {
    OrthonormalBasisFamily family;
    family.id = "eigensolver";
    double next = 0.0;
    for (const auto& b : d.branches()) {
        family.groups.push_back(basis_of_range(b.projector));
        std::vector<double> tags;
        for (int k = 0; k < b.multiplicity; ++k) tags.push_back(next++);
        family.labels.push_back(std::move(tags));
    }
    return family;
}

}  // namespace qmeas
