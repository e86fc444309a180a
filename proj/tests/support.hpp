#pragma once

// Seeded generators for property tests.

#include "qmeas/spectral.hpp"
#include "qmeas/state.hpp"

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

namespace qmeas::testing {

using Rng = std::mt19937_64;

inline Matrix random_gaussian(Index rows, Index cols, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = Complex(n(rng), n(rng));
    return m;
}

inline Matrix random_unitary(Index dim, Rng& rng) {
    Eigen::HouseholderQR<Matrix> qr(random_gaussian(dim, dim, rng));
    return qr.householderQ() * Matrix::Identity(dim, dim);
}

inline HermitianOperator hermitian_with_spectrum(const std::vector<double>& eigenvalues, Rng& rng) {
    const auto dim = static_cast<Index>(eigenvalues.size());
    const Matrix u = random_unitary(dim, rng);
    Matrix d = Matrix::Zero(dim, dim);
    for (Index i = 0; i < dim; ++i) d(i, i) = eigenvalues[static_cast<std::size_t>(i)];
    const Matrix h = u * d * u.adjoint();
    return HermitianOperator((h + h.adjoint()) / 2.0, 1e-8);
}

/// Distinct eigenvalues with pairwise gaps of at least 0.1 inside [-2, 2].
inline std::vector<double> distinct_spectrum(Index dim, Rng& rng) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::vector<double> vals;
    while (static_cast<Index>(vals.size()) < dim) {
        const double v = u(rng);
        if (std::all_of(vals.begin(), vals.end(), [&](double w) { return std::abs(v - w) >= 0.1; })) vals.push_back(v);
    }
    return vals;
}

inline HermitianOperator random_nondegenerate(Index dim, Rng& rng) {
    return hermitian_with_spectrum(distinct_spectrum(dim, rng), rng);
}

inline HermitianOperator random_hermitian(Index dim, Rng& rng) {
    const Matrix g = random_gaussian(dim, dim, rng);
    return HermitianOperator((g + g.adjoint()) / 2.0);
}

inline QuantumState random_pure(Index dim, Rng& rng) {
    return QuantumState::normalized(random_gaussian(dim, 1, rng).col(0));
}

inline QuantumState random_density(Index dim, Rng& rng) {
    const Matrix g = random_gaussian(dim, dim, rng);
    Matrix rho = g * g.adjoint();
    rho /= rho.trace().real();
    return QuantumState::density((rho + rho.adjoint()) / 2.0, 1e-9);
}

}  // namespace qmeas::testing
