#pragma once

// Two-party composite systems H = H1 (x) H2: entangled states, observables
// lifted to one factor, and the side-by-side EPR comparison of the Lueders
// and von Neumann updates.

#include "qmeas/error.hpp"
#include "qmeas/measurement.hpp"
#include "qmeas/spectral.hpp"
#include "qmeas/state.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace qmeas {

inline constexpr double kSharpnessTol = 1e-9;

enum class Side { First = 1, Second = 2 };

/// Both factors must have dimension >= 2. basis1/basis2 hold the local
/// eigenvectors as columns, ordered by ascending local eigenvalue.
class CompositeSpace {
public:
    CompositeSpace(Matrix basis1, Matrix basis2) : basis1_(std::move(basis1)), basis2_(std::move(basis2)) {
        if (basis1_.rows() < 2 || basis2_.rows() < 2) {
            throw Error(ErrorKind::DimensionMismatch, "each factor of a composite space needs dimension >= 2");
        }
        if (basis1_.rows() != basis1_.cols() || basis2_.rows() != basis2_.cols()) {
            throw Error(ErrorKind::DimensionMismatch, "local bases must be square");
        }
        const auto check = [](const Matrix& b) {
            if (max_abs(b.adjoint() * b - Matrix::Identity(b.cols(), b.cols())) > kRefinementTol) {
                throw Error(ErrorKind::IncompleteBasis, "local basis is not orthonormal");
            }
        };
        check(basis1_);
        check(basis2_);
    }

    static CompositeSpace computational(Index dim1, Index dim2) {
        return CompositeSpace(Matrix::Identity(dim1, dim1), Matrix::Identity(dim2, dim2));
    }

    /// Local bases taken from the eigenvectors of a1 and a2.
    static CompositeSpace from_observables(const HermitianOperator& a1, const HermitianOperator& a2) {
        return CompositeSpace(local_eigenbasis(a1), local_eigenbasis(a2));
    }

    Index dim1() const noexcept { return basis1_.rows(); }
    Index dim2() const noexcept { return basis2_.rows(); }
    Index total_dim() const noexcept { return dim1() * dim2(); }
    const Matrix& basis1() const noexcept { return basis1_; }
    const Matrix& basis2() const noexcept { return basis2_; }

    Vector product_vector(Index alpha, Index beta) const {
        return kron(Vector(basis1_.col(alpha)), Vector(basis2_.col(beta)));
    }

    /// Coefficients c_{alpha beta} = <e1^alpha (x) e2^beta, psi>.
    Matrix coefficients(const Vector& psi) const {
        Matrix c(dim1(), dim2());
        for (Index a = 0; a < dim1(); ++a) {
            for (Index b = 0; b < dim2(); ++b) c(a, b) = product_vector(a, b).dot(psi);
        }
        return c;
    }

    static Matrix local_eigenbasis(const HermitianOperator& op) {
        const auto d = spectral_decompose(op);
        Matrix basis(op.dim(), op.dim());
        Index c = 0;
        for (const auto& b : d.branches()) {
            const Matrix cols = basis_of_range(b.projector);
            basis.middleCols(c, cols.cols()) = cols;
            c += cols.cols();
        }
        return basis;
    }

private:
    Matrix basis1_;
    Matrix basis2_;
};

namespace detail {

inline void require_unit(double norm_sq, double tol = 1e-10) {
    if (!(std::abs(norm_sq - 1.0) <= tol)) {
        throw Error(ErrorKind::NotNormalized,
                    "squared coefficient norm " + std::to_string(norm_sq) + " differs from 1");
    }
}

}  // namespace detail

/// psi = c1 e1^i (x) e2^j + c2 e1^j (x) e2^i with |c1|^2 + |c2|^2 = 1.
inline QuantumState entangled_state(Complex c1, Complex c2, Index i, Index j, const CompositeSpace& space) {
    detail::require_unit(std::norm(c1) + std::norm(c2));
    const Index limit = std::min(space.dim1(), space.dim2());
    if (i < 0 || j < 0 || i >= limit || j >= limit) {
        throw Error(ErrorKind::IndexOutOfRange, "entangled-state indices must be below min(dim1, dim2)");
    }
    if (i == j) throw Error(ErrorKind::EqualIndices, "entangled-state indices must differ");
    return QuantumState::pure(c1 * space.product_vector(i, j) + c2 * space.product_vector(j, i));
}

/// psi = sum_gamma c_gamma e1^gamma (x) e2^gamma.
inline QuantumState schmidt_like_state(const std::vector<Complex>& coeffs, const CompositeSpace& space) {
    if (coeffs.empty() || static_cast<Index>(coeffs.size()) > std::min(space.dim1(), space.dim2())) {
        throw Error(ErrorKind::IndexOutOfRange, "need between 1 and min(dim1, dim2) coefficients");
    }
    double norm_sq = 0.0;
    Vector psi = Vector::Zero(space.total_dim());
    for (std::size_t g = 0; g < coeffs.size(); ++g) {
        norm_sq += std::norm(coeffs[g]);
        psi += coeffs[g] * space.product_vector(static_cast<Index>(g), static_cast<Index>(g));
    }
    detail::require_unit(norm_sq);
    return QuantumState::pure(psi);
}

/// psi = sum_{alpha beta} c(alpha, beta) e1^alpha (x) e2^beta.
inline QuantumState coefficient_state(const Matrix& coeffs, const CompositeSpace& space) {
    if (coeffs.rows() != space.dim1() || coeffs.cols() != space.dim2()) {
        throw Error(ErrorKind::DimensionMismatch, "coefficient matrix must be dim1 x dim2");
    }
    detail::require_unit(coeffs.squaredNorm());
    Vector psi = Vector::Zero(space.total_dim());
    for (Index a = 0; a < space.dim1(); ++a) {
        for (Index b = 0; b < space.dim2(); ++b) psi += coeffs(a, b) * space.product_vector(a, b);
    }
    return QuantumState::pure(psi);
}

/// Number of non-negligible singular values of the coefficient matrix.
inline Index schmidt_rank(const QuantumState& state, const CompositeSpace& space, double tol = 1e-10) {
    state.require_dim(space.total_dim());
    Eigen::JacobiSVD<Matrix> svd(space.coefficients(state.vector()));
    Index rank = 0;
    for (Index k = 0; k < svd.singularValues().size(); ++k) {
        if (svd.singularValues()(k) > tol) ++rank;
    }
    return rank;
}

inline bool is_product_state(const QuantumState& state, const CompositeSpace& space, double tol = 1e-10) {
    return state.is_pure() && schmidt_rank(state, space, tol) == 1;
}

/// a (x) I for side 1, I (x) a for side 2.
inline HermitianOperator lift_observable(const HermitianOperator& local, Side side, const CompositeSpace& space) {
    const Index expected = side == Side::First ? space.dim1() : space.dim2();
    if (local.dim() != expected) {
        throw Error(ErrorKind::DimensionMismatch, "local observable dimension does not match its factor");
    }
    if (side == Side::First) return HermitianOperator(kron(local.matrix(), Matrix::Identity(space.dim2(), space.dim2())));
    return HermitianOperator(kron(Matrix::Identity(space.dim1(), space.dim1()), local.matrix()));
}

/// Label of the product vector e1^alpha (x) e2^beta: alpha + dim1 * beta.
/// For two qubits with (-, +) -> (0, 1) this is -- = 0, +- = 1, -+ = 2, ++ = 3.
inline double product_label(Index alpha, Index beta, const CompositeSpace& space) {
    return static_cast<double>(alpha + space.dim1() * beta);
}

/// Canonical refinement of a lifted observable: product eigenvectors grouped
/// by the eigenspace of lifted that contains them.
inline OrthonormalBasisFamily product_refinement(const SpectralDecomposition& lifted, const CompositeSpace& space) {
    if (lifted.source_dim() != space.total_dim()) {
        throw Error(ErrorKind::DimensionMismatch, "lifted observable does not act on the composite space");
    }
    std::vector<std::vector<Vector>> members(lifted.size());
    OrthonormalBasisFamily family;
    family.id = "product";
    family.labels.resize(lifted.size());
    for (Index beta = 0; beta < space.dim2(); ++beta) {
        for (Index alpha = 0; alpha < space.dim1(); ++alpha) {
            const Vector v = space.product_vector(alpha, beta);
            bool placed = false;
            for (std::size_t g = 0; g < lifted.size(); ++g) {
                if ((lifted[g].projector * v).squaredNorm() > 0.5) {
                    members[g].push_back(v);
                    family.labels[g].push_back(product_label(alpha, beta, space));
                    placed = true;
                    break;
                }
            }
            if (!placed) throw Error(ErrorKind::RefinementMismatch, "product vector lies in no eigenspace");
        }
    }
    for (auto& group : members) {
        Matrix m(space.total_dim(), static_cast<Index>(group.size()));
        for (std::size_t k = 0; k < group.size(); ++k) m.col(static_cast<Index>(k)) = group[k];
        family.groups.push_back(std::move(m));
    }
    validate_refinement(lifted, family);
    return family;
}

struct LudersBranchReport {
    double outcome = 0.0;
    double probability = 0.0;
    QuantumState post_state;
    double purity = 0.0;
    bool post_is_product = false;
    double remote_mean = 0.0;
    double remote_variance = 0.0;
    bool element_of_reality = false;
};

struct VonNeumannBranchReport {
    double outcome = 0.0;
    double probability = 0.0;
    bool undetermined = false;
    /// Determined post-state, or the refinement-conditional mixture.
    QuantumState state;
    double purity = 0.0;
    std::string refinement_id;
    std::optional<std::size_t> refinement_outcome;
    double remote_mean = 0.0;
    double remote_variance = 0.0;
    bool element_of_reality = false;
};

struct EprScenarioReport {
    std::size_t outcome_index = 0;
    int multiplicity = 0;
    LudersBranchReport luders;
    VonNeumannBranchReport von_neumann;
};

/// Measures A1 = a1 (x) I on state and reports both postulates. The
/// "element of reality" flag is set when A2 = I (x) a2 has variance below
/// kSharpnessTol on a determined post-state. If refinement_outcome (a
/// position inside the measured eigenspace's product refinement group) is
/// given, the von Neumann branch completes the d-measurement with that result.
inline EprScenarioReport run_epr_scenario(const QuantumState& state, const HermitianOperator& a1,
                                          const HermitianOperator& a2, std::size_t outcome_index,
                                          std::optional<std::size_t> refinement_outcome = std::nullopt) {
    const CompositeSpace space = CompositeSpace::from_observables(a1, a2);
    state.require_dim(space.total_dim());
    const HermitianOperator lifted1 = lift_observable(a1, Side::First, space);
    const HermitianOperator lifted2 = lift_observable(a2, Side::Second, space);
    const SpectralDecomposition obs = spectral_decompose(lifted1);
    const OrthonormalBasisFamily refinement = product_refinement(obs, space);

    EprScenarioReport report;
    report.outcome_index = outcome_index;

    const MeasurementRecord lud = luders_measure(state, obs, outcome_index);
    report.multiplicity = obs[outcome_index].multiplicity;
    auto& L = report.luders;
    L.outcome = lud.outcome;
    L.probability = lud.probability;
    L.post_state = lud.state();
    L.purity = L.post_state.purity();
    L.post_is_product = L.post_state.is_pure() && is_product_state(L.post_state, space);
    L.remote_mean = L.post_state.expectation(lifted2);
    L.remote_variance = L.post_state.variance(lifted2);
    L.element_of_reality = L.remote_variance < kSharpnessTol;

    const MeasurementRecord vn = von_neumann_measure(state, obs, refinement, outcome_index);
    auto& V = report.von_neumann;
    V.outcome = vn.outcome;
    V.probability = vn.probability;
    V.refinement_id = refinement.id;
    V.undetermined = !vn.is_determined();
    V.state = vn.state();
    if (V.undetermined && refinement_outcome) {
        const Matrix& group = refinement.groups[outcome_index];
        if (*refinement_outcome >= static_cast<std::size_t>(group.cols())) {
            throw Error(ErrorKind::IndexOutOfRange, "refinement outcome outside the measured eigenspace");
        }
        const Vector phi = group.col(static_cast<Index>(*refinement_outcome));
        const double p = state.probability(outer(phi));
        if (!(p > kProbFloor)) {
            throw Error(ErrorKind::ZeroProbabilityBranch, "refinement outcome has zero probability");
        }
        V.undetermined = false;
        V.refinement_outcome = refinement_outcome;
        V.state = QuantumState::pure(phi / phi.norm());
    }
    V.purity = V.state.purity();
    V.remote_mean = V.state.expectation(lifted2);
    V.remote_variance = V.state.variance(lifted2);
    V.element_of_reality = !V.undetermined && V.remote_variance < kSharpnessTol;
    return report;
}

/// Draws the A1 outcome from the Born distribution, then runs the scenario.
template <std::uniform_random_bit_generator Rng>
EprScenarioReport sample_epr_scenario(const QuantumState& state, const HermitianOperator& a1,
                                      const HermitianOperator& a2, Rng& rng) {
    const CompositeSpace space = CompositeSpace::from_observables(a1, a2);
    const auto probs = born_probabilities(state, spectral_decompose(lift_observable(a1, Side::First, space)));
    std::vector<double> w;
    for (const auto& p : probs) w.push_back(p.probability > kProbFloor ? p.probability : 0.0);
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    return run_epr_scenario(state, a1, a2, pick(rng));
}

inline HermitianOperator spin_along(const std::array<double, 3>& n) {
    const double norm = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    if (!(std::abs(norm - 1.0) <= 1e-10)) {
        throw Error(ErrorKind::NonUnitDirection, "spin direction must have unit norm, got " + std::to_string(norm));
    }
    return HermitianOperator(n[0] * pauli_x().matrix() + n[1] * pauli_y().matrix() + n[2] * pauli_z().matrix());
}

/// Nondegenerate refinement of the two-qubit spin pair: A e1^alpha (x) e2^beta
/// = (alpha + 2 beta) e1^alpha (x) e2^beta with - -> 0, + -> 1, so the spectrum
/// is {0, 1, 2, 3} and A1 = f1(A), A2 = f2(A).
struct SpinRefinement {
    CompositeSpace space;
    HermitianOperator a1;
    HermitianOperator a2;
    HermitianOperator refined;
    HermitianOperator lifted1;
    HermitianOperator lifted2;

    static double f1(double label) {
        const long code = std::lround(label);
        return (code % 2) == 1 ? 1.0 : -1.0;
    }

    static double f2(double label) {
        const long code = std::lround(label);
        return (code / 2) == 1 ? 1.0 : -1.0;
    }
};

inline SpinRefinement spin_refinement_example(const std::array<double, 3>& x = {0, 0, 1},
                                              const std::array<double, 3>& y = {0, 0, 1}) {
    const HermitianOperator a1 = spin_along(x);
    const HermitianOperator a2 = spin_along(y);
    const CompositeSpace space = CompositeSpace::from_observables(a1, a2);
    Matrix refined = Matrix::Zero(4, 4);
    for (Index alpha = 0; alpha < 2; ++alpha) {
        for (Index beta = 0; beta < 2; ++beta) {
            refined += product_label(alpha, beta, space) * outer(space.product_vector(alpha, beta));
        }
    }
    return SpinRefinement{space,
                          a1,
                          a2,
                          HermitianOperator(refined, 1e-8),
                          lift_observable(a1, Side::First, space),
                          lift_observable(a2, Side::Second, space)};
}

}  // namespace qmeas
