#pragma once

// Born probabilities and the two projection postulates.
//
// Lueders: the selective update is P psi / ||P psi|| (or P rho P / Tr(rho P))
// regardless of the multiplicity of the measured eigenvalue.
// von Neumann: the update is only determined for nondegenerate branches. For a
// degenerate branch the post-state depends on a refinement d (a nondegenerate
// observable with a = f(d)); without a d-outcome we report the
// refinement-conditional mixture tagged as Undetermined.

#include "qmeas/error.hpp"
#include "qmeas/spectral.hpp"
#include "qmeas/state.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace qmeas {

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kRefinementTol = 1e-9;
inline constexpr double kCommuteTol = 1e-9;

enum class Postulate { Luders, VonNeumann };

constexpr std::string_view to_string(Postulate p) noexcept {
    return p == Postulate::Luders ? "luders" : "von_neumann";
}

struct OutcomeProbability {
    double eigenvalue = 0.0;
    double probability = 0.0;
};

/// Post-state of a von Neumann measurement on a degenerate branch when no
/// refinement outcome is known. The mixture is basis dependent; the basis is
/// carried along so callers cannot mistake it for the state.
struct Undetermined {
    QuantumState conditional_mixture;
    OrthonormalBasisFamily basis_used;
};

using PostState = std::variant<QuantumState, Undetermined>;

struct MeasurementRecord {
    Postulate postulate = Postulate::Luders;
    std::size_t branch_index = 0;
    double outcome = 0.0;
    double probability = 0.0;
    PostState post_state;

    bool is_determined() const noexcept { return std::holds_alternative<QuantumState>(post_state); }

    /// The determined post-state, or the conditional mixture when undetermined.
    const QuantumState& state() const {
        if (const auto* s = std::get_if<QuantumState>(&post_state)) return *s;
        return std::get<Undetermined>(post_state).conditional_mixture;
    }
};

namespace detail {

inline void require_dims(const QuantumState& state, const SpectralDecomposition& obs) {
    if (state.dim() != obs.source_dim()) {
        throw Error(ErrorKind::DimensionMismatch,
                    "state dimension " + std::to_string(state.dim()) + " vs observable dimension " +
                        std::to_string(obs.source_dim()));
    }
}

inline const SpectralBranch& branch_at(const SpectralDecomposition& obs, std::size_t index) {
    if (index >= obs.size()) {
        throw Error(ErrorKind::IndexOutOfRange,
                    "branch index " + std::to_string(index) + " of " + std::to_string(obs.size()));
    }
    return obs[index];
}

inline double checked_probability(const QuantumState& state, const SpectralBranch& branch) {
    const double p = state.probability(branch.projector);
    if (!(p > kProbFloor)) {
        throw Error(ErrorKind::ZeroProbabilityBranch,
                    "outcome " + std::to_string(branch.eigenvalue) + " has probability " + std::to_string(p));
    }
    return p;
}

inline QuantumState project(const QuantumState& state, const Matrix& projector, double probability) {
    if (state.is_pure()) {
        return QuantumState::normalized(projector * state.vector());
    }
    const Matrix rho = state.density_matrix();
    return QuantumState::density(projector * rho * projector / probability, 1e-9);
}

inline double label_tol(double a, double b) {
    return 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace detail

inline std::vector<OutcomeProbability> born_probabilities(const QuantumState& state,
                                                          const SpectralDecomposition& obs) {
    detail::require_dims(state, obs);
    std::vector<OutcomeProbability> out;
    out.reserve(obs.size());
    for (const auto& b : obs.branches()) {
        out.push_back({b.eigenvalue, std::clamp(state.probability(b.projector), 0.0, 1.0)});
    }
    return out;
}

inline MeasurementRecord luders_measure(const QuantumState& state, const SpectralDecomposition& obs,
                                        std::size_t outcome_index) {
    detail::require_dims(state, obs);
    const auto& branch = detail::branch_at(obs, outcome_index);
    const double p = detail::checked_probability(state, branch);
    return MeasurementRecord{Postulate::Luders, outcome_index, branch.eigenvalue, p,
                             detail::project(state, branch.projector, p)};
}

/// rho' = sum_m P_m rho P_m.
inline QuantumState luders_nonselective(const QuantumState& state, const SpectralDecomposition& obs) {
    detail::require_dims(state, obs);
    const Matrix rho = state.density_matrix();
    Matrix out = Matrix::Zero(rho.rows(), rho.cols());
    for (const auto& b : obs.branches()) out += b.projector * rho * b.projector;
    return QuantumState::density(out, 1e-9);
}

/// Checks that family block-diagonalizes obs: one group per branch, group size
/// equal to the multiplicity, every vector inside its eigenspace, and the
/// whole family orthonormal.
inline void validate_refinement(const SpectralDecomposition& obs, const OrthonormalBasisFamily& family,
                                double tol = kRefinementTol) {
    if (family.groups.size() != obs.size() || family.labels.size() != obs.size()) {
        throw Error(ErrorKind::RefinementMismatch, "refinement must have one group per eigenspace");
    }
    for (std::size_t g = 0; g < obs.size(); ++g) {
        const Matrix& vecs = family.groups[g];
        if (vecs.rows() != obs.source_dim() || vecs.cols() != obs[g].multiplicity ||
            static_cast<Index>(family.labels[g].size()) != vecs.cols()) {
            throw Error(ErrorKind::RefinementMismatch,
                        "group " + std::to_string(g) + " size does not match eigenspace multiplicity");
        }
        if (max_abs(obs[g].projector * vecs - vecs) > tol) {
            throw Error(ErrorKind::RefinementMismatch,
                        "group " + std::to_string(g) + " leaves its eigenspace");
        }
    }
    if (!family.is_orthonormal(tol)) {
        throw Error(ErrorKind::RefinementMismatch, "refinement vectors are not orthonormal");
    }
}

/// sum over vectors phi in cols of <phi, rho phi> P_phi.
inline Matrix dephased_in(const Matrix& rho, const Matrix& cols) {
    Matrix out = Matrix::Zero(rho.rows(), rho.cols());
    for (Index k = 0; k < cols.cols(); ++k) {
        const Vector phi = cols.col(k);
        out += phi.dot(rho * phi).real() * outer(phi);
    }
    return out;
}

inline MeasurementRecord von_neumann_measure(const QuantumState& state, const SpectralDecomposition& obs,
                                             const OrthonormalBasisFamily& refinement,
                                             std::size_t outcome_index) {
    detail::require_dims(state, obs);
    validate_refinement(obs, refinement);
    const auto& branch = detail::branch_at(obs, outcome_index);
    const double p = detail::checked_probability(state, branch);
    if (branch.multiplicity == 1) {
        // rank one: the post-state is the refinement vector itself
        const Vector phi = refinement.groups[outcome_index].col(0);
        return MeasurementRecord{Postulate::VonNeumann, outcome_index, branch.eigenvalue, p,
                                 QuantumState::pure(phi)};
    }
    const Matrix mixture = dephased_in(state.density_matrix(), refinement.groups[outcome_index]) / p;
    return MeasurementRecord{Postulate::VonNeumann, outcome_index, branch.eigenvalue, p,
                             Undetermined{QuantumState::density(mixture, 1e-9), refinement}};
}

inline QuantumState von_neumann_nonselective(const QuantumState& state, const OrthonormalBasisFamily& refinement) {
    if (refinement.groups.empty() || refinement.dim() != state.dim() ||
        static_cast<Index>(refinement.size()) != state.dim() || !refinement.is_orthonormal(kRefinementTol)) {
        throw Error(ErrorKind::IncompleteBasis, "refinement is not a complete orthonormal basis");
    }
    return QuantumState::density(dephased_in(state.density_matrix(), refinement.all_vectors()), 1e-9);
}

/// A refinement d of an observable a: the basis family, the nondegenerate
/// operator d = sum gamma_k P_phi_k, and the map from each label gamma_k back
/// to the eigenvalue of a whose eigenspace contains phi_k.
struct Refinement {
    OrthonormalBasisFamily basis;
    HermitianOperator operator_d;
    std::vector<double> labels;
    std::vector<double> decoded_values;

    double decode(double label) const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < labels.size(); ++i) {
            if (std::abs(labels[i] - label) < std::abs(labels[best] - label)) best = i;
        }
        return decoded_values.at(best);
    }

    std::function<double(double)> decoder() const {
        return [labels = labels, values = decoded_values](double label) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < labels.size(); ++i) {
                if (std::abs(labels[i] - label) < std::abs(labels[best] - label)) best = i;
            }
            return values.at(best);
        };
    }
};

namespace detail {

inline void require_distinct(const std::vector<double>& labels) {
    std::vector<double> sorted = labels;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        if (sorted[i] - sorted[i - 1] <= label_tol(sorted[i], sorted[i - 1])) {
            throw Error(ErrorKind::DuplicateLabels, "refinement labels must be distinct");
        }
    }
}

inline Matrix operator_from_basis(const Matrix& vectors, const std::vector<double>& labels) {
    Matrix d = Matrix::Zero(vectors.rows(), vectors.rows());
    for (Index k = 0; k < vectors.cols(); ++k) {
        d += labels[static_cast<std::size_t>(k)] * outer(vectors.col(k));
    }
    return d;
}

}  // namespace detail

/// Builds a nondegenerate refinement d of obs. Without explicit bases the
/// eigensolver basis of each eigenspace is used; without labels a
/// nondegenerate obs keeps its eigenvalues as labels (so d = obs) and a
/// degenerate obs gets labels 0, 1, 2, ... in group order.
inline Refinement build_refinement(const SpectralDecomposition& obs,
                                   std::optional<std::vector<Matrix>> per_eigenspace_bases = std::nullopt,
                                   std::optional<std::vector<double>> labels = std::nullopt,
                                   std::string id = {}) {
    OrthonormalBasisFamily family = eigensolver_basis(obs);
    if (per_eigenspace_bases) {
        family.groups = std::move(*per_eigenspace_bases);
        family.id = id.empty() ? "custom" : id;
    } else if (!id.empty()) {
        family.id = id;
    }
    std::vector<double> flat;
    if (labels) {
        flat = std::move(*labels);
        if (flat.size() != static_cast<std::size_t>(obs.source_dim())) {
            throw Error(ErrorKind::RefinementMismatch, "one label per basis vector is required");
        }
    } else if (!is_degenerate(obs)) {
        flat = obs.eigenvalues();
    } else {
        for (Index k = 0; k < obs.source_dim(); ++k) flat.push_back(static_cast<double>(k));
    }
    detail::require_distinct(flat);

    std::vector<double> decoded;
    std::size_t cursor = 0;
    for (std::size_t g = 0; g < family.groups.size() && g < obs.size(); ++g) {
        const auto count = static_cast<std::size_t>(family.groups[g].cols());
        if (cursor + count > flat.size()) break;
        family.labels[g].assign(flat.begin() + static_cast<std::ptrdiff_t>(cursor),
                                flat.begin() + static_cast<std::ptrdiff_t>(cursor + count));
        decoded.insert(decoded.end(), count, obs[g].eigenvalue);
        cursor += count;
    }
    validate_refinement(obs, family);

    HermitianOperator d(detail::operator_from_basis(family.all_vectors(), flat), 1e-8);
    return Refinement{std::move(family), std::move(d), std::move(flat), std::move(decoded)};
}

/// Closed interval [lo, hi] of real values.
struct Interval {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();

    static Interval point(double x) { return {x, x}; }
    static Interval all() { return {}; }

    bool contains(double x, double tol = 1e-9) const { return x >= lo - tol && x <= hi + tol; }
};

/// E(Delta) = sum of projectors of branches whose eigenvalue lies in Delta.
inline Matrix spectral_measure(const SpectralDecomposition& obs, const Interval& delta) {
    Matrix e = Matrix::Zero(obs.source_dim(), obs.source_dim());
    for (const auto& b : obs.branches()) {
        if (delta.contains(b.eigenvalue, detail::label_tol(b.eigenvalue, 0.0))) e += b.projector;
    }
    return e;
}

namespace detail {

inline double commute_tol(const Matrix& a, const Matrix& b) {
    return kCommuteTol * std::max({1.0, max_abs(a), max_abs(b)});
}

}  // namespace detail

/// ||E_1(Delta_1) ... E_n(Delta_n) psi||^2, or Tr(E rho E^dagger) for densities.
inline double joint_probability_commuting(const QuantumState& state,
                                          std::span<const std::pair<SpectralDecomposition, Interval>> specs) {
    std::vector<Matrix> ops;
    for (const auto& [obs, delta] : specs) {
        detail::require_dims(state, obs);
        ops.push_back(obs.reconstruct_matrix());
    }
    for (std::size_t i = 0; i < ops.size(); ++i) {
        for (std::size_t j = i + 1; j < ops.size(); ++j) {
            if (max_abs(commutator(ops[i], ops[j])) > detail::commute_tol(ops[i], ops[j])) {
                throw Error(ErrorKind::NonCommutingObservables,
                            "observables " + std::to_string(i) + " and " + std::to_string(j) + " do not commute");
            }
        }
    }
    Matrix e = Matrix::Identity(state.dim(), state.dim());
    for (const auto& [obs, delta] : specs) e = e * spectral_measure(obs, delta);
    if (state.is_pure()) return (e * state.vector()).squaredNorm();
    return (e * state.density_matrix() * e.adjoint()).trace().real();
}

/// Common nondegenerate refinement of two commuting observables, built by
/// simultaneous diagonalization: the range of every joint projector
/// P_i^a P_j^b gets an orthonormal basis, and vectors are labelled
/// 0, 1, 2, ... lexicographically in (i, j, k). The basis groups follow the
/// eigenspaces of a.
struct CommonRefinement {
    Refinement d;
    std::vector<std::size_t> a_branch;  // per label
    std::vector<std::size_t> b_branch;  // per label
};

inline CommonRefinement common_refinement(const SpectralDecomposition& a, const SpectralDecomposition& b) {
    if (a.source_dim() != b.source_dim()) {
        throw Error(ErrorKind::DimensionMismatch, "observables act on different spaces");
    }
    const Matrix ma = a.reconstruct_matrix();
    const Matrix mb = b.reconstruct_matrix();
    if (max_abs(commutator(ma, mb)) > detail::commute_tol(ma, mb)) {
        throw Error(ErrorKind::NonCommutingObservables, "simultaneous measurement needs commuting observables");
    }
    std::vector<Matrix> groups;
    std::vector<std::size_t> a_of, b_of;
    for (std::size_t i = 0; i < a.size(); ++i) {
        std::vector<Matrix> blocks;
        Index cols = 0;
        for (std::size_t j = 0; j < b.size(); ++j) {
            const Matrix joint = a[i].projector * b[j].projector;
            Matrix basis = basis_of_range((joint + joint.adjoint()) / 2.0);
            cols += basis.cols();
            a_of.insert(a_of.end(), static_cast<std::size_t>(basis.cols()), i);
            b_of.insert(b_of.end(), static_cast<std::size_t>(basis.cols()), j);
            blocks.push_back(std::move(basis));
        }
        if (cols != a[i].multiplicity) {
            throw Error(ErrorKind::NonCommutingObservables, "joint eigenspaces do not tile the eigenspace of a");
        }
        Matrix group(a.source_dim(), cols);
        Index c = 0;
        for (const auto& blk : blocks) {
            group.middleCols(c, blk.cols()) = blk;
            c += blk.cols();
        }
        groups.push_back(std::move(group));
    }
    std::vector<double> labels;
    for (std::size_t k = 0; k < a_of.size(); ++k) labels.push_back(static_cast<double>(k));
    Refinement d = build_refinement(a, std::move(groups), labels, "common");
    return CommonRefinement{std::move(d), std::move(a_of), std::move(b_of)};
}

struct JointOutcome {
    std::size_t a_index = 0;
    std::size_t b_index = 0;
    double outcome_a = 0.0;
    double outcome_b = 0.0;
    MeasurementRecord d_record;
};

struct PairProbability {
    std::size_t a_index = 0;
    std::size_t b_index = 0;
    double outcome_a = 0.0;
    double outcome_b = 0.0;
    double probability = 0.0;
};

struct SimultaneousDistribution {
    CommonRefinement refinement;
    /// One entry per d-outcome with probability above the floor.
    std::vector<JointOutcome> outcomes;
    /// Every (a, b) branch pair, including zero-probability pairs.
    std::vector<PairProbability> pairs;

    double probability_of(std::size_t a_index, std::size_t b_index) const {
        for (const auto& p : pairs) {
            if (p.a_index == a_index && p.b_index == b_index) return p.probability;
        }
        return 0.0;
    }
};

namespace detail {

inline JointOutcome decode_d_outcome(const QuantumState& state, const CommonRefinement& cr,
                                     const SpectralDecomposition& a, const SpectralDecomposition& b,
                                     const SpectralDecomposition& d_spec, std::size_t label) {
    // d is nondegenerate with labels 0..n-1, so its branch index equals the label
    MeasurementRecord rec = luders_measure(state, d_spec, label);
    rec.postulate = Postulate::VonNeumann;
    const std::size_t ia = cr.a_branch[label];
    const std::size_t ib = cr.b_branch[label];
    return JointOutcome{ia, ib, a[ia].eigenvalue, b[ib].eigenvalue, std::move(rec)};
}

}  // namespace detail

/// Exhaustive form of the two-step simultaneous measurement: measure the
/// common refinement d, then decode a = f1(d) and b = f2(d).
inline SimultaneousDistribution simultaneous_measure_enumerate(const QuantumState& state,
                                                               const SpectralDecomposition& a,
                                                               const SpectralDecomposition& b) {
    detail::require_dims(state, a);
    detail::require_dims(state, b);
    CommonRefinement cr = common_refinement(a, b);
    const SpectralDecomposition d_spec = spectral_decompose(cr.d.operator_d, 0.5);
    SimultaneousDistribution dist{cr, {}, {}};
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            dist.pairs.push_back({i, j, a[i].eigenvalue, b[j].eigenvalue, 0.0});
        }
    }
    for (std::size_t label = 0; label < d_spec.size(); ++label) {
        const double p = state.probability(d_spec[label].projector);
        dist.pairs[cr.a_branch[label] * b.size() + cr.b_branch[label]].probability += std::max(p, 0.0);
        if (p > kProbFloor) {
            dist.outcomes.push_back(detail::decode_d_outcome(state, cr, a, b, d_spec, label));
        }
    }
    return dist;
}

/// Sampled form; the caller owns the seeded random source.
template <std::uniform_random_bit_generator Rng>
JointOutcome simultaneous_measure_sample(const QuantumState& state, const SpectralDecomposition& a,
                                         const SpectralDecomposition& b, Rng& rng) {
    detail::require_dims(state, a);
    detail::require_dims(state, b);
    CommonRefinement cr = common_refinement(a, b);
    const SpectralDecomposition d_spec = spectral_decompose(cr.d.operator_d, 0.5);
    std::vector<double> weights;
    for (const auto& br : d_spec.branches()) {
        const double p = state.probability(br.projector);
        weights.push_back(p > kProbFloor ? p : 0.0);
    }
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    return detail::decode_d_outcome(state, cr, a, b, d_spec, pick(rng));
}

/// P(b = beta_m | a = alpha_k) with the Lueders update after the a-result.
inline double conditional_probability(const QuantumState& state, const SpectralDecomposition& a, std::size_t k,
                                      const SpectralDecomposition& b, std::size_t m) {
    detail::require_dims(state, a);
    detail::require_dims(state, b);
    const auto& pa = detail::branch_at(a, k);
    const auto& pb = detail::branch_at(b, m);
    const double p = detail::checked_probability(state, pa);
    if (state.is_pure()) {
        return (pb.projector * pa.projector * state.vector()).squaredNorm() / p;
    }
    const Matrix rho_k = pa.projector * state.density_matrix() * pa.projector / p;
    return (rho_k * pb.projector).trace().real();
}

}  // namespace qmeas
