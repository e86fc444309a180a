#pragma once

// Analytic quantum correlations, CHSH values and their sample estimators.
// Analyzer angle theta on either side is the observable cos(theta) sigma_z +
// sin(theta) sigma_x. S = E(a,b) - E(a,b') + E(a',b) + E(a',b').

#include "qmeas/composite.hpp"
#include "qmeas/error.hpp"
#include "qmeas/measurement.hpp"
#include "qmeas/spectral.hpp"
#include "qmeas/state.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace qmeas {

inline HermitianOperator observable_from_angle(double theta) {
    return HermitianOperator(std::cos(theta) * pauli_z().matrix() + std::sin(theta) * pauli_x().matrix());
}

struct ChshSetting {
    double a = 0.0;
    double a_prime = 0.0;
    double b = 0.0;
    double b_prime = 0.0;

    /// Angles maximizing |S| for the singlet under the spin convention.
    static ChshSetting tsirelson() {
        using std::numbers::pi;
        return {0.0, pi / 2, pi / 4, 3 * pi / 4};
    }

    /// Angle pairs in S order: (a,b), (a,b'), (a',b), (a',b').
    std::array<std::pair<double, double>, 4> pairs() const {
        return {{{a, b}, {a, b_prime}, {a_prime, b}, {a_prime, b_prime}}};
    }

    void validate() const {
        for (double v : {a, a_prime, b, b_prime}) {
            if (!std::isfinite(v)) throw Error(ErrorKind::ValidationError, "CHSH angles must be finite");
        }
    }
};

inline constexpr std::array<double, 4> kChshSigns = {1.0, -1.0, 1.0, 1.0};

/// <A (x) B> in state.
inline double quantum_correlation(const QuantumState& state, const HermitianOperator& obs_a,
                                  const HermitianOperator& obs_b) {
    if (state.dim() != obs_a.dim() * obs_b.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "state does not live on the product of the observables' spaces");
    }
    return state.expectation(kron(obs_a.matrix(), obs_b.matrix()));
}

inline double quantum_correlation(const QuantumState& state, double theta_a, double theta_b) {
    return quantum_correlation(state, observable_from_angle(theta_a), observable_from_angle(theta_b));
}

inline double chsh_value(const QuantumState& state, const ChshSetting& s) {
    s.validate();
    double total = 0.0;
    const auto pairs = s.pairs();
    for (std::size_t k = 0; k < 4; ++k) total += kChshSigns[k] * quantum_correlation(state, pairs[k].first, pairs[k].second);
    return total;
}

inline QuantumState singlet_state() {
    // (|01> - |10>) / sqrt(2) in the computational basis
    return entangled_state(1.0 / std::numbers::sqrt2, -1.0 / std::numbers::sqrt2, 0, 1,
                           CompositeSpace::computational(2, 2));
}

using OutcomePair = std::pair<int, int>;

struct CorrelationEstimate {
    double value = 0.0;
    std::size_t n_pairs = 0;
    /// Empty when fewer than two pairs were seen.
    std::optional<double> std_error;
};

struct ChshEstimate {
    std::array<CorrelationEstimate, 4> correlations;
    double S = 0.0;
    std::optional<double> std_error;
};

/// Sample mean of the products with the standard error s / sqrt(n).
inline CorrelationEstimate estimate_correlation(std::span<const OutcomePair> pairs) {
    if (pairs.empty()) throw Error(ErrorKind::EmptySample, "no outcome pairs");
    const double n = static_cast<double>(pairs.size());
    double sum = 0.0;
    for (const auto& [x, y] : pairs) sum += static_cast<double>(x * y);
    const double mean = sum / n;
    CorrelationEstimate est{mean, pairs.size(), std::nullopt};
    if (pairs.size() > 1) {
        double ss = 0.0;
        for (const auto& [x, y] : pairs) {
            const double d = static_cast<double>(x * y) - mean;
            ss += d * d;
        }
        est.std_error = std::sqrt(ss / (n - 1.0) / n);
    }
    return est;
}

/// Lists in S order; the S error propagates the four independent errors.
inline ChshEstimate chsh_from_samples(const std::array<std::span<const OutcomePair>, 4>& lists) {
    ChshEstimate out;
    double var = 0.0;
    bool defined = true;
    for (std::size_t k = 0; k < 4; ++k) {
        out.correlations[k] = estimate_correlation(lists[k]);
        out.S += kChshSigns[k] * out.correlations[k].value;
        if (out.correlations[k].std_error) {
            var += *out.correlations[k].std_error * *out.correlations[k].std_error;
        } else {
            defined = false;
        }
    }
    if (defined) out.std_error = std::sqrt(var);
    return out;
}

/// n outcome pairs (A, B) in {-1, +1}^2 drawn from the simultaneous
/// measurement of theta_a (x) I and I (x) theta_b on a two-qubit state.
template <std::uniform_random_bit_generator R>
std::vector<OutcomePair> sample_outcome_pairs(const QuantumState& state, double theta_a, double theta_b,
                                              std::size_t n, R& rng) {
    const CompositeSpace space = CompositeSpace::computational(2, 2);
    const auto a = spectral_decompose(lift_observable(observable_from_angle(theta_a), Side::First, space));
    const auto b = spectral_decompose(lift_observable(observable_from_angle(theta_b), Side::Second, space));
    const auto dist = simultaneous_measure_enumerate(state, a, b);
    std::vector<double> weights;
    for (const auto& p : dist.pairs) weights.push_back(p.probability);
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    std::vector<OutcomePair> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = dist.pairs[pick(rng)];
        out.emplace_back(p.outcome_a > 0 ? 1 : -1, p.outcome_b > 0 ? 1 : -1);
    }
    return out;
}

struct CorrelationRow {
    double theta_a = 0.0;
    double theta_b = 0.0;
    double e_quantum = 0.0;
    double e_sampled = 0.0;
    std::size_t n = 0;
    std::optional<double> std_error;
};

template <std::uniform_random_bit_generator R>
CorrelationRow correlation_row(const QuantumState& state, double theta_a, double theta_b, std::size_t n, R& rng) {
    CorrelationRow row{theta_a, theta_b, quantum_correlation(state, theta_a, theta_b), 0.0, n, std::nullopt};
    if (n > 0) {
        const auto pairs = sample_outcome_pairs(state, theta_a, theta_b, n, rng);
        const auto est = estimate_correlation(pairs);
        row.e_sampled = est.value;
        row.std_error = est.std_error;
    }
    return row;
}

}  // namespace qmeas
