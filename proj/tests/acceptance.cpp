// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
// Usage: acceptance [CONFIG_DIR]   (default ./configs)

#include "qmeas/chsh.hpp"
#include "qmeas/coincidence.hpp"
#include "qmeas/composite.hpp"
#include "qmeas/experiment.hpp"
#include "qmeas/measurement.hpp"
#include "support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

using namespace qmeas;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

int failures = 0;
int criteria_run = 0;

void report(int id, const char* title, const Outcome& o, double seconds) {
    ++criteria_run;
    if (!o.pass) ++failures;
    std::printf("%s criterion %d  %-44s %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), seconds);
    std::fflush(stdout);
}

void run(int id, const char* title, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(Clock::now() - t0).count();
    if (budget_s > 0 && dt >= budget_s) {
        o.pass = false;
        o.detail += "; over the " + std::to_string(static_cast<int>(budget_s)) + " s budget";
    }
    report(id, title, o, dt);
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

Matrix proj(const Vector& v) { return v * v.adjoint(); }

// 1 ------------------------------------------------------------------------
Outcome postulate_coincidence() {
    testing::Rng rng(1001);
    double worst = 0.0;
    int operators = 0, comparisons = 0;
    for (; operators < 500; ++operators) {
        const Index n = 2 + operators % 7;
        const auto obs = spectral_decompose(testing::random_nondegenerate(n, rng));
        const QuantumState s = operators % 2 ? testing::random_density(n, rng) : testing::random_pure(n, rng);
        // independent refinement: eigenvectors with an arbitrary phase each
        auto family = eigensolver_basis(obs);
        std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
        for (auto& g : family.groups) g *= std::polar(1.0, phase(rng));
        for (std::size_t k = 0; k < obs.size(); ++k) {
            if (s.probability(obs[k].projector) <= kProbFloor) continue;
            const auto l = luders_measure(s, obs, k);
            const auto v = von_neumann_measure(s, obs, family, k);
            if (!v.is_determined()) return {false, "von Neumann returned undetermined on a nondegenerate branch"};
            worst = std::max({worst, std::abs(l.probability - v.probability), std::abs(l.outcome - v.outcome),
                              max_abs(l.state().density_matrix() - v.state().density_matrix())});
            ++comparisons;
        }
    }
    return {worst <= 1e-9, std::to_string(operators) + " operators, " + std::to_string(comparisons) +
                               " branches, max deviation " + sci(worst)};
}

// 2 ------------------------------------------------------------------------
Outcome postulate_divergence() {
    // hand expansion: with e^1 = |0>, the +1 branch of sigma_z (x) I keeps |00> and |01>.
    //   Lueders:     (|00> + |01>)/sqrt2, purity 1
    //   von Neumann: (P_00 + P_01)/2,      purity 2 * (1/2)^2 = 1/2
    const double r3 = 1.0 / std::sqrt(3.0);
    Vector psi = Vector::Zero(4);
    psi(0) = psi(1) = psi(2) = r3;
    const auto space = CompositeSpace::computational(2, 2);
    const auto obs = spectral_decompose(lift_observable(pauli_z(), Side::First, space));
    const std::size_t branch = 1;  // eigenvalue +1
    const auto state = QuantumState::pure(psi);
    const auto lud = luders_measure(state, obs, branch);
    const auto vn = von_neumann_measure(state, obs, product_refinement(obs, space), branch);

    Vector lud_oracle = Vector::Zero(4);
    lud_oracle(0) = lud_oracle(1) = 1.0 / std::numbers::sqrt2;
    const Matrix vn_oracle = 0.5 * proj(Vector::Unit(4, 0)) + 0.5 * proj(Vector::Unit(4, 1));

    const double pl = lud.state().purity();
    const double pv = vn.state().purity();
    const bool ok = std::abs(pl - 1.0) <= 1e-9 && std::abs(pv - 0.5) <= 1e-9 && !vn.is_determined() &&
                    max_abs(lud.state().density_matrix() - proj(lud_oracle)) <= 1e-12 &&
                    max_abs(vn.state().density_matrix() - vn_oracle) <= 1e-12;
    return {ok, "Lueders purity " + sci(pl) + ", von Neumann mixture purity " + sci(pv) +
                    (vn.is_determined() ? " (determined!)" : " (undetermined)")};
}

// 3 ------------------------------------------------------------------------
Outcome epr_scenario() {
    const auto a = pauli_z();
    const auto space = CompositeSpace::from_observables(a, a);
    double worst_var = 0.0;
    int states = 0, undetermined = 0, runs = 0;
    for (int r = 0; r < 10; ++r) {
        // |c1| = cos(theta) spans [0.11, 0.99]; the phase of c2 spans [0, 2 pi)
        const double mag1 = 0.11 + r * (0.99 - 0.11) / 9.0;
        for (int q = 0; q < 10; ++q) {
            const Complex c1 = mag1;
            const Complex c2 = std::polar(std::sqrt(1.0 - mag1 * mag1), 2.0 * std::numbers::pi * q / 10.0);
            if (std::abs(c1) <= 0.1 || std::abs(c2) <= 0.1) return {false, "grid point outside |c| > 0.1"};
            const auto psi = entangled_state(c1, c2, 0, 1, space);
            ++states;
            for (std::size_t k = 0; k < 2; ++k) {
                const auto rep = run_epr_scenario(psi, a, a, k);
                worst_var = std::max(worst_var, rep.luders.remote_variance);
                undetermined += rep.von_neumann.undetermined ? 1 : 0;
                ++runs;
            }
        }
    }
    return {worst_var < 1e-9 && undetermined == runs,
            std::to_string(states) + " states x 2 branches, max remote variance " + sci(worst_var) + ", undetermined " +
                std::to_string(undetermined) + "/" + std::to_string(runs)};
}

// 4 ------------------------------------------------------------------------
Outcome spin_refinement() {
    const auto ex = spin_refinement_example();
    const auto d = spectral_decompose(ex.refined);
    double spec_err = d.size() == 4 ? 0.0 : 1.0;
    for (std::size_t k = 0; k < d.size() && k < 4; ++k) spec_err = std::max(spec_err, std::abs(d[k].eigenvalue - double(k)));
    const double e1 = max_abs(operator_function(d, SpinRefinement::f1).matrix() - ex.lifted1.matrix());
    const double e2 = max_abs(operator_function(d, SpinRefinement::f2).matrix() - ex.lifted2.matrix());
    const bool nondeg = !is_degenerate(d);
    return {spec_err <= 1e-12 && e1 <= 1e-12 && e2 <= 1e-12 && nondeg,
            "spectrum error " + sci(spec_err) + ", f1 error " + sci(e1) + ", f2 error " + sci(e2) +
                (nondeg ? ", nondegenerate" : ", DEGENERATE")};
}

// 5 ------------------------------------------------------------------------
Outcome condprob_symmetry() {
    testing::Rng rng(5005);
    double worst = 0.0;
    int pairs = 0;
    for (; pairs < 200; ++pairs) {
        const Index n = 2 + pairs % 5;
        const auto ha = testing::random_nondegenerate(n, rng);
        const auto hb = testing::random_nondegenerate(n, rng);
        const auto a = spectral_decompose(ha);
        const auto b = spectral_decompose(hb);
        // oracle overlaps from an independent eigensolver run (ascending order matches branch order)
        Eigen::SelfAdjointEigenSolver<Matrix> ea(ha.matrix()), eb(hb.matrix());
        const auto s1 = testing::random_pure(n, rng);
        const auto s2 = testing::random_pure(n, rng);
        for (std::size_t k = 0; k < a.size(); ++k) {
            for (std::size_t m = 0; m < b.size(); ++m) {
                const double overlap = std::norm(eb.eigenvectors().col(Index(m)).dot(ea.eigenvectors().col(Index(k))));
                for (const auto* s : {&s1, &s2}) {
                    worst = std::max({worst, std::abs(conditional_probability(*s, a, k, b, m) - overlap),
                                      std::abs(conditional_probability(*s, b, m, a, k) - overlap)});
                }
            }
        }
    }
    return {worst <= 1e-9, std::to_string(pairs) + " observable pairs (dims 2-6), 2 states each, max deviation " + sci(worst)};
}

// 6 ------------------------------------------------------------------------
Outcome quantum_chsh() {
    const auto singlet = singlet_state();
    const auto set = ChshSetting::tsirelson();
    const double s = chsh_value(singlet, set);
    const double analytic_err = std::abs(std::abs(s) - 2.0 * std::numbers::sqrt2);

    testing::Rng rng(6006);
    std::array<std::vector<OutcomePair>, 4> lists;
    const auto angle_pairs = set.pairs();
    for (std::size_t k = 0; k < 4; ++k) {
        lists[k] = sample_outcome_pairs(singlet, angle_pairs[k].first, angle_pairs[k].second, 100000, rng);
    }
    const auto est = chsh_from_samples({lists[0], lists[1], lists[2], lists[3]});
    const double z = std::abs(est.S - s) / est.std_error.value_or(0.0);

    std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const auto psi = testing::random_pure(4, rng);
        worst = std::max(worst, std::abs(chsh_value(psi, ChshSetting{ang(rng), ang(rng), ang(rng), ang(rng)})));
    }
    const bool ok = analytic_err <= 1e-9 && est.std_error && z <= 3.0 && worst <= 2.0 * std::numbers::sqrt2 + 1e-9;
    return {ok, "|S| analytic error " + sci(analytic_err) + ", sampled S " + sci(est.S) + " +- " +
                    sci(est.std_error.value_or(NAN)) + " (" + sci(z) + " sigma), max |S| over 1000 random " + sci(worst)};
}

// 7 ------------------------------------------------------------------------
Outcome pc_consistency() {
    const auto space = CompositeSpace::computational(2, 2);
    std::vector<std::pair<std::string, QuantumState>> states{{"singlet", singlet_state()}};
    for (double p : {0.1, 0.36, 0.5, 0.9}) {
        states.emplace_back("entangled", entangled_state(std::sqrt(p), std::polar(std::sqrt(1 - p), 0.7), 0, 1, space));
    }
    double worst = 0.0;
    int checks = 0;
    for (const auto& [name, s] : states) {
        for (const auto& [ta, tb] : std::vector<std::pair<double, double>>{{0.0, 0.0}, {0.0, std::numbers::pi / 4}, {1.1, -0.4}}) {
            const auto a = spectral_decompose(lift_observable(observable_from_angle(ta), Side::First, space));
            const auto b = spectral_decompose(lift_observable(observable_from_angle(tb), Side::Second, space));
            const auto dist = simultaneous_measure_enumerate(s, a, b);
            for (std::size_t i = 0; i < a.size(); ++i) {
                for (std::size_t j = 0; j < b.size(); ++j) {
                    const std::vector<std::pair<SpectralDecomposition, Interval>> spec{
                        {a, Interval::point(a[i].eigenvalue)}, {b, Interval::point(b[j].eigenvalue)}};
                    worst = std::max(worst, std::abs(joint_probability_commuting(s, spec) - dist.probability_of(i, j)));
                    ++checks;
                }
            }
        }
    }
    return {worst <= 1e-9, std::to_string(checks) + " outcome pairs over singlet + 4 entangled states, max deviation " + sci(worst)};
}

// 8 ------------------------------------------------------------------------
Outcome time_window(const std::filesystem::path& configs) {
    const auto cfg = load_config(configs / "window_sweep_default.json", Experiment::WindowSweep);
    auto sweep = std::get<WindowSweepParams>(cfg.params).sweep;
    sweep.parallel = false;  // the budget is for a single core
    if (sweep.n_pairs != 1'000'000) return {false, "default config does not use 10^6 pairs"};

    const auto rows = run_window_sweep(sweep);
    const SweepRow* fair = nullptr;
    const SweepRow* small = nullptr;
    for (const auto& r : rows) {
        if (r.window.is_unbounded()) fair = &r;
        else if (!small || r.window.seconds() < small->window.seconds()) small = &r;
    }
    if (!fair || !small) return {false, "default config needs the unbounded window and a finite window"};
    const bool a_ok = fair->std_error && std::abs(fair->S) <= 2.0 + 3.0 * *fair->std_error;
    const bool b_ok = std::abs(small->S) > 2.3;

    // (c): one shared emission stream, so the b setting is the only thing that changes
    auto shared = sweep;
    shared.source_mode = SourceMode::Shared;
    shared.windows = {small->window};
    const auto srow = run_window_sweep(shared).front();
    const bool c_ok = small->jaccard_b_vs_bprime < 1.0 && srow.jaccard_b_vs_bprime < 1.0;

    return {a_ok && b_ok && c_ok,
            "(a) W=inf |S|=" + sci(std::abs(fair->S)) + " <= 2+3*" + sci(fair->std_error.value_or(NAN)) + (a_ok ? "" : " VIOLATED") +
                "; (b) W=" + sci(small->window.seconds()) + " s |S|=" + sci(std::abs(small->S)) +
                " matched " + sci(small->matched_fraction) + (b_ok ? "" : " NOT > 2.3") +
                "; (c) Jaccard(b,b') " + sci(small->jaccard_b_vs_bprime) + ", shared source " + sci(srow.jaccard_b_vs_bprime)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::filesystem::path configs = argc > 1 ? argv[1] : "configs";
    run(1, "postulate coincidence (nondegenerate)", 10.0, postulate_coincidence);
    run(2, "postulate divergence (degenerate)", 0.0, postulate_divergence);
    run(3, "EPR scenario remote sharpness", 5.0, epr_scenario);
    run(4, "spin refinement encoding", 0.0, spin_refinement);
    run(5, "conditional-probability symmetry", 0.0, condprob_symmetry);
    run(6, "quantum CHSH", 0.0, quantum_chsh);
    run(7, "PC consistency", 0.0, pc_consistency);
    run(8, "time-window coincidence simulation", 60.0, [&] { return time_window(configs); });
    run(9, "no tabulated data to reproduce", 0.0, [] {
        const bool ok = criteria_run == 8;
        return Outcome{ok, "source has no data tables; acceptance rests on criteria 1-8, all executed"};
    });
    std::printf("%s: %d of 9 criteria failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
