#pragma once

// Config-driven experiment runner behind the qmeas command-line tool.
//
// Config file (JSON):
//   {
//     "experiment": "epr-demo" | "postulate-compare" | "chsh" | "window-sweep" | "condprob",
//     "seed": 1,
//     "output_path": "reports/epr.json",
//     "format": "json" | "csv",
//     "params": { ...experiment specific... }
//   }
// Unknown keys are rejected at every level. Everything is parsed and
// validated into typed parameters before any computation starts.

#include "qmeas/chsh.hpp"
#include "qmeas/coincidence.hpp"
#include "qmeas/composite.hpp"
#include "qmeas/error.hpp"
#include "qmeas/serialize.hpp"
#include "qmeas/measurement.hpp"
#include "qmeas/random.hpp"
#include "qmeas/spectral.hpp"
#include "qmeas/state.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <variant>
#include <vector>

namespace qmeas {

inline constexpr int kSchemaVersion = 1;

enum class Experiment { EprDemo, PostulateCompare, Chsh, WindowSweep, CondProb };
enum class Format { Json, Csv };

inline std::string_view to_string(Experiment e) {
    switch (e) {
        case Experiment::EprDemo: return "epr-demo";
        case Experiment::PostulateCompare: return "postulate-compare";
        case Experiment::Chsh: return "chsh";
        case Experiment::WindowSweep: return "window-sweep";
        case Experiment::CondProb: return "condprob";
    }
    return "unknown";
}

inline Experiment experiment_from_string(std::string_view s) {
    for (auto e : {Experiment::EprDemo, Experiment::PostulateCompare, Experiment::Chsh, Experiment::WindowSweep,
                   Experiment::CondProb}) {
        if (to_string(e) == s) return e;
    }
    throw Error(ErrorKind::ValidationError, "unknown experiment '" + std::string(s) + "'");
}

inline std::string_view to_string(Format f) { return f == Format::Json ? "json" : "csv"; }

inline Format format_from_string(std::string_view s) {
    if (s == "json") return Format::Json;
    if (s == "csv") return Format::Csv;
    throw Error(ErrorKind::ValidationError, "format must be 'json' or 'csv'");
}

struct EprDemoParams {
    Complex c1{1.0 / std::numbers::sqrt2, 0.0};
    Complex c2{1.0 / std::numbers::sqrt2, 0.0};
    Index i = 0;
    Index j = 1;
    HermitianOperator a1 = pauli_z();
    HermitianOperator a2 = pauli_z();
    std::optional<std::size_t> outcome_index;
    std::optional<std::size_t> refinement_outcome;
    bool sample_outcome = false;
};

struct PostulateCompareParams {
    HermitianOperator observable = tensor_product(pauli_z(), HermitianOperator::identity(2));
    QuantumState state = QuantumState::normalized(Vector::Ones(4) - Vector::Unit(4, 3));
    std::size_t outcome_index = 1;
};

struct ChshParams {
    QuantumState state = singlet_state();
    ChshSetting angles = ChshSetting::tsirelson();
    std::size_t samples_per_setting = 100'000;
    std::vector<std::pair<double, double>> extra_pairs;
};

struct WindowSweepParams {
    SweepConfig sweep;
    std::optional<std::string> export_clicks_dir;
    std::vector<std::string> import_clicks;
};

struct CondProbParams {
    QuantumState state = QuantumState::pure(Vector::Unit(2, 0));
    HermitianOperator a = pauli_z();
    HermitianOperator b = pauli_x();
};

using ExperimentParams =
    std::variant<EprDemoParams, PostulateCompareParams, ChshParams, WindowSweepParams, CondProbParams>;

struct ExperimentConfig {
    Experiment experiment = Experiment::EprDemo;
    std::uint64_t seed = 1;
    std::optional<std::string> output_path;
    Format format = Format::Json;
    ExperimentParams params;
};

/// Command-line values that take precedence over the config file.
struct ConfigOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_path;
    std::optional<Format> format;
};

namespace detail {

inline std::size_t read_index(const Json& j, const std::string& where) {
    if (!j.is_number_integer() || j.get<long long>() < 0) {
        throw Error(ErrorKind::ValidationError, where + " must be a non-negative integer");
    }
    return static_cast<std::size_t>(j.get<long long>());
}

inline Complex read_complex(const Json& j, const std::string& where) {
    if (j.is_number()) return {j.get<double>(), 0.0};
    if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number()) {
        return {j[0].get<double>(), j[1].get<double>()};
    }
    throw Error(ErrorKind::ConfigParseError, where + " must be a number or [re, im]");
}

inline bool read_bool(const Json& j, const std::string& where) {
    if (!j.is_boolean()) throw Error(ErrorKind::ConfigParseError, where + " must be true or false");
    return j.get<bool>();
}

inline std::string read_string(const Json& j, const std::string& where) {
    if (!j.is_string()) throw Error(ErrorKind::ConfigParseError, where + " must be a string");
    return j.get<std::string>();
}

inline ChshSetting read_angles(const Json& j, const std::string& where, double scale) {
    reject_unknown_keys(j, {"a", "a_prime", "b", "b_prime"}, where);
    ChshSetting s;
    for (const auto& [key, field] : {std::pair<const char*, double*>{"a", &s.a}, {"a_prime", &s.a_prime},
                                     {"b", &s.b}, {"b_prime", &s.b_prime}}) {
        if (!j.contains(key)) throw Error(ErrorKind::ConfigParseError, where + "." + key + " is required");
        *field = number_at(j.at(key), where + "." + key) * scale;
    }
    s.validate();
    return s;
}

inline EprDemoParams parse_epr(const Json& p) {
    reject_unknown_keys(p, {"c1", "c2", "i", "j", "a1", "a2", "outcome_index", "refinement_outcome", "sample_outcome"},
                        "params");
    EprDemoParams out;
    if (p.contains("c1")) out.c1 = read_complex(p.at("c1"), "params.c1");
    if (p.contains("c2")) out.c2 = read_complex(p.at("c2"), "params.c2");
    if (p.contains("i")) out.i = static_cast<Index>(read_index(p.at("i"), "params.i"));
    if (p.contains("j")) out.j = static_cast<Index>(read_index(p.at("j"), "params.j"));
    if (p.contains("a1")) out.a1 = operator_from_json(p.at("a1"), "params.a1");
    if (p.contains("a2")) out.a2 = operator_from_json(p.at("a2"), "params.a2");
    if (p.contains("outcome_index")) out.outcome_index = read_index(p.at("outcome_index"), "params.outcome_index");
    if (p.contains("refinement_outcome")) {
        out.refinement_outcome = read_index(p.at("refinement_outcome"), "params.refinement_outcome");
    }
    if (p.contains("sample_outcome")) out.sample_outcome = read_bool(p.at("sample_outcome"), "params.sample_outcome");
    // validate the physical input now so that nothing runs on a bad config
    const auto space = CompositeSpace::from_observables(out.a1, out.a2);
    (void)entangled_state(out.c1, out.c2, out.i, out.j, space);
    for (const auto* op : {&out.a1, &out.a2}) {
        if (is_degenerate(spectral_decompose(*op))) {
            throw Error(ErrorKind::ValidationError, "local observables must have nondegenerate spectra");
        }
    }
    if (out.outcome_index && static_cast<Index>(*out.outcome_index) >= out.a1.dim()) {
        throw Error(ErrorKind::ValidationError, "params.outcome_index out of range");
    }
    if (out.refinement_outcome && static_cast<Index>(*out.refinement_outcome) >= out.a2.dim()) {
        throw Error(ErrorKind::ValidationError, "params.refinement_outcome out of range");
    }
    return out;
}

inline PostulateCompareParams parse_postulate_compare(const Json& p) {
    reject_unknown_keys(p, {"observable", "state", "outcome_index"}, "params");
    PostulateCompareParams out;
    if (p.contains("observable")) out.observable = operator_from_json(p.at("observable"), "params.observable");
    if (p.contains("state")) out.state = state_from_json(p.at("state"), "params.state");
    if (p.contains("outcome_index")) out.outcome_index = read_index(p.at("outcome_index"), "params.outcome_index");
    if (out.state.dim() != out.observable.dim()) {
        throw Error(ErrorKind::ValidationError, "state and observable dimensions differ");
    }
    if (out.outcome_index >= spectral_decompose(out.observable).size()) {
        throw Error(ErrorKind::ValidationError, "params.outcome_index out of range");
    }
    return out;
}

inline ChshParams parse_chsh(const Json& p) {
    reject_unknown_keys(p, {"state", "angles_rad", "samples_per_setting", "extra_pairs_rad"}, "params");
    ChshParams out;
    if (p.contains("state")) out.state = state_from_json(p.at("state"), "params.state");
    if (out.state.dim() != 4) throw Error(ErrorKind::ValidationError, "chsh needs a two-qubit state");
    if (p.contains("angles_rad")) out.angles = read_angles(p.at("angles_rad"), "params.angles_rad", 1.0);
    if (p.contains("samples_per_setting")) {
        out.samples_per_setting = read_index(p.at("samples_per_setting"), "params.samples_per_setting");
    }
    if (p.contains("extra_pairs_rad")) {
        const Json& arr = p.at("extra_pairs_rad");
        if (!arr.is_array()) throw Error(ErrorKind::ConfigParseError, "params.extra_pairs_rad must be an array");
        for (const auto& pair : arr) {
            if (!pair.is_array() || pair.size() != 2) {
                throw Error(ErrorKind::ConfigParseError, "params.extra_pairs_rad entries must be [theta_a, theta_b]");
            }
            const double ta = number_at(pair[0], "params.extra_pairs_rad");
            const double tb = number_at(pair[1], "params.extra_pairs_rad");
            if (!std::isfinite(ta) || !std::isfinite(tb)) throw Error(ErrorKind::ValidationError, "angles must be finite");
            out.extra_pairs.emplace_back(ta, tb);
        }
    }
    return out;
}

inline Window read_window(const Json& j) {
    if (j.is_string()) {
        if (j.get<std::string>() == "inf") return Window::unbounded();
        throw Error(ErrorKind::ConfigParseError, "window must be a number of seconds or \"inf\"");
    }
    return Window::of(number_at(j, "params.windows_s"));
}

inline WindowSweepParams parse_window_sweep(const Json& p) {
    reject_unknown_keys(p, {"settings_deg", "n_pairs", "jitter_scale_s", "spacing_s", "model", "windows_s",
                            "source_mode", "parallel", "record_pair_ids", "export_clicks_dir", "import_clicks"},
                        "params");
    WindowSweepParams out;
    auto& s = out.sweep;
    if (p.contains("settings_deg")) s.settings = read_angles(p.at("settings_deg"), "params.settings_deg", std::numbers::pi / 180.0);
    if (p.contains("n_pairs")) s.n_pairs = read_index(p.at("n_pairs"), "params.n_pairs");
    if (p.contains("jitter_scale_s")) s.jitter_scale = number_at(p.at("jitter_scale_s"), "params.jitter_scale_s");
    if (p.contains("spacing_s")) s.spacing = number_at(p.at("spacing_s"), "params.spacing_s");
    if (p.contains("model")) {
        const Json& m = p.at("model");
        reject_unknown_keys(m, {"name", "t0_s", "exponent", "outcome_rule"}, "params.model");
        if (m.contains("name")) s.model.name = read_string(m.at("name"), "params.model.name");
        if (m.contains("t0_s")) s.model.t0 = number_at(m.at("t0_s"), "params.model.t0_s");
        if (m.contains("exponent")) s.model.exponent = number_at(m.at("exponent"), "params.model.exponent");
        if (m.contains("outcome_rule")) {
            const auto rule = read_string(m.at("outcome_rule"), "params.model.outcome_rule");
            if (rule == "sign") s.model.rule = OutcomeRule::Sign;
            else if (rule == "malus") s.model.rule = OutcomeRule::Malus;
            else throw Error(ErrorKind::ValidationError, "params.model.outcome_rule must be 'sign' or 'malus'");
        }
        if (!DelayModelRegistry::with_builtins().contains(s.model.name)) {
            throw Error(ErrorKind::ValidationError, "unknown delay model '" + s.model.name + "'");
        }
    }
    if (p.contains("windows_s")) {
        const Json& w = p.at("windows_s");
        if (!w.is_array()) throw Error(ErrorKind::ConfigParseError, "params.windows_s must be an array");
        s.windows.clear();
        for (const auto& item : w) s.windows.push_back(read_window(item));
    }
    if (p.contains("source_mode")) {
        const auto mode = read_string(p.at("source_mode"), "params.source_mode");
        if (mode == "per_setting") s.source_mode = SourceMode::PerSetting;
        else if (mode == "shared") s.source_mode = SourceMode::Shared;
        else throw Error(ErrorKind::ValidationError, "params.source_mode must be 'per_setting' or 'shared'");
    }
    if (p.contains("parallel")) s.parallel = read_bool(p.at("parallel"), "params.parallel");
    if (p.contains("record_pair_ids")) s.record_pair_ids = read_bool(p.at("record_pair_ids"), "params.record_pair_ids");
    if (p.contains("export_clicks_dir")) out.export_clicks_dir = read_string(p.at("export_clicks_dir"), "params.export_clicks_dir");
    if (p.contains("import_clicks")) {
        const Json& arr = p.at("import_clicks");
        if (!arr.is_array() || arr.size() != 4) {
            throw Error(ErrorKind::ConfigParseError, "params.import_clicks must list four click CSV files");
        }
        for (const auto& f : arr) out.import_clicks.push_back(read_string(f, "params.import_clicks"));
        if (out.export_clicks_dir) throw Error(ErrorKind::ValidationError, "import_clicks and export_clicks_dir exclude each other");
    }
    s.validate();
    return out;
}

inline CondProbParams parse_condprob(const Json& p) {
    reject_unknown_keys(p, {"state", "a", "b"}, "params");
    CondProbParams out;
    if (p.contains("state")) out.state = state_from_json(p.at("state"), "params.state");
    if (p.contains("a")) out.a = operator_from_json(p.at("a"), "params.a");
    if (p.contains("b")) out.b = operator_from_json(p.at("b"), "params.b");
    if (out.a.dim() != out.state.dim() || out.b.dim() != out.state.dim()) {
        throw Error(ErrorKind::ValidationError, "state and observables must share one dimension");
    }
    return out;
}

}  // namespace detail

/// Parses and validates a config. Errors from malformed physics (for example a
/// non-Hermitian operator) are reported as validation errors.
inline ExperimentConfig parse_config(const Json& j, std::optional<Experiment> subcommand = std::nullopt,
                                     const ConfigOverrides& overrides = {}) {
    try {
        detail::reject_unknown_keys(j, {"experiment", "seed", "output_path", "format", "params"}, "config");
        ExperimentConfig cfg;
        if (j.contains("experiment")) {
            cfg.experiment = experiment_from_string(detail::read_string(j.at("experiment"), "experiment"));
            if (subcommand && *subcommand != cfg.experiment) {
                throw Error(ErrorKind::ValidationError, "config is for '" + std::string(to_string(cfg.experiment)) +
                                                            "' but subcommand is '" + std::string(to_string(*subcommand)) + "'");
            }
        } else if (subcommand) {
            cfg.experiment = *subcommand;
        } else {
            throw Error(ErrorKind::ValidationError, "no experiment given");
        }
        if (j.contains("seed")) {
            if (!j.at("seed").is_number_unsigned()) throw Error(ErrorKind::ValidationError, "seed must be a non-negative integer");
            cfg.seed = j.at("seed").get<std::uint64_t>();
        }
        if (j.contains("output_path")) cfg.output_path = detail::read_string(j.at("output_path"), "output_path");
        if (j.contains("format")) cfg.format = format_from_string(detail::read_string(j.at("format"), "format"));
        if (overrides.seed) cfg.seed = *overrides.seed;
        if (overrides.output_path) cfg.output_path = overrides.output_path;
        if (overrides.format) cfg.format = *overrides.format;

        const Json params = j.contains("params") ? j.at("params") : Json::object();
        switch (cfg.experiment) {
            case Experiment::EprDemo: cfg.params = detail::parse_epr(params); break;
            case Experiment::PostulateCompare: cfg.params = detail::parse_postulate_compare(params); break;
            case Experiment::Chsh: cfg.params = detail::parse_chsh(params); break;
            case Experiment::WindowSweep: {
                auto p = detail::parse_window_sweep(params);
                p.sweep.seed = cfg.seed;
                cfg.params = std::move(p);
                break;
            }
            case Experiment::CondProb: cfg.params = detail::parse_condprob(params); break;
        }
        return cfg;
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::ConfigParseError || e.kind() == ErrorKind::ValidationError) throw;
        throw Error(ErrorKind::ValidationError, e.what());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ConfigParseError, e.what());
    }
}

inline ExperimentConfig load_config(const std::filesystem::path& path, std::optional<Experiment> subcommand = std::nullopt,
                                    const ConfigOverrides& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ConfigParseError, "cannot open config file " + path.string());
    Json j;
    try {
        j = Json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ConfigParseError, e.what());
    }
    return parse_config(j, subcommand, overrides);
}

// ---------------------------------------------------------------------------
// Reports

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

struct Report {
    Experiment experiment = Experiment::EprDemo;
    Json json;
    CsvTable csv;
    std::string text;
};

/// Shortest round-trip decimal form; "nan"/"inf" for non-finite values.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

inline std::string format_optional(const std::optional<double>& v) {
    return v ? format_number(*v) : std::string("nan");
}

inline std::string render_csv(const CsvTable& t) {
    std::string out;
    const auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ',';
            out += cells[i];
        }
        out += '\n';
    };
    line(t.header);
    for (const auto& r : t.rows) line(r);
    return out;
}

inline constexpr std::array<const char*, 8> kSweepCsvHeader = {
    "window_s", "E_ab", "E_abp", "E_apb", "E_apbp", "S", "stderr_S", "matched_fraction"};
inline constexpr std::array<const char*, 6> kCorrelationCsvHeader = {
    "theta_a", "theta_b", "E_quantum", "E_sampled", "n", "stderr"};

inline CsvTable sweep_table(const std::vector<SweepRow>& rows) {
    CsvTable t{{kSweepCsvHeader.begin(), kSweepCsvHeader.end()}, {}};
    for (const auto& r : rows) {
        t.rows.push_back({r.window.is_unbounded() ? "inf" : format_number(r.window.seconds()),
                          format_number(r.correlations[0]), format_number(r.correlations[1]),
                          format_number(r.correlations[2]), format_number(r.correlations[3]), format_number(r.S),
                          format_optional(r.std_error), format_number(r.matched_fraction)});
    }
    return t;
}

inline CsvTable correlation_table(const std::vector<CorrelationRow>& rows) {
    CsvTable t{{kCorrelationCsvHeader.begin(), kCorrelationCsvHeader.end()}, {}};
    for (const auto& r : rows) {
        t.rows.push_back({format_number(r.theta_a), format_number(r.theta_b), format_number(r.e_quantum),
                          format_number(r.e_sampled), std::to_string(r.n), format_optional(r.std_error)});
    }
    return t;
}

namespace detail {

inline Json header(Experiment e, std::uint64_t seed) {
    return Json{{"schema_version", kSchemaVersion}, {"experiment", std::string(to_string(e))}, {"seed", seed}};
}

inline std::string two_column(const std::vector<std::array<std::string, 3>>& rows) {
    std::size_t w0 = 0, w1 = 0;
    for (const auto& r : rows) {
        w0 = std::max(w0, r[0].size());
        w1 = std::max(w1, r[1].size());
    }
    std::string out;
    for (const auto& r : rows) {
        out += r[0] + std::string(w0 - r[0].size() + 2, ' ') + r[1] + std::string(w1 - r[1].size() + 2, ' ') + r[2] + '\n';
    }
    return out;
}

inline Report run_epr(const ExperimentConfig& cfg, const EprDemoParams& p) {
    const auto space = CompositeSpace::from_observables(p.a1, p.a2);
    const QuantumState psi = entangled_state(p.c1, p.c2, p.i, p.j, space);
    std::size_t outcome = p.outcome_index.value_or(static_cast<std::size_t>(p.i));
    if (p.sample_outcome) {
        Rng rng(derive_seed(cfg.seed, 20, 0));
        const auto probs = born_probabilities(psi, spectral_decompose(lift_observable(p.a1, Side::First, space)));
        std::vector<double> w;
        for (const auto& pr : probs) w.push_back(pr.probability > kProbFloor ? pr.probability : 0.0);
        outcome = std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
    }
    const EprScenarioReport r = run_epr_scenario(psi, p.a1, p.a2, outcome, p.refinement_outcome);

    const std::string lud_kind = std::string(r.luders.post_is_product ? "product" : (r.luders.post_state.is_pure() ? "pure" : "mixed")) +
                                 (r.luders.element_of_reality ? ", sharp" : ", not sharp");
    const std::string vn_kind = r.von_neumann.undetermined
                                    ? std::string("undetermined")
                                    : std::string("determined") + (r.von_neumann.element_of_reality ? ", sharp" : ", not sharp");
    Report rep;
    rep.experiment = Experiment::EprDemo;
    rep.json = header(Experiment::EprDemo, cfg.seed);
    rep.json["input"] = Json{{"c1", {p.c1.real(), p.c1.imag()}},
                             {"c2", {p.c2.real(), p.c2.imag()}},
                             {"i", p.i},
                             {"j", p.j},
                             {"a1", operator_to_json(p.a1)},
                             {"a2", operator_to_json(p.a2)},
                             {"state", state_to_json(psi)}};
    rep.json["report"] = epr_report_to_json(r);
    rep.json["summary"] = Json{{"luders", {{"post_state", lud_kind}, {"element_of_reality", r.luders.element_of_reality}}},
                               {"von_neumann", {{"post_state", vn_kind}, {"element_of_reality", r.von_neumann.element_of_reality}}}};

    const std::vector<std::array<std::string, 3>> table = {
        {"field", "luders", "von_neumann"},
        {"outcome", format_number(r.luders.outcome), format_number(r.von_neumann.outcome)},
        {"probability", format_number(r.luders.probability), format_number(r.von_neumann.probability)},
        {"post_state", lud_kind, vn_kind},
        {"purity", format_number(r.luders.purity), format_number(r.von_neumann.purity)},
        {"remote_mean", format_number(r.luders.remote_mean), format_number(r.von_neumann.remote_mean)},
        {"remote_variance", format_number(r.luders.remote_variance), format_number(r.von_neumann.remote_variance)},
        {"element_of_reality", r.luders.element_of_reality ? "true" : "false",
         r.von_neumann.element_of_reality ? "true" : "false"},
        {"refinement_basis_id", "-", r.von_neumann.refinement_id},
    };
    for (std::size_t k = 0; k < table.size(); ++k) {
        if (k == 0) rep.csv.header = {table[k].begin(), table[k].end()};
        else rep.csv.rows.push_back({table[k].begin(), table[k].end()});
    }
    rep.text = two_column(table);
    return rep;
}

/// Rotates the first two vectors of every group with at least two members by 45 degrees.
inline OrthonormalBasisFamily rotated_refinement(OrthonormalBasisFamily f) {
    const double c = std::cos(std::numbers::pi / 4);
    for (auto& g : f.groups) {
        if (g.cols() < 2) continue;
        const Vector u = g.col(0);
        const Vector v = g.col(1);
        g.col(0) = c * (u + v);
        g.col(1) = c * (u - v);
    }
    f.id += "-rotated45";
    return f;
}

inline Report run_postulate_compare(const ExperimentConfig& cfg, const PostulateCompareParams& p) {
    const auto obs = spectral_decompose(p.observable);
    OrthonormalBasisFamily refinement = eigensolver_basis(obs);
    // diagonal observables are refined by the computational basis
    if (max_abs(p.observable.matrix() - Matrix(p.observable.matrix().diagonal().asDiagonal())) == 0.0) {
        for (std::size_t g = 0; g < obs.size(); ++g) {
            Index col = 0;
            for (Index k = 0; k < obs.source_dim(); ++k) {
                if (std::abs(obs[g].projector(k, k) - 1.0) < 0.5) refinement.groups[g].col(col++) = Vector::Unit(obs.source_dim(), k);
            }
        }
        refinement.id = "computational";
    }
    const auto rotated = rotated_refinement(refinement);
    const auto lud = luders_measure(p.state, obs, p.outcome_index);
    const auto vn = von_neumann_measure(p.state, obs, refinement, p.outcome_index);
    const auto vn_rot = von_neumann_measure(p.state, obs, rotated, p.outcome_index);
    const auto lud_ns = luders_nonselective(p.state, obs);
    const auto vn_ns = von_neumann_nonselective(p.state, refinement);
    const auto vn_ns_rot = von_neumann_nonselective(p.state, rotated);

    Report rep;
    rep.experiment = Experiment::PostulateCompare;
    rep.json = header(Experiment::PostulateCompare, cfg.seed);
    rep.json["input"] = Json{{"observable", operator_to_json(p.observable)},
                             {"state", state_to_json(p.state)},
                             {"outcome_index", p.outcome_index}};
    rep.json["selective"] = Json{{"luders", record_to_json(lud)},
                                 {"von_neumann", record_to_json(vn)},
                                 {"von_neumann_rotated", record_to_json(vn_rot)}};
    rep.json["nonselective"] = Json{{"luders", {{"purity", lud_ns.purity()}, {"state", state_to_json(lud_ns)}}},
                                    {"von_neumann", {{"purity", vn_ns.purity()}, {"state", state_to_json(vn_ns)}}},
                                    {"von_neumann_rotated", {{"purity", vn_ns_rot.purity()}, {"state", state_to_json(vn_ns_rot)}}}};
    const double basis_gap = vn_ns.distance(vn_ns_rot);
    rep.json["summary"] = Json{{"multiplicity", obs[p.outcome_index].multiplicity},
                               {"luders_purity", lud.state().purity()},
                               {"von_neumann_determined", vn.is_determined()},
                               {"von_neumann_purity", vn.state().purity()},
                               {"refinement_dependence_max_abs", basis_gap}};

    const std::vector<std::array<std::string, 3>> table = {
        {"field", "luders", "von_neumann"},
        {"outcome", format_number(lud.outcome), format_number(vn.outcome)},
        {"probability", format_number(lud.probability), format_number(vn.probability)},
        {"post_state", "determined", vn.is_determined() ? "determined" : "undetermined"},
        {"selective_purity", format_number(lud.state().purity()), format_number(vn.state().purity())},
        {"nonselective_purity", format_number(lud_ns.purity()), format_number(vn_ns.purity())},
        {"refinement_basis_id", "-", refinement.id},
    };
    for (std::size_t k = 0; k < table.size(); ++k) {
        if (k == 0) rep.csv.header = {table[k].begin(), table[k].end()};
        else rep.csv.rows.push_back({table[k].begin(), table[k].end()});
    }
    rep.text = two_column(table) + "refinement dependence (max |rho_vN - rho_vN'|): " + format_number(basis_gap) + "\n";
    return rep;
}

inline Report run_chsh(const ExperimentConfig& cfg, const ChshParams& p) {
    std::vector<std::pair<double, double>> angle_pairs;
    for (const auto& pr : p.angles.pairs()) angle_pairs.push_back(pr);
    angle_pairs.insert(angle_pairs.end(), p.extra_pairs.begin(), p.extra_pairs.end());

    std::vector<CorrelationRow> rows;
    for (std::size_t k = 0; k < angle_pairs.size(); ++k) {
        Rng rng(derive_seed(cfg.seed, 10, k));
        rows.push_back(correlation_row(p.state, angle_pairs[k].first, angle_pairs[k].second, p.samples_per_setting, rng));
    }
    const double s_analytic = chsh_value(p.state, p.angles);
    Json summary{{"S_analytic", s_analytic}, {"abs_S_analytic", std::abs(s_analytic)}, {"tsirelson_bound", 2.0 * std::numbers::sqrt2}};
    std::string sampled_line;
    if (p.samples_per_setting > 0) {
        double s = 0.0, var = 0.0;
        bool defined = true;
        for (std::size_t k = 0; k < 4; ++k) {
            s += kChshSigns[k] * rows[k].e_sampled;
            if (rows[k].std_error) var += *rows[k].std_error * *rows[k].std_error;
            else defined = false;
        }
        summary["S_sampled"] = s;
        summary["stderr_S"] = defined ? Json(std::sqrt(var)) : Json(nullptr);
        sampled_line = "S sampled  = " + format_number(s) + " +- " + (defined ? format_number(std::sqrt(var)) : "nan") + "\n";
    }
    Report rep;
    rep.experiment = Experiment::Chsh;
    rep.csv = correlation_table(rows);
    rep.json = header(Experiment::Chsh, cfg.seed);
    rep.json["angles_rad"] = Json{{"a", p.angles.a}, {"a_prime", p.angles.a_prime}, {"b", p.angles.b}, {"b_prime", p.angles.b_prime}};
    Json table = Json::array();
    for (const auto& r : rows) {
        table.push_back(Json{{"theta_a", r.theta_a}, {"theta_b", r.theta_b}, {"E_quantum", r.e_quantum},
                             {"E_sampled", r.e_sampled}, {"n", r.n},
                             {"stderr", r.std_error ? Json(*r.std_error) : Json(nullptr)}});
    }
    rep.json["correlations"] = std::move(table);
    rep.json["summary"] = summary;
    rep.text = render_csv(rep.csv) + "S analytic = " + format_number(s_analytic) + " (|S| = " +
               format_number(std::abs(s_analytic)) + ")\n" + sampled_line;
    return rep;
}

inline std::vector<ClickRecord> load_clicks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open click file " + path);
    return read_clicks_csv(in);
}

inline Report run_window_sweep_experiment(const ExperimentConfig& cfg, const WindowSweepParams& p) {
    std::vector<SweepRow> rows;
    if (!p.import_clicks.empty()) {
        std::array<std::vector<SettingWindowResult>, 4> per_setting;
        for (std::size_t k = 0; k < 4; ++k) {
            const auto all = load_clicks(p.import_clicks[k]);
            std::vector<ClickRecord> a, b;
            for (const auto& c : all) (c.side == DetectorSide::A ? a : b).push_back(c);
            per_setting[k] = analyze_setting(a, b, p.sweep.windows);
        }
        rows = combine_sweep(p.sweep.windows, per_setting, p.sweep.record_pair_ids);
    } else {
        StreamSink sink;
        if (p.export_clicks_dir) {
            std::error_code ec;
            std::filesystem::create_directories(*p.export_clicks_dir, ec);
            if (ec) throw Error(ErrorKind::IoError, "cannot create " + *p.export_clicks_dir + ": " + ec.message());
            sink = [dir = *p.export_clicks_dir](std::size_t k, const SettingStreams& s) {
                const auto path = std::filesystem::path(dir) / ("clicks_" + std::to_string(k) + ".csv");
                std::ofstream out(path);
                if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
                std::vector<ClickRecord> all = s.clicks_a;
                all.insert(all.end(), s.clicks_b.begin(), s.clicks_b.end());
                write_clicks_csv(out, all);
                if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
            };
        }
        rows = run_window_sweep(p.sweep, DelayModelRegistry::with_builtins(), sink);
    }

    Report rep;
    rep.experiment = Experiment::WindowSweep;
    rep.csv = sweep_table(rows);
    rep.json = header(Experiment::WindowSweep, cfg.seed);
    const auto& s = p.sweep;
    rep.json["config"] = Json{
        {"settings_deg", {{"a", s.settings.a * 180 / std::numbers::pi}, {"a_prime", s.settings.a_prime * 180 / std::numbers::pi},
                          {"b", s.settings.b * 180 / std::numbers::pi}, {"b_prime", s.settings.b_prime * 180 / std::numbers::pi}}},
        {"n_pairs", s.n_pairs},
        {"jitter_scale_s", s.jitter_scale},
        {"spacing_s", s.spacing},
        {"model", {{"name", s.model.name}, {"t0_s", s.model.t0}, {"exponent", s.model.exponent},
                   {"outcome_rule", s.model.rule == OutcomeRule::Sign ? "sign" : "malus"}}},
        {"source_mode", s.source_mode == SourceMode::Shared ? "shared" : "per_setting"},
        {"imported", !p.import_clicks.empty()}};
    Json table = Json::array();
    for (const auto& r : rows) {
        Json row{{"window_s", r.window.is_unbounded() ? Json("inf") : Json(r.window.seconds())},
                 {"E", r.correlations},
                 {"S", r.S},
                 {"abs_S", std::abs(r.S)},
                 {"stderr_S", r.std_error ? Json(*r.std_error) : Json(nullptr)},
                 {"matched_fraction", r.matched_fraction},
                 {"matched", r.matched},
                 {"jaccard_b_vs_bprime", r.jaccard_b_vs_bprime}};
        if (s.record_pair_ids) row["pair_ids"] = r.pair_ids;
        table.push_back(std::move(row));
    }
    rep.json["rows"] = std::move(table);
    rep.json["summary"] = Json{{"rows", rows.size()}};
    rep.text = render_csv(rep.csv);
    return rep;
}

inline Report run_condprob(const ExperimentConfig& cfg, const CondProbParams& p) {
    const auto a = spectral_decompose(p.a);
    const auto b = spectral_decompose(p.b);
    const bool nondegenerate = !is_degenerate(a) && !is_degenerate(b);
    Report rep;
    rep.experiment = Experiment::CondProb;
    rep.csv.header = {"k", "alpha_k", "m", "beta_m", "p_b_given_a", "p_a_given_b", "overlap"};
    Json table = Json::array();
    for (std::size_t k = 0; k < a.size(); ++k) {
        for (std::size_t m = 0; m < b.size(); ++m) {
            const bool a_ok = p.state.probability(a[k].projector) > kProbFloor;
            const bool b_ok = p.state.probability(b[m].projector) > kProbFloor;
            const std::optional<double> b_given_a = a_ok ? std::optional(conditional_probability(p.state, a, k, b, m)) : std::nullopt;
            const std::optional<double> a_given_b = b_ok ? std::optional(conditional_probability(p.state, b, m, a, k)) : std::nullopt;
            std::optional<double> overlap;
            if (nondegenerate) overlap = (a[k].projector * b[m].projector).trace().real();
            rep.csv.rows.push_back({std::to_string(k), format_number(a[k].eigenvalue), std::to_string(m),
                                    format_number(b[m].eigenvalue), format_optional(b_given_a),
                                    format_optional(a_given_b), format_optional(overlap)});
            const auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
            table.push_back(Json{{"k", k}, {"alpha_k", a[k].eigenvalue}, {"m", m}, {"beta_m", b[m].eigenvalue},
                                 {"p_b_given_a", opt(b_given_a)}, {"p_a_given_b", opt(a_given_b)}, {"overlap", opt(overlap)}});
        }
    }
    rep.json = header(Experiment::CondProb, cfg.seed);
    rep.json["input"] = Json{{"state", state_to_json(p.state)}, {"a", operator_to_json(p.a)}, {"b", operator_to_json(p.b)}};
    rep.json["table"] = std::move(table);
    rep.json["summary"] = Json{{"both_nondegenerate", nondegenerate}};
    rep.text = render_csv(rep.csv);
    return rep;
}

}  // namespace detail

inline Report run_experiment(const ExperimentConfig& cfg) {
    return std::visit(
        [&](const auto& p) -> Report {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, EprDemoParams>) return detail::run_epr(cfg, p);
            else if constexpr (std::is_same_v<P, PostulateCompareParams>) return detail::run_postulate_compare(cfg, p);
            else if constexpr (std::is_same_v<P, ChshParams>) return detail::run_chsh(cfg, p);
            else if constexpr (std::is_same_v<P, WindowSweepParams>) return detail::run_window_sweep_experiment(cfg, p);
            else return detail::run_condprob(cfg, p);
        },
        cfg.params);
}

/// Output path precedence: explicit path (flag or config), then
/// $QMEAS_OUTPUT_DIR/<experiment>.<ext>, then ./<experiment>.<ext>.
inline std::filesystem::path resolve_output_path(const ExperimentConfig& cfg) {
    if (cfg.output_path) return *cfg.output_path;
    const std::string name = std::string(to_string(cfg.experiment)) + "." + std::string(to_string(cfg.format));
    if (const char* dir = std::getenv("QMEAS_OUTPUT_DIR"); dir && *dir) return std::filesystem::path(dir) / name;
    return name;
}

namespace detail {

inline void write_atomically(const std::filesystem::path& path, const std::string& content) {
    std::error_code ec;
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw Error(ErrorKind::IoError, "cannot create directory " + path.parent_path().string());
    }
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::IoError, "cannot open " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw Error(ErrorKind::IoError, "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw Error(ErrorKind::IoError, "cannot move report into place at " + path.string());
    }
}

}  // namespace detail

/// Writes the report. JSON goes to path; CSV writes the table to path and the
/// JSON summary block to path + ".summary.json".
inline void emit_report(const Report& report, Format format, const std::filesystem::path& path) {
    if (format == Format::Json) {
        detail::write_atomically(path, report.json.dump(2) + "\n");
        return;
    }
    Json summary = detail::header(report.experiment, report.json.value("seed", std::uint64_t{0}));
    if (report.json.contains("summary")) summary["summary"] = report.json.at("summary");
    detail::write_atomically(path, render_csv(report.csv));
    detail::write_atomically(std::filesystem::path(path.string() + ".summary.json"), summary.dump(2) + "\n");
}

}  // namespace qmeas
