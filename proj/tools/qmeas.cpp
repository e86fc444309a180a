// qmeas: run measurement-semantics experiments from a config file.
//
//   qmeas <epr-demo|postulate-compare|chsh|window-sweep|condprob>
//         [--config FILE] [--seed N] [--out PATH] [--format json|csv]
//
// Flags override config values. Exit codes: 0 ok, 2 config error,
// 3 numerical error, 4 I/O error. Errors are reported as one line on stderr:
//   error code=<Kind> module=<module> exit=<n> message="..."

#include "qmeas/experiment.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <iostream>
#include <string>

namespace {

int exit_code_for(qmeas::ErrorKind kind) {
    switch (kind) {
        case qmeas::ErrorKind::ConfigParseError:
        case qmeas::ErrorKind::ValidationError:
            return 2;
        case qmeas::ErrorKind::IoError:
            return 4;
        default:
            return 3;
    }
}

std::string escape(std::string s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
            out += ' ';
            continue;
        }
        out += c;
    }
    return out;
}

int report_error(qmeas::ErrorKind kind, const std::string& message) {
    const int code = exit_code_for(kind);
    std::cerr << "error code=" << qmeas::to_string(kind) << " module=" << qmeas::module_of(kind) << " exit=" << code
              << " message=\"" << escape(message) << "\"\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Projection-postulate experiments: Lueders vs von Neumann, EPR, CHSH, time-window coincidences"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> format;
    bool quiet = false;
    app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "master seed (overrides config)");
    app.add_option("--out", out, "report path (overrides config and $QMEAS_OUTPUT_DIR)");
    app.add_option("--format", format, "report format")->check(CLI::IsMember({"json", "csv"}));
    app.add_flag("-q,--quiet", quiet, "do not print the report summary");

    const std::pair<qmeas::Experiment, const char*> commands[] = {
        {qmeas::Experiment::EprDemo, "measure one factor of an entangled state under both postulates"},
        {qmeas::Experiment::PostulateCompare, "Lueders vs von Neumann on a degenerate observable"},
        {qmeas::Experiment::Chsh, "analytic and sampled CHSH value for a two-qubit state"},
        {qmeas::Experiment::WindowSweep, "simulated coincidence counting: S as a function of the window"},
        {qmeas::Experiment::CondProb, "conditional probabilities P(b|a) and P(a|b)"}};
    for (const auto& [e, help] : commands) app.add_subcommand(std::string(qmeas::to_string(e)), help)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        return report_error(qmeas::ErrorKind::ConfigParseError, e.what());
    }

    try {
        const auto subcommand = qmeas::experiment_from_string(app.get_subcommands().front()->get_name());
        qmeas::ConfigOverrides overrides;
        overrides.seed = seed;
        overrides.output_path = out;
        if (format) overrides.format = qmeas::format_from_string(*format);

        const auto cfg = config_path.empty() ? qmeas::parse_config(qmeas::Json::object(), subcommand, overrides)
                                             : qmeas::load_config(config_path, subcommand, overrides);
        const auto path = qmeas::resolve_output_path(cfg);
        const auto report = qmeas::run_experiment(cfg);
        qmeas::emit_report(report, cfg.format, path);
        if (!quiet) {
            std::cout << report.text;
            std::cout << "report written to " << path.string() << "\n";
        }
        return 0;
    } catch (const qmeas::Error& e) {
        return report_error(e.kind(), e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        return report_error(qmeas::ErrorKind::IoError, e.what());
    } catch (const std::exception& e) {
        std::cerr << "error code=Internal module=cli exit=3 message=\"" << escape(e.what()) << "\"\n";
        return 3;
    }
}
