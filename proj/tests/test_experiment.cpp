#include <catch_amalgamated.hpp>

#include "qmeas/experiment.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace qmeas;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

ErrorKind parse_error_kind(const Json& j, std::optional<Experiment> sub = std::nullopt) {
    try {
        (void)parse_config(j, sub);
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("config was accepted");
    return ErrorKind::IoError;
}

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("qmeas_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Json small_sweep_json() {
    return Json::parse(R"({
        "experiment": "window-sweep", "seed": 5,
        "params": {"n_pairs": 4000, "windows_s": ["inf", 1e-6, 1e-7]}
    })");
}

}  // namespace

TEST_CASE("names round-trip", "[config]") {
    for (auto e : {Experiment::EprDemo, Experiment::PostulateCompare, Experiment::Chsh, Experiment::WindowSweep,
                   Experiment::CondProb}) {
        CHECK(experiment_from_string(to_string(e)) == e);
    }
    CHECK_THROWS_AS(experiment_from_string("bogus"), Error);
    CHECK(format_from_string("csv") == Format::Csv);
}

TEST_CASE("defaults per experiment", "[config]") {
    const auto epr = parse_config(Json::object(), Experiment::EprDemo);
    CHECK(std::holds_alternative<EprDemoParams>(epr.params));
    CHECK(epr.seed == 1);
    CHECK(epr.format == Format::Json);
    const auto sweep = parse_config(Json::object(), Experiment::WindowSweep);
    const auto& sp = std::get<WindowSweepParams>(sweep.params);
    CHECK(sp.sweep.n_pairs == 1'000'000);
    CHECK(sp.sweep.seed == 1);
    CHECK(parse_error_kind(Json::object()) == ErrorKind::ValidationError);
}

TEST_CASE("unknown keys are rejected", "[config]") {
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"chsh","sed":3})")) == ErrorKind::ConfigParseError);
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"chsh","params":{"samples":3}})")) == ErrorKind::ConfigParseError);
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"window-sweep","params":{"model":{"t0":1}}})")) ==
          ErrorKind::ConfigParseError);
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"condprob","params":{"state":{"dim":2,"re":[1,0],"x":1}}})")) ==
          ErrorKind::ConfigParseError);
}

TEST_CASE("physical validation happens at parse time", "[config]") {
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"window-sweep","params":{"windows_s":[-1e-9]}})")) ==
          ErrorKind::ValidationError);
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"window-sweep","params":{"windows_s":["forever"]}})")) ==
          ErrorKind::ConfigParseError);
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"window-sweep","params":{"model":{"exponent":-2}}})")) ==
          ErrorKind::ValidationError);
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"window-sweep","params":{"model":{"name":"nope"}}})")) ==
          ErrorKind::ValidationError);
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"epr-demo","params":{"c1":0.9,"c2":0.3}})")) ==
          ErrorKind::ValidationError);
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"epr-demo","params":{"i":1,"j":1}})")) == ErrorKind::ValidationError);
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"epr-demo","params":{"a1":{"dim":2,"re":[[0,1],[0,0]]}}})")) ==
          ErrorKind::ValidationError);
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"epr-demo","params":{"a1":{"dim":2,"re":[[1,0],[0,1]]}}})")) ==
          ErrorKind::ValidationError);
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"condprob","params":{"state":{"dim":2,"re":[1,1]}}})")) ==
          ErrorKind::ValidationError);
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"chsh","params":{"state":{"dim":2,"re":[1,0]}}})")) ==
          ErrorKind::ValidationError);
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"chsh","seed":-4})")) == ErrorKind::ValidationError);
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"postulate-compare","params":{"outcome_index":2}})")) ==
          ErrorKind::ValidationError);
    CHECK(parse_error_kind(Json::parse(R"({"experiment":"chsh"})"), Experiment::EprDemo) == ErrorKind::ValidationError);
}

TEST_CASE("overrides take precedence over the file", "[config]") {
    const Json j = Json::parse(R"({"experiment":"chsh","seed":3,"format":"json","output_path":"a.json"})");
    ConfigOverrides o;
    o.seed = 9;
    o.format = Format::Csv;
    o.output_path = "b.csv";
    const auto cfg = parse_config(j, Experiment::Chsh, o);
    CHECK(cfg.seed == 9);
    CHECK(cfg.format == Format::Csv);
    CHECK(cfg.output_path == std::optional<std::string>("b.csv"));
    CHECK(resolve_output_path(cfg) == fs::path("b.csv"));
}

TEST_CASE("output directory from the environment", "[config]") {
    auto cfg = parse_config(Json::object(), Experiment::CondProb);
    ::setenv("QMEAS_OUTPUT_DIR", "/tmp/qmeas_env_out", 1);
    CHECK(resolve_output_path(cfg) == fs::path("/tmp/qmeas_env_out/condprob.json"));
    ::unsetenv("QMEAS_OUTPUT_DIR");
    CHECK(resolve_output_path(cfg) == fs::path("condprob.json"));
    cfg.format = Format::Csv;
    CHECK(resolve_output_path(cfg) == fs::path("condprob.csv"));
}

TEST_CASE("config files allow comments", "[config]") {
    const auto dir = scratch_dir("load");
    {
        std::ofstream(dir / "c.json") << "// chsh run\n{\"experiment\": \"chsh\", \"seed\": 4}\n";
        std::ofstream(dir / "bad.json") << "{\"experiment\": \"chsh\",}\n";
    }
    CHECK(load_config(dir / "c.json").seed == 4);
    CHECK_THROWS_AS(load_config(dir / "bad.json"), Error);
    CHECK_THROWS_AS(load_config(dir / "missing.json"), Error);
}

TEST_CASE("operator and state JSON round-trip", "[json]") {
    Matrix m(2, 2);
    m << 1.0, Complex(0.5, -0.25), Complex(0.5, 0.25), -2.0;
    const HermitianOperator op(m);
    CHECK(max_abs(operator_from_json(operator_to_json(op)).matrix() - m) == 0.0);

    Vector v(2);
    v << Complex(0.6, 0.0), Complex(0.0, 0.8);
    const auto pure = QuantumState::pure(v);
    const auto back = state_from_json(state_to_json(pure));
    REQUIRE(back.is_pure());
    CHECK((back.vector() - v).norm() == 0.0);

    const auto mixed = QuantumState::maximally_mixed(3);
    CHECK_FALSE(state_from_json(state_to_json(mixed)).is_pure());
    Json wrong = state_to_json(pure);
    wrong["kind"] = "density";
    CHECK_THROWS_AS(state_from_json(wrong), Error);
}

TEST_CASE("report JSON round-trip through a file", "[json][emit]") {
    const auto dir = scratch_dir("emit");
    const auto cfg = parse_config(Json::object(), Experiment::EprDemo);
    const auto rep = run_experiment(cfg);
    emit_report(rep, Format::Json, dir / "r.json");
    const Json back = Json::parse(slurp(dir / "r.json"));
    CHECK(back == rep.json);
    CHECK(back.at("schema_version") == kSchemaVersion);
    CHECK_FALSE(fs::exists(dir / "r.json.tmp"));
}

TEST_CASE("epr-demo report contrasts the postulates", "[experiment]") {
    const auto rep = run_experiment(parse_config(Json::object(), Experiment::EprDemo));
    CHECK(rep.json["summary"]["luders"]["post_state"] == "product, sharp");
    CHECK(rep.json["summary"]["von_neumann"]["post_state"] == "undetermined");
    CHECK(rep.json["report"]["von_neumann"]["refinement_basis_id"] == "product");
    CHECK(rep.json["report"]["luders"]["probability"].get<double>() == Approx(0.5));
    CHECK(rep.text.find("undetermined") != std::string::npos);

    const auto completed = run_experiment(parse_config(
        Json::parse(R"({"experiment":"epr-demo","params":{"outcome_index":0,"refinement_outcome":1}})")));
    CHECK(completed.json["summary"]["von_neumann"]["post_state"] == "determined, sharp");
}

TEST_CASE("postulate-compare shows purity and basis dependence", "[experiment]") {
    const auto rep = run_experiment(parse_config(Json::object(), Experiment::PostulateCompare));
    const auto& s = rep.json["summary"];
    CHECK(s["multiplicity"] == 2);
    CHECK(s["luders_purity"].get<double>() == Approx(1.0).margin(1e-9));
    CHECK(s["von_neumann_purity"].get<double>() == Approx(0.5).margin(1e-9));
    CHECK_FALSE(s["von_neumann_determined"].get<bool>());
    CHECK(s["refinement_dependence_max_abs"].get<double>() > 0.1);
    CHECK(rep.json["selective"]["von_neumann"]["post_state"]["refinement_basis_id"] == "computational");
    CHECK(rep.json["selective"]["luders"]["postulate"] == "luders");
}

TEST_CASE("chsh report", "[experiment]") {
    const auto cfg = parse_config(Json::parse(R"({"experiment":"chsh","params":{"samples_per_setting":2000,
                                                  "extra_pairs_rad":[[0.0, 0.0]]}})"));
    const auto rep = run_experiment(cfg);
    CHECK(rep.json["summary"]["abs_S_analytic"].get<double>() == Approx(2 * std::numbers::sqrt2).margin(1e-9));
    CHECK(render_csv(rep.csv).rfind("theta_a,theta_b,E_quantum,E_sampled,n,stderr\n", 0) == 0);
    CHECK(rep.csv.rows.size() == 5);
    CHECK(std::stod(rep.csv.rows[4][2]) == Approx(-1.0).margin(1e-12));
}

TEST_CASE("condprob report", "[experiment]") {
    const auto rep = run_experiment(parse_config(Json::object(), Experiment::CondProb));
    REQUIRE(rep.json["table"].size() == 4);
    for (const auto& row : rep.json["table"]) {
        CHECK(row["p_b_given_a"].is_null() == (row["k"] == 0));  // |0> has no weight on sigma_z = -1
        CHECK(row["p_a_given_b"].get<double>() == Approx(row["overlap"].get<double>()));
    }
}

TEST_CASE("reports are reproducible", "[experiment]") {
    for (auto e : {Experiment::EprDemo, Experiment::PostulateCompare, Experiment::CondProb}) {
        const auto cfg = parse_config(Json::object(), e);
        CHECK(run_experiment(cfg).json.dump() == run_experiment(cfg).json.dump());
    }
    const auto chsh = parse_config(Json::parse(R"({"experiment":"chsh","seed":11,"params":{"samples_per_setting":500}})"));
    CHECK(run_experiment(chsh).json.dump() == run_experiment(chsh).json.dump());
    const auto sweep = parse_config(small_sweep_json());
    CHECK(render_csv(run_experiment(sweep).csv) == render_csv(run_experiment(sweep).csv));
}

TEST_CASE("sweep CSV layout", "[emit]") {
    const auto empty = render_csv(sweep_table({}));
    CHECK(empty == "window_s,E_ab,E_abp,E_apb,E_apbp,S,stderr_S,matched_fraction\n");
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(1e-7) == "1e-07");
    CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
    CHECK(format_number(std::nan("")) == "nan");

    const auto dir = scratch_dir("csv");
    auto cfg = parse_config(small_sweep_json());
    cfg.format = Format::Csv;
    const auto rep = run_experiment(cfg);
    emit_report(rep, Format::Csv, dir / "s.csv");
    const auto csv = slurp(dir / "s.csv");
    CHECK(csv.rfind("window_s,E_ab,E_abp,E_apb,E_apbp,S,stderr_S,matched_fraction\ninf,", 0) == 0);
    const Json summary = Json::parse(slurp(dir / "s.csv.summary.json"));
    CHECK(summary["seed"] == 5);
}

TEST_CASE("exported clicks re-analysed give identical S", "[emit][coincidence]") {
    const auto dir = scratch_dir("clicks");
    Json j = small_sweep_json();
    j["params"]["export_clicks_dir"] = (dir / "clicks").string();
    const auto original = run_experiment(parse_config(j));
    for (int k = 0; k < 4; ++k) CHECK(fs::exists(dir / "clicks" / ("clicks_" + std::to_string(k) + ".csv")));

    Json again = small_sweep_json();
    Json files = Json::array();
    for (int k = 0; k < 4; ++k) files.push_back((dir / "clicks" / ("clicks_" + std::to_string(k) + ".csv")).string());
    again["params"]["import_clicks"] = files;
    const auto reloaded = run_experiment(parse_config(again));
    REQUIRE(original.json["rows"].size() == reloaded.json["rows"].size());
    for (std::size_t w = 0; w < original.json["rows"].size(); ++w) {
        CHECK(original.json["rows"][w]["S"] == reloaded.json["rows"][w]["S"]);
        CHECK(original.json["rows"][w]["matched"] == reloaded.json["rows"][w]["matched"]);
    }

    files[2] = (dir / "nope.csv").string();
    again["params"]["import_clicks"] = files;
    try {
        (void)run_experiment(parse_config(again));
        FAIL("expected IoError");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::IoError);
    }
}

TEST_CASE("error kinds carry module provenance", "[errors]") {
    CHECK(module_of(ErrorKind::NotHermitian) == std::string_view("spectral"));
    CHECK(module_of(ErrorKind::ZeroProbabilityBranch) == std::string_view("measurement"));
    CHECK(module_of(ErrorKind::EqualIndices) == std::string_view("composite"));
    CHECK(module_of(ErrorKind::EmptySample) == std::string_view("chsh"));
    CHECK(module_of(ErrorKind::InvalidModelParams) == std::string_view("coincidence"));
    CHECK(module_of(ErrorKind::ConfigParseError) == std::string_view("cli"));
    const Error e(ErrorKind::NotNormalized, "x");
    CHECK(std::string(e.what()).find("NotNormalized") != std::string::npos);
}
