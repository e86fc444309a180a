#pragma once

// JSON forms of operators, states, measurement records and EPR reports.
// Matrices: {"dim": n, "re": [[...]], "im": [[...]]}. State vectors use the
// same keys with flat "re"/"im" arrays. "im" may be omitted (all zero).

#include "qmeas/composite.hpp"
#include "qmeas/error.hpp"
#include "qmeas/measurement.hpp"
#include "qmeas/spectral.hpp"
#include "qmeas/state.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace qmeas {

using Json = nlohmann::ordered_json;

inline Json matrix_to_json(const Matrix& m) {
    Json re = Json::array();
    Json im = Json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        Json rr = Json::array();
        Json ir = Json::array();
        for (Index c = 0; c < m.cols(); ++c) {
            rr.push_back(m(r, c).real());
            ir.push_back(m(r, c).imag());
        }
        re.push_back(std::move(rr));
        im.push_back(std::move(ir));
    }
    return Json{{"dim", m.rows()}, {"re", std::move(re)}, {"im", std::move(im)}};
}

inline Json vector_to_json(const Vector& v) {
    Json re = Json::array();
    Json im = Json::array();
    for (Index i = 0; i < v.size(); ++i) {
        re.push_back(v(i).real());
        im.push_back(v(i).imag());
    }
    return Json{{"dim", v.size()}, {"re", std::move(re)}, {"im", std::move(im)}};
}

namespace detail {

inline void reject_unknown_keys(const Json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!j.is_object()) throw Error(ErrorKind::ConfigParseError, where + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (auto a : allowed) ok = ok || key == a;
        if (!ok) throw Error(ErrorKind::ConfigParseError, "unknown key '" + key + "' in " + where);
    }
}

inline double number_at(const Json& j, const std::string& where) {
    if (!j.is_number()) throw Error(ErrorKind::ConfigParseError, where + " must be a number");
    return j.get<double>();
}

inline Index read_dim(const Json& j, const std::string& where) {
    if (!j.contains("dim") || !j.at("dim").is_number_integer() || j.at("dim").get<long long>() < 1) {
        throw Error(ErrorKind::ConfigParseError, where + ".dim must be a positive integer");
    }
    return static_cast<Index>(j.at("dim").get<long long>());
}

}  // namespace detail

/// Parses a dim x dim matrix in the {"dim","re","im"} schema.
inline Matrix matrix_from_json(const Json& j, const std::string& where = "matrix") {
    detail::reject_unknown_keys(j, {"dim", "re", "im"}, where);
    const Index n = detail::read_dim(j, where);
    Matrix m = Matrix::Zero(n, n);
    for (const char* part : {"re", "im"}) {
        if (!j.contains(part)) {
            if (std::string_view(part) == "re") throw Error(ErrorKind::ConfigParseError, where + ".re is required");
            continue;
        }
        const Json& rows = j.at(part);
        if (!rows.is_array() || static_cast<Index>(rows.size()) != n) {
            throw Error(ErrorKind::ConfigParseError, where + "." + part + " must have dim rows");
        }
        for (Index r = 0; r < n; ++r) {
            const Json& row = rows.at(static_cast<std::size_t>(r));
            if (!row.is_array() || static_cast<Index>(row.size()) != n) {
                throw Error(ErrorKind::ConfigParseError, where + "." + part + " rows must have dim entries");
            }
            for (Index c = 0; c < n; ++c) {
                const double v = detail::number_at(row.at(static_cast<std::size_t>(c)), where + "." + part);
                if (std::string_view(part) == "re") m(r, c) += v;
                else m(r, c) += Complex(0.0, v);
            }
        }
    }
    return m;
}

inline Vector vector_from_json(const Json& j, const std::string& where = "vector") {
    detail::reject_unknown_keys(j, {"dim", "re", "im"}, where);
    const Index n = detail::read_dim(j, where);
    if (!j.contains("re")) throw Error(ErrorKind::ConfigParseError, where + ".re is required");
    Vector v = Vector::Zero(n);
    for (const char* part : {"re", "im"}) {
        if (!j.contains(part)) continue;
        const Json& arr = j.at(part);
        if (!arr.is_array() || static_cast<Index>(arr.size()) != n) {
            throw Error(ErrorKind::ConfigParseError, where + "." + part + " must have dim entries");
        }
        for (Index i = 0; i < n; ++i) {
            const double x = detail::number_at(arr.at(static_cast<std::size_t>(i)), where + "." + part);
            if (std::string_view(part) == "re") v(i) += x;
            else v(i) += Complex(0.0, x);
        }
    }
    return v;
}

inline Json operator_to_json(const HermitianOperator& op) { return matrix_to_json(op.matrix()); }

inline HermitianOperator operator_from_json(const Json& j, const std::string& where = "operator") {
    return HermitianOperator(matrix_from_json(j, where));
}

inline Json state_to_json(const QuantumState& s) {
    Json j = s.is_pure() ? vector_to_json(s.vector()) : matrix_to_json(s.density_matrix());
    j["kind"] = s.is_pure() ? "pure" : "density";
    return j;
}

/// A flat "re" array is a state vector, a nested one a density matrix. An
/// optional "kind" key must agree with the shape.
inline QuantumState state_from_json(const Json& j, const std::string& where = "state") {
    if (!j.is_object() || !j.contains("re") || !j.at("re").is_array()) {
        throw Error(ErrorKind::ConfigParseError, where + " needs an array 're'");
    }
    Json body = j;
    std::string kind;
    if (body.contains("kind")) {
        if (!body.at("kind").is_string()) throw Error(ErrorKind::ConfigParseError, where + ".kind must be a string");
        kind = body.at("kind").get<std::string>();
        body.erase("kind");
    }
    const bool nested = !body.at("re").empty() && body.at("re").front().is_array();
    if (!kind.empty() && kind != (nested ? "density" : "pure")) {
        throw Error(ErrorKind::ConfigParseError, where + ".kind does not match the shape of 're'");
    }
    if (nested) return QuantumState::density(matrix_from_json(body, where));
    return QuantumState::pure(vector_from_json(body, where));
}

inline Json basis_to_json(const OrthonormalBasisFamily& f) {
    Json groups = Json::array();
    for (std::size_t g = 0; g < f.groups.size(); ++g) {
        Json vecs = Json::array();
        for (Index c = 0; c < f.groups[g].cols(); ++c) vecs.push_back(vector_to_json(f.groups[g].col(c)));
        groups.push_back(Json{{"labels", f.labels[g]}, {"vectors", std::move(vecs)}});
    }
    return Json{{"id", f.id}, {"groups", std::move(groups)}};
}

inline Json record_to_json(const MeasurementRecord& r) {
    Json j{{"postulate", std::string(to_string(r.postulate))},
           {"branch_index", r.branch_index},
           {"outcome", r.outcome},
           {"probability", r.probability}};
    if (const auto* s = std::get_if<QuantumState>(&r.post_state)) {
        j["post_state"] = Json{{"determined", true}, {"purity", s->purity()}, {"state", state_to_json(*s)}};
    } else {
        const auto& u = std::get<Undetermined>(r.post_state);
        j["post_state"] = Json{{"determined", false},
                               {"refinement_basis_id", u.basis_used.id},
                               {"conditional_mixture_purity", u.conditional_mixture.purity()},
                               {"conditional_mixture", state_to_json(u.conditional_mixture)}};
    }
    return j;
}

inline Json epr_report_to_json(const EprScenarioReport& r) {
    const auto& L = r.luders;
    const auto& V = r.von_neumann;
    Json lud{{"postulate", "luders"},
             {"outcome", L.outcome},
             {"probability", L.probability},
             {"post_state_kind", L.post_is_product ? "product" : (L.post_state.is_pure() ? "pure" : "mixed")},
             {"purity", L.purity},
             {"remote_mean", L.remote_mean},
             {"remote_variance", L.remote_variance},
             {"remote_sharp", L.element_of_reality},
             {"element_of_reality", L.element_of_reality},
             {"post_state", state_to_json(L.post_state)}};
    Json vn{{"postulate", "von_neumann"},
            {"outcome", V.outcome},
            {"probability", V.probability},
            {"post_state_kind", V.undetermined ? "undetermined" : "determined"},
            {"refinement_basis_id", V.refinement_id},
            {"purity", V.purity},
            {"remote_mean", V.remote_mean},
            {"remote_variance", V.remote_variance},
            {"element_of_reality", V.element_of_reality}};
    if (V.refinement_outcome) vn["refinement_outcome"] = *V.refinement_outcome;
    vn[V.undetermined ? "conditional_mixture" : "post_state"] = state_to_json(V.state);
    return Json{{"outcome_index", r.outcome_index},
                {"multiplicity", r.multiplicity},
                {"luders", std::move(lud)},
                {"von_neumann", std::move(vn)}};
}

}  // namespace qmeas
