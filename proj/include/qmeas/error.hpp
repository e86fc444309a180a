#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qmeas {

enum class ErrorKind {
    NotHermitian,
    ToleranceCollapse,
    DimensionMismatch,
    InvalidState,
    ZeroProbabilityBranch,
    RefinementMismatch,
    IncompleteBasis,
    DuplicateLabels,
    NonCommutingObservables,
    NotNormalized,
    IndexOutOfRange,
    EqualIndices,
    NonUnitDirection,
    EmptySample,
    InvalidModelParams,
    ConfigParseError,
    ValidationError,
    IoError,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::NotHermitian: return "NotHermitian";
        case ErrorKind::ToleranceCollapse: return "ToleranceCollapse";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::InvalidState: return "InvalidState";
        case ErrorKind::ZeroProbabilityBranch: return "ZeroProbabilityBranch";
        case ErrorKind::RefinementMismatch: return "RefinementMismatch";
        case ErrorKind::IncompleteBasis: return "IncompleteBasis";
        case ErrorKind::DuplicateLabels: return "DuplicateLabels";
        case ErrorKind::NonCommutingObservables: return "NonCommutingObservables";
        case ErrorKind::NotNormalized: return "NotNormalized";
        case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorKind::EqualIndices: return "EqualIndices";
        case ErrorKind::NonUnitDirection: return "NonUnitDirection";
        case ErrorKind::EmptySample: return "EmptySample";
        case ErrorKind::InvalidModelParams: return "InvalidModelParams";
        case ErrorKind::ConfigParseError: return "ConfigParseError";
        case ErrorKind::ValidationError: return "ValidationError";
        case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

/// Module that raises a given error kind; used as provenance in CLI diagnostics.
constexpr std::string_view module_of(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::NotHermitian:
        case ErrorKind::ToleranceCollapse:
        case ErrorKind::DimensionMismatch:
            return "spectral";
        case ErrorKind::InvalidState:
        case ErrorKind::ZeroProbabilityBranch:
        case ErrorKind::RefinementMismatch:
        case ErrorKind::IncompleteBasis:
        case ErrorKind::DuplicateLabels:
        case ErrorKind::NonCommutingObservables:
            return "measurement";
        case ErrorKind::NotNormalized:
        case ErrorKind::IndexOutOfRange:
        case ErrorKind::EqualIndices:
        case ErrorKind::NonUnitDirection:
            return "composite";
        case ErrorKind::EmptySample:
            return "chsh";
        case ErrorKind::InvalidModelParams:
            return "coincidence";
        case ErrorKind::ConfigParseError:
        case ErrorKind::ValidationError:
        case ErrorKind::IoError:
            return "cli";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace qmeas
