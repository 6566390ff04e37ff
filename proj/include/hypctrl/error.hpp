#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hypctrl {

enum class ErrorCode {
    // validation
    OrderingViolated,
    DimensionMismatch,
    NonFiniteEntry,
    OutOfDomain,
    IndexOutOfRange,
    NotInClassB,
    InconsistentBoundaryMap,
    DiagonalCouplingPresent,
    GridMismatch,
    TimeTooShort,
    CompatibilityViolated,
    NotApplicable,
    ParseError,
    ConfigError,
    // numerical
    QuadratureNonConvergent,
    CFLViolation,
    NonFiniteState,
    BoundaryClosureFailure,
    SingularBoundarySpeed,
    FlowLeftDomain,
    FixedPointDivergence,
    MaxItersExceeded,
    IllConditionedSystem,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::OrderingViolated: return "OrderingViolated";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::NonFiniteEntry: return "NonFiniteEntry";
        case ErrorCode::OutOfDomain: return "OutOfDomain";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::NotInClassB: return "NotInClassB";
        case ErrorCode::InconsistentBoundaryMap: return "InconsistentBoundaryMap";
        case ErrorCode::DiagonalCouplingPresent: return "DiagonalCouplingPresent";
        case ErrorCode::GridMismatch: return "GridMismatch";
        case ErrorCode::TimeTooShort: return "TimeTooShort";
        case ErrorCode::CompatibilityViolated: return "CompatibilityViolated";
        case ErrorCode::NotApplicable: return "NotApplicable";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::QuadratureNonConvergent: return "QuadratureNonConvergent";
        case ErrorCode::CFLViolation: return "CFLViolation";
        case ErrorCode::NonFiniteState: return "NonFiniteState";
        case ErrorCode::BoundaryClosureFailure: return "BoundaryClosureFailure";
        case ErrorCode::SingularBoundarySpeed: return "SingularBoundarySpeed";
        case ErrorCode::FlowLeftDomain: return "FlowLeftDomain";
        case ErrorCode::FixedPointDivergence: return "FixedPointDivergence";
        case ErrorCode::MaxItersExceeded: return "MaxItersExceeded";
        case ErrorCode::IllConditionedSystem: return "IllConditionedSystem";
    }
    return "Unknown";
}

/// True for errors caused by bad input (exit code 2 in the CLI); false for
/// failures of a numerical procedure on valid input (exit code 3).
constexpr bool is_validation_error(ErrorCode code) {
    return code < ErrorCode::QuadratureNonConvergent;
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace hypctrl
