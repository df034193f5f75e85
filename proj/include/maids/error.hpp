#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace maids {

enum class ErrorCode {
    // flow_model
    MissingColumn,
    RaggedRow,
    EmptyFile,
    UnparseableIP,
    OutOfRange,
    EmptyClass,
    // embedding
    RemoteUnavailable,
    DimensionMismatch,
    EmptyBatch,
    // experience_library
    ReadOnlyLibrary,
    FormatVersionMismatch,
    ChecksumFailure,
    DimensionHeaderMismatch,
    // agents
    AgentUnavailable,
    ResponseTimeout,
    PreconditionViolation,
    // metrics
    UnknownTrueLabel,
    EmptyMatrix,
    // pipeline / cli
    InvalidConfig,
    Io,
};

inline constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::MissingColumn: return "MissingColumn";
        case ErrorCode::RaggedRow: return "RaggedRow";
        case ErrorCode::EmptyFile: return "EmptyFile";
        case ErrorCode::UnparseableIP: return "UnparseableIP";
        case ErrorCode::OutOfRange: return "OutOfRange";
        case ErrorCode::EmptyClass: return "EmptyClass";
        case ErrorCode::RemoteUnavailable: return "RemoteUnavailable";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::EmptyBatch: return "EmptyBatch";
        case ErrorCode::ReadOnlyLibrary: return "ReadOnlyLibrary";
        case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
        case ErrorCode::ChecksumFailure: return "ChecksumFailure";
        case ErrorCode::DimensionHeaderMismatch: return "DimensionHeaderMismatch";
        case ErrorCode::AgentUnavailable: return "AgentUnavailable";
        case ErrorCode::ResponseTimeout: return "ResponseTimeout";
        case ErrorCode::PreconditionViolation: return "PreconditionViolation";
        case ErrorCode::UnknownTrueLabel: return "UnknownTrueLabel";
        case ErrorCode::EmptyMatrix: return "EmptyMatrix";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

/// Exception carrying a machine-readable code. `line()` is set for
/// ingestion errors (1-based physical line of the offending record), and
/// `index()` for batch failures.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::int64_t line = -1, std::int64_t index = -1)
        : std::runtime_error(std::string(to_string(code)) + ": " + message),
          code_(code), line_(line), index_(index) {}

    ErrorCode code() const noexcept { return code_; }
    std::int64_t line() const noexcept { return line_; }
    std::int64_t index() const noexcept { return index_; }

private:
    ErrorCode code_;
    std::int64_t line_;
    std::int64_t index_;
};

}  // namespace maids
