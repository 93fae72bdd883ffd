#ifndef ISLES_ERROR_HPP
#define ISLES_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace isles {

enum class ErrorKind {
    IoFailure,
    MalformedHeader,
    UnsupportedDatatype,
    NonFiniteData,
    ValueOutOfRange,
    DegenerateInput,
    DimensionMismatch,
    UnsupportedModality,
    ToolFailure,
    MaskInvalid,
    EmptyInput,
    DuplicateModality,
    InvalidFoldCount,
    InvalidConfig,
    InvalidArgument,
};

inline constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorKind::NonFiniteData: return "NonFiniteData";
    case ErrorKind::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::UnsupportedModality: return "UnsupportedModality";
    case ErrorKind::ToolFailure: return "ToolFailure";
    case ErrorKind::MaskInvalid: return "MaskInvalid";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::DuplicateModality: return "DuplicateModality";
    case ErrorKind::InvalidFoldCount: return "InvalidFoldCount";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Every failure raised by the toolkit. The kind is the stable, machine
/// readable part; the message carries context (paths, modality names).
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message),
          kind_(kind), detail_(message) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& detail() const noexcept { return detail_; }

    /// Same kind, message prefixed with `context: `.
    Error with_context(std::string_view context) const {
        return Error(kind_, std::string(context) + ": " + detail_);
    }

private:
    ErrorKind kind_;
    std::string detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace isles

#endif
