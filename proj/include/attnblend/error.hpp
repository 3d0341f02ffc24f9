#ifndef ATTNBLEND_ERROR_HPP
#define ATTNBLEND_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace attnblend {

// Every failure raised by the library carries one of these codes so callers
// (and the CLI) can report a machine-parsable reason.
enum class ErrorCode {
  // tensor-io
  MagicMismatch,
  UnsupportedDtype,
  HeaderParse,
  TruncatedPayload,
  NonFinite,
  IoFailure,
  FileNotFound,
  MissingColumn,
  NonNumericCell,
  DuplicateSampleId,
  InvalidValue,
  ManifestParse,
  // shapes / indices
  ShapeMismatch,
  LengthMismatch,
  IndexOutOfRange,
  EmptyVector,
  EmptySet,
  EmptyMatrix,
  InvalidShape,
  InvalidArgument,
  // numerics
  NumericalOverflow,
  NonFiniteCost,
  ZeroRow,
  NonStochasticRow,
  KernelWiderThanSignal,
  NonPositiveInput,
  DegenerateRange,
  TooSmall,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MagicMismatch: return "MagicMismatch";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::HeaderParse: return "HeaderParse";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::FileNotFound: return "ENOENT";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonNumericCell: return "NonNumericCell";
    case ErrorCode::DuplicateSampleId: return "DuplicateSampleId";
    case ErrorCode::InvalidValue: return "InvalidValue";
    case ErrorCode::ManifestParse: return "ManifestParse";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::EmptyVector: return "EmptyVector";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NumericalOverflow: return "NumericalOverflow";
    case ErrorCode::NonFiniteCost: return "NonFiniteCost";
    case ErrorCode::ZeroRow: return "ZeroRow";
    case ErrorCode::NonStochasticRow: return "NonStochasticRow";
    case ErrorCode::KernelWiderThanSignal: return "KernelWiderThanSignal";
    case ErrorCode::NonPositiveInput: return "NonPositiveInput";
    case ErrorCode::DegenerateRange: return "DegenerateRange";
    case ErrorCode::TooSmall: return "TooSmall";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  // Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace attnblend

#endif  // ATTNBLEND_ERROR_HPP
