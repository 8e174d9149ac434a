#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mqa {

enum class ErrorCode {
  DuplicateId,
  SchemaViolation,
  ParseError,
  FormatError,
  NotFound,
  DimensionMismatch,
  DecodeError,
  UnknownEncoder,
  EncoderUnavailable,
  EmptyTrainingSet,
  EmptyCollection,
  IndexNotBuilt,
  UnknownSession,
  LLMUnavailable,
  InvalidConfig,
  InvalidArgument,
  Reconfiguring,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above.
/// `field` is set for configuration errors that point at a specific key.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string field = {})
      : std::runtime_error(message), code_(code), field_(std::move(field)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& field() const noexcept { return field_; }

 private:
  ErrorCode code_;
  std::string field_;
};

}  // namespace mqa
