#include "mqa/error.hpp"

namespace mqa {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::UnknownEncoder: return "UnknownEncoder";
    case ErrorCode::EncoderUnavailable: return "EncoderUnavailable";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::EmptyCollection: return "EmptyCollection";
    case ErrorCode::IndexNotBuilt: return "IndexNotBuilt";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::LLMUnavailable: return "LLMUnavailable";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Reconfiguring: return "Reconfiguring";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace mqa
