#include "softcir/error.hpp"

namespace softcir {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::IdSetMismatch: return "IdSetMismatch";
    case ErrorKind::LambdaOutOfRange: return "LambdaOutOfRange";
    case ErrorKind::EmptyModificationText: return "EmptyModificationText";
    case ErrorKind::CaptionCountMismatch: return "CaptionCountMismatch";
    case ErrorKind::EmptyGroup: return "EmptyGroup";
    case ErrorKind::EmptySubsetIntersection: return "EmptySubsetIntersection";
    case ErrorKind::MissingQueryOutcome: return "MissingQueryOutcome";
    case ErrorKind::MissingEmbedding: return "MissingEmbedding";
    case ErrorKind::InsufficientTargets: return "InsufficientTargets";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::MalformedResponse: return "MalformedResponse";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::AuthError: return "AuthError";
    case ErrorKind::RateLimited: return "RateLimited";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::TransportError: return "TransportError";
    case ErrorKind::ProviderError: return "ProviderError";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

int exit_code_for(ErrorKind kind) noexcept {
  if (is_provider_error(kind)) return 2;
  switch (kind) {
    // Model output that cannot be used is a provider-side failure.
    case ErrorKind::MalformedResponse:
    case ErrorKind::SchemaViolation:
      return 2;
    case ErrorKind::FormatError:
    case ErrorKind::IoError:
      return 3;
    default:
      return 1;
  }
}

}  // namespace softcir
