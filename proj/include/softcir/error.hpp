#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace softcir {

/// Every failure the toolkit reports carries one of these kinds. The CLI maps
/// kinds onto exit codes (see exit_code_for).
enum class ErrorKind {
  // validation
  DimensionMismatch,
  DuplicateId,
  NonFiniteValue,
  ZeroVector,
  IdSetMismatch,
  LambdaOutOfRange,
  EmptyModificationText,
  CaptionCountMismatch,
  EmptyGroup,
  EmptySubsetIntersection,
  MissingQueryOutcome,
  MissingEmbedding,
  InsufficientTargets,
  InvalidArgument,
  // model output
  MalformedResponse,
  SchemaViolation,
  // provider
  AuthError,
  RateLimited,
  Timeout,
  TransportError,
  ProviderError,
  // files
  FormatError,
  IoError,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// 1 = validation, 2 = provider failure, 3 = I/O or format error.
int exit_code_for(ErrorKind kind) noexcept;

inline bool is_provider_error(ErrorKind kind) noexcept {
  return kind == ErrorKind::AuthError || kind == ErrorKind::RateLimited ||
         kind == ErrorKind::Timeout || kind == ErrorKind::TransportError ||
         kind == ErrorKind::ProviderError;
}

}  // namespace softcir
