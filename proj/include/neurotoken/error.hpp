#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace neurotoken {

// Every failure mode named by a module contract. The kind is stable and is
// what the CLI writes into its machine-readable error record.
enum class ErrorKind {
  NonFiniteInput,
  DegenerateSite,
  InvalidSpec,
  SingletonNetwork,
  KTooLarge,
  NoEdges,
  DegenerateAffinity,
  TooFewComponents,
  BandOutOfRange,
  NoConvergence,
  PreconditionViolation,
  InsufficientCohort,
  UnknownDescriptor,
  TooFewSubjects,
  EmptyParadigm,
  ShapeMismatch,
  EmptyMask,
  NonScalarLoss,
  SeriesTooShort,
  EmptyBatch,
  ZeroVector,
  SingleStep,
  EmptyText,
  TextTooShort,
  BadTarget,
  ContextOverflow,
  TooFewDistinct,
  FieldCountMismatch,
  TooFewSamples,
  LengthMismatch,
  SingleClass,
  DegenerateTarget,
  ParseFailure,
  MissingRule,
  ConfigError,
  MissingArtifact,
  FormatError,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace neurotoken
