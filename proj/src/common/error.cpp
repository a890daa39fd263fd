#include "neurotoken/error.hpp"

namespace neurotoken {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonFiniteInput:
      return "NonFiniteInput";
    case ErrorKind::DegenerateSite:
      return "DegenerateSite";
    case ErrorKind::InvalidSpec:
      return "InvalidSpec";
    case ErrorKind::SingletonNetwork:
      return "SingletonNetwork";
    case ErrorKind::KTooLarge:
      return "KTooLarge";
    case ErrorKind::NoEdges:
      return "NoEdges";
    case ErrorKind::DegenerateAffinity:
      return "DegenerateAffinity";
    case ErrorKind::TooFewComponents:
      return "TooFewComponents";
    case ErrorKind::BandOutOfRange:
      return "BandOutOfRange";
    case ErrorKind::NoConvergence:
      return "NoConvergence";
    case ErrorKind::PreconditionViolation:
      return "PreconditionViolation";
    case ErrorKind::InsufficientCohort:
      return "InsufficientCohort";
    case ErrorKind::UnknownDescriptor:
      return "UnknownDescriptor";
    case ErrorKind::TooFewSubjects:
      return "TooFewSubjects";
    case ErrorKind::EmptyParadigm:
      return "EmptyParadigm";
    case ErrorKind::ShapeMismatch:
      return "ShapeMismatch";
    case ErrorKind::EmptyMask:
      return "EmptyMask";
    case ErrorKind::NonScalarLoss:
      return "NonScalarLoss";
    case ErrorKind::SeriesTooShort:
      return "SeriesTooShort";
    case ErrorKind::EmptyBatch:
      return "EmptyBatch";
    case ErrorKind::ZeroVector:
      return "ZeroVector";
    case ErrorKind::SingleStep:
      return "SingleStep";
    case ErrorKind::EmptyText:
      return "EmptyText";
    case ErrorKind::TextTooShort:
      return "TextTooShort";
    case ErrorKind::BadTarget:
      return "BadTarget";
    case ErrorKind::ContextOverflow:
      return "ContextOverflow";
    case ErrorKind::TooFewDistinct:
      return "TooFewDistinct";
    case ErrorKind::FieldCountMismatch:
      return "FieldCountMismatch";
    case ErrorKind::TooFewSamples:
      return "TooFewSamples";
    case ErrorKind::LengthMismatch:
      return "LengthMismatch";
    case ErrorKind::SingleClass:
      return "SingleClass";
    case ErrorKind::DegenerateTarget:
      return "DegenerateTarget";
    case ErrorKind::ParseFailure:
      return "ParseFailure";
    case ErrorKind::MissingRule:
      return "MissingRule";
    case ErrorKind::ConfigError:
      return "ConfigError";
    case ErrorKind::MissingArtifact:
      return "MissingArtifact";
    case ErrorKind::FormatError:
      return "FormatError";
  }
  return "Unknown";
}

}  // namespace neurotoken
