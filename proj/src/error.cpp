#include "speechconf/error.hpp"

namespace speechconf {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::NotFound: return "NotFound";
    case Errc::UnsupportedEncoding: return "UnsupportedEncoding";
    case Errc::CorruptHeader: return "CorruptHeader";
    case Errc::EmptyClip: return "EmptyClip";
    case Errc::ClipTooShort: return "ClipTooShort";
    case Errc::NonCanonicalRate: return "NonCanonicalRate";
    case Errc::UnfilledSlot: return "UnfilledSlot";
    case Errc::HeaderMismatch: return "HeaderMismatch";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::ProbabilityOutOfRange: return "ProbabilityOutOfRange";
    case Errc::DoubleNormalization: return "DoubleNormalization";
    case Errc::EmptyTrainingSet: return "EmptyTrainingSet";
    case Errc::NormalizerMismatch: return "NormalizerMismatch";
    case Errc::InsufficientCompleteCases: return "InsufficientCompleteCases";
    case Errc::ClipWithoutValidAnnotations: return "ClipWithoutValidAnnotations";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::BatchTooSmallForBatchNorm: return "BatchTooSmallForBatchNorm";
    case Errc::AllWeightsZero: return "AllWeightsZero";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::StepOutOfRange: return "StepOutOfRange";
    case Errc::EmptyClass: return "EmptyClass";
    case Errc::DegenerateLabels: return "DegenerateLabels";
    case Errc::NonPositiveTemperature: return "NonPositiveTemperature";
    case Errc::LeakageDetected: return "LeakageDetected";
    case Errc::ClassAbsent: return "ClassAbsent";
    case Errc::PoolOverlapsGroundTruth: return "PoolOverlapsGroundTruth";
    case Errc::EmptyPseudoSet: return "EmptyPseudoSet";
    case Errc::UnknownSource: return "UnknownSource";
    case Errc::ClassTooSmall: return "ClassTooSmall";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::MissingStore: return "MissingStore";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::UnknownVerb: return "UnknownVerb";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

bool is_validation_error(Errc code) noexcept {
  switch (code) {
    case Errc::NotFound:
    case Errc::UnsupportedEncoding:
    case Errc::CorruptHeader:
    case Errc::HeaderMismatch:
    case Errc::DimensionMismatch:
    case Errc::NonFiniteValue:
    case Errc::ProbabilityOutOfRange:
    case Errc::ChecksumMismatch:
    case Errc::MissingStore:
    case Errc::UnknownVerb:
    case Errc::InvalidConfig:
    case Errc::InvalidArgument:
      return true;
    default:
      return false;
  }
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

}  // namespace speechconf
