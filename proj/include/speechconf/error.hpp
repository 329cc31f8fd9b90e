#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace speechconf {

/// Failure categories raised by the toolkit. Every thrown `Error` carries one.
enum class Errc {
  // audio_io
  NotFound,
  UnsupportedEncoding,
  CorruptHeader,
  EmptyClip,
  ClipTooShort,
  // acoustic_features
  NonCanonicalRate,
  UnfilledSlot,
  HeaderMismatch,
  DimensionMismatch,
  NonFiniteValue,
  ProbabilityOutOfRange,
  DoubleNormalization,
  EmptyTrainingSet,
  NormalizerMismatch,
  // annotation
  InsufficientCompleteCases,
  ClipWithoutValidAnnotations,
  // neural
  DimMismatch,
  BatchTooSmallForBatchNorm,
  AllWeightsZero,
  ShapeMismatch,
  StepOutOfRange,
  EmptyClass,
  // calibration
  DegenerateLabels,
  NonPositiveTemperature,
  // pseudo-labelling / hybrid
  LeakageDetected,
  ClassAbsent,
  PoolOverlapsGroundTruth,
  EmptyPseudoSet,
  UnknownSource,
  // evaluation
  ClassTooSmall,
  EmptyInput,
  ChecksumMismatch,
  MissingStore,
  TooFewSamples,
  // cli / io
  UnknownVerb,
  InvalidConfig,
  InvalidArgument,
  Io,
};

std::string_view errc_name(Errc code) noexcept;

/// True for errors caused by bad user input (CLI exit code 1) rather than a
/// failure while running a stage (exit code 2).
bool is_validation_error(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace speechconf
