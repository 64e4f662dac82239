#pragma once

#include <stdexcept>
#include <string>

namespace scfc {

// Every failure the library can raise, one code per condition. The CLI maps
// these onto process exit codes: usage errors exit 1, data/config errors
// exit 2, numerical failures exit 3.
enum class Errc {
  // connectome
  NonSquare,
  AsymmetryExceeded,
  RangeViolation,
  ParseError,
  Io,
  ManifestParse,
  InconsistentRoiCount,
  DuplicateSubjectId,
  LabelNotBinary,
  // kuramoto
  NonStructuralInput,
  StepCountOverflow,
  NonFiniteState,
  EmptyTrajectory,
  ZeroVarianceSignal,
  TooFewSamples,
  // tape
  ShapeMismatch,
  NonScalarLoss,
  NonFiniteResult,
  // braingraph
  KOutOfRange,
  AsymmetricAdjacency,
  NegativeWeight,
  // refiner
  RoiCountTooLarge,
  MissingEmpiricalFc,
  MissingPredictedFc,
  ZeroVariance,
  LengthMismatch,
  // fusionnet
  BatchTooSmall,
  CohortTooSmall,
  SingleClassFold,
  // explain
  UntrainedParams,
  EmptyGraph,
  UnmappedNode,
  // synth / cli
  ConfigInvalid,
  Usage,
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg);

  Errc code() const { return code_; }

  // 1 usage, 2 data, 3 numerical
  int exit_code() const;

 private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& msg);

}  // namespace scfc
