#include "scfc/errors.hpp"

namespace scfc {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::NonSquare: return "NonSquare";
    case Errc::AsymmetryExceeded: return "AsymmetryExceeded";
    case Errc::RangeViolation: return "RangeViolation";
    case Errc::ParseError: return "ParseError";
    case Errc::Io: return "Io";
    case Errc::ManifestParse: return "ManifestParse";
    case Errc::InconsistentRoiCount: return "InconsistentRoiCount";
    case Errc::DuplicateSubjectId: return "DuplicateSubjectId";
    case Errc::LabelNotBinary: return "LabelNotBinary";
    case Errc::NonStructuralInput: return "NonStructuralInput";
    case Errc::StepCountOverflow: return "StepCountOverflow";
    case Errc::NonFiniteState: return "NonFiniteState";
    case Errc::EmptyTrajectory: return "EmptyTrajectory";
    case Errc::ZeroVarianceSignal: return "ZeroVarianceSignal";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonScalarLoss: return "NonScalarLoss";
    case Errc::NonFiniteResult: return "NonFiniteResult";
    case Errc::KOutOfRange: return "KOutOfRange";
    case Errc::AsymmetricAdjacency: return "AsymmetricAdjacency";
    case Errc::NegativeWeight: return "NegativeWeight";
    case Errc::RoiCountTooLarge: return "RoiCountTooLarge";
    case Errc::MissingEmpiricalFc: return "MissingEmpiricalFc";
    case Errc::MissingPredictedFc: return "MissingPredictedFc";
    case Errc::ZeroVariance: return "ZeroVariance";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::BatchTooSmall: return "BatchTooSmall";
    case Errc::CohortTooSmall: return "CohortTooSmall";
    case Errc::SingleClassFold: return "SingleClassFold";
    case Errc::UntrainedParams: return "UntrainedParams";
    case Errc::EmptyGraph: return "EmptyGraph";
    case Errc::UnmappedNode: return "UnmappedNode";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::Usage: return "Usage";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& msg)
    : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

int Error::exit_code() const {
  switch (code_) {
    case Errc::Usage:
      return 1;
    case Errc::NonFiniteState:
    case Errc::NonFiniteResult:
    case Errc::ZeroVarianceSignal:
    case Errc::ZeroVariance:
      return 3;
    default:
      return 2;
  }
}

void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

}  // namespace scfc
